//! PFM, PNG, OBJ and STL readers and writers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use airway_core::grid::{Grid, Map};
use airway_core::mesh::TriangleMesh;
use airway_core::segmentation::{luminance, LumenMask};

use crate::error::{Error, Result};

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Single-channel little-endian PFM (negative scale). Values are stored as
/// `f32`, bottom row first.
pub fn encode_pfm(map: &Map) -> Vec<u8> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", map.width, map.height).into_bytes();
    out.reserve(4 * map.len());
    for y in (0..map.height).rev() {
        for x in 0..map.width {
            out.extend_from_slice(&(*map.get(x, y) as f32).to_le_bytes());
        }
    }
    out
}

pub fn write_pfm(path: &Path, map: &Map) -> Result<()> {
    write_file(path, &encode_pfm(map))
}

pub fn decode_pfm(path: &Path, bytes: &[u8]) -> Result<Map> {
    // Header: three whitespace-separated tokens after the magic, then one
    // whitespace byte before the payload.
    let mut pos = 0usize;
    let token = |pos: &mut usize| -> Result<String> {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::format(path, Some(start as u64), "unexpected end of PFM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    let magic = token(&mut pos)?;
    match magic.as_str() {
        "Pf" => {}
        "PF" => return Err(Error::format(path, Some(0), "colour PFM is not supported; expected `Pf`")),
        other => return Err(Error::format(path, Some(0), format!("bad PFM magic `{other}`"))),
    }
    let at = pos as u64;
    let width: usize = token(&mut pos)?
        .parse()
        .map_err(|_| Error::format(path, Some(at), "bad PFM width"))?;
    let at = pos as u64;
    let height: usize = token(&mut pos)?
        .parse()
        .map_err(|_| Error::format(path, Some(at), "bad PFM height"))?;
    let at = pos as u64;
    let scale: f64 = token(&mut pos)?
        .parse()
        .map_err(|_| Error::format(path, Some(at), "bad PFM scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::format(path, Some(at), "PFM scale must be nonzero"));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format(path, Some(pos as u64), "missing whitespace after PFM header"));
    }
    pos += 1;
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(path, None, "PFM dimensions overflow"))?;
    let actual = bytes.len() - pos;
    if actual < expected {
        return Err(Error::format(
            path,
            Some(bytes.len() as u64),
            format!("truncated PFM payload: expected {expected} bytes, found {actual}"),
        ));
    }
    let little = scale < 0.0;
    let mut data = vec![0.0; width * height];
    for (k, chunk) in bytes[pos..pos + expected].chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (x, row) = (k % width, k / width);
        data[(height - 1 - row) * width + x] = v as f64;
    }
    Ok(Grid::from_vec(width, height, data))
}

pub fn read_pfm(path: &Path) -> Result<Map> {
    decode_pfm(path, &read_file(path)?)
}

fn encode_png(width: usize, height: usize, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(depth);
        enc.set_compression(png::Compression::Fast);
        let mut w = enc.write_header().expect("in-memory PNG header");
        w.write_image_data(data).expect("in-memory PNG data");
    }
    out
}

/// 8-bit grayscale PNG of a `[0, 1]` image.
pub fn encode_png8(image: &Map) -> Vec<u8> {
    let data: Vec<u8> = image
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    encode_png(image.width, image.height, png::ColorType::Grayscale, png::BitDepth::Eight, &data)
}

pub fn write_png8(path: &Path, image: &Map) -> Result<()> {
    write_file(path, &encode_png8(image))
}

pub fn write_mask_png(path: &Path, mask: &LumenMask) -> Result<()> {
    let g = &mask.mask;
    write_file(
        path,
        &encode_png(g.width, g.height, png::ColorType::Grayscale, png::BitDepth::Eight, &mask.to_levels()),
    )
}

/// 16-bit PNG depth: `round(depth · scale)`, saturated to `1..=65535` for
/// hits. Non-finite or non-positive depths are stored as 0.
pub fn encode_png16_depth(depth: &Map, scale: f64) -> Vec<u8> {
    let mut data = Vec::with_capacity(2 * depth.len());
    for &d in &depth.data {
        let v = if d.is_finite() && d > 0.0 {
            (d * scale).round().clamp(1.0, 65535.0) as u16
        } else {
            0
        };
        data.extend_from_slice(&v.to_be_bytes());
    }
    encode_png(depth.width, depth.height, png::ColorType::Grayscale, png::BitDepth::Sixteen, &data)
}

pub fn write_png16_depth(path: &Path, depth: &Map, scale: f64) -> Result<()> {
    write_file(path, &encode_png16_depth(depth, scale))
}

/// Decoded PNG samples, one `u16` per channel value.
pub struct PngImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub bit_depth: u8,
    pub samples: Vec<u16>,
}

pub fn read_png(path: &Path) -> Result<PngImage> {
    let bytes = read_file(path)?;
    let mut dec = png::Decoder::new(bytes.as_slice());
    dec.set_transformations(png::Transformations::EXPAND);
    let mut reader = dec
        .read_info()
        .map_err(|e| Error::format(path, None, format!("PNG header: {e}")))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(path, None, format!("PNG data: {e}")))?;
    let channels = info.color_type.samples();
    let (width, height) = (info.width as usize, info.height as usize);
    let n = width * height * channels;
    let samples = match info.bit_depth {
        png::BitDepth::Sixteen => buf[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect(),
        _ => buf[..n].iter().map(|&v| v as u16).collect(),
    };
    Ok(PngImage {
        width,
        height,
        channels,
        bit_depth: info.bit_depth as u8,
        samples,
    })
}

/// 16-bit PNG depth divided by `scale`; stored zeros read back as infinite
/// (no hit).
pub fn read_png16_depth(path: &Path, scale: f64) -> Result<Map> {
    let img = read_png(path)?;
    if img.bit_depth != 16 || img.channels != 1 {
        return Err(Error::format(
            path,
            None,
            format!(
                "expected a 16-bit single-channel PNG, got {} bits x {} channels",
                img.bit_depth, img.channels
            ),
        ));
    }
    Ok(Grid::from_vec(
        img.width,
        img.height,
        img.samples
            .iter()
            .map(|&v| if v == 0 { f64::INFINITY } else { v as f64 / scale })
            .collect(),
    ))
}

/// Grayscale image in `[0, 1]`; colour PNGs go through luma weighting.
pub fn read_gray_png(path: &Path) -> Result<Map> {
    let img = read_png(path)?;
    let max = if img.bit_depth == 16 { 65535.0 } else { 255.0 };
    let px = img.width * img.height;
    let at = |i: usize, c: usize| img.samples[i * img.channels + c] as f64 / max;
    Ok(match img.channels {
        1 | 2 => Grid::from_vec(img.width, img.height, (0..px).map(|i| at(i, 0)).collect()),
        _ => luminance(&Grid::from_vec(
            img.width,
            img.height,
            (0..px).map(|i| [at(i, 0), at(i, 1), at(i, 2)]).collect(),
        )),
    })
}

/// External lumen mask: nonzero first channel is lumen.
pub fn read_mask_png(path: &Path) -> Result<LumenMask> {
    let img = read_png(path)?;
    let levels: Vec<u8> = (0..img.width * img.height)
        .map(|i| (img.samples[i * img.channels] != 0) as u8)
        .collect();
    Ok(LumenMask::from_levels(img.width, img.height, &levels))
}

/// Depth map from `.pfm` or 16-bit `.png` (divided by `png_scale`).
pub fn read_depth(path: &Path, png_scale: f64) -> Result<Map> {
    match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
        Some(e) if e == "pfm" => read_pfm(path),
        Some(e) if e == "png" => read_png16_depth(path, png_scale),
        _ => Err(Error::format(path, None, "unknown depth file extension; expected .pfm or .png")),
    }
}

/// ASCII OBJ with `v`, `vn` and `f v//vn` records; indices are 1-based.
pub fn write_obj(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "# airway mesh: {} vertices, {} triangles", mesh.vertices.len(), mesh.triangles.len()).map_err(io)?;
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z).map_err(io)?;
    }
    let have_normals = mesh.normals.len() == mesh.vertices.len();
    if have_normals {
        for n in &mesh.normals {
            writeln!(w, "vn {} {} {}", n.x, n.y, n.z).map_err(io)?;
        }
    }
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|i| i + 1);
        if have_normals {
            writeln!(w, "f {a}//{a} {b}//{b} {c}//{c}").map_err(io)?;
        } else {
            writeln!(w, "f {a} {b} {c}").map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Reads `v`, `vn` and triangular `f` records. Polygons are fanned.
pub fn read_obj(path: &Path) -> Result<TriangleMesh> {
    let text = String::from_utf8(read_file(path)?).map_err(|e| Error::format(path, None, e.to_string()))?;
    let mut mesh = TriangleMesh::default();
    let mut offset = 0u64;
    for line in text.lines() {
        let bad = |msg: &str| Error::format(path, Some(offset), msg.to_string());
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") | Some("vn") => {
                let vals: Vec<f64> = it.take(3).map(|s| s.parse().map_err(|_| bad("bad number"))).collect::<Result<_>>()?;
                if vals.len() != 3 {
                    return Err(bad("expected three coordinates"));
                }
                let v = airway_core::math::Vec3::new(vals[0], vals[1], vals[2]);
                if line.starts_with("vn") {
                    mesh.normals.push(v);
                } else {
                    mesh.vertices.push(v);
                }
            }
            Some("f") => {
                let idx: Vec<u32> = it
                    .map(|s| {
                        let i: i64 = s.split('/').next().unwrap_or("").parse().map_err(|_| bad("bad face index"))?;
                        let n = mesh.vertices.len() as i64;
                        let i = if i < 0 { n + i } else { i - 1 };
                        if i < 0 || i >= n {
                            return Err(bad("face index out of range"));
                        }
                        Ok(i as u32)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(bad("face with fewer than three vertices"));
                }
                for k in 1..idx.len() - 1 {
                    mesh.triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
        offset += line.len() as u64 + 1;
    }
    if mesh.normals.len() != mesh.vertices.len() {
        mesh.normals.clear();
    }
    Ok(mesh)
}

/// Binary STL: 80-byte header, little-endian `u32` count, 50 bytes per
/// triangle.
pub fn encode_stl(mesh: &TriangleMesh) -> Vec<u8> {
    let mut out = Vec::with_capacity(84 + 50 * mesh.triangles.len());
    let mut header = [0u8; 80];
    let tag = b"airway binary STL";
    header[..tag.len()].copy_from_slice(tag);
    out.extend_from_slice(&header);
    out.extend_from_slice(&(mesh.triangles.len() as u32).to_le_bytes());
    for t in 0..mesh.triangles.len() {
        let n = mesh.face_normal(t);
        for v in std::iter::once(n).chain(mesh.triangle(t)) {
            for c in [v.x, v.y, v.z] {
                out.extend_from_slice(&(c as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&0u16.to_le_bytes());
    }
    out
}

pub fn write_stl(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    write_file(path, &encode_stl(mesh))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, None, e.to_string()))?;
    s.push('\n');
    write_file(path, s.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, None, e.to_string()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_file(path, text.as_bytes())
}
