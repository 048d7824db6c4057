//! Parametric bronchial-tree model.
//!
//! A tree is a full binary tree of straight cylindrical segments joined by
//! bifurcations. Segment ids are heap-ordered: the root is `0` and the
//! daughters of `i` are `2i + 1` (side `a`) and `2i + 2` (side `b`).

pub mod geometry;
mod sample;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

pub use geometry::{
    carinal_rounding, curvature_radius, min_branching_angle, shared_taper_length, taper_radius, CarinaModel,
    DaughterBend, RoundingCircle, Side, SigmoidTaper, MAX_CLIP_FRACTION,
};
pub use sample::{assemble_tree, sample_length, sample_tree, BifurcationChoice};

use crate::error::AirwayError;
use crate::math::{self, Frame, Vec3};

/// Length-to-diameter ratios per generation used by the default table.
/// Trachea first; deeper generations repeat the last entry.
pub const DEFAULT_LD_RATIOS: [f64; 8] = [6.0, 3.6, 2.9, 2.8, 2.8, 2.9, 3.0, 3.0];
pub const DEFAULT_ROOT_DIAMETER: f64 = 18.0;
pub const DEFAULT_H_RANGE: [f64; 2] = [0.68, 0.86];

/// Sampling parameters for one tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationParams {
    /// Number of levels; the root is generation 0, leaves are `generations - 1`.
    pub generations: u32,
    pub ld_ratio_per_gen: Vec<f64>,
    /// Interval for the daughter/parent diameter ratios `h_a`, `h_b`.
    pub h_range: [f64; 2],
    /// Upper bound on branching angles, degrees.
    #[serde(default = "default_phi_max")]
    pub phi_max: f64,
    /// Gaussian length spread relative to the mean length.
    #[serde(default = "default_sigma_factor")]
    pub length_sigma_factor: f64,
    /// mm
    pub root_diameter: f64,
    /// Expected segment length per generation, mm.
    pub l_mean_per_gen: Vec<f64>,
    pub seed: u64,
    #[serde(default = "default_taper_steepness")]
    pub taper_steepness: f64,
    #[serde(default = "default_taper_midpoint")]
    pub taper_midpoint: f64,
    /// Inscribed carina rounding radius relative to the smaller daughter radius.
    #[serde(default = "default_rounding_fraction")]
    pub carina_rounding_fraction: f64,
    /// Required capsule clearance between unrelated segments, as a multiple
    /// of the summed radii.
    #[serde(default = "default_clearance_factor")]
    pub clearance_factor: f64,
    /// Placement attempts per bifurcation before backtracking.
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_max_backtracks")]
    pub max_backtracks: u32,
}

fn default_phi_max() -> f64 {
    120.0
}
fn default_sigma_factor() -> f64 {
    0.3
}
fn default_taper_steepness() -> f64 {
    8.0
}
fn default_taper_midpoint() -> f64 {
    0.5
}
fn default_rounding_fraction() -> f64 {
    0.2
}
fn default_clearance_factor() -> f64 {
    1.15
}
fn default_max_attempts() -> u32 {
    200
}
fn default_max_backtracks() -> u32 {
    64
}

impl GenerationParams {
    /// Default anatomical table for `generations` levels.
    pub fn with_generations(generations: u32, seed: u64) -> Self {
        let h_mid = 0.5 * (DEFAULT_H_RANGE[0] + DEFAULT_H_RANGE[1]);
        let n = generations as usize;
        let ld: Vec<f64> = (0..n)
            .map(|g| DEFAULT_LD_RATIOS[g.min(DEFAULT_LD_RATIOS.len() - 1)])
            .collect();
        let l_mean = Self::lengths_from_ratios(&ld, DEFAULT_ROOT_DIAMETER, h_mid);
        GenerationParams {
            generations,
            ld_ratio_per_gen: ld,
            h_range: DEFAULT_H_RANGE,
            phi_max: default_phi_max(),
            length_sigma_factor: default_sigma_factor(),
            root_diameter: DEFAULT_ROOT_DIAMETER,
            l_mean_per_gen: l_mean,
            seed,
            taper_steepness: default_taper_steepness(),
            taper_midpoint: default_taper_midpoint(),
            carina_rounding_fraction: default_rounding_fraction(),
            clearance_factor: default_clearance_factor(),
            max_attempts: default_max_attempts(),
            max_backtracks: default_max_backtracks(),
        }
    }

    /// Mean lengths implied by L/D ratios and the expected diameter per
    /// generation, `root · h_mid^g`.
    pub fn lengths_from_ratios(ld: &[f64], root_diameter: f64, h_mid: f64) -> Vec<f64> {
        let mut d = root_diameter;
        ld.iter()
            .map(|r| {
                let l = r * d;
                d *= h_mid;
                l
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), AirwayError> {
        let bad = |field: &'static str, reason: String| Err(AirwayError::InvalidParam { field, reason });
        if self.generations < 1 {
            return bad("generations", format!("must be at least 1, got {}", self.generations));
        }
        if self.generations > 16 {
            return bad("generations", format!("at most 16 supported, got {}", self.generations));
        }
        let n = self.generations as usize;
        if self.ld_ratio_per_gen.len() != n {
            return bad(
                "ld_ratio_per_gen",
                format!("expected {n} entries, got {}", self.ld_ratio_per_gen.len()),
            );
        }
        if let Some(r) = self.ld_ratio_per_gen.iter().find(|r| !(**r > 0.0) || !r.is_finite()) {
            return bad("ld_ratio_per_gen", format!("ratios must be positive, got {r}"));
        }
        if self.l_mean_per_gen.len() != n {
            return bad(
                "l_mean_per_gen",
                format!("expected {n} entries, got {}", self.l_mean_per_gen.len()),
            );
        }
        if let Some(l) = self.l_mean_per_gen.iter().find(|l| !(**l > 0.0) || !l.is_finite()) {
            return bad("l_mean_per_gen", format!("lengths must be positive, got {l}"));
        }
        let [lo, hi] = self.h_range;
        if !(lo > 0.0 && hi < 1.0 && lo <= hi) {
            return bad("h_range", format!("must satisfy 0 < lo <= hi < 1, got [{lo}, {hi}]"));
        }
        if !(self.phi_max > 0.0 && self.phi_max <= 120.0) {
            return bad("phi_max", format!("must lie in (0, 120] degrees, got {}", self.phi_max));
        }
        if !(self.length_sigma_factor > 0.0 && self.length_sigma_factor < 1.0) {
            return bad(
                "length_sigma_factor",
                format!("must lie in (0, 1), got {}", self.length_sigma_factor),
            );
        }
        if !(self.root_diameter > 0.0) || !self.root_diameter.is_finite() {
            return bad("root_diameter", format!("must be positive, got {}", self.root_diameter));
        }
        if !(self.taper_steepness > 0.0) {
            return bad("taper_steepness", format!("must be positive, got {}", self.taper_steepness));
        }
        if !(0.0..=1.0).contains(&self.taper_midpoint) {
            return bad("taper_midpoint", format!("must lie in [0, 1], got {}", self.taper_midpoint));
        }
        if !(self.carina_rounding_fraction >= 0.0 && self.carina_rounding_fraction < 1.0) {
            return bad(
                "carina_rounding_fraction",
                format!("must lie in [0, 1), got {}", self.carina_rounding_fraction),
            );
        }
        if !(self.clearance_factor >= 1.0) {
            return bad("clearance_factor", format!("must be >= 1, got {}", self.clearance_factor));
        }
        if self.max_attempts == 0 {
            return bad("max_attempts", "must be positive".into());
        }
        Ok(())
    }
}

/// One straight cylindrical airway.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AirwaySegment {
    pub id: u32,
    pub parent_id: Option<u32>,
    pub generation: u32,
    /// mm
    pub diameter: f64,
    /// Length of the straight part, mm.
    pub length: f64,
    /// Rotation of the distal bifurcation plane about the axis, degrees in [0, 360).
    pub twist: f64,
    /// Proximal end of the straight part. `lateral` is the ring reference
    /// direction there.
    pub frame: Frame,
}

impl AirwaySegment {
    pub fn radius(&self) -> f64 {
        0.5 * self.diameter
    }

    pub fn start(&self) -> Vec3 {
        self.frame.origin
    }

    pub fn end(&self) -> Vec3 {
        self.frame.origin + self.frame.axis * self.length
    }

    /// Frame at the distal end; `lateral` points toward daughter `a`.
    pub fn distal_frame(&self) -> Frame {
        let mut f = self.frame.twisted(math::rad(self.twist));
        f.origin = self.end();
        f
    }
}

/// Geometry of the transition between a parent and its two daughters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BifurcationGeometry {
    pub parent_id: u32,
    /// Branching angles, degrees.
    pub phi_a: f64,
    pub phi_b: f64,
    /// Curvature radii `D / (2 sin phi)`, mm.
    pub r_star_a: f64,
    pub r_star_b: f64,
    /// Rounding circle centre `K` in bifurcation-plane coordinates.
    pub carina_center: [f64; 2],
    /// Carinal rounding radius, mm.
    pub r_c: f64,
    /// Rounding circle tilts, degrees.
    pub tilt_a: f64,
    pub tilt_b: f64,
    pub taper_a: SigmoidTaper,
    pub taper_b: SigmoidTaper,
    /// Centreline arc length over which both daughters taper, mm.
    pub taper_length: f64,
    /// Sagittal angle ranges, degrees.
    pub sagittal_range_a: [f64; 2],
    pub sagittal_range_b: [f64; 2],
    /// Lower angle bound that was in force when the angles were drawn.
    pub phi_min: f64,
    pub carina: CarinaModel,
}

pub const TREE_FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AirwayTree {
    pub format_version: String,
    pub params: GenerationParams,
    pub segments: Vec<AirwaySegment>,
    /// Indexed by parent id.
    pub bifurcations: Vec<BifurcationGeometry>,
}

impl AirwayTree {
    pub fn segment(&self, id: u32) -> Option<&AirwaySegment> {
        self.segments.get(id as usize)
    }

    pub fn children(&self, id: u32) -> Option<(u32, u32)> {
        let a = 2 * id + 1;
        let b = 2 * id + 2;
        if (b as usize) < self.segments.len() {
            Some((a, b))
        } else {
            None
        }
    }

    pub fn is_leaf(&self, id: u32) -> bool {
        self.children(id).is_none()
    }

    pub fn bifurcation(&self, parent_id: u32) -> Option<&BifurcationGeometry> {
        self.bifurcations.get(parent_id as usize)
    }

    pub fn side_of(id: u32) -> Option<Side> {
        if id == 0 {
            None
        } else if id % 2 == 1 {
            Some(Side::A)
        } else {
            Some(Side::B)
        }
    }

    /// The bend leading into segment `id` (none for the root).
    pub fn daughter_bend(&self, id: u32) -> Option<DaughterBend> {
        let seg = self.segment(id)?;
        let parent = self.segment(seg.parent_id?)?;
        let bif = self.bifurcation(parent.id)?;
        let side = Self::side_of(id)?;
        let (phi, r_star, taper) = match side {
            Side::A => (bif.phi_a, bif.r_star_a, bif.taper_a),
            Side::B => (bif.phi_b, bif.r_star_b, bif.taper_b),
        };
        Some(DaughterBend::new(
            side,
            phi,
            r_star,
            parent.radius(),
            seg.radius(),
            taper,
            bif.taper_length,
        ))
    }

    /// Junction frame of the bifurcation at the distal end of `parent_id`.
    pub fn junction_frame(&self, parent_id: u32) -> Option<Frame> {
        Some(self.segment(parent_id)?.distal_frame())
    }

    pub fn leaves(&self) -> impl Iterator<Item = &AirwaySegment> {
        self.segments.iter().filter(|s| self.is_leaf(s.id))
    }

    /// Axis pieces of a segment as `(start, end, radius)`: the chords of its
    /// incoming bend (if any) followed by its straight part.
    pub fn axis_pieces(&self, id: u32, bend_chords: usize) -> Vec<(Vec3, Vec3, f64)> {
        let seg = &self.segments[id as usize];
        let mut out = Vec::new();
        if let (Some(bend), Some(pid)) = (self.daughter_bend(id), seg.parent_id) {
            let j = self.junction_frame(pid).unwrap();
            out.extend(sample::bend_capsules(&bend, &j, bend_chords).into_iter().map(|c| (c.a, c.b, c.r)));
        }
        out.push((seg.start(), seg.end(), seg.radius()));
        out
    }

    fn descendants(&self, id: u32, out: &mut Vec<u32>) {
        if let Some((a, b)) = self.children(id) {
            out.push(a);
            out.push(b);
            self.descendants(a, out);
            self.descendants(b, out);
        }
    }

    /// Axis polylines of the sub-tree rooted at daughter `id`: the distal half
    /// of its own straight axis plus every descendant's full axis. Each piece
    /// carries the diameter of the segment it belongs to.
    fn subtree_axis(&self, id: u32) -> Vec<(Vec3, Vec3, f64)> {
        let seg = &self.segments[id as usize];
        let mut out = Vec::new();
        let mid = seg.start() + seg.frame.axis * (0.5 * seg.length);
        out.push((mid, seg.end(), seg.diameter));
        let mut ids = Vec::new();
        self.descendants(id, &mut ids);
        for d in ids {
            let dia = self.segments[d as usize].diameter;
            out.extend(self.axis_pieces(d, 8).into_iter().map(|(a, b, _)| (a, b, dia)));
        }
        out
    }

    /// Smallest margin `distance - (D_x + D_y)/2` between axis pieces of
    /// sibling sub-trees, over all bifurcations, with the offending pair.
    pub fn sibling_clearance(&self) -> Option<(f64, u32, u32)> {
        let mut worst: Option<(f64, u32, u32)> = None;
        for bif in &self.bifurcations {
            let (a, b) = self.children(bif.parent_id)?;
            let sa = self.subtree_axis(a);
            let sb = self.subtree_axis(b);
            for &(p0, p1, da) in &sa {
                for &(q0, q1, db) in &sb {
                    let margin = math::segment_distance(p0, p1, q0, q1) - 0.5 * (da + db);
                    if worst.map_or(true, |w| margin < w.0) {
                        worst = Some((margin, a, b));
                    }
                }
            }
        }
        worst
    }

    /// Checks the structural and geometric invariants of a sampled tree.
    pub fn check_invariants(&self) -> Result<(), String> {
        let n = self.segments.len();
        let g = self.params.generations;
        if n != (1usize << g) - 1 {
            return Err(format!("expected {} segments, found {n}", (1usize << g) - 1));
        }
        if self.bifurcations.len() != (1usize << (g - 1)) - 1 {
            return Err(format!("unexpected bifurcation count {}", self.bifurcations.len()));
        }
        let [h_lo, h_hi] = self.params.h_range;
        for (i, s) in self.segments.iter().enumerate() {
            if s.id as usize != i {
                return Err(format!("segment at index {i} has id {}", s.id));
            }
            if !(s.diameter > 0.0 && s.length > 0.0) {
                return Err(format!("segment {i} has non-positive size"));
            }
            if !(0.0..360.0).contains(&s.twist) {
                return Err(format!("segment {i} twist {} outside [0, 360)", s.twist));
            }
            match s.parent_id {
                None if i != 0 => return Err(format!("segment {i} has no parent")),
                Some(p) => {
                    if p != (i as u32 - 1) / 2 {
                        return Err(format!("segment {i} names parent {p}"));
                    }
                    let parent = &self.segments[p as usize];
                    if s.generation != parent.generation + 1 {
                        return Err(format!("segment {i} generation {} breaks the sequence", s.generation));
                    }
                    let h = s.diameter / parent.diameter;
                    if h < h_lo - 1e-12 || h > h_hi + 1e-12 {
                        return Err(format!("segment {i} diameter ratio {h} outside h_range"));
                    }
                }
                None => {}
            }
            if s.generation >= g {
                return Err(format!("segment {i} generation {} exceeds the tree depth", s.generation));
            }
        }
        for (i, b) in self.bifurcations.iter().enumerate() {
            if b.parent_id as usize != i {
                return Err(format!("bifurcation {i} has parent id {}", b.parent_id));
            }
            let (a, bb) = self.children(b.parent_id).ok_or("bifurcation on a leaf")?;
            for (phi, r_star, child) in [(b.phi_a, b.r_star_a, a), (b.phi_b, b.r_star_b, bb)] {
                if phi < b.phi_min - 1e-9 || phi > self.params.phi_max + 1e-9 {
                    return Err(format!("bifurcation {i}: angle {phi} outside [{}, {}]", b.phi_min, self.params.phi_max));
                }
                let d = self.segments[child as usize].diameter;
                let expect = d / (2.0 * math::sin(math::rad(phi)));
                if math::abs(r_star - expect) >= 1e-9 {
                    return Err(format!("bifurcation {i}: curvature radius {r_star} != {expect}"));
                }
            }
            if b.r_c < 0.0 {
                return Err(format!("bifurcation {i}: negative rounding radius"));
            }
        }
        if let Some((margin, a, b)) = self.sibling_clearance() {
            if margin < -1e-9 {
                return Err(format!("sibling sub-trees {a} and {b} violate clearance by {}", -margin));
            }
        }
        Ok(())
    }
}
