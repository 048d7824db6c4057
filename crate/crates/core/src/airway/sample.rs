use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::geometry::{self, CarinaModel, DaughterBend, Side, SigmoidTaper, MAX_CLIP_FRACTION};
use super::{AirwaySegment, AirwayTree, BifurcationGeometry, GenerationParams, TREE_FORMAT_VERSION};
use crate::error::AirwayError;
use crate::math::{self, Frame, Vec3};
use crate::rng;

const BEND_CHORDS: usize = 8;

/// Draws a length from `N(l_mean, (sigma_factor·l_mean)²)` truncated to
/// `[0.2·l_mean, 2·l_mean]` by rejection.
pub fn sample_length<R: Rng + ?Sized>(rng: &mut R, l_mean: f64, sigma_factor: f64) -> f64 {
    let normal = Normal::new(l_mean, sigma_factor * l_mean).expect("positive sigma");
    loop {
        let v = normal.sample(rng);
        if v >= 0.2 * l_mean && v <= 2.0 * l_mean {
            return v;
        }
    }
}

fn sample_twist<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let t: f64 = rng.random_range(0.0..360.0);
    if t >= 360.0 {
        0.0
    } else {
        t
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Capsule {
    pub a: Vec3,
    pub b: Vec3,
    pub r: f64,
}

/// Chord capsules covering a bend. The chord radius is padded by the sagitta
/// so the capsule still contains the arc, and uses the larger (parent) radius.
pub(crate) fn bend_capsules(bend: &DaughterBend, junction: &Frame, chords: usize) -> Vec<Capsule> {
    let n = chords.max(1);
    let step = bend.phi / n as f64;
    let sagitta = bend.bend_radius() * (1.0 - math::cos(0.5 * step));
    (0..n)
        .map(|i| Capsule {
            a: junction.to_world(bend.center(step * i as f64)),
            b: junction.to_world(bend.center(step * (i + 1) as f64)),
            r: bend.parent_radius + sagitta,
        })
        .collect()
}

/// Length along the straight part that the medial wall (`theta = pi`)
/// needs to enter the daughter's own half of the junction.
pub(crate) fn straight_clip(bend: &DaughterBend, length: f64) -> f64 {
    let arc = bend.arc_length();
    (bend.clip(math::PI, arc + length) - arc).max(0.0)
}

struct Placed {
    bend: Vec<Capsule>,
    straight: Capsule,
}

struct Candidate {
    seg: AirwaySegment,
    bend: DaughterBend,
    placed: Placed,
}

fn build_daughter(
    id: u32,
    parent: &AirwaySegment,
    junction: &Frame,
    bend: &DaughterBend,
    length: f64,
    twist: f64,
) -> Candidate {
    let end = geometry::frame_to_world(junction, &bend.end_frame_local());
    let seg = AirwaySegment {
        id,
        parent_id: Some(parent.id),
        generation: parent.generation + 1,
        diameter: 2.0 * bend.radius,
        length,
        twist,
        frame: end,
    };
    let straight = Capsule {
        a: seg.start(),
        b: seg.end(),
        r: bend.radius,
    };
    Candidate {
        placed: Placed {
            bend: bend_capsules(bend, junction, BEND_CHORDS),
            straight,
        },
        bend: *bend,
        seg,
    }
}

fn capsules_clear(x: &Capsule, y: &Capsule, factor: f64) -> bool {
    math::segment_distance(x.a, x.b, y.a, y.b) >= factor * (x.r + y.r)
}

/// Checks a new daughter against everything already placed except its
/// sibling. Against its own parent only the pairs that are not adjacent by
/// construction are tested.
fn clear_of_placed(
    cand: &Candidate,
    sibling_id: u32,
    phi_deg: f64,
    placed: &[Option<Placed>],
    factor: f64,
) -> bool {
    let parent_id = cand.seg.parent_id.unwrap();
    for (id, p) in placed.iter().enumerate() {
        let Some(p) = p else { continue };
        let id = id as u32;
        if id == sibling_id {
            continue;
        }
        if id == parent_id {
            for c in &p.bend {
                if !capsules_clear(&cand.placed.straight, c, factor) {
                    return false;
                }
            }
            if phi_deg > 90.0 && !capsules_clear(&cand.placed.straight, &p.straight, factor) {
                return false;
            }
            continue;
        }
        for x in cand.placed.bend.iter().chain(core::iter::once(&cand.placed.straight)) {
            for y in p.bend.iter().chain(core::iter::once(&p.straight)) {
                if !capsules_clear(x, y, factor) {
                    return false;
                }
            }
        }
    }
    true
}

type Placement = (f64, Candidate, Candidate, BifurcationGeometry);

/// Builds both daughters of `parent` (whose `twist` fixes the bifurcation
/// plane) from `(diameter, length, twist, phi)` per side.
fn make_bifurcation(
    parent: &AirwaySegment,
    daughters: [(f64, f64, f64, f64); 2],
    phi_min: f64,
    params: &GenerationParams,
) -> Result<(Candidate, Candidate, BifurcationGeometry), AirwayError> {
    let rp = parent.radius();
    let junction = parent.distal_frame();
    let r_star_a = geometry::curvature_radius(daughters[0].0, daughters[0].3)?;
    let r_star_b = geometry::curvature_radius(daughters[1].0, daughters[1].3)?;
    let arc = |r_star: f64, phi: f64| (r_star + rp) * math::rad(phi);
    let taper_length = geometry::shared_taper_length(
        (arc(r_star_a, daughters[0].3), arc(r_star_b, daughters[1].3)),
        (daughters[0].1, daughters[1].1),
    );
    let mut built = daughters.iter().zip([Side::A, Side::B]).map(|(&(d, l, tw, phi), side)| {
        let r_star = geometry::curvature_radius(d, phi)?;
        let taper = SigmoidTaper::new(params.taper_steepness, params.taper_midpoint, rp / (0.5 * d));
        let bend = DaughterBend::new(side, phi, r_star, rp, 0.5 * d, taper, taper_length);
        let id = 2 * parent.id + if side == Side::A { 1 } else { 2 };
        Ok((r_star, build_daughter(id, parent, &junction, &bend, l, tw)))
    });
    let (r_star_a, ca) = built.next().unwrap()?;
    let (r_star_b, cb) = built.next().unwrap()?;
    let (phi_a, phi_b) = (daughters[0].3, daughters[1].3);
    let carina = CarinaModel::new(
        &ca.bend,
        &cb.bend,
        (daughters[0].1, daughters[1].1),
        params.carina_rounding_fraction,
    );
    let bif = BifurcationGeometry {
        parent_id: parent.id,
        phi_a,
        phi_b,
        r_star_a,
        r_star_b,
        carina_center: carina.center,
        r_c: carina.radius,
        tilt_a: phi_a,
        tilt_b: -phi_b,
        taper_a: ca.bend.taper,
        taper_b: cb.bend.taper,
        taper_length,
        sagittal_range_a: [0.0, phi_a],
        sagittal_range_b: [0.0, phi_b],
        phi_min,
        carina,
    };
    Ok((ca, cb, bif))
}

/// Tries to place both daughters of `pid`, drawing fresh values from the
/// segment streams on every attempt.
fn place_children(
    pid: u32,
    params: &GenerationParams,
    streams: &mut [ChaCha8Rng],
    segments: &[Option<AirwaySegment>],
    placed: &[Option<Placed>],
) -> Result<Option<Placement>, AirwayError> {
    let ia = 2 * pid as usize + 1;
    let ib = ia + 1;
    let [h_lo, h_hi] = params.h_range;
    let base = segments[pid as usize].as_ref().expect("parent placed");
    let l_mean = params.l_mean_per_gen[base.generation as usize + 1];
    for _ in 0..params.max_attempts {
        let twist = sample_twist(&mut streams[pid as usize]);
        let h_a = uniform(&mut streams[pid as usize], h_lo, h_hi);
        let h_b = uniform(&mut streams[pid as usize], h_lo, h_hi);
        let l_a = sample_length(&mut streams[ia], l_mean, params.length_sigma_factor);
        let l_b = sample_length(&mut streams[ib], l_mean, params.length_sigma_factor);
        let tw_a = sample_twist(&mut streams[ia]);
        let tw_b = sample_twist(&mut streams[ib]);

        let mut parent = base.clone();
        parent.twist = twist;
        let d_a = h_a * parent.diameter;
        let d_b = h_b * parent.diameter;
        let phi_min = geometry::min_branching_angle(&parent, d_a, d_b, (l_a, l_b));
        let phi_a = uniform(&mut streams[pid as usize], phi_min, params.phi_max);
        let phi_b = uniform(&mut streams[pid as usize], phi_min, params.phi_max);
        if phi_min > params.phi_max {
            continue;
        }
        let (ca, cb, bif) = make_bifurcation(
            &parent,
            [(d_a, l_a, tw_a, phi_a), (d_b, l_b, tw_b, phi_b)],
            phi_min,
            params,
        )?;
        if straight_clip(&ca.bend, l_a) > MAX_CLIP_FRACTION * l_a || straight_clip(&cb.bend, l_b) > MAX_CLIP_FRACTION * l_b {
            continue;
        }
        let half = |s: &AirwaySegment| (s.start() + s.frame.axis * (0.5 * s.length), s.end());
        let (a0, a1) = half(&ca.seg);
        let (b0, b1) = half(&cb.seg);
        if math::segment_distance(a0, a1, b0, b1) < 0.5 * (d_a + d_b) * params.clearance_factor {
            continue;
        }
        if !clear_of_placed(&ca, ib as u32, phi_a, placed, params.clearance_factor)
            || !clear_of_placed(&cb, ia as u32, phi_b, placed, params.clearance_factor)
        {
            continue;
        }
        return Ok(Some((twist, ca, cb, bif)));
    }
    Ok(None)
}

/// Samples a full binary tree with `params.generations` levels.
///
/// Bifurcations are placed breadth-first. When no admissible placement
/// exists for a segment's daughters, the bifurcation that created the
/// segment is re-sampled (with everything placed after it), up to
/// `max_backtracks` times in total.
pub fn sample_tree(params: &GenerationParams) -> Result<AirwayTree, AirwayError> {
    params.validate()?;
    let g = params.generations;
    let n = (1usize << g) - 1;
    let n_internal = (1usize << (g - 1)) - 1;
    let mut streams: Vec<ChaCha8Rng> = (0..n as u32).map(|id| rng::segment_stream(params.seed, id)).collect();

    let mut segments: Vec<Option<AirwaySegment>> = (0..n).map(|_| None).collect();
    let mut placed: Vec<Option<Placed>> = (0..n).map(|_| None).collect();
    let mut bifurcations: Vec<Option<BifurcationGeometry>> = (0..n_internal).map(|_| None).collect();

    // Trachea runs down -z from the origin.
    let l0 = sample_length(&mut streams[0], params.l_mean_per_gen[0], params.length_sigma_factor);
    let twist0 = sample_twist(&mut streams[0]);
    let root = AirwaySegment {
        id: 0,
        parent_id: None,
        generation: 0,
        diameter: params.root_diameter,
        length: l0,
        twist: twist0,
        frame: Frame::from_axis(Vec3::ZERO, -Vec3::Z, Vec3::X),
    };
    placed[0] = Some(Placed {
        bend: Vec::new(),
        straight: Capsule {
            a: root.start(),
            b: root.end(),
            r: root.radius(),
        },
    });
    segments[0] = Some(root);

    let mut backtracks = 0u32;
    let mut pid = 0usize;
    while pid < n_internal {
        match place_children(pid as u32, params, &mut streams, &segments, &placed)? {
            Some((twist, ca, cb, bif)) => {
                let ia = 2 * pid + 1;
                segments[pid].as_mut().unwrap().twist = twist;
                placed[ia] = Some(ca.placed);
                placed[ia + 1] = Some(cb.placed);
                segments[ia] = Some(ca.seg);
                segments[ia + 1] = Some(cb.seg);
                bifurcations[pid] = Some(bif);
                pid += 1;
            }
            None => {
                if pid == 0 || backtracks >= params.max_backtracks {
                    return Err(AirwayError::Generation {
                        segment_id: pid as u32,
                        attempts: params.max_attempts,
                    });
                }
                backtracks += 1;
                let q = (pid - 1) / 2;
                for r in q..pid {
                    bifurcations[r] = None;
                    for c in [2 * r + 1, 2 * r + 2] {
                        segments[c] = None;
                        placed[c] = None;
                    }
                }
                pid = q;
            }
        }
    }

    Ok(AirwayTree {
        format_version: TREE_FORMAT_VERSION.into(),
        params: params.clone(),
        segments: segments.into_iter().map(|s| s.expect("all segments placed")).collect(),
        bifurcations: bifurcations.into_iter().map(|b| b.expect("all bifurcations placed")).collect(),
    })
}

/// Explicit geometry for one bifurcation, for building trees without
/// sampling. Arrays are `[a, b]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BifurcationChoice {
    /// Twist of the parent segment, degrees.
    pub parent_twist: f64,
    pub h: [f64; 2],
    /// Branching angles, degrees.
    pub phi: [f64; 2],
    pub lengths: [f64; 2],
}

/// Builds a tree from explicit choices, one per internal segment in id order.
/// Nothing is drawn and no clearance is enforced; `phi_min` is still recorded.
pub fn assemble_tree(
    params: &GenerationParams,
    root_length: f64,
    choices: &[BifurcationChoice],
) -> Result<AirwayTree, AirwayError> {
    params.validate()?;
    let n = (1usize << params.generations) - 1;
    let n_internal = (1usize << (params.generations - 1)) - 1;
    if choices.len() != n_internal {
        return Err(AirwayError::InvalidParam {
            field: "choices",
            reason: alloc::format!("expected {n_internal} bifurcations, got {}", choices.len()),
        });
    }
    if !(root_length > 0.0) {
        return Err(AirwayError::InvalidParam {
            field: "root_length",
            reason: alloc::format!("must be positive, got {root_length}"),
        });
    }
    let mut segments = Vec::with_capacity(n);
    segments.push(AirwaySegment {
        id: 0,
        parent_id: None,
        generation: 0,
        diameter: params.root_diameter,
        length: root_length,
        twist: 0.0,
        frame: Frame::from_axis(Vec3::ZERO, -Vec3::Z, Vec3::X),
    });
    let mut bifurcations = Vec::with_capacity(n_internal);
    for (pid, c) in choices.iter().enumerate() {
        if !(0.0..360.0).contains(&c.parent_twist) {
            return Err(AirwayError::Domain(alloc::format!("twist {} outside [0, 360)", c.parent_twist)));
        }
        segments[pid].twist = c.parent_twist;
        let parent = segments[pid].clone();
        let d_a = c.h[0] * parent.diameter;
        let d_b = c.h[1] * parent.diameter;
        let phi_min = geometry::min_branching_angle(&parent, d_a, d_b, (c.lengths[0], c.lengths[1]));
        let (ca, cb, bif) = make_bifurcation(
            &parent,
            [
                (d_a, c.lengths[0], 0.0, c.phi[0]),
                (d_b, c.lengths[1], 0.0, c.phi[1]),
            ],
            phi_min,
            params,
        )?;
        segments.push(ca.seg);
        segments.push(cb.seg);
        bifurcations.push(bif);
    }
    Ok(AirwayTree {
        format_version: TREE_FORMAT_VERSION.into(),
        params: params.clone(),
        segments,
        bifurcations,
    })
}
