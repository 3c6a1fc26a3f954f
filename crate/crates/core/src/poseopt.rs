//! Initial-pose search: sample whole-body poses, settle them under the
//! physics, shake them, and keep the pose that is both stable and mobile.
//!
//! A pose is an assembly orientation plus one angle per joint. Scoring drops
//! the assembly just above the ground, lets it settle under PD hold, then
//! drives every joint with a small sine probe; the score rewards a wide
//! support polygon and net travel, and heavily punishes tipping over. The
//! search is embarrassingly parallel and bit-deterministic for a fixed seed
//! regardless of thread count: samples are drawn up front from one stream
//! and results are collected in sample order.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::morphology::{ConfigTree, DockId};
use crate::rewards;
use crate::scalar::{rf, to_f64, Real};
use crate::simcore::{SimError, Simulator};

/// Candidate pose: assembly orientation and per-module joint angles.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSample<T: Real> {
    pub orientation: UnitQuaternion<T>,
    pub joint_angles: Vec<T>,
}

/// Uniform random rotation: a unit quaternion from four standard gaussians.
pub fn uniform_quaternion<T: Real, R: Rng>(rng: &mut R) -> UnitQuaternion<T> {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let w: f64 = n.sample(rng);
        let x: f64 = n.sample(rng);
        let y: f64 = n.sample(rng);
        let z: f64 = n.sample(rng);
        let q = Quaternion::new(rf::<T>(w), rf(x), rf(y), rf(z));
        if to_f64(q.norm()) > 1.0e-9 {
            return UnitQuaternion::from_quaternion(q);
        }
    }
}

/// One pose draw: uniform orientation, joints uniform in [-pi, pi).
pub fn sample_pose<T: Real, R: Rng>(rng: &mut R, n_modules: usize) -> PoseSample<T> {
    let orientation = uniform_quaternion(rng);
    let angle = Uniform::new(-std::f64::consts::PI, std::f64::consts::PI);
    let joint_angles = (0..n_modules).map(|_| rf(angle.sample(rng))).collect();
    PoseSample { orientation, joint_angles }
}

/// Search parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseOptConfig<T: Real> {
    pub n_samples: usize,
    pub area_weight: T,
    pub displacement_weight: T,
    pub fall_penalty: T,
    /// Sine probe amplitude on every joint, rad.
    pub probe_amplitude: T,
    pub probe_frequency_hz: T,
    pub probe_steps: usize,
    /// Probe control interval, s.
    pub probe_dt: T,
    /// Gap between the lowest collider and the ground at the drop, m.
    pub drop_clearance: T,
    /// Apply the mirror-symmetry pose transform and reject poses that settle
    /// onto a joint sphere.
    pub symmetric: bool,
}

impl<T: Real> Default for PoseOptConfig<T> {
    fn default() -> Self {
        Self {
            n_samples: 4096,
            area_weight: rf(10.0),
            displacement_weight: T::one(),
            fall_penalty: rf(100.0),
            probe_amplitude: T::one(),
            probe_frequency_hz: rf(5.0),
            probe_steps: 250,
            probe_dt: rf(0.02),
            drop_clearance: rf(0.02),
            symmetric: false,
        }
    }
}

/// Scored pose after settle and probe.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseEvaluation<T: Real> {
    pub sample: PoseSample<T>,
    pub score: T,
    pub support_area: T,
    /// Net horizontal travel of the center of mass during the probe, m.
    pub displacement: T,
    pub fell: bool,
    /// Pose rejected by the symmetry filter (settled onto a joint sphere).
    pub rejected: bool,
    /// Root-frame direction that pointed up after settling.
    pub up_local: Vector3<T>,
    /// Root-frame unit direction of probe travel; +X when travel vanishes.
    pub forward_local: Vector3<T>,
    /// Joint angles at the end of the settle.
    pub settled_angles: Vec<T>,
}

/// Search result: the winning sample index, its evaluation, and the score of
/// every evaluated pose in sample order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizedPose<T: Real> {
    pub index: usize,
    pub best: PoseEvaluation<T>,
    pub n_evaluated: usize,
    pub scores: Vec<T>,
}

/// Serializable form of a pose result, free of simulator types.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PoseRecord {
    /// Quaternion as (w, x, y, z).
    pub orientation: [f64; 4],
    pub joint_angles: Vec<f64>,
    pub score: f64,
    pub support_area: f64,
    pub displacement: f64,
    pub fell: bool,
    pub up_local: [f64; 3],
    pub forward_local: [f64; 3],
}

impl PoseRecord {
    pub fn from_evaluation<T: Real>(e: &PoseEvaluation<T>) -> Self {
        let q = e.sample.orientation.quaternion();
        Self {
            orientation: [to_f64(q.w), to_f64(q.i), to_f64(q.j), to_f64(q.k)],
            joint_angles: e.sample.joint_angles.iter().map(|&a| to_f64(a)).collect(),
            score: to_f64(e.score),
            support_area: to_f64(e.support_area),
            displacement: to_f64(e.displacement),
            fell: e.fell,
            up_local: [to_f64(e.up_local.x), to_f64(e.up_local.y), to_f64(e.up_local.z)],
            forward_local: [
                to_f64(e.forward_local.x),
                to_f64(e.forward_local.y),
                to_f64(e.forward_local.z),
            ],
        }
    }
}

// ---------------------------------------------------------------------------
// Mirror symmetry.

/// Dock pairs that mirror each other on the same body: sphere docks across
/// the equator, side docks at link fractions f and 1 - f.
pub const MIRROR_DOCK_PAIRS: [(u8, u8); 8] =
    [(0, 2), (1, 3), (4, 9), (5, 8), (6, 7), (11, 16), (12, 15), (13, 14)];

fn docks_mirrored(a: DockId, b: DockId) -> bool {
    let (a, b) = (a.index(), b.index());
    MIRROR_DOCK_PAIRS
        .iter()
        .any(|&(p, q)| (a, b) == (p, q) || (a, b) == (q, p))
}

/// Module index pairs that are mirror twins: children of the same parent,
/// docked at mirrored parent docks through the same child dock.
pub fn mirror_pairs(tree: &ConfigTree) -> Vec<(usize, usize)> {
    let cs = tree.connections();
    let mut used = vec![false; cs.len()];
    let mut pairs = Vec::new();
    for i in 0..cs.len() {
        if used[i] {
            continue;
        }
        for j in i + 1..cs.len() {
            if used[j]
                || cs[i].parent != cs[j].parent
                || cs[i].child_dock != cs[j].child_dock
                || !docks_mirrored(cs[i].parent_dock, cs[j].parent_dock)
            {
                continue;
            }
            used[i] = true;
            used[j] = true;
            pairs.push((i + 1, j + 1));
            break;
        }
    }
    pairs
}

/// True when the design is symmetric enough for the mirrored pose sampler:
/// at most one non-root module lacks a mirror twin.
pub fn qualifies_for_symmetry(tree: &ConfigTree) -> bool {
    let paired = 2 * mirror_pairs(tree).len();
    tree.n_modules() - 1 - paired <= 1
}

/// Projects a sampled pose onto the design's mirror symmetry: the root joint
/// straightens and twin modules share a magnitude, keeping sampled signs.
pub fn symmetrize_pose<T: Real>(tree: &ConfigTree, sample: &mut PoseSample<T>) {
    sample.joint_angles[0] = T::zero();
    for (a, b) in mirror_pairs(tree) {
        let mag = sample.joint_angles[a].abs();
        let sign = if sample.joint_angles[b] < T::zero() { -T::one() } else { T::one() };
        sample.joint_angles[b] = sign * mag;
    }
}

// ---------------------------------------------------------------------------
// Evaluation.

/// Settles and probes one pose. `sim` carries the settle timing; the probe
/// runs on a copy reclocked to the probe interval. Divergence counts as a
/// fall rather than an error so a search never aborts on a wild pose.
pub fn evaluate_pose<T: Real>(
    sim: &Simulator<T>,
    sample: &PoseSample<T>,
    cfg: &PoseOptConfig<T>,
) -> PoseEvaluation<T> {
    let hold = sample.joint_angles.clone();
    let mut state = sim.drop_state(&sample.orientation, hold.clone(), cfg.drop_clearance);
    let fail = |sample: &PoseSample<T>| PoseEvaluation {
        sample: sample.clone(),
        score: -cfg.fall_penalty,
        support_area: T::zero(),
        displacement: T::zero(),
        fell: true,
        rejected: false,
        up_local: Vector3::z(),
        forward_local: Vector3::x(),
        settled_angles: sample.joint_angles.clone(),
    };
    if let Err(SimError::Diverged { .. }) = sim.settle(&mut state, &hold) {
        return fail(sample);
    }

    let frames = sim.module_frames(&state);
    let up_local = frames[0].rotation.inverse() * Vector3::z();
    let support_area = sim.support_polygon_area(&state);
    let settled_angles = state.theta.clone();
    let settled_root = frames[0];
    let com0 = sim.com(&state);
    let rejected = cfg.symmetric && state.contacts.iter().any(|c| c.joint_sphere);

    // Probe on a reclocked copy of the simulator.
    let mut probe_sim = sim.clone();
    probe_sim.config.control_dt = cfg.probe_dt;
    let two_pi = rf::<T>(std::f64::consts::TAU);
    let mut fell = false;
    let mut targets = vec![T::zero(); hold.len()];
    for step in 0..cfg.probe_steps {
        let t = rf::<T>(step as f64) * cfg.probe_dt;
        let wobble = cfg.probe_amplitude * (two_pi * cfg.probe_frequency_hz * t).sin();
        for (tgt, &h) in targets.iter_mut().zip(&hold) {
            *tgt = h + wobble;
        }
        if let Err(SimError::Diverged { .. }) = probe_sim.control_step(&mut state, &targets) {
            fell = true;
            break;
        }
        let g_root = rewards::gravity_direction(&probe_sim.module_frames(&state)[0]);
        if rewards::has_fallen(rewards::uprightness(&g_root, &up_local)) {
            fell = true;
            break;
        }
    }

    let com1 = sim.com(&state);
    let travel = Vector3::new(com1.x - com0.x, com1.y - com0.y, T::zero());
    let displacement = travel.norm();
    let forward_local = if to_f64(displacement) < 1.0e-9 {
        Vector3::x()
    } else {
        settled_root.rotation.inverse() * (travel / displacement)
    };

    let fell_term = if fell { cfg.fall_penalty } else { T::zero() };
    let score = if rejected {
        rf::<T>(-1.0e18)
    } else {
        cfg.area_weight * support_area + cfg.displacement_weight * displacement - fell_term
    };
    PoseEvaluation {
        sample: sample.clone(),
        score,
        support_area,
        displacement,
        fell,
        rejected,
        up_local,
        forward_local,
        settled_angles,
    }
}

/// Full search: draw poses from `rng`, evaluate them in parallel, return the
/// best by score with ties broken toward the lowest sample index.
pub fn optimize_pose<T: Real, R: Rng>(
    sim: &Simulator<T>,
    tree: &ConfigTree,
    cfg: &PoseOptConfig<T>,
    rng: &mut R,
) -> OptimizedPose<T>
where
    T: Send + Sync,
{
    let symmetric = cfg.symmetric && qualifies_for_symmetry(tree);
    let samples: Vec<PoseSample<T>> = (0..cfg.n_samples)
        .map(|_| {
            let mut s = sample_pose(rng, sim.n_modules());
            if symmetric {
                symmetrize_pose(tree, &mut s);
            }
            s
        })
        .collect();
    let evals: Vec<PoseEvaluation<T>> = samples
        .par_iter()
        .map(|s| evaluate_pose(sim, s, cfg))
        .collect();
    let mut best = 0;
    for (i, e) in evals.iter().enumerate() {
        if e.score > evals[best].score {
            best = i;
        }
    }
    let scores = evals.iter().map(|e| e.score).collect();
    OptimizedPose { index: best, best: evals[best].clone(), n_evaluated: evals.len(), scores }
}
