//! Damage scenarios for a five-module quadruped: cut-point sampling,
//! amputation surgery on assembly trees, fixed-layout trajectory records,
//! context windows over them, and the trial matrix used to exercise
//! recovery behavior.
//!
//! Surgery removes leaf modules and models the piece of link left behind
//! as a welded partial capsule on the parent body ([`Stub`]), so a cut
//! changes mass and contact geometry without adding a dynamic body.

use std::io::{self, Read, Write};

use nalgebra::UnitQuaternion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::ModuleGeometry;
use crate::morphology::{ConfigTree, Connection, DockId, MAX_MODULES};
use crate::rewards;
use crate::simcore::{SimConfig, SimError, SimState, Simulator, Stub, Terrain};

/// Timesteps in a full context window.
pub const CONTEXT_WINDOW: usize = 60;
/// Reals per module-state token: gravity (3), angular velocity (3),
/// cos of the joint angle, joint rate.
pub const STATE_TOKEN_DIM: usize = 8;
/// Trial length in seconds.
pub const TRIAL_DURATION: f64 = 5.0;
/// Ground friction coefficient used for trials.
pub const TRIAL_FRICTION: f64 = 0.8;
/// Initial limb joint angle in radians.
pub const LIMB_INITIAL_ANGLE: f64 = 1.5;
/// Cut sets sampled per amputation scenario.
pub const CUT_SETS_PER_SCENARIO: usize = 10;
/// Repetitions per cut set.
pub const REPETITIONS: usize = 5;
/// Tallest obstacle in the rough-terrain tile, in meters.
pub const OBSTACLE_MAX_HEIGHT: f64 = 0.03;

/// Mating roll used for all four limbs of [`quadruped`]. Smallest of the
/// three rolls whose neutral pose is free of self-collision.
pub const LIMB_ORIENTATION: u8 = 0;

/// The four limb positions of the quadruped, named by the torso dock each
/// limb hangs from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LimbSite {
    FrontLeft,
    FrontRight,
    BackLeft,
    BackRight,
}

impl LimbSite {
    pub const ALL: [LimbSite; 4] = [
        LimbSite::FrontLeft,
        LimbSite::FrontRight,
        LimbSite::BackLeft,
        LimbSite::BackRight,
    ];

    /// Torso dock the limb's tip mates with.
    pub fn torso_dock(self) -> DockId {
        let index = match self {
            LimbSite::FrontLeft => 4,
            LimbSite::FrontRight => 9,
            LimbSite::BackLeft => 11,
            LimbSite::BackRight => 16,
        };
        DockId::new(index).expect("limb dock index in range")
    }

    /// Module index of the limb in the intact quadruped.
    pub fn module_index(self) -> usize {
        match self {
            LimbSite::FrontLeft => 1,
            LimbSite::FrontRight => 2,
            LimbSite::BackLeft => 3,
            LimbSite::BackRight => 4,
        }
    }

    /// Initial torso joint angle for the one-limb-removed trials. Signs
    /// mirror left/right, magnitudes grow front to back.
    pub fn initial_torso_angle(self) -> f64 {
        match self {
            LimbSite::FrontRight => 0.6,
            LimbSite::FrontLeft => -0.6,
            LimbSite::BackRight => 1.0,
            LimbSite::BackLeft => -1.0,
        }
    }
}

/// Five-module quadruped: one torso module with a limb's tip docked at
/// the outermost mirrored station pair of each link. Inner stations sit
/// closer than two knee spheres, so only the outer pair is usable.
pub fn quadruped() -> ConfigTree {
    let tip = DockId::new(10).expect("tip dock");
    let connections = LimbSite::ALL
        .iter()
        .map(|site| Connection {
            parent: 0,
            parent_dock: site.torso_dock(),
            child_dock: tip,
            orientation: LIMB_ORIENTATION,
        })
        .collect();
    ConfigTree::new(connections).expect("quadruped tree is well formed")
}

/// A cut through a limb's attached link. `fraction` is the portion of the
/// link kept, measured from the mating point: 0 removes the limb cleanly,
/// 1 keeps the full link as a dead weld.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutPoint {
    /// Module index of the cut limb.
    pub limb: usize,
    pub fraction: f64,
}

/// One cut per site, fractions drawn uniformly from [0, 1).
pub fn sample_cutpoints<R: Rng>(rng: &mut R, sites: &[LimbSite]) -> Vec<CutPoint> {
    sites
        .iter()
        .map(|site| CutPoint { limb: site.module_index(), fraction: rng.gen::<f64>() })
        .collect()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AmputationError {
    #[error("module {module} does not exist")]
    NoSuchModule { module: usize },
    #[error("module {module} has docked children and cannot be cut")]
    NotALeaf { module: usize },
    #[error("the root module cannot be cut")]
    RootCut,
    #[error("module {module} is cut more than once")]
    DuplicateCut { module: usize },
    #[error("cut fraction {fraction} is outside [0, 1]")]
    BadFraction { fraction: f64 },
}

/// Result of surgery: the reduced tree plus one welded stub per partial cut.
#[derive(Debug, Clone, PartialEq)]
pub struct AmputatedDesign {
    pub tree: ConfigTree,
    pub stubs: Vec<Stub<f64>>,
}

/// Removes each cut limb from the tree. A cut with fraction above zero
/// leaves that portion of the limb's attached link welded to the parent.
/// Only leaves may be cut; surviving modules are renumbered densely.
pub fn apply_amputation(
    tree: &ConfigTree,
    cuts: &[CutPoint],
) -> Result<AmputatedDesign, AmputationError> {
    let n = tree.n_modules();
    let mut removed = vec![false; n];
    for cut in cuts {
        if cut.limb == 0 {
            return Err(AmputationError::RootCut);
        }
        if cut.limb >= n {
            return Err(AmputationError::NoSuchModule { module: cut.limb });
        }
        if tree.connections().iter().any(|c| usize::from(c.parent) == cut.limb) {
            return Err(AmputationError::NotALeaf { module: cut.limb });
        }
        if removed[cut.limb] {
            return Err(AmputationError::DuplicateCut { module: cut.limb });
        }
        if !(cut.fraction.is_finite() && (0.0..=1.0).contains(&cut.fraction)) {
            return Err(AmputationError::BadFraction { fraction: cut.fraction });
        }
        removed[cut.limb] = true;
    }

    // Survivors keep their relative order; index i maps to i minus the
    // number of removed modules below it.
    let shift: Vec<usize> = (0..n)
        .map(|i| removed[..i].iter().filter(|r| **r).count())
        .collect();

    let kept = tree
        .connections()
        .iter()
        .enumerate()
        .filter(|(slot, _)| !removed[slot + 1])
        .map(|(_, c)| Connection {
            parent: (usize::from(c.parent) - shift[usize::from(c.parent)]) as u8,
            ..*c
        })
        .collect();
    let remnant = ConfigTree::new(kept).expect("leaf removal preserves tree shape");

    let stubs = cuts
        .iter()
        .filter(|cut| cut.fraction > 0.0)
        .map(|cut| {
            let c = &tree.connections()[cut.limb - 1];
            Stub {
                parent_module: usize::from(c.parent) - shift[usize::from(c.parent)],
                parent_dock: c.parent_dock,
                child_dock: c.child_dock,
                orientation: c.orientation,
                fraction: cut.fraction,
            }
        })
        .collect();

    Ok(AmputatedDesign { tree: remnant, stubs })
}

/// Per-module observation at one timestep, all in the module's own frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModuleState {
    /// Unit gravity direction.
    pub gravity: [f64; 3],
    /// Angular velocity of the module frame.
    pub angular_velocity: [f64; 3],
    pub cos_angle: f64,
    pub angle_rate: f64,
}

impl ModuleState {
    pub fn tokens(&self) -> [f64; STATE_TOKEN_DIM] {
        let g = self.gravity;
        let w = self.angular_velocity;
        [g[0], g[1], g[2], w[0], w[1], w[2], self.cos_angle, self.angle_rate]
    }
}

/// One control step: module states first, then the commanded joint
/// targets, plus the raw joint angles the cos tokens were derived from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeStep {
    pub states: Vec<ModuleState>,
    pub action: Vec<f64>,
    /// Raw joint angles, kept so zero-offset shifts can recompute cos.
    pub angles: Vec<f64>,
}

/// Recorded rollout for one design. `zero_offsets` holds the per-module
/// shift (radians) that maps this recording's joint-zero convention onto
/// the shared one; [`normalize_zero_positions`] applies and clears it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Per-module id of the policy that produced the recording.
    pub policy_ids: Vec<u32>,
    pub zero_offsets: Vec<f64>,
    pub steps: Vec<TimeStep>,
}

impl Trajectory {
    pub fn n_modules(&self) -> usize {
        self.policy_ids.len()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    fn assert_consistent(&self) {
        let n = self.n_modules();
        assert_eq!(self.zero_offsets.len(), n, "one zero offset per module");
        for step in &self.steps {
            assert_eq!(step.states.len(), n);
            assert_eq!(step.action.len(), n);
            assert_eq!(step.angles.len(), n);
        }
    }
}

/// Snapshot of module states for the current simulator state.
pub fn capture_states(sim: &Simulator<f64>, state: &SimState<f64>) -> Vec<ModuleState> {
    let frames = sim.module_frames(state);
    let spins = sim.module_angular_velocities(state);
    (0..sim.n_modules())
        .map(|m| {
            let g = rewards::gravity_direction(&frames[m]);
            let w = frames[m].rotation.inverse_transform_vector(&spins[m]);
            ModuleState {
                gravity: [g.x, g.y, g.z],
                angular_velocity: [w.x, w.y, w.z],
                cos_angle: state.theta[m].cos(),
                angle_rate: state.theta_dot[m],
            }
        })
        .collect()
}

/// Runs `steps` control steps, recording state before each action is
/// applied. The policy sees the step index and the current state.
pub fn record_rollout<F>(
    sim: &Simulator<f64>,
    state: &mut SimState<f64>,
    mut policy: F,
    steps: usize,
    policy_id: u32,
) -> Result<Trajectory, SimError<f64>>
where
    F: FnMut(usize, &SimState<f64>) -> Vec<f64>,
{
    let n = sim.n_modules();
    let mut recorded = Vec::with_capacity(steps);
    for k in 0..steps {
        let action = policy(k, state);
        assert_eq!(action.len(), n, "one target per module");
        recorded.push(TimeStep {
            states: capture_states(sim, state),
            action: action.clone(),
            angles: state.theta.clone(),
        });
        sim.control_step(state, &action)?;
    }
    Ok(Trajectory {
        policy_ids: vec![policy_id; n],
        zero_offsets: vec![0.0; n],
        steps: recorded,
    })
}

const TRAJECTORY_MAGIC: [u8; 8] = *b"MMTRAJ01";
const TRAJECTORY_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TrajectoryFileError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a trajectory file")]
    BadMagic,
    #[error("unsupported trajectory file version {0}")]
    UnsupportedVersion(u32),
    #[error("bad {field}: {got}")]
    BadLayout { field: &'static str, got: u64 },
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64<W: Write>(w: &mut W, v: f64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Writes the fixed little-endian layout: header (magic, version, module
/// count, step count, state dim, per-module policy ids and zero offsets)
/// followed by per-step state tokens, action, and raw angles.
pub fn write_trajectory<W: Write>(w: &mut W, t: &Trajectory) -> io::Result<()> {
    t.assert_consistent();
    w.write_all(&TRAJECTORY_MAGIC)?;
    put_u32(w, TRAJECTORY_VERSION)?;
    put_u32(w, t.n_modules() as u32)?;
    put_u32(w, t.len() as u32)?;
    put_u32(w, STATE_TOKEN_DIM as u32)?;
    for id in &t.policy_ids {
        put_u32(w, *id)?;
    }
    for off in &t.zero_offsets {
        put_f64(w, *off)?;
    }
    for step in &t.steps {
        for s in &step.states {
            for v in s.tokens() {
                put_f64(w, v)?;
            }
        }
        for v in &step.action {
            put_f64(w, *v)?;
        }
        for v in &step.angles {
            put_f64(w, *v)?;
        }
    }
    Ok(())
}

pub fn read_trajectory<R: Read>(r: &mut R) -> Result<Trajectory, TrajectoryFileError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if magic != TRAJECTORY_MAGIC {
        return Err(TrajectoryFileError::BadMagic);
    }
    let version = get_u32(r)?;
    if version != TRAJECTORY_VERSION {
        return Err(TrajectoryFileError::UnsupportedVersion(version));
    }
    let n = get_u32(r)? as usize;
    if n == 0 || n > MAX_MODULES {
        return Err(TrajectoryFileError::BadLayout { field: "module count", got: n as u64 });
    }
    let steps = get_u32(r)? as usize;
    let dim = get_u32(r)? as usize;
    if dim != STATE_TOKEN_DIM {
        return Err(TrajectoryFileError::BadLayout { field: "state dim", got: dim as u64 });
    }
    let mut policy_ids = Vec::with_capacity(n);
    for _ in 0..n {
        policy_ids.push(get_u32(r)?);
    }
    let mut zero_offsets = Vec::with_capacity(n);
    for _ in 0..n {
        zero_offsets.push(get_f64(r)?);
    }
    let mut recorded = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut states = Vec::with_capacity(n);
        for _ in 0..n {
            let mut v = [0.0; STATE_TOKEN_DIM];
            for slot in v.iter_mut() {
                *slot = get_f64(r)?;
            }
            states.push(ModuleState {
                gravity: [v[0], v[1], v[2]],
                angular_velocity: [v[3], v[4], v[5]],
                cos_angle: v[6],
                angle_rate: v[7],
            });
        }
        let mut action = Vec::with_capacity(n);
        for _ in 0..n {
            action.push(get_f64(r)?);
        }
        let mut angles = Vec::with_capacity(n);
        for _ in 0..n {
            angles.push(get_f64(r)?);
        }
        recorded.push(TimeStep { states, action, angles });
    }
    Ok(Trajectory { policy_ids, zero_offsets, steps: recorded })
}

/// Shifts every joint angle and action by the module's zero offset,
/// recomputes the cos tokens from the shifted angles, and clears the
/// offsets. Applying it a second time is the identity.
pub fn normalize_zero_positions(t: &Trajectory) -> Trajectory {
    t.assert_consistent();
    let n = t.n_modules();
    let steps = t
        .steps
        .iter()
        .map(|step| {
            let angles: Vec<f64> =
                (0..n).map(|m| step.angles[m] + t.zero_offsets[m]).collect();
            let states = (0..n)
                .map(|m| ModuleState { cos_angle: angles[m].cos(), ..step.states[m] })
                .collect();
            let action = (0..n).map(|m| step.action[m] + t.zero_offsets[m]).collect();
            TimeStep { states, action, angles }
        })
        .collect();
    Trajectory {
        policy_ids: t.policy_ids.clone(),
        zero_offsets: vec![0.0; n],
        steps,
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MergeError {
    #[error("no parts to merge")]
    Empty,
    #[error("parts cover {got} modules, expected {expected}")]
    WrongTotal { got: usize, expected: usize },
}

/// Concatenates part recordings module-wise into one five-module
/// trajectory, truncating to the shortest part. Tokens are copied
/// verbatim; zero offsets and policy ids travel with their modules.
pub fn merge_trajectories(parts: &[&Trajectory]) -> Result<Trajectory, MergeError> {
    if parts.is_empty() {
        return Err(MergeError::Empty);
    }
    for p in parts {
        p.assert_consistent();
    }
    let total: usize = parts.iter().map(|p| p.n_modules()).sum();
    if total != MAX_MODULES {
        return Err(MergeError::WrongTotal { got: total, expected: MAX_MODULES });
    }
    let len = parts.iter().map(|p| p.len()).min().unwrap_or(0);
    let steps = (0..len)
        .map(|k| {
            let mut states = Vec::with_capacity(total);
            let mut action = Vec::with_capacity(total);
            let mut angles = Vec::with_capacity(total);
            for p in parts {
                states.extend_from_slice(&p.steps[k].states);
                action.extend_from_slice(&p.steps[k].action);
                angles.extend_from_slice(&p.steps[k].angles);
            }
            TimeStep { states, action, angles }
        })
        .collect();
    Ok(Trajectory {
        policy_ids: parts.iter().flat_map(|p| p.policy_ids.iter().copied()).collect(),
        zero_offsets: parts.iter().flat_map(|p| p.zero_offsets.iter().copied()).collect(),
        steps,
    })
}

/// Token sequence feeding a sequence model: for each timestep in the
/// window, one state token per module followed by the action token, the
/// action at the query step last.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextWindow {
    pub tokens: Vec<Vec<f64>>,
    /// True when fewer than `window` steps existed before the query step.
    pub truncated: bool,
}

/// Builds the context ending at step `at`, spanning up to `window` steps.
pub fn build_context(t: &Trajectory, at: usize, window: usize) -> ContextWindow {
    assert!(window > 0, "window must be positive");
    assert!(at < t.len(), "query step out of range");
    let start = (at + 1).saturating_sub(window);
    let mut tokens = Vec::with_capacity((at + 1 - start) * (t.n_modules() + 1));
    for step in &t.steps[start..=at] {
        for s in &step.states {
            tokens.push(s.tokens().to_vec());
        }
        tokens.push(step.action.clone());
    }
    ContextWindow { tokens, truncated: at + 1 < window }
}

/// Seeded rough-terrain tile for recordings on uneven ground: a 2 m
/// square of 5 cm plateaus up to [`OBSTACLE_MAX_HEIGHT`] tall.
pub fn obstacle_terrain(seed: u64) -> Terrain<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Terrain::obstacles(&mut rng, 40, 0.05, OBSTACLE_MAX_HEIGHT, 2.0)
}

/// The two diagonal limb pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiagonalPair {
    FrontRightBackLeft,
    FrontLeftBackRight,
}

impl DiagonalPair {
    pub fn sites(self) -> [LimbSite; 2] {
        match self {
            DiagonalPair::FrontRightBackLeft => [LimbSite::FrontRight, LimbSite::BackLeft],
            DiagonalPair::FrontLeftBackRight => [LimbSite::FrontLeft, LimbSite::BackRight],
        }
    }
}

/// Damage scenario classes. The first four appear in training data; the
/// rest probe generalization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioClass {
    Intact,
    OneLimb(LimbSite),
    TwoHindlimbs,
    SingleModule,
    Diagonal(DiagonalPair),
    /// Three limbs removed; the field names the one that remains.
    ThreeLimbs(LimbSite),
    /// Motors of the listed modules emit zero torque; joints stay passive.
    DeadModules(Vec<usize>),
}

impl ScenarioClass {
    pub fn in_distribution(&self) -> bool {
        matches!(
            self,
            ScenarioClass::Intact
                | ScenarioClass::OneLimb(_)
                | ScenarioClass::TwoHindlimbs
                | ScenarioClass::SingleModule
        )
    }

    /// Limbs removed by this scenario.
    pub fn amputated_sites(&self) -> Vec<LimbSite> {
        match self {
            ScenarioClass::Intact | ScenarioClass::DeadModules(_) => Vec::new(),
            ScenarioClass::OneLimb(site) => vec![*site],
            ScenarioClass::TwoHindlimbs => vec![LimbSite::BackLeft, LimbSite::BackRight],
            ScenarioClass::SingleModule => LimbSite::ALL.to_vec(),
            ScenarioClass::Diagonal(pair) => pair.sites().to_vec(),
            ScenarioClass::ThreeLimbs(remaining) => {
                LimbSite::ALL.iter().copied().filter(|s| s != remaining).collect()
            }
        }
    }

    pub fn dead_modules(&self) -> &[usize] {
        match self {
            ScenarioClass::DeadModules(v) => v,
            _ => &[],
        }
    }

    /// Initial torso joint angle for this scenario.
    pub fn initial_torso_angle(&self) -> f64 {
        match self {
            ScenarioClass::OneLimb(site) => site.initial_torso_angle(),
            _ => 0.0,
        }
    }
}

/// Dead-motor sets exercised by the matrix: each module alone, then the
/// front, hind, and diagonal limb pairs.
pub fn dead_module_sets() -> Vec<Vec<usize>> {
    let mut sets: Vec<Vec<usize>> = (0..MAX_MODULES).map(|m| vec![m]).collect();
    sets.push(vec![1, 2]);
    sets.push(vec![3, 4]);
    sets.push(vec![2, 3]);
    sets.push(vec![1, 4]);
    sets
}

/// All scenario classes in matrix order.
pub fn scenario_classes() -> Vec<ScenarioClass> {
    let mut classes = vec![ScenarioClass::Intact];
    classes.extend(LimbSite::ALL.iter().map(|s| ScenarioClass::OneLimb(*s)));
    classes.push(ScenarioClass::TwoHindlimbs);
    classes.push(ScenarioClass::SingleModule);
    classes.push(ScenarioClass::Diagonal(DiagonalPair::FrontRightBackLeft));
    classes.push(ScenarioClass::Diagonal(DiagonalPair::FrontLeftBackRight));
    classes.extend(LimbSite::ALL.iter().map(|s| ScenarioClass::ThreeLimbs(*s)));
    classes.extend(dead_module_sets().into_iter().map(ScenarioClass::DeadModules));
    classes
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestMatrixConfig {
    pub seed: u64,
    pub cut_sets: usize,
    pub repetitions: usize,
    pub duration: f64,
    pub friction: f64,
    pub initial_limb_angle: f64,
}

impl Default for TestMatrixConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            cut_sets: CUT_SETS_PER_SCENARIO,
            repetitions: REPETITIONS,
            duration: TRIAL_DURATION,
            friction: TRIAL_FRICTION,
            initial_limb_angle: LIMB_INITIAL_ANGLE,
        }
    }
}

/// One trial: a scenario instance with its cuts, seed, and initial pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub class: ScenarioClass,
    pub cut_set: usize,
    pub repetition: usize,
    pub cuts: Vec<CutPoint>,
    pub seed: u64,
    pub duration: f64,
    pub friction: f64,
    pub initial_torso_angle: f64,
    pub initial_limb_angle: f64,
    pub in_distribution: bool,
}

/// Expands the full trial matrix: per class, `cut_sets` sampled cut sets
/// (one degenerate set for classes without cuts) times `repetitions`.
/// Cut fractions come from a per-class seeded stream, so the matrix is a
/// pure function of the config.
pub fn test_matrix(cfg: &TestMatrixConfig) -> Vec<TrialSpec> {
    let mut trials = Vec::new();
    for (ci, class) in scenario_classes().into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(ci as u64 + 1);
        let sites = class.amputated_sites();
        let n_sets = if sites.is_empty() { 1 } else { cfg.cut_sets };
        for set in 0..n_sets {
            let cuts = sample_cutpoints(&mut rng, &sites);
            for rep in 0..cfg.repetitions {
                trials.push(TrialSpec {
                    class: class.clone(),
                    cut_set: set,
                    repetition: rep,
                    cuts: cuts.clone(),
                    seed: cfg.seed
                        ^ ((ci as u64) << 40)
                        ^ ((set as u64) << 20)
                        ^ rep as u64,
                    duration: cfg.duration,
                    friction: cfg.friction,
                    initial_torso_angle: class.initial_torso_angle(),
                    initial_limb_angle: cfg.initial_limb_angle,
                    in_distribution: class.in_distribution(),
                });
            }
        }
    }
    trials
}

#[derive(Debug, Error)]
pub enum TrialError {
    #[error(transparent)]
    Surgery(#[from] AmputationError),
    #[error(transparent)]
    Build(#[from] crate::simcore::BuildError),
    #[error(transparent)]
    Sim(#[from] SimError<f64>),
}

/// Summary of one executed trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    /// Horizontal distance covered by the center of mass.
    pub displacement: f64,
    /// Center-of-mass height at the end.
    pub final_height: f64,
    pub steps: usize,
}

/// Builds the remnant design for a trial, drops it onto flat ground with
/// the configured initial joint angles, and holds those targets for the
/// trial duration.
pub fn run_trial(
    spec: &TrialSpec,
    geom: &ModuleGeometry<f64>,
    mut config: SimConfig<f64>,
) -> Result<TrialResult, TrialError> {
    config.contact.friction = spec.friction;
    let design = apply_amputation(&quadruped(), &spec.cuts)?;
    let mut sim = Simulator::from_tree_modified(
        &design.tree,
        geom,
        config,
        Terrain::Flat,
        &design.stubs,
        &[],
    )?;
    for m in spec.class.dead_modules() {
        sim.set_dead(*m, true);
    }

    let mut hold = vec![spec.initial_limb_angle; sim.n_modules()];
    hold[0] = spec.initial_torso_angle;
    let mut state = sim.drop_state(&UnitQuaternion::identity(), hold.clone(), 0.02);
    let com0 = sim.com(&state);

    let steps = (spec.duration / sim.config.control_dt).round() as usize;
    for _ in 0..steps {
        sim.control_step(&mut state, &hold)?;
    }
    let com = sim.com(&state);
    Ok(TrialResult {
        displacement: ((com.x - com0.x).powi(2) + (com.y - com0.y).powi(2)).sqrt(),
        final_height: com.z,
        steps,
    })
}
