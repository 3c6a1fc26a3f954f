//! Task rewards, action conditioning, observations, and dynamics
//! randomization for controller training and evaluation.
//!
//! Everything here is a pure closed form over quantities the simulator
//! reports; no reward function steps the physics itself. Action processing
//! is stateful only through the low-pass filter bank.

use nalgebra::{Isometry3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::scalar::{rf, Real};

// ---------------------------------------------------------------------------
// Module axis helpers.

/// Rolling axis of a module: the direction separating its two link tips.
/// In the module's own bisector frame this is exactly +Y at every joint
/// angle, so the world axis is just the frame's Y column.
pub fn rolling_axis<T: Real>(module_frame: &Isometry3<T>) -> Vector3<T> {
    module_frame.rotation * Vector3::y()
}

/// Mean link direction in the module frame: the unit vector both links
/// straddle, a function of the joint angle and the link tilt.
pub fn mean_link_axis<T: Real>(theta: T, tilt: T) -> Vector3<T> {
    let half = theta / rf(2.0);
    Vector3::new(-tilt.sin() * half.sin(), T::zero(), tilt.cos()).normalize()
}

/// Cosine of the angle between the two link directions.
pub fn link_angle_cos<T: Real>(theta: T, tilt: T) -> T {
    let (s, c) = (tilt.sin(), tilt.cos());
    c * c - s * s * theta.cos()
}

/// Unit gravity direction in a body frame (points toward the ground).
pub fn gravity_direction<T: Real>(frame: &Isometry3<T>) -> Vector3<T> {
    frame.rotation.inverse() * Vector3::new(T::zero(), T::zero(), -T::one())
}

/// Alignment between the current up direction and a reference up direction,
/// both expressed in the body frame: +1 upright, -1 inverted.
pub fn uprightness<T: Real>(gravity_body: &Vector3<T>, up_reference: &Vector3<T>) -> T {
    -gravity_body.dot(up_reference)
}

/// Fall predicate on the uprightness measure.
pub fn has_fallen<T: Real>(uprightness: T) -> bool {
    uprightness < rf(0.1)
}

// ---------------------------------------------------------------------------
// Reward closed forms.

/// Squared change between consecutive actions.
pub fn action_cost<T: Real>(prev: &[T], cur: &[T]) -> T {
    prev.iter()
        .zip(cur)
        .map(|(&p, &c)| (c - p) * (c - p))
        .fold(T::zero(), |a, b| a + b)
}

/// Rolling task: reward the angular rate about the rolling axis, saturating
/// at one once the rate reaches `rate_scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct RollingReward<T: Real> {
    pub rate_scale: T,
    pub action_weight: T,
}

impl<T: Real> Default for RollingReward<T> {
    fn default() -> Self {
        Self { rate_scale: rf(4.0), action_weight: rf(0.1) }
    }
}

impl<T: Real> RollingReward<T> {
    /// `omega` is the module's world angular velocity; `module_frame` its
    /// bisector frame.
    pub fn reward(
        &self,
        omega: &Vector3<T>,
        module_frame: &Isometry3<T>,
        prev_action: &[T],
        action: &[T],
    ) -> T {
        let rate = omega.dot(&rolling_axis(module_frame));
        (rate / self.rate_scale).min(T::one())
            - self.action_weight * action_cost(prev_action, action)
    }
}

/// Turning task: reward the angular rate about the gravity axis.
#[derive(Debug, Clone, PartialEq)]
pub struct TurningReward<T: Real> {
    pub rate_scale: T,
    pub action_weight: T,
}

impl<T: Real> Default for TurningReward<T> {
    fn default() -> Self {
        Self { rate_scale: rf(3.0), action_weight: rf(0.1) }
    }
}

impl<T: Real> TurningReward<T> {
    /// Both arguments in the body frame.
    pub fn reward(
        &self,
        gravity_body: &Vector3<T>,
        omega_body: &Vector3<T>,
        prev_action: &[T],
        action: &[T],
    ) -> T {
        (gravity_body.dot(omega_body) / self.rate_scale).min(T::one())
            - self.action_weight * action_cost(prev_action, action)
    }
}

/// Walking task inputs, all in command coordinates.
#[derive(Debug, Clone)]
pub struct WalkingInputs<'a, T: Real> {
    /// Center-of-mass speed along the commanded heading.
    pub forward_speed: T,
    /// Yaw rate about the world vertical.
    pub yaw_rate: T,
    pub prev_action: &'a [T],
    pub action: &'a [T],
    /// Ground contacts on motorized joint spheres.
    pub sphere_contacts: usize,
    pub joint_rates: &'a [T],
    pub prev_joint_rates: &'a [T],
    /// Interval between the two rate samples, s.
    pub control_dt: T,
}

/// Walking task: a velocity-tracking bell with posture and smoothness
/// penalties.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkingReward<T: Real> {
    pub target_speed: T,
    pub speed_weight: T,
    pub speed_sigma2: T,
    pub yaw_weight: T,
    pub yaw_sigma2: T,
    pub action_weight: T,
    pub sphere_contact_weight: T,
    pub overspeed_weight: T,
    /// Joint speed above which the overspeed penalty engages, rad/s.
    pub overspeed_limit: T,
    pub accel_weight: T,
}

impl<T: Real> Default for WalkingReward<T> {
    fn default() -> Self {
        Self {
            target_speed: rf(0.6),
            speed_weight: rf(0.6),
            speed_sigma2: rf(0.15),
            yaw_weight: rf(0.2),
            yaw_sigma2: rf(0.15),
            action_weight: rf(0.1),
            sphere_contact_weight: rf(0.02),
            overspeed_weight: rf(0.01),
            overspeed_limit: rf(10.0),
            accel_weight: rf(2.0e-6),
        }
    }
}

impl<T: Real> WalkingReward<T> {
    pub fn reward(&self, inp: &WalkingInputs<'_, T>) -> T {
        let dv = self.target_speed - inp.forward_speed;
        let speed_term = self.speed_weight * (-(dv * dv) / self.speed_sigma2).exp();
        let yaw_term =
            self.yaw_weight * (-(inp.yaw_rate * inp.yaw_rate) / self.yaw_sigma2).exp();
        let action_term = self.action_weight * action_cost(inp.prev_action, inp.action);
        let contact_term =
            self.sphere_contact_weight * rf::<T>(inp.sphere_contacts as f64);
        let overspeed: T = inp
            .joint_rates
            .iter()
            .map(|&r| (r.abs() - self.overspeed_limit).max(T::zero()))
            .fold(T::zero(), |a, b| a + b);
        let overspeed_term = self.overspeed_weight * overspeed.min(rf(1.0e5));
        let accel: T = inp
            .joint_rates
            .iter()
            .zip(inp.prev_joint_rates)
            .map(|(&r, &p)| {
                let a = (r - p) / inp.control_dt;
                a * a
            })
            .fold(T::zero(), |a, b| a + b);
        let accel_term = self.accel_weight * accel;
        speed_term + yaw_term - action_term - contact_term - overspeed_term - accel_term
    }
}

/// Self-righting task: uprightness gated by closeness to a target pose.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfRightReward<T: Real> {
    pub pose_sigma2: T,
    pub action_weight: T,
}

impl<T: Real> Default for SelfRightReward<T> {
    fn default() -> Self {
        Self { pose_sigma2: rf(10.0), action_weight: rf(0.02) }
    }
}

impl<T: Real> SelfRightReward<T> {
    pub fn reward(
        &self,
        uprightness: T,
        target_pose: &[T],
        theta: &[T],
        prev_action: &[T],
        action: &[T],
    ) -> T {
        let err: T = target_pose
            .iter()
            .zip(theta)
            .map(|(&t, &th)| (t - th) * (t - th))
            .fold(T::zero(), |a, b| a + b);
        uprightness * (-err / self.pose_sigma2).exp()
            - self.action_weight * action_cost(prev_action, action)
    }
}

/// Jump-and-turn task inputs.
#[derive(Debug, Clone)]
pub struct JumpTurnInputs<'a, T: Real> {
    pub uprightness: T,
    /// Currently commanded pose (crouch before activation, jump after).
    pub command_pose: &'a [T],
    pub theta: &'a [T],
    /// Center-of-mass height above the ground, m.
    pub com_height: T,
    /// True when no collider touches the ground.
    pub airborne: bool,
    pub yaw_rate: T,
}

/// Jump-and-turn task: crouch tracking, then height, flight, and spin.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpTurnReward<T: Real> {
    pub upright_weight: T,
    pub pose_weight: T,
    pub pose_sigma2: T,
    pub height_weight: T,
    /// Height past which extra elevation earns nothing, m.
    pub height_cap: T,
    pub airborne_bonus: T,
    pub yaw_weight: T,
    pub yaw_cap: T,
}

impl<T: Real> JumpTurnReward<T> {
    pub fn new(height_cap: T) -> Self {
        Self {
            upright_weight: rf(0.2),
            pose_weight: T::one(),
            pose_sigma2: rf(10.0),
            height_weight: T::one(),
            height_cap,
            airborne_bonus: rf(100.0),
            yaw_weight: T::one(),
            yaw_cap: rf(2.0),
        }
    }

    pub fn reward(&self, inp: &JumpTurnInputs<'_, T>) -> T {
        let err: T = inp
            .command_pose
            .iter()
            .zip(inp.theta)
            .map(|(&t, &th)| (t - th) * (t - th))
            .fold(T::zero(), |a, b| a + b);
        let pose = (-err / self.pose_sigma2).exp();
        let airborne = if inp.airborne { T::one() } else { T::zero() };
        self.upright_weight * inp.uprightness
            + self.pose_weight * pose
            + self.height_weight * inp.com_height.min(self.height_cap)
            + self.airborne_bonus * airborne
            + self.yaw_weight * inp.yaw_rate.min(self.yaw_cap)
    }
}

// ---------------------------------------------------------------------------
// Design-class tables.

/// Reference assemblies the task tables are keyed by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DesignClass {
    ThreeModule,
    FourModule,
    FiveModule,
    Quadruped,
}

/// Jump height target per design, m.
pub fn jump_height_target<T: Real>(class: DesignClass) -> T {
    match class {
        DesignClass::ThreeModule => rf(0.5),
        DesignClass::FourModule => rf(0.8),
        DesignClass::FiveModule => rf(0.7),
        DesignClass::Quadruped => rf(0.6),
    }
}

/// Time at which the self-right maneuver switches from bracing to pushing, s.
pub fn selfright_activation<T: Real>(class: DesignClass) -> T {
    match class {
        DesignClass::ThreeModule => rf(1.5),
        DesignClass::FourModule => rf(5.0),
        DesignClass::FiveModule => rf(3.0),
        DesignClass::Quadruped => rf(3.0),
    }
}

/// Time at which the jump command replaces the crouch command, s.
pub fn jump_activation<T: Real>() -> T {
    rf(0.75)
}

/// Command schedule that switches from one pose to another at a set time.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchedCommand<T: Real> {
    pub before: Vec<T>,
    pub after: Vec<T>,
    pub switch_time: T,
}

impl<T: Real> SwitchedCommand<T> {
    pub fn targets_at(&self, time: T) -> &[T] {
        if time < self.switch_time {
            &self.before
        } else {
            &self.after
        }
    }
}

/// Random jump pose: independent uniform joint targets in [-3, 3] rad.
pub fn stochastic_jump_pose<T: Real, R: Rng>(rng: &mut R, n_joints: usize) -> Vec<T> {
    (0..n_joints).map(|_| rf(rng.gen_range(-3.0..3.0))).collect()
}

/// Penalty weight schedule during training: light early, heavier once the
/// policy has found signal.
pub fn penalty_curriculum<T: Real>(step: u64) -> T {
    if step < 200_000 {
        rf(0.2)
    } else {
        rf(0.4)
    }
}

// ---------------------------------------------------------------------------
// Action conditioning.

/// Second-order Butterworth low-pass biquad (bilinear transform), stepped at
/// a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct LowPass<T: Real> {
    b0: T,
    b1: T,
    b2: T,
    a1: T,
    a2: T,
    x1: T,
    x2: T,
    y1: T,
    y2: T,
}

impl<T: Real> LowPass<T> {
    /// Filter at `cutoff_hz` for signals sampled at `sample_hz`, initialized
    /// to the steady state of a constant input `x0` (no startup transient).
    pub fn new(cutoff_hz: T, sample_hz: T, x0: T) -> Self {
        let k = (rf::<T>(std::f64::consts::PI) * cutoff_hz / sample_hz).tan();
        let q = rf::<T>(std::f64::consts::FRAC_1_SQRT_2);
        let norm = T::one() / (T::one() + k / q + k * k);
        Self {
            b0: k * k * norm,
            b1: rf::<T>(2.0) * k * k * norm,
            b2: k * k * norm,
            a1: rf::<T>(2.0) * (k * k - T::one()) * norm,
            a2: (T::one() - k / q + k * k) * norm,
            x1: x0,
            x2: x0,
            y1: x0,
            y2: x0,
        }
    }

    pub fn step(&mut self, x: T) -> T {
        let y = self.b0 * x + self.b1 * self.x1 + self.b2 * self.x2
            - self.a1 * self.y1
            - self.a2 * self.y2;
        self.x2 = self.x1;
        self.x1 = x;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Symmetric clip range per task.
pub fn action_clip<T: Real>(task: Task) -> T {
    match task {
        Task::Walk => rf(1.2),
        Task::JumpTurn => rf(2.5),
        Task::SelfRight => rf(std::f64::consts::PI),
        Task::Roll | Task::Turn => rf(std::f64::consts::PI),
    }
}

/// Controller tasks with distinct conditioning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Roll,
    Turn,
    Walk,
    SelfRight,
    JumpTurn,
}

/// Raw policy outputs become joint targets: low-pass filter, symmetric clip,
/// then offset by the neutral pose.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionPipeline<T: Real> {
    filters: Vec<LowPass<T>>,
    pub limit: T,
    pub neutral: Vec<T>,
}

impl<T: Real> ActionPipeline<T> {
    /// Filters start at the steady state of a zero action.
    pub fn new(neutral: Vec<T>, limit: T, cutoff_hz: T, sample_hz: T) -> Self {
        let filters = neutral
            .iter()
            .map(|_| LowPass::new(cutoff_hz, sample_hz, T::zero()))
            .collect();
        Self { filters, limit, neutral }
    }

    /// One control tick: returns absolute joint targets.
    pub fn apply(&mut self, raw: &[T]) -> Vec<T> {
        assert_eq!(raw.len(), self.filters.len(), "one action per joint");
        raw.iter()
            .zip(&mut self.filters)
            .zip(&self.neutral)
            .map(|((&x, f), &n)| f.step(x).clamp(-self.limit, self.limit) + n)
            .collect()
    }
}

/// One-step actuation latency: half the time the previous action is the one
/// that reaches the plant.
pub fn with_latency<'a, T: Real, R: Rng>(
    rng: &mut R,
    prev: &'a [T],
    cur: &'a [T],
) -> &'a [T] {
    if rng.gen_bool(0.5) {
        cur
    } else {
        prev
    }
}

// ---------------------------------------------------------------------------
// Observations.

/// Per-module sensor block: gravity direction, angular velocity, joint angle
/// cosine, and joint rate, all in the module frame.
pub fn module_observation<T: Real>(
    gravity_body: &Vector3<T>,
    omega_body: &Vector3<T>,
    theta: T,
    theta_dot: T,
) -> [T; 8] {
    [
        gravity_body.x,
        gravity_body.y,
        gravity_body.z,
        omega_body.x,
        omega_body.y,
        omega_body.z,
        theta.cos(),
        theta_dot,
    ]
}

/// One observation frame: module blocks, then the previous action, then the
/// command vector.
pub fn observation_frame<T: Real>(
    modules: &[[T; 8]],
    prev_action: &[T],
    command: &[T],
) -> Vec<T> {
    let mut out = Vec::with_capacity(modules.len() * 8 + prev_action.len() + command.len());
    for m in modules {
        out.extend_from_slice(m);
    }
    out.extend_from_slice(prev_action);
    out.extend_from_slice(command);
    out
}

/// Fixed-depth history of observation frames, flattened oldest first. The
/// first frame pushed backfills the whole history.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationStack<T: Real> {
    depth: usize,
    frames: std::collections::VecDeque<Vec<T>>,
}

impl<T: Real> ObservationStack<T> {
    pub fn new(depth: usize) -> Self {
        assert!(depth >= 1);
        Self { depth, frames: std::collections::VecDeque::new() }
    }

    pub fn push(&mut self, frame: Vec<T>) -> Vec<T> {
        if self.frames.is_empty() {
            for _ in 0..self.depth {
                self.frames.push_back(frame.clone());
            }
        } else {
            self.frames.pop_front();
            self.frames.push_back(frame);
        }
        self.frames.iter().flatten().copied().collect()
    }
}

/// Adds zero-mean gaussian noise to every entry.
pub fn perturb<T: Real, R: Rng>(values: &mut [T], rng: &mut R, sigma: f64) {
    let dist = Normal::new(0.0, sigma).expect("finite sigma");
    for v in values.iter_mut() {
        *v += rf::<T>(dist.sample(rng));
    }
}

/// Observation and action noise scales used during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub observation_sigma: f64,
    pub action_sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { observation_sigma: 0.2, action_sigma: 0.1 }
    }
}

// ---------------------------------------------------------------------------
// Dynamics randomization.

/// Closed interval, sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range<T: Real> {
    pub lo: T,
    pub hi: T,
}

impl<T: Real> Range<T> {
    pub fn fixed(v: T) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> T {
        if self.lo == self.hi {
            return self.lo;
        }
        let t: f64 = rng.gen();
        self.lo + (self.hi - self.lo) * rf(t)
    }
}

/// Per-episode dynamics randomization ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainRandomization<T: Real> {
    /// Joint sphere (motor) mass, kg.
    pub sphere_mass: Range<T>,
    /// Multiplier on every body mass.
    pub mass_scale: Range<T>,
    pub friction: Range<T>,
    pub kp: Range<T>,
    pub kd: Range<T>,
    pub link_length: Range<T>,
    /// Motor calibration offset added to commanded targets, rad.
    pub joint_zero_offset: Range<T>,
    pub joint_damping: Range<T>,
    pub armature: Range<T>,
}

impl<T: Real> DomainRandomization<T> {
    /// Full single-module training ranges.
    pub fn single_module() -> Self {
        Self {
            sphere_mass: Range { lo: rf(0.45), hi: rf(0.6) },
            mass_scale: Range { lo: rf(0.7), hi: rf(1.3) },
            friction: Range { lo: rf(0.6), hi: rf(0.8) },
            kp: Range { lo: rf(4.0), hi: rf(8.0) },
            kd: Range { lo: rf(0.1), hi: rf(0.3) },
            link_length: Range { lo: rf(0.22), hi: rf(0.28) },
            joint_zero_offset: Range { lo: rf(-0.0025), hi: rf(0.0025) },
            joint_damping: Range { lo: rf(0.02), hi: rf(0.06) },
            armature: Range { lo: rf(0.01), hi: rf(0.02) },
        }
    }

    fn assembly_base() -> Self {
        let g = crate::geometry::ModuleGeometry::<T>::default();
        let c = crate::simcore::SimConfig::<T>::default();
        Self {
            sphere_mass: Range::fixed(g.sphere_mass),
            mass_scale: Range::fixed(T::one()),
            friction: Range::fixed(c.contact.friction),
            kp: Range::fixed(c.motor.kp),
            kd: Range::fixed(c.motor.kd),
            link_length: Range::fixed(g.link_length),
            joint_zero_offset: Range::fixed(T::zero()),
            joint_damping: Range::fixed(c.joint_damping),
            armature: Range::fixed(c.armature),
        }
    }

    /// First assembly training phase: mild friction and mass variation.
    pub fn assembly_phase1() -> Self {
        Self {
            friction: Range { lo: rf(0.8), hi: rf(1.2) },
            mass_scale: Range { lo: rf(0.9), hi: rf(1.1) },
            ..Self::assembly_base()
        }
    }

    /// Second assembly training phase: slicker, wider mass variation.
    pub fn assembly_phase2() -> Self {
        Self {
            friction: Range { lo: rf(0.4), hi: rf(0.8) },
            mass_scale: Range { lo: rf(0.8), hi: rf(1.2) },
            ..Self::assembly_base()
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> SampledDynamics<T> {
        SampledDynamics {
            sphere_mass: self.sphere_mass.sample(rng),
            mass_scale: self.mass_scale.sample(rng),
            friction: self.friction.sample(rng),
            kp: self.kp.sample(rng),
            kd: self.kd.sample(rng),
            link_length: self.link_length.sample(rng),
            joint_zero_offset: self.joint_zero_offset.sample(rng),
            joint_damping: self.joint_damping.sample(rng),
            armature: self.armature.sample(rng),
        }
    }
}

/// One draw of randomized dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledDynamics<T: Real> {
    pub sphere_mass: T,
    pub mass_scale: T,
    pub friction: T,
    pub kp: T,
    pub kd: T,
    pub link_length: T,
    pub joint_zero_offset: T,
    pub joint_damping: T,
    pub armature: T,
}

impl<T: Real> SampledDynamics<T> {
    /// Writes the draw into geometry and simulation parameters. The joint
    /// zero offset is not applied here; add it to commanded targets.
    pub fn apply(
        &self,
        geom: &mut crate::geometry::ModuleGeometry<T>,
        config: &mut crate::simcore::SimConfig<T>,
    ) {
        geom.sphere_mass = self.sphere_mass * self.mass_scale;
        geom.link_mass *= self.mass_scale;
        geom.link_length = self.link_length;
        config.contact.friction = self.friction;
        config.motor.kp = self.kp;
        config.motor.kd = self.kd;
        config.joint_damping = self.joint_damping;
        config.armature = self.armature;
    }
}
