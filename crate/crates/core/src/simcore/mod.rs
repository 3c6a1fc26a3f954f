//! Physics for assembled designs: exact hinge dynamics in minimal
//! coordinates, compliant ground contact, and speed-limited PD motors.
//!
//! The integrator is semi-implicit Euler at a fixed physics step, with
//! control targets refreshed on a coarser control step. Contact is a
//! penalty model: spring-damper normals with a velocity-capped Coulomb
//! friction cone, sampled at sphere centers and capsule endpoints plus
//! midpoints. All randomness lives in the callers; a simulator step is a
//! pure function of state and targets.

mod dynamics;
mod hull;
mod terrain;

pub use dynamics::{Body, BuildError, Collider, Joint, Kinematics, LinkScale, LocalShape, Stub, System};
pub use hull::{convex_hull, hull_area, polygon_area};
pub use terrain::Terrain;

use nalgebra::{DVector, Isometry3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::ModuleGeometry;
use crate::morphology::ConfigTree;
use crate::scalar::{rf, to_f64, Real};

/// Penalty-contact parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactParams<T: Real> {
    /// Normal spring stiffness, N/m.
    pub stiffness: T,
    /// Normal damping, N s/m; the normal force never pulls.
    pub damping: T,
    /// Coulomb friction coefficient.
    pub friction: T,
    /// Viscous cap on tangential force, N s/m.
    pub tangent_damping: T,
}

impl<T: Real> Default for ContactParams<T> {
    fn default() -> Self {
        // Damping is sized so c * dt stays at or below the lightest
        // composite's effective contact mass; higher values chatter under
        // semi-implicit integration.
        Self {
            stiffness: rf(2.0e4),
            damping: rf(50.0),
            friction: rf(0.8),
            tangent_damping: rf(50.0),
        }
    }
}

/// PD servo with a speed-torque envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotorParams<T: Real> {
    pub kp: T,
    pub kd: T,
    /// Flat torque limit up to `rated_speed`, N m.
    pub peak_torque: T,
    /// Speed where the available torque starts to derate, rad/s.
    pub rated_speed: T,
    /// Speed where the available torque reaches zero, rad/s.
    pub max_speed: T,
}

impl<T: Real> Default for MotorParams<T> {
    fn default() -> Self {
        Self {
            kp: rf(12.0),
            kd: rf(0.4),
            peak_torque: rf(12.0),
            rated_speed: rf(15.0),
            max_speed: rf(30.0),
        }
    }
}

/// Full simulation configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig<T: Real> {
    /// Inner integration step, s.
    pub physics_dt: T,
    /// Interval between target refreshes, s; a whole multiple of physics_dt.
    pub control_dt: T,
    pub gravity: T,
    pub contact: ContactParams<T>,
    pub motor: MotorParams<T>,
    /// Passive viscous damping at every hinge, N m s/rad; acts on dead
    /// modules too.
    pub joint_damping: T,
    /// Reflected rotor inertia per hinge, kg m^2.
    pub armature: T,
    /// Kinetic energy threshold ending a settle, J.
    pub settle_ke: T,
    /// Settle time cap, s.
    pub settle_max_time: T,
}

impl<T: Real> Default for SimConfig<T> {
    fn default() -> Self {
        Self {
            physics_dt: rf(0.002),
            control_dt: rf(0.05),
            gravity: rf(9.81),
            contact: ContactParams::default(),
            motor: MotorParams::default(),
            joint_damping: rf(0.04),
            armature: rf(0.015),
            settle_ke: rf(1.0e-4),
            settle_max_time: rf(3.0),
        }
    }
}

/// One active contact sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Contact<T: Real> {
    /// World contact point, on the collider surface.
    pub point: Vector3<T>,
    pub normal_force: T,
    pub penetration: T,
    /// Module the collider belongs to.
    pub module: usize,
    /// True when the collider is a motorized joint sphere.
    pub joint_sphere: bool,
}

/// Instantaneous dynamic state.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState<T: Real> {
    /// Root composite pose.
    pub base: Isometry3<T>,
    /// Velocity of the base frame origin, world coordinates.
    pub v_base: Vector3<T>,
    /// Angular velocity of the base, world coordinates.
    pub w_base: Vector3<T>,
    pub theta: Vec<T>,
    pub theta_dot: Vec<T>,
    pub time: T,
    /// Contacts found at the start of the latest physics step.
    pub contacts: Vec<Contact<T>>,
    /// Motor torques applied during the latest physics step.
    pub applied_torque: Vec<T>,
}

#[derive(Debug, Error, Clone)]
pub enum SimError<T: Real> {
    /// Integration produced a non-finite or runaway state. Carries the last
    /// finite state so callers can score what happened up to the blowup.
    #[error("simulation diverged at t = {time} s")]
    Diverged { time: f64, last: SimState<T> },
    #[error("expected {expected} joint targets, got {got}")]
    TargetCount { expected: usize, got: usize },
}

/// Simulator: an articulated system over a terrain with fixed parameters.
#[derive(Debug, Clone)]
pub struct Simulator<T: Real> {
    pub system: System<T>,
    pub terrain: Terrain<T>,
    pub config: SimConfig<T>,
    /// Modules whose motor is switched off; hinge damping still applies.
    dead: Vec<bool>,
}

impl<T: Real> Simulator<T> {
    pub fn from_tree(
        tree: &ConfigTree,
        geom: &ModuleGeometry<T>,
        config: SimConfig<T>,
        terrain: Terrain<T>,
    ) -> Result<Self, BuildError> {
        let system = System::from_tree(tree, geom, config.armature, &[], &[])?;
        Ok(Self::from_system(system, config, terrain))
    }

    /// Build with severed-limb stubs and leaf link scales.
    pub fn from_tree_modified(
        tree: &ConfigTree,
        geom: &ModuleGeometry<T>,
        config: SimConfig<T>,
        terrain: Terrain<T>,
        stubs: &[Stub<T>],
        link_scales: &[LinkScale<T>],
    ) -> Result<Self, BuildError> {
        let system = System::from_tree(tree, geom, config.armature, stubs, link_scales)?;
        Ok(Self::from_system(system, config, terrain))
    }

    pub fn from_system(system: System<T>, config: SimConfig<T>, terrain: Terrain<T>) -> Self {
        let n = system.n_modules();
        Self { system, terrain, config, dead: vec![false; n] }
    }

    /// Single free sphere; useful for contact-model checks.
    pub fn free_sphere(mass: T, radius: T, config: SimConfig<T>, terrain: Terrain<T>) -> Self {
        let system = System::free_sphere(mass, radius, config.armature);
        Self { system, terrain, config, dead: Vec::new() }
    }

    pub fn n_modules(&self) -> usize {
        self.system.n_modules()
    }

    /// Switch a module's motor off or on.
    pub fn set_dead(&mut self, module: usize, dead: bool) {
        self.dead[module] = dead;
    }

    pub fn is_dead(&self, module: usize) -> bool {
        self.dead[module]
    }

    /// State with the base at `base` and the given joint angles, at rest.
    pub fn initial_state(&self, base: Isometry3<T>, theta: Vec<T>) -> SimState<T> {
        assert_eq!(theta.len(), self.n_modules(), "one angle per module");
        let n = theta.len();
        SimState {
            base,
            v_base: Vector3::zeros(),
            w_base: Vector3::zeros(),
            theta,
            theta_dot: vec![T::zero(); n],
            time: T::zero(),
            contacts: Vec::new(),
            applied_torque: vec![T::zero(); n],
        }
    }

    /// State oriented by the root module frame, translated so the lowest
    /// collider point sits `clearance` above the terrain.
    pub fn drop_state(
        &self,
        orientation: &UnitQuaternion<T>,
        theta: Vec<T>,
        clearance: T,
    ) -> SimState<T> {
        // Root module frame = base * Rz(-theta0 / 2), so unwind the half
        // angle to express the requested orientation.
        let base_rot = if theta.is_empty() {
            *orientation
        } else {
            *orientation
                * UnitQuaternion::from_axis_angle(&Vector3::z_axis(), theta[0] / rf(2.0))
        };
        let mut state = self.initial_state(
            Isometry3::from_parts(Translation3::identity(), base_rot),
            theta,
        );
        let kin = self.kinematics(&state);
        let mut min_gap = T::from_f64(f64::INFINITY).unwrap();
        for (_, center, radius, _, _) in self.contact_samples(&kin) {
            let gap = center.z - radius - self.terrain.height_at(center.x, center.y);
            if gap < min_gap {
                min_gap = gap;
            }
        }
        state.base.translation.vector.z += clearance - min_gap;
        state
    }

    pub fn kinematics(&self, state: &SimState<T>) -> Kinematics<T> {
        let u = self.pack_velocity(state);
        self.system.kinematics(&state.base, &state.theta, &u)
    }

    fn pack_velocity(&self, state: &SimState<T>) -> DVector<T> {
        let mut u = DVector::zeros(self.system.dof());
        for k in 0..3 {
            u[k] = state.v_base[k];
            u[3 + k] = state.w_base[k];
        }
        for (ji, j) in self.system.joints.iter().enumerate() {
            u[6 + ji] = state.theta_dot[j.module];
        }
        u
    }

    /// Candidate contact samples: (body, sample center, radius, module,
    /// joint_sphere). Capsules are sampled at both endpoints and the middle.
    fn contact_samples(
        &self,
        kin: &Kinematics<T>,
    ) -> Vec<(usize, Vector3<T>, T, usize, bool)> {
        let mut out = Vec::new();
        for (bi, body) in self.system.bodies.iter().enumerate() {
            let pose = &kin.poses[bi];
            for c in &body.colliders {
                match &c.shape {
                    LocalShape::Sphere { center, radius } => {
                        let p = pose.transform_point(&(*center).into()).coords;
                        out.push((bi, p, *radius, c.module, c.joint_sphere));
                    }
                    LocalShape::Capsule { a, b, radius } => {
                        let pa = pose.transform_point(&(*a).into()).coords;
                        let pb = pose.transform_point(&(*b).into()).coords;
                        let mid = (pa + pb) * rf::<T>(0.5);
                        out.push((bi, pa, *radius, c.module, c.joint_sphere));
                        out.push((bi, pb, *radius, c.module, c.joint_sphere));
                        out.push((bi, mid, *radius, c.module, c.joint_sphere));
                    }
                }
            }
        }
        out
    }

    /// Active contacts (positive penetration) with their forces.
    fn active_contacts(&self, kin: &Kinematics<T>) -> Vec<(usize, Contact<T>, Vector3<T>)> {
        let cp = &self.config.contact;
        let mut out = Vec::new();
        for (body, center, radius, module, joint_sphere) in self.contact_samples(kin) {
            let ground = self.terrain.height_at(center.x, center.y);
            let pen = ground + radius - center.z;
            if pen <= T::zero() {
                continue;
            }
            let point = Vector3::new(center.x, center.y, center.z - radius);
            let v = kin.point_velocity(body, &point);
            let pen_rate = -v.z;
            let fn_mag = (cp.stiffness * pen + cp.damping * pen_rate).max(T::zero());
            let vt = Vector3::new(v.x, v.y, T::zero());
            let vt_norm = vt.norm();
            let ft = if vt_norm > rf(1.0e-9) {
                let mag = (cp.friction * fn_mag).min(cp.tangent_damping * vt_norm);
                -vt * (mag / vt_norm)
            } else {
                Vector3::zeros()
            };
            let force = Vector3::new(ft.x, ft.y, fn_mag);
            out.push((
                body,
                Contact { point, normal_force: fn_mag, penetration: pen, module, joint_sphere },
                force,
            ));
        }
        out
    }

    /// Torque the motor would apply at the given angle, rate, and target.
    pub fn motor_torque(&self, theta: T, theta_dot: T, target: T) -> T {
        let m = &self.config.motor;
        let raw = m.kp * (target - theta) - m.kd * theta_dot;
        let speed = theta_dot.abs();
        let limit = if speed <= m.rated_speed {
            m.peak_torque
        } else if speed >= m.max_speed {
            T::zero()
        } else {
            m.peak_torque * (m.max_speed - speed) / (m.max_speed - m.rated_speed)
        };
        raw.clamp(-limit, limit)
    }

    /// One physics step under fixed joint targets.
    pub fn step_physics(
        &self,
        state: &mut SimState<T>,
        targets: &[T],
    ) -> Result<(), SimError<T>> {
        if targets.len() != self.n_modules() {
            return Err(SimError::TargetCount {
                expected: self.n_modules(),
                got: targets.len(),
            });
        }
        let prev = state.clone();
        let dt = self.config.physics_dt;
        let dof = self.system.dof();
        let u = self.pack_velocity(state);
        let kin = self.system.kinematics(&state.base, &state.theta, &u);

        let mut q = DVector::<T>::zeros(dof);
        // Gravity at each center of mass.
        let g = Vector3::new(T::zero(), T::zero(), -self.config.gravity);
        for (bi, body) in self.system.bodies.iter().enumerate() {
            kin.apply_point_force(bi, &kin.coms[bi], &(g * body.mass), &mut q);
        }
        // Contacts.
        let contacts = self.active_contacts(&kin);
        for (body, contact, force) in &contacts {
            kin.apply_point_force(*body, &contact.point, force, &mut q);
        }
        // Motors and hinge damping.
        let mut torques = vec![T::zero(); self.n_modules()];
        for (ji, j) in self.system.joints.iter().enumerate() {
            let m = j.module;
            let tau = if self.dead[m] {
                T::zero()
            } else {
                self.motor_torque(state.theta[m], state.theta_dot[m], targets[m])
            };
            torques[m] = tau;
            q[6 + ji] += tau - self.config.joint_damping * state.theta_dot[m];
        }

        let mass = self.system.mass_matrix(&kin);
        let bias = self.system.bias_forces(&state.theta_dot, &kin);
        let rhs = q - bias;
        let chol = match mass.cholesky() {
            Some(c) => c,
            None => {
                return Err(SimError::Diverged { time: to_f64(state.time), last: prev })
            }
        };
        let udot = chol.solve(&rhs);
        let u_new = u + udot * dt;

        // Semi-implicit update: new velocities advance the configuration.
        let v_new = Vector3::new(u_new[0], u_new[1], u_new[2]);
        let w_new = Vector3::new(u_new[3], u_new[4], u_new[5]);
        state.base.translation.vector += v_new * dt;
        state.base.rotation =
            UnitQuaternion::from_scaled_axis(w_new * dt) * state.base.rotation;
        for (ji, j) in self.system.joints.iter().enumerate() {
            state.theta_dot[j.module] = u_new[6 + ji];
            state.theta[j.module] += u_new[6 + ji] * dt;
        }
        state.v_base = v_new;
        state.w_base = w_new;
        state.time += dt;
        state.contacts = contacts.into_iter().map(|(_, c, _)| c).collect();
        state.applied_torque = torques;

        if !self.is_finite(state) {
            return Err(SimError::Diverged { time: to_f64(prev.time), last: prev });
        }
        Ok(())
    }

    fn is_finite(&self, state: &SimState<T>) -> bool {
        let big = rf::<T>(1.0e4);
        let ok = |x: T| x.is_finite() && x.abs() < big;
        state.base.translation.vector.iter().all(|&x| ok(x))
            && state.base.rotation.coords.iter().all(|&x| x.is_finite())
            && state.v_base.iter().all(|&x| ok(x))
            && state.w_base.iter().all(|&x| ok(x))
            && state.theta.iter().all(|&x| x.is_finite())
            && state.theta_dot.iter().all(|&x| ok(x))
    }

    /// One control interval: physics substeps under fixed targets.
    pub fn control_step(
        &self,
        state: &mut SimState<T>,
        targets: &[T],
    ) -> Result<(), SimError<T>> {
        let n = (to_f64(self.config.control_dt) / to_f64(self.config.physics_dt)).round()
            as usize;
        for _ in 0..n.max(1) {
            self.step_physics(state, targets)?;
        }
        Ok(())
    }

    /// Runs PD toward `hold` until kinetic energy falls below the settle
    /// threshold or the time cap elapses. Deterministic.
    pub fn settle(&self, state: &mut SimState<T>, hold: &[T]) -> Result<(), SimError<T>> {
        let t_end = state.time + self.config.settle_max_time;
        while state.time < t_end {
            self.control_step(state, hold)?;
            if self.kinetic_energy(state) < self.config.settle_ke {
                break;
            }
        }
        Ok(())
    }

    /// Kinetic energy including armature.
    pub fn kinetic_energy(&self, state: &SimState<T>) -> T {
        let u = self.pack_velocity(state);
        let kin = self.system.kinematics(&state.base, &state.theta, &u);
        let m = self.system.mass_matrix(&kin);
        (u.transpose() * (m * u.clone()))[(0, 0)] / rf(2.0)
    }

    /// Total mechanical energy: kinetic plus gravitational plus contact
    /// spring storage, plus the PD spring when targets are held. The PD term
    /// models the servo as an ideal spring-damper, so the audit is only
    /// meaningful while the torque envelope is not clamping.
    pub fn energy(&self, state: &SimState<T>, hold: Option<&[T]>) -> T {
        let u = self.pack_velocity(state);
        let kin = self.system.kinematics(&state.base, &state.theta, &u);
        let m = self.system.mass_matrix(&kin);
        let mut e = (u.transpose() * (m * u.clone()))[(0, 0)] / rf(2.0);
        for (bi, body) in self.system.bodies.iter().enumerate() {
            e += body.mass * self.config.gravity * kin.coms[bi].z;
        }
        let half = rf::<T>(0.5);
        for (_, center, radius, _, _) in self.contact_samples(&kin) {
            let pen = self.terrain.height_at(center.x, center.y) + radius - center.z;
            if pen > T::zero() {
                e += half * self.config.contact.stiffness * pen * pen;
            }
        }
        if let Some(targets) = hold {
            for (m_idx, (&th, &tgt)) in state.theta.iter().zip(targets).enumerate() {
                if !self.dead[m_idx] {
                    let d = th - tgt;
                    e += half * self.config.motor.kp * d * d;
                }
            }
        }
        e
    }

    /// Area of the convex hull of current ground contact points, projected
    /// to the horizontal plane. Zero for fewer than three contacts.
    pub fn support_polygon_area(&self, state: &SimState<T>) -> T {
        let kin = self.kinematics(state);
        let pts: Vec<(T, T)> = self
            .active_contacts(&kin)
            .iter()
            .map(|(_, c, _)| (c.point.x, c.point.y))
            .collect();
        hull_area(&pts)
    }

    /// Whole-assembly center of mass.
    pub fn com(&self, state: &SimState<T>) -> Vector3<T> {
        let kin = self.kinematics(state);
        let mut num = Vector3::zeros();
        let mut den = T::zero();
        for (bi, body) in self.system.bodies.iter().enumerate() {
            num += kin.coms[bi] * body.mass;
            den += body.mass;
        }
        num / den
    }

    /// Whole-assembly center-of-mass velocity.
    pub fn com_velocity(&self, state: &SimState<T>) -> Vector3<T> {
        let kin = self.kinematics(state);
        let mut num = Vector3::zeros();
        let mut den = T::zero();
        for (bi, body) in self.system.bodies.iter().enumerate() {
            num += kin.vels[bi] * body.mass;
            den += body.mass;
        }
        num / den
    }

    /// Module bisector frames at the current state.
    pub fn module_frames(&self, state: &SimState<T>) -> Vec<Isometry3<T>> {
        let poses = self.system.body_poses(&state.base, &state.theta);
        self.system.module_frames(&poses, &state.theta)
    }

    /// World angular velocity of each module's bisector frame.
    pub fn module_angular_velocities(&self, state: &SimState<T>) -> Vec<Vector3<T>> {
        let kin = self.kinematics(state);
        let frames = self.module_frames(state);
        (0..self.n_modules())
            .map(|m| {
                let (body, _) = self.system.group_a[m];
                let axis = frames[m].rotation * Vector3::z();
                kin.omegas[body] - axis * (state.theta_dot[m] / rf(2.0))
            })
            .collect()
    }

    /// Unit gravity direction expressed in a body-local frame.
    pub fn gravity_in_frame(frame: &Isometry3<T>) -> Vector3<T> {
        frame.rotation.inverse() * Vector3::new(T::zero(), T::zero(), -T::one())
    }
}
