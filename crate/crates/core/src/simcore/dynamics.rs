//! Minimal-coordinate articulated dynamics for dock-assembled trees.
//!
//! An assembly becomes a tree of composite rigid bodies: each module is two
//! link groups joined by its own hinge (link A's group also carries the joint
//! sphere), and every docked connection welds two groups from different
//! modules into one composite. Generalized coordinates are the root
//! composite's pose plus one hinge angle per module; hinge constraints are
//! therefore exact, and the only soft element downstream is ground contact.

use nalgebra::{DMatrix, DVector, Isometry3, Matrix3, Translation3, Unit, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::geometry::{self, ModuleGeometry};
use crate::morphology::{ConfigTree, DockId, LinkSide};
use crate::scalar::{rf, Real};

/// Collision shape in composite-body coordinates.
#[derive(Debug, Clone)]
pub enum LocalShape<T: Real> {
    Sphere { center: Vector3<T>, radius: T },
    Capsule { a: Vector3<T>, b: Vector3<T>, radius: T },
}

/// Collision shape plus bookkeeping for contact reporting.
#[derive(Debug, Clone)]
pub struct Collider<T: Real> {
    pub shape: LocalShape<T>,
    /// Module the shape came from; stubs keep their removed limb's parent.
    pub module: usize,
    /// True for the motorized joint sphere shapes.
    pub joint_sphere: bool,
}

/// One composite rigid body.
#[derive(Debug, Clone)]
pub struct Body<T: Real> {
    pub mass: T,
    /// Center of mass in body coordinates.
    pub com: Vector3<T>,
    /// Inertia about the center of mass, body coordinates.
    pub inertia: Matrix3<T>,
    pub colliders: Vec<Collider<T>>,
}

/// Hinge between two composites; one exists per module.
#[derive(Debug, Clone)]
pub struct Joint<T: Real> {
    pub parent_body: usize,
    pub child_body: usize,
    /// Joint frame in parent body coordinates; +Z is the hinge axis.
    pub to_joint: Isometry3<T>,
    /// Child body frame in joint coordinates at zero angle.
    pub from_joint: Isometry3<T>,
    /// +1 or -1: how the module's joint angle maps onto rotation about +Z.
    pub sign: T,
    /// Module whose angle drives this hinge.
    pub module: usize,
}

/// Remnant of a removed limb: a capsule welded where the limb's torso-side
/// link used to run, shortened to the cut fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct Stub<T: Real> {
    /// Module the removed limb was docked to.
    pub parent_module: usize,
    pub parent_dock: DockId,
    /// Dock on the removed limb that made the connection.
    pub child_dock: DockId,
    pub orientation: u8,
    /// Fraction of the limb's attached link kept, in [0, 1].
    pub fraction: T,
}

/// Per-link length scale for leaf links (no docked children allowed on a
/// scaled link). Mass scales with length.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkScale<T: Real> {
    pub module: usize,
    pub side: LinkSide,
    pub scale: T,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BuildError {
    #[error("link scale on module {module} targets a link carrying a docked child")]
    ScaledLinkOccupied { module: usize },
    #[error("link scale factor {scale} outside (0, 1]")]
    BadScale { scale: f64 },
    #[error("stub fraction {fraction} outside [0, 1]")]
    BadFraction { fraction: f64 },
    #[error("stub parent module {module} not in tree")]
    StubParentMissing { module: usize },
    #[error(transparent)]
    Geometry(#[from] geometry::GeometryError),
}

/// Articulated system: bodies in tree order (root first) and one joint per
/// module, topologically sorted.
#[derive(Debug, Clone)]
pub struct System<T: Real> {
    pub bodies: Vec<Body<T>>,
    pub joints: Vec<Joint<T>>,
    /// joints index per module.
    pub joint_of_module: Vec<usize>,
    /// Per module: (body, offset in body coords) of the link-A group.
    pub group_a: Vec<(usize, Isometry3<T>)>,
    /// Reflected rotor inertia added to each hinge coordinate.
    pub armature: T,
    /// Ancestor joint list (indices into `joints`) per body, root-to-leaf.
    path: Vec<Vec<usize>>,
}

impl<T: Real> System<T> {
    /// Degrees of freedom: 6 for the floating base plus one per hinge.
    pub fn dof(&self) -> usize {
        6 + self.joints.len()
    }

    pub fn n_modules(&self) -> usize {
        self.joint_of_module.len()
    }

    /// A single free body with one spherical collider; no hinges.
    pub fn free_sphere(mass: T, radius: T, armature: T) -> Self {
        let inertia = Matrix3::identity() * (rf::<T>(0.4) * mass * radius * radius);
        Self {
            bodies: vec![Body {
                mass,
                com: Vector3::zeros(),
                inertia,
                colliders: vec![Collider {
                    shape: LocalShape::Sphere { center: Vector3::zeros(), radius },
                    module: 0,
                    joint_sphere: true,
                }],
            }],
            joints: Vec::new(),
            joint_of_module: Vec::new(),
            group_a: Vec::new(),
            armature,
            path: vec![Vec::new()],
        }
    }

    /// Assembles the composite-body system for a tree, optionally with
    /// severed-limb stubs and leaf link length scales.
    pub fn from_tree(
        tree: &ConfigTree,
        geom: &ModuleGeometry<T>,
        armature: T,
        stubs: &[Stub<T>],
        link_scales: &[LinkScale<T>],
    ) -> Result<Self, BuildError> {
        geom.validate()?;
        let n = tree.n_modules();
        for s in stubs {
            let f = crate::scalar::to_f64(s.fraction);
            if !(0.0..=1.0).contains(&f) {
                return Err(BuildError::BadFraction { fraction: f });
            }
            if s.parent_module >= n {
                return Err(BuildError::StubParentMissing { module: s.parent_module });
            }
        }
        let scale_of = |module: usize, side: LinkSide| -> T {
            link_scales
                .iter()
                .find(|s| s.module == module && s.side == side)
                .map_or(T::one(), |s| s.scale)
        };
        for s in link_scales {
            let f = crate::scalar::to_f64(s.scale);
            if !(f > 0.0 && f <= 1.0) {
                return Err(BuildError::BadScale { scale: f });
            }
            let occupied = tree.connections().iter().any(|c| {
                usize::from(c.parent) == s.module && c.parent_dock.body_side() == s.side
            });
            if occupied {
                return Err(BuildError::ScaledLinkOccupied { module: s.module });
            }
        }

        // Neutral world pose per group; both groups coincide with the module
        // frame at zero angle.
        let neutral = geometry::forward_kinematics(
            tree,
            geom,
            &vec![T::zero(); n],
            &Isometry3::identity(),
        )
        .expect("angle count matches");

        // Union-find over the 2n groups; welds come from connections.
        let group_index = |module: usize, side: LinkSide| -> usize {
            2 * module + usize::from(side == LinkSide::B)
        };
        let mut uf: Vec<usize> = (0..2 * n).collect();
        fn find(uf: &mut Vec<usize>, mut x: usize) -> usize {
            while uf[x] != x {
                uf[x] = uf[uf[x]];
                x = uf[x];
            }
            x
        }
        for (slot, c) in tree.connections().iter().enumerate() {
            let a = group_index(usize::from(c.parent), c.parent_dock.body_side());
            let b = group_index(slot + 1, c.child_dock.body_side());
            let (ra, rb) = (find(&mut uf, a), find(&mut uf, b));
            uf[rb.max(ra)] = rb.min(ra);
        }
        // Composite ids in first-seen order; root composite holds group (0, A).
        let mut comp_of_group = vec![usize::MAX; 2 * n];
        let mut comp_frames: Vec<Isometry3<T>> = Vec::new();
        for g in 0..2 * n {
            let root = find(&mut uf, g);
            if comp_of_group[root] == usize::MAX {
                comp_of_group[root] = comp_frames.len();
                // Composite frame: neutral pose of its lowest-index group.
                comp_frames.push(neutral[root / 2].module);
            }
            comp_of_group[g] = comp_of_group[root];
        }
        let n_bodies = comp_frames.len();

        // Accumulate mass properties and colliders per composite.
        struct Accum<T: Real> {
            mass: T,
            first_moment: Vector3<T>,
            inertia_origin: Matrix3<T>,
            colliders: Vec<Collider<T>>,
        }
        let mut acc: Vec<Accum<T>> = (0..n_bodies)
            .map(|_| Accum {
                mass: T::zero(),
                first_moment: Vector3::zeros(),
                inertia_origin: Matrix3::zeros(),
                colliders: Vec::new(),
            })
            .collect();
        let add_point_like = |acc: &mut Accum<T>, mass: T, at: Vector3<T>, i_com: Matrix3<T>| {
            acc.mass += mass;
            acc.first_moment += at * mass;
            acc.inertia_origin += i_com + shift_inertia(mass, &at);
        };

        for m in 0..n {
            for side in [LinkSide::A, LinkSide::B] {
                let comp = comp_of_group[group_index(m, side)];
                // Group offset within composite (identity when the group's
                // neutral pose defined the composite frame).
                let offset = comp_frames[comp].inverse() * neutral[m].module;
                let scale = scale_of(m, side);
                let len = geom.link_length * scale;
                let mass = geom.link_mass * scale;
                let u = geom.link_direction(side);
                let a_local = u * geom.link_offset;
                let b_local = u * (geom.link_offset + len);
                let a = offset.transform_point(&a_local.into()).coords;
                let b = offset.transform_point(&b_local.into()).coords;
                let mid = (a + b) * rf::<T>(0.5);
                let dir_world = offset.rotation * u;
                let i_rod = rod_inertia(mass, len, geom.link_radius, &dir_world);
                add_point_like(&mut acc[comp], mass, mid, i_rod);
                acc[comp].colliders.push(Collider {
                    shape: LocalShape::Capsule { a, b, radius: geom.link_radius },
                    module: m,
                    joint_sphere: false,
                });
                if side == LinkSide::A {
                    // Each hemisphere rides with one group; both sit at the
                    // sphere center, so the split only affects bookkeeping.
                    let center = offset.translation.vector;
                    let half = geom.sphere_mass / rf(2.0);
                    let i_half = Matrix3::identity()
                        * (rf::<T>(0.4) * half * geom.sphere_radius * geom.sphere_radius);
                    add_point_like(&mut acc[comp], half, center, i_half);
                    acc[comp].colliders.push(Collider {
                        shape: LocalShape::Sphere { center, radius: geom.sphere_radius },
                        module: m,
                        joint_sphere: true,
                    });
                } else {
                    let center = offset.translation.vector;
                    let half = geom.sphere_mass / rf(2.0);
                    let i_half = Matrix3::identity()
                        * (rf::<T>(0.4) * half * geom.sphere_radius * geom.sphere_radius);
                    add_point_like(&mut acc[comp], half, center, i_half);
                }
            }
        }

        // Severed-limb stubs: partial capsule of the removed limb's attached
        // link, welded through the same mating transform the limb used.
        for s in stubs {
            let parent_group = group_index(s.parent_module, s.parent_dock.body_side());
            let comp = comp_of_group[parent_group];
            let offset = comp_frames[comp].inverse() * neutral[s.parent_module].module;
            let mate =
                geometry::mating_transform(geom, s.parent_dock, s.child_dock, s.orientation);
            let in_comp = offset * mate;
            let u = geom.link_direction(s.child_dock.body_side());
            // Keep the piece between the conjunction and the cut, running
            // from the docked point toward the removed limb's joint sphere
            // and never past the link's own extent.
            let dock = geometry::dock_frame(geom, s.child_dock).position();
            let along = dock.dot(&u);
            let near = along.clamp(geom.link_offset, geom.link_offset + geom.link_length);
            let far = (near - geom.link_length * s.fraction).max(geom.link_offset);
            let len = near - far;
            if len > T::zero() {
                let a = in_comp.transform_point(&(u * near).into()).coords;
                let b = in_comp.transform_point(&(u * far).into()).coords;
                let mass = geom.link_mass * (len / geom.link_length);
                let mid = (a + b) * rf::<T>(0.5);
                let dir = in_comp.rotation * u;
                add_point_like(&mut acc[comp], mass, mid, rod_inertia(mass, len, geom.link_radius, &dir));
                acc[comp].colliders.push(Collider {
                    shape: LocalShape::Capsule { a, b, radius: geom.link_radius },
                    module: s.parent_module,
                    joint_sphere: false,
                });
            }
        }

        let bodies: Vec<Body<T>> = acc
            .into_iter()
            .map(|a| {
                let com = a.first_moment / a.mass;
                let inertia = a.inertia_origin - shift_inertia(a.mass, &com);
                Body { mass: a.mass, com, inertia, colliders: a.colliders }
            })
            .collect();

        // Hinges: module m joins comp(G1) and comp(G2). Orient each along the
        // BFS tree from the root composite.
        let root_comp = comp_of_group[group_index(0, LinkSide::A)];
        debug_assert_eq!(root_comp, 0, "root group is enumerated first");
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_bodies];
        for m in 0..n {
            let ca = comp_of_group[group_index(m, LinkSide::A)];
            let cb = comp_of_group[group_index(m, LinkSide::B)];
            adj[ca].push((cb, m));
            adj[cb].push((ca, m));
        }
        let mut joints: Vec<Joint<T>> = Vec::with_capacity(n);
        let mut joint_of_module = vec![usize::MAX; n];
        let mut visited = vec![false; n_bodies];
        visited[root_comp] = true;
        let mut queue = std::collections::VecDeque::from([root_comp]);
        while let Some(p) = queue.pop_front() {
            for &(c, m) in &adj[p] {
                if visited[c] {
                    continue;
                }
                visited[c] = true;
                // Joint frame: module m's neutral frame (origin at sphere
                // center, +Z the axis). G1 = joint * Rz(theta/2),
                // G2 = joint * Rz(-theta/2); between composites the half
                // angles compose to a single rotation by +/- theta.
                let parent_is_a = comp_of_group[group_index(m, LinkSide::A)] == p;
                let sign = if parent_is_a { -T::one() } else { T::one() };
                let to_joint = comp_frames[p].inverse() * neutral[m].module;
                let from_joint = neutral[m].module.inverse() * comp_frames[c];
                joint_of_module[m] = joints.len();
                joints.push(Joint {
                    parent_body: p,
                    child_body: c,
                    to_joint,
                    from_joint,
                    sign,
                    module: m,
                });
                queue.push_back(c);
            }
        }
        debug_assert!(joint_of_module.iter().all(|&j| j != usize::MAX));

        let group_a = (0..n)
            .map(|m| {
                let comp = comp_of_group[group_index(m, LinkSide::A)];
                (comp, comp_frames[comp].inverse() * neutral[m].module)
            })
            .collect();

        // Ancestor joints per body, via the joint tree.
        let mut path: Vec<Vec<usize>> = vec![Vec::new(); n_bodies];
        for (ji, j) in joints.iter().enumerate() {
            let mut p = path[j.parent_body].clone();
            p.push(ji);
            path[j.child_body] = p;
        }

        Ok(Self { bodies, joints, joint_of_module, group_a, armature, path })
    }

    /// World pose per body given base pose and per-module joint angles.
    pub fn body_poses(&self, base: &Isometry3<T>, theta: &[T]) -> Vec<Isometry3<T>> {
        let mut poses = vec![*base; self.bodies.len()];
        for j in &self.joints {
            let angle = self.joint_angle(theta, j);
            let spin = Isometry3::from_parts(
                Translation3::identity(),
                UnitQuaternion::from_axis_angle(&Vector3::z_axis(), angle),
            );
            poses[j.child_body] = poses[j.parent_body] * j.to_joint * spin * j.from_joint;
        }
        poses
    }

    fn joint_angle(&self, theta: &[T], j: &Joint<T>) -> T {
        j.sign * theta[j.module]
    }

    /// Module (bisector) frame poses derived from body poses.
    pub fn module_frames(&self, poses: &[Isometry3<T>], theta: &[T]) -> Vec<Isometry3<T>> {
        self.group_a
            .iter()
            .enumerate()
            .map(|(m, (body, offset))| {
                let g1 = poses[*body] * offset;
                let half = theta[m] / rf(2.0);
                g1 * Isometry3::from_parts(
                    Translation3::identity(),
                    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), -half),
                )
            })
            .collect()
    }

    /// Dense kinematics snapshot used by the integrator: per-body pose,
    /// world-frame Jacobians at the center of mass, velocities, world
    /// inertia, and world anchor/axis per joint.
    pub fn kinematics(&self, base: &Isometry3<T>, theta: &[T], u: &DVector<T>) -> Kinematics<T> {
        let dof = self.dof();
        let poses = self.body_poses(base, theta);
        let coms: Vec<Vector3<T>> = poses
            .iter()
            .zip(&self.bodies)
            .map(|(p, b)| p.transform_point(&b.com.into()).coords)
            .collect();
        let anchors: Vec<Vector3<T>> = self
            .joints
            .iter()
            .map(|j| (poses[j.parent_body] * j.to_joint).translation.vector)
            .collect();
        let axes: Vec<Vector3<T>> = self
            .joints
            .iter()
            .map(|j| ((poses[j.parent_body] * j.to_joint).rotation * Vector3::z()) * j.sign)
            .collect();
        let base_origin = base.translation.vector;

        let mut jv: Vec<DMatrix<T>> = Vec::with_capacity(self.bodies.len());
        let mut jw: Vec<DMatrix<T>> = Vec::with_capacity(self.bodies.len());
        for (b, com) in coms.iter().enumerate() {
            let mut v = DMatrix::zeros(3, dof);
            let mut w = DMatrix::zeros(3, dof);
            for k in 0..3 {
                v[(k, k)] = T::one();
            }
            for k in 0..3 {
                let mut e = Vector3::zeros();
                e[k] = T::one();
                let lever = e.cross(&(com - base_origin));
                for r in 0..3 {
                    v[(r, 3 + k)] = lever[r];
                    w[(r, 3 + k)] = e[r];
                }
            }
            for &ji in &self.path[b] {
                let lever = axes[ji].cross(&(com - anchors[ji]));
                for r in 0..3 {
                    v[(r, 6 + ji)] = lever[r];
                    w[(r, 6 + ji)] = axes[ji][r];
                }
            }
            jv.push(v);
            jw.push(w);
        }

        let omegas: Vec<Vector3<T>> =
            jw.iter().map(|j| Vector3::from_iterator((j * u).iter().copied())).collect();
        let vels: Vec<Vector3<T>> =
            jv.iter().map(|j| Vector3::from_iterator((j * u).iter().copied())).collect();
        let inertia_world: Vec<Matrix3<T>> = poses
            .iter()
            .zip(&self.bodies)
            .map(|(p, b)| {
                let r = p.rotation.to_rotation_matrix().into_inner();
                r * b.inertia * r.transpose()
            })
            .collect();

        Kinematics { poses, coms, anchors, axes, jv, jw, omegas, vels, inertia_world }
    }

    /// Joint-space mass matrix.
    pub fn mass_matrix(&self, kin: &Kinematics<T>) -> DMatrix<T> {
        let dof = self.dof();
        let mut m = DMatrix::<T>::zeros(dof, dof);
        for (i, body) in self.bodies.iter().enumerate() {
            let jv = &kin.jv[i];
            let jw = &kin.jw[i];
            m += jv.transpose() * jv.clone() * body.mass;
            m += jw.transpose() * (kin.inertia_world[i] * jw.clone());
        }
        for j in 0..self.joints.len() {
            m[(6 + j, 6 + j)] += self.armature;
        }
        m
    }

    /// Velocity-product generalized forces (Coriolis and centrifugal), i.e.
    /// the generalized force required to sustain the current velocities with
    /// zero acceleration and no gravity.
    pub fn bias_forces(&self, theta_dot: &[T], kin: &Kinematics<T>) -> DVector<T> {
        let dof = self.dof();
        let nb = self.bodies.len();
        // Velocity-product accelerations per body.
        let mut alpha = vec![Vector3::<T>::zeros(); nb];
        let mut acc_com = vec![Vector3::<T>::zeros(); nb];
        let w0 = kin.omegas[0];
        let lever = kin.coms[0] - kin.poses[0].translation.vector;
        acc_com[0] = w0.cross(&w0.cross(&lever));
        for (ji, j) in self.joints.iter().enumerate() {
            let p = j.parent_body;
            let c = j.child_body;
            let rate = axes_rate(theta_dot, j);
            let n = kin.axes[ji];
            let wp = kin.omegas[p];
            alpha[c] = alpha[p] + wp.cross(&(n * rate));
            let ra = kin.anchors[ji] - kin.coms[p];
            let a_anchor = acc_com[p] + alpha[p].cross(&ra) + wp.cross(&wp.cross(&ra));
            let rc = kin.coms[c] - kin.anchors[ji];
            let wc = kin.omegas[c];
            acc_com[c] = a_anchor + alpha[c].cross(&rc) + wc.cross(&wc.cross(&rc));
        }
        let mut q = DVector::<T>::zeros(dof);
        for (i, body) in self.bodies.iter().enumerate() {
            let f = acc_com[i] * body.mass;
            let iw = &kin.inertia_world[i];
            let tau = iw * alpha[i] + kin.omegas[i].cross(&(iw * kin.omegas[i]));
            let jv = &kin.jv[i];
            let jw = &kin.jw[i];
            for k in 0..dof {
                let mut s = T::zero();
                for r in 0..3 {
                    s += jv[(r, k)] * f[r] + jw[(r, k)] * tau[r];
                }
                q[k] += s;
            }
        }
        q
    }
}

fn axes_rate<T: Real>(theta_dot: &[T], j: &Joint<T>) -> T {
    // World axis already carries the sign, so the rate along it is the raw
    // module rate times sign squared; keep the plain rate for clarity.
    let _ = j.sign;
    theta_dot[j.module]
}

/// Parallel-axis term: inertia about the origin of a point mass at `r`.
fn shift_inertia<T: Real>(mass: T, r: &Vector3<T>) -> Matrix3<T> {
    let eye = Matrix3::identity() * r.norm_squared();
    (eye - r * r.transpose()) * mass
}

/// Inertia of a capsule-shaped rod of length `len` and radius `rad` about its
/// center, with its axis along the unit vector `dir` (world or body frame of
/// the caller).
fn rod_inertia<T: Real>(mass: T, len: T, rad: T, dir: &Vector3<T>) -> Matrix3<T> {
    let axis = Unit::new_normalize(*dir);
    let i_axial = mass * rad * rad / rf(2.0);
    let i_perp = mass * (len * len / rf(12.0) + rad * rad / rf(4.0));
    // I = i_perp(I - aa^T) + i_axial aa^T.
    let aat = axis.as_ref() * axis.transpose();
    (Matrix3::identity() - aat) * i_perp + aat * i_axial
}

/// Everything the integrator needs about the current configuration.
pub struct Kinematics<T: Real> {
    pub poses: Vec<Isometry3<T>>,
    pub coms: Vec<Vector3<T>>,
    pub anchors: Vec<Vector3<T>>,
    pub axes: Vec<Vector3<T>>,
    pub jv: Vec<DMatrix<T>>,
    pub jw: Vec<DMatrix<T>>,
    pub omegas: Vec<Vector3<T>>,
    pub vels: Vec<Vector3<T>>,
    pub inertia_world: Vec<Matrix3<T>>,
}

impl<T: Real> Kinematics<T> {
    /// Velocity of a world point rigidly attached to `body`.
    pub fn point_velocity(&self, body: usize, point: &Vector3<T>) -> Vector3<T> {
        self.vels[body] + self.omegas[body].cross(&(point - self.coms[body]))
    }

    /// Generalized force of a world-frame force applied at a point on `body`,
    /// accumulated into `q`.
    pub fn apply_point_force(
        &self,
        body: usize,
        point: &Vector3<T>,
        force: &Vector3<T>,
        q: &mut DVector<T>,
    ) {
        let lever = point - self.coms[body];
        let jv = &self.jv[body];
        let jw = &self.jw[body];
        for k in 0..q.len() {
            let col_v = Vector3::new(jv[(0, k)], jv[(1, k)], jv[(2, k)]);
            let col_w = Vector3::new(jw[(0, k)], jw[(1, k)], jw[(2, k)]);
            // Point Jacobian column: jv + jw x lever.
            let jp = col_v + col_w.cross(&lever);
            q[k] += jp.dot(force);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morphology::Connection;
    use approx::assert_relative_eq;

    type S = System<f64>;

    fn two_module_chain() -> (ConfigTree, ModuleGeometry<f64>) {
        let tree = ConfigTree::new(vec![Connection {
            parent: 0,
            parent_dock: DockId::new(10).unwrap(),
            child_dock: DockId::new(17).unwrap(),
            orientation: 1,
        }])
        .unwrap();
        (tree, ModuleGeometry::default())
    }

    #[test]
    fn composite_count_and_dof() {
        let (tree, geom) = two_module_chain();
        let sys = S::from_tree(&tree, &geom, 0.015, &[], &[]).unwrap();
        // Two modules: 4 groups, 1 weld -> 3 composites, 2 hinges.
        assert_eq!(sys.bodies.len(), 3);
        assert_eq!(sys.joints.len(), 2);
        assert_eq!(sys.dof(), 8);
        let total: f64 = sys.bodies.iter().map(|b| b.mass).sum();
        assert_relative_eq!(total, 2.0 * (0.98 + 2.0 * 0.194), epsilon = 1e-12);
    }

    #[test]
    fn body_poses_match_kinematic_module_frames() {
        let (tree, geom) = two_module_chain();
        let sys = S::from_tree(&tree, &geom, 0.015, &[], &[]).unwrap();
        let theta = [0.7, -0.3];
        let base_module = Isometry3::identity();
        // The sim base coordinate is the root composite frame, which equals
        // the root module frame at neutral; at nonzero root angle the module
        // frame and composite frame differ by the half-angle spin.
        let poses = sys.body_poses(&base_module, &theta);
        let frames = sys.module_frames(&poses, &theta);
        let reference =
            geometry::forward_kinematics(&tree, &geom, &theta, &frames[0]).unwrap();
        for (got, want) in frames.iter().zip(reference.iter()) {
            assert_relative_eq!(
                got.translation.vector,
                want.module.translation.vector,
                epsilon = 1e-9
            );
            assert!(got.rotation.angle_to(&want.module.rotation) < 1e-9);
        }
    }

    #[test]
    fn mass_matrix_is_symmetric_positive_definite() {
        let (tree, geom) = two_module_chain();
        let sys = S::from_tree(&tree, &geom, 0.015, &[], &[]).unwrap();
        let u = DVector::zeros(sys.dof());
        let kin = sys.kinematics(&Isometry3::identity(), &[0.3, 1.1], &u);
        let m = sys.mass_matrix(&kin);
        assert_relative_eq!(m.clone(), m.transpose(), epsilon = 1e-10);
        assert!(m.cholesky().is_some());
    }

    #[test]
    fn bias_vanishes_at_rest() {
        let (tree, geom) = two_module_chain();
        let sys = S::from_tree(&tree, &geom, 0.015, &[], &[]).unwrap();
        let u = DVector::zeros(sys.dof());
        let kin = sys.kinematics(&Isometry3::identity(), &[0.3, 1.1], &u);
        let bias = sys.bias_forces(&[0.0, 0.0], &kin);
        assert!(bias.norm() < 1e-12);
    }

    #[test]
    fn point_mass_composite_properties() {
        let i = shift_inertia(2.0, &Vector3::new(0.0, 0.0, 1.0));
        assert_relative_eq!(i[(0, 0)], 2.0, epsilon = 1e-12);
        assert_relative_eq!(i[(1, 1)], 2.0, epsilon = 1e-12);
        assert_relative_eq!(i[(2, 2)], 0.0, epsilon = 1e-12);
        let rod = rod_inertia(1.2, 0.24, 0.02, &Vector3::new(0.0, 0.0, 1.0));
        assert!(rod[(2, 2)] < rod[(0, 0)]);
    }

    #[test]
    fn stub_adds_partial_link_mass_and_collider() {
        let tree = ConfigTree::single();
        let geom = ModuleGeometry::default();
        let stub = Stub {
            parent_module: 0,
            parent_dock: DockId::new(10).unwrap(),
            child_dock: DockId::new(10).unwrap(),
            orientation: 0,
            fraction: 0.5,
        };
        let sys = S::from_tree(&tree, &geom, 0.015, &[stub], &[]).unwrap();
        let total: f64 = sys.bodies.iter().map(|b| b.mass).sum();
        assert_relative_eq!(total, 0.98 + 2.0 * 0.194 + 0.5 * 0.194, epsilon = 1e-12);
        let capsules: usize = sys
            .bodies
            .iter()
            .flat_map(|b| &b.colliders)
            .filter(|c| matches!(c.shape, LocalShape::Capsule { .. }))
            .count();
        assert_eq!(capsules, 3);
        // A full cut keeps the whole link; a zero cut keeps nothing.
        let full = Stub { fraction: 1.0, ..stub_like() };
        let sys_full = S::from_tree(&tree, &geom, 0.015, &[full], &[]).unwrap();
        let total_full: f64 = sys_full.bodies.iter().map(|b| b.mass).sum();
        assert_relative_eq!(total_full, 0.98 + 3.0 * 0.194, epsilon = 1e-12);
        let none = Stub { fraction: 0.0, ..stub_like() };
        let sys_none = S::from_tree(&tree, &geom, 0.015, &[none], &[]).unwrap();
        let total_none: f64 = sys_none.bodies.iter().map(|b| b.mass).sum();
        assert_relative_eq!(total_none, 0.98 + 2.0 * 0.194, epsilon = 1e-12);
    }

    fn stub_like() -> Stub<f64> {
        Stub {
            parent_module: 0,
            parent_dock: DockId::new(10).unwrap(),
            child_dock: DockId::new(10).unwrap(),
            orientation: 0,
            fraction: 0.5,
        }
    }

    #[test]
    fn scaled_link_under_child_is_rejected() {
        let (tree, geom) = two_module_chain();
        let scales = [LinkScale { module: 0, side: LinkSide::A, scale: 0.5 }];
        assert!(matches!(
            S::from_tree(&tree, &geom, 0.015, &[], &scales),
            Err(BuildError::ScaledLinkOccupied { module: 0 })
        ));
        let ok = [LinkScale { module: 0, side: LinkSide::B, scale: 0.5 }];
        let sys = S::from_tree(&tree, &geom, 0.015, &[], &ok).unwrap();
        let total: f64 = sys.bodies.iter().map(|b| b.mass).sum();
        assert_relative_eq!(total, 2.0 * 0.98 + 3.5 * 0.194, epsilon = 1e-12);
    }
}
