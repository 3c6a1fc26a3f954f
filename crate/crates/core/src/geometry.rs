//! Module shape, dock frames, mating, forward kinematics, and overlap tests.
//!
//! Module frame convention: origin at the joint sphere's center, +Z along the
//! joint axis. Both links leave the sphere at the tilt angle from the axis;
//! at joint angle zero they sit at azimuths +90 and -90 degrees, symmetric
//! about the XZ plane. A joint angle `theta` rotates link A by `+theta/2` and
//! link B by `-theta/2` about the axis, so the module frame always bisects
//! the two links.
//!
//! Dock frames carry Z along the outward mating normal and X along a fixed
//! reference tangent; orientation 0 mates tangent-to-tangent after flipping
//! the child frame half a turn about that tangent.

use nalgebra::{Isometry3, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::morphology::{ConfigTree, DockId, DockKind, LinkSide};
use crate::scalar::{rf, Real};

/// Rigid pose of one body.
pub type BodyPose<T> = Isometry3<T>;

/// Physical constants of one module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleGeometry<T: Real> {
    /// Capsule segment length of each link (m).
    pub link_length: T,
    /// Capsule radius of each link (m).
    pub link_radius: T,
    /// Distance from the sphere center to a link's proximal segment end (m).
    pub link_offset: T,
    /// Joint sphere radius (m).
    pub sphere_radius: T,
    /// Mass of one link (kg).
    pub link_mass: T,
    /// Mass of the joint sphere (kg).
    pub sphere_mass: T,
    /// Angle between the joint axis and each link (rad).
    pub joint_tilt: T,
}

impl<T: Real> Default for ModuleGeometry<T> {
    fn default() -> Self {
        Self {
            link_length: rf(0.24),
            link_radius: rf(0.02),
            link_offset: rf(0.07),
            sphere_radius: rf(0.07),
            link_mass: rf(0.194),
            sphere_mass: rf(0.98),
            joint_tilt: rf(63.5f64.to_radians()),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GeometryError {
    #[error("geometry field {field} must be strictly positive")]
    NonPositive { field: &'static str },
    #[error("joint tilt must lie strictly between 0 and 90 degrees")]
    TiltOutOfRange,
    #[error("forward kinematics expects {expected} joint angles, got {got}")]
    WrongAngleCount { expected: usize, got: usize },
}

impl<T: Real> ModuleGeometry<T> {
    /// Checks the physical-plausibility invariants.
    pub fn validate(&self) -> Result<(), GeometryError> {
        let fields = [
            ("link_length", self.link_length),
            ("link_radius", self.link_radius),
            ("link_offset", self.link_offset),
            ("sphere_radius", self.sphere_radius),
            ("link_mass", self.link_mass),
            ("sphere_mass", self.sphere_mass),
        ];
        for (field, v) in fields {
            if v <= T::zero() {
                return Err(GeometryError::NonPositive { field });
            }
        }
        if self.joint_tilt <= T::zero() || self.joint_tilt >= rf(std::f64::consts::FRAC_PI_2) {
            return Err(GeometryError::TiltOutOfRange);
        }
        Ok(())
    }

    /// Distance from the sphere center to a link tip dock.
    pub fn tip_norm(&self) -> T {
        self.link_offset + self.link_length
    }

    /// Neutral-pose direction of a link identified by side.
    pub fn link_direction(&self, side: LinkSide) -> Vector3<T> {
        let azimuth = match side {
            LinkSide::A => rf::<T>(std::f64::consts::FRAC_PI_2),
            LinkSide::B => -rf::<T>(std::f64::consts::FRAC_PI_2),
        };
        direction_from_angles(self.joint_tilt, azimuth)
    }

    /// Link directions in the module frame at joint angle `theta`.
    pub fn link_directions_at(&self, theta: T) -> (Vector3<T>, Vector3<T>) {
        let half = theta / rf(2.0);
        let rot_a = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), half);
        let rot_b = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), -half);
        (
            rot_a * self.link_direction(LinkSide::A),
            rot_b * self.link_direction(LinkSide::B),
        )
    }
}

/// Unit vector at polar angle `tilt` from +Z, at the given azimuth.
fn direction_from_angles<T: Real>(tilt: T, azimuth: T) -> Vector3<T> {
    let (st, ct) = (tilt.sin(), tilt.cos());
    let (sa, ca) = (azimuth.sin(), azimuth.cos());
    Vector3::new(st * ca, st * sa, ct)
}

/// Mating face on a module: position plus an orthonormal frame whose Z column
/// is the outward normal and X column the orientation-zero tangent.
#[derive(Debug, Clone, PartialEq)]
pub struct DockFrame<T: Real> {
    pub iso: Isometry3<T>,
}

impl<T: Real> DockFrame<T> {
    fn from_basis(position: Vector3<T>, x: Vector3<T>, z: Vector3<T>) -> Self {
        let z = Unit::new_normalize(z);
        let x = Unit::new_normalize(x - z.as_ref() * z.dot(&x));
        let y = z.cross(&x);
        let rot = nalgebra::Rotation3::from_basis_unchecked(&[x.into_inner(), y, z.into_inner()]);
        Self {
            iso: Isometry3::from_parts(
                Translation3::from(position),
                UnitQuaternion::from_rotation_matrix(&rot),
            ),
        }
    }

    pub fn position(&self) -> Vector3<T> {
        self.iso.translation.vector
    }

    pub fn normal(&self) -> Vector3<T> {
        self.iso.rotation * Vector3::z()
    }

    pub fn tangent(&self) -> Vector3<T> {
        self.iso.rotation * Vector3::x()
    }
}

/// All dock frames of one module, indexed by [`DockId`], in the module frame
/// at neutral joint angle. Each frame is fixed to the body carrying its dock
/// ([`DockId::body_side`]); body coordinates coincide with neutral module
/// coordinates.
pub fn dock_frames<T: Real>(geom: &ModuleGeometry<T>) -> Vec<DockFrame<T>> {
    DockId::all().map(|d| dock_frame(geom, d)).collect()
}

/// Frame of one dock; see [`dock_frames`].
pub fn dock_frame<T: Real>(geom: &ModuleGeometry<T>, dock: DockId) -> DockFrame<T> {
    match dock.kind() {
        DockKind::Sphere { azimuth_slot } => {
            let az = rf::<T>(f64::from(azimuth_slot) * std::f64::consts::FRAC_PI_2);
            let radial = Vector3::new(az.cos(), az.sin(), T::zero());
            DockFrame::from_basis(radial * geom.sphere_radius, Vector3::z(), radial)
        }
        DockKind::Side { link, slot } => {
            let u = geom.link_direction(link);
            let along = geom.link_offset
                + geom.link_length * rf(f64::from(slot + 1) / 7.0);
            let t = Unit::new_normalize(Vector3::z().cross(&u));
            let outward = t.cross(&u);
            DockFrame::from_basis(u * along + outward * geom.link_radius, u, outward)
        }
        DockKind::Tip { link } => {
            let u = geom.link_direction(link);
            let t = Vector3::z().cross(&u);
            DockFrame::from_basis(u * geom.tip_norm(), t, u)
        }
    }
}

/// Transform placing a child body relative to the parent body when the given
/// docks mate at the given orientation: parent dock frame, a roll of
/// `orientation * 120` degrees about the shared normal, and a half-turn about
/// the tangent so the normals oppose, then into child body coordinates.
pub fn mating_transform<T: Real>(
    geom: &ModuleGeometry<T>,
    parent_dock: DockId,
    child_dock: DockId,
    orientation: u8,
) -> Isometry3<T> {
    let d_p = dock_frame(geom, parent_dock);
    let d_c = dock_frame(geom, child_dock);
    let roll = UnitQuaternion::from_axis_angle(
        &Vector3::z_axis(),
        rf::<T>(f64::from(orientation) * 2.0 * std::f64::consts::PI / 3.0),
    );
    let flip = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), rf(std::f64::consts::PI));
    d_p.iso * Isometry3::from_parts(Translation3::identity(), roll * flip) * d_c.iso.inverse()
}

/// Strict parallelism predicate on a |dot| of unit vectors.
pub fn is_parallel<T: Real>(abs_dot: T) -> bool {
    abs_dot > T::one() - rf(1e-6)
}

/// True when a docking is forbidden: both docks sit on link sides and the
/// mating leaves the two docked links parallel, which would drive the screws
/// of one module into the other's link.
pub fn interference_forbidden<T: Real>(
    geom: &ModuleGeometry<T>,
    parent_dock: DockId,
    child_dock: DockId,
    orientation: u8,
) -> bool {
    if !(parent_dock.is_side() && child_dock.is_side()) {
        return false;
    }
    let (DockKind::Side { link: pl, .. }, DockKind::Side { link: cl, .. }) =
        (parent_dock.kind(), child_dock.kind())
    else {
        return false;
    };
    let mate = mating_transform(geom, parent_dock, child_dock, orientation);
    let u_parent = geom.link_direction(pl);
    let u_child_in_parent = mate.rotation * geom.link_direction(cl);
    is_parallel(u_parent.dot(&u_child_in_parent).abs())
}

/// World poses of one module's frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ModuleFrames<T: Real> {
    /// Bisector frame at the sphere center; carries the sphere.
    pub module: BodyPose<T>,
    /// Link A body frame (also carries the sphere docks).
    pub link_a: BodyPose<T>,
    /// Link B body frame.
    pub link_b: BodyPose<T>,
}

impl<T: Real> ModuleFrames<T> {
    pub fn link(&self, side: LinkSide) -> &BodyPose<T> {
        match side {
            LinkSide::A => &self.link_a,
            LinkSide::B => &self.link_b,
        }
    }
}

fn rot_z<T: Real>(angle: T) -> Isometry3<T> {
    Isometry3::from_parts(
        Translation3::identity(),
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), angle),
    )
}

/// Places every module of the assembly. `joint_angles` holds one angle per
/// module (angles act modulo a full turn); `base` is the world pose of the
/// root module frame.
pub fn forward_kinematics<T: Real>(
    tree: &ConfigTree,
    geom: &ModuleGeometry<T>,
    joint_angles: &[T],
    base: &BodyPose<T>,
) -> Result<Vec<ModuleFrames<T>>, GeometryError> {
    let n = tree.n_modules();
    if joint_angles.len() != n {
        return Err(GeometryError::WrongAngleCount { expected: n, got: joint_angles.len() });
    }
    let module_frames_of = |module_pose: &BodyPose<T>, theta: T| {
        let half = theta / rf(2.0);
        ModuleFrames {
            module: *module_pose,
            link_a: module_pose * rot_z(half),
            link_b: module_pose * rot_z(-half),
        }
    };
    let mut frames: Vec<ModuleFrames<T>> = Vec::with_capacity(n);
    frames.push(module_frames_of(base, joint_angles[0]));
    for (slot, c) in tree.connections().iter().enumerate() {
        let child = slot + 1;
        let parent = usize::from(c.parent);
        let carrier = frames[parent].link(c.parent_dock.body_side());
        let mate = mating_transform(geom, c.parent_dock, c.child_dock, c.orientation);
        let child_body = carrier * mate;
        let theta_c = joint_angles[child];
        let half = theta_c / rf(2.0);
        // Undo the docked body's own half-angle split to find the child's
        // module (bisector) frame.
        let module_pose = match c.child_dock.body_side() {
            LinkSide::A => child_body * rot_z(-half),
            LinkSide::B => child_body * rot_z(half),
        };
        frames.push(module_frames_of(&module_pose, theta_c));
    }
    Ok(frames)
}

/// Which rigid group of which module a primitive belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BodyTag {
    pub module: usize,
    pub side: LinkSide,
}

/// World-space collision shape.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive<T: Real> {
    Sphere { center: Vector3<T>, radius: T },
    Capsule { a: Vector3<T>, b: Vector3<T>, radius: T },
}

/// Collision shapes of a posed assembly: one sphere and two link capsules per
/// module. The sphere rides with link A's group.
pub fn collect_primitives<T: Real>(
    geom: &ModuleGeometry<T>,
    frames: &[ModuleFrames<T>],
) -> Vec<(BodyTag, Primitive<T>)> {
    let mut out = Vec::with_capacity(frames.len() * 3);
    for (module, f) in frames.iter().enumerate() {
        out.push((
            BodyTag { module, side: LinkSide::A },
            Primitive::Sphere { center: f.module.translation.vector, radius: geom.sphere_radius },
        ));
        for side in [LinkSide::A, LinkSide::B] {
            let u = geom.link_direction(side);
            let frame = f.link(side);
            out.push((
                BodyTag { module, side },
                Primitive::Capsule {
                    a: frame.transform_point(&(u * geom.link_offset).into()).coords,
                    b: frame.transform_point(&(u * geom.tip_norm()).into()).coords,
                    radius: geom.link_radius,
                },
            ));
        }
    }
    out
}

/// Penetration depth between two primitives; positive when overlapping.
pub fn penetration<T: Real>(p: &Primitive<T>, q: &Primitive<T>) -> T {
    match (p, q) {
        (Primitive::Sphere { center: c1, radius: r1 }, Primitive::Sphere { center: c2, radius: r2 }) => {
            *r1 + *r2 - (c1 - c2).norm()
        }
        (Primitive::Sphere { center, radius }, Primitive::Capsule { a, b, radius: rc })
        | (Primitive::Capsule { a, b, radius: rc }, Primitive::Sphere { center, radius }) => {
            *radius + *rc - point_segment_distance(center, a, b)
        }
        (
            Primitive::Capsule { a: a1, b: b1, radius: r1 },
            Primitive::Capsule { a: a2, b: b2, radius: r2 },
        ) => *r1 + *r2 - segment_segment_distance(a1, b1, a2, b2),
    }
}

fn point_segment_distance<T: Real>(p: &Vector3<T>, a: &Vector3<T>, b: &Vector3<T>) -> T {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 <= T::default_epsilon() {
        return (p - a).norm();
    }
    let t = (p - a).dot(&ab) / len2;
    let t = t.clamp(T::zero(), T::one());
    (p - (a + ab * t)).norm()
}

/// Closest distance between segments a1-b1 and a2-b2.
fn segment_segment_distance<T: Real>(
    a1: &Vector3<T>,
    b1: &Vector3<T>,
    a2: &Vector3<T>,
    b2: &Vector3<T>,
) -> T {
    let d1 = b1 - a1;
    let d2 = b2 - a2;
    let r = a1 - a2;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let eps = T::default_epsilon();
    let (mut s, mut t);
    if a <= eps && e <= eps {
        return (a1 - a2).norm();
    }
    if a <= eps {
        s = T::zero();
        t = (f / e).clamp(T::zero(), T::one());
    } else {
        let c = d1.dot(&r);
        if e <= eps {
            t = T::zero();
            s = (-c / a).clamp(T::zero(), T::one());
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            s = if denom > eps {
                ((b * f - c * e) / denom).clamp(T::zero(), T::one())
            } else {
                T::zero()
            };
            t = (b * s + f) / e;
            if t < T::zero() {
                t = T::zero();
                s = (-c / a).clamp(T::zero(), T::one());
            } else if t > T::one() {
                t = T::one();
                s = ((b - c) / a).clamp(T::zero(), T::one());
            }
        }
    }
    let c1 = a1 + d1 * s;
    let c2 = a2 + d2 * t;
    (c1 - c2).norm()
}

/// Overlap tolerance: docked faces touch exactly, so only penetrations beyond
/// this count as collision.
fn collision_tolerance<T: Real>() -> T {
    rf(1e-6)
}

/// True when the assembly overlaps itself at the given frames. Pairs within a
/// module and the two bodies joined by each connection are exempt: they touch
/// by construction.
pub fn self_collides_at<T: Real>(
    tree: &ConfigTree,
    geom: &ModuleGeometry<T>,
    frames: &[ModuleFrames<T>],
) -> bool {
    let prims = collect_primitives(geom, frames);
    let exempt: Vec<(BodyTag, BodyTag)> = tree
        .connections()
        .iter()
        .enumerate()
        .map(|(slot, c)| {
            (
                BodyTag { module: usize::from(c.parent), side: c.parent_dock.body_side() },
                BodyTag { module: slot + 1, side: c.child_dock.body_side() },
            )
        })
        .collect();
    let tol = collision_tolerance::<T>();
    for i in 0..prims.len() {
        for j in i + 1..prims.len() {
            let (ti, pi) = &prims[i];
            let (tj, pj) = &prims[j];
            if ti.module == tj.module {
                continue;
            }
            let pair_exempt = exempt.iter().any(|(a, b)| {
                (a == ti && b == tj) || (a == tj && b == ti)
            });
            if pair_exempt {
                continue;
            }
            if penetration(pi, pj) > tol {
                return true;
            }
        }
    }
    false
}

/// Neutral-pose overlap test with the root at the origin.
pub fn self_collides<T: Real>(tree: &ConfigTree, geom: &ModuleGeometry<T>) -> bool {
    let angles = vec![T::zero(); tree.n_modules()];
    let frames = forward_kinematics(tree, geom, &angles, &Isometry3::identity())
        .expect("angle count matches by construction");
    self_collides_at(tree, geom, &frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morphology::{Connection, DOCKS_PER_MODULE, ORIENTATIONS};
    use approx::assert_relative_eq;
    use nalgebra::Matrix3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type G = ModuleGeometry<f64>;

    #[test]
    fn default_geometry_is_valid_and_tip_norm_adds_up() {
        let g = G::default();
        g.validate().unwrap();
        assert_relative_eq!(g.tip_norm(), 0.31, epsilon = 1e-12);
    }

    #[test]
    fn validate_rejects_degenerate_geometry() {
        let mut g = G::default();
        g.link_length = 0.0;
        assert!(matches!(g.validate(), Err(GeometryError::NonPositive { field: "link_length" })));
        let mut g = G::default();
        g.joint_tilt = std::f64::consts::FRAC_PI_2;
        assert!(matches!(g.validate(), Err(GeometryError::TiltOutOfRange)));
    }

    #[test]
    fn dock_frames_are_orthonormal_and_positioned() {
        let g = G::default();
        for dock in DockId::all() {
            let f = dock_frame(&g, dock);
            let m: Matrix3<f64> = f.iso.rotation.to_rotation_matrix().into_inner();
            let gram = m.transpose() * m;
            assert_relative_eq!(gram, Matrix3::identity(), epsilon = 1e-12);
            assert_relative_eq!(m.determinant(), 1.0, epsilon = 1e-12);
            match dock.kind() {
                DockKind::Sphere { .. } => {
                    assert_relative_eq!(f.position().norm(), g.sphere_radius, epsilon = 1e-12);
                    assert_relative_eq!(f.position().z, 0.0, epsilon = 1e-12);
                }
                DockKind::Tip { .. } => {
                    assert_relative_eq!(f.position().norm(), g.tip_norm(), epsilon = 1e-12);
                }
                DockKind::Side { link, slot } => {
                    let u = g.link_direction(link);
                    let along = f.position().dot(&u);
                    let expected = g.link_offset + g.link_length * f64::from(slot + 1) / 7.0;
                    assert_relative_eq!(along, expected, epsilon = 1e-12);
                    // Normal is perpendicular to the link.
                    assert_relative_eq!(f.normal().dot(&u), 0.0, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn sphere_docks_sit_on_the_equator_quadrants() {
        let g = G::default();
        let expected = [
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(-1.0, 0.0, 0.0),
            Vector3::new(0.0, -1.0, 0.0),
        ];
        for (i, want) in expected.iter().enumerate() {
            let f = dock_frame(&g, DockId::new(i as u8).unwrap());
            assert_relative_eq!(f.normal(), *want, epsilon = 1e-12);
            assert_relative_eq!(f.position(), want * g.sphere_radius, epsilon = 1e-12);
        }
    }

    #[test]
    fn links_are_symmetric_about_the_axis_plane_at_zero() {
        let g = G::default();
        let (ua, ub) = g.link_directions_at(0.0);
        // Mirror through the XZ plane maps one link to the other.
        assert_relative_eq!(ua.x, ub.x, epsilon = 1e-12);
        assert_relative_eq!(ua.y, -ub.y, epsilon = 1e-12);
        assert_relative_eq!(ua.z, ub.z, epsilon = 1e-12);
        let angle = ua.dot(&ub).acos();
        assert_relative_eq!(angle, 2.0 * g.joint_tilt, epsilon = 1e-12);
    }

    #[test]
    fn mating_inverse_swaps_dock_roles_with_same_orientation() {
        let g = G::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let dp = DockId::new(rng.gen_range(0..DOCKS_PER_MODULE as u8)).unwrap();
            let dc = DockId::new(rng.gen_range(0..DOCKS_PER_MODULE as u8)).unwrap();
            let o = rng.gen_range(0..ORIENTATIONS as u8);
            let forward = mating_transform(&g, dp, dc, o);
            let swapped = mating_transform(&g, dc, dp, o);
            let product = forward * swapped;
            assert_relative_eq!(product.translation.vector.norm(), 0.0, epsilon = 1e-9);
            assert!(product.rotation.angle() < 1e-9);
        }
    }

    #[test]
    fn interference_count_matches_dock_model() {
        let g = G::default();
        let mut forbidden = 0;
        for dp in DockId::all() {
            for dc in DockId::all() {
                for o in 0..ORIENTATIONS as u8 {
                    if interference_forbidden(&g, dp, dc, o) {
                        forbidden += 1;
                        assert!(dp.is_side() && dc.is_side());
                    }
                }
            }
        }
        // One parallel orientation per side-side pair: 12 * 12.
        assert_eq!(forbidden, 144);
    }

    #[test]
    fn parallel_threshold_is_exclusive() {
        assert!(!is_parallel(1.0 - 1e-6));
        assert!(is_parallel(1.0 - 0.9e-6));
        assert!(is_parallel(1.0));
    }

    /// Independent composition of the documented transform chain for one
    /// concrete docking, written out against raw matrices.
    #[test]
    fn child_pose_matches_hand_composed_chain() {
        let g = G::default();
        let parent_dock = DockId::new(0).unwrap(); // sphere, +X normal
        let child_dock = DockId::new(10).unwrap(); // link A tip
        let orientation = 1;

        let tree = ConfigTree::new(vec![Connection {
            parent: 0,
            parent_dock,
            child_dock,
            orientation,
        }])
        .unwrap();
        let frames = forward_kinematics(&tree, &g, &[0.0, 0.0], &Isometry3::identity()).unwrap();
        let got = frames[1].module;

        // Hand-built 4x4 chain with explicit numbers.
        let alpha = 63.5f64.to_radians();
        let r = 0.07;
        let tip = 0.31;
        // Parent dock frame: position (r,0,0), X = +Z axis, Z = +X radial.
        let d_p = {
            let mut m = nalgebra::Matrix4::<f64>::identity();
            m.fixed_view_mut::<3, 1>(0, 0).copy_from(&Vector3::new(0.0, 0.0, 1.0));
            m.fixed_view_mut::<3, 1>(0, 1).copy_from(&Vector3::new(0.0, -1.0, 0.0));
            m.fixed_view_mut::<3, 1>(0, 2).copy_from(&Vector3::new(1.0, 0.0, 0.0));
            m.fixed_view_mut::<3, 1>(0, 3).copy_from(&Vector3::new(r, 0.0, 0.0));
            m
        };
        // Orientation roll of 120 degrees about dock Z, then flip about dock X.
        let roll = nalgebra::Matrix4::from(nalgebra::Rotation3::from_axis_angle(
            &Vector3::z_axis(),
            2.0 * std::f64::consts::PI / 3.0,
        ).to_homogeneous());
        let flip = nalgebra::Matrix4::from(nalgebra::Rotation3::from_axis_angle(
            &Vector3::x_axis(),
            std::f64::consts::PI,
        ).to_homogeneous());
        // Child dock frame (link A tip at neutral): u at azimuth +90.
        let u = Vector3::new(0.0, alpha.sin(), alpha.cos());
        let t = Vector3::new(0.0, 0.0, 1.0).cross(&u).normalize();
        let y = u.cross(&t);
        let d_c = {
            let mut m = nalgebra::Matrix4::<f64>::identity();
            m.fixed_view_mut::<3, 1>(0, 0).copy_from(&t);
            m.fixed_view_mut::<3, 1>(0, 1).copy_from(&y);
            m.fixed_view_mut::<3, 1>(0, 2).copy_from(&u);
            m.fixed_view_mut::<3, 1>(0, 3).copy_from(&(u * tip));
            m
        };
        let expected = d_p * roll * flip * d_c.try_inverse().unwrap();
        let got_m = got.to_homogeneous();
        assert_relative_eq!(got_m, expected, epsilon = 1e-9);
    }

    #[test]
    fn fk_is_equivariant_under_base_motion() {
        let g = G::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tree = crate::morphology::sample_tree(&mut rng, 4, &g, 10_000).unwrap();
        let angles: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let base = Isometry3::identity();
        let frames = forward_kinematics(&tree, &g, &angles, &base).unwrap();
        let motion = Isometry3::from_parts(
            Translation3::new(0.3, -1.2, 2.0),
            UnitQuaternion::from_euler_angles(0.4, -0.8, 1.7),
        );
        let moved = forward_kinematics(&tree, &g, &angles, &(motion * base)).unwrap();
        for (f, m) in frames.iter().zip(&moved) {
            let expected = motion * f.module;
            assert_relative_eq!(
                m.module.translation.vector,
                expected.translation.vector,
                epsilon = 1e-9
            );
            assert!(m.module.rotation.angle_to(&expected.rotation) < 1e-9);
        }
    }

    #[test]
    fn fk_rejects_wrong_angle_count() {
        let g = G::default();
        let tree = ConfigTree::single();
        assert!(matches!(
            forward_kinematics(&tree, &g, &[0.0, 0.0], &Isometry3::identity()),
            Err(GeometryError::WrongAngleCount { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn tip_to_tip_chain_does_not_self_collide() {
        let tree = ConfigTree::new(vec![Connection {
            parent: 0,
            parent_dock: DockId::new(10).unwrap(),
            child_dock: DockId::new(17).unwrap(),
            orientation: 0,
        }])
        .unwrap();
        assert!(!self_collides(&tree, &G::default()));
    }

    #[test]
    fn overlapping_spheres_register_as_penetration() {
        let a = Primitive::Sphere { center: Vector3::new(0.0, 0.0, 0.0), radius: 0.07 };
        let b = Primitive::Sphere { center: Vector3::new(0.05, 0.0, 0.0), radius: 0.07 };
        assert!(penetration(&a, &b) > 0.0);
        let far = Primitive::Sphere { center: Vector3::new(0.2, 0.0, 0.0), radius: 0.07 };
        assert!(penetration(&a, &far) < 0.0);
    }

    #[test]
    fn some_docking_combination_self_collides() {
        // Two children on neighboring sphere docks can sweep into each other
        // for some orientation; the checker must catch at least one such case.
        let g = G::default();
        let mut found = false;
        'outer: for o1 in 0..3u8 {
            for o2 in 0..3u8 {
                for cd in [0u8, 1, 2, 3] {
                    let tree = ConfigTree::new(vec![
                        Connection {
                            parent: 0,
                            parent_dock: DockId::new(0).unwrap(),
                            child_dock: DockId::new(cd).unwrap(),
                            orientation: o1,
                        },
                        Connection {
                            parent: 0,
                            parent_dock: DockId::new(1).unwrap(),
                            child_dock: DockId::new(cd).unwrap(),
                            orientation: o2,
                        },
                    ])
                    .unwrap();
                    if self_collides(&tree, &g) {
                        found = true;
                        break 'outer;
                    }
                }
            }
        }
        assert!(found, "expected at least one colliding arrangement");
    }

    #[test]
    fn segment_distance_agrees_with_known_cases() {
        let z = Vector3::zeros();
        // Parallel unit segments one apart.
        assert_relative_eq!(
            segment_segment_distance(
                &z,
                &Vector3::new(1.0, 0.0, 0.0),
                &Vector3::new(0.0, 1.0, 0.0),
                &Vector3::new(1.0, 1.0, 0.0)
            ),
            1.0,
            epsilon = 1e-12
        );
        // Crossing segments at height 0.5.
        assert_relative_eq!(
            segment_segment_distance(
                &Vector3::new(-1.0, 0.0, 0.0),
                &Vector3::new(1.0, 0.0, 0.0),
                &Vector3::new(0.0, -1.0, 0.5),
                &Vector3::new(0.0, 1.0, 0.5)
            ),
            0.5,
            epsilon = 1e-12
        );
        // Degenerate: both segments are points.
        assert_relative_eq!(
            segment_segment_distance(&z, &z, &Vector3::new(3.0, 4.0, 0.0), &Vector3::new(3.0, 4.0, 0.0)),
            5.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn generic_scalar_instantiates_at_f32() {
        let g = ModuleGeometry::<f32>::default();
        g.validate().unwrap();
        let f = dock_frame(&g, DockId::new(5).unwrap());
        assert!(f.normal().norm() > 0.99);
    }
}
