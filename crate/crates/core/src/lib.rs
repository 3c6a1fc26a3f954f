//! Co-design toolkit for modular legged machines.
//!
//! A machine is a tree of identical two-link modules joined at docks. This
//! crate covers the full design loop: counting and sampling assemblies
//! ([`morphology`]), dock frames and forward kinematics ([`geometry`]), a
//! small articulated rigid-body simulator with ground contact ([`simcore`]),
//! task reward terms and the control-side pipeline ([`rewards`]), initial
//! pose search ([`poseopt`]), a latent design autoencoder ([`genome`]),
//! asynchronous Bayesian optimization over the latent space ([`bayesopt`]),
//! and the limb-damage data pipeline ([`amputation`]).
//!
//! Numeric code is generic over [`Real`], satisfied by `f32` and `f64`.
//! Concrete f64 aliases are exported at the crate root.

pub mod amputation;
pub mod bayesopt;
pub mod genome;
pub mod geometry;
pub mod morphology;
pub mod poseopt;
pub mod rewards;
pub mod scalar;
pub mod simcore;

pub use scalar::Real;

/// Default scalar for binaries, tests, and file formats.
pub type Scalar = f64;
/// 3-vector at the default scalar.
pub type Vec3 = nalgebra::Vector3<Scalar>;
/// Unit quaternion at the default scalar.
pub type Quat = nalgebra::UnitQuaternion<Scalar>;
/// Rigid transform (rotation + translation) at the default scalar.
pub type Iso3 = nalgebra::Isometry3<Scalar>;
