//! Constrained rigid multibody kinematics and dynamics in absolute
//! coordinates.
//!
//! A mechanism is a set of rigid bodies tied together by four scalar
//! geometric constraint primitives (DP1, DP2, D, CD) from which the usual
//! lower-pair joints are composed. Position, velocity, and acceleration
//! kinematics plus index-3 DAE dynamics (first-order implicit Euler with a
//! full Newton iteration) are available in three interchangeable orientation
//! formulations:
//!
//! * `rA`   — the rotation matrix itself, updated multiplicatively through
//!   the exponential map so it never leaves SO(3);
//! * `rp`   — Euler parameters with explicit normalization constraints;
//! * `reps` — ZXZ Euler angles.
//!
//! The `verify` module provides the finite-difference and perturbation
//! oracles every analytic derivative in the crate is checked against, and
//! `experiments` holds the order-analysis and formulation-benchmark
//! harnesses built on top of the solvers.

pub mod dynamics;
pub mod experiments;
pub mod gcon;
pub mod kinematics;
pub mod linsolve;
pub mod model;
pub mod par;
pub mod so3;
pub mod state;
pub mod verify;

pub(crate) mod assemble;

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Vec4 = nalgebra::Vector4<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
pub type Mat34 = nalgebra::SMatrix<f64, 3, 4>;
pub type Mat4 = nalgebra::Matrix4<f64>;
pub type RowVec3 = nalgebra::RowVector3<f64>;
pub type RowVec4 = nalgebra::RowVector4<f64>;
pub type DVec = nalgebra::DVector<f64>;
pub type DMat = nalgebra::DMatrix<f64>;

pub use model::{load_model, MechanismModel};
pub use state::{Formulation, SolveError};
