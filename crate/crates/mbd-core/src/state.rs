//! Solver-facing state types shared by the kinematics and dynamics drivers,
//! and the conversions between the three orientation representations.

use crate::gcon::{EpsBody, RaBody, RpBody};
use crate::model::MechanismModel;
use crate::so3;
use crate::{Mat3, Vec3, Vec4};
use thiserror::Error;

/// Which orientation coordinates the solver iterates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Formulation {
    /// rotation matrix on SO(3)
    Ra,
    /// Euler parameters
    Rp,
    /// ZXZ Euler angles
    REps,
}

impl Formulation {
    pub const ALL: [Formulation; 3] = [Formulation::Ra, Formulation::Rp, Formulation::REps];

    pub fn label(&self) -> &'static str {
        match self {
            Formulation::Ra => "rA",
            Formulation::Rp => "rp",
            Formulation::REps => "reps",
        }
    }

    pub fn parse(s: &str) -> Option<Formulation> {
        match s {
            "rA" | "ra" => Some(Formulation::Ra),
            "rp" => Some(Formulation::Rp),
            "reps" | "rEps" => Some(Formulation::REps),
            _ => None,
        }
    }

    /// Number of orientation coordinates per body.
    pub fn orient_dim(&self) -> usize {
        match self {
            Formulation::Rp => 4,
            _ => 3,
        }
    }
}

impl std::fmt::Display for Formulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Euler-angle rate map is singular where |sin(theta)| drops below this.
pub const GIMBAL_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone)]
pub enum SolveError {
    #[error("Newton did not converge at t = {t}: |delta| = {delta_norm:.3e} after {iterations} iterations")]
    NonConvergence { t: f64, iterations: usize, delta_norm: f64 },
    #[error("singular iteration matrix at t = {t}")]
    SingularIteration { t: f64 },
    #[error("GimbalLock: body {body} reached |sin(theta)| < {GIMBAL_TOL:e} at t = {t}")]
    GimbalLock { t: f64, body: usize },
    #[error("model is not fully driven: {nc} constraints for {nb} bodies (need {})", 6 * nb)]
    NotFullyDriven { nc: usize, nb: usize },
    #[error("inconsistent initial conditions: |Phi| = {pos:.3e}, velocity residual = {vel:.3e} (tolerance 1e-8)")]
    InconsistentInitialConditions { pos: f64, vel: f64 },
}

/// Formulation-neutral snapshot of one body at one time, used for records,
/// file output, and cross-formulation comparison.
#[derive(Debug, Clone)]
pub struct BodyRecord {
    pub id: usize,
    pub r: Vec3,
    pub a: Mat3,
    pub rdot: Vec3,
    pub omega_bar: Vec3,
    pub rddot: Vec3,
    pub omega_bar_dot: Vec3,
}

/// Euler parameters and rates equivalent to `(a, omega_bar)`.
pub fn rp_from_neutral(a: &Mat3, omega_bar: &Vec3) -> (Vec4, Vec4) {
    let p = so3::p_from_matrix(a);
    let pdot = 0.5 * so3::b_p_matrix(&p).transpose() * omega_bar;
    (p, pdot)
}

/// Body angular velocity equivalent to Euler-parameter rates.
pub fn omega_from_rp(p: &Vec4, pdot: &Vec4) -> Vec3 {
    2.0 * so3::b_p_matrix(p) * pdot
}

/// Body angular acceleration equivalent to Euler-parameter state.
pub fn omega_dot_from_rp(p: &Vec4, pdot: &Vec4, pddot: &Vec4) -> Vec3 {
    2.0 * (so3::b_p_matrix(pdot) * pdot + so3::b_p_matrix(p) * pddot)
}

/// Euler angles and rates equivalent to `(a, omega_bar)`; fails near the
/// representation singularity.
pub fn eps_from_neutral(a: &Mat3, omega_bar: &Vec3, t: f64, body: usize) -> Result<(Vec3, Vec3), SolveError> {
    let eps = so3::eps_from_matrix(a);
    if eps[1].sin().abs() < GIMBAL_TOL {
        return Err(SolveError::GimbalLock { t, body });
    }
    let b = so3::b_eps_matrix(&eps);
    let eps_dot = b
        .lu()
        .solve(omega_bar)
        .ok_or(SolveError::GimbalLock { t, body })?;
    Ok((eps, eps_dot))
}

pub fn omega_from_eps(eps: &Vec3, eps_dot: &Vec3) -> Vec3 {
    so3::b_eps_matrix(eps) * eps_dot
}

pub fn omega_dot_from_eps(eps: &Vec3, eps_dot: &Vec3, eps_ddot: &Vec3) -> Vec3 {
    so3::b_eps_dot(eps, eps_dot) * eps_dot + so3::b_eps_matrix(eps) * eps_ddot
}

/// Initial rotation-matrix view of every body, in slot order.
pub fn initial_ra_bodies(model: &MechanismModel) -> Vec<RaBody> {
    model
        .bodies
        .iter()
        .map(|b| RaBody { r: b.r0, a: b.a0, rdot: b.rdot0, omega_bar: b.omega_bar0 })
        .collect()
}

pub fn initial_rp_bodies(model: &MechanismModel) -> Vec<RpBody> {
    model
        .bodies
        .iter()
        .map(|b| {
            let (p, pdot) = rp_from_neutral(&b.a0, &b.omega_bar0);
            RpBody::new(b.r0, p, b.rdot0, pdot)
        })
        .collect()
}

pub fn initial_eps_bodies(model: &MechanismModel) -> Result<Vec<EpsBody>, SolveError> {
    model
        .bodies
        .iter()
        .map(|b| {
            let (eps, eps_dot) = eps_from_neutral(&b.a0, &b.omega_bar0, 0.0, b.id)?;
            Ok(EpsBody::new(b.r0, eps, b.rdot0, eps_dot))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn neutral_round_trips() {
        let a = so3::exp_so3(&Vec3::new(0.4, -0.2, 1.1));
        let om = Vec3::new(0.3, -1.2, 0.7);
        let (p, pdot) = rp_from_neutral(&a, &om);
        assert_abs_diff_eq!(omega_from_rp(&p, &pdot), om, epsilon = 1e-12);
        let (eps, eps_dot) = eps_from_neutral(&a, &om, 0.0, 1).unwrap();
        assert_abs_diff_eq!(omega_from_eps(&eps, &eps_dot), om, epsilon = 1e-12);
        assert_abs_diff_eq!(so3::a_from_eps(&eps), a, epsilon = 1e-12);
    }

    #[test]
    fn formulation_labels_parse() {
        for f in Formulation::ALL {
            assert_eq!(Formulation::parse(f.label()), Some(f));
        }
        assert_eq!(Formulation::parse("nope"), None);
    }
}
