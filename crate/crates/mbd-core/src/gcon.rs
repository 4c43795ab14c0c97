//! Per-constraint evaluation: the scalar value `Phi`, Jacobian row blocks in
//! each of the three orientation formulations, the velocity right-hand side
//! `nu`, the acceleration right-hand side `gamma`, and the reaction
//! force/torque sensitivity blocks used by the rotation-matrix dynamics
//! iteration matrix.
//!
//! With `d_ij = r_j + A_j sQ_j - r_i - A_i sP_i` the four primitives read
//!
//! ```text
//! DP1: a_i^T A_i^T A_j a_j - f(t)
//! DP2: a_i^T A_i^T d_ij    - f(t)
//! D:   d_ij^T d_ij         - f(t)
//! CD:  c^T d_ij            - f(t)
//! ```
//!
//! Every analytic expression in this module is checked against finite
//! difference or perturbation oracles (see `verify`); where printed source
//! formulas disagreed with the oracles the derived form below wins.

use crate::model::Gcon;
use crate::so3::{self, tilde, EpsDerivatives};
use crate::{Mat3, RowVec3, RowVec4, Vec3, Vec4};

/// Body state in the rotation-matrix view. Also the formulation-neutral
/// snapshot used for records and cross-formulation comparisons.
#[derive(Debug, Clone)]
pub struct RaBody {
    pub r: Vec3,
    pub a: Mat3,
    pub rdot: Vec3,
    pub omega_bar: Vec3,
}

impl RaBody {
    pub fn ground() -> Self {
        RaBody {
            r: Vec3::zeros(),
            a: Mat3::identity(),
            rdot: Vec3::zeros(),
            omega_bar: Vec3::zeros(),
        }
    }
}

/// Body state in the Euler-parameter view. `a` caches the orientation built
/// from the raw (possibly not yet normalized) parameters.
#[derive(Debug, Clone)]
pub struct RpBody {
    pub r: Vec3,
    pub p: Vec4,
    pub rdot: Vec3,
    pub pdot: Vec4,
    pub a: Mat3,
}

impl RpBody {
    pub fn new(r: Vec3, p: Vec4, rdot: Vec3, pdot: Vec4) -> Self {
        let a = so3::a_from_p_raw(&p);
        RpBody { r, p, rdot, pdot, a }
    }

    pub fn ground() -> Self {
        RpBody::new(Vec3::zeros(), Vec4::new(1.0, 0.0, 0.0, 0.0), Vec3::zeros(), Vec4::zeros())
    }
}

/// Body state in the Euler-angle view with the position-level derivative
/// matrices of `A(eps)` and the angular-rate maps cached once per
/// evaluation point, all built from one set of `sin_cos` calls.
/// Velocity-level matrices (`A_dot`, `D`) are only needed for `gamma` and
/// are built there.
#[derive(Debug, Clone)]
pub struct EpsBody {
    pub r: Vec3,
    pub eps: Vec3,
    pub rdot: Vec3,
    pub eps_dot: Vec3,
    pub a: Mat3,
    pub k: [Mat3; 3],
    pub beps: Mat3,
    pub beps_dot: Mat3,
}

impl EpsBody {
    pub fn new(r: Vec3, eps: Vec3, rdot: Vec3, eps_dot: Vec3) -> Self {
        let sc = [eps[0].sin_cos(), eps[1].sin_cos(), eps[2].sin_cos()];
        let (a, k) = so3::a_eps_partials_from_sincos(&sc);
        EpsBody {
            r,
            eps,
            rdot,
            eps_dot,
            a,
            k,
            beps: so3::b_eps_from_sincos(sc[1], sc[2]),
            beps_dot: so3::b_eps_dot_from_sincos(sc[1], sc[2], &eps_dot),
        }
    }

    pub fn ground() -> Self {
        EpsBody::new(Vec3::zeros(), Vec3::zeros(), Vec3::zeros(), Vec3::zeros())
    }

    fn velocity_derivatives(&self) -> EpsDerivatives {
        so3::a_eps_derivatives(&self.eps, &self.eps_dot)
    }
}

fn d_ij(g: &Gcon, r_i: &Vec3, a_i: &Mat3, r_j: &Vec3, a_j: &Mat3) -> Vec3 {
    let (s_p_i, s_q_j) = match g {
        Gcon::Dp2 { s_p_i, s_q_j, .. }
        | Gcon::D { s_p_i, s_q_j, .. }
        | Gcon::Cd { s_p_i, s_q_j, .. } => (*s_p_i, *s_q_j),
        Gcon::Dp1 { .. } => unreachable!("DP1 has no inter-point vector"),
    };
    r_j + a_j * s_q_j - r_i - a_i * s_p_i
}

/// Constraint value at a configuration.
pub fn phi_at(g: &Gcon, r_i: &Vec3, a_i: &Mat3, r_j: &Vec3, a_j: &Mat3, t: f64) -> f64 {
    let f = g.driver().eval(t).0;
    match g {
        Gcon::Dp1 { a_i: ai, a_j: aj, .. } => (a_i * ai).dot(&(a_j * aj)) - f,
        Gcon::Dp2 { a_i: ai, .. } => (a_i * ai).dot(&d_ij(g, r_i, a_i, r_j, a_j)) - f,
        Gcon::D { .. } => {
            let d = d_ij(g, r_i, a_i, r_j, a_j);
            d.dot(&d) - f
        }
        Gcon::Cd { c, .. } => c.dot(&d_ij(g, r_i, a_i, r_j, a_j)) - f,
    }
}

/// Right-hand side of the velocity equation: `f_dot(t)`.
pub fn nu(g: &Gcon, t: f64) -> f64 {
    g.driver().eval(t).1
}

/// Jacobian row of one constraint in the rotation-matrix formulation:
/// 1x3 blocks with respect to `r` and the body rotation variation `dtheta`
/// of each of the two bodies. Ground blocks are computed like any other and
/// simply never assembled.
#[derive(Debug, Clone)]
pub struct RowRa {
    pub r_i: RowVec3,
    pub th_i: RowVec3,
    pub r_j: RowVec3,
    pub th_j: RowVec3,
}

pub fn jac_ra(g: &Gcon, fi: &RaBody, fj: &RaBody) -> RowRa {
    match g {
        Gcon::Dp1 { a_i, a_j, .. } => {
            let gi = fi.a * a_i;
            let gj = fj.a * a_j;
            RowRa {
                r_i: RowVec3::zeros(),
                th_i: -(gj.transpose() * fi.a * tilde(a_i)),
                r_j: RowVec3::zeros(),
                th_j: -(gi.transpose() * fj.a * tilde(a_j)),
            }
        }
        Gcon::Dp2 { a_i, s_p_i, s_q_j, .. } => {
            let gi = fi.a * a_i;
            let d = d_ij(g, &fi.r, &fi.a, &fj.r, &fj.a);
            RowRa {
                r_i: -gi.transpose(),
                th_i: a_i.transpose() * tilde(s_p_i) - d.transpose() * fi.a * tilde(a_i),
                r_j: gi.transpose(),
                th_j: -(gi.transpose() * fj.a * tilde(s_q_j)),
            }
        }
        Gcon::D { s_p_i, s_q_j, .. } => {
            let d = d_ij(g, &fi.r, &fi.a, &fj.r, &fj.a);
            RowRa {
                r_i: -2.0 * d.transpose(),
                th_i: 2.0 * d.transpose() * fi.a * tilde(s_p_i),
                r_j: 2.0 * d.transpose(),
                th_j: -2.0 * d.transpose() * fj.a * tilde(s_q_j),
            }
        }
        Gcon::Cd { c, s_p_i, s_q_j, .. } => RowRa {
            r_i: -c.transpose(),
            th_i: c.transpose() * fi.a * tilde(s_p_i),
            r_j: c.transpose(),
            th_j: -(c.transpose() * fj.a * tilde(s_q_j)),
        },
    }
}

/// Jacobian row in the Euler-parameter formulation: plain partial
/// derivatives, 1x3 in `r` and 1x4 in `p` per body.
#[derive(Debug, Clone)]
pub struct RowRp {
    pub r_i: RowVec3,
    pub p_i: RowVec4,
    pub r_j: RowVec3,
    pub p_j: RowVec4,
}

pub fn jac_rp(g: &Gcon, fi: &RpBody, fj: &RpBody) -> RowRp {
    let b = so3::b_matrix;
    match g {
        Gcon::Dp1 { a_i, a_j, .. } => {
            let gi = fi.a * a_i;
            let gj = fj.a * a_j;
            RowRp {
                r_i: RowVec3::zeros(),
                p_i: gj.transpose() * b(&fi.p, a_i),
                r_j: RowVec3::zeros(),
                p_j: gi.transpose() * b(&fj.p, a_j),
            }
        }
        Gcon::Dp2 { a_i, s_p_i, s_q_j, .. } => {
            let gi = fi.a * a_i;
            let d = d_ij(g, &fi.r, &fi.a, &fj.r, &fj.a);
            RowRp {
                r_i: -gi.transpose(),
                p_i: d.transpose() * b(&fi.p, a_i) - gi.transpose() * b(&fi.p, s_p_i),
                r_j: gi.transpose(),
                p_j: gi.transpose() * b(&fj.p, s_q_j),
            }
        }
        Gcon::D { s_p_i, s_q_j, .. } => {
            let d = d_ij(g, &fi.r, &fi.a, &fj.r, &fj.a);
            RowRp {
                r_i: -2.0 * d.transpose(),
                p_i: -2.0 * d.transpose() * b(&fi.p, s_p_i),
                r_j: 2.0 * d.transpose(),
                p_j: 2.0 * d.transpose() * b(&fj.p, s_q_j),
            }
        }
        Gcon::Cd { c, s_p_i, s_q_j, .. } => RowRp {
            r_i: -c.transpose(),
            p_i: -(c.transpose() * b(&fi.p, s_p_i)),
            r_j: c.transpose(),
            p_j: c.transpose() * b(&fj.p, s_q_j),
        },
    }
}

/// Jacobian row in the Euler-angle formulation: 1x3 in `r` and 1x3 in
/// `eps` per body.
#[derive(Debug, Clone)]
pub struct RowEps {
    pub r_i: RowVec3,
    pub e_i: RowVec3,
    pub r_j: RowVec3,
    pub e_j: RowVec3,
}

/// `d(A(eps) s)/d(eps)` as a row: the three angle partials applied to `s`
/// and dotted with `w`.
fn eps_grad_row(w: &Vec3, k: &[Mat3; 3], s: &Vec3) -> RowVec3 {
    RowVec3::new(w.dot(&(k[0] * s)), w.dot(&(k[1] * s)), w.dot(&(k[2] * s)))
}

pub fn jac_eps(g: &Gcon, fi: &EpsBody, fj: &EpsBody) -> RowEps {
    match g {
        Gcon::Dp1 { a_i, a_j, .. } => {
            let gi = fi.a * a_i;
            let gj = fj.a * a_j;
            RowEps {
                r_i: RowVec3::zeros(),
                e_i: eps_grad_row(&gj, &fi.k, a_i),
                r_j: RowVec3::zeros(),
                e_j: eps_grad_row(&gi, &fj.k, a_j),
            }
        }
        Gcon::Dp2 { a_i, s_p_i, s_q_j, .. } => {
            let gi = fi.a * a_i;
            let d = d_ij(g, &fi.r, &fi.a, &fj.r, &fj.a);
            RowEps {
                r_i: -gi.transpose(),
                e_i: eps_grad_row(&d, &fi.k, a_i) - eps_grad_row(&gi, &fi.k, s_p_i),
                r_j: gi.transpose(),
                e_j: eps_grad_row(&gi, &fj.k, s_q_j),
            }
        }
        Gcon::D { s_p_i, s_q_j, .. } => {
            let d = d_ij(g, &fi.r, &fi.a, &fj.r, &fj.a);
            RowEps {
                r_i: -2.0 * d.transpose(),
                e_i: -2.0 * eps_grad_row(&d, &fi.k, s_p_i),
                r_j: 2.0 * d.transpose(),
                e_j: 2.0 * eps_grad_row(&d, &fj.k, s_q_j),
            }
        }
        Gcon::Cd { c, s_p_i, s_q_j, .. } => RowEps {
            r_i: -c.transpose(),
            e_i: -eps_grad_row(c, &fi.k, s_p_i),
            r_j: c.transpose(),
            e_j: eps_grad_row(c, &fj.k, s_q_j),
        },
    }
}

/// `gamma` in the rotation-matrix formulation: everything of `d2Phi/dt2`
/// that does not multiply an acceleration, negated, plus `f_ddot`, so that
/// `G [r_ddot; omega_bar_dot] = gamma` along any motion with `Phi = 0`.
pub fn gamma_ra(g: &Gcon, fi: &RaBody, fj: &RaBody, t: f64) -> f64 {
    let fdd = g.driver().eval(t).2;
    let wt_i = tilde(&fi.omega_bar);
    let wt_j = tilde(&fj.omega_bar);
    match g {
        Gcon::Dp1 { a_i, a_j, .. } => {
            let gi = fi.a * a_i;
            let gj = fj.a * a_j;
            let gi_dot = fi.a * (wt_i * a_i);
            let gj_dot = fj.a * (wt_j * a_j);
            fdd - gj.dot(&(fi.a * (wt_i * (wt_i * a_i))))
                - gi.dot(&(fj.a * (wt_j * (wt_j * a_j))))
                - 2.0 * gi_dot.dot(&gj_dot)
        }
        Gcon::Dp2 { a_i, s_p_i, s_q_j, .. } => {
            let gi = fi.a * a_i;
            let gi_dot = fi.a * (wt_i * a_i);
            let d = d_ij(g, &fi.r, &fi.a, &fj.r, &fj.a);
            let d_dot = fj.rdot + fj.a * (wt_j * s_q_j) - fi.rdot - fi.a * (wt_i * s_p_i);
            fdd - d.dot(&(fi.a * (wt_i * (wt_i * a_i))))
                - 2.0 * gi_dot.dot(&d_dot)
                - gi.dot(&(fj.a * (wt_j * (wt_j * s_q_j))))
                + gi.dot(&(fi.a * (wt_i * (wt_i * s_p_i))))
        }
        Gcon::D { s_p_i, s_q_j, .. } => {
            let d = d_ij(g, &fi.r, &fi.a, &fj.r, &fj.a);
            let d_dot = fj.rdot + fj.a * (wt_j * s_q_j) - fi.rdot - fi.a * (wt_i * s_p_i);
            fdd - 2.0 * d_dot.dot(&d_dot)
                + 2.0 * d.dot(&(fi.a * (wt_i * (wt_i * s_p_i))))
                - 2.0 * d.dot(&(fj.a * (wt_j * (wt_j * s_q_j))))
        }
        Gcon::Cd { c, s_p_i, s_q_j, .. } => {
            fdd + c.dot(&(fi.a * (wt_i * (wt_i * s_p_i))))
                - c.dot(&(fj.a * (wt_j * (wt_j * s_q_j))))
        }
    }
}

/// `gamma` in the Euler-parameter formulation, via the bilinear identity
/// `(d/dt)[B(p, s) pdot] = B(pdot, s) pdot + B(p, s) pddot`.
pub fn gamma_rp(g: &Gcon, fi: &RpBody, fj: &RpBody, t: f64) -> f64 {
    let fdd = g.driver().eval(t).2;
    let b = so3::b_matrix;
    match g {
        Gcon::Dp1 { a_i, a_j, .. } => {
            let gi = fi.a * a_i;
            let gj = fj.a * a_j;
            let gi_dot = b(&fi.p, a_i) * fi.pdot;
            let gj_dot = b(&fj.p, a_j) * fj.pdot;
            fdd - gj.dot(&(b(&fi.pdot, a_i) * fi.pdot))
                - gi.dot(&(b(&fj.pdot, a_j) * fj.pdot))
                - 2.0 * gi_dot.dot(&gj_dot)
        }
        Gcon::Dp2 { a_i, s_p_i, s_q_j, .. } => {
            let gi = fi.a * a_i;
            let gi_dot = b(&fi.p, a_i) * fi.pdot;
            let d = d_ij(g, &fi.r, &fi.a, &fj.r, &fj.a);
            let d_dot =
                fj.rdot + b(&fj.p, s_q_j) * fj.pdot - fi.rdot - b(&fi.p, s_p_i) * fi.pdot;
            fdd - d.dot(&(b(&fi.pdot, a_i) * fi.pdot))
                - 2.0 * gi_dot.dot(&d_dot)
                - gi.dot(&(b(&fj.pdot, s_q_j) * fj.pdot))
                + gi.dot(&(b(&fi.pdot, s_p_i) * fi.pdot))
        }
        Gcon::D { s_p_i, s_q_j, .. } => {
            let d = d_ij(g, &fi.r, &fi.a, &fj.r, &fj.a);
            let d_dot =
                fj.rdot + b(&fj.p, s_q_j) * fj.pdot - fi.rdot - b(&fi.p, s_p_i) * fi.pdot;
            fdd - 2.0 * d_dot.dot(&d_dot)
                + 2.0 * d.dot(&(b(&fi.pdot, s_p_i) * fi.pdot))
                - 2.0 * d.dot(&(b(&fj.pdot, s_q_j) * fj.pdot))
        }
        Gcon::Cd { c, s_p_i, s_q_j, .. } => {
            fdd + c.dot(&(b(&fi.pdot, s_p_i) * fi.pdot))
                - c.dot(&(b(&fj.pdot, s_q_j) * fj.pdot))
        }
    }
}

/// `gamma` in the Euler-angle formulation; `D` is the velocity-only part of
/// `A_ddot`.
pub fn gamma_eps(g: &Gcon, fi: &EpsBody, fj: &EpsBody, t: f64) -> f64 {
    let fdd = g.driver().eval(t).2;
    let der_i = fi.velocity_derivatives();
    let der_j = fj.velocity_derivatives();
    let (di, dj) = (&der_i.d, &der_j.d);
    match g {
        Gcon::Dp1 { a_i, a_j, .. } => {
            let gi = fi.a * a_i;
            let gj = fj.a * a_j;
            fdd - gj.dot(&(di * a_i))
                - 2.0 * (der_i.a_dot * a_i).dot(&(der_j.a_dot * a_j))
                - gi.dot(&(dj * a_j))
        }
        Gcon::Dp2 { a_i, s_p_i, s_q_j, .. } => {
            let gi = fi.a * a_i;
            let d = d_ij(g, &fi.r, &fi.a, &fj.r, &fj.a);
            let d_dot = fj.rdot + der_j.a_dot * s_q_j - fi.rdot - der_i.a_dot * s_p_i;
            fdd - d.dot(&(di * a_i))
                - 2.0 * (der_i.a_dot * a_i).dot(&d_dot)
                - gi.dot(&(dj * s_q_j - di * s_p_i))
        }
        Gcon::D { s_p_i, s_q_j, .. } => {
            let d = d_ij(g, &fi.r, &fi.a, &fj.r, &fj.a);
            let d_dot = fj.rdot + der_j.a_dot * s_q_j - fi.rdot - der_i.a_dot * s_p_i;
            fdd - 2.0 * d_dot.dot(&d_dot) - 2.0 * d.dot(&(dj * s_q_j - di * s_p_i))
        }
        Gcon::Cd { c, s_p_i, s_q_j, .. } => fdd - c.dot(&(dj * s_q_j - di * s_p_i)),
    }
}

/// Reaction force and torque of one constraint on each body, for a given
/// multiplier: `f^c = -[Phi_r]^T lambda`, `n^c = -[Pi_bar(Phi)]^T lambda`.
pub fn reaction_forces_ra(
    g: &Gcon,
    fi: &RaBody,
    fj: &RaBody,
    lambda: f64,
) -> (Vec3, Vec3, Vec3, Vec3) {
    let row = jac_ra(g, fi, fj);
    (
        -lambda * row.r_i.transpose(),
        -lambda * row.th_i.transpose(),
        -lambda * row.r_j.transpose(),
        -lambda * row.th_j.transpose(),
    )
}

/// 3x3 derivative blocks of one reaction quantity with respect to each
/// body's position and rotation variation. `all_zero` marks quantities a
/// constraint kind never produces (DP1 and CD transmit no force), so
/// assembly can skip them.
#[derive(Debug, Clone, Default)]
pub struct ReactionBlocks {
    pub d_r_i: Mat3,
    pub d_th_i: Mat3,
    pub d_r_j: Mat3,
    pub d_th_j: Mat3,
    pub all_zero: bool,
}

impl ReactionBlocks {
    fn zeros() -> Self {
        ReactionBlocks {
            d_r_i: Mat3::zeros(),
            d_th_i: Mat3::zeros(),
            d_r_j: Mat3::zeros(),
            d_th_j: Mat3::zeros(),
            all_zero: true,
        }
    }
}

/// First-order variation of the four reaction quantities `(f_i, n_i, f_j,
/// n_j)` of one constraint. All blocks are linear in `lambda` (the D
/// constraint carries its factor 2 internally).
#[derive(Debug, Clone)]
pub struct ReactionSensitivity {
    pub f_i: ReactionBlocks,
    pub n_i: ReactionBlocks,
    pub f_j: ReactionBlocks,
    pub n_j: ReactionBlocks,
}

pub fn reaction_sensitivities_ra(
    g: &Gcon,
    fi: &RaBody,
    fj: &RaBody,
    lambda: f64,
) -> ReactionSensitivity {
    let l = lambda;
    match g {
        Gcon::Dp1 { a_i, a_j, .. } => {
            let ti = tilde(a_i);
            let tj = tilde(a_j);
            let rel = fi.a.transpose() * fj.a; // A_i^T A_j, shared by all blocks
            ReactionSensitivity {
                f_i: ReactionBlocks::zeros(),
                n_i: ReactionBlocks {
                    d_th_i: -l * ti * tilde(&(rel * a_j)),
                    d_th_j: l * ti * rel * tj,
                    ..Default::default()
                },
                f_j: ReactionBlocks::zeros(),
                n_j: ReactionBlocks {
                    d_th_i: l * tj * rel.transpose() * ti,
                    d_th_j: -l * tj * tilde(&(rel.transpose() * a_i)),
                    ..Default::default()
                },
            }
        }
        Gcon::Dp2 { a_i, s_q_j, .. } => {
            let ti = tilde(a_i);
            let tq = tilde(s_q_j);
            // u = r_j + A_j sQ - r_i is the theta_i-independent part of d_ij
            let u = fj.r + fj.a * s_q_j - fi.r;
            let ait = fi.a.transpose();
            ReactionSensitivity {
                f_i: ReactionBlocks {
                    d_th_i: -l * fi.a * ti,
                    ..Default::default()
                },
                n_i: ReactionBlocks {
                    d_r_i: l * ti * ait,
                    d_th_i: -l * ti * tilde(&(ait * u)),
                    d_r_j: -l * ti * ait,
                    d_th_j: l * ti * ait * fj.a * tq,
                    ..Default::default()
                },
                f_j: ReactionBlocks {
                    d_th_i: l * fi.a * ti,
                    ..Default::default()
                },
                n_j: ReactionBlocks {
                    d_th_i: l * tq * fj.a.transpose() * fi.a * ti,
                    d_th_j: -l * tq * tilde(&(fj.a.transpose() * (fi.a * a_i))),
                    ..Default::default()
                },
            }
        }
        Gcon::D { s_p_i, s_q_j, .. } => {
            let l2 = 2.0 * l;
            let tp = tilde(s_p_i);
            let tq = tilde(s_q_j);
            let ait = fi.a.transpose();
            let ajt = fj.a.transpose();
            let u_i = fj.r + fj.a * s_q_j - fi.r; // theta_i-independent part
            let u_j = fj.r - fi.r - fi.a * s_p_i; // theta_j-independent part
            let f_i = ReactionBlocks {
                d_r_i: -l2 * Mat3::identity(),
                d_th_i: l2 * fi.a * tp,
                d_r_j: l2 * Mat3::identity(),
                d_th_j: -l2 * fj.a * tq,
                ..Default::default()
            };
            let f_j = ReactionBlocks {
                d_r_i: l2 * Mat3::identity(),
                d_th_i: -l2 * fi.a * tp,
                d_r_j: -l2 * Mat3::identity(),
                d_th_j: l2 * fj.a * tq,
                ..Default::default()
            };
            ReactionSensitivity {
                f_i,
                n_i: ReactionBlocks {
                    d_r_i: -l2 * tp * ait,
                    d_th_i: l2 * tp * tilde(&(ait * u_i)),
                    d_r_j: l2 * tp * ait,
                    d_th_j: -l2 * tp * ait * fj.a * tq,
                    ..Default::default()
                },
                f_j,
                n_j: ReactionBlocks {
                    d_r_i: l2 * tq * ajt,
                    d_th_i: -l2 * tq * ajt * fi.a * tp,
                    d_r_j: -l2 * tq * ajt,
                    d_th_j: -l2 * tq * tilde(&(ajt * u_j)),
                    ..Default::default()
                },
            }
        }
        Gcon::Cd { c, s_p_i, s_q_j, .. } => ReactionSensitivity {
            f_i: ReactionBlocks::zeros(),
            n_i: ReactionBlocks {
                d_th_i: l * tilde(s_p_i) * tilde(&(fi.a.transpose() * c)),
                ..Default::default()
            },
            f_j: ReactionBlocks::zeros(),
            n_j: ReactionBlocks {
                d_th_j: -l * tilde(s_q_j) * tilde(&(fj.a.transpose() * c)),
                ..Default::default()
            },
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DriverFn;
    use approx::assert_abs_diff_eq;

    fn dp1(a_i: Vec3, a_j: Vec3, f: f64) -> Gcon {
        Gcon::Dp1 { i: 1, j: 2, a_i, a_j, driver: DriverFn::Constant { c: f } }
    }

    #[test]
    fn phi_trivial_cases() {
        let ground = RaBody::ground();
        // perpendicular unit vectors at identity attitude
        let g = dp1(Vec3::x(), Vec3::y(), 0.0);
        assert_eq!(phi_at(&g, &ground.r, &ground.a, &ground.r, &ground.a, 0.0), 0.0);

        // squared distance between two points 2 apart
        let g = Gcon::D {
            i: 1,
            j: 2,
            s_p_i: Vec3::zeros(),
            s_q_j: Vec3::zeros(),
            driver: DriverFn::Constant { c: 4.0 },
        };
        let r_j = Vec3::new(2.0, 0.0, 0.0);
        assert_eq!(phi_at(&g, &Vec3::zeros(), &Mat3::identity(), &r_j, &Mat3::identity(), 0.0), 0.0);

        // coordinate difference along z: points at z = 3 and z = 1, f = -2
        let g = Gcon::Cd {
            i: 1,
            j: 2,
            c: Vec3::z(),
            s_p_i: Vec3::zeros(),
            s_q_j: Vec3::zeros(),
            driver: DriverFn::Constant { c: -2.0 },
        };
        let r_i = Vec3::new(0.0, 0.0, 3.0);
        let r_j = Vec3::new(0.0, 0.0, 1.0);
        assert_eq!(phi_at(&g, &r_i, &Mat3::identity(), &r_j, &Mat3::identity(), 0.0), 0.0);
    }

    #[test]
    fn dp1_r_blocks_vanish() {
        let fi = RaBody::ground();
        let fj = RaBody::ground();
        let row = jac_ra(&dp1(Vec3::x(), Vec3::y(), 0.0), &fi, &fj);
        assert_eq!(row.r_i, RowVec3::zeros());
        assert_eq!(row.r_j, RowVec3::zeros());
    }

    #[test]
    fn cd_theta_block_direct_substitution() {
        // A_j = I, sQ_j = z, c = x -> theta_j block = -c^T tilde(sQ_j) = [0, 1, 0]:
        // rotating sQ about +y moves the attachment point along +x, so Phi
        // grows with theta_jy (confirmed by the perturbation oracle).
        let g = Gcon::Cd {
            i: 1,
            j: 2,
            c: Vec3::x(),
            s_p_i: Vec3::zeros(),
            s_q_j: Vec3::z(),
            driver: DriverFn::ZERO,
        };
        let row = jac_ra(&g, &RaBody::ground(), &RaBody::ground());
        assert_abs_diff_eq!(row.th_j, RowVec3::new(0.0, 1.0, 0.0));
    }

    #[test]
    fn reaction_force_structure() {
        let mut fi = RaBody::ground();
        fi.r = Vec3::new(0.2, -0.4, 0.9);
        fi.a = so3::exp_so3(&Vec3::new(0.3, -0.2, 0.5));
        let mut fj = RaBody::ground();
        fj.r = Vec3::new(-1.0, 0.5, 0.3);
        fj.a = so3::exp_so3(&Vec3::new(-0.4, 0.8, 0.1));
        let lam = 1.7;

        // DP1 transmits no force
        let (f_i, _, f_j, _) = reaction_forces_ra(&dp1(Vec3::x(), Vec3::y(), 0.0), &fi, &fj, lam);
        assert_eq!(f_i, Vec3::zeros());
        assert_eq!(f_j, Vec3::zeros());

        // D and CD forces are equal and opposite
        for g in [
            Gcon::D {
                i: 1,
                j: 2,
                s_p_i: Vec3::new(0.1, 0.2, -0.3),
                s_q_j: Vec3::new(-0.2, 0.0, 0.4),
                driver: DriverFn::Constant { c: 1.0 },
            },
            Gcon::Cd {
                i: 1,
                j: 2,
                c: Vec3::new(0.0, 1.0, 0.0),
                s_p_i: Vec3::new(0.1, 0.2, -0.3),
                s_q_j: Vec3::new(-0.2, 0.0, 0.4),
                driver: DriverFn::ZERO,
            },
        ] {
            let (f_i, _, f_j, _) = reaction_forces_ra(&g, &fi, &fj, lam);
            assert_abs_diff_eq!(f_i + f_j, Vec3::zeros(), epsilon = 1e-14);
        }

        // zero multiplier zeroes every sensitivity block
        let sens = reaction_sensitivities_ra(&dp1(Vec3::x(), Vec3::y(), 0.0), &fi, &fj, 0.0);
        assert_eq!(sens.n_i.d_th_i, Mat3::zeros());
        assert_eq!(sens.n_j.d_th_j, Mat3::zeros());

        // CD transmits no force at all: all force blocks zero
        let g = Gcon::Cd {
            i: 1,
            j: 2,
            c: Vec3::z(),
            s_p_i: Vec3::new(0.3, 0.0, 0.1),
            s_q_j: Vec3::new(0.0, 0.2, 0.0),
            driver: DriverFn::ZERO,
        };
        let sens = reaction_sensitivities_ra(&g, &fi, &fj, lam);
        for b in [&sens.f_i, &sens.f_j] {
            assert_eq!(b.d_r_i, Mat3::zeros());
            assert_eq!(b.d_th_i, Mat3::zeros());
            assert_eq!(b.d_r_j, Mat3::zeros());
            assert_eq!(b.d_th_j, Mat3::zeros());
        }
    }
}
