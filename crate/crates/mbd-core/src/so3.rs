//! Rotation algebra shared by the three orientation formulations.
//!
//! Everything here operates on plain nalgebra types: `Mat3` for orientation
//! matrices, `Vec4` for Euler parameters `p = [e0, e1, e2, e3]`, and `Vec3`
//! for ZXZ Euler angles `eps = [phi, theta, psi]`.
//!
//! Conventions:
//! * `tilde(v) w = v x w` (cross-product matrix).
//! * A small body rotation `dtheta` updates an orientation as
//!   `A <- A * exp_so3(dtheta)`, so first-order variations are
//!   `d(A s_bar) = pi_bar_local(A, s_bar) * dtheta` and
//!   `d(A^T s) = pi_bar_global(A, s) * dtheta`.

use crate::{Mat3, Mat34, Mat4, Vec3, Vec4};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum So3Error {
    #[error("Euler parameters not normalized: |p| = {norm} (tolerance 1e-9)")]
    NotNormalized { norm: f64 },
}

/// Cross-product matrix: `tilde(v) * w == v.cross(&w)`.
pub fn tilde(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues formula for the matrix exponential of `tilde(theta)`.
///
/// Written as `I + a(chi) tilde(theta) + b(chi) tilde(theta)^2` with
/// `a = sin(chi)/chi`, `b = (1 - cos(chi))/chi^2`; for `chi < 1e-8` the
/// coefficients switch to their two-term Taylor expansions so the formula
/// stays well defined through `chi = 0`.
pub fn exp_so3(theta: &Vec3) -> Mat3 {
    let chi2 = theta.norm_squared();
    let chi = chi2.sqrt();
    let (a, b) = if chi < 1e-8 {
        (1.0 - chi2 / 6.0, 0.5 - chi2 / 24.0)
    } else {
        (chi.sin() / chi, (1.0 - chi.cos()) / chi2)
    };
    let t = tilde(theta);
    Mat3::identity() + a * t + b * (t * t)
}

/// Operator giving the first-order variation of `A * s_bar` under a small
/// body-frame rotation: `-A * tilde(s_bar)`.
pub fn pi_bar_local(a: &Mat3, s_bar: &Vec3) -> Mat3 {
    -a * tilde(s_bar)
}

/// Operator giving the first-order variation of `A^T * s` under a small
/// body-frame rotation: `tilde(A^T s)`.
pub fn pi_bar_global(a: &Mat3, s: &Vec3) -> Mat3 {
    tilde(&(a.transpose() * s))
}

/// Orientation matrix from Euler parameters, rejecting a non-unit `p`.
pub fn a_from_p(p: &Vec4) -> Result<Mat3, So3Error> {
    let norm = p.norm();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(So3Error::NotNormalized { norm });
    }
    Ok(a_from_p_raw(p))
}

/// Orientation matrix from Euler parameters without the unit-norm check.
///
/// The Newton loops of the Euler-parameter formulation evaluate this on
/// iterates that are only normalized at convergence, so the polynomial is
/// applied to `p` exactly as given.
pub fn a_from_p_raw(p: &Vec4) -> Mat3 {
    let (e0, e1, e2, e3) = (p[0], p[1], p[2], p[3]);
    2.0 * Mat3::new(
        e0 * e0 + e1 * e1 - 0.5,
        e1 * e2 - e0 * e3,
        e1 * e3 + e0 * e2,
        e1 * e2 + e0 * e3,
        e0 * e0 + e2 * e2 - 0.5,
        e2 * e3 - e0 * e1,
        e1 * e3 - e0 * e2,
        e2 * e3 + e0 * e1,
        e0 * e0 + e3 * e3 - 0.5,
    )
}

/// Exact 3x4 partial derivative of `a_from_p_raw(p) * s_bar` with respect
/// to `p` (valid for any `p`, unit or not).
pub fn b_matrix(p: &Vec4, s_bar: &Vec3) -> Mat34 {
    let e0 = p[0];
    let e = Vec3::new(p[1], p[2], p[3]);
    let col0 = 2.0 * (2.0 * e0 * s_bar + e.cross(s_bar));
    let block = 2.0 * (e.dot(s_bar) * Mat3::identity() + e * s_bar.transpose() - e0 * tilde(s_bar));
    let mut b = Mat34::zeros();
    b.set_column(0, &col0);
    for k in 0..3 {
        b.set_column(k + 1, &block.column(k).into_owned());
    }
    b
}

/// The 3x4 matrix mapping Euler-parameter rates to half the body angular
/// velocity: `omega_bar = 2 * b_p_matrix(p) * pdot`. Linear in `p`, and
/// `b_p_matrix(x) * x = 0` for any 4-vector `x`.
pub fn b_p_matrix(p: &Vec4) -> Mat34 {
    let (e0, e1, e2, e3) = (p[0], p[1], p[2], p[3]);
    Mat34::from_row_slice(&[
        -e1, e0, e3, -e2, //
        -e2, -e3, e0, e1, //
        -e3, e2, -e1, e0,
    ])
}

/// Hessian of the scalar `s^T A(p) a_bar` with respect to `p`: a constant
/// symmetric 4x4 with `k_matrix(a_bar, s) * p = b_matrix(p, a_bar)^T s`
/// for every `p`. This is what makes the constraint-force sensitivities of
/// the Euler-parameter dynamics closed-form.
pub fn k_matrix(a_bar: &Vec3, s: &Vec3) -> Mat4 {
    let cross = a_bar.cross(s);
    let outer = a_bar * s.transpose() + s * a_bar.transpose();
    let mut k = Mat4::zeros();
    k[(0, 0)] = 4.0 * s.dot(a_bar);
    for i in 0..3 {
        k[(0, i + 1)] = 2.0 * cross[i];
        k[(i + 1, 0)] = 2.0 * cross[i];
        for j in 0..3 {
            k[(i + 1, j + 1)] = 2.0 * outer[(i, j)];
        }
    }
    k
}

fn a1(phi: f64) -> Mat3 {
    let (s, c) = phi.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn a1_d(phi: f64) -> Mat3 {
    let (s, c) = phi.sin_cos();
    Mat3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

fn a1_dd(phi: f64) -> Mat3 {
    let (s, c) = phi.sin_cos();
    Mat3::new(-c, s, 0.0, -s, -c, 0.0, 0.0, 0.0, 0.0)
}

fn a2(theta: f64) -> Mat3 {
    let (s, c) = theta.sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn a2_d(theta: f64) -> Mat3 {
    let (s, c) = theta.sin_cos();
    Mat3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn a2_dd(theta: f64) -> Mat3 {
    let (s, c) = theta.sin_cos();
    Mat3::new(0.0, 0.0, 0.0, 0.0, -c, s, 0.0, -s, -c)
}

fn a3(psi: f64) -> Mat3 {
    a1(psi)
}

fn a3_d(psi: f64) -> Mat3 {
    a1_d(psi)
}

fn a3_dd(psi: f64) -> Mat3 {
    a1_dd(psi)
}

/// Orientation matrix from ZXZ-intrinsic Euler angles:
/// `A = A1(phi) * A2(theta) * A3(psi)`.
pub fn a_from_eps(eps: &Vec3) -> Mat3 {
    a1(eps[0]) * a2(eps[1]) * a3(eps[2])
}

/// Position- and velocity-level derivatives of `A(eps)`.
///
/// `k[0..3]` are the three partial-derivative matrices multiplying
/// `eps_ddot` in `A_ddot`, and `d` collects every remaining (velocity-only)
/// term, so `A_ddot = sum_k eps_ddot[k] * k[k] + d`.
#[derive(Debug, Clone)]
pub struct EpsDerivatives {
    pub a: Mat3,
    pub a_dot: Mat3,
    pub d: Mat3,
    pub k: [Mat3; 3],
}

impl EpsDerivatives {
    pub fn a_ddot(&self, eps_ddot: &Vec3) -> Mat3 {
        eps_ddot[0] * self.k[0] + eps_ddot[1] * self.k[1] + eps_ddot[2] * self.k[2] + self.d
    }
}

/// Position-level part only: the orientation matrix and the three
/// single-angle partial matrices (columns of `d(A s)/d eps` come from
/// these). This sits in the innermost loop of the Euler-angle solvers, so
/// the single-axis structure is worked out by hand: left factors only mix
/// rows, right factors only mix columns.
pub fn a_eps_partials(eps: &Vec3) -> (Mat3, [Mat3; 3]) {
    let sc = [eps[0].sin_cos(), eps[1].sin_cos(), eps[2].sin_cos()];
    a_eps_partials_from_sincos(&sc)
}

/// Same, from precomputed `(sin, cos)` pairs of the three angles; lets a
/// caller that perturbs a single angle reuse the other two.
pub fn a_eps_partials_from_sincos(sc: &[(f64, f64); 3]) -> (Mat3, [Mat3; 3]) {
    let (s1, c1) = sc[0];
    let (s2, c2) = sc[1];
    let (s3, c3) = sc[2];

    // m23 = A2(theta) A3(psi)
    let m23 = Mat3::new(
        c3, -s3, 0.0, //
        c2 * s3, c2 * c3, -s2, //
        s2 * s3, s2 * c3, c2,
    );
    let mix_rows = |ra: f64, rb: f64, m: &Mat3| {
        // (first two rows of a z-rotation-like left factor) applied to m
        [
            ra * m[(0, 0)] + rb * m[(1, 0)],
            ra * m[(0, 1)] + rb * m[(1, 1)],
            ra * m[(0, 2)] + rb * m[(1, 2)],
        ]
    };
    let top = mix_rows(c1, -s1, &m23);
    let mid = mix_rows(s1, c1, &m23);
    let a = Mat3::new(
        top[0], top[1], top[2], //
        mid[0], mid[1], mid[2], //
        m23[(2, 0)], m23[(2, 1)], m23[(2, 2)],
    );

    // k1 = dA1/dphi * m23
    let k1_top = mix_rows(-s1, -c1, &m23);
    let k1_mid = mix_rows(c1, -s1, &m23);
    let k1 = Mat3::new(
        k1_top[0], k1_top[1], k1_top[2],
        k1_mid[0], k1_mid[1], k1_mid[2],
        0.0, 0.0, 0.0,
    );

    // t = dA2/dtheta * A3 has a zero first row; k2 = A1 * t
    let t1 = [-s2 * s3, -s2 * c3, -c2];
    let t2 = [c2 * s3, c2 * c3, -s2];
    let k2 = Mat3::new(
        -s1 * t1[0], -s1 * t1[1], -s1 * t1[2],
        c1 * t1[0], c1 * t1[1], c1 * t1[2],
        t2[0], t2[1], t2[2],
    );

    // k3 = (A1 A2) * dA3/dpsi; the right factor mixes the first two columns
    // of m12 = A1 A2
    let m12_c0 = [c1, s1, 0.0];
    let m12_c1 = [-s1 * c2, c1 * c2, s2];
    let k3 = Mat3::new(
        -s3 * m12_c0[0] + c3 * m12_c1[0], -c3 * m12_c0[0] - s3 * m12_c1[0], 0.0,
        -s3 * m12_c0[1] + c3 * m12_c1[1], -c3 * m12_c0[1] - s3 * m12_c1[1], 0.0,
        -s3 * m12_c0[2] + c3 * m12_c1[2], -c3 * m12_c0[2] - s3 * m12_c1[2], 0.0,
    );
    (a, [k1, k2, k3])
}

pub fn a_eps_derivatives(eps: &Vec3, eps_dot: &Vec3) -> EpsDerivatives {
    let (m1, m2, m3) = (a1(eps[0]), a2(eps[1]), a3(eps[2]));
    let (d1, d2, d3) = (a1_d(eps[0]), a2_d(eps[1]), a3_d(eps[2]));
    let (dd1, dd2, dd3) = (a1_dd(eps[0]), a2_dd(eps[1]), a3_dd(eps[2]));
    let (pd, td, sd) = (eps_dot[0], eps_dot[1], eps_dot[2]);

    let k1 = d1 * m2 * m3;
    let k2 = m1 * d2 * m3;
    let k3 = m1 * m2 * d3;
    let a_dot = pd * k1 + td * k2 + sd * k3;
    let d = pd * pd * (dd1 * m2 * m3)
        + td * td * (m1 * dd2 * m3)
        + sd * sd * (m1 * m2 * dd3)
        + 2.0 * pd * td * (d1 * d2 * m3)
        + 2.0 * td * sd * (m1 * d2 * d3)
        + 2.0 * pd * sd * (d1 * m2 * d3);
    EpsDerivatives {
        a: m1 * m2 * m3,
        a_dot,
        d,
        k: [k1, k2, k3],
    }
}

/// Maps Euler-angle rates to the body angular velocity:
/// `omega_bar = b_eps_matrix(eps) * eps_dot`, with
/// `tilde(omega_bar) = A^T * A_dot`. Singular where `sin(theta) = 0`.
pub fn b_eps_matrix(eps: &Vec3) -> Mat3 {
    b_eps_from_sincos(eps[1].sin_cos(), eps[2].sin_cos())
}

pub fn b_eps_from_sincos((st, ct): (f64, f64), (sp, cp): (f64, f64)) -> Mat3 {
    Mat3::new(sp * st, cp, 0.0, cp * st, -sp, 0.0, ct, 0.0, 1.0)
}

pub fn b_eps_dot_from_sincos(
    (st, ct): (f64, f64),
    (sp, cp): (f64, f64),
    eps_dot: &Vec3,
) -> Mat3 {
    let (td, sd) = (eps_dot[1], eps_dot[2]);
    Mat3::new(
        sd * cp * st + td * sp * ct,
        -sd * sp,
        0.0,
        -sd * sp * st + td * cp * ct,
        -sd * cp,
        0.0,
        -td * st,
        0.0,
        0.0,
    )
}

/// Time derivative of `b_eps_matrix` along `eps_dot`.
pub fn b_eps_dot(eps: &Vec3, eps_dot: &Vec3) -> Mat3 {
    b_eps_dot_from_sincos(eps[1].sin_cos(), eps[2].sin_cos(), eps_dot)
}

/// ZXZ Euler angles reproducing `A`, on the `theta in (0, pi)` branch.
///
/// At gimbal lock (`|A[2][2]| >= 1 - 1e-12` so `sin(theta) ~ 0`) the
/// decomposition is not unique; the convention here is `psi = 0` with `phi`
/// carrying the whole in-plane rotation.
pub fn eps_from_matrix(a: &Mat3) -> Vec3 {
    let ct = a[(2, 2)].clamp(-1.0, 1.0);
    if ct.abs() >= 1.0 - 1e-12 {
        let theta = if ct > 0.0 { 0.0 } else { std::f64::consts::PI };
        let phi = a[(1, 0)].atan2(a[(0, 0)]);
        return Vec3::new(phi, theta, 0.0);
    }
    let theta = ct.acos();
    let phi = a[(0, 2)].atan2(-a[(1, 2)]);
    let psi = a[(2, 0)].atan2(a[(2, 1)]);
    Vec3::new(phi, theta, psi)
}

/// Euler parameters reproducing `A`, with the `e0 >= 0` sign convention.
///
/// Uses the largest-diagonal branch so no square root is taken of a small
/// quantity near `pi` rotations.
pub fn p_from_matrix(a: &Mat3) -> Vec4 {
    let tr = a[(0, 0)] + a[(1, 1)] + a[(2, 2)];
    // Four candidate squared magnitudes, each exact in infinite precision.
    let q0 = (1.0 + tr) / 4.0;
    let q1 = (1.0 + 2.0 * a[(0, 0)] - tr) / 4.0;
    let q2 = (1.0 + 2.0 * a[(1, 1)] - tr) / 4.0;
    let q3 = (1.0 + 2.0 * a[(2, 2)] - tr) / 4.0;
    let branch = [q0, q1, q2, q3]
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
        .unwrap()
        .0;
    let mut p = match branch {
        0 => {
            let e0 = q0.max(0.0).sqrt();
            Vec4::new(
                e0,
                (a[(2, 1)] - a[(1, 2)]) / (4.0 * e0),
                (a[(0, 2)] - a[(2, 0)]) / (4.0 * e0),
                (a[(1, 0)] - a[(0, 1)]) / (4.0 * e0),
            )
        }
        1 => {
            let e1 = q1.max(0.0).sqrt();
            Vec4::new(
                (a[(2, 1)] - a[(1, 2)]) / (4.0 * e1),
                e1,
                (a[(1, 0)] + a[(0, 1)]) / (4.0 * e1),
                (a[(0, 2)] + a[(2, 0)]) / (4.0 * e1),
            )
        }
        2 => {
            let e2 = q2.max(0.0).sqrt();
            Vec4::new(
                (a[(0, 2)] - a[(2, 0)]) / (4.0 * e2),
                (a[(1, 0)] + a[(0, 1)]) / (4.0 * e2),
                e2,
                (a[(2, 1)] + a[(1, 2)]) / (4.0 * e2),
            )
        }
        _ => {
            let e3 = q3.max(0.0).sqrt();
            Vec4::new(
                (a[(1, 0)] - a[(0, 1)]) / (4.0 * e3),
                (a[(0, 2)] + a[(2, 0)]) / (4.0 * e3),
                (a[(2, 1)] + a[(1, 2)]) / (4.0 * e3),
                e3,
            )
        }
    };
    p /= p.norm();
    if p[0] < 0.0 {
        p = -p;
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn rand_vec3(rng: &mut impl Rng, scale: f64) -> Vec3 {
        Vec3::new(
            rng.gen_range(-scale..scale),
            rng.gen_range(-scale..scale),
            rng.gen_range(-scale..scale),
        )
    }

    fn rand_rotation(rng: &mut impl Rng) -> Mat3 {
        let axis = rand_vec3(rng, 1.0).normalize();
        exp_so3(&(axis * rng.gen_range(0.0..PI)))
    }

    fn rand_unit_p(rng: &mut impl Rng) -> Vec4 {
        let mut p = Vec4::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        while p.norm() < 0.1 {
            p[0] += 1.0;
        }
        p.normalize()
    }

    #[test]
    fn tilde_is_cross_product() {
        let v = Vec3::new(1.0, 0.0, 0.0);
        let w = Vec3::new(0.0, 1.0, 0.0);
        assert_eq!(tilde(&v) * w, Vec3::new(0.0, 0.0, 1.0));
        let u = Vec3::new(0.3, -0.7, 2.1);
        assert_abs_diff_eq!(tilde(&u) * u, Vec3::zeros(), epsilon = 1e-15);
        assert_abs_diff_eq!(tilde(&u) + tilde(&u).transpose(), Mat3::zeros(), epsilon = 0.0);
    }

    #[test]
    fn exp_so3_basic_rotations() {
        assert_eq!(exp_so3(&Vec3::zeros()), Mat3::identity());
        let r = exp_so3(&Vec3::new(0.0, 0.0, FRAC_PI_2));
        assert_abs_diff_eq!(r * Vec3::x(), Vec3::y(), epsilon = 1e-15);
    }

    #[test]
    fn exp_so3_matches_truncated_series() {
        // 20-term power-series oracle for the matrix exponential.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let theta = rand_vec3(&mut rng, 1.0 / 3.0_f64.sqrt());
            let t = tilde(&theta);
            let mut sum = Mat3::identity();
            let mut term = Mat3::identity();
            for k in 1..=20 {
                term = term * t / k as f64;
                sum += term;
            }
            assert_abs_diff_eq!(exp_so3(&theta), sum, epsilon = 1e-12);
        }
    }

    #[test]
    fn exp_so3_small_angle_branch() {
        for chi in [1e-12, 1e-9, 5e-9] {
            let r = exp_so3(&Vec3::new(chi, 0.0, 0.0));
            assert_abs_diff_eq!(r.transpose() * r, Mat3::identity(), epsilon = 1e-15);
        }
    }

    #[test]
    fn pi_bar_operators_match_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let a = rand_rotation(&mut rng);
            let s = rand_vec3(&mut rng, 2.0);
            let dth = rand_vec3(&mut rng, 1.0).normalize() * 1e-6;
            let lhs = a * exp_so3(&dth) * s - a * s;
            let rhs = pi_bar_local(&a, &s) * dth;
            assert!((lhs - rhs).norm() <= 1e-5 * lhs.norm().max(1e-12));

            let lhs_g = (a * exp_so3(&dth)).transpose() * s - a.transpose() * s;
            let rhs_g = pi_bar_global(&a, &s) * dth;
            assert!((lhs_g - rhs_g).norm() <= 1e-5 * lhs_g.norm().max(1e-12));
            // tilde(v) v = 0
            assert_abs_diff_eq!(
                pi_bar_global(&a, &s) * (a.transpose() * s),
                Vec3::zeros(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn pi_bar_error_shrinks_quadratically() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = rand_rotation(&mut rng);
        let s = rand_vec3(&mut rng, 1.0);
        let dir = rand_vec3(&mut rng, 1.0).normalize();
        let mut errs = Vec::new();
        for eta in [1e-3, 1e-4, 1e-5] {
            let dth = dir * eta;
            let err = (a * exp_so3(&dth) * s - a * s - pi_bar_local(&a, &s) * dth).norm();
            errs.push(err);
        }
        // each decade in eta should buy ~two decades in error
        assert!(errs[1] < errs[0] * 1e-1);
        assert!(errs[2] < errs[1] * 1e-1);
    }

    #[test]
    fn a_from_p_identity_and_axis_angle() {
        let p = Vec4::new(1.0, 0.0, 0.0, 0.0);
        assert_eq!(a_from_p(&p).unwrap(), Mat3::identity());
        let alpha = 0.7_f64;
        let p = Vec4::new((alpha / 2.0).cos(), 0.0, 0.0, (alpha / 2.0).sin());
        let expect = exp_so3(&Vec3::new(0.0, 0.0, alpha));
        assert_abs_diff_eq!(a_from_p(&p).unwrap(), expect, epsilon = 1e-14);
    }

    #[test]
    fn a_from_p_rejects_unnormalized() {
        assert!(a_from_p(&Vec4::new(1.0, 0.1, 0.0, 0.0)).is_err());
    }

    #[test]
    fn a_from_p_orthonormal_and_matches_exp_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let p = rand_unit_p(&mut rng);
            let a = a_from_p(&p).unwrap();
            assert_abs_diff_eq!(a.transpose() * a, Mat3::identity(), epsilon = 1e-13);
            // axis-angle recovered analytically from p
            let e = Vec3::new(p[1], p[2], p[3]);
            let chi = 2.0 * e.norm().atan2(p[0]);
            if e.norm() > 1e-12 {
                let theta = e.normalize() * chi;
                assert_abs_diff_eq!(a, exp_so3(&theta), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn b_matrix_fd_and_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(b_matrix(&rand_unit_p(&mut rng), &Vec3::zeros()), Mat34::zeros());
        for _ in 0..100 {
            let p = Vec4::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let s = rand_vec3(&mut rng, 2.0);
            let b = b_matrix(&p, &s);
            let step = 1e-6;
            for k in 0..4 {
                let mut dp = Vec4::zeros();
                dp[k] = step;
                let col = (a_from_p_raw(&(p + dp)) * s - a_from_p_raw(&(p - dp)) * s) / (2.0 * step);
                let err = (b.column(k) - col).norm();
                assert!(err <= 1e-8 * col.norm().max(1.0), "col {k}: err {err}");
            }
            // homogeneity of the quadratic part: B(p,s) p = 2 (A(p) + I) s
            let lhs = b * p;
            let rhs = 2.0 * (a_from_p_raw(&p) + Mat3::identity()) * s;
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12 * rhs.norm().max(1.0));
        }
    }

    #[test]
    fn k_matrix_is_gradient_of_b_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let a_bar = rand_vec3(&mut rng, 2.0);
            let s = rand_vec3(&mut rng, 2.0);
            let p = Vec4::from_fn(|_, _| rng.gen_range(-1.5..1.5));
            let k = k_matrix(&a_bar, &s);
            assert_abs_diff_eq!(k.transpose(), k, epsilon = 0.0);
            let lhs = k * p;
            let rhs = b_matrix(&p, &a_bar).transpose() * s;
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-13 * rhs.norm().max(1.0));
        }
    }

    #[test]
    fn b_p_matrix_identities() {
        let e = Vec4::new(1.0, 0.0, 0.0, 0.0);
        let expect = Mat34::from_row_slice(&[
            0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        ]);
        assert_eq!(b_p_matrix(&e), expect);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let p = Vec4::from_fn(|_, _| rng.gen_range(-2.0..2.0));
            assert_abs_diff_eq!(b_p_matrix(&p) * p, Vec3::zeros(), epsilon = 1e-14);
            let pu = rand_unit_p(&mut rng);
            let b = b_p_matrix(&pu);
            assert_abs_diff_eq!(b * b.transpose(), Mat3::identity(), epsilon = 1e-13);
        }
    }

    #[test]
    fn a_from_eps_basics() {
        assert_eq!(a_from_eps(&Vec3::zeros()), Mat3::identity());
        let alpha = 0.37;
        assert_abs_diff_eq!(
            a_from_eps(&Vec3::new(alpha, 0.0, 0.0)),
            exp_so3(&Vec3::new(0.0, 0.0, alpha)),
            epsilon = 1e-15
        );
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let eps = rand_vec3(&mut rng, 3.0);
            assert_abs_diff_eq!(a_from_eps(&eps).determinant(), 1.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn a_eps_partials_match_reference_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let eps = rand_vec3(&mut rng, 3.5);
            let (a, k) = a_eps_partials(&eps);
            assert_abs_diff_eq!(a, a_from_eps(&eps), epsilon = 1e-14);
            let der = a_eps_derivatives(&eps, &Vec3::zeros());
            for i in 0..3 {
                assert_abs_diff_eq!(k[i], der.k[i], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn a_eps_derivatives_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let eps = rand_vec3(&mut rng, 2.0);
            let eps_dot = rand_vec3(&mut rng, 1.0);
            let der = a_eps_derivatives(&eps, &eps_dot);
            assert_abs_diff_eq!(der.a, a_from_eps(&eps), epsilon = 1e-14);

            // zero rates kill all velocity terms
            let frozen = a_eps_derivatives(&eps, &Vec3::zeros());
            assert_eq!(frozen.a_dot, Mat3::zeros());
            assert_eq!(frozen.d, Mat3::zeros());

            let step = 1e-6;
            let ap = a_from_eps(&(eps + eps_dot * step));
            let am = a_from_eps(&(eps - eps_dot * step));
            let fd_dot = (ap - am) / (2.0 * step);
            assert!((der.a_dot - fd_dot).norm() <= 1e-7 * fd_dot.norm().max(1.0));

            // second derivative along eps(t) = eps0 + t eps_dot + t^2/2 eps_ddot;
            // a larger step keeps the second difference above roundoff
            let eps_ddot = rand_vec3(&mut rng, 1.0);
            let step2 = 1e-4;
            let at = |t: f64| a_from_eps(&(eps + eps_dot * t + eps_ddot * (0.5 * t * t)));
            let fd_ddot = (at(step2) - 2.0 * at(0.0) + at(-step2)) / (step2 * step2);
            let addot = der.a_ddot(&eps_ddot);
            assert!((addot - fd_ddot).norm() <= 1e-5 * fd_ddot.norm().max(1.0));
        }
    }

    #[test]
    fn b_eps_matches_angular_velocity() {
        // gimbal lock: determinant vanishes with sin(theta)
        assert_abs_diff_eq!(
            b_eps_matrix(&Vec3::new(0.4, 0.0, 1.3)).determinant(),
            0.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            b_eps_matrix(&Vec3::new(0.0, FRAC_PI_2, 0.0)),
            Mat3::new(0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0),
            epsilon = 1e-15
        );
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let mut eps = rand_vec3(&mut rng, 2.5);
            while eps[1].sin().abs() < 0.1 {
                eps[1] += 0.5;
            }
            let eps_dot = rand_vec3(&mut rng, 1.0);
            let der = a_eps_derivatives(&eps, &eps_dot);
            let om = b_eps_matrix(&eps) * eps_dot;
            assert_abs_diff_eq!(tilde(&om), der.a.transpose() * der.a_dot, epsilon = 1e-12);
            // b_eps_dot is the time derivative of b_eps_matrix
            let step = 1e-6;
            let fd = (b_eps_matrix(&(eps + eps_dot * step)) - b_eps_matrix(&(eps - eps_dot * step)))
                / (2.0 * step);
            assert!((b_eps_dot(&eps, &eps_dot) - fd).norm() <= 1e-7 * fd.norm().max(1.0));
        }
    }

    #[test]
    fn eps_extraction_round_trip() {
        assert_eq!(eps_from_matrix(&Mat3::identity()), Vec3::zeros());
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..100 {
            let a = rand_rotation(&mut rng);
            let eps = eps_from_matrix(&a);
            assert!((a_from_eps(&eps) - a).norm() <= 1e-11);
            assert!(eps[1] >= 0.0 && eps[1] <= PI);
        }
        // gimbal-locked input takes the psi = 0 convention
        let a = a_from_eps(&Vec3::new(0.3, 0.0, 0.9));
        let eps = eps_from_matrix(&a);
        assert_eq!(eps[2], 0.0);
        assert_abs_diff_eq!(eps[0], 1.2, epsilon = 1e-12);
    }

    #[test]
    fn p_extraction_round_trip() {
        let alpha = 1.1_f64;
        let p = p_from_matrix(&exp_so3(&Vec3::new(0.0, 0.0, alpha)));
        assert_abs_diff_eq!(p[0], (alpha / 2.0).cos(), epsilon = 1e-14);
        assert_abs_diff_eq!(p[3], (alpha / 2.0).sin(), epsilon = 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let a = rand_rotation(&mut rng);
            let p = p_from_matrix(&a);
            assert!(p[0] >= 0.0);
            assert!((a_from_p(&p).unwrap() - a).norm() <= 1e-12);
        }
        // near-pi rotations exercise the off-trace branches
        for axis in [Vec3::x(), Vec3::y(), Vec3::z(), Vec3::new(1.0, 1.0, 1.0).normalize()] {
            let a = exp_so3(&(axis * (PI - 1e-7)));
            let p = p_from_matrix(&a);
            assert!((a_from_p(&p).unwrap() - a).norm() <= 1e-12);
        }
    }
}
