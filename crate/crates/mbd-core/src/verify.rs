//! Finite-difference and perturbation oracles for every analytic derivative
//! in the crate: constraint Jacobian rows in all three formulations, the
//! acceleration right-hand sides, the reaction force/torque sensitivity
//! blocks, and the rotation-algebra derivative matrices.
//!
//! Each oracle draws seeded random states (positions in [-2,2]^3, uniformly
//! random rotation axes with angles in [0, pi), velocities in [-1,1]),
//! evaluates the analytic expression and an independent finite-difference
//! reconstruction, and reports the worst relative error seen. The oracles
//! are the arbiter wherever two derivations could disagree.

use crate::gcon::{self, EpsBody, RaBody, RpBody};
use crate::model::{DriverFn, Gcon};
use crate::par;
use crate::so3::{self, tilde};
use crate::{Mat3, Vec3, Vec4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct OracleItem {
    pub name: String,
    pub tol: f64,
    /// One random trial; returns the relative error of that trial.
    pub run: Box<dyn Fn(&mut ChaCha8Rng) -> f64 + Send + Sync>,
}

#[derive(Debug, Clone)]
pub struct OracleReport {
    pub item: String,
    pub tol: f64,
    pub max_rel_err: f64,
    pub pass: bool,
}

fn run_one(items: &[OracleItem], seed: u64, reps: usize, idx: usize) -> OracleReport {
    let item = &items[idx];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut worst = 0.0_f64;
    for _ in 0..reps {
        worst = worst.max((item.run)(&mut rng));
    }
    OracleReport {
        item: item.name.clone(),
        tol: item.tol,
        max_rel_err: worst,
        pass: worst <= item.tol,
    }
}

/// Run every item `reps` times with per-item deterministic seeding.
pub fn run_items(items: &[OracleItem], seed: u64, reps: usize) -> Vec<OracleReport> {
    par::map((0..items.len()).collect(), |idx| run_one(items, seed, reps, idx))
}

pub fn run_items_seq(items: &[OracleItem], seed: u64, reps: usize) -> Vec<OracleReport> {
    par::map_seq((0..items.len()).collect(), |idx| run_one(items, seed, reps, idx))
}

#[cfg(feature = "parallel")]
pub fn run_items_par(items: &[OracleItem], seed: u64, reps: usize) -> Vec<OracleReport> {
    par::map_par((0..items.len()).collect(), |idx| run_one(items, seed, reps, idx))
}

/// The full derivative-verification suite.
pub fn run_fdcheck(seed: u64, reps: usize) -> Vec<OracleReport> {
    run_items(&standard_items(), seed, reps)
}

// ---------------------------------------------------------------------------
// random state generation

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..hi)
}

fn rand_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vec3 {
    Vec3::new(
        uniform(rng, -scale, scale),
        uniform(rng, -scale, scale),
        uniform(rng, -scale, scale),
    )
}

fn rand_dir(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = rand_vec(rng, 1.0);
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

fn rand_rotation(rng: &mut ChaCha8Rng, avoid_gimbal: bool) -> Mat3 {
    loop {
        let a = so3::exp_so3(&(rand_dir(rng) * uniform(rng, 0.0, std::f64::consts::PI)));
        // keep |sin(theta)| >= 0.1 for Euler-angle cases
        if avoid_gimbal && a[(2, 2)] * a[(2, 2)] > 0.99 {
            continue;
        }
        return a;
    }
}

fn rand_ra_body(rng: &mut ChaCha8Rng, avoid_gimbal: bool) -> RaBody {
    RaBody {
        r: rand_vec(rng, 2.0),
        a: rand_rotation(rng, avoid_gimbal),
        rdot: rand_vec(rng, 1.0),
        omega_bar: rand_vec(rng, 1.0),
    }
}

fn rand_driver(rng: &mut ChaCha8Rng, positive: bool) -> DriverFn {
    let c1 = uniform(rng, 0.1, 0.8);
    let c0 = if positive { uniform(rng, 1.5, 3.0) } else { uniform(rng, -1.0, 1.0) };
    DriverFn::Cosine { c0, c1, omega: uniform(rng, 0.5, 2.0), phi0: uniform(rng, 0.0, 6.28) }
}

const KINDS: [&str; 4] = ["DP1", "DP2", "D", "CD"];

fn rand_gcon(rng: &mut ChaCha8Rng, kind: &str) -> Gcon {
    match kind {
        "DP1" => Gcon::Dp1 {
            i: 1,
            j: 2,
            a_i: rand_vec(rng, 2.0) + Vec3::new(0.3, 0.0, 0.0),
            a_j: rand_vec(rng, 2.0) + Vec3::new(0.0, 0.3, 0.0),
            driver: rand_driver(rng, false),
        },
        "DP2" => Gcon::Dp2 {
            i: 1,
            j: 2,
            a_i: rand_vec(rng, 2.0) + Vec3::new(0.3, 0.0, 0.0),
            s_p_i: rand_vec(rng, 2.0),
            s_q_j: rand_vec(rng, 2.0),
            driver: rand_driver(rng, false),
        },
        "D" => Gcon::D {
            i: 1,
            j: 2,
            s_p_i: rand_vec(rng, 2.0),
            s_q_j: rand_vec(rng, 2.0),
            driver: rand_driver(rng, true),
        },
        "CD" => Gcon::Cd {
            i: 1,
            j: 2,
            c: rand_dir(rng),
            s_p_i: rand_vec(rng, 2.0),
            s_q_j: rand_vec(rng, 2.0),
            driver: rand_driver(rng, false),
        },
        other => panic!("unknown gcon kind {other}"),
    }
}

fn rel(err: f64, scale: f64) -> f64 {
    err / scale.max(1.0)
}

// ---------------------------------------------------------------------------
// Jacobian row oracles

const FD_STEP: f64 = 1e-6;

fn jac_ra_trial(rng: &mut ChaCha8Rng, kind: &str) -> f64 {
    let g = rand_gcon(rng, kind);
    let fi = rand_ra_body(rng, false);
    let fj = rand_ra_body(rng, false);
    let t = uniform(rng, 0.0, 2.0);
    let row = gcon::jac_ra(&g, &fi, &fj);
    let scale = row
        .r_i
        .amax()
        .max(row.th_i.amax())
        .max(row.r_j.amax())
        .max(row.th_j.amax());

    let phi = |fi: &RaBody, fj: &RaBody| gcon::phi_at(&g, &fi.r, &fi.a, &fj.r, &fj.a, t);
    let mut worst = 0.0_f64;
    for k in 0..3 {
        let mut e = Vec3::zeros();
        e[k] = FD_STEP;
        // r_i
        let mut fp = fi.clone();
        fp.r += e;
        let mut fm = fi.clone();
        fm.r -= e;
        let fd = (phi(&fp, &fj) - phi(&fm, &fj)) / (2.0 * FD_STEP);
        worst = worst.max(rel((fd - row.r_i[k]).abs(), scale));
        // theta_i: A -> A exp_so3(eta e_k)
        let mut fp = fi.clone();
        fp.a = fi.a * so3::exp_so3(&e);
        let mut fm = fi.clone();
        fm.a = fi.a * so3::exp_so3(&(-e));
        let fd = (phi(&fp, &fj) - phi(&fm, &fj)) / (2.0 * FD_STEP);
        worst = worst.max(rel((fd - row.th_i[k]).abs(), scale));
        // r_j
        let mut fp = fj.clone();
        fp.r += e;
        let mut fm = fj.clone();
        fm.r -= e;
        let fd = (phi(&fi, &fp) - phi(&fi, &fm)) / (2.0 * FD_STEP);
        worst = worst.max(rel((fd - row.r_j[k]).abs(), scale));
        // theta_j
        let mut fp = fj.clone();
        fp.a = fj.a * so3::exp_so3(&e);
        let mut fm = fj.clone();
        fm.a = fj.a * so3::exp_so3(&(-e));
        let fd = (phi(&fi, &fp) - phi(&fi, &fm)) / (2.0 * FD_STEP);
        worst = worst.max(rel((fd - row.th_j[k]).abs(), scale));
    }
    worst
}

fn jac_rp_trial(rng: &mut ChaCha8Rng, kind: &str) -> f64 {
    let g = rand_gcon(rng, kind);
    let mk = |rng: &mut ChaCha8Rng| {
        let a = rand_rotation(rng, false);
        let p = so3::p_from_matrix(&a);
        RpBody::new(rand_vec(rng, 2.0), p, rand_vec(rng, 1.0), Vec4::zeros())
    };
    let fi = mk(rng);
    let fj = mk(rng);
    let t = uniform(rng, 0.0, 2.0);
    let row = gcon::jac_rp(&g, &fi, &fj);
    let scale = row
        .r_i
        .amax()
        .max(row.p_i.amax())
        .max(row.r_j.amax())
        .max(row.p_j.amax());

    let phi = |fi: &RpBody, fj: &RpBody| gcon::phi_at(&g, &fi.r, &fi.a, &fj.r, &fj.a, t);
    let mut worst = 0.0_f64;
    for k in 0..3 {
        let mut e = Vec3::zeros();
        e[k] = FD_STEP;
        let mut fp = fi.clone();
        fp.r += e;
        let mut fm = fi.clone();
        fm.r -= e;
        let fd = (phi(&fp, &fj) - phi(&fm, &fj)) / (2.0 * FD_STEP);
        worst = worst.max(rel((fd - row.r_i[k]).abs(), scale));
        let mut fp = fj.clone();
        fp.r += e;
        let mut fm = fj.clone();
        fm.r -= e;
        let fd = (phi(&fi, &fp) - phi(&fi, &fm)) / (2.0 * FD_STEP);
        worst = worst.max(rel((fd - row.r_j[k]).abs(), scale));
    }
    // plain partial in the raw parameters, no renormalization
    for k in 0..4 {
        let mut e = Vec4::zeros();
        e[k] = FD_STEP;
        let fp = RpBody::new(fi.r, fi.p + e, fi.rdot, fi.pdot);
        let fm = RpBody::new(fi.r, fi.p - e, fi.rdot, fi.pdot);
        let fd = (phi(&fp, &fj) - phi(&fm, &fj)) / (2.0 * FD_STEP);
        worst = worst.max(rel((fd - row.p_i[k]).abs(), scale));
        let fp = RpBody::new(fj.r, fj.p + e, fj.rdot, fj.pdot);
        let fm = RpBody::new(fj.r, fj.p - e, fj.rdot, fj.pdot);
        let fd = (phi(&fi, &fp) - phi(&fi, &fm)) / (2.0 * FD_STEP);
        worst = worst.max(rel((fd - row.p_j[k]).abs(), scale));
    }
    worst
}

fn jac_eps_trial(rng: &mut ChaCha8Rng, kind: &str) -> f64 {
    let g = rand_gcon(rng, kind);
    let mk = |rng: &mut ChaCha8Rng| {
        let a = rand_rotation(rng, true);
        let eps = so3::eps_from_matrix(&a);
        EpsBody::new(rand_vec(rng, 2.0), eps, rand_vec(rng, 1.0), Vec3::zeros())
    };
    let fi = mk(rng);
    let fj = mk(rng);
    let t = uniform(rng, 0.0, 2.0);
    let row = gcon::jac_eps(&g, &fi, &fj);
    let scale = row
        .r_i
        .amax()
        .max(row.e_i.amax())
        .max(row.r_j.amax())
        .max(row.e_j.amax());

    let phi = |fi: &EpsBody, fj: &EpsBody| {
        gcon::phi_at(&g, &fi.r, &fi.a, &fj.r, &fj.a, t)
    };
    let mut worst = 0.0_f64;
    for k in 0..3 {
        let mut e = Vec3::zeros();
        e[k] = FD_STEP;
        let mut fp = fi.clone();
        fp.r += e;
        let mut fm = fi.clone();
        fm.r -= e;
        let fd = (phi(&fp, &fj) - phi(&fm, &fj)) / (2.0 * FD_STEP);
        worst = worst.max(rel((fd - row.r_i[k]).abs(), scale));
        let mut fp = fj.clone();
        fp.r += e;
        let mut fm = fj.clone();
        fm.r -= e;
        let fd = (phi(&fi, &fp) - phi(&fi, &fm)) / (2.0 * FD_STEP);
        worst = worst.max(rel((fd - row.r_j[k]).abs(), scale));

        let fp = EpsBody::new(fi.r, fi.eps + e, fi.rdot, fi.eps_dot);
        let fm = EpsBody::new(fi.r, fi.eps - e, fi.rdot, fi.eps_dot);
        let fd = (phi(&fp, &fj) - phi(&fm, &fj)) / (2.0 * FD_STEP);
        worst = worst.max(rel((fd - row.e_i[k]).abs(), scale));
        let fp = EpsBody::new(fj.r, fj.eps + e, fj.rdot, fj.eps_dot);
        let fm = EpsBody::new(fj.r, fj.eps - e, fj.rdot, fj.eps_dot);
        let fd = (phi(&fi, &fp) - phi(&fi, &fm)) / (2.0 * FD_STEP);
        worst = worst.max(rel((fd - row.e_j[k]).abs(), scale));
    }
    worst
}

// ---------------------------------------------------------------------------
// gamma oracles: d^2 Phi / dt^2 along a smooth synthetic motion

fn d2_5point(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    (-f(-2.0 * h) + 16.0 * f(-h) - 30.0 * f(0.0) + 16.0 * f(h) - f(2.0 * h)) / (12.0 * h * h)
}

/// Smooth two-axis rotation `A(t) = A0 exp(alpha(t) u~) exp(beta(t) v~)`
/// with closed-form body rates.
struct RaMotion {
    r0: Vec3,
    v0: Vec3,
    acc: Vec3,
    a0: Mat3,
    u: Vec3,
    v: Vec3,
    alpha: [f64; 3],
    beta: [f64; 3],
}

impl RaMotion {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        RaMotion {
            r0: rand_vec(rng, 2.0),
            v0: rand_vec(rng, 1.0),
            acc: rand_vec(rng, 1.0),
            a0: rand_rotation(rng, false),
            u: rand_dir(rng),
            v: rand_dir(rng),
            alpha: [uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0), uniform(rng, -0.5, 0.5)],
            beta: [uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0), uniform(rng, -0.5, 0.5)],
        }
    }

    fn at(&self, t: f64) -> (Vec3, Mat3) {
        let al = self.alpha[0] + self.alpha[1] * t + self.alpha[2] * t * t;
        let be = self.beta[0] + self.beta[1] * t + self.beta[2] * t * t;
        let a = self.a0 * so3::exp_so3(&(al * self.u)) * so3::exp_so3(&(be * self.v));
        (self.r0 + self.v0 * t + 0.5 * self.acc * t * t, a)
    }

    /// body at t = 0 with exact rates
    fn body(&self) -> (RaBody, Vec3, Vec3) {
        let (r, a) = self.at(0.0);
        let (ald, aldd) = (self.alpha[1], 2.0 * self.alpha[2]);
        let (bed, bedd) = (self.beta[1], 2.0 * self.beta[2]);
        let ebt = so3::exp_so3(&(-self.beta[0] * self.v));
        let omega = ald * (ebt * self.u) + bed * self.v;
        let omega_dot =
            aldd * (ebt * self.u) - ald * bed * (tilde(&self.v) * (ebt * self.u)) + bedd * self.v;
        (
            RaBody { r, a, rdot: self.v0, omega_bar: omega },
            self.acc,
            omega_dot,
        )
    }
}

fn gamma_ra_trial(rng: &mut ChaCha8Rng, kind: &str) -> f64 {
    let g = rand_gcon(rng, kind);
    let mi = RaMotion::sample(rng);
    let mj = RaMotion::sample(rng);
    let t0 = uniform(rng, 0.1, 1.0);

    let (fi, rddi, omdi) = mi.body();
    let (fj, rddj, omdj) = mj.body();
    let row = gcon::jac_ra(&g, &fi, &fj);
    let gamma = gcon::gamma_ra(&g, &fi, &fj, t0);
    let lhs = row.r_i * rddi + row.th_i * omdi + row.r_j * rddj + row.th_j * omdj;

    let phi_t = |dt: f64| {
        let (ri, ai) = mi.at(dt);
        let (rj, aj) = mj.at(dt);
        gcon::phi_at(&g, &ri, &ai, &rj, &aj, t0 + dt)
    };
    let d2 = d2_5point(phi_t, 1e-3);
    rel((lhs[0] - gamma - d2).abs(), d2.abs()) // scale by max(1, |d2|)
}

fn gamma_rp_trial(rng: &mut ChaCha8Rng, kind: &str) -> f64 {
    let g = rand_gcon(rng, kind);
    // polynomial curves in the raw parameters; no normalization required
    let rand4 = |rng: &mut ChaCha8Rng| {
        Vec4::new(
            uniform(rng, -1.0, 1.0),
            uniform(rng, -1.0, 1.0),
            uniform(rng, -1.0, 1.0),
            uniform(rng, -1.0, 1.0),
        )
    };
    let (r0i, v0i, ai) = (rand_vec(rng, 2.0), rand_vec(rng, 1.0), rand_vec(rng, 1.0));
    let (r0j, v0j, aj) = (rand_vec(rng, 2.0), rand_vec(rng, 1.0), rand_vec(rng, 1.0));
    let p0i = so3::p_from_matrix(&rand_rotation(rng, false));
    let p0j = so3::p_from_matrix(&rand_rotation(rng, false));
    let (p1i, p2i) = (0.5 * rand4(rng), 0.5 * rand4(rng));
    let (p1j, p2j) = (0.5 * rand4(rng), 0.5 * rand4(rng));
    let t0 = uniform(rng, 0.1, 1.0);

    let frame_i = |t: f64| {
        RpBody::new(
            r0i + v0i * t + 0.5 * ai * t * t,
            p0i + p1i * t + 0.5 * p2i * t * t,
            v0i + ai * t,
            p1i + p2i * t,
        )
    };
    let frame_j = |t: f64| {
        RpBody::new(
            r0j + v0j * t + 0.5 * aj * t * t,
            p0j + p1j * t + 0.5 * p2j * t * t,
            v0j + aj * t,
            p1j + p2j * t,
        )
    };
    let fi = frame_i(0.0);
    let fj = frame_j(0.0);
    let row = gcon::jac_rp(&g, &fi, &fj);
    let gamma = gcon::gamma_rp(&g, &fi, &fj, t0);
    let lhs = row.r_i * ai + row.p_i * p2i + row.r_j * aj + row.p_j * p2j;

    let phi_t = |dt: f64| {
        let fi = frame_i(dt);
        let fj = frame_j(dt);
        gcon::phi_at(&g, &fi.r, &fi.a, &fj.r, &fj.a, t0 + dt)
    };
    let d2 = d2_5point(phi_t, 1e-3);
    rel((lhs[0] - gamma - d2).abs(), d2.abs())
}

fn gamma_eps_trial(rng: &mut ChaCha8Rng, kind: &str) -> f64 {
    let g = rand_gcon(rng, kind);
    let eps0 = |rng: &mut ChaCha8Rng| so3::eps_from_matrix(&rand_rotation(rng, true));
    let (r0i, v0i, ai) = (rand_vec(rng, 2.0), rand_vec(rng, 1.0), rand_vec(rng, 1.0));
    let (r0j, v0j, aj) = (rand_vec(rng, 2.0), rand_vec(rng, 1.0), rand_vec(rng, 1.0));
    let (e0i, e1i, e2i) = (eps0(rng), rand_vec(rng, 1.0), rand_vec(rng, 1.0));
    let (e0j, e1j, e2j) = (eps0(rng), rand_vec(rng, 1.0), rand_vec(rng, 1.0));
    let t0 = uniform(rng, 0.1, 1.0);

    let frame_i = |t: f64| {
        EpsBody::new(
            r0i + v0i * t + 0.5 * ai * t * t,
            e0i + e1i * t + 0.5 * e2i * t * t,
            v0i + ai * t,
            e1i + e2i * t,
        )
    };
    let frame_j = |t: f64| {
        EpsBody::new(
            r0j + v0j * t + 0.5 * aj * t * t,
            e0j + e1j * t + 0.5 * e2j * t * t,
            v0j + aj * t,
            e1j + e2j * t,
        )
    };
    let fi = frame_i(0.0);
    let fj = frame_j(0.0);
    let row = gcon::jac_eps(&g, &fi, &fj);
    let gamma = gcon::gamma_eps(&g, &fi, &fj, t0);
    let lhs = row.r_i * ai + row.e_i * e2i + row.r_j * aj + row.e_j * e2j;

    let phi_t = |dt: f64| {
        let fi = frame_i(dt);
        let fj = frame_j(dt);
        gcon::phi_at(&g, &fi.r, &fi.a, &fj.r, &fj.a, t0 + dt)
    };
    let d2 = d2_5point(phi_t, 1e-3);
    rel((lhs[0] - gamma - d2).abs(), d2.abs())
}

// ---------------------------------------------------------------------------
// reaction force/torque sensitivity oracle

fn reaction_trial(rng: &mut ChaCha8Rng, kind: &str) -> f64 {
    let g = rand_gcon(rng, kind);
    let fi = rand_ra_body(rng, false);
    let fj = rand_ra_body(rng, false);
    let lambda = uniform(rng, 0.2, 2.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let sens = gcon::reaction_sensitivities_ra(&g, &fi, &fj, lambda);

    let forces =
        |fi: &RaBody, fj: &RaBody| gcon::reaction_forces_ra(&g, fi, fj, lambda);

    let mut worst = 0.0_f64;
    let mut check = |fd: (Vec3, Vec3, Vec3, Vec3), an_col: [Vec3; 4]| {
        let scale = an_col.iter().map(|c| c.amax()).fold(1.0_f64, f64::max);
        worst = worst.max((fd.0 - an_col[0]).amax() / scale);
        worst = worst.max((fd.1 - an_col[1]).amax() / scale);
        worst = worst.max((fd.2 - an_col[2]).amax() / scale);
        worst = worst.max((fd.3 - an_col[3]).amax() / scale);
    };

    for k in 0..3 {
        let mut e = Vec3::zeros();
        e[k] = FD_STEP;
        // d/d r_i
        let mut fp = fi.clone();
        fp.r += e;
        let mut fm = fi.clone();
        fm.r -= e;
        let (ap, bp, cp, dp) = forces(&fp, &fj);
        let (am, bm, cm, dm) = forces(&fm, &fj);
        check(
            (
                (ap - am) / (2.0 * FD_STEP),
                (bp - bm) / (2.0 * FD_STEP),
                (cp - cm) / (2.0 * FD_STEP),
                (dp - dm) / (2.0 * FD_STEP),
            ),
            [
                sens.f_i.d_r_i.column(k).into(),
                sens.n_i.d_r_i.column(k).into(),
                sens.f_j.d_r_i.column(k).into(),
                sens.n_j.d_r_i.column(k).into(),
            ],
        );
        // d/d theta_i
        let mut fp = fi.clone();
        fp.a = fi.a * so3::exp_so3(&e);
        let mut fm = fi.clone();
        fm.a = fi.a * so3::exp_so3(&(-e));
        let (ap, bp, cp, dp) = forces(&fp, &fj);
        let (am, bm, cm, dm) = forces(&fm, &fj);
        check(
            (
                (ap - am) / (2.0 * FD_STEP),
                (bp - bm) / (2.0 * FD_STEP),
                (cp - cm) / (2.0 * FD_STEP),
                (dp - dm) / (2.0 * FD_STEP),
            ),
            [
                sens.f_i.d_th_i.column(k).into(),
                sens.n_i.d_th_i.column(k).into(),
                sens.f_j.d_th_i.column(k).into(),
                sens.n_j.d_th_i.column(k).into(),
            ],
        );
        // d/d r_j
        let mut fp = fj.clone();
        fp.r += e;
        let mut fm = fj.clone();
        fm.r -= e;
        let (ap, bp, cp, dp) = forces(&fi, &fp);
        let (am, bm, cm, dm) = forces(&fi, &fm);
        check(
            (
                (ap - am) / (2.0 * FD_STEP),
                (bp - bm) / (2.0 * FD_STEP),
                (cp - cm) / (2.0 * FD_STEP),
                (dp - dm) / (2.0 * FD_STEP),
            ),
            [
                sens.f_i.d_r_j.column(k).into(),
                sens.n_i.d_r_j.column(k).into(),
                sens.f_j.d_r_j.column(k).into(),
                sens.n_j.d_r_j.column(k).into(),
            ],
        );
        // d/d theta_j
        let mut fp = fj.clone();
        fp.a = fj.a * so3::exp_so3(&e);
        let mut fm = fj.clone();
        fm.a = fj.a * so3::exp_so3(&(-e));
        let (ap, bp, cp, dp) = forces(&fi, &fp);
        let (am, bm, cm, dm) = forces(&fi, &fm);
        check(
            (
                (ap - am) / (2.0 * FD_STEP),
                (bp - bm) / (2.0 * FD_STEP),
                (cp - cm) / (2.0 * FD_STEP),
                (dp - dm) / (2.0 * FD_STEP),
            ),
            [
                sens.f_i.d_th_j.column(k).into(),
                sens.n_i.d_th_j.column(k).into(),
                sens.f_j.d_th_j.column(k).into(),
                sens.n_j.d_th_j.column(k).into(),
            ],
        );
    }
    worst
}

// ---------------------------------------------------------------------------
// rotation-algebra oracles

fn b_matrix_trial(rng: &mut ChaCha8Rng) -> f64 {
    let p = Vec4::new(
        uniform(rng, -1.0, 1.0),
        uniform(rng, -1.0, 1.0),
        uniform(rng, -1.0, 1.0),
        uniform(rng, -1.0, 1.0),
    );
    let s = rand_vec(rng, 2.0);
    let b = so3::b_matrix(&p, &s);
    let mut worst = 0.0_f64;
    for k in 0..4 {
        let mut e = Vec4::zeros();
        e[k] = FD_STEP;
        let fd = (so3::a_from_p_raw(&(p + e)) * s - so3::a_from_p_raw(&(p - e)) * s)
            / (2.0 * FD_STEP);
        worst = worst.max(rel((Vec3::from(b.column(k)) - fd).amax(), b.amax()));
    }
    worst
}

fn b_p_trial(rng: &mut ChaCha8Rng) -> f64 {
    let x = Vec4::new(
        uniform(rng, -2.0, 2.0),
        uniform(rng, -2.0, 2.0),
        uniform(rng, -2.0, 2.0),
        uniform(rng, -2.0, 2.0),
    );
    let null_err = (so3::b_p_matrix(&x) * x).amax();
    let p = so3::p_from_matrix(&rand_rotation(rng, false));
    let b = so3::b_p_matrix(&p);
    let ortho_err = (b * b.transpose() - Mat3::identity()).amax();
    null_err.max(ortho_err)
}

fn b_eps_trial(rng: &mut ChaCha8Rng) -> f64 {
    let eps = so3::eps_from_matrix(&rand_rotation(rng, true));
    let eps_dot = rand_vec(rng, 1.0);
    let der = so3::a_eps_derivatives(&eps, &eps_dot);
    let om = so3::b_eps_matrix(&eps) * eps_dot;
    (tilde(&om) - der.a.transpose() * der.a_dot).amax()
}

fn d_matrix_trial(rng: &mut ChaCha8Rng) -> f64 {
    let e0 = so3::eps_from_matrix(&rand_rotation(rng, true));
    let e1 = rand_vec(rng, 1.0);
    let e2 = rand_vec(rng, 1.0);
    let der = so3::a_eps_derivatives(&e0, &e1);
    let addot = der.a_ddot(&e2);
    let h = 1e-3;
    let at = |t: f64| so3::a_from_eps(&(e0 + e1 * t + 0.5 * e2 * t * t));
    let mut worst = 0.0_f64;
    for r in 0..3 {
        for c in 0..3 {
            let fd = d2_5point(|t| at(t)[(r, c)], h);
            worst = worst.max(rel((addot[(r, c)] - fd).abs(), 1.0));
        }
    }
    worst
}

/// All derivative oracles with their tolerances.
pub fn standard_items() -> Vec<OracleItem> {
    let mut items: Vec<OracleItem> = Vec::new();
    for kind in KINDS {
        items.push(OracleItem {
            name: format!("jac/rA/{kind}"),
            tol: 1e-5,
            run: Box::new(move |rng| jac_ra_trial(rng, kind)),
        });
    }
    for kind in KINDS {
        items.push(OracleItem {
            name: format!("jac/rp/{kind}"),
            tol: 1e-6,
            run: Box::new(move |rng| jac_rp_trial(rng, kind)),
        });
    }
    for kind in KINDS {
        items.push(OracleItem {
            name: format!("jac/reps/{kind}"),
            tol: 1e-6,
            run: Box::new(move |rng| jac_eps_trial(rng, kind)),
        });
    }
    for kind in KINDS {
        items.push(OracleItem {
            name: format!("gamma/rA/{kind}"),
            tol: 1e-5,
            run: Box::new(move |rng| gamma_ra_trial(rng, kind)),
        });
    }
    for kind in KINDS {
        items.push(OracleItem {
            name: format!("gamma/rp/{kind}"),
            tol: 1e-5,
            run: Box::new(move |rng| gamma_rp_trial(rng, kind)),
        });
    }
    for kind in KINDS {
        items.push(OracleItem {
            name: format!("gamma/reps/{kind}"),
            tol: 1e-5,
            run: Box::new(move |rng| gamma_eps_trial(rng, kind)),
        });
    }
    for kind in KINDS {
        items.push(OracleItem {
            name: format!("reaction/{kind}"),
            tol: 1e-5,
            run: Box::new(move |rng| reaction_trial(rng, kind)),
        });
    }
    items.push(OracleItem {
        name: "so3/b_matrix".into(),
        tol: 1e-8,
        run: Box::new(b_matrix_trial),
    });
    items.push(OracleItem {
        name: "so3/b_p_identities".into(),
        tol: 1e-12,
        run: Box::new(b_p_trial),
    });
    items.push(OracleItem {
        name: "so3/b_eps_vs_AtAdot".into(),
        tol: 1e-12,
        run: Box::new(b_eps_trial),
    });
    items.push(OracleItem {
        name: "so3/d_matrix".into(),
        tol: 1e-5,
        run: Box::new(d_matrix_trial),
    });
    items
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_suite_passes_at_default_size() {
        let reports = run_fdcheck(1234, 25);
        for r in &reports {
            assert!(r.pass, "{}: max rel err {} > {}", r.item, r.max_rel_err, r.tol);
        }
        assert_eq!(reports.len(), standard_items().len());
    }

    #[test]
    fn reports_are_deterministic_for_a_seed() {
        let a = run_fdcheck(42, 10);
        let b = run_fdcheck(42, 10);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.item, y.item);
            assert_eq!(x.max_rel_err, y.max_rel_err);
        }
    }

    #[test]
    fn corrupted_jacobian_entry_is_flagged() {
        // same harness, one deliberately wrong block: the DP1 theta_i row
        // with a flipped sign must trip exactly this item
        let bad = OracleItem {
            name: "jac/rA/DP1-corrupted".into(),
            tol: 1e-5,
            run: Box::new(|rng| {
                let g = rand_gcon(rng, "DP1");
                let fi = rand_ra_body(rng, false);
                let fj = rand_ra_body(rng, false);
                let mut row = gcon::jac_ra(&g, &fi, &fj);
                row.th_i = -row.th_i; // corruption
                let t = 0.3;
                let phi =
                    |fi: &RaBody, fj: &RaBody| gcon::phi_at(&g, &fi.r, &fi.a, &fj.r, &fj.a, t);
                let mut worst = 0.0_f64;
                for k in 0..3 {
                    let mut e = Vec3::zeros();
                    e[k] = FD_STEP;
                    let mut fp = fi.clone();
                    fp.a = fi.a * so3::exp_so3(&e);
                    let mut fm = fi.clone();
                    fm.a = fi.a * so3::exp_so3(&(-e));
                    let fd = (phi(&fp, &fj) - phi(&fm, &fj)) / (2.0 * FD_STEP);
                    worst = worst.max(rel((fd - row.th_i[k]).abs(), row.th_i.amax()));
                }
                worst
            }),
        };
        let good = &standard_items()[0..1]; // jac/rA/DP1
        let mut items = standard_items();
        items.push(bad);
        let reports = run_items(&items, 7, 5);
        let flagged: Vec<_> = reports.iter().filter(|r| !r.pass).collect();
        assert_eq!(flagged.len(), 1);
        assert_eq!(flagged[0].item, "jac/rA/DP1-corrupted");
        let _ = good;
    }
}
