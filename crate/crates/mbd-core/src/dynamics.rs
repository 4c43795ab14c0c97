//! Index-3 DAE dynamics: the Newton-Euler equations of motion with
//! position-level constraints enforced directly, discretized by a
//! first-order implicit Euler scheme and solved per step with a full Newton
//! iteration on the accelerations and Lagrange multipliers.
//!
//! The rotation-matrix form integrates the orientation through the
//! exponential map, `A_{n+1} = A_n exp_so3(h omega_bar_{n+1})`, so the
//! iterate never leaves SO(3); the Euler-parameter and Euler-angle forms use
//! plain backward-Euler updates on their coordinates. Constraint rows are
//! scaled by `1/h^2` to keep the iteration matrix well conditioned.
//!
//! Iteration matrices: the rotation-matrix form assembles its Newton matrix
//! fully analytically (mass/inertia, gyroscopic terms, and the reaction
//! force/torque sensitivities of `gcon`); the other two forms keep the
//! multiplier columns and constraint rows analytic and fill the acceleration
//! columns of the equation-of-motion rows by central differences of the
//! residual (step 1e-7). The converged solution of a step does not depend on
//! this choice, only the iteration path does.

use crate::assemble;
use crate::gcon::{EpsBody, RaBody, RpBody};
use crate::model::{Gcon, MechanismModel};
use crate::linsolve;
use crate::so3::{self, tilde};
use crate::state::{
    self, omega_dot_from_eps, omega_dot_from_rp, omega_from_eps, omega_from_rp, BodyRecord,
    Formulation, SolveError, GIMBAL_TOL,
};
use crate::{DMat, DVec, Mat3, Vec3, Vec4};

#[derive(Debug, Clone)]
pub struct DynamicsConfig {
    pub formulation: Formulation,
    pub h: f64,
    pub t_end: f64,
    /// Newton stopping threshold on the 2-norm of the correction.
    pub theta: f64,
    /// Tie the threshold to the expected position accuracy:
    /// `theta = 1e-11 / h^2`.
    pub auto_theta: bool,
    pub max_iter: usize,
}

impl DynamicsConfig {
    pub fn new(formulation: Formulation, h: f64, t_end: f64, theta: f64) -> Self {
        DynamicsConfig { formulation, h, t_end, theta, auto_theta: false, max_iter: 50 }
    }

    pub fn with_auto_theta(formulation: Formulation, h: f64, t_end: f64) -> Self {
        DynamicsConfig {
            formulation,
            h,
            t_end,
            theta: 0.0,
            auto_theta: true,
            max_iter: 50,
        }
    }

    pub fn effective_theta(&self) -> f64 {
        if self.auto_theta {
            1e-11 / (self.h * self.h)
        } else {
            self.theta
        }
    }
}

/// Side length of the square Newton system one dynamics step solves.
pub fn newton_system_dim(model: &MechanismModel, formulation: Formulation) -> usize {
    let nb = model.nb();
    match formulation {
        // 3nb translational + 4nb orientation + nc + nb normalization rows
        Formulation::Rp => 8 * nb + model.nc(),
        _ => 6 * nb + model.nc(),
    }
}

#[derive(Debug, Clone)]
pub struct DynStepRecord {
    pub t: f64,
    pub bodies: Vec<BodyRecord>,
    pub lambda: Vec<f64>,
    /// Euler-normalization multipliers; empty outside the rp formulation.
    pub lambda_p: Vec<f64>,
    pub iterations: usize,
    pub delta_norm: f64,
    pub phi_inf: f64,
    /// max over bodies of |p^T p / 2 - 1/2| (rp only, else 0)
    pub p_norm_err: f64,
}

#[derive(Debug, Clone)]
pub struct TrajectoryLog {
    pub formulation: Formulation,
    pub h: f64,
    pub theta: f64,
    /// `records[0]` is the consistent initial state; one record per step after.
    pub records: Vec<DynStepRecord>,
}

impl TrajectoryLog {
    pub fn mean_iterations(&self) -> f64 {
        let steps = &self.records[1..];
        if steps.is_empty() {
            return 0.0;
        }
        steps.iter().map(|r| r.iterations as f64).sum::<f64>() / steps.len() as f64
    }

    pub fn max_iterations(&self) -> usize {
        self.records[1..].iter().map(|r| r.iterations).max().unwrap_or(0)
    }
}

/// Native per-formulation solver state at one converged time.
#[derive(Debug, Clone)]
pub enum DynState {
    Ra { t: f64, bodies: Vec<RaBody>, accel: DVec, lambda: DVec },
    Rp { t: f64, bodies: Vec<RpBody>, accel: DVec, lambda: DVec, lambda_p: DVec },
    Eps { t: f64, bodies: Vec<EpsBody>, accel: DVec, lambda: DVec },
}

fn inertia_mat(model: &MechanismModel, slot: usize) -> Mat3 {
    Mat3::from_diagonal(&model.bodies[slot].inertia)
}

/// Generalized applied torque of the Euler-parameter equations of motion
/// (applied torques are zero here, gravity acts at the mass center):
/// `tau_hat = 8 Bdot^T J Bdot p`.
fn tau_hat(jbar: &Mat3, p: &Vec4, pdot: &Vec4) -> Vec4 {
    let bdot = so3::b_p_matrix(pdot);
    8.0 * bdot.transpose() * jbar * bdot * p
}

/// Generalized applied torque of the Euler-angle equations of motion:
/// `tau_breve = B^T (-tilde(B edot) J B edot - J Bdot edot)`, with the rate
/// maps taken from the body's cache.
fn tau_breve(jbar: &Mat3, body: &EpsBody) -> Vec3 {
    let om = body.beps * body.eps_dot;
    body.beps.transpose() * (-tilde(&om) * jbar * om - jbar * (body.beps_dot * body.eps_dot))
}

// ---------------------------------------------------------------------------
// consistent initial conditions

/// Solve the linear KKT system
/// `[M_hat, J^T; J, 0] [accel; lambda] = [applied; gamma]`
/// for the initial accelerations and multipliers of a model whose initial
/// positions and velocities already satisfy the constraints.
pub fn initial_conditions_solve(
    model: &MechanismModel,
    formulation: Formulation,
) -> Result<DynState, SolveError> {
    let nb = model.nb();
    match formulation {
        Formulation::Ra => {
            let bodies = state::initial_ra_bodies(model);
            let rows = assemble::ra_rows(model, &bodies);
            let jac = assemble::ra_matrix(model, &rows);
            let phi = assemble::ra_phi(model, &bodies, 0.0);
            let mut qdot = DVec::zeros(6 * nb);
            for (s, b) in bodies.iter().enumerate() {
                qdot.fixed_rows_mut::<3>(3 * s).copy_from(&b.rdot);
                qdot.fixed_rows_mut::<3>(3 * nb + 3 * s).copy_from(&b.omega_bar);
            }
            let vel_resid = (&jac * &qdot - assemble::nu_vec(model, 0.0)).amax();
            check_consistent(phi.amax(), vel_resid)?;

            let n = 6 * nb + model.nc();
            let mut k = DMat::zeros(n, n);
            let mut rhs = DVec::zeros(n);
            for (s, b) in bodies.iter().enumerate() {
                let m = model.bodies[s].mass;
                let jb = inertia_mat(model, s);
                for d in 0..3 {
                    k[(3 * s + d, 3 * s + d)] = m;
                }
                k.view_mut((3 * nb + 3 * s, 3 * nb + 3 * s), (3, 3)).copy_from(&jb);
                rhs.fixed_rows_mut::<3>(3 * s).copy_from(&(m * model.gravity));
                let gyro = -tilde(&b.omega_bar) * jb * b.omega_bar;
                rhs.fixed_rows_mut::<3>(3 * nb + 3 * s).copy_from(&gyro);
            }
            k.view_mut((0, 6 * nb), (6 * nb, model.nc()))
                .copy_from(&jac.transpose());
            k.view_mut((6 * nb, 0), (model.nc(), 6 * nb)).copy_from(&jac);
            rhs.rows_mut(6 * nb, model.nc())
                .copy_from(&assemble::ra_gamma(model, &bodies, 0.0));
            let sol = k.lu().solve(&rhs).ok_or(SolveError::SingularIteration { t: 0.0 })?;
            Ok(DynState::Ra {
                t: 0.0,
                bodies,
                accel: sol.rows(0, 6 * nb).into_owned(),
                lambda: sol.rows(6 * nb, model.nc()).into_owned(),
            })
        }
        Formulation::Rp => {
            let bodies = state::initial_rp_bodies(model);
            let rows = assemble::rp_rows(model, &bodies);
            let jac = assemble::rp_matrix_hat(model, &bodies, &rows);
            let phi = assemble::rp_phi_hat(model, &bodies, 0.0);
            let mut qdot = DVec::zeros(7 * nb);
            for (s, b) in bodies.iter().enumerate() {
                qdot.fixed_rows_mut::<3>(3 * s).copy_from(&b.rdot);
                qdot.fixed_rows_mut::<4>(3 * nb + 4 * s).copy_from(&b.pdot);
            }
            let vel_resid = (&jac * &qdot - assemble::rp_nu_hat(model, 0.0)).amax();
            check_consistent(phi.amax(), vel_resid)?;

            let nq = 7 * nb;
            let ncon = model.nc() + nb;
            let n = nq + ncon;
            let mut k = DMat::zeros(n, n);
            let mut rhs = DVec::zeros(n);
            for (s, b) in bodies.iter().enumerate() {
                let m = model.bodies[s].mass;
                let jb = inertia_mat(model, s);
                for d in 0..3 {
                    k[(3 * s + d, 3 * s + d)] = m;
                }
                let bp = so3::b_p_matrix(&b.p);
                let jp = 4.0 * bp.transpose() * jb * bp;
                k.view_mut((3 * nb + 4 * s, 3 * nb + 4 * s), (4, 4)).copy_from(&jp);
                rhs.fixed_rows_mut::<3>(3 * s).copy_from(&(m * model.gravity));
                rhs.fixed_rows_mut::<4>(3 * nb + 4 * s)
                    .copy_from(&tau_hat(&jb, &b.p, &b.pdot));
            }
            k.view_mut((0, nq), (nq, ncon)).copy_from(&jac.transpose());
            k.view_mut((nq, 0), (ncon, nq)).copy_from(&jac);
            rhs.rows_mut(nq, ncon)
                .copy_from(&assemble::rp_gamma_hat(model, &bodies, 0.0));
            let sol = k.lu().solve(&rhs).ok_or(SolveError::SingularIteration { t: 0.0 })?;
            Ok(DynState::Rp {
                t: 0.0,
                bodies,
                accel: sol.rows(0, nq).into_owned(),
                lambda: sol.rows(nq, model.nc()).into_owned(),
                lambda_p: sol.rows(nq + model.nc(), nb).into_owned(),
            })
        }
        Formulation::REps => {
            let bodies = state::initial_eps_bodies(model)?;
            let rows = assemble::eps_rows(model, &bodies);
            let jac = assemble::eps_matrix(model, &rows);
            let phi = assemble::eps_phi(model, &bodies, 0.0);
            let mut qdot = DVec::zeros(6 * nb);
            for (s, b) in bodies.iter().enumerate() {
                qdot.fixed_rows_mut::<3>(3 * s).copy_from(&b.rdot);
                qdot.fixed_rows_mut::<3>(3 * nb + 3 * s).copy_from(&b.eps_dot);
            }
            let vel_resid = (&jac * &qdot - assemble::nu_vec(model, 0.0)).amax();
            check_consistent(phi.amax(), vel_resid)?;

            let n = 6 * nb + model.nc();
            let mut k = DMat::zeros(n, n);
            let mut rhs = DVec::zeros(n);
            for (s, b) in bodies.iter().enumerate() {
                let m = model.bodies[s].mass;
                let jb = inertia_mat(model, s);
                for d in 0..3 {
                    k[(3 * s + d, 3 * s + d)] = m;
                }
                let be = b.beps;
                let je = be.transpose() * jb * be;
                k.view_mut((3 * nb + 3 * s, 3 * nb + 3 * s), (3, 3)).copy_from(&je);
                rhs.fixed_rows_mut::<3>(3 * s).copy_from(&(m * model.gravity));
                rhs.fixed_rows_mut::<3>(3 * nb + 3 * s)
                    .copy_from(&tau_breve(&jb, b));
            }
            k.view_mut((0, 6 * nb), (6 * nb, model.nc()))
                .copy_from(&jac.transpose());
            k.view_mut((6 * nb, 0), (model.nc(), 6 * nb)).copy_from(&jac);
            rhs.rows_mut(6 * nb, model.nc())
                .copy_from(&assemble::eps_gamma(model, &bodies, 0.0));
            let sol = k.lu().solve(&rhs).ok_or(SolveError::SingularIteration { t: 0.0 })?;
            Ok(DynState::Eps {
                t: 0.0,
                bodies,
                accel: sol.rows(0, 6 * nb).into_owned(),
                lambda: sol.rows(6 * nb, model.nc()).into_owned(),
            })
        }
    }
}

fn check_consistent(pos: f64, vel: f64) -> Result<(), SolveError> {
    if pos > 1e-8 || vel > 1e-8 {
        return Err(SolveError::InconsistentInitialConditions { pos, vel });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// rotation-matrix step

fn ra_reconstruct(base: &[RaBody], h: f64, accel: &DVec) -> Vec<RaBody> {
    let mut frames = Vec::with_capacity(base.len());
    ra_reconstruct_into(base, h, accel, &mut frames);
    frames
}

fn ra_reconstruct_into(base: &[RaBody], h: f64, accel: &DVec, frames: &mut Vec<RaBody>) {
    let nb = base.len();
    frames.clear();
    for (s, b) in base.iter().enumerate() {
        let rddot: Vec3 = accel.fixed_rows::<3>(3 * s).into_owned();
        let omdot: Vec3 = accel.fixed_rows::<3>(3 * nb + 3 * s).into_owned();
        let rdot = b.rdot + h * rddot;
        let omega_bar = b.omega_bar + h * omdot;
        frames.push(RaBody {
            r: b.r + h * rdot,
            a: b.a * so3::exp_so3(&(h * omega_bar)),
            rdot,
            omega_bar,
        });
    }
}

/// Residual of the discretized equations of motion, written into `g`.
/// `fc` and `ncq` are per-body scratch for the constraint force and torque
/// `f^c = -[Phi_r]^T lambda`, `n^c = -[Pi_bar(Phi)]^T lambda`.
#[allow(clippy::too_many_arguments)]
fn ra_residual_into(
    model: &MechanismModel,
    frames: &[RaBody],
    rows: &[crate::gcon::RowRa],
    accel: &DVec,
    lambda: &DVec,
    t: f64,
    h: f64,
    fc: &mut [Vec3],
    ncq: &mut [Vec3],
    g: &mut DVec,
) {
    let nb = model.nb();
    fc.fill(Vec3::zeros());
    ncq.fill(Vec3::zeros());
    for (k, (gc, row)) in model.gcons.iter().zip(rows).enumerate() {
        let (i, j) = gc.bodies();
        let l = lambda[k];
        if let Some(s) = assemble::slot_of(model, i) {
            fc[s] -= l * row.r_i.transpose();
            ncq[s] -= l * row.th_i.transpose();
        }
        if let Some(s) = assemble::slot_of(model, j) {
            fc[s] -= l * row.r_j.transpose();
            ncq[s] -= l * row.th_j.transpose();
        }
    }
    for (s, b) in frames.iter().enumerate() {
        let m = model.bodies[s].mass;
        let jb = inertia_mat(model, s);
        let rddot: Vec3 = accel.fixed_rows::<3>(3 * s).into_owned();
        let omdot: Vec3 = accel.fixed_rows::<3>(3 * nb + 3 * s).into_owned();
        g.fixed_rows_mut::<3>(3 * s)
            .copy_from(&(m * rddot - m * model.gravity - fc[s]));
        let rot = jb * omdot + tilde(&b.omega_bar) * jb * b.omega_bar - ncq[s];
        g.fixed_rows_mut::<3>(3 * nb + 3 * s).copy_from(&rot);
    }
    let ground = RaBody::ground();
    let h2 = h * h;
    for (k, gc) in model.gcons.iter().enumerate() {
        let (fi, fj) = assemble::frame_pair(model, frames, &ground, gc);
        g[6 * nb + k] = crate::gcon::phi_at(gc, &fi.r, &fi.a, &fj.r, &fj.a, t) / h2;
    }
}

fn ra_newton_matrix_into(
    model: &MechanismModel,
    frames: &[RaBody],
    rows: &[crate::gcon::RowRa],
    lambda: &DVec,
    h: f64,
    g: &mut DMat,
) {
    let nb = model.nb();
    let h2 = h * h;
    g.fill(0.0);
    let ground = RaBody::ground();

    for (s, b) in frames.iter().enumerate() {
        let m = model.bodies[s].mass;
        let jb = inertia_mat(model, s);
        for d in 0..3 {
            g[(3 * s + d, 3 * s + d)] = m;
        }
        // J - h (tilde(J w) - tilde(w) J): gyroscopic sensitivity of the
        // rotational equation to the angular-acceleration unknown
        let gy = jb - h * (tilde(&(jb * b.omega_bar)) - tilde(&b.omega_bar) * jb);
        g.view_mut((3 * nb + 3 * s, 3 * nb + 3 * s), (3, 3)).copy_from(&gy);
    }

    for (k, (gc, row)) in model.gcons.iter().zip(rows).enumerate() {
        let (i, j) = gc.bodies();
        let si = assemble::slot_of(model, i);
        let sj = assemble::slot_of(model, j);
        // multiplier columns and constraint rows
        if let Some(s) = si {
            g.view_mut((3 * s, 6 * nb + k), (3, 1)).copy_from(&row.r_i.transpose());
            g.view_mut((3 * nb + 3 * s, 6 * nb + k), (3, 1))
                .copy_from(&row.th_i.transpose());
            g.view_mut((6 * nb + k, 3 * s), (1, 3)).copy_from(&row.r_i);
            g.view_mut((6 * nb + k, 3 * nb + 3 * s), (1, 3)).copy_from(&row.th_i);
        }
        if let Some(s) = sj {
            g.view_mut((3 * s, 6 * nb + k), (3, 1)).copy_from(&row.r_j.transpose());
            g.view_mut((3 * nb + 3 * s, 6 * nb + k), (3, 1))
                .copy_from(&row.th_j.transpose());
            g.view_mut((6 * nb + k, 3 * s), (1, 3)).copy_from(&row.r_j);
            g.view_mut((6 * nb + k, 3 * nb + 3 * s), (1, 3)).copy_from(&row.th_j);
        }
        // reaction force/torque sensitivities, scaled by the integration
        // chain (h^2 from acceleration to position/orientation)
        let (fi, fj) = assemble::frame_pair(model, frames, &ground, gc);
        let sens = crate::gcon::reaction_sensitivities_ra(gc, fi, fj, lambda[k]);
        let mut quantity =
            |row_s: Option<usize>, rot_row: bool, blocks: &crate::gcon::ReactionBlocks| {
                let rs = match row_s {
                    Some(rs) if !blocks.all_zero => rs,
                    _ => return,
                };
                let r0 = if rot_row { 3 * nb + 3 * rs } else { 3 * rs };
                let mut add = |col_s: Option<usize>, rot_col: bool, blk: &Mat3| {
                    if let Some(cs) = col_s {
                        let c0 = if rot_col { 3 * nb + 3 * cs } else { 3 * cs };
                        let mut view = g.view_mut((r0, c0), (3, 3));
                        view += -h2 * blk;
                    }
                };
                add(si, false, &blocks.d_r_i);
                add(si, true, &blocks.d_th_i);
                add(sj, false, &blocks.d_r_j);
                add(sj, true, &blocks.d_th_j);
            };
        // translational equations get -h^2 d f^c / d(.), rotational
        // equations -h^2 d n^c / d(.)
        quantity(si, false, &sens.f_i);
        quantity(sj, false, &sens.f_j);
        quantity(si, true, &sens.n_i);
        quantity(sj, true, &sens.n_j);
    }
}

// ---------------------------------------------------------------------------
// Euler-parameter step

fn rp_reconstruct(base: &[RpBody], h: f64, accel: &DVec) -> Vec<RpBody> {
    let mut frames = Vec::with_capacity(base.len());
    rp_reconstruct_into(base, h, accel, &mut frames);
    frames
}

fn rp_reconstruct_into(base: &[RpBody], h: f64, accel: &DVec, frames: &mut Vec<RpBody>) {
    let nb = base.len();
    frames.clear();
    for (s, b) in base.iter().enumerate() {
        let rddot: Vec3 = accel.fixed_rows::<3>(3 * s).into_owned();
        let pddot: Vec4 = accel.fixed_rows::<4>(3 * nb + 4 * s).into_owned();
        let rdot = b.rdot + h * rddot;
        let pdot = b.pdot + h * pddot;
        frames.push(RpBody::new(b.r + h * rdot, b.p + h * pdot, rdot, pdot));
    }
}

/// Equation-of-motion rows (translational + Euler-parameter) of the
/// discretized system, as a function of the acceleration unknowns.
/// Sits inside the per-column finite-difference loop of the Newton matrix,
/// so frames and output reuse caller buffers and Jacobian rows are folded
/// in without being stored.
fn rp_eom_rows(
    model: &MechanismModel,
    base: &[RpBody],
    h: f64,
    accel: &DVec,
    lambda: &DVec,
    lambda_p: &DVec,
    frames: &mut Vec<RpBody>,
    g: &mut DVec,
) {
    let nb = model.nb();
    rp_reconstruct_into(base, h, accel, frames);
    for (s, b) in frames.iter().enumerate() {
        let m = model.bodies[s].mass;
        let jb = inertia_mat(model, s);
        let rddot: Vec3 = accel.fixed_rows::<3>(3 * s).into_owned();
        let pddot: Vec4 = accel.fixed_rows::<4>(3 * nb + 4 * s).into_owned();
        g.fixed_rows_mut::<3>(3 * s)
            .copy_from(&(m * rddot - m * model.gravity));
        let bp = so3::b_p_matrix(&b.p);
        let rot = 4.0 * bp.transpose() * jb * bp * pddot + b.p * lambda_p[s]
            - tau_hat(&jb, &b.p, &b.pdot);
        g.fixed_rows_mut::<4>(3 * nb + 4 * s).copy_from(&rot);
    }
    let ground = RpBody::ground();
    for (k, gc) in model.gcons.iter().enumerate() {
        let (fi, fj) = assemble::frame_pair(model, frames, &ground, gc);
        let row = crate::gcon::jac_rp(gc, fi, fj);
        let (i, j) = gc.bodies();
        let l = lambda[k];
        if let Some(s) = assemble::slot_of(model, i) {
            let mut v = g.fixed_rows_mut::<3>(3 * s);
            v += l * row.r_i.transpose();
            let mut v = g.fixed_rows_mut::<4>(3 * nb + 4 * s);
            v += l * row.p_i.transpose();
        }
        if let Some(s) = assemble::slot_of(model, j) {
            let mut v = g.fixed_rows_mut::<3>(3 * s);
            v += l * row.r_j.transpose();
            let mut v = g.fixed_rows_mut::<4>(3 * nb + 4 * s);
            v += l * row.p_j.transpose();
        }
    }
}

fn add_block<const R: usize, const C: usize>(
    g: &mut DMat,
    r0: usize,
    c0: usize,
    scale: f64,
    blk: &nalgebra::SMatrix<f64, R, C>,
) {
    for r in 0..R {
        for c in 0..C {
            g[(r0 + r, c0 + c)] += scale * blk[(r, c)];
        }
    }
}

/// Analytic first-order variation of the Euler-parameter constraint-force
/// terms `[Phi_r]^T lambda`, `[Phi_p]^T lambda + p lambda_p`, added into the
/// acceleration columns of the Newton matrix with the `h^2` integration
/// chain. Together these blocks are the Hessian of `lambda^T Phi`, so the
/// contribution is symmetric.
fn rp_force_sensitivity(
    model: &MechanismModel,
    frames: &[RpBody],
    lambda: &DVec,
    lambda_p: &DVec,
    h2: f64,
    g: &mut DMat,
) {
    let nb = model.nb();
    let ground = RpBody::ground();
    let rcol = |s: usize| 3 * s;
    let pcol = |s: usize| 3 * nb + 4 * s;
    for (k, gc) in model.gcons.iter().enumerate() {
        let l = lambda[k];
        if l == 0.0 {
            continue;
        }
        let (bi, bj) = gc.bodies();
        let (si, sj) = (assemble::slot_of(model, bi), assemble::slot_of(model, bj));
        let (fi, fj) = assemble::frame_pair(model, frames, &ground, gc);
        match gc {
            Gcon::Dp1 { a_i, a_j, .. } => {
                let gi = fi.a * a_i;
                let gj = fj.a * a_j;
                if let Some(s) = si {
                    add_block(g, pcol(s), pcol(s), l * h2, &so3::k_matrix(a_i, &gj));
                }
                if let Some(s) = sj {
                    add_block(g, pcol(s), pcol(s), l * h2, &so3::k_matrix(a_j, &gi));
                }
                if let (Some(s), Some(o)) = (si, sj) {
                    let b_i = so3::b_matrix(&fi.p, a_i);
                    let b_j = so3::b_matrix(&fj.p, a_j);
                    let cross = b_i.transpose() * b_j;
                    add_block(g, pcol(s), pcol(o), l * h2, &cross);
                    add_block(g, pcol(o), pcol(s), l * h2, &cross.transpose());
                }
            }
            Gcon::Dp2 { a_i, s_p_i, s_q_j, .. } => {
                let b_ai = so3::b_matrix(&fi.p, a_i);
                let b_p = so3::b_matrix(&fi.p, s_p_i);
                let b_q = so3::b_matrix(&fj.p, s_q_j);
                let gi = fi.a * a_i;
                let d = fj.r + fj.a * s_q_j - fi.r - fi.a * s_p_i;
                if let Some(s) = si {
                    add_block(g, rcol(s), pcol(s), -l * h2, &b_ai);
                    add_block(g, pcol(s), rcol(s), -l * h2, &b_ai.transpose());
                    let pp = so3::k_matrix(a_i, &d)
                        - b_ai.transpose() * b_p
                        - so3::k_matrix(s_p_i, &gi)
                        - b_p.transpose() * b_ai;
                    add_block(g, pcol(s), pcol(s), l * h2, &pp);
                }
                if let (Some(s), Some(o)) = (si, sj) {
                    add_block(g, rcol(o), pcol(s), l * h2, &b_ai);
                    add_block(g, pcol(s), rcol(o), l * h2, &b_ai.transpose());
                    let cross = b_ai.transpose() * b_q;
                    add_block(g, pcol(s), pcol(o), l * h2, &cross);
                    add_block(g, pcol(o), pcol(s), l * h2, &cross.transpose());
                }
                if let Some(s) = sj {
                    add_block(g, pcol(s), pcol(s), l * h2, &so3::k_matrix(s_q_j, &gi));
                }
            }
            Gcon::D { s_p_i, s_q_j, .. } => {
                let b_p = so3::b_matrix(&fi.p, s_p_i);
                let b_q = so3::b_matrix(&fj.p, s_q_j);
                let d = fj.r + fj.a * s_q_j - fi.r - fi.a * s_p_i;
                let l2 = 2.0 * l * h2;
                let eye = Mat3::identity();
                if let Some(s) = si {
                    add_block(g, rcol(s), rcol(s), l2, &eye);
                    add_block(g, rcol(s), pcol(s), l2, &b_p);
                    add_block(g, pcol(s), rcol(s), l2, &b_p.transpose());
                    let pp = b_p.transpose() * b_p - so3::k_matrix(s_p_i, &d);
                    add_block(g, pcol(s), pcol(s), l2, &pp);
                }
                if let Some(s) = sj {
                    add_block(g, rcol(s), rcol(s), l2, &eye);
                    add_block(g, rcol(s), pcol(s), -l2, &b_q);
                    add_block(g, pcol(s), rcol(s), -l2, &b_q.transpose());
                    let pp = b_q.transpose() * b_q + so3::k_matrix(s_q_j, &d);
                    add_block(g, pcol(s), pcol(s), l2, &pp);
                }
                if let (Some(s), Some(o)) = (si, sj) {
                    add_block(g, rcol(s), rcol(o), -l2, &eye);
                    add_block(g, rcol(o), rcol(s), -l2, &eye);
                    add_block(g, rcol(s), pcol(o), -l2, &b_q);
                    add_block(g, pcol(o), rcol(s), -l2, &b_q.transpose());
                    add_block(g, rcol(o), pcol(s), l2, &b_p);
                    add_block(g, pcol(s), rcol(o), l2, &b_p.transpose());
                    let cross = b_p.transpose() * b_q;
                    add_block(g, pcol(s), pcol(o), -l2, &cross);
                    add_block(g, pcol(o), pcol(s), -l2, &cross.transpose());
                }
            }
            Gcon::Cd { c, s_p_i, s_q_j, .. } => {
                if let Some(s) = si {
                    add_block(g, pcol(s), pcol(s), -l * h2, &so3::k_matrix(s_p_i, c));
                }
                if let Some(s) = sj {
                    add_block(g, pcol(s), pcol(s), l * h2, &so3::k_matrix(s_q_j, c));
                }
            }
        }
    }
    for s in 0..nb {
        let lp = lambda_p[s];
        for d in 0..4 {
            g[(pcol(s) + d, pcol(s) + d)] += h2 * lp;
        }
    }
}

// ---------------------------------------------------------------------------
// Euler-angle step

fn eps_reconstruct(
    base: &[EpsBody],
    h: f64,
    accel: &DVec,
    t: f64,
    model: &MechanismModel,
) -> Result<Vec<EpsBody>, SolveError> {
    let nb = base.len();
    base.iter()
        .enumerate()
        .map(|(s, b)| {
            let rddot: Vec3 = accel.fixed_rows::<3>(3 * s).into_owned();
            let eddot: Vec3 = accel.fixed_rows::<3>(3 * nb + 3 * s).into_owned();
            let rdot = b.rdot + h * rddot;
            let eps_dot = b.eps_dot + h * eddot;
            let eps = b.eps + h * eps_dot;
            if eps[1].sin().abs() < GIMBAL_TOL {
                return Err(SolveError::GimbalLock { t, body: model.bodies[s].id });
            }
            Ok(EpsBody::new(b.r + h * rdot, eps, rdot, eps_dot))
        })
        .collect()
}

/// Reconstruct Euler-angle frames into a reused buffer.
fn eps_reconstruct_into(
    base: &[EpsBody],
    h: f64,
    accel: &DVec,
    t: f64,
    model: &MechanismModel,
    frames: &mut Vec<EpsBody>,
) -> Result<(), SolveError> {
    let nb = base.len();
    frames.clear();
    for (s, b) in base.iter().enumerate() {
        let rddot: Vec3 = accel.fixed_rows::<3>(3 * s).into_owned();
        let eddot: Vec3 = accel.fixed_rows::<3>(3 * nb + 3 * s).into_owned();
        let rdot = b.rdot + h * rddot;
        let eps_dot = b.eps_dot + h * eddot;
        let eps = b.eps + h * eps_dot;
        if eps[1].sin().abs() < GIMBAL_TOL {
            return Err(SolveError::GimbalLock { t, body: model.bodies[s].id });
        }
        frames.push(EpsBody::new(b.r + h * rdot, eps, rdot, eps_dot));
    }
    Ok(())
}

fn eps_eom_rows(model: &MechanismModel, frames: &[EpsBody], accel: &DVec, lambda: &DVec, g: &mut DVec) {
    let nb = model.nb();
    for (s, b) in frames.iter().enumerate() {
        let m = model.bodies[s].mass;
        let jb = inertia_mat(model, s);
        let rddot: Vec3 = accel.fixed_rows::<3>(3 * s).into_owned();
        let eddot: Vec3 = accel.fixed_rows::<3>(3 * nb + 3 * s).into_owned();
        g.fixed_rows_mut::<3>(3 * s)
            .copy_from(&(m * rddot - m * model.gravity));
        let be = b.beps;
        let rot = be.transpose() * jb * be * eddot - tau_breve(&jb, b);
        g.fixed_rows_mut::<3>(3 * nb + 3 * s).copy_from(&rot);
    }
    let ground = EpsBody::ground();
    for (k, gc) in model.gcons.iter().enumerate() {
        let (fi, fj) = assemble::frame_pair(model, frames, &ground, gc);
        let row = crate::gcon::jac_eps(gc, fi, fj);
        let (i, j) = gc.bodies();
        let l = lambda[k];
        if let Some(s) = assemble::slot_of(model, i) {
            let mut v = g.fixed_rows_mut::<3>(3 * s);
            v += l * row.r_i.transpose();
            let mut v = g.fixed_rows_mut::<3>(3 * nb + 3 * s);
            v += l * row.e_i.transpose();
        }
        if let Some(s) = assemble::slot_of(model, j) {
            let mut v = g.fixed_rows_mut::<3>(3 * s);
            v += l * row.r_j.transpose();
            let mut v = g.fixed_rows_mut::<3>(3 * nb + 3 * s);
            v += l * row.e_j.transpose();
        }
    }
}

// ---------------------------------------------------------------------------
// stepping

const FD_JAC_STEP: f64 = 1e-7;

// Newton globalization: if the residual norm blows up past this factor,
// retreat half of the previous correction instead of taking a new step.
// Only ever triggers in the ill-conditioned neighborhood of a drive
// singularity (the correction threshold test is unaffected elsewhere).
const GROWTH_TOL: f64 = 4.0;
const MAX_HALVINGS: usize = 8;

/// Advance the state one step of size `h` to `t + h`.
pub fn step(model: &MechanismModel, st: &mut DynState, cfg: &DynamicsConfig) -> Result<DynStepRecord, SolveError> {
    let h = cfg.h;
    let theta = cfg.effective_theta();
    match st {
        DynState::Ra { t, bodies, accel, lambda } => {
            let t_next = *t + h;
            let nb = model.nb();
            let nc = model.nc();
            let n = 6 * nb + nc;
            let mut iterations = 0;
            let mut delta_norm = f64::INFINITY;
            let mut frames: Vec<RaBody> = Vec::with_capacity(nb);
            let mut rows: Vec<crate::gcon::RowRa> = Vec::with_capacity(nc);
            let mut fc = vec![Vec3::zeros(); nb];
            let mut ncq = vec![Vec3::zeros(); nb];
            let mut resid = DVec::zeros(n);
            let mut gmat = DMat::zeros(n, n);
            let mut piv = Vec::with_capacity(n);
            let mut last_delta = DVec::zeros(n);
            let mut prev_gnorm = f64::INFINITY;
            let mut halvings = 0;
            loop {
                iterations += 1;
                if delta_norm < theta {
                    break;
                }
                if iterations > cfg.max_iter {
                    return Err(SolveError::NonConvergence {
                        t: t_next,
                        iterations: iterations - 1,
                        delta_norm,
                    });
                }
                ra_reconstruct_into(bodies, h, accel, &mut frames);
                assemble::ra_rows_into(model, &frames, &mut rows);
                ra_residual_into(
                    model, &frames, &rows, accel, lambda, t_next, h, &mut fc, &mut ncq, &mut resid,
                );
                let gnorm = resid.norm();
                if gnorm > GROWTH_TOL * prev_gnorm && halvings < MAX_HALVINGS {
                    // overshoot (seen near drive singularities): retreat half
                    // of the last correction and re-evaluate
                    halvings += 1;
                    last_delta.scale_mut(0.5);
                    *accel -= last_delta.rows(0, 6 * nb);
                    *lambda -= last_delta.rows(6 * nb, nc);
                    delta_norm = last_delta.norm();
                    continue;
                }
                halvings = 0;
                prev_gnorm = gnorm;
                ra_newton_matrix_into(model, &frames, &rows, lambda, h, &mut gmat);
                resid.neg_mut();
                if !linsolve::solve_in_place(&mut gmat, &mut piv, &mut resid) {
                    return Err(SolveError::SingularIteration { t: t_next });
                }
                *accel += resid.rows(0, 6 * nb);
                *lambda += resid.rows(6 * nb, nc);
                last_delta.copy_from(&resid);
                delta_norm = resid.norm();
            }
            *bodies = ra_reconstruct(bodies, h, accel);
            *t = t_next;
            let phi_inf = assemble::ra_phi(model, bodies, t_next).amax();
            let recs = bodies
                .iter()
                .enumerate()
                .map(|(s, b)| BodyRecord {
                    id: model.bodies[s].id,
                    r: b.r,
                    a: b.a,
                    rdot: b.rdot,
                    omega_bar: b.omega_bar,
                    rddot: accel.fixed_rows::<3>(3 * s).into_owned(),
                    omega_bar_dot: accel.fixed_rows::<3>(3 * nb + 3 * s).into_owned(),
                })
                .collect();
            Ok(DynStepRecord {
                t: t_next,
                bodies: recs,
                lambda: lambda.iter().copied().collect(),
                lambda_p: Vec::new(),
                iterations,
                delta_norm,
                phi_inf,
                p_norm_err: 0.0,
            })
        }
        DynState::Rp { t, bodies, accel, lambda, lambda_p } => {
            let t_next = *t + h;
            let nb = model.nb();
            let nc = model.nc();
            let nq = 7 * nb;
            let n = nq + nc + nb;
            let mut iterations = 0;
            let mut delta_norm = f64::INFINITY;
            let mut frames: Vec<RpBody> = Vec::with_capacity(nb);
            let mut rows: Vec<crate::gcon::RowRp> = Vec::with_capacity(nc);
            let mut scratch_frames = Vec::with_capacity(nb);
            let mut eom_base = DVec::zeros(nq);
            let mut resid = DVec::zeros(n);
            let mut gmat = DMat::zeros(n, n);
            let mut piv = Vec::with_capacity(n);
            let mut last_delta = DVec::zeros(n);
            let mut prev_gnorm = f64::INFINITY;
            let mut halvings = 0;
            loop {
                iterations += 1;
                if delta_norm < theta {
                    break;
                }
                if iterations > cfg.max_iter {
                    return Err(SolveError::NonConvergence {
                        t: t_next,
                        iterations: iterations - 1,
                        delta_norm,
                    });
                }
                rp_reconstruct_into(bodies, h, accel, &mut frames);
                assemble::rp_rows_into(model, &frames, &mut rows);

                rp_eom_rows(model, bodies, h, accel, lambda, lambda_p, &mut scratch_frames, &mut eom_base);
                resid.rows_mut(0, nq).copy_from(&eom_base);
                let ground = RpBody::ground();
                for (k, gc) in model.gcons.iter().enumerate() {
                    let (fi, fj) = assemble::frame_pair(model, &frames, &ground, gc);
                    resid[nq + k] =
                        crate::gcon::phi_at(gc, &fi.r, &fi.a, &fj.r, &fj.a, t_next) / (h * h);
                }
                for (s, b) in frames.iter().enumerate() {
                    resid[nq + nc + s] = (0.5 * b.p.dot(&b.p) - 0.5) / (h * h);
                }
                let gnorm = resid.norm();
                if gnorm > GROWTH_TOL * prev_gnorm && halvings < MAX_HALVINGS {
                    halvings += 1;
                    last_delta.scale_mut(0.5);
                    *accel -= last_delta.rows(0, nq);
                    *lambda -= last_delta.rows(nq, nc);
                    *lambda_p -= last_delta.rows(nq + nc, nb);
                    delta_norm = last_delta.norm();
                    continue;
                }
                halvings = 0;
                prev_gnorm = gnorm;

                gmat.fill(0.0);
                // translational acceleration columns: the mass matrix (the
                // O(h^2) force chain through r is left to the residual)
                for s in 0..nb {
                    let m = model.bodies[s].mass;
                    for d in 0..3 {
                        gmat[(3 * s + d, 3 * s + d)] = m;
                    }
                }
                // orientation acceleration columns of the EOM rows by
                // the constraint-force sensitivities are closed-form via the
                // Hessians of s^T A(p) a; differencing them instead loses the
                // Jacobian to roundoff once multipliers grow near a drive
                // singularity (the force terms cancel catastrophically)
                rp_force_sensitivity(model, &frames, lambda, lambda_p, h * h, &mut gmat);
                // per-body generalized-inertia columns (direct term plus the
                // velocity/position chains of the gyroscopic part) by central
                // differences on benign scales
                for s in 0..nb {
                    let jb = inertia_mat(model, s);
                    let b = &bodies[s];
                    let pdd0: Vec4 = accel.fixed_rows::<4>(3 * nb + 4 * s).into_owned();
                    let local = |pdd: &Vec4| -> Vec4 {
                        let pdot = b.pdot + h * pdd;
                        let p = b.p + h * pdot;
                        let bp = so3::b_p_matrix(&p);
                        4.0 * bp.transpose() * jb * bp * pdd - tau_hat(&jb, &p, &pdot)
                    };
                    for k in 0..4 {
                        let mut e = Vec4::zeros();
                        e[k] = FD_JAC_STEP;
                        let col = (local(&(pdd0 + e)) - local(&(pdd0 - e))) / (2.0 * FD_JAC_STEP);
                        let mut view = gmat.view_mut((3 * nb + 4 * s, 3 * nb + 4 * s + k), (4, 1));
                        view += col;
                    }
                }
                // multiplier columns and constraint rows are analytic
                for (k, (gc, row)) in model.gcons.iter().zip(&rows).enumerate() {
                    let (i, j) = gc.bodies();
                    if let Some(s) = assemble::slot_of(model, i) {
                        gmat.view_mut((3 * s, nq + k), (3, 1)).copy_from(&row.r_i.transpose());
                        gmat.view_mut((3 * nb + 4 * s, nq + k), (4, 1))
                            .copy_from(&row.p_i.transpose());
                        gmat.view_mut((nq + k, 3 * s), (1, 3)).copy_from(&row.r_i);
                        gmat.view_mut((nq + k, 3 * nb + 4 * s), (1, 4)).copy_from(&row.p_i);
                    }
                    if let Some(s) = assemble::slot_of(model, j) {
                        gmat.view_mut((3 * s, nq + k), (3, 1)).copy_from(&row.r_j.transpose());
                        gmat.view_mut((3 * nb + 4 * s, nq + k), (4, 1))
                            .copy_from(&row.p_j.transpose());
                        gmat.view_mut((nq + k, 3 * s), (1, 3)).copy_from(&row.r_j);
                        gmat.view_mut((nq + k, 3 * nb + 4 * s), (1, 4)).copy_from(&row.p_j);
                    }
                }
                for (s, b) in frames.iter().enumerate() {
                    gmat.view_mut((3 * nb + 4 * s, nq + nc + s), (4, 1)).copy_from(&b.p);
                    gmat.view_mut((nq + nc + s, 3 * nb + 4 * s), (1, 4))
                        .copy_from(&b.p.transpose());
                }

                resid.neg_mut();
                if !linsolve::solve_in_place(&mut gmat, &mut piv, &mut resid) {
                    return Err(SolveError::SingularIteration { t: t_next });
                }
                *accel += resid.rows(0, nq);
                *lambda += resid.rows(nq, nc);
                *lambda_p += resid.rows(nq + nc, nb);
                last_delta.copy_from(&resid);
                delta_norm = resid.norm();
            }
            *bodies = rp_reconstruct(bodies, h, accel);
            *t = t_next;
            let phi_inf = {
                let full = assemble::rp_phi_hat(model, bodies, t_next);
                full.rows(0, nc).amax()
            };
            let p_norm_err = bodies
                .iter()
                .map(|b| (0.5 * b.p.dot(&b.p) - 0.5).abs())
                .fold(0.0, f64::max);
            let recs = bodies
                .iter()
                .enumerate()
                .map(|(s, b)| {
                    let pddot: Vec4 = accel.fixed_rows::<4>(3 * nb + 4 * s).into_owned();
                    BodyRecord {
                        id: model.bodies[s].id,
                        r: b.r,
                        a: b.a,
                        rdot: b.rdot,
                        omega_bar: omega_from_rp(&b.p, &b.pdot),
                        rddot: accel.fixed_rows::<3>(3 * s).into_owned(),
                        omega_bar_dot: omega_dot_from_rp(&b.p, &b.pdot, &pddot),
                    }
                })
                .collect();
            Ok(DynStepRecord {
                t: t_next,
                bodies: recs,
                lambda: lambda.iter().copied().collect(),
                lambda_p: lambda_p.iter().copied().collect(),
                iterations,
                delta_norm,
                phi_inf,
                p_norm_err,
            })
        }
        DynState::Eps { t, bodies, accel, lambda } => {
            let t_next = *t + h;
            let nb = model.nb();
            let nc = model.nc();
            let nq = 6 * nb;
            let n = nq + nc;
            let mut iterations = 0;
            let mut delta_norm = f64::INFINITY;
            let mut frames: Vec<EpsBody> = Vec::with_capacity(nb);
            let mut rows: Vec<crate::gcon::RowEps> = Vec::with_capacity(nc);
            let mut scratch_frames = Vec::with_capacity(nb);
            let mut eom_base = DVec::zeros(nq);
            let mut eom_pert = DVec::zeros(nq);
            let mut resid = DVec::zeros(n);
            let mut gmat = DMat::zeros(n, n);
            let mut piv = Vec::with_capacity(n);
            let mut last_delta = DVec::zeros(n);
            let mut prev_gnorm = f64::INFINITY;
            let mut halvings = 0;
            loop {
                iterations += 1;
                if delta_norm < theta {
                    break;
                }
                if iterations > cfg.max_iter {
                    return Err(SolveError::NonConvergence {
                        t: t_next,
                        iterations: iterations - 1,
                        delta_norm,
                    });
                }
                eps_reconstruct_into(bodies, h, accel, t_next, model, &mut frames)?;
                assemble::eps_rows_into(model, &frames, &mut rows);

                eps_eom_rows(model, &frames, accel, lambda, &mut eom_base);
                resid.rows_mut(0, nq).copy_from(&eom_base);
                let ground = EpsBody::ground();
                for (k, gc) in model.gcons.iter().enumerate() {
                    let (fi, fj) = assemble::frame_pair(model, &frames, &ground, gc);
                    resid[nq + k] =
                        crate::gcon::phi_at(gc, &fi.r, &fi.a, &fj.r, &fj.a, t_next) / (h * h);
                }
                let gnorm = resid.norm();
                if gnorm > GROWTH_TOL * prev_gnorm && halvings < MAX_HALVINGS {
                    halvings += 1;
                    last_delta.scale_mut(0.5);
                    *accel -= last_delta.rows(0, nq);
                    *lambda -= last_delta.rows(nq, nc);
                    delta_norm = last_delta.norm();
                    continue;
                }
                halvings = 0;
                prev_gnorm = gnorm;

                gmat.fill(0.0);
                for s in 0..nb {
                    let m = model.bodies[s].mass;
                    for d in 0..3 {
                        gmat[(3 * s + d, 3 * s + d)] = m;
                    }
                }
                let mut pert = accel.clone();
                for c in 3 * nb..nq {
                    pert[c] += FD_JAC_STEP;
                    eps_reconstruct_into(bodies, h, &pert, t_next, model, &mut scratch_frames)?;
                    eps_eom_rows(model, &scratch_frames, &pert, lambda, &mut eom_pert);
                    pert[c] = accel[c] - FD_JAC_STEP;
                    eps_reconstruct_into(bodies, h, &pert, t_next, model, &mut scratch_frames)?;
                    eps_eom_rows(model, &scratch_frames, &pert, lambda, &mut eom_base);
                    pert[c] = accel[c];
                    for r in 0..nq {
                        gmat[(r, c)] = (eom_pert[r] - eom_base[r]) / (2.0 * FD_JAC_STEP);
                    }
                }
                for (k, (gc, row)) in model.gcons.iter().zip(&rows).enumerate() {
                    let (i, j) = gc.bodies();
                    if let Some(s) = assemble::slot_of(model, i) {
                        gmat.view_mut((3 * s, nq + k), (3, 1)).copy_from(&row.r_i.transpose());
                        gmat.view_mut((3 * nb + 3 * s, nq + k), (3, 1))
                            .copy_from(&row.e_i.transpose());
                        gmat.view_mut((nq + k, 3 * s), (1, 3)).copy_from(&row.r_i);
                        gmat.view_mut((nq + k, 3 * nb + 3 * s), (1, 3)).copy_from(&row.e_i);
                    }
                    if let Some(s) = assemble::slot_of(model, j) {
                        gmat.view_mut((3 * s, nq + k), (3, 1)).copy_from(&row.r_j.transpose());
                        gmat.view_mut((3 * nb + 3 * s, nq + k), (3, 1))
                            .copy_from(&row.e_j.transpose());
                        gmat.view_mut((nq + k, 3 * s), (1, 3)).copy_from(&row.r_j);
                        gmat.view_mut((nq + k, 3 * nb + 3 * s), (1, 3)).copy_from(&row.e_j);
                    }
                }

                resid.neg_mut();
                if !linsolve::solve_in_place(&mut gmat, &mut piv, &mut resid) {
                    return Err(SolveError::SingularIteration { t: t_next });
                }
                *accel += resid.rows(0, nq);
                *lambda += resid.rows(nq, nc);
                last_delta.copy_from(&resid);
                delta_norm = resid.norm();
            }
            *bodies = eps_reconstruct(bodies, h, accel, t_next, model)?;
            *t = t_next;
            let phi_inf = assemble::eps_phi(model, bodies, t_next).amax();
            let recs = bodies
                .iter()
                .enumerate()
                .map(|(s, b)| {
                    let eddot: Vec3 = accel.fixed_rows::<3>(3 * nb + 3 * s).into_owned();
                    BodyRecord {
                        id: model.bodies[s].id,
                        r: b.r,
                        a: b.a,
                        rdot: b.rdot,
                        omega_bar: omega_from_eps(&b.eps, &b.eps_dot),
                        rddot: accel.fixed_rows::<3>(3 * s).into_owned(),
                        omega_bar_dot: omega_dot_from_eps(&b.eps, &b.eps_dot, &eddot),
                    }
                })
                .collect();
            Ok(DynStepRecord {
                t: t_next,
                bodies: recs,
                lambda: lambda.iter().copied().collect(),
                lambda_p: Vec::new(),
                iterations,
                delta_norm,
                phi_inf,
                p_norm_err: 0.0,
            })
        }
    }
}

fn initial_record(model: &MechanismModel, st: &DynState) -> DynStepRecord {
    let nb = model.nb();
    let (bodies, lambda, lambda_p) = match st {
        DynState::Ra { bodies, accel, lambda, .. } => {
            let recs = bodies
                .iter()
                .enumerate()
                .map(|(s, b)| BodyRecord {
                    id: model.bodies[s].id,
                    r: b.r,
                    a: b.a,
                    rdot: b.rdot,
                    omega_bar: b.omega_bar,
                    rddot: accel.fixed_rows::<3>(3 * s).into_owned(),
                    omega_bar_dot: accel.fixed_rows::<3>(3 * nb + 3 * s).into_owned(),
                })
                .collect();
            (recs, lambda.iter().copied().collect(), Vec::new())
        }
        DynState::Rp { bodies, accel, lambda, lambda_p, .. } => {
            let recs = bodies
                .iter()
                .enumerate()
                .map(|(s, b)| {
                    let pddot: Vec4 = accel.fixed_rows::<4>(3 * nb + 4 * s).into_owned();
                    BodyRecord {
                        id: model.bodies[s].id,
                        r: b.r,
                        a: b.a,
                        rdot: b.rdot,
                        omega_bar: omega_from_rp(&b.p, &b.pdot),
                        rddot: accel.fixed_rows::<3>(3 * s).into_owned(),
                        omega_bar_dot: omega_dot_from_rp(&b.p, &b.pdot, &pddot),
                    }
                })
                .collect();
            (recs, lambda.iter().copied().collect(), lambda_p.iter().copied().collect())
        }
        DynState::Eps { bodies, accel, lambda, .. } => {
            let recs = bodies
                .iter()
                .enumerate()
                .map(|(s, b)| {
                    let eddot: Vec3 = accel.fixed_rows::<3>(3 * nb + 3 * s).into_owned();
                    BodyRecord {
                        id: model.bodies[s].id,
                        r: b.r,
                        a: b.a,
                        rdot: b.rdot,
                        omega_bar: omega_from_eps(&b.eps, &b.eps_dot),
                        rddot: accel.fixed_rows::<3>(3 * s).into_owned(),
                        omega_bar_dot: omega_dot_from_eps(&b.eps, &b.eps_dot, &eddot),
                    }
                })
                .collect();
            (recs, lambda.iter().copied().collect(), Vec::new())
        }
    };
    DynStepRecord {
        t: 0.0,
        bodies,
        lambda,
        lambda_p,
        iterations: 0,
        delta_norm: 0.0,
        phi_inf: 0.0,
        p_norm_err: 0.0,
    }
}

/// March the dynamics from consistent initial conditions to `t_end`.
pub fn dynamics_run(model: &MechanismModel, cfg: &DynamicsConfig) -> Result<TrajectoryLog, SolveError> {
    let mut st = initial_conditions_solve(model, cfg.formulation)?;
    let steps = (cfg.t_end / cfg.h).round() as usize;
    let mut records = Vec::with_capacity(steps + 1);
    records.push(initial_record(model, &st));
    for _ in 0..steps {
        records.push(step(model, &mut st, cfg)?);
    }
    Ok(TrajectoryLog {
        formulation: cfg.formulation,
        h: cfg.h,
        theta: cfg.effective_theta(),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::load_model_str;
    use approx::assert_abs_diff_eq;

    fn free_body(omega0: [f64; 3]) -> MechanismModel {
        let text = format!(
            r#"{{
            "name": "free", "gravity": [0,0,-9.81],
            "bodies": [{{"id": 1, "mass": 2.0, "inertia": [0.4, 0.5, 0.6],
                        "r0": [0,0,0], "A0": [0,0,1, 1,0,0, 0,1,0],
                        "rdot0": [0.1,0,0], "omega_bar0": [{},{},{}]}}],
            "constraints": []
        }}"#,
            omega0[0], omega0[1], omega0[2]
        );
        load_model_str(&text).unwrap()
    }

    #[test]
    fn free_fall_matches_gravity_in_all_formulations() {
        let model = free_body([0.0, 0.0, 0.0]);
        for form in Formulation::ALL {
            let cfg = DynamicsConfig::new(form, 1e-3, 0.05, 1e-10);
            let log = dynamics_run(&model, &cfg).unwrap();
            for rec in &log.records[1..] {
                let b = &rec.bodies[0];
                assert_abs_diff_eq!(b.rddot, Vec3::new(0.0, 0.0, -9.81), epsilon = 1e-9);
                assert_abs_diff_eq!(b.omega_bar_dot, Vec3::zeros(), epsilon = 1e-9);
                assert!(rec.iterations <= 2, "{form}: {} iterations", rec.iterations);
            }
            // orientation stays put without initial spin
            let last = log.records.last().unwrap();
            assert_abs_diff_eq!(last.bodies[0].a, model.bodies[0].a0, epsilon = 1e-12);
        }
    }

    #[test]
    fn unconstrained_initial_conditions_are_gravity() {
        let model = free_body([0.2, -0.1, 0.3]);
        for form in Formulation::ALL {
            let st = initial_conditions_solve(&model, form).unwrap();
            let rec = initial_record(&model, &st);
            assert!(rec.lambda.is_empty());
            assert_abs_diff_eq!(rec.bodies[0].rddot, Vec3::new(0.0, 0.0, -9.81), epsilon = 1e-10);
        }
    }

    #[test]
    fn spinning_free_body_agrees_across_formulations() {
        // torque-free rigid body with unequal inertias: omega tumbles; the
        // three formulations must integrate the same physics to O(h)
        let model = free_body([1.3, 0.4, -0.8]);
        let h = 1e-3;
        let mut finals = Vec::new();
        for form in Formulation::ALL {
            // the 1/h^2-scaled rows put the correction floor near 1e-10;
            // 1e-8 is far below the O(h) discretization error compared here
            let cfg = DynamicsConfig::new(form, h, 0.5, 1e-8);
            let log = dynamics_run(&model, &cfg).unwrap();
            finals.push(log.records.last().unwrap().bodies[0].clone());
        }
        for other in &finals[1..] {
            assert!((finals[0].a - other.a).norm() < 50.0 * h, "attitudes diverged");
            assert!((finals[0].omega_bar - other.omega_bar).norm() < 50.0 * h);
        }
    }

    #[test]
    fn newton_dimensions_follow_formulation() {
        let model = free_body([0.0; 3]);
        assert_eq!(newton_system_dim(&model, Formulation::Ra), 6);
        assert_eq!(newton_system_dim(&model, Formulation::Rp), 8);
        assert_eq!(newton_system_dim(&model, Formulation::REps), 6);
    }

    #[test]
    fn rp_force_sensitivity_matches_finite_differences() {
        use crate::gcon::RpBody;
        use crate::model::{DriverFn, Gcon};
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;

        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut rv = |s: f64| {
            Vec3::new(
                rng.gen_range(-s..s),
                rng.gen_range(-s..s),
                rng.gen_range(-s..s),
            )
        };
        // two-body model scaffold: bodies 1 and 2, one gcon of each kind
        let text = r#"{
            "name": "pair", "gravity": [0,0,-9.81],
            "bodies": [
              {"id": 1, "mass": 1.0, "inertia": [1,1,1], "r0": [0,0,0],
               "A0": [1,0,0,0,1,0,0,0,1], "rdot0": [0,0,0], "omega_bar0": [0,0,0]},
              {"id": 2, "mass": 1.0, "inertia": [1,1,1], "r0": [1,0,0],
               "A0": [1,0,0,0,1,0,0,0,1], "rdot0": [0,0,0], "omega_bar0": [0,0,0]}
            ],
            "constraints": []
        }"#;
        let mut model = crate::model::load_model_str(text).unwrap();
        model.gcons = vec![
            Gcon::Dp1 { i: 1, j: 2, a_i: rv(1.0), a_j: rv(1.0), driver: DriverFn::ZERO },
            Gcon::Dp2 { i: 1, j: 2, a_i: rv(1.0), s_p_i: rv(1.0), s_q_j: rv(1.0), driver: DriverFn::ZERO },
            Gcon::D { i: 1, j: 2, s_p_i: rv(1.0), s_q_j: rv(1.0), driver: DriverFn::Constant { c: 1.0 } },
            Gcon::Cd { i: 1, j: 2, c: rv(1.0), s_p_i: rv(1.0), s_q_j: rv(1.0), driver: DriverFn::ZERO },
        ];
        let nb = 2;
        let nq = 7 * nb;
        let lambda = DVec::from_fn(4, |k, _| 0.5 + k as f64);
        let lambda_p = DVec::from_fn(nb, |s, _| 0.3 - s as f64);

        // coordinates: [r1 r2 | p1 p2]; force vector F(r, p) stacked the same way
        let coords0 = DVec::from_fn(nq, |k, _| match k {
            0..=5 => rng.gen_range(-1.0..1.0),
            _ => rng.gen_range(-0.7..0.7),
        });
        let force = |q: &DVec| -> DVec {
            let frames: Vec<RpBody> = (0..nb)
                .map(|s| {
                    let r = Vec3::from(q.fixed_rows::<3>(3 * s).into_owned());
                    let p = Vec4::from(q.fixed_rows::<4>(3 * nb + 4 * s).into_owned());
                    RpBody::new(r, p, Vec3::zeros(), Vec4::zeros())
                })
                .collect();
            let ground = RpBody::ground();
            let mut f = DVec::zeros(nq);
            for (k, gc) in model.gcons.iter().enumerate() {
                let (fi, fj) = crate::assemble::frame_pair(&model, &frames, &ground, gc);
                let row = crate::gcon::jac_rp(gc, fi, fj);
                let l = lambda[k];
                let (i, j) = gc.bodies();
                if let Some(s) = crate::assemble::slot_of(&model, i) {
                    let mut v = f.fixed_rows_mut::<3>(3 * s);
                    v += l * row.r_i.transpose();
                    let mut v = f.fixed_rows_mut::<4>(3 * nb + 4 * s);
                    v += l * row.p_i.transpose();
                }
                if let Some(s) = crate::assemble::slot_of(&model, j) {
                    let mut v = f.fixed_rows_mut::<3>(3 * s);
                    v += l * row.r_j.transpose();
                    let mut v = f.fixed_rows_mut::<4>(3 * nb + 4 * s);
                    v += l * row.p_j.transpose();
                }
            }
            for s in 0..nb {
                let p = Vec4::from(q.fixed_rows::<4>(3 * nb + 4 * s).into_owned());
                let mut v = f.fixed_rows_mut::<4>(3 * nb + 4 * s);
                v += p * lambda_p[s];
            }
            f
        };

        let frames: Vec<RpBody> = (0..nb)
            .map(|s| {
                let r = Vec3::from(coords0.fixed_rows::<3>(3 * s).into_owned());
                let p = Vec4::from(coords0.fixed_rows::<4>(3 * nb + 4 * s).into_owned());
                RpBody::new(r, p, Vec3::zeros(), Vec4::zeros())
            })
            .collect();
        let mut analytic = DMat::zeros(nq, nq);
        rp_force_sensitivity(&model, &frames, &lambda, &lambda_p, 1.0, &mut analytic);

        // symmetry: the blocks are the Hessian of lambda . Phi (plus the
        // normalization diagonal), hence symmetric
        assert!((analytic.clone() - analytic.transpose()).amax() < 1e-10);

        let eta = 1e-6;
        for c in 0..nq {
            let mut qp = coords0.clone();
            qp[c] += eta;
            let mut qm = coords0.clone();
            qm[c] -= eta;
            let col = (force(&qp) - force(&qm)) / (2.0 * eta);
            for r in 0..nq {
                let err = (analytic[(r, c)] - col[r]).abs();
                assert!(err < 1e-6 * col[r].abs().max(1.0), "block ({r},{c}): {} vs {}", analytic[(r, c)], col[r]);
            }
        }
    }

    #[test]
    fn inconsistent_velocities_rejected() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models");
        let mut model = crate::model::load_model(dir.join("single_pendulum.json")).unwrap();
        model.bodies[0].rdot0 = Vec3::new(1.0, 0.0, 0.0); // violates the velocity equation
        let err = initial_conditions_solve(&model, Formulation::Ra);
        assert!(matches!(err, Err(SolveError::InconsistentInitialConditions { .. })));
    }
}
