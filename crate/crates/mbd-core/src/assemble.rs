//! Assembly of per-constraint rows into global vectors and matrices.
//!
//! Unknown ordering is `[r blocks | orientation blocks]`, each in body slot
//! order; constraint rows follow model order. Ground blocks contribute no
//! columns. The Euler-parameter system appends one normalization row per
//! body after the kinematic rows.

use crate::gcon::{self, EpsBody, RaBody, RpBody};
use crate::model::{Gcon, MechanismModel, GROUND};
use crate::{DMat, DVec};

pub(crate) fn slot_of(model: &MechanismModel, id: usize) -> Option<usize> {
    (id != GROUND).then(|| model.slot[&id])
}

pub(crate) fn frame_pair<'a, T>(
    model: &MechanismModel,
    bodies: &'a [T],
    ground: &'a T,
    g: &Gcon,
) -> (&'a T, &'a T) {
    let (i, j) = g.bodies();
    let fi = slot_of(model, i).map_or(ground, |s| &bodies[s]);
    let fj = slot_of(model, j).map_or(ground, |s| &bodies[s]);
    (fi, fj)
}

// -------------------------------------------------------------------- rA

pub(crate) fn ra_phi(model: &MechanismModel, bodies: &[RaBody], t: f64) -> DVec {
    let ground = RaBody::ground();
    DVec::from_iterator(
        model.nc(),
        model.gcons.iter().map(|g| {
            let (fi, fj) = frame_pair(model, bodies, &ground, g);
            gcon::phi_at(g, &fi.r, &fi.a, &fj.r, &fj.a, t)
        }),
    )
}

pub(crate) fn ra_rows(model: &MechanismModel, bodies: &[RaBody]) -> Vec<gcon::RowRa> {
    let mut rows = Vec::with_capacity(model.nc());
    ra_rows_into(model, bodies, &mut rows);
    rows
}

pub(crate) fn ra_rows_into(model: &MechanismModel, bodies: &[RaBody], rows: &mut Vec<gcon::RowRa>) {
    let ground = RaBody::ground();
    rows.clear();
    rows.extend(model.gcons.iter().map(|g| {
        let (fi, fj) = frame_pair(model, bodies, &ground, g);
        gcon::jac_ra(g, fi, fj)
    }));
}

/// nc x 6nb constraint Jacobian, columns `[r | dtheta]`.
pub(crate) fn ra_matrix(model: &MechanismModel, rows: &[gcon::RowRa]) -> DMat {
    let nb = model.nb();
    let mut m = DMat::zeros(model.nc(), 6 * nb);
    for (k, (g, row)) in model.gcons.iter().zip(rows).enumerate() {
        let (i, j) = g.bodies();
        if let Some(s) = slot_of(model, i) {
            m.view_mut((k, 3 * s), (1, 3)).copy_from(&row.r_i);
            m.view_mut((k, 3 * nb + 3 * s), (1, 3)).copy_from(&row.th_i);
        }
        if let Some(s) = slot_of(model, j) {
            m.view_mut((k, 3 * s), (1, 3)).copy_from(&row.r_j);
            m.view_mut((k, 3 * nb + 3 * s), (1, 3)).copy_from(&row.th_j);
        }
    }
    m
}

pub(crate) fn nu_vec(model: &MechanismModel, t: f64) -> DVec {
    DVec::from_iterator(model.nc(), model.gcons.iter().map(|g| gcon::nu(g, t)))
}

pub(crate) fn ra_gamma(model: &MechanismModel, bodies: &[RaBody], t: f64) -> DVec {
    let ground = RaBody::ground();
    DVec::from_iterator(
        model.nc(),
        model.gcons.iter().map(|g| {
            let (fi, fj) = frame_pair(model, bodies, &ground, g);
            gcon::gamma_ra(g, fi, fj, t)
        }),
    )
}

// -------------------------------------------------------------------- rp

pub(crate) fn rp_phi_hat(model: &MechanismModel, bodies: &[RpBody], t: f64) -> DVec {
    let ground = RpBody::ground();
    let nb = model.nb();
    let mut v = DVec::zeros(model.nc() + nb);
    for (k, g) in model.gcons.iter().enumerate() {
        let (fi, fj) = frame_pair(model, bodies, &ground, g);
        v[k] = gcon::phi_at(g, &fi.r, &fi.a, &fj.r, &fj.a, t);
    }
    for (s, b) in bodies.iter().enumerate() {
        v[model.nc() + s] = 0.5 * b.p.dot(&b.p) - 0.5;
    }
    v
}

pub(crate) fn rp_rows(model: &MechanismModel, bodies: &[RpBody]) -> Vec<gcon::RowRp> {
    let mut rows = Vec::with_capacity(model.nc());
    rp_rows_into(model, bodies, &mut rows);
    rows
}

pub(crate) fn rp_rows_into(model: &MechanismModel, bodies: &[RpBody], rows: &mut Vec<gcon::RowRp>) {
    let ground = RpBody::ground();
    rows.clear();
    rows.extend(model.gcons.iter().map(|g| {
        let (fi, fj) = frame_pair(model, bodies, &ground, g);
        gcon::jac_rp(g, fi, fj)
    }));
}

/// (nc + nb) x 7nb Jacobian of the hatted constraint set, columns `[r | p]`.
pub(crate) fn rp_matrix_hat(model: &MechanismModel, bodies: &[RpBody], rows: &[gcon::RowRp]) -> DMat {
    let nb = model.nb();
    let mut m = DMat::zeros(model.nc() + nb, 7 * nb);
    for (k, (g, row)) in model.gcons.iter().zip(rows).enumerate() {
        let (i, j) = g.bodies();
        if let Some(s) = slot_of(model, i) {
            m.view_mut((k, 3 * s), (1, 3)).copy_from(&row.r_i);
            m.view_mut((k, 3 * nb + 4 * s), (1, 4)).copy_from(&row.p_i);
        }
        if let Some(s) = slot_of(model, j) {
            m.view_mut((k, 3 * s), (1, 3)).copy_from(&row.r_j);
            m.view_mut((k, 3 * nb + 4 * s), (1, 4)).copy_from(&row.p_j);
        }
    }
    for (s, b) in bodies.iter().enumerate() {
        m.view_mut((model.nc() + s, 3 * nb + 4 * s), (1, 4))
            .copy_from(&b.p.transpose());
    }
    m
}

/// Velocity rhs of the hatted system: driver rates, then zeros for the
/// normalization rows (d/dt of p^T p / 2 is p^T pdot = 0).
pub(crate) fn rp_nu_hat(model: &MechanismModel, t: f64) -> DVec {
    let mut v = DVec::zeros(model.nc() + model.nb());
    for (k, g) in model.gcons.iter().enumerate() {
        v[k] = gcon::nu(g, t);
    }
    v
}

/// Acceleration rhs of the hatted system; normalization rows carry
/// `-pdot^T pdot`.
pub(crate) fn rp_gamma_hat(model: &MechanismModel, bodies: &[RpBody], t: f64) -> DVec {
    let ground = RpBody::ground();
    let nb = model.nb();
    let mut v = DVec::zeros(model.nc() + nb);
    for (k, g) in model.gcons.iter().enumerate() {
        let (fi, fj) = frame_pair(model, bodies, &ground, g);
        v[k] = gcon::gamma_rp(g, fi, fj, t);
    }
    for (s, b) in bodies.iter().enumerate() {
        v[model.nc() + s] = -b.pdot.dot(&b.pdot);
    }
    v
}

// -------------------------------------------------------------------- reps

pub(crate) fn eps_phi(model: &MechanismModel, bodies: &[EpsBody], t: f64) -> DVec {
    let ground = EpsBody::ground();
    DVec::from_iterator(
        model.nc(),
        model.gcons.iter().map(|g| {
            let (fi, fj) = frame_pair(model, bodies, &ground, g);
            gcon::phi_at(g, &fi.r, &fi.a, &fj.r, &fj.a, t)
        }),
    )
}

pub(crate) fn eps_rows(model: &MechanismModel, bodies: &[EpsBody]) -> Vec<gcon::RowEps> {
    let mut rows = Vec::with_capacity(model.nc());
    eps_rows_into(model, bodies, &mut rows);
    rows
}

pub(crate) fn eps_rows_into(model: &MechanismModel, bodies: &[EpsBody], rows: &mut Vec<gcon::RowEps>) {
    let ground = EpsBody::ground();
    rows.clear();
    rows.extend(model.gcons.iter().map(|g| {
        let (fi, fj) = frame_pair(model, bodies, &ground, g);
        gcon::jac_eps(g, fi, fj)
    }));
}

/// nc x 6nb Jacobian, columns `[r | eps]`.
pub(crate) fn eps_matrix(model: &MechanismModel, rows: &[gcon::RowEps]) -> DMat {
    let nb = model.nb();
    let mut m = DMat::zeros(model.nc(), 6 * nb);
    for (k, (g, row)) in model.gcons.iter().zip(rows).enumerate() {
        let (i, j) = g.bodies();
        if let Some(s) = slot_of(model, i) {
            m.view_mut((k, 3 * s), (1, 3)).copy_from(&row.r_i);
            m.view_mut((k, 3 * nb + 3 * s), (1, 3)).copy_from(&row.e_i);
        }
        if let Some(s) = slot_of(model, j) {
            m.view_mut((k, 3 * s), (1, 3)).copy_from(&row.r_j);
            m.view_mut((k, 3 * nb + 3 * s), (1, 3)).copy_from(&row.e_j);
        }
    }
    m
}

pub(crate) fn eps_gamma(model: &MechanismModel, bodies: &[EpsBody], t: f64) -> DVec {
    let ground = EpsBody::ground();
    DVec::from_iterator(
        model.nc(),
        model.gcons.iter().map(|g| {
            let (fi, fj) = frame_pair(model, bodies, &ground, g);
            gcon::gamma_eps(g, fi, fj, t)
        }),
    )
}
