//! Mechanism description: rigid bodies, the four scalar constraint
//! primitives, lower-pair joint macros that expand onto them, and the JSON
//! model loader.
//!
//! Body `0` is the ground; it carries the global frame and contributes no
//! unknowns. Every other body has a positive id, a diagonal body-frame
//! inertia, and an initial state given in absolute coordinates.

use crate::so3;
use crate::{Mat3, Vec3};
use serde::Deserialize;
use std::collections::HashMap;
use std::path::Path;
use thiserror::Error;

pub const GROUND: usize = 0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("failed to read model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse model file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ModelError {
    ModelError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

/// Time-dependent right-hand side of a driving constraint, restricted to
/// closed forms so the first two derivatives are exact.
#[derive(Debug, Clone, PartialEq)]
pub enum DriverFn {
    /// `f(t) = c`
    Constant { c: f64 },
    /// `f(t) = c0 + c1 cos(omega t + phi0)`
    Cosine { c0: f64, c1: f64, omega: f64, phi0: f64 },
    /// `f(t) = cos(c0 + c1 cos(omega t + phi0))` — a driven angle
    /// `alpha(t) = c0 + c1 cos(omega t + phi0)` expressed as the dot-product
    /// value a DP1 constraint needs.
    CosineAngle { c0: f64, c1: f64, omega: f64, phi0: f64 },
}

impl DriverFn {
    pub const ZERO: DriverFn = DriverFn::Constant { c: 0.0 };

    /// Value and first two time derivatives `(f, f_dot, f_ddot)`.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        match *self {
            DriverFn::Constant { c } => (c, 0.0, 0.0),
            DriverFn::Cosine { c0, c1, omega, phi0 } => {
                let (s, c) = (omega * t + phi0).sin_cos();
                (c0 + c1 * c, -c1 * omega * s, -c1 * omega * omega * c)
            }
            DriverFn::CosineAngle { c0, c1, omega, phi0 } => {
                let (s, c) = (omega * t + phi0).sin_cos();
                let alpha = c0 + c1 * c;
                let alpha_d = -c1 * omega * s;
                let alpha_dd = -c1 * omega * omega * c;
                let (sa, ca) = alpha.sin_cos();
                (ca, -alpha_d * sa, -alpha_dd * sa - alpha_d * alpha_d * ca)
            }
        }
    }

    /// Smallest value `f(t)` can take over all `t`.
    fn min_value(&self) -> f64 {
        match *self {
            DriverFn::Constant { c } => c,
            DriverFn::Cosine { c0, c1, .. } => c0 - c1.abs(),
            DriverFn::CosineAngle { c0, c1, .. } => {
                // min of cos over the angle interval [c0-|c1|, c0+|c1|]
                let (lo, hi) = (c0 - c1.abs(), c0 + c1.abs());
                if hi - lo >= 2.0 * std::f64::consts::PI {
                    return -1.0;
                }
                let mut m = lo.cos().min(hi.cos());
                let mut k = (lo / std::f64::consts::PI).ceil() as i64;
                while (k as f64) * std::f64::consts::PI <= hi {
                    if k % 2 != 0 {
                        m = -1.0;
                    }
                    k += 1;
                }
                m
            }
        }
    }
}

/// One scalar geometric constraint primitive.
///
/// `i` and `j` are body ids (`0` = ground). Barred vectors are expressed in
/// the owning body's frame; `c` (for CD) is a fixed global direction.
#[derive(Debug, Clone)]
pub enum Gcon {
    Dp1 {
        i: usize,
        j: usize,
        a_i: Vec3,
        a_j: Vec3,
        driver: DriverFn,
    },
    Dp2 {
        i: usize,
        j: usize,
        a_i: Vec3,
        s_p_i: Vec3,
        s_q_j: Vec3,
        driver: DriverFn,
    },
    D {
        i: usize,
        j: usize,
        s_p_i: Vec3,
        s_q_j: Vec3,
        driver: DriverFn,
    },
    Cd {
        i: usize,
        j: usize,
        c: Vec3,
        s_p_i: Vec3,
        s_q_j: Vec3,
        driver: DriverFn,
    },
}

impl Gcon {
    pub fn bodies(&self) -> (usize, usize) {
        match *self {
            Gcon::Dp1 { i, j, .. }
            | Gcon::Dp2 { i, j, .. }
            | Gcon::D { i, j, .. }
            | Gcon::Cd { i, j, .. } => (i, j),
        }
    }

    pub fn driver(&self) -> &DriverFn {
        match self {
            Gcon::Dp1 { driver, .. }
            | Gcon::Dp2 { driver, .. }
            | Gcon::D { driver, .. }
            | Gcon::Cd { driver, .. } => driver,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Gcon::Dp1 { .. } => "DP1",
            Gcon::Dp2 { .. } => "DP2",
            Gcon::D { .. } => "D",
            Gcon::Cd { .. } => "CD",
        }
    }
}

/// Lower-pair joints and how they expand onto the primitives:
/// SJ -> 3 CD; UJ -> 3 CD + 1 DP1; RJ -> 3 CD + 2 DP1;
/// CJ -> 2 DP1 + 2 DP2; TJ -> 3 DP1 + 2 DP2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointKind {
    Spherical,
    Universal,
    Cylindrical,
    Revolute,
    Translational,
}

/// Geometry a joint macro needs. Unused fields may stay `None` per kind:
/// all joints use the attachment points; `a_i`/`b_i` are the body-i plane
/// vectors of a perpendicular-1 block (or the cross arm for UJ), `c_j` the
/// body-j axis, `a_j` the UJ cross arm on body j, and `spin_j` the body-j
/// partner of the extra DP1 a translational joint needs.
#[derive(Debug, Clone, Default)]
pub struct JointGeometry {
    pub s_p_i: Vec3,
    pub s_q_j: Vec3,
    pub a_i: Option<Vec3>,
    pub b_i: Option<Vec3>,
    pub a_j: Option<Vec3>,
    pub c_j: Option<Vec3>,
    pub spin_j: Option<Vec3>,
}

fn require(v: Option<Vec3>, path: &str, field: &str) -> Result<Vec3, ModelError> {
    v.ok_or_else(|| invalid(path, format!("missing field `{field}`")))
}

/// Expand a joint macro into its scalar constraints.
pub fn expand_joint(
    kind: JointKind,
    i: usize,
    j: usize,
    geom: &JointGeometry,
    path: &str,
) -> Result<Vec<Gcon>, ModelError> {
    let spherical = |out: &mut Vec<Gcon>| {
        for axis in [Vec3::x(), Vec3::y(), Vec3::z()] {
            out.push(Gcon::Cd {
                i,
                j,
                c: axis,
                s_p_i: geom.s_p_i,
                s_q_j: geom.s_q_j,
                driver: DriverFn::ZERO,
            });
        }
    };
    let perp1 = |out: &mut Vec<Gcon>| -> Result<(), ModelError> {
        let a_i = require(geom.a_i, path, "a_i")?;
        let b_i = require(geom.b_i, path, "b_i")?;
        let c_j = require(geom.c_j, path, "c_j")?;
        if a_i.cross(&b_i).norm() < 1e-12 {
            return Err(invalid(path, "a_i and b_i are colinear"));
        }
        out.push(Gcon::Dp1 { i, j, a_i, a_j: c_j, driver: DriverFn::ZERO });
        out.push(Gcon::Dp1 { i, j, a_i: b_i, a_j: c_j, driver: DriverFn::ZERO });
        Ok(())
    };
    let perp2 = |out: &mut Vec<Gcon>| -> Result<(), ModelError> {
        let a_i = require(geom.a_i, path, "a_i")?;
        let b_i = require(geom.b_i, path, "b_i")?;
        if a_i.cross(&b_i).norm() < 1e-12 {
            return Err(invalid(path, "a_i and b_i are colinear"));
        }
        for v in [a_i, b_i] {
            out.push(Gcon::Dp2 {
                i,
                j,
                a_i: v,
                s_p_i: geom.s_p_i,
                s_q_j: geom.s_q_j,
                driver: DriverFn::ZERO,
            });
        }
        Ok(())
    };

    let mut out = Vec::new();
    match kind {
        JointKind::Spherical => spherical(&mut out),
        JointKind::Universal => {
            spherical(&mut out);
            let a_i = require(geom.a_i, path, "a_i")?;
            let a_j = require(geom.a_j, path, "a_j")?;
            out.push(Gcon::Dp1 { i, j, a_i, a_j, driver: DriverFn::ZERO });
        }
        JointKind::Revolute => {
            spherical(&mut out);
            perp1(&mut out)?;
        }
        JointKind::Cylindrical => {
            perp1(&mut out)?;
            perp2(&mut out)?;
        }
        JointKind::Translational => {
            perp1(&mut out)?;
            perp2(&mut out)?;
            let a_i = require(geom.a_i, path, "a_i")?;
            let spin_j = require(geom.spin_j, path, "spin_j")?;
            out.push(Gcon::Dp1 { i, j, a_i, a_j: spin_j, driver: DriverFn::ZERO });
        }
    }
    Ok(out)
}

/// A rigid body with its constant mass properties and initial state.
#[derive(Debug, Clone)]
pub struct Body {
    pub id: usize,
    pub mass: f64,
    /// Diagonal of the body-frame inertia matrix.
    pub inertia: Vec3,
    pub r0: Vec3,
    pub a0: Mat3,
    pub rdot0: Vec3,
    pub omega_bar0: Vec3,
}

#[derive(Debug, Clone)]
pub struct MechanismModel {
    pub name: String,
    pub gravity: Vec3,
    pub bodies: Vec<Body>,
    pub gcons: Vec<Gcon>,
    /// body id -> index into `bodies`
    pub slot: HashMap<usize, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GconCounts {
    pub dp1: usize,
    pub dp2: usize,
    pub d: usize,
    pub cd: usize,
}

impl MechanismModel {
    pub fn nb(&self) -> usize {
        self.bodies.len()
    }

    pub fn nc(&self) -> usize {
        self.gcons.len()
    }

    pub fn is_fully_driven(&self) -> bool {
        self.nc() == 6 * self.nb()
    }

    pub fn gcon_counts(&self) -> GconCounts {
        let mut c = GconCounts::default();
        for g in &self.gcons {
            match g {
                Gcon::Dp1 { .. } => c.dp1 += 1,
                Gcon::Dp2 { .. } => c.dp2 += 1,
                Gcon::D { .. } => c.d += 1,
                Gcon::Cd { .. } => c.cd += 1,
            }
        }
        c
    }

    pub fn body(&self, id: usize) -> &Body {
        &self.bodies[self.slot[&id]]
    }
}

// ---------------------------------------------------------------------------
// JSON intake

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    name: String,
    gravity: [f64; 3],
    bodies: Vec<RawBody>,
    constraints: Vec<RawConstraint>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBody {
    id: usize,
    mass: f64,
    inertia: [f64; 3],
    r0: [f64; 3],
    #[serde(rename = "A0")]
    a0: Option<[f64; 9]>,
    p0: Option<[f64; 4]>,
    rdot0: [f64; 3],
    omega_bar0: [f64; 3],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConstraint {
    kind: String,
    i: usize,
    j: usize,
    a_i: Option<[f64; 3]>,
    b_i: Option<[f64; 3]>,
    a_j: Option<[f64; 3]>,
    c_j: Option<[f64; 3]>,
    spin_j: Option<[f64; 3]>,
    c: Option<[f64; 3]>,
    #[serde(rename = "sP_i")]
    s_p_i: Option<[f64; 3]>,
    #[serde(rename = "sQ_j")]
    s_q_j: Option<[f64; 3]>,
    driver: Option<RawDriver>,
}

#[derive(Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
enum RawDriver {
    #[serde(rename = "constant")]
    Constant { c: f64 },
    #[serde(rename = "cosine")]
    Cosine { c0: f64, c1: f64, omega: f64, phi0: f64 },
    #[serde(rename = "cosine_angle")]
    CosineAngle { c0: f64, c1: f64, omega: f64, phi0: f64 },
}

impl From<RawDriver> for DriverFn {
    fn from(raw: RawDriver) -> Self {
        match raw {
            RawDriver::Constant { c } => DriverFn::Constant { c },
            RawDriver::Cosine { c0, c1, omega, phi0 } => DriverFn::Cosine { c0, c1, omega, phi0 },
            RawDriver::CosineAngle { c0, c1, omega, phi0 } => {
                DriverFn::CosineAngle { c0, c1, omega, phi0 }
            }
        }
    }
}

fn v3(x: [f64; 3]) -> Vec3 {
    Vec3::new(x[0], x[1], x[2])
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MechanismModel, ModelError> {
    let text = std::fs::read_to_string(path)?;
    load_model_str(&text)
}

pub fn load_model_str(text: &str) -> Result<MechanismModel, ModelError> {
    let raw: RawModel = serde_json::from_str(text)?;
    let mut bodies = Vec::with_capacity(raw.bodies.len());
    let mut slot = HashMap::new();
    for (bi, rb) in raw.bodies.iter().enumerate() {
        let path = format!("bodies[{bi}]");
        if rb.id == GROUND {
            return Err(invalid(&path, "body id 0 is reserved for the ground"));
        }
        if slot.insert(rb.id, bi).is_some() {
            return Err(invalid(&path, format!("duplicate body id {}", rb.id)));
        }
        if rb.mass <= 0.0 {
            return Err(invalid(
                format!("{path}.mass"),
                format!("body {} must have positive mass", rb.id),
            ));
        }
        if rb.inertia.iter().any(|&x| x <= 0.0) {
            return Err(invalid(
                format!("{path}.inertia"),
                format!("body {} must have positive inertia entries", rb.id),
            ));
        }
        let a0 = match (rb.a0, rb.p0) {
            (Some(rows), None) => Mat3::from_row_slice(&rows),
            (None, Some(p)) => {
                let p = crate::Vec4::new(p[0], p[1], p[2], p[3]);
                so3::a_from_p(&p.normalize())
                    .map_err(|e| invalid(format!("{path}.p0"), e.to_string()))?
            }
            (Some(_), Some(_)) => {
                return Err(invalid(&path, "give either A0 or p0, not both"));
            }
            (None, None) => return Err(invalid(&path, "missing initial orientation (A0 or p0)")),
        };
        let ortho = (a0.transpose() * a0 - Mat3::identity()).norm();
        if ortho > 1e-9 || a0.determinant() < 0.0 {
            return Err(invalid(
                format!("{path}.A0"),
                format!("initial orientation is not a rotation (|A^T A - I| = {ortho:.3e})"),
            ));
        }
        bodies.push(Body {
            id: rb.id,
            mass: rb.mass,
            inertia: v3(rb.inertia),
            r0: v3(rb.r0),
            a0,
            rdot0: v3(rb.rdot0),
            omega_bar0: v3(rb.omega_bar0),
        });
    }

    let mut gcons = Vec::new();
    for (ci, rc) in raw.constraints.iter().enumerate() {
        let path = format!("constraints[{ci}]");
        for (name, id) in [("i", rc.i), ("j", rc.j)] {
            if id != GROUND && !slot.contains_key(&id) {
                return Err(invalid(
                    format!("{path}.{name}"),
                    format!("unknown body id {id}"),
                ));
            }
        }
        if rc.i == rc.j {
            return Err(invalid(&path, "i and j must differ"));
        }
        let driver: DriverFn = rc.driver.as_ref().map_or(DriverFn::ZERO, |d| match d {
            RawDriver::Constant { c } => DriverFn::Constant { c: *c },
            RawDriver::Cosine { c0, c1, omega, phi0 } => DriverFn::Cosine {
                c0: *c0,
                c1: *c1,
                omega: *omega,
                phi0: *phi0,
            },
            RawDriver::CosineAngle { c0, c1, omega, phi0 } => DriverFn::CosineAngle {
                c0: *c0,
                c1: *c1,
                omega: *omega,
                phi0: *phi0,
            },
        });
        let nonzero = |v: Vec3, field: &str| -> Result<Vec3, ModelError> {
            if v.norm() < 1e-12 {
                Err(invalid(format!("{path}.{field}"), "vector must be nonzero"))
            } else {
                Ok(v)
            }
        };
        match rc.kind.as_str() {
            "DP1" => gcons.push(Gcon::Dp1 {
                i: rc.i,
                j: rc.j,
                a_i: nonzero(v3(require_raw(rc.a_i, &path, "a_i")?), "a_i")?,
                a_j: nonzero(v3(require_raw(rc.a_j, &path, "a_j")?), "a_j")?,
                driver,
            }),
            "DP2" => gcons.push(Gcon::Dp2 {
                i: rc.i,
                j: rc.j,
                a_i: nonzero(v3(require_raw(rc.a_i, &path, "a_i")?), "a_i")?,
                s_p_i: v3(require_raw(rc.s_p_i, &path, "sP_i")?),
                s_q_j: v3(require_raw(rc.s_q_j, &path, "sQ_j")?),
                driver,
            }),
            "D" => {
                if driver.min_value() <= 0.0 {
                    return Err(invalid(
                        format!("{path}.driver"),
                        "a D constraint needs f(t) > 0 for all t",
                    ));
                }
                gcons.push(Gcon::D {
                    i: rc.i,
                    j: rc.j,
                    s_p_i: v3(require_raw(rc.s_p_i, &path, "sP_i")?),
                    s_q_j: v3(require_raw(rc.s_q_j, &path, "sQ_j")?),
                    driver,
                });
            }
            "CD" => gcons.push(Gcon::Cd {
                i: rc.i,
                j: rc.j,
                c: nonzero(v3(require_raw(rc.c, &path, "c")?), "c")?,
                s_p_i: v3(require_raw(rc.s_p_i, &path, "sP_i")?),
                s_q_j: v3(require_raw(rc.s_q_j, &path, "sQ_j")?),
                driver,
            }),
            kind @ ("SJ" | "UJ" | "CJ" | "RJ" | "TJ") => {
                if rc.driver.is_some() {
                    return Err(invalid(&path, "joints cannot carry drivers"));
                }
                let jk = match kind {
                    "SJ" => JointKind::Spherical,
                    "UJ" => JointKind::Universal,
                    "CJ" => JointKind::Cylindrical,
                    "RJ" => JointKind::Revolute,
                    _ => JointKind::Translational,
                };
                let geom = JointGeometry {
                    s_p_i: v3(require_raw(rc.s_p_i, &path, "sP_i")?),
                    s_q_j: v3(require_raw(rc.s_q_j, &path, "sQ_j")?),
                    a_i: rc.a_i.map(v3),
                    b_i: rc.b_i.map(v3),
                    a_j: rc.a_j.map(v3),
                    c_j: rc.c_j.map(v3),
                    spin_j: rc.spin_j.map(v3),
                };
                gcons.extend(expand_joint(jk, rc.i, rc.j, &geom, &path)?);
            }
            other => {
                return Err(invalid(
                    format!("{path}.kind"),
                    format!("unknown constraint kind `{other}`"),
                ));
            }
        }
    }

    let model = MechanismModel {
        name: raw.name,
        gravity: v3(raw.gravity),
        bodies,
        gcons,
        slot,
    };
    if model.nc() > 6 * model.nb() {
        return Err(invalid(
            "constraints",
            format!(
                "{} scalar constraints exceed the {} coordinates of {} bodies",
                model.nc(),
                6 * model.nb(),
                model.nb()
            ),
        ));
    }
    Ok(model)
}

fn require_raw<T>(v: Option<T>, path: &str, field: &str) -> Result<T, ModelError> {
    v.ok_or_else(|| invalid(path, format!("missing field `{field}`")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn models_dir() -> std::path::PathBuf {
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models")
    }

    #[test]
    fn driver_eval_constant_and_cosine() {
        let (f, fd, fdd) = DriverFn::Constant { c: 4.0 }.eval(11.0);
        assert_eq!((f, fd, fdd), (4.0, 0.0, 0.0));

        // angle pi/2 + pi/4 cos(2t) at t = 0 -> (pi/2 + pi/4, 0, -pi)
        let d = DriverFn::Cosine {
            c0: std::f64::consts::FRAC_PI_2,
            c1: std::f64::consts::FRAC_PI_4,
            omega: 2.0,
            phi0: 0.0,
        };
        let (f, fd, fdd) = d.eval(0.0);
        assert_abs_diff_eq!(f, std::f64::consts::FRAC_PI_2 + std::f64::consts::FRAC_PI_4);
        assert_abs_diff_eq!(fd, 0.0);
        assert_abs_diff_eq!(fdd, -std::f64::consts::PI, epsilon = 1e-14);
    }

    #[test]
    fn driver_derivatives_match_finite_differences() {
        let drivers = [
            DriverFn::Cosine { c0: 0.4, c1: 1.3, omega: 2.2, phi0: 0.3 },
            DriverFn::CosineAngle { c0: 1.1, c1: 0.6, omega: 3.0, phi0: -0.2 },
        ];
        let h = 1e-6;
        for d in drivers {
            for t in [0.0, 0.37, 2.9] {
                let (f0, fd, fdd) = d.eval(t);
                let (fp, fdp, _) = d.eval(t + h);
                let (fm, fdm, _) = d.eval(t - h);
                let fd_num = (fp - fm) / (2.0 * h);
                let fdd_num = (fdp - fdm) / (2.0 * h);
                assert!((fd - fd_num).abs() <= 1e-8 * fd_num.abs().max(1.0));
                assert!((fdd - fdd_num).abs() <= 1e-7 * fdd_num.abs().max(1.0));
                let _ = f0;
            }
        }
    }

    #[test]
    fn joint_expansion_counts() {
        let geom = JointGeometry {
            s_p_i: Vec3::zeros(),
            s_q_j: Vec3::zeros(),
            a_i: Some(Vec3::x()),
            b_i: Some(Vec3::y()),
            a_j: Some(Vec3::z()),
            c_j: Some(Vec3::z()),
            spin_j: Some(Vec3::y()),
        };
        let count = |kind| expand_joint(kind, 1, 0, &geom, "t").unwrap().len();
        assert_eq!(count(JointKind::Spherical), 3);
        assert_eq!(count(JointKind::Universal), 4);
        assert_eq!(count(JointKind::Revolute), 5);
        assert_eq!(count(JointKind::Cylindrical), 4);
        assert_eq!(count(JointKind::Translational), 5);

        // SJ expands to CD constraints along the three coordinate axes
        let sj = expand_joint(JointKind::Spherical, 1, 0, &geom, "t").unwrap();
        let axes: Vec<Vec3> = sj
            .iter()
            .map(|g| match g {
                Gcon::Cd { c, .. } => *c,
                _ => panic!("expected CD"),
            })
            .collect();
        assert_eq!(axes, vec![Vec3::x(), Vec3::y(), Vec3::z()]);
    }

    #[test]
    fn degenerate_perp1_rejected() {
        let geom = JointGeometry {
            a_i: Some(Vec3::x()),
            b_i: Some(Vec3::x() * 2.0),
            c_j: Some(Vec3::z()),
            ..Default::default()
        };
        assert!(expand_joint(JointKind::Revolute, 1, 0, &geom, "t").is_err());
    }

    #[test]
    fn bundled_models_load_with_expected_composition() {
        let pend = load_model(models_dir().join("single_pendulum.json")).unwrap();
        assert_eq!(pend.nb(), 1);
        let c = pend.gcon_counts();
        assert_eq!((c.cd, c.dp1, c.dp2, c.d), (3, 3, 0, 0));
        assert!(pend.is_fully_driven());

        let sc = load_model(models_dir().join("slider_crank.json")).unwrap();
        let c = sc.gcon_counts();
        assert_eq!((c.cd, c.dp1, c.dp2, c.d), (6, 7, 4, 1));
        assert!(sc.is_fully_driven());

        let fl = load_model(models_dir().join("four_link.json")).unwrap();
        let c = fl.gcon_counts();
        assert_eq!((c.cd, c.dp1, c.dp2, c.d), (12, 6, 0, 0));

        let dp = load_model(models_dir().join("double_pendulum.json")).unwrap();
        assert_eq!(dp.nc(), 10); // two free swing angles
        assert!(!dp.is_fully_driven());
    }

    #[test]
    fn zero_mass_rejected_with_body_path() {
        let text = r#"{
            "name": "bad", "gravity": [0,0,-9.81],
            "bodies": [{"id": 1, "mass": 0.0, "inertia": [1,1,1], "r0": [0,0,0],
                        "A0": [1,0,0,0,1,0,0,0,1], "rdot0": [0,0,0], "omega_bar0": [0,0,0]}],
            "constraints": []
        }"#;
        let err = load_model_str(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bodies[0].mass"), "{msg}");
        assert!(msg.contains("body 1"), "{msg}");
    }

    #[test]
    fn skewed_orientation_rejected() {
        let text = r#"{
            "name": "bad", "gravity": [0,0,-9.81],
            "bodies": [{"id": 1, "mass": 1.0, "inertia": [1,1,1], "r0": [0,0,0],
                        "A0": [1,0.1,0,0,1,0,0,0,1], "rdot0": [0,0,0], "omega_bar0": [0,0,0]}],
            "constraints": []
        }"#;
        assert!(load_model_str(text).is_err());
    }

    #[test]
    fn nonpositive_distance_driver_rejected() {
        let text = r#"{
            "name": "bad", "gravity": [0,0,-9.81],
            "bodies": [{"id": 1, "mass": 1.0, "inertia": [1,1,1], "r0": [0,0,0],
                        "A0": [1,0,0,0,1,0,0,0,1], "rdot0": [0,0,0], "omega_bar0": [0,0,0]}],
            "constraints": [{"kind": "D", "i": 1, "j": 0, "sP_i": [0,0,0], "sQ_j": [2,0,0],
                             "driver": {"kind": "cosine", "c0": 1.0, "c1": 1.5, "omega": 1.0, "phi0": 0.0}}]
        }"#;
        assert!(load_model_str(text).is_err());
    }
}
