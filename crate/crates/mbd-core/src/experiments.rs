//! Experiment harnesses on top of the solvers: timed runs, order-of-accuracy
//! analysis against kinematics ground truth, and the formulation speedup
//! benchmark. Also the CSV emitters; all numeric output is printed with 17
//! significant digits so files are byte-stable across runs.

use crate::dynamics::{dynamics_run, DynamicsConfig, TrajectoryLog};
use crate::kinematics::{kinematics_run, KinStepRecord, KinematicsConfig};
use crate::model::MechanismModel;
use crate::par;
use crate::state::{Formulation, SolveError};
use crate::verify::OracleReport;
use std::io::Write;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Kinematics,
    Dynamics,
}

impl RunMode {
    pub fn label(&self) -> &'static str {
        match self {
            RunMode::Kinematics => "kinematics",
            RunMode::Dynamics => "dynamics",
        }
    }
}

/// Summary of one solver run; wall time covers the solver loop only.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub model: String,
    pub mode: RunMode,
    pub formulation: Formulation,
    pub h: f64,
    pub tol: f64,
    pub steps: usize,
    pub mean_iterations: f64,
    pub max_iterations: usize,
    pub wall_s: f64,
}

pub fn timed_kinematics(
    model: &MechanismModel,
    cfg: &KinematicsConfig,
) -> Result<(Vec<KinStepRecord>, RunReport), SolveError> {
    let start = Instant::now();
    let records = kinematics_run(model, cfg)?;
    let wall_s = start.elapsed().as_secs_f64();
    let mean_iterations =
        records.iter().map(|r| r.iterations as f64).sum::<f64>() / records.len() as f64;
    let max_iterations = records.iter().map(|r| r.iterations).max().unwrap_or(0);
    let report = RunReport {
        model: model.name.clone(),
        mode: RunMode::Kinematics,
        formulation: cfg.formulation,
        h: cfg.h,
        tol: cfg.pos_tol,
        steps: records.len(),
        mean_iterations,
        max_iterations,
        wall_s,
    };
    Ok((records, report))
}

pub fn timed_dynamics(
    model: &MechanismModel,
    cfg: &DynamicsConfig,
) -> Result<(TrajectoryLog, RunReport), SolveError> {
    let start = Instant::now();
    let log = dynamics_run(model, cfg)?;
    let wall_s = start.elapsed().as_secs_f64();
    let report = RunReport {
        model: model.name.clone(),
        mode: RunMode::Dynamics,
        formulation: cfg.formulation,
        h: cfg.h,
        tol: cfg.effective_theta(),
        steps: log.records.len() - 1,
        mean_iterations: log.mean_iterations(),
        max_iterations: log.max_iterations(),
        wall_s,
    };
    Ok((log, report))
}

// ---------------------------------------------------------------------------
// order analysis

/// Absolute errors of one body coordinate at the end of a dynamics run,
/// measured against the kinematically exact trajectory.
#[derive(Debug, Clone)]
pub struct OrderPoint {
    pub h: f64,
    pub pos_err: f64,
    pub vel_err: f64,
    pub acc_err: f64,
}

#[derive(Debug, Clone)]
pub struct OrderAnalysis {
    pub formulation: Formulation,
    pub body_id: usize,
    pub coord: usize,
    pub points: Vec<OrderPoint>,
    pub slope_vel: f64,
    pub slope_acc: f64,
    pub max_pos_err: f64,
}

/// Least-squares slope of `log err` against `log h`; points with zero error
/// are skipped.
pub fn fit_slope(points: &[(f64, f64)]) -> f64 {
    let data: Vec<(f64, f64)> = points
        .iter()
        .filter(|(_, e)| *e > 0.0)
        .map(|(h, e)| (h.ln(), e.ln()))
        .collect();
    let n = data.len() as f64;
    let sx: f64 = data.iter().map(|(x, _)| x).sum();
    let sy: f64 = data.iter().map(|(_, y)| y).sum();
    let sxx: f64 = data.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = data.iter().map(|(x, y)| x * y).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// Run the dynamics at each step size with the `theta h^2 = 1e-11` stopping
/// rule and compare one body coordinate at `t_end` against the kinematics.
///
/// Fully driven models only: the kinematics trajectory is the exact motion,
/// so its state at `t_end` is ground truth for the integrator error.
pub fn order_analysis(
    model: &MechanismModel,
    formulation: Formulation,
    hs: &[f64],
    t_end: f64,
    body_id: usize,
    coord: usize,
) -> Result<OrderAnalysis, SolveError> {
    let mut gt_cfg = KinematicsConfig::new(Formulation::Ra, 1e-3, t_end);
    gt_cfg.pos_tol = 1e-12;
    let gt = kinematics_run(model, &gt_cfg)?;
    let gt_last = gt.last().unwrap();
    let gt_body = gt_last.bodies.iter().find(|b| b.id == body_id).unwrap();
    let (gt_pos, gt_vel, gt_acc) = (gt_body.r[coord], gt_body.rdot[coord], gt_body.rddot[coord]);

    let results = par::map(hs.to_vec(), |h| {
        let cfg = DynamicsConfig::with_auto_theta(formulation, h, t_end);
        dynamics_run(model, &cfg).map(|log| {
            let b = log
                .records
                .last()
                .unwrap()
                .bodies
                .iter()
                .find(|b| b.id == body_id)
                .unwrap()
                .clone();
            OrderPoint {
                h,
                pos_err: (b.r[coord] - gt_pos).abs(),
                vel_err: (b.rdot[coord] - gt_vel).abs(),
                acc_err: (b.rddot[coord] - gt_acc).abs(),
            }
        })
    });
    let mut points = Vec::with_capacity(hs.len());
    for r in results {
        points.push(r?);
    }
    let slope_vel = fit_slope(&points.iter().map(|p| (p.h, p.vel_err)).collect::<Vec<_>>());
    let slope_acc = fit_slope(&points.iter().map(|p| (p.h, p.acc_err)).collect::<Vec<_>>());
    let max_pos_err = points.iter().map(|p| p.pos_err).fold(0.0, f64::max);
    Ok(OrderAnalysis {
        formulation,
        body_id,
        coord,
        points,
        slope_vel,
        slope_acc,
        max_pos_err,
    })
}

// ---------------------------------------------------------------------------
// formulation speedup benchmark

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub model: String,
    pub mode: RunMode,
    pub formulation: Formulation,
    pub h: f64,
    pub tol: f64,
    pub reps: usize,
    pub mean_wall_s: f64,
    /// Fastest repetition; the robust statistic for ordering comparisons
    /// when the host is shared (the workload itself is deterministic).
    pub min_wall_s: f64,
    /// Relative to the Euler-parameter formulation, from the means.
    pub speedup_vs_rp: f64,
    /// Relative to the Euler-parameter formulation, from the minima.
    pub min_speedup_vs_rp: f64,
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub mode: RunMode,
    pub h: f64,
    /// Newton threshold for dynamics, position tolerance for kinematics.
    pub tol: f64,
    pub t_end: f64,
    pub reps: usize,
    /// Run the repetitions of each case concurrently. Off by default:
    /// contention skews wall-clock comparisons.
    pub parallel_reps: bool,
}

fn one_run(model: &MechanismModel, bc: &BenchConfig, form: Formulation) -> Result<f64, SolveError> {
    match bc.mode {
        RunMode::Kinematics => {
            let mut cfg = KinematicsConfig::new(form, bc.h, bc.t_end);
            cfg.pos_tol = bc.tol;
            timed_kinematics(model, &cfg).map(|(_, rep)| rep.wall_s)
        }
        RunMode::Dynamics => {
            let cfg = DynamicsConfig::new(form, bc.h, bc.t_end, bc.tol);
            timed_dynamics(model, &cfg).map(|(_, rep)| rep.wall_s)
        }
    }
}

/// Wall time of `reps` runs per formulation per model, with speedups
/// reported relative to the Euler-parameter formulation. Repetitions are
/// interleaved across formulations so host-load drift hits all of them
/// alike.
pub fn speedup_benchmark(
    models: &[MechanismModel],
    bc: &BenchConfig,
) -> Result<Vec<BenchRow>, SolveError> {
    let mut rows = Vec::new();
    for model in models {
        let mut walls: std::collections::HashMap<Formulation, Vec<f64>> =
            Formulation::ALL.iter().map(|f| (*f, Vec::new())).collect();
        if bc.parallel_reps {
            for form in Formulation::ALL {
                let runs = par::map((0..bc.reps).collect(), |_| one_run(model, bc, form));
                for w in runs {
                    walls.get_mut(&form).unwrap().push(w?);
                }
            }
        } else {
            for _ in 0..bc.reps {
                for form in Formulation::ALL {
                    walls.get_mut(&form).unwrap().push(one_run(model, bc, form)?);
                }
            }
        }
        let stats = |form: Formulation| -> (f64, f64) {
            let w = &walls[&form];
            let mean = w.iter().sum::<f64>() / w.len() as f64;
            let min = w.iter().copied().fold(f64::INFINITY, f64::min);
            (mean, min)
        };
        let (rp_mean, rp_min) = stats(Formulation::Rp);
        for form in Formulation::ALL {
            let (mean, min) = stats(form);
            rows.push(BenchRow {
                model: model.name.clone(),
                mode: bc.mode,
                formulation: form,
                h: bc.h,
                tol: bc.tol,
                reps: bc.reps,
                mean_wall_s: mean,
                min_wall_s: min,
                speedup_vs_rp: rp_mean / mean,
                min_speedup_vs_rp: rp_min / min,
            });
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// CSV output

/// 17 significant digits; enough to reproduce any f64 exactly.
pub fn g17(x: f64) -> String {
    format!("{x:.16e}")
}

fn body_header(ids: &[usize]) -> String {
    let mut cols = Vec::new();
    for id in ids {
        for f in ["rx", "ry", "rz"] {
            cols.push(format!("b{id}_{f}"));
        }
        for f in [
            "a11", "a12", "a13", "a21", "a22", "a23", "a31", "a32", "a33",
        ] {
            cols.push(format!("b{id}_{f}"));
        }
        for f in ["vx", "vy", "vz", "wx", "wy", "wz", "ax", "ay", "az", "alx", "aly", "alz"] {
            cols.push(format!("b{id}_{f}"));
        }
    }
    cols.join(",")
}

fn body_fields(b: &crate::state::BodyRecord) -> String {
    let mut vals = Vec::with_capacity(24);
    for k in 0..3 {
        vals.push(g17(b.r[k]));
    }
    for r in 0..3 {
        for c in 0..3 {
            vals.push(g17(b.a[(r, c)]));
        }
    }
    for v in [b.rdot, b.omega_bar, b.rddot, b.omega_bar_dot] {
        for k in 0..3 {
            vals.push(g17(v[k]));
        }
    }
    vals.join(",")
}

pub fn write_kinematics_csv(w: &mut impl Write, records: &[KinStepRecord]) -> std::io::Result<()> {
    let ids: Vec<usize> = records[0].bodies.iter().map(|b| b.id).collect();
    writeln!(w, "t,iterations,delta_norm,phi_inf,{}", body_header(&ids))?;
    for rec in records {
        let bodies: Vec<String> = rec.bodies.iter().map(body_fields).collect();
        writeln!(
            w,
            "{},{},{},{},{}",
            g17(rec.t),
            rec.iterations,
            g17(rec.delta_norm),
            g17(rec.phi_inf),
            bodies.join(",")
        )?;
    }
    Ok(())
}

/// Dynamics rows; the consistent initial state at `t = 0` is not a solver
/// step and is left out.
pub fn write_dynamics_csv(w: &mut impl Write, log: &TrajectoryLog) -> std::io::Result<()> {
    let ids: Vec<usize> = log.records[0].bodies.iter().map(|b| b.id).collect();
    writeln!(
        w,
        "t,iterations,delta_norm,phi_inf,p_norm_err,{}",
        body_header(&ids)
    )?;
    for rec in &log.records[1..] {
        let bodies: Vec<String> = rec.bodies.iter().map(body_fields).collect();
        writeln!(
            w,
            "{},{},{},{},{},{}",
            g17(rec.t),
            rec.iterations,
            g17(rec.delta_norm),
            g17(rec.phi_inf),
            g17(rec.p_norm_err),
            bodies.join(",")
        )?;
    }
    Ok(())
}

pub fn write_order_csv(w: &mut impl Write, analysis: &OrderAnalysis) -> std::io::Result<()> {
    writeln!(w, "h,pos_err,vel_err,acc_err")?;
    for p in &analysis.points {
        writeln!(
            w,
            "{},{},{},{}",
            g17(p.h),
            g17(p.pos_err),
            g17(p.vel_err),
            g17(p.acc_err)
        )?;
    }
    Ok(())
}

pub fn write_bench_csv(w: &mut impl Write, rows: &[BenchRow]) -> std::io::Result<()> {
    writeln!(
        w,
        "model,mode,formulation,h,tol,reps,mean_wall_s,min_wall_s,speedup_vs_rp,min_speedup_vs_rp"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.model,
            r.mode.label(),
            r.formulation,
            g17(r.h),
            g17(r.tol),
            r.reps,
            g17(r.mean_wall_s),
            g17(r.min_wall_s),
            g17(r.speedup_vs_rp),
            g17(r.min_speedup_vs_rp)
        )?;
    }
    Ok(())
}

pub fn write_fdcheck_csv(w: &mut impl Write, reports: &[OracleReport]) -> std::io::Result<()> {
    writeln!(w, "item,max_rel_err,tol,pass")?;
    for r in reports {
        writeln!(w, "{},{},{},{}", r.item, g17(r.max_rel_err), g17(r.tol), r.pass)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_exact_power_law() {
        let pts: Vec<(f64, f64)> = [1e-2, 1e-3, 1e-4]
            .iter()
            .map(|&h: &f64| (h, 3.0 * h.powf(1.0)))
            .collect();
        assert!((fit_slope(&pts) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn g17_round_trips_f64() {
        for x in [std::f64::consts::PI, 1.0 / 3.0, 6.02e23, -1.2345e-300] {
            let s = g17(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
    }
}
