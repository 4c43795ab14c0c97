//! Temporary probe of solver behavior on the bundled models (removed once
//! the numbers are frozen into the real suites).

use mbd_core::dynamics::{dynamics_run, DynamicsConfig};
use mbd_core::kinematics::{kinematics_run, KinematicsConfig};
use mbd_core::model::load_model;
use mbd_core::state::Formulation;

fn models_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

#[test]
#[ignore]
fn probe_kinematics_iterations() {
    for name in ["single_pendulum", "four_link", "slider_crank"] {
        let model = load_model(models_dir().join(format!("{name}.json"))).unwrap();
        for form in Formulation::ALL {
            let cfg = KinematicsConfig::new(form, 1e-3, 3.0);
            match kinematics_run(&model, &cfg) {
                Ok(records) => {
                    let mean = records.iter().map(|r| r.iterations as f64).sum::<f64>()
                        / records.len() as f64;
                    let max = records.iter().map(|r| r.iterations).max().unwrap();
                    let worst_phi = records.iter().map(|r| r.phi_inf).fold(0.0, f64::max);
                    println!("{name} {form}: mean {mean:.3} max {max} phi {worst_phi:.2e}");
                }
                Err(e) => println!("{name} {form}: FAILED {e}"),
            }
        }
    }
}

#[test]
#[ignore]
fn probe_pendulum_order() {
    let model = load_model(models_dir().join("single_pendulum.json")).unwrap();
    for form in Formulation::ALL {
        let analysis = mbd_core::experiments::order_analysis(
            &model,
            form,
            &[1e-2, 3e-3, 1e-3, 3e-4, 1e-4],
            3.0,
            1,
            2,
        )
        .unwrap();
        println!(
            "{form}: slope_vel {:.3} slope_acc {:.3} max_pos {:.2e}",
            analysis.slope_vel, analysis.slope_acc, analysis.max_pos_err
        );
        for p in &analysis.points {
            println!(
                "  h {:.0e}: pos {:.3e} vel {:.3e} acc {:.3e}",
                p.h, p.pos_err, p.vel_err, p.acc_err
            );
        }
    }
}

#[test]
#[ignore]
fn probe_dynamics_all_models() {
    for name in ["single_pendulum", "double_pendulum", "slider_crank", "four_link"] {
        let model = load_model(models_dir().join(format!("{name}.json"))).unwrap();
        for form in Formulation::ALL {
            let cfg = DynamicsConfig::new(form, 1e-3, 1.0, 1e-3);
            let start = std::time::Instant::now();
            match dynamics_run(&model, &cfg) {
                Ok(log) => {
                    let wall = start.elapsed().as_secs_f64();
                    println!(
                        "{name} {form}: mean {:.2} wall {wall:.3}s phi_max {:.2e}",
                        log.mean_iterations(),
                        log.records[1..].iter().map(|r| r.phi_inf).fold(0.0, f64::max)
                    );
                }
                Err(e) => println!("{name} {form}: FAILED {e}"),
            }
        }
    }
}

#[test]
#[ignore]
fn probe_speedup_benchmark() {
    let models: Vec<_> = ["single_pendulum", "double_pendulum", "slider_crank", "four_link"]
        .iter()
        .map(|n| load_model(models_dir().join(format!("{n}.json"))).unwrap())
        .collect();
    let bc = mbd_core::experiments::BenchConfig {
        mode: mbd_core::experiments::RunMode::Dynamics,
        h: 1e-3,
        tol: 1e-3,
        t_end: 2.0,
        reps: 10,
        parallel_reps: false,
    };
    let rows = mbd_core::experiments::speedup_benchmark(&models, &bc).unwrap();
    for r in &rows {
        println!(
            "{:16} {:4} mean {:.4}s min {:.4}s speedup_vs_rp {:.2} (min {:.2})",
            r.model,
            r.formulation.label(),
            r.mean_wall_s,
            r.min_wall_s,
            r.speedup_vs_rp,
            r.min_speedup_vs_rp
        );
    }
}
