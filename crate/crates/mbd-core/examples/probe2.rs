use mbd_core::dynamics::{initial_conditions_solve, step, DynamicsConfig};
use mbd_core::model::load_model;
use mbd_core::state::Formulation;

fn main() {
    let dir = std::path::Path::new("models");
    let model = load_model(dir.join("four_link.json")).unwrap();
    let mut cfg = DynamicsConfig::new(Formulation::Rp, 1e-3, 3.0, 1e-3);
    cfg.max_iter = 200;
    let mut st = initial_conditions_solve(&model, Formulation::Rp).unwrap();
    for n in 1..=3000 {
        match step(&model, &mut st, &cfg) {
            Ok(rec) => {
                if (2466..=2471).contains(&n) {
                    println!(
                        "t={:.3} iters={} delta={:.3e} lam_drv={:.3e}",
                        rec.t, rec.iterations, rec.delta_norm, rec.lambda[5]
                    );
                }
            }
            Err(e) => {
                println!("FAILED step {n}: {e}");
                break;
            }
        }
    }
    println!("done");
}
