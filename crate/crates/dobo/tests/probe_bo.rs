use dobo::problem::burgers_problem;
use dobo::reference::{bo_classical_solve, BoConfig};

#[test]
fn probe_bo_lambdas() {
    let problem = burgers_problem(0.1);
    let cfg = BoConfig {
        n_modes: 2,
        n_x: 64,
        dt: 2e-4,
        t_end: 1.0,
        bootstrap_t: 0.0,
        n_samples: 100,
        seed: 4,
        tol_cross_rel: 1e-8,
        snapshot_times: (1..50).map(|k| k as f64 * 0.02).collect(),
    };
    match bo_classical_solve(&problem, &cfg) {
        Ok(run) => {
            for s in &run.snapshots {
                println!("t={:.3} l1={:.4} l2={:.4} gap={:.5}", s.t, s.lambdas[0], s.lambdas[1], (s.lambdas[0]-s.lambdas[1]).abs());
            }
        }
        Err(e) => println!("error: {e}"),
    }
}
