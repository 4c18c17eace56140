use dobo::loss::{ConstraintKind, LossWeights};
use dobo::modal::{sample_components, variance_field, ModalEval};
use dobo::problem::{advection_problem, AdvectionExact, ExactOracle};
use dobo::train::{build_grid, train, NetworkSizes, Seeds, TrainConfig};

#[test]
fn probe_advection_training() {
    let problem = advection_problem(0.8);
    let pi = std::f64::consts::PI;
    let cfg = TrainConfig {
        kind: ConstraintKind::Do,
        n_modes: 2,
        epochs: 30000,
        lr: 0.001,
        weights: LossWeights::default(),
        n_x: 50,
        n_t: 50,
        n_xi: 50,
        seeds: Seeds::default(),
        n_subdomains: 1,
        networks: NetworkSizes {
            ubar_hidden: vec![32, 32, 32],
            u_hidden: vec![32, 32, 32],
            a_hidden: vec![16, 16, 16],
            y_hidden: vec![64, 64, 64, 64],
            a_independent: false,
        },
        output: Default::default(),
    };
    let t = std::time::Instant::now();
    let (sol, report) = train(&problem, &cfg).unwrap();
    println!("3000 epochs in {:.1}s -> {:.1} ms/epoch", t.elapsed().as_secs_f64(), t.elapsed().as_secs_f64()/3.0);
    for &e in &[0usize, 999, 2999, 5999, 9999, 14999, 19999, 24999, 29999] {
        let b = &report.history[e];
        println!("epoch {e}: total={:.3e} w={:.3e} ic={:.3e} k={:.3e} 0={:.3e}", b.total, b.mse_w, b.mse_ic, b.mse_constraint, b.mse_0);
    }
    // Errors at T=pi.
    let grid = build_grid(&problem, &cfg, problem.t_domain, 0).unwrap();
    let ex = AdvectionExact { sigma: 0.8 };
    let cand = sample_components(&sol, pi, &grid.x, &grid.pts);
    let mean_ref: Vec<f64> = grid.x.iter().map(|&x| ex.mean(x, pi)).collect();
    let mre = dobo::train::metrics::rel_l2(cand.mean.as_slice().unwrap(), &mean_ref, &grid.wx).unwrap();
    let var_c: Vec<f64> = grid.x.iter().map(|&x| variance_field(&sol, x, pi, &grid.pts)).collect();
    let var_r: Vec<f64> = grid.x.iter().map(|&x| ex.variance(x, pi)).collect();
    let vre = dobo::train::metrics::rel_l2(&var_c, &var_r, &grid.wx).unwrap();
    println!("rel L2 at T=pi: mean={:.3}% variance={:.3}%", mre*100.0, vre*100.0);
    let a = sol.scales_jet(pi);
    println!("a(pi) = [{:.4}, {:.4}] vs exact [{:.4}, {:.4}]", a[0].value, a[1].value, ex.alpha1(pi), ex.alpha2(pi));
}
