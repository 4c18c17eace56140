// temporary probe
use dobo::loss::{direct, ConstraintKind, LossWeights, TrainingGrid};
use dobo::problem::{advection_problem, burgers_problem, AdvectionExactQuad, BurgersExact};
use dobo::quad;

#[test]
fn probe_exact_losses() {
    let pi = std::f64::consts::PI;
    // Advection at the acceptance scale.
    let problem = advection_problem(0.8);
    let x = quad::spatial_grid(-pi, pi, 50).unwrap();
    let times = quad::sample_uniform_times(50, 0.0, pi, 17).unwrap();
    let pts = quad::normal_quadrature(50, 0.8).unwrap();
    let grid = TrainingGrid::new(x, times, pts, 0.0);
    let ex = AdvectionExactQuad::new(0.8, &grid.pts);
    let ic = problem.initial_components(&grid.x, &grid.pts, 2).unwrap();
    for kind in [ConstraintKind::Do, ConstraintKind::Bo] {
        let b = direct::assemble(&ex, &problem, &grid, kind, LossWeights::default(), &ic, &[]).unwrap();
        println!("ADV {kind:?}: w={:.3e} ic={:.3e} bc={:.3e} k={:.3e} 0={:.3e} total={:.3e}",
            b.mse_w, b.mse_ic, b.mse_bc, b.mse_constraint, b.mse_0, b.total);
    }
    // Burgers first subdomain with 64 tensor points.
    let problem = burgers_problem(0.1);
    let x = quad::spatial_grid(-pi, pi, 50).unwrap();
    let times = quad::sample_uniform_times(30, 0.0, pi, 23).unwrap();
    let pts = problem.stochastic_points(64, 0).unwrap();
    let grid = TrainingGrid::new(x, times, pts, 0.0);
    let ic = problem.initial_components(&grid.x, &grid.pts, 2).unwrap();
    for kind in [ConstraintKind::Do, ConstraintKind::Bo] {
        let b = direct::assemble(&BurgersExact, &problem, &grid, kind, LossWeights::default(), &ic, &[]).unwrap();
        println!("BUR {kind:?}: w={:.3e} ic={:.3e} bc={:.3e} k={:.3e} 0={:.3e} total={:.3e}",
            b.mse_w, b.mse_ic, b.mse_bc, b.mse_constraint, b.mse_0, b.total);
    }
}
