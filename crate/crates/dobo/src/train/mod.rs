//! Training orchestration: full-batch Adam over the composed loss,
//! time-domain decomposition with sequential hand-off, inverse parameter
//! inference, and run reporting.

pub mod metrics;

use crate::error::{Error, Result};
use crate::loss::graph::{run_epoch, EvalPlan, Model};
use crate::loss::{ConstraintKind, LossBreakdown, LossWeights, TrainingGrid};
use crate::modal::{
    sample_components, InitialComponents, ModalSolution, ScalingNet, SolutionMeta,
    StitchedSolution,
};
use crate::nn::adam::{adam_step, AdamParams, AdamState};
use crate::nn::{Mlp, MlpSpec};
use crate::problem::{BoundaryCondition, Observation, ProblemSpec};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Hidden-layer widths of the four networks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkSizes {
    pub ubar_hidden: Vec<usize>,
    pub u_hidden: Vec<usize>,
    pub a_hidden: Vec<usize>,
    pub y_hidden: Vec<usize>,
    /// One independent scalar network per mode instead of a joint one.
    pub a_independent: bool,
}

/// Seeds controlling every random choice of a run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Seeds {
    /// Network initialization.
    pub params: u64,
    /// Time samples.
    pub times: u64,
    /// Stochastic points (Monte Carlo problems).
    pub points: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            params: 0,
            times: 1,
            points: 2,
        }
    }
}

/// Output paths of a run; all optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct OutputPaths {
    pub checkpoint: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub loss_history: Option<PathBuf>,
}

/// Full-batch training configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub kind: ConstraintKind,
    pub n_modes: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weights: LossWeights,
    pub n_x: usize,
    pub n_t: usize,
    pub n_xi: usize,
    pub seeds: Seeds,
    /// Contiguous equal subdomains covering the problem's time domain.
    pub n_subdomains: usize,
    pub networks: NetworkSizes,
    #[serde(default)]
    pub output: OutputPaths,
}

/// Per-run record: loss history, learnable-parameter trajectory, wall time,
/// and a config echo.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub history: Vec<LossBreakdown>,
    /// Learnable physical parameters per epoch (empty when none).
    pub scalar_history: Vec<Vec<f64>>,
    pub wall_seconds: f64,
    pub config: TrainConfig,
    /// Time domain the report covers (one subdomain of the problem's).
    pub t_domain: (f64, f64),
    /// Note on conventions that affect reported magnitudes.
    pub notes: Vec<String>,
}

/// Builds the four networks for a problem.
pub fn build_solution(
    problem: &ProblemSpec,
    sizes: &NetworkSizes,
    n_modes: usize,
    seed: u64,
    t_domain: (f64, f64),
) -> Result<ModalSolution> {
    let embed = match problem.bc {
        BoundaryCondition::Periodic { length } => Some(length),
        BoundaryCondition::Dirichlet { .. } => None,
    };
    let spec = |mut widths: Vec<usize>| {
        let s = MlpSpec::new(std::mem::take(&mut widths));
        match embed {
            Some(l) => s.with_embed(l),
            None => s,
        }
    };
    let mut widths_ubar = vec![2];
    widths_ubar.extend(&sizes.ubar_hidden);
    widths_ubar.push(1);
    let mut widths_u = vec![2];
    widths_u.extend(&sizes.u_hidden);
    widths_u.push(n_modes);
    let mut widths_y = vec![problem.stoch_dim + 1];
    widths_y.extend(&sizes.y_hidden);
    widths_y.push(n_modes);
    let ubar_net = Mlp::init(&spec(widths_ubar), seed)?;
    let u_net = Mlp::init(&spec(widths_u), seed + 1)?;
    // The coefficient and scaling networks take no spatial input.
    let y_net = Mlp::init(&MlpSpec::new(widths_y), seed + 2)?;
    let a_net = if sizes.a_independent {
        let mut nets = Vec::with_capacity(n_modes);
        for i in 0..n_modes {
            let mut w = vec![1];
            w.extend(&sizes.a_hidden);
            w.push(1);
            nets.push(Mlp::init(&MlpSpec::new(w), seed + 3 + i as u64)?);
        }
        ScalingNet::Independent(nets)
    } else {
        let mut w = vec![1];
        w.extend(&sizes.a_hidden);
        w.push(n_modes);
        ScalingNet::Joint(Mlp::init(&MlpSpec::new(w), seed + 3)?)
    };
    Ok(ModalSolution {
        ubar_net,
        u_net,
        y_net,
        a_net,
        n_modes,
        meta: SolutionMeta {
            x_domain: problem.x_domain,
            t_domain,
            stoch_dim: problem.stoch_dim,
            xi_affine: problem.xi_affine.clone(),
        },
    })
}

/// Builds the fixed collocation points of a run on `t_domain`.
pub fn build_grid(
    problem: &ProblemSpec,
    cfg: &TrainConfig,
    t_domain: (f64, f64),
    subdomain: usize,
) -> Result<TrainingGrid> {
    let x = crate::quad::spatial_grid(problem.x_domain.0, problem.x_domain.1, cfg.n_x)?;
    let times = crate::quad::sample_uniform_times(
        cfg.n_t,
        t_domain.0,
        t_domain.1,
        cfg.seeds.times.wrapping_add(subdomain as u64),
    )?;
    let pts = problem.stochastic_points(cfg.n_xi, cfg.seeds.points)?;
    Ok(TrainingGrid::new(x, times, pts, t_domain.0))
}

struct SegmentOutcome {
    model: Model,
    report: RunReport,
}

/// Trains one time segment with explicit initial-component targets.
fn train_segment(
    problem: &ProblemSpec,
    cfg: &TrainConfig,
    t_domain: (f64, f64),
    subdomain: usize,
    ic: &InitialComponents,
    grid: &TrainingGrid,
    observations: &[Observation],
) -> Result<SegmentOutcome> {
    let start = std::time::Instant::now();
    let solution = build_solution(
        problem,
        &cfg.networks,
        cfg.n_modes,
        cfg.seeds.params.wrapping_add(1000 * subdomain as u64),
        t_domain,
    )?;
    let scalars: Vec<f64> = problem
        .params
        .values
        .iter()
        .zip(&problem.params.learnable)
        .filter(|(_, &l)| l)
        .map(|(&v, _)| v)
        .collect();
    let mut model = Model { solution, scalars };
    let plan = EvalPlan::new(
        &model.solution,
        problem,
        grid,
        ic,
        observations,
        cfg.kind,
        cfg.weights,
    )?;

    let mut adam = AdamState::new(model.param_count());
    let hp = AdamParams::with_lr(cfg.lr);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut scalar_history = Vec::new();
    let mut params = Vec::with_capacity(model.param_count());
    let mut grads_flat = Vec::with_capacity(model.param_count());
    let mut last_good: Vec<f64> = Vec::new();
    // Divergence watch: the 1000-epoch trailing mean may not blow past its
    // best value.
    let window = 1000.min(cfg.epochs.max(1));
    let mut window_sum = 0.0;
    let mut window_vals: std::collections::VecDeque<f64> = Default::default();
    let mut best_window = f64::INFINITY;

    for epoch in 0..cfg.epochs {
        let step = run_epoch(&model, &plan);
        let (breakdown, grads) = match step {
            Ok(v) => v,
            Err(e) => {
                if !last_good.is_empty() {
                    model.read_params(&last_good)?;
                }
                return Err(Error::Divergence {
                    context: format!("epoch {epoch}"),
                    detail: format!("{e}; parameters rolled back to the last finite state"),
                });
            }
        };
        history.push(breakdown);
        if !model.scalars.is_empty() {
            scalar_history.push(model.scalars.clone());
        }
        window_vals.push_back(breakdown.total);
        window_sum += breakdown.total;
        if window_vals.len() > window {
            window_sum -= window_vals.pop_front().unwrap();
        }
        if window_vals.len() == window {
            let avg = window_sum / window as f64;
            best_window = best_window.min(avg);
            if avg > 10.0 * best_window && avg > 1e-12 {
                if !last_good.is_empty() {
                    model.read_params(&last_good)?;
                }
                return Err(Error::Divergence {
                    context: format!("epoch {epoch}"),
                    detail: format!(
                        "trailing loss average {avg:.3e} regressed 10x past its best \
                         {best_window:.3e}"
                    ),
                });
            }
        }
        params.clear();
        model.write_params(&mut params);
        last_good.clone_from(&params);
        grads_flat.clear();
        grads.write_flat(&mut grads_flat);
        adam_step(&mut params, &grads_flat, &mut adam, &hp)?;
        model.read_params(&params)?;
    }

    let report = RunReport {
        history,
        scalar_history,
        wall_seconds: start.elapsed().as_secs_f64(),
        config: cfg.clone(),
        t_domain,
        notes: vec![
            "mode-indexed weak-residual sums carry an extra 1/N normalization".to_string(),
        ],
    };
    Ok(SegmentOutcome { model, report })
}

fn validate(problem: &ProblemSpec, cfg: &TrainConfig, observations: &[Observation]) -> Result<()> {
    if cfg.epochs < 1 {
        return Err(Error::config("training needs at least one epoch"));
    }
    if cfg.n_modes < 1 {
        return Err(Error::config("training needs at least one mode"));
    }
    if cfg.n_subdomains < 1 {
        return Err(Error::config("need at least one time subdomain"));
    }
    if problem.params.any_learnable() && observations.is_empty() {
        return Err(Error::config(
            "learnable physical parameters require observations; use infer_parameters",
        ));
    }
    problem.check_observations(observations)?;
    Ok(())
}

/// Trains the four networks on the whole time domain (single subdomain).
pub fn train(problem: &ProblemSpec, cfg: &TrainConfig) -> Result<(ModalSolution, RunReport)> {
    validate(problem, cfg, &[])?;
    if cfg.n_subdomains != 1 {
        return Err(Error::config(
            "train() is single-domain; use train_subdomains for decomposition",
        ));
    }
    let t_domain = problem.t_domain;
    let grid = build_grid(problem, cfg, t_domain, 0)?;
    let ic = problem.initial_components(&grid.x, &grid.pts, cfg.n_modes)?;
    let out = train_segment(problem, cfg, t_domain, 0, &ic, &grid, &[])?;
    write_outputs(&StitchedSolution {
        segments: vec![out.model.solution.clone()],
    }, std::slice::from_ref(&out.report), cfg)?;
    Ok((out.model.solution, out.report))
}

/// Trains `cfg.n_subdomains` contiguous equal time subdomains sequentially,
/// using each segment's end-time components as the next segment's initial
/// targets.
pub fn train_subdomains(
    problem: &ProblemSpec,
    cfg: &TrainConfig,
) -> Result<(StitchedSolution, Vec<RunReport>)> {
    validate(problem, cfg, &[])?;
    let (t0, t1) = problem.t_domain;
    let k = cfg.n_subdomains;
    let len = (t1 - t0) / k as f64;
    let mut segments = Vec::with_capacity(k);
    let mut reports = Vec::with_capacity(k);
    let mut ic: Option<InitialComponents> = None;
    for j in 0..k {
        let seg_domain = (t0 + j as f64 * len, t0 + (j + 1) as f64 * len);
        let grid = build_grid(problem, cfg, seg_domain, j)?;
        let targets = match ic.take() {
            Some(c) => c,
            None => problem.initial_components(&grid.x, &grid.pts, cfg.n_modes)?,
        };
        let out = train_segment(problem, cfg, seg_domain, j, &targets, &grid, &[])?;
        // Hand-off: the trained networks at the interface become the next
        // segment's initial condition.
        if j + 1 < k {
            let c = sample_components(&out.model.solution, seg_domain.1, &grid.x, &grid.pts);
            ic = Some(InitialComponents {
                mean: c.mean,
                modes: c.modes,
                scales: c.scales,
                coeffs: c.coeffs,
            });
        }
        segments.push(out.model.solution);
        reports.push(out.report);
    }
    let stitched = StitchedSolution { segments };
    write_outputs(&stitched, &reports, cfg)?;
    Ok((stitched, reports))
}

/// Inverse runs: learnable physical parameters are trained jointly with the
/// networks against mean-value observations (observation mismatch sits on
/// the IC/BC weight tier). Returns the per-epoch parameter trajectory in
/// the report.
pub fn infer_parameters(
    problem: &ProblemSpec,
    observations: &[Observation],
    cfg: &TrainConfig,
) -> Result<(ModalSolution, RunReport, Vec<f64>)> {
    if observations.is_empty() {
        return Err(Error::config("inverse run without observations"));
    }
    if !problem.params.any_learnable() {
        return Err(Error::config(
            "inverse run on a problem without learnable parameters",
        ));
    }
    validate(problem, cfg, observations)?;
    let t_domain = problem.t_domain;
    let grid = build_grid(problem, cfg, t_domain, 0)?;
    let ic = problem.initial_components(&grid.x, &grid.pts, cfg.n_modes)?;
    let out = train_segment(problem, cfg, t_domain, 0, &ic, &grid, observations)?;
    let estimates = out.model.scalars.clone();
    write_outputs(&StitchedSolution {
        segments: vec![out.model.solution.clone()],
    }, std::slice::from_ref(&out.report), cfg)?;
    Ok((out.model.solution, out.report, estimates))
}

/// Writes checkpoint / report / loss history when paths are configured.
fn write_outputs(
    solution: &StitchedSolution,
    reports: &[RunReport],
    cfg: &TrainConfig,
) -> Result<()> {
    if let Some(path) = &cfg.output.checkpoint {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        crate::modal::checkpoint::save_stitched(solution, path)?;
    }
    if let Some(path) = &cfg.output.report {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let json = serde_json::to_string_pretty(reports)
            .map_err(|e| Error::Data(format!("report encode: {e}")))?;
        std::fs::write(path, json)?;
    }
    if let Some(path) = &cfg.output.loss_history {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        write_loss_history(path, reports)?;
    }
    Ok(())
}

/// One record per epoch with the epoch index and all loss components.
pub fn write_loss_history(path: &std::path::Path, reports: &[RunReport]) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        "epoch,mse_w,mse_ic,mse_bc,mse_constraint,mse_obs,mse_0,total"
    )?;
    let mut epoch = 0usize;
    for report in reports {
        for b in &report.history {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                epoch,
                crate::reference::tables::fmt(b.mse_w),
                crate::reference::tables::fmt(b.mse_ic),
                crate::reference::tables::fmt(b.mse_bc),
                crate::reference::tables::fmt(b.mse_constraint),
                crate::reference::tables::fmt(b.mse_obs),
                crate::reference::tables::fmt(b.mse_0),
                crate::reference::tables::fmt(b.total),
            )?;
            epoch += 1;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::advection_problem;

    fn tiny_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            kind: ConstraintKind::Do,
            n_modes: 2,
            epochs,
            lr: 0.001,
            weights: LossWeights::default(),
            n_x: 10,
            n_t: 6,
            n_xi: 10,
            seeds: Seeds::default(),
            n_subdomains: 1,
            networks: NetworkSizes {
                ubar_hidden: vec![8],
                u_hidden: vec![8],
                a_hidden: vec![4],
                y_hidden: vec![8],
                a_independent: false,
            },
            output: OutputPaths::default(),
        }
    }

    #[test]
    fn zero_epochs_rejected() {
        let problem = advection_problem(0.8);
        assert!(train(&problem, &tiny_config(0)).is_err());
    }

    /// One epoch performs exactly one Adam step: every parameter moves by
    /// at most lr (up to the eps correction).
    #[test]
    fn single_epoch_single_step() {
        let problem = advection_problem(0.8);
        let cfg = tiny_config(1);
        let before = build_solution(&problem, &cfg.networks, 2, cfg.seeds.params, problem.t_domain)
            .unwrap();
        let (after, report) = train(&problem, &cfg).unwrap();
        assert_eq!(report.history.len(), 1);
        let mut pb = Vec::new();
        before.write_params(&mut pb);
        let mut pa = Vec::new();
        after.write_params(&mut pa);
        let max_move = pb
            .iter()
            .zip(&pa)
            .map(|(b, a)| (b - a).abs())
            .fold(0.0f64, f64::max);
        assert!(max_move <= cfg.lr * 1.0000001, "max move {max_move}");
        assert!(max_move > 0.0);
    }

    /// Identical seeds give bit-identical reports and parameters.
    #[test]
    fn deterministic_reruns() {
        let problem = advection_problem(0.8);
        let cfg = tiny_config(25);
        let (s1, r1) = train(&problem, &cfg).unwrap();
        let (s2, r2) = train(&problem, &cfg).unwrap();
        let mut p1 = Vec::new();
        s1.write_params(&mut p1);
        let mut p2 = Vec::new();
        s2.write_params(&mut p2);
        assert_eq!(p1.len(), p2.len());
        for (a, b) in p1.iter().zip(&p2) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in r1.history.iter().zip(&r2.history) {
            assert_eq!(a.total.to_bits(), b.total.to_bits());
        }
    }

    /// k = 1 subdomain reduces exactly to train().
    #[test]
    fn one_subdomain_matches_train() {
        let problem = advection_problem(0.8);
        let cfg = tiny_config(10);
        let (single, _) = train(&problem, &cfg).unwrap();
        let (stitched, reports) = train_subdomains(&problem, &cfg).unwrap();
        assert_eq!(stitched.segments.len(), 1);
        assert_eq!(reports.len(), 1);
        let mut p1 = Vec::new();
        single.write_params(&mut p1);
        let mut p2 = Vec::new();
        stitched.segments[0].write_params(&mut p2);
        for (a, b) in p1.iter().zip(&p2) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    /// Subdomain hand-off: segment j+1 trains against segment j's end-time
    /// components and interface continuity is reported.
    #[test]
    fn subdomain_handoff_continuity() {
        let mut problem = advection_problem(0.8);
        problem.t_domain = (0.0, 1.0);
        let mut cfg = tiny_config(400);
        cfg.n_subdomains = 2;
        let (stitched, reports) = train_subdomains(&problem, &cfg).unwrap();
        assert_eq!(stitched.segments.len(), 2);
        assert_eq!(reports.len(), 2);
        // Interface continuity of the mean field (loose bound: this is a
        // tiny training run).
        use crate::modal::ModalEval;
        let t_int = 0.5;
        let mut max_jump = 0.0f64;
        for &x in &[-2.0, 0.0, 1.5] {
            let a = stitched.segments[0].mean_jet(x, t_int).value;
            let b = stitched.segments[1].mean_jet(x, t_int).value;
            max_jump = max_jump.max((a - b).abs());
        }
        assert!(max_jump < 0.5, "interface jump {max_jump}");
    }

    #[test]
    fn inverse_requires_observations_and_learnables() {
        let problem = advection_problem(0.8);
        let cfg = tiny_config(2);
        assert!(infer_parameters(&problem, &[], &cfg).is_err());
        let obs = vec![Observation {
            x: 0.0,
            t: 1.0,
            mean: 0.0,
        }];
        // advection has no learnable parameters
        assert!(infer_parameters(&problem, &obs, &cfg).is_err());
        // train() on a problem with learnables errors out
        let kernel = crate::modal::KernelSpec::squared_exponential(1.0, 0.4).unwrap();
        let inv = crate::problem::diffusion_reaction_problem(
            crate::problem::ParamSpec::Learnable { init: 1.0 },
            crate::problem::ParamSpec::Fixed(0.5),
            kernel,
            3,
        )
        .unwrap();
        assert!(train(&inv, &tiny_config(2)).is_err());
    }

    /// Observations outside the domain are rejected.
    #[test]
    fn observations_outside_domain_rejected() {
        let kernel = crate::modal::KernelSpec::squared_exponential(1.0, 0.4).unwrap();
        let inv = crate::problem::diffusion_reaction_problem(
            crate::problem::ParamSpec::Learnable { init: 1.0 },
            crate::problem::ParamSpec::Fixed(0.5),
            kernel,
            3,
        )
        .unwrap();
        let cfg = tiny_config(2);
        let obs = vec![Observation {
            x: 5.0,
            t: 0.5,
            mean: 0.0,
        }];
        assert!(matches!(
            infer_parameters(&inv, &obs, &cfg),
            Err(Error::Data(_))
        ));
    }
}
