//! Run configuration files and presets.
//!
//! A run file is structured text with `[problem]`, `[networks]`,
//! `[training]`, `[points]`, `[output]` sections, plus optional
//! `[reference]` and `[observations]`. Presets reproduce the benchmark
//! setups at paper scale and at desk scale (reduced epochs and sizes so the
//! acceptance gates finish in bounded time).

use crate::error::{Error, Result};
use crate::loss::{ConstraintKind, LossWeights};
use crate::modal::KernelSpec;
use crate::problem::{
    advection_problem, burgers_problem, diffusion_reaction_problem, sensor_ic_variant,
    Observation, ParamSpec, ProblemSpec,
};
use crate::train::{NetworkSizes, OutputPaths, Seeds, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    /// "advection" | "burgers" | "diffusion-reaction"
    pub kind: String,
    pub sigma: Option<f64>,
    pub nu: Option<f64>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    #[serde(default)]
    pub a_learnable: bool,
    #[serde(default)]
    pub b_learnable: bool,
    pub sigma_g: Option<f64>,
    pub corr_len: Option<f64>,
    pub n_kl: Option<usize>,
    /// Truncate the trained time domain to [t0, t_end].
    pub t_end: Option<f64>,
    /// Noisy-sensor initial data.
    pub sensors: Option<SensorSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSection {
    pub count: usize,
    pub noise_sd: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworksSection {
    pub ubar_hidden: Vec<usize>,
    pub u_hidden: Vec<usize>,
    pub a_hidden: Vec<usize>,
    pub y_hidden: Vec<usize>,
    #[serde(default)]
    pub a_independent: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    /// "do" | "bo"
    pub constraint: String,
    pub n_modes: usize,
    pub epochs: usize,
    pub lr: f64,
    #[serde(default = "default_weight_weak")]
    pub weight_weak: f64,
    #[serde(default = "default_weight_icbc")]
    pub weight_icbc: f64,
    #[serde(default = "default_weight_reg")]
    pub weight_reg: f64,
    #[serde(default = "default_one")]
    pub subdomains: usize,
}

fn default_weight_weak() -> f64 {
    1.0
}
fn default_weight_icbc() -> f64 {
    100.0
}
fn default_weight_reg() -> f64 {
    0.1
}
fn default_one() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointsSection {
    pub n_x: usize,
    pub n_t: usize,
    pub n_xi: usize,
    #[serde(default)]
    pub seed_params: u64,
    #[serde(default = "default_one_u64")]
    pub seed_times: u64,
    #[serde(default = "default_two_u64")]
    pub seed_points: u64,
}

fn default_one_u64() -> u64 {
    1
}
fn default_two_u64() -> u64 {
    2
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    pub checkpoint: Option<String>,
    pub report: Option<String>,
    pub loss_history: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSection {
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    pub mc_n_x: Option<usize>,
    pub mc_dt: Option<f64>,
    #[serde(default = "default_seed_ref")]
    pub seed: u64,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    pub bo_modes: Option<usize>,
    pub bo_dt: Option<f64>,
    pub bo_bootstrap_t: Option<f64>,
    pub bo_samples: Option<usize>,
    #[serde(default = "default_tol_cross")]
    pub bo_tol_cross_rel: f64,
}

fn default_mc_samples() -> usize {
    1000
}
fn default_seed_ref() -> u64 {
    77
}
fn default_tol_cross() -> f64 {
    1e-8
}

impl Default for ReferenceSection {
    fn default() -> Self {
        ReferenceSection {
            mc_samples: default_mc_samples(),
            mc_n_x: None,
            mc_dt: None,
            seed: default_seed_ref(),
            snapshot_times: vec![],
            bo_modes: None,
            bo_dt: None,
            bo_bootstrap_t: None,
            bo_samples: None,
            bo_tol_cross_rel: default_tol_cross(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationsSection {
    #[serde(default)]
    pub entries: Vec<Observation>,
}

/// A full run file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub problem: ProblemSection,
    pub networks: NetworksSection,
    pub training: TrainingSection,
    pub points: PointsSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub reference: ReferenceSection,
    #[serde(default)]
    pub observations: ObservationsSection,
}

impl RunFile {
    pub fn parse(text: &str) -> Result<RunFile> {
        toml::from_str(text).map_err(|e| Error::Parse(format!("run file: {e}")))
    }

    pub fn load(path: &Path) -> Result<RunFile> {
        RunFile::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run file serialization")
    }

    /// Builds the problem this file describes.
    pub fn build_problem(&self) -> Result<ProblemSpec> {
        let p = &self.problem;
        let mut problem = match p.kind.as_str() {
            "advection" => advection_problem(p.sigma.unwrap_or(0.8)),
            "burgers" => burgers_problem(p.nu.unwrap_or(0.1)),
            "diffusion-reaction" => {
                let kernel = KernelSpec::squared_exponential(
                    p.sigma_g.unwrap_or(1.0),
                    p.corr_len.unwrap_or(0.1),
                )?;
                let a = if p.a_learnable {
                    ParamSpec::Learnable {
                        init: p.a.unwrap_or(1.0),
                    }
                } else {
                    ParamSpec::Fixed(p.a.unwrap_or(0.1))
                };
                let b = if p.b_learnable {
                    ParamSpec::Learnable {
                        init: p.b.unwrap_or(1.0),
                    }
                } else {
                    ParamSpec::Fixed(p.b.unwrap_or(0.5))
                };
                diffusion_reaction_problem(a, b, kernel, p.n_kl.unwrap_or(19))?
            }
            other => {
                return Err(Error::config(format!(
                    "unknown problem kind {other:?} (expected advection, burgers, \
                     or diffusion-reaction)"
                )))
            }
        };
        if let Some(t_end) = p.t_end {
            if !(t_end > problem.t_domain.0) || t_end > problem.t_domain.1 + 1e-12 {
                return Err(Error::config(format!(
                    "t_end = {t_end} outside the problem time domain"
                )));
            }
            problem.t_domain.1 = t_end;
        }
        if let Some(s) = &p.sensors {
            problem = sensor_ic_variant(&problem, s.count, s.noise_sd, s.seed)?;
        }
        Ok(problem)
    }

    /// Builds the training configuration, resolving output paths.
    pub fn build_train_config(&self) -> Result<TrainConfig> {
        let kind = match self.training.constraint.as_str() {
            "do" => ConstraintKind::Do,
            "bo" => ConstraintKind::Bo,
            other => {
                return Err(Error::config(format!(
                    "unknown constraint {other:?} (expected \"do\" or \"bo\")"
                )))
            }
        };
        let dir = self.output.dir.clone().unwrap_or_else(|| PathBuf::from("."));
        let join = |name: &Option<String>| name.as_ref().map(|n| dir.join(n));
        Ok(TrainConfig {
            kind,
            n_modes: self.training.n_modes,
            epochs: self.training.epochs,
            lr: self.training.lr,
            weights: LossWeights {
                weak: self.training.weight_weak,
                ic_bc: self.training.weight_icbc,
                reg: self.training.weight_reg,
            },
            n_x: self.points.n_x,
            n_t: self.points.n_t,
            n_xi: self.points.n_xi,
            seeds: Seeds {
                params: self.points.seed_params,
                times: self.points.seed_times,
                points: self.points.seed_points,
            },
            n_subdomains: self.training.subdomains,
            networks: NetworkSizes {
                ubar_hidden: self.networks.ubar_hidden.clone(),
                u_hidden: self.networks.u_hidden.clone(),
                a_hidden: self.networks.a_hidden.clone(),
                y_hidden: self.networks.y_hidden.clone(),
                a_independent: self.networks.a_independent,
            },
            output: OutputPaths {
                checkpoint: join(&self.output.checkpoint),
                report: join(&self.output.report),
                loss_history: join(&self.output.loss_history),
            },
        })
    }
}

/// Named benchmark presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Advection NN-DO, paper sizes, 100k epochs.
    AdvectionDoDesk,
    /// Advection NN-BO, paper sizes, 100k epochs.
    AdvectionBoDesk,
    /// Advection NN-DO at the full 300k epochs.
    AdvectionDoPaper,
    AdvectionBoPaper,
    /// Burgers NN-BO, first subdomain [0, pi], 50k epochs.
    BurgersBoDesk,
    BurgersDoDesk,
    /// Burgers NN-BO over [0, 10 pi] with ten subdomains, 50k epochs each.
    BurgersBoPaper,
    BurgersDoPaper,
    /// Diffusion-reaction forward NN-BO, reduced widths/points, 100k epochs.
    DrForwardDesk,
    /// Diffusion-reaction forward at paper scale.
    DrForwardPaper,
    /// Inverse problem (learnable a, b), reduced scale, 100k epochs.
    DrInverseDesk,
    DrInversePaper,
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::AdvectionDoDesk => "advection-do-desk",
            Preset::AdvectionBoDesk => "advection-bo-desk",
            Preset::AdvectionDoPaper => "advection-do-paper",
            Preset::AdvectionBoPaper => "advection-bo-paper",
            Preset::BurgersBoDesk => "burgers-bo-desk",
            Preset::BurgersDoDesk => "burgers-do-desk",
            Preset::BurgersBoPaper => "burgers-bo-paper",
            Preset::BurgersDoPaper => "burgers-do-paper",
            Preset::DrForwardDesk => "dr-forward-desk",
            Preset::DrForwardPaper => "dr-forward-paper",
            Preset::DrInverseDesk => "dr-inverse-desk",
            Preset::DrInversePaper => "dr-inverse-paper",
        }
    }

    pub fn all() -> &'static [Preset] {
        &[
            Preset::AdvectionDoDesk,
            Preset::AdvectionBoDesk,
            Preset::AdvectionDoPaper,
            Preset::AdvectionBoPaper,
            Preset::BurgersBoDesk,
            Preset::BurgersDoDesk,
            Preset::BurgersBoPaper,
            Preset::BurgersDoPaper,
            Preset::DrForwardDesk,
            Preset::DrForwardPaper,
            Preset::DrInverseDesk,
            Preset::DrInversePaper,
        ]
    }

    pub fn from_name(name: &str) -> Result<Preset> {
        Preset::all()
            .iter()
            .copied()
            .find(|p| p.name() == name)
            .ok_or_else(|| {
                let names: Vec<&str> = Preset::all().iter().map(|p| p.name()).collect();
                Error::config(format!(
                    "unknown preset {name:?}; available: {}",
                    names.join(", ")
                ))
            })
    }

    /// The run file this preset expands to.
    pub fn run_file(&self) -> RunFile {
        let pi = std::f64::consts::PI;
        let adv_networks = NetworksSection {
            ubar_hidden: vec![32, 32, 32],
            u_hidden: vec![32, 32, 32],
            a_hidden: vec![16, 16, 16],
            y_hidden: vec![64, 64, 64, 64],
            a_independent: false,
        };
        let burgers_networks = NetworksSection {
            ubar_hidden: vec![32, 32, 32],
            u_hidden: vec![64, 64, 64],
            a_hidden: vec![32, 32, 32],
            y_hidden: vec![32, 32, 32],
            a_independent: false,
        };
        // Reduced widths keep the desk-scale runs inside the time budget;
        // the paper presets carry the published sizes.
        let dr_networks_desk = NetworksSection {
            ubar_hidden: vec![32, 32, 32],
            u_hidden: vec![32, 32, 32],
            a_hidden: vec![4, 4, 4],
            y_hidden: vec![32, 32, 32],
            a_independent: true,
        };
        let dr_networks_paper = NetworksSection {
            ubar_hidden: vec![32, 32, 32],
            u_hidden: vec![64, 64, 64],
            a_hidden: vec![4, 4, 4],
            y_hidden: vec![64, 64, 64],
            a_independent: true,
        };
        let advection = |constraint: &str, epochs: usize| RunFile {
            problem: ProblemSection {
                kind: "advection".into(),
                sigma: Some(0.8),
                nu: None,
                a: None,
                b: None,
                a_learnable: false,
                b_learnable: false,
                sigma_g: None,
                corr_len: None,
                n_kl: None,
                t_end: None,
                sensors: None,
            },
            networks: adv_networks.clone(),
            training: TrainingSection {
                constraint: constraint.into(),
                n_modes: 2,
                epochs,
                lr: 0.001,
                weight_weak: 1.0,
                weight_icbc: 100.0,
                weight_reg: 0.1,
                subdomains: 1,
            },
            points: PointsSection {
                n_x: 50,
                n_t: 50,
                n_xi: 50,
                seed_params: 0,
                seed_times: 1,
                seed_points: 2,
            },
            output: OutputSection::default(),
            reference: ReferenceSection {
                mc_samples: 2000,
                mc_n_x: Some(201),
                mc_dt: Some(0.005),
                snapshot_times: vec![pi / 2.0, pi],
                ..Default::default()
            },
            observations: ObservationsSection::default(),
        };
        let burgers = |constraint: &str, subdomains: usize, t_end: Option<f64>| RunFile {
            problem: ProblemSection {
                kind: "burgers".into(),
                sigma: None,
                nu: Some(0.1),
                a: None,
                b: None,
                a_learnable: false,
                b_learnable: false,
                sigma_g: None,
                corr_len: None,
                n_kl: None,
                t_end,
                sensors: None,
            },
            networks: burgers_networks.clone(),
            training: TrainingSection {
                constraint: constraint.into(),
                n_modes: 2,
                epochs: 50_000,
                lr: 0.001,
                weight_weak: 1.0,
                weight_icbc: 100.0,
                weight_reg: 0.1,
                subdomains,
            },
            points: PointsSection {
                n_x: 50,
                n_t: 30,
                n_xi: 64,
                seed_params: 0,
                seed_times: 1,
                seed_points: 2,
            },
            output: OutputSection::default(),
            reference: ReferenceSection {
                mc_samples: 1000,
                mc_n_x: Some(128),
                mc_dt: Some(2e-4),
                snapshot_times: vec![pi],
                bo_modes: Some(2),
                bo_dt: Some(2e-4),
                bo_bootstrap_t: Some(0.0),
                bo_samples: Some(200),
                bo_tol_cross_rel: 0.05,
                ..Default::default()
            },
            observations: ObservationsSection::default(),
        };
        let dr = |desk: bool, inverse: bool| {
            let (a, b, corr_len) = if inverse {
                (1.0, 1.0, 0.4)
            } else {
                (0.1, 0.5, 0.1)
            };
            RunFile {
                problem: ProblemSection {
                    kind: "diffusion-reaction".into(),
                    sigma: None,
                    nu: None,
                    a: Some(a),
                    b: Some(b),
                    a_learnable: inverse,
                    b_learnable: inverse,
                    sigma_g: Some(1.0),
                    corr_len: Some(corr_len),
                    n_kl: Some(19),
                    t_end: None,
                    sensors: None,
                },
                networks: if desk {
                    dr_networks_desk.clone()
                } else {
                    dr_networks_paper.clone()
                },
                training: TrainingSection {
                    constraint: "bo".into(),
                    n_modes: if inverse || desk { 4 } else { 6 },
                    epochs: if desk { 100_000 } else { 300_000 },
                    lr: 0.001,
                    weight_weak: 1.0,
                    weight_icbc: 100.0,
                    weight_reg: 0.1,
                    subdomains: 1,
                },
                points: PointsSection {
                    n_x: 51,
                    n_t: if desk { 30 } else { 50 },
                    n_xi: if desk { 500 } else { 1000 },
                    seed_params: 0,
                    seed_times: 1,
                    seed_points: 2,
                },
                output: OutputSection::default(),
                reference: ReferenceSection {
                    mc_samples: 1000,
                    mc_n_x: Some(101),
                    mc_dt: Some(1e-3),
                    snapshot_times: vec![0.1, 0.9, 1.0],
                    bo_modes: Some(if desk { 4 } else { 6 }),
                    bo_dt: Some(2e-4),
                    bo_bootstrap_t: Some(0.01),
                    bo_samples: Some(1000),
                    ..Default::default()
                },
                observations: ObservationsSection::default(),
            }
        };
        match self {
            Preset::AdvectionDoDesk => advection("do", 100_000),
            Preset::AdvectionBoDesk => advection("bo", 100_000),
            Preset::AdvectionDoPaper => advection("do", 300_000),
            Preset::AdvectionBoPaper => advection("bo", 300_000),
            Preset::BurgersBoDesk => burgers("bo", 1, Some(pi)),
            Preset::BurgersDoDesk => burgers("do", 1, Some(pi)),
            Preset::BurgersBoPaper => burgers("bo", 10, None),
            Preset::BurgersDoPaper => burgers("do", 10, None),
            Preset::DrForwardDesk => dr(true, false),
            Preset::DrForwardPaper => dr(false, false),
            Preset::DrInverseDesk => dr(true, true),
            Preset::DrInversePaper => dr(false, true),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_toml() {
        for preset in Preset::all() {
            let file = preset.run_file();
            let text = file.to_toml();
            let back = RunFile::parse(&text).unwrap();
            assert_eq!(back.problem.kind, file.problem.kind, "{}", preset.name());
            let problem = back.build_problem().unwrap();
            let cfg = back.build_train_config().unwrap();
            assert!(cfg.epochs > 0);
            assert!(problem.stoch_dim >= 1);
        }
    }

    #[test]
    fn unknown_fields_rejected() {
        let preset = Preset::AdvectionDoDesk.run_file();
        let mut text = preset.to_toml();
        text.push_str("\nbogus_top_level = 1\n");
        assert!(RunFile::parse(&text).is_err());
    }

    #[test]
    fn unknown_preset_name() {
        assert!(Preset::from_name("no-such-preset").is_err());
        assert_eq!(
            Preset::from_name("advection-do-desk").unwrap(),
            Preset::AdvectionDoDesk
        );
    }

    #[test]
    fn burgers_desk_truncates_domain() {
        let file = Preset::BurgersBoDesk.run_file();
        let problem = file.build_problem().unwrap();
        approx::assert_abs_diff_eq!(
            problem.t_domain.1,
            std::f64::consts::PI,
            epsilon = 1e-12
        );
    }

    #[test]
    fn output_paths_joined_to_dir() {
        let mut file = Preset::AdvectionDoDesk.run_file();
        file.output.dir = Some(PathBuf::from("/tmp/run1"));
        file.output.checkpoint = Some("model.json".into());
        let cfg = file.build_train_config().unwrap();
        assert_eq!(
            cfg.output.checkpoint.unwrap(),
            PathBuf::from("/tmp/run1/model.json")
        );
    }
}
