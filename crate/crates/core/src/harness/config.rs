use crate::baselines::{FlowMatchingConfig, MmotConfig, SinkhornConfig};
use crate::error::{Error, Result};
use crate::flows::{FlowKind, MarginalFlow};
use crate::kernel::RadialKernel;
use crate::metrics::DriftEvaluation;
use crate::models::{FeatureSet, ModelSpec};
use crate::optim::{FirstOrderConfig, QuasiNewtonConfig};
use crate::par::Execution;
use crate::penalty::{LossConfig, TimeMode};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// The runnable suites.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Exp1,
    Exp2,
    Exp3,
    Exp4,
    Exp5,
    Stochastic,
    Sensitivity,
    Dimscan,
    Baselines,
}

impl Suite {
    pub const ALL: [Suite; 9] = [
        Suite::Exp1,
        Suite::Exp2,
        Suite::Exp3,
        Suite::Exp4,
        Suite::Exp5,
        Suite::Stochastic,
        Suite::Sensitivity,
        Suite::Dimscan,
        Suite::Baselines,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Exp1 => "exp1",
            Suite::Exp2 => "exp2",
            Suite::Exp3 => "exp3",
            Suite::Exp4 => "exp4",
            Suite::Exp5 => "exp5",
            Suite::Stochastic => "stochastic",
            Suite::Sensitivity => "sensitivity",
            Suite::Dimscan => "dimscan",
            Suite::Baselines => "baselines",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown experiment '{name}'")))
    }
}

/// Batch sizes and ensemble size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    /// Time slices per batch.
    pub m: usize,
    /// Particles per slice.
    pub n: usize,
    /// Initial-distribution particles.
    pub n0: usize,
    #[serde(default)]
    pub time_mode: TimeMode,
    /// Pre-cached batches per run.
    pub k_ens: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    QuasiNewton(QuasiNewtonConfig),
    Adaptive(FirstOrderConfig),
}

/// One model fitted with the all-time loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub name: String,
    pub model: ModelSpec,
    pub optimizer: OptimizerConfig,
}

/// What is measured after fitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Marginal comparison times.
    #[serde(default = "default_times")]
    pub times: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<DriftEvaluation>,
    /// Simulated particles; 0 skips the marginal metrics.
    pub particles: usize,
    pub steps: usize,
    /// Reference draws from `μ_t` at each time.
    pub reference_particles: usize,
    #[serde(default = "default_projections")]
    pub projections: usize,
    /// Bandwidth of the MMD kernel.
    #[serde(default = "default_bandwidth")]
    pub mmd_bandwidth: f64,
    /// MMD uses at most this many points from each sample.
    #[serde(default = "default_mmd_points")]
    pub mmd_max_points: usize,
}

fn default_times() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 0.75, 1.0]
}
fn default_projections() -> usize {
    200
}
fn default_bandwidth() -> f64 {
    1.0
}
fn default_mmd_points() -> usize {
    5000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowMatchingSetup {
    pub model: ModelSpec,
    /// Endpoint samples drawn from `μ₀` and `μ_T`.
    pub samples: usize,
    #[serde(default)]
    pub fit: FlowMatchingConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WotSetup {
    /// Snapshot counts; snapshots are equally spaced on `[0, T]`.
    pub m_list: Vec<usize>,
    /// Particles per snapshot.
    pub n: usize,
    #[serde(default)]
    pub sinkhorn: SinkhornConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmotSetup {
    /// Snapshot counts; snapshots are equally spaced on `[0, T]`.
    pub n_list: Vec<usize>,
    pub samples: usize,
    #[serde(default)]
    pub fit: MmotConfig,
}

/// Comparison methods run next to the all-time fits.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    #[serde(default)]
    pub zero: bool,
    /// Evaluate the known optimal drift.
    #[serde(default)]
    pub truth: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_matching: Option<FlowMatchingSetup>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wot: Option<WotSetup>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mmot: Option<MmotSetup>,
}

/// One-at-a-time sweep around the base config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub m_values: Vec<usize>,
    pub n_values: Vec<usize>,
    pub lambda_values: Vec<f64>,
    /// Independent realizations per cell.
    pub k_seed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimScanConfig {
    pub dims: Vec<usize>,
    pub k_seed: usize,
    /// Half-width of the Monte-Carlo box `[−r, r]ᵈ`.
    pub box_half_width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write simulated snapshots as CSV.
    #[serde(default)]
    pub snapshots: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("results"),
            snapshots: false,
        }
    }
}

/// Everything needed to reproduce one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Suite,
    pub flow: MarginalFlow,
    pub loss: LossConfig,
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub methods: Vec<MethodConfig>,
    pub seeds: Vec<u64>,
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub baselines: BaselineConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimscan: Option<DimScanConfig>,
    #[serde(default)]
    pub output: OutputConfig,
    /// Run independent seeds and sweep cells concurrently.
    #[serde(default = "sequential")]
    pub jobs: Execution,
}

fn sequential() -> Execution {
    Execution::Sequential
}

fn qn(restarts: usize) -> OptimizerConfig {
    OptimizerConfig::QuasiNewton(QuasiNewtonConfig {
        restarts,
        ..Default::default()
    })
}

fn dictionary(name: &str, features: FeatureSet, restarts: usize) -> MethodConfig {
    MethodConfig {
        name: name.into(),
        model: ModelSpec::Dictionary { features },
        optimizer: qn(restarts),
    }
}

fn loss(lambda: f64, sigma: f64) -> LossConfig {
    LossConfig {
        lambda,
        sigma,
        horizon: 1.0,
        kernel: RadialKernel::default(),
        same_slice_mask: false,
        execution: Execution::default(),
    }
}

fn sampling(m: usize, n: usize, n0: usize, k_ens: usize) -> SamplingConfig {
    SamplingConfig {
        m,
        n,
        n0,
        time_mode: TimeMode::Grid,
        k_ens,
    }
}

fn evaluation(drift: Option<DriftEvaluation>, particles: usize, steps: usize) -> EvaluationConfig {
    EvaluationConfig {
        times: default_times(),
        drift,
        particles,
        steps,
        reference_particles: particles,
        projections: default_projections(),
        mmd_bandwidth: default_bandwidth(),
        mmd_max_points: default_mmd_points(),
    }
}

impl ExperimentConfig {
    /// Built-in defaults for each suite.
    pub fn preset(suite: Suite) -> Self {
        let base = |flow: FlowKind,
                    loss: LossConfig,
                    sampling: SamplingConfig,
                    eval: EvaluationConfig| Self {
            experiment: suite,
            flow: MarginalFlow::unit(flow),
            loss,
            sampling,
            methods: Vec::new(),
            seeds: vec![0],
            evaluation: eval,
            baselines: BaselineConfig::default(),
            sweep: None,
            dimscan: None,
            output: OutputConfig::default(),
            jobs: Execution::Sequential,
        };
        let grid_1d = |r: f64| Some(DriftEvaluation::grid(vec![(-r, r)]));
        match suite {
            Suite::Exp1 => {
                let mut c = base(
                    FlowKind::GaussTranslate1d,
                    loss(1e3, 0.0),
                    sampling(50, 25, 50, 30),
                    evaluation(grid_1d(4.0), 5000, 1000),
                );
                c.methods = vec![dictionary("all_time", FeatureSet::Affine1d, 4)];
                c.seeds = vec![0, 1, 2];
                c
            }
            Suite::Exp2 => {
                let mut c = base(
                    FlowKind::Roundtrip1d,
                    loss(1e3, 0.0),
                    sampling(50, 25, 50, 30),
                    evaluation(grid_1d(4.0), 5000, 1000),
                );
                c.methods = vec![dictionary("all_time", FeatureSet::QuadT1d, 4)];
                c.baselines.zero = true;
                c.baselines.flow_matching = Some(FlowMatchingSetup {
                    model: ModelSpec::Dictionary {
                        features: FeatureSet::QuadT1d,
                    },
                    samples: 200,
                    fit: FlowMatchingConfig::default(),
                });
                c
            }
            Suite::Baselines => {
                let mut c = Self::preset(Suite::Exp2);
                c.experiment = suite;
                c.methods.clear();
                c.baselines.wot = Some(WotSetup {
                    m_list: vec![5, 10, 20, 50],
                    n: 200,
                    sinkhorn: SinkhornConfig::default(),
                });
                c.baselines.mmot = Some(MmotSetup {
                    n_list: vec![5, 10, 20, 50],
                    samples: 200,
                    fit: MmotConfig::default(),
                });
                c
            }
            Suite::Exp3 => {
                let mut c = base(
                    FlowKind::BimodalMerge1d,
                    loss(5e3, 0.0),
                    sampling(50, 30, 60, 20),
                    evaluation(grid_1d(4.0), 5000, 1000),
                );
                c.methods = vec![
                    dictionary("bilinear", FeatureSet::Bilinear1d, 4),
                    dictionary("tanh", FeatureSet::Tanh1d, 4),
                    MethodConfig {
                        name: "mlp".into(),
                        model: ModelSpec::Mlp {
                            dim: 1,
                            hidden: vec![48, 48],
                        },
                        optimizer: OptimizerConfig::Adaptive(FirstOrderConfig::default()),
                    },
                ];
                c
            }
            Suite::Exp4 => {
                let mut c = base(
                    FlowKind::GaussTranslate2d,
                    loss(1e3, 0.0),
                    sampling(25, 20, 50, 15),
                    evaluation(
                        Some(DriftEvaluation::grid(vec![(-4.0, 4.0), (-4.0, 4.0)])),
                        5000,
                        1000,
                    ),
                );
                c.methods = vec![dictionary("affine", FeatureSet::AffineD { dim: 2 }, 4)];
                c
            }
            Suite::Exp5 => {
                let mut c = base(
                    FlowKind::Bifurcation2d,
                    loss(3e3, 0.0),
                    sampling(25, 25, 60, 10),
                    evaluation(
                        Some(DriftEvaluation::grid(vec![(-4.0, 4.0), (-3.0, 3.0)])),
                        4000,
                        1000,
                    ),
                );
                c.methods = vec![
                    dictionary("affine", FeatureSet::AffineD { dim: 2 }, 4),
                    dictionary("bilinear", FeatureSet::Bilinear2d, 4),
                    dictionary("tanh", FeatureSet::Tanh2d, 4),
                ];
                c
            }
            Suite::Stochastic => {
                let mut c = base(
                    FlowKind::StochasticGauss1d { sigma: 1.0 },
                    loss(1e3, 1.0),
                    sampling(30, 30, 60, 30),
                    evaluation(grid_1d(3.0), 20_000, 2000),
                );
                c.methods = vec![MethodConfig {
                    name: "all_time".into(),
                    model: ModelSpec::Dictionary {
                        features: FeatureSet::Affine1d,
                    },
                    optimizer: OptimizerConfig::Adaptive(FirstOrderConfig {
                        iterations: 15_000,
                        lr_initial: 5e-4,
                        lr_final: 5e-5,
                        k_batch: 1,
                        ..Default::default()
                    }),
                }];
                c.baselines.zero = true;
                c.baselines.truth = true;
                c
            }
            Suite::Sensitivity => {
                let mut c = base(
                    FlowKind::GaussTranslate1d,
                    loss(1e3, 0.0),
                    sampling(30, 20, 50, 5),
                    evaluation(grid_1d(3.0), 0, 1),
                );
                c.methods = vec![dictionary("all_time", FeatureSet::Affine1d, 1)];
                c.sweep = Some(SweepConfig {
                    m_values: vec![10, 15, 20, 30, 50],
                    n_values: vec![5, 10, 15, 25, 40],
                    lambda_values: vec![1e1, 1e2, 1e3, 1e4, 1e5],
                    k_seed: 4,
                });
                c
            }
            Suite::Dimscan => {
                let mut c = base(
                    FlowKind::GaussTranslateNd { dim: 1 },
                    loss(1e3, 0.0),
                    sampling(25, 20, 50, 5),
                    evaluation(None, 0, 1),
                );
                c.methods = vec![dictionary("all_time", FeatureSet::AffineD { dim: 1 }, 1)];
                c.dimscan = Some(DimScanConfig {
                    dims: vec![1, 2, 3, 5, 8, 10],
                    k_seed: 3,
                    box_half_width: 3.0,
                });
                c
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.flow.validate()?;
        self.loss.validate()?;
        let s = &self.sampling;
        if s.m == 0 || s.n == 0 || s.n0 == 0 || s.k_ens == 0 {
            return Err(Error::Config("sampling sizes must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed required".into()));
        }
        if (self.flow.horizon - self.loss.horizon).abs() > 1e-12 * self.flow.horizon {
            return Err(Error::Config("flow and loss horizons differ".into()));
        }
        if (self.flow.sigma() - self.loss.sigma).abs() > 0.0 {
            return Err(Error::Config(format!(
                "loss sigma {} does not match the flow's diffusion {}",
                self.loss.sigma,
                self.flow.sigma()
            )));
        }
        let d = self.flow.dim();
        for m in &self.methods {
            if m.model.dim() != d {
                return Err(Error::Config(format!(
                    "method '{}' has dimension {}, flow has {d}",
                    m.name,
                    m.model.dim()
                )));
            }
            match &m.optimizer {
                OptimizerConfig::QuasiNewton(q) => q.validate()?,
                OptimizerConfig::Adaptive(a) => a.validate()?,
            }
        }
        let e = &self.evaluation;
        if e.times
            .iter()
            .any(|t| !(0.0..=self.flow.horizon).contains(t))
            || e.times.windows(2).any(|w| w[1] < w[0])
        {
            return Err(Error::Config(
                "evaluation times must be sorted within [0, T]".into(),
            ));
        }
        if e.particles > 0 && (e.steps == 0 || e.reference_particles == 0 || e.projections == 0) {
            return Err(Error::Config(
                "simulation needs steps, reference particles and projections".into(),
            ));
        }
        if !(e.mmd_bandwidth > 0.0) || e.mmd_max_points == 0 {
            return Err(Error::Config("invalid MMD settings".into()));
        }
        if let Some(fm) = &self.baselines.flow_matching {
            if fm.model.dim() != d || fm.samples == 0 {
                return Err(Error::Config(
                    "flow-matching model or sample count invalid".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Toml(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Applies a `dotted.key=value` override. Array elements are addressed
    /// by index (`methods.0.name`). Values are parsed as TOML and fall back
    /// to a bare string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{assignment}' is not KEY=VALUE")))?;
        let value = parse_value(raw.trim());
        let mut root = toml::Value::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let mut node = &mut root;
        let parts: Vec<&str> = key.trim().split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let last = i + 1 == parts.len();
            node = match node {
                toml::Value::Table(t) => {
                    if last {
                        t.insert(part.to_string(), value);
                        break;
                    }
                    t.entry(part.to_string())
                        .or_insert_with(|| toml::Value::Table(Default::default()))
                }
                toml::Value::Array(a) => {
                    let idx: usize = part.parse().map_err(|_| {
                        Error::Config(format!("'{part}' in '{key}' is not an array index"))
                    })?;
                    let slot = a.get_mut(idx).ok_or_else(|| {
                        Error::Config(format!("index {idx} out of range in '{key}'"))
                    })?;
                    if last {
                        *slot = value;
                        break;
                    }
                    slot
                }
                _ => return Err(Error::Config(format!("'{key}' does not name a section"))),
            };
        }
        let updated: Self = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("override '{key}': {e}")))?;
        // keys the schema ignores would vanish on the round trip
        let check = toml::Value::try_from(&updated).map_err(|e| Error::Config(e.to_string()))?;
        let landed = parts.iter().try_fold(&check, |v, part| match v {
            toml::Value::Table(t) => t.get(*part),
            toml::Value::Array(a) => part.parse::<usize>().ok().and_then(|i| a.get(i)),
            _ => None,
        });
        if landed.is_none() {
            return Err(Error::Config(format!(
                "override '{key}' does not name a config field"
            )));
        }
        updated.validate()?;
        *self = updated;
        Ok(())
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
