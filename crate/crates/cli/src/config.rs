//! JSON experiment configuration. Angles are in units of π throughout.

use std::path::{Path, PathBuf};

use sbvqe::essh::ModelSpec;
use sbvqe::noise::NoiseConfig;
use sbvqe::optimizer::OptimizerConfig;
use sbvqe::sideband::{template_with_options, CircuitTemplate, TemplateOptions};
use sbvqe::vqe::{VqeSettings, DEFAULT_LEAKAGE_THRESHOLD};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult, Context};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CircuitConfig {
    /// Must equal `model.n` when given.
    pub n_qubits: Option<usize>,
    pub order5: String,
    pub order2: String,
    pub prune_threshold: f64,
    pub fock_dim: Option<usize>,
    pub leakage_threshold: f64,
}

impl Default for CircuitConfig {
    fn default() -> Self {
        let t = TemplateOptions::default();
        Self {
            n_qubits: None,
            order5: t.order5,
            order2: t.order2,
            prune_threshold: t.prune_threshold,
            fock_dim: None,
            leakage_threshold: DEFAULT_LEAKAGE_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasurementConfig {
    /// Shots per collective basis for energy estimates; 0 = exact expectation.
    pub shots_per_basis: u64,
    /// Shots per tomography setting on the bulk; 0 skips tomography.
    pub tomography_shots: u64,
    /// Bootstrap resamples for MBTI error bars; 0 skips them.
    pub bootstrap: usize,
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        Self { shots_per_basis: 0, tomography_shots: 0, bootstrap: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Exact,
    CircuitSim,
    Tomography,
}

impl Source {
    pub fn label(self) -> &'static str {
        match self {
            Source::Exact => "exact",
            Source::CircuitSim => "circuit-sim",
            Source::Tomography => "tomography",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub t_minus: Vec<f64>,
    /// `None` keeps `model.delta`.
    pub delta: Option<f64>,
    pub sources: Vec<Source>,
    /// Reuse θ from the circuit rows of an earlier sweep CSV instead of optimising.
    pub theta_from: Option<PathBuf>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            t_minus: vec![-1.0, -0.667, -0.333, 0.0, 0.333, 0.667, 1.0],
            delta: None,
            sources: vec![Source::Exact, Source::CircuitSim],
            theta_from: None,
        }
    }
}

/// Inline angles or a `result.json` written by `vqe`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamSource {
    Inline(Vec<f64>),
    File(PathBuf),
}

impl ParamSource {
    pub fn load(&self, base: &Path) -> CliResult<Vec<f64>> {
        match self {
            ParamSource::Inline(v) => Ok(v.clone()),
            ParamSource::File(p) => {
                let path = base.join(p);
                let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
                let v: serde_json::Value = serde_json::from_str(&text)?;
                let theta = v.get("theta_opt").unwrap_or(&v);
                serde_json::from_value(theta.clone())
                    .map_err(|_| CliError::Config(format!("{}: no theta_opt array", path.display())))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpConfig {
    pub theta_a: Option<ParamSource>,
    pub theta_b: Option<ParamSource>,
    pub alphas: Vec<f64>,
    pub nbar: Vec<f64>,
}

impl Default for InterpConfig {
    fn default() -> Self {
        Self { theta_a: None, theta_b: None, alphas: (0..=10).map(|k| k as f64 / 10.0).collect(), nbar: vec![0.0, 0.05] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseStudyConfig {
    /// Sweep CSV with the data to explain.
    pub reference: Option<PathBuf>,
    /// Rows of the reference used as data.
    pub reference_source: Source,
    pub p_xy: Vec<f64>,
    pub p_z: Vec<f64>,
    /// Parametric resamples for the RSS error bar.
    pub resamples: usize,
}

impl Default for NoiseStudyConfig {
    fn default() -> Self {
        let grid = vec![0.0, 0.001, 0.005, 0.01, 0.02, 0.03, 0.04];
        Self { reference: None, reference_source: Source::Tomography, p_xy: grid.clone(), p_z: grid, resamples: 200 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureConfig {
    /// Measured circuit fidelity and pulse count used for the single-pulse estimate.
    pub circuit_fidelity: f64,
    pub pulses: u32,
    /// (t₋, δ) pairs scored for every ordering variant.
    pub candidates: Vec<(f64, f64)>,
    pub purity_target: f64,
    /// Variants listed in the report, best first.
    pub report_top: usize,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        let mut candidates = vec![];
        for delta in [0.0, 1.0, 4.0] {
            for k in 0..9 {
                candidates.push((-1.0 + 0.25 * k as f64, delta));
            }
        }
        Self { circuit_fidelity: 0.897, pulses: 14, candidates, purity_target: 0.99, report_top: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub out_dir: PathBuf,
    pub dump_circuit: bool,
    pub save_shots: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { out_dir: PathBuf::from("out"), dump_circuit: false, save_shots: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub circuit: CircuitConfig,
    pub noise: NoiseConfig,
    pub measurement: MeasurementConfig,
    pub optimizer: OptimizerConfig,
    /// Starting angles; zeros when absent.
    pub theta0: Option<Vec<f64>>,
    pub sweep: SweepConfig,
    pub interp: InterpConfig,
    pub noise_study: NoiseStudyConfig,
    pub fixture: FixtureConfig,
    pub seed: Option<u64>,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelSpec::new(8, 0.0, 0.0),
            circuit: CircuitConfig::default(),
            noise: NoiseConfig::default(),
            measurement: MeasurementConfig::default(),
            optimizer: OptimizerConfig::default(),
            theta0: None,
            sweep: SweepConfig::default(),
            interp: InterpConfig::default(),
            noise_study: NoiseStudyConfig::default(),
            fixture: FixtureConfig::default(),
            seed: None,
            output: OutputConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        // a manifest carries the full config of the run it describes
        let value = match value {
            serde_json::Value::Object(mut m) if m.contains_key("command") && m.contains_key("config") => {
                m.remove("config").expect("checked")
            }
            v => v,
        };
        serde_json::from_value(value).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Cross-section consistency. `stochastic` runs must carry a seed.
    pub fn validate(&self, stochastic: bool) -> CliResult<()> {
        self.model.validate().context("model")?;
        self.noise.validate().context("noise")?;
        if let Some(n) = self.circuit.n_qubits {
            if n != self.model.n {
                return Err(CliError::Config(format!("circuit.n_qubits = {n} but model.n = {}", self.model.n)));
            }
        }
        if !(self.circuit.leakage_threshold > 0.0) {
            return Err(CliError::Config("leakage_threshold must be positive".into()));
        }
        if let Some(t) = &self.theta0 {
            if t.len() != 14 {
                return Err(CliError::Config(format!("theta0 needs 14 angles, got {}", t.len())));
            }
        }
        if self.measurement.bootstrap > 0 && self.measurement.bootstrap < 100 {
            return Err(CliError::Config("bootstrap needs at least 100 resamples (or 0 to skip)".into()));
        }
        if stochastic && self.seed.is_none() {
            return Err(CliError::Config("this run is stochastic: a seed is required".into()));
        }
        Ok(())
    }

    /// Whether any random numbers are drawn by the pipeline.
    pub fn is_stochastic(&self) -> bool {
        let optimizer_random = self.optimizer.max_evaluations > 0 && self.optimizer.random_orientation;
        optimizer_random
            || self.measurement.shots_per_basis > 0
            || self.measurement.tomography_shots > 0
            || matches!(self.noise.mode, sbvqe::noise::NoiseMode::Trajectories { .. }) && !self.noise.is_noiseless()
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn template(&self) -> CliResult<CircuitTemplate> {
        let opts = TemplateOptions {
            order5: self.circuit.order5.clone(),
            order2: self.circuit.order2.clone(),
            prune_threshold: self.circuit.prune_threshold,
        };
        template_with_options(self.model.n, &opts).context("circuit template")
    }

    pub fn vqe_settings(&self) -> VqeSettings {
        VqeSettings { fock_dim: self.circuit.fock_dim, leakage_threshold: self.circuit.leakage_threshold }
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig { shots_per_eval: self.measurement.shots_per_basis, ..self.optimizer.clone() }
    }

    pub fn theta0(&self) -> Vec<f64> {
        self.theta0.clone().unwrap_or_else(|| vec![0.0; 14])
    }

    /// Canonical JSON used for hashing.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }
}
