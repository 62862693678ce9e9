//! Variational loop: circuit parameters → (noisy) state → energy estimate,
//! minimised by [`pattern_search`].

use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::essh::{build_hamiltonian, energy_of, ModelSpec};
use crate::hilbert::{neel_bits, DensityOperator, HybridState};
use crate::measurement::measure_energy;
use crate::noise::{run_noisy, NoiseConfig, NoisyState};
use crate::optimizer::{pattern_search, CostSample, OptimizerConfig, OptimizerTrace};
use crate::sideband::{run_circuit, transpile, CircuitTemplate, TranspiledCircuit};

pub const DEFAULT_LEAKAGE_THRESHOLD: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VqeSettings {
    /// Boson truncation; `None` picks [`default_fock_dim`].
    pub fock_dim: Option<usize>,
    pub leakage_threshold: f64,
}

impl Default for VqeSettings {
    fn default() -> Self {
        Self { fock_dim: None, leakage_threshold: DEFAULT_LEAKAGE_THRESHOLD }
    }
}

/// `N/2 + 2` levels; four more when the boson starts thermal or heats, or
/// when spin flips break the charge bound on the phonon number.
pub fn default_fock_dim(n_qubits: usize, noise: &NoiseConfig) -> usize {
    let extra = if noise.nbar > 0.0 || noise.heating_rate > 0.0 || noise.pauli_pxy > 0.0 { 4 } else { 0 };
    n_qubits / 2 + 2 + extra
}

/// Néel qubits with the boson in its ground state.
pub fn initial_state(n_qubits: usize, fock_dim: usize, leakage_threshold: f64) -> Result<HybridState> {
    Ok(HybridState::basis(n_qubits, fock_dim, &neel_bits(n_qubits), 0)?.with_leakage_threshold(leakage_threshold))
}

/// Prepares the circuit state for `theta_pi` (angles in units of π).
pub fn prepare(
    template: &CircuitTemplate,
    noise: &NoiseConfig,
    theta_pi: &[f64],
    settings: &VqeSettings,
    seed: u64,
) -> Result<(TranspiledCircuit, NoisyState)> {
    let d = settings.fock_dim.unwrap_or_else(|| default_fock_dim(template.n_qubits, noise));
    let init = initial_state(template.n_qubits, d, settings.leakage_threshold)?;
    let circuit = transpile(template, theta_pi)?;
    let state = run_noisy(&init, &circuit, noise, seed)?;
    Ok((circuit, state))
}

#[derive(Clone, Debug)]
pub struct VqeResult {
    pub theta_opt: Vec<f64>,
    pub circuit: TranspiledCircuit,
    pub trace: OptimizerTrace,
    /// Reduced qubit state at `theta_opt`.
    pub final_state: DensityOperator,
    /// Exact energy of `final_state`.
    pub final_energy: f64,
}

/// Minimises the energy of `model` over the template parameters.
///
/// `opt.shots_per_eval == 0` uses exact expectation values; otherwise each cost
/// call samples the needed collective bases with the requested shot count.
pub fn vqe_run(
    model: &ModelSpec,
    template: &CircuitTemplate,
    noise: &NoiseConfig,
    opt: &OptimizerConfig,
    theta0_pi: &[f64],
    settings: &VqeSettings,
    seed: u64,
) -> Result<VqeResult> {
    model.validate()?;
    noise.validate()?;
    if model.n != template.n_qubits {
        return Err(Error::Dimension(format!("model has {} sites, template {}", model.n, template.n_qubits)));
    }
    if theta0_pi.len() != template.n_parameters {
        return Err(Error::Dimension(format!("expected {} parameters", template.n_parameters)));
    }
    let h = build_hamiltonian(model)?;
    let d = settings.fock_dim.unwrap_or_else(|| default_fock_dim(model.n, noise));
    let init = initial_state(model.n, d, settings.leakage_threshold)?;
    let noiseless = noise.is_noiseless();

    let cost = |theta: &[f64], shots: u64, call_seed: u64| -> Result<CostSample> {
        let circuit = transpile(template, theta)?;
        if noiseless && shots == 0 {
            let psi = run_circuit(&init, &circuit)?;
            return Ok(CostSample::exact(psi.expectation(&h)?));
        }
        let rho = run_noisy(&init, &circuit, noise, derive_seed(call_seed, 0))?.qubit_density();
        if shots == 0 {
            return Ok(CostSample::exact(energy_of(&rho, model)?));
        }
        let (est, _) = measure_energy(&rho, model, shots, derive_seed(call_seed, 1))?;
        Ok(CostSample { value: est.value, sigma: est.std_error, shots: est.shots_per_basis * est_bases(model) })
    };
    let trace = pattern_search(cost, theta0_pi, opt, seed)?;
    let theta_opt = trace.best.theta.clone();
    let circuit = transpile(template, &theta_opt)?;
    let final_state = run_noisy(&init, &circuit, noise, derive_seed(seed, u64::MAX))?.qubit_density();
    let final_energy = energy_of(&final_state, model)?;
    Ok(VqeResult { theta_opt, circuit, trace, final_state, final_energy })
}

fn est_bases(model: &ModelSpec) -> u64 {
    crate::measurement::energy_bases(model).map_or(1, |b| b.len() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::essh::{exact_ground_state, relative_energy_error};
    use crate::optimizer::GpConfig;
    use crate::sideband::default_template;

    #[test]
    fn zero_angles_give_neel_energy() {
        let model = ModelSpec::new(4, 0.0, 0.0);
        let t = default_template(4).unwrap();
        let (c, s) = prepare(&t, &NoiseConfig::noiseless(), &[0.0; 14], &VqeSettings::default(), 0).unwrap();
        assert!(c.pulses.is_empty());
        assert!(energy_of(&s.qubit_density(), &model).unwrap().abs() < 1e-12);
    }

    #[test]
    fn small_chain_converges() {
        let model = ModelSpec::new(4, 0.0, 0.0);
        let t = default_template(4).unwrap();
        let opt = OptimizerConfig { max_evaluations: 1500, ..Default::default() };
        let r = vqe_run(&model, &t, &NoiseConfig::noiseless(), &opt, &[0.0; 14], &VqeSettings::default(), 0).unwrap();
        let e0 = exact_ground_state(&model).unwrap().ground_energy();
        let err = relative_energy_error(r.final_energy, e0).unwrap();
        assert!(err < 0.03, "relative error {err}");
        assert!((r.final_energy - r.trace.best.value).abs() < 1e-9);
    }

    #[test]
    fn shot_mode_reports_error_bars() {
        let model = ModelSpec::new(4, 0.0, 0.0);
        let t = default_template(4).unwrap();
        let opt = OptimizerConfig {
            max_evaluations: 40,
            shots_per_eval: 200,
            ocba_batch: 200,
            gp: GpConfig { enabled: false, ..Default::default() },
            ..Default::default()
        };
        let r = vqe_run(&model, &t, &NoiseConfig::noiseless(), &opt, &[0.0; 14], &VqeSettings::default(), 5).unwrap();
        assert!(r.trace.shots > 0);
        assert!(r.trace.evaluations <= 40);
        let again = vqe_run(&model, &t, &NoiseConfig::noiseless(), &opt, &[0.0; 14], &VqeSettings::default(), 5).unwrap();
        assert_eq!(r.trace, again.trace);
    }
}
