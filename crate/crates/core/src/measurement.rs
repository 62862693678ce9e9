//! Projective readout in rotated Pauli bases and shot-based energy estimation.

use std::collections::BTreeMap;

use rand::distributions::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Binomial;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::essh::{build_hamiltonian, ModelSpec};
use crate::hilbert::{index_to_bits, parse_bits, DensityOperator, HybridState, Pauli};
use crate::linalg::{self, CMatrix};

/// Outcome counts for one measurement setting. Bit `1` at position `k` means
/// eigenvalue `+1` of `setting[k]` on `sites[k]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub sites: Vec<usize>,
    pub setting: Vec<Pauli>,
    pub counts: BTreeMap<String, u64>,
    pub shots: u64,
}

impl MeasurementRecord {
    pub fn validate(&self) -> Result<()> {
        if self.setting.len() != self.sites.len() {
            return Err(Error::Validation("setting length differs from site count".into()));
        }
        let mut total = 0;
        for (bits, &c) in &self.counts {
            if bits.len() != self.sites.len() {
                return Err(Error::Validation(format!("outcome '{bits}' has wrong length")));
            }
            parse_bits(bits)?;
            total += c;
        }
        if total != self.shots {
            return Err(Error::Validation(format!("counts sum to {total}, shots = {}", self.shots)));
        }
        Ok(())
    }

    /// Collective basis if every site uses the same Pauli.
    pub fn collective(&self) -> Option<Pauli> {
        let first = *self.setting.first()?;
        self.setting.iter().all(|&p| p == first).then_some(first)
    }

    pub fn setting_label(&self) -> String {
        self.setting.iter().map(|p| p.label()).collect()
    }

    /// Counts as a dense vector indexed by outcome.
    pub fn count_vector(&self) -> Result<Vec<u64>> {
        let mut v = vec![0; 1 << self.sites.len()];
        for (bits, &c) in &self.counts {
            let idx = parse_bits(bits)?.iter().fold(0usize, |a, &b| a << 1 | b as usize);
            v[idx] += c;
        }
        Ok(v)
    }
}

/// Parses a basis label: a single letter (collective) or one letter per site.
pub fn parse_setting(label: &str, n_sites: usize) -> Result<Vec<Pauli>> {
    let paulis: Vec<Pauli> = label.chars().map(Pauli::from_label).collect::<Result<_>>()?;
    match paulis.len() {
        1 => Ok(vec![paulis[0]; n_sites]),
        l if l == n_sites => Ok(paulis),
        l => Err(Error::Validation(format!("setting '{label}' has {l} labels for {n_sites} sites"))),
    }
}

/// `⊗ₖ Vₖ` where `Vₖ` maps the eigenbasis of `setting[k]` to the computational basis.
pub fn readout_unitary(setting: &[Pauli]) -> CMatrix {
    let mut u = CMatrix::identity(1, 1);
    for p in setting {
        let r = p.readout_rotation();
        let m = CMatrix::from_fn(2, 2, |i, j| r[i][j]);
        u = u.kronecker(&m);
    }
    u
}

/// Born probabilities of every outcome of `setting`.
pub fn outcome_probabilities(rho: &DensityOperator, setting: &[Pauli]) -> Result<Vec<f64>> {
    if setting.len() != rho.n_sites() {
        return Err(Error::Validation(format!(
            "setting has {} labels for {} sites",
            setting.len(),
            rho.n_sites()
        )));
    }
    let mut rotated = rho.matrix().clone();
    let n = setting.len();
    for (k, p) in setting.iter().enumerate() {
        if *p == Pauli::Z {
            continue;
        }
        let r = p.readout_rotation();
        linalg::apply_left_on_bit(&mut rotated, n - 1 - k, &r);
        linalg::apply_right_adjoint_on_bit(&mut rotated, n - 1 - k, &r);
    }
    let mut probs: Vec<f64> = rotated.diagonal().iter().map(|z| z.re.max(0.0)).collect();
    let total: f64 = probs.iter().sum();
    if total <= 0.0 {
        return Err(Error::Numerical("outcome distribution has zero mass".into()));
    }
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(probs)
}

/// i.i.d. samples from the Born distribution; deterministic for a given seed.
pub fn sample_measurements(rho: &DensityOperator, setting: &[Pauli], shots: u64, seed: u64) -> Result<MeasurementRecord> {
    if shots == 0 {
        return Err(Error::Validation("shots must be ≥ 1".into()));
    }
    let probs = outcome_probabilities(rho, setting)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = multinomial(&probs, shots, &mut rng)?;
    let n = rho.n_sites();
    Ok(MeasurementRecord {
        sites: rho.sites().to_vec(),
        setting: setting.to_vec(),
        counts: counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (index_to_bits(i, n), c))
            .collect(),
        shots,
    })
}

pub fn sample_state(state: &HybridState, setting: &[Pauli], shots: u64, seed: u64) -> Result<MeasurementRecord> {
    sample_measurements(&state.partial_trace_boson(), setting, shots, seed)
}

/// Multinomial counts via sequential binomials.
pub(crate) fn multinomial(probs: &[f64], shots: u64, rng: &mut ChaCha8Rng) -> Result<Vec<u64>> {
    let mut counts = vec![0; probs.len()];
    let mut remaining = shots;
    let mut mass = 1.0f64;
    for (i, &p) in probs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if i == probs.len() - 1 || mass <= p {
            counts[i] = remaining;
            break;
        }
        let q = (p / mass).clamp(0.0, 1.0);
        let k = Binomial::new(remaining, q).map_err(|e| Error::Numerical(e.to_string()))?.sample(rng);
        counts[i] = k;
        remaining -= k;
        mass -= p;
    }
    Ok(counts)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyEstimate {
    pub value: f64,
    pub std_error: f64,
    pub shots_per_basis: u64,
}

/// Collective bases needed to measure every term of the model Hamiltonian.
pub fn energy_bases(spec: &ModelSpec) -> Result<Vec<Pauli>> {
    let h = build_hamiltonian(spec)?;
    let mut bases = Vec::new();
    for t in &h.terms {
        let b = t
            .collective_basis()
            .ok_or_else(|| Error::Validation("term not measurable in a collective basis".into()))?;
        if !bases.contains(&b) {
            bases.push(b);
        }
    }
    bases.sort();
    Ok(bases)
}

/// Per-shot estimator: each shot of basis `u` contributes `Σ c·Π(±1)` over the
/// terms measured in `u`; the variance of the mean is the empirical per-shot
/// variance over the shot count, summed over independent bases.
pub fn estimate_energy(records: &[MeasurementRecord], spec: &ModelSpec) -> Result<EnergyEstimate> {
    let h = build_hamiltonian(spec)?;
    let n = spec.n;
    let full: Vec<usize> = (0..n).collect();
    let mut by_basis: BTreeMap<Pauli, Vec<(f64, Vec<usize>)>> = BTreeMap::new();
    for t in &h.terms {
        let b = t
            .collective_basis()
            .ok_or_else(|| Error::Validation("term not measurable in a collective basis".into()))?;
        by_basis.entry(b).or_default().push((t.coeff, t.ops.iter().map(|&(s, _)| s).collect()));
    }
    let mut value = 0.0;
    let mut var = 0.0;
    let mut shots_per_basis = u64::MAX;
    for (basis, terms) in by_basis {
        let rec = records
            .iter()
            .find(|r| r.sites == full && r.collective() == Some(basis))
            .ok_or_else(|| Error::Validation(format!("no collective {basis} record over all {n} sites")))?;
        rec.validate()?;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for (bits, &c) in &rec.counts {
            let b = parse_bits(bits)?;
            let f: f64 = terms
                .iter()
                .map(|(coeff, sites)| coeff * sites.iter().map(|&s| if b[s] { 1.0 } else { -1.0 }).product::<f64>())
                .sum();
            sum += f * c as f64;
            sum_sq += f * f * c as f64;
        }
        let shots = rec.shots as f64;
        let mean = sum / shots;
        let sample_var = if rec.shots > 1 { ((sum_sq - shots * mean * mean) / (shots - 1.0)).max(0.0) } else { 0.0 };
        value += mean;
        var += sample_var / shots;
        shots_per_basis = shots_per_basis.min(rec.shots);
    }
    Ok(EnergyEstimate { value, std_error: var.sqrt(), shots_per_basis })
}

/// Samples every needed collective basis and estimates the energy. Basis `i`
/// uses a seed derived from `(seed, i)`.
pub fn measure_energy(rho: &DensityOperator, spec: &ModelSpec, shots: u64, seed: u64) -> Result<(EnergyEstimate, Vec<MeasurementRecord>)> {
    let mut records = Vec::new();
    for (i, b) in energy_bases(spec)?.into_iter().enumerate() {
        let setting = vec![b; rho.n_sites()];
        records.push(sample_measurements(rho, &setting, shots, crate::derive_seed(seed, i as u64))?);
    }
    Ok((estimate_energy(&records, spec)?, records))
}

/// Infinite-shot limit: the exact expectation with zero error bar.
pub fn exact_energy(rho: &DensityOperator, spec: &ModelSpec) -> Result<EnergyEstimate> {
    Ok(EnergyEstimate { value: crate::essh::energy_of(rho, spec)?, std_error: 0.0, shots_per_basis: 0 })
}
