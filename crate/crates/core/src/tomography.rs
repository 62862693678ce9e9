//! Full Pauli tomography: setting enumeration, iterative maximum-likelihood
//! reconstruction and a multinomial bootstrap.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::hilbert::{index_to_bits, DensityOperator, Pauli};
use crate::linalg::{self, CMatrix, C64};
use crate::measurement::{multinomial, readout_unitary, sample_measurements, MeasurementRecord};

/// All `3^n` per-site settings, site 0 varying slowest, `X < Y < Z`.
pub fn tomography_settings(n_sites: usize) -> Result<Vec<Vec<Pauli>>> {
    if n_sites == 0 {
        return Err(Error::Validation("tomography needs at least one site".into()));
    }
    let mut out = vec![Vec::new()];
    for _ in 0..n_sites {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<Pauli>| {
                Pauli::ALL.iter().map(move |&p| {
                    let mut v = prefix.clone();
                    v.push(p);
                    v
                })
            })
            .collect();
    }
    Ok(out)
}

/// Samples every tomography setting; setting `i` uses a seed derived from `(seed, i)`.
pub fn sample_tomography(rho: &DensityOperator, shots: u64, seed: u64) -> Result<Vec<MeasurementRecord>> {
    tomography_settings(rho.n_sites())?
        .iter()
        .enumerate()
        .map(|(i, s)| sample_measurements(rho, s, shots, derive_seed(seed, i as u64)))
        .collect()
}

#[derive(Clone, Debug)]
pub struct MleOptions {
    pub max_iterations: usize,
    /// Stop when the per-shot log-likelihood gain falls below this.
    pub tolerance: f64,
    /// Starting point; the maximally mixed state if `None`.
    pub initial: Option<DensityOperator>,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self { max_iterations: 5000, tolerance: 1e-10, initial: None }
    }
}

#[derive(Clone, Debug)]
pub struct MleOutcome {
    pub rho: DensityOperator,
    pub iterations: usize,
    /// Per-shot log-likelihood after each iteration (entry 0 is the start).
    pub log_likelihood: Vec<f64>,
}

pub fn mle_reconstruct(records: &[MeasurementRecord]) -> Result<DensityOperator> {
    mle_reconstruct_with(records, &MleOptions::default()).map(|o| o.rho)
}

struct Likelihood {
    /// Stacked measurement vectors: row `(s, b)` is `⟨e_b^s|`.
    w: CMatrix,
    /// Frequencies per row (counts / shots of that setting).
    freq: Vec<f64>,
    /// Counts per row divided by the total shot count.
    weight: Vec<f64>,
    n_settings: f64,
}

impl Likelihood {
    fn new(records: &[MeasurementRecord]) -> Result<Self> {
        let first = records.first().ok_or_else(|| Error::Validation("no tomography records".into()))?;
        let n = first.sites.len();
        let dim = 1usize << n;
        let total: u64 = records.iter().map(|r| r.shots).sum();
        let mut w = CMatrix::zeros(records.len() * dim, dim);
        let mut freq = Vec::with_capacity(records.len() * dim);
        let mut weight = Vec::with_capacity(records.len() * dim);
        for (s, rec) in records.iter().enumerate() {
            rec.validate()?;
            if rec.sites != first.sites {
                return Err(Error::Validation("tomography records cover different sites".into()));
            }
            if rec.shots == 0 {
                return Err(Error::Validation("setting with zero shots".into()));
            }
            let v = readout_unitary(&rec.setting);
            w.view_mut((s * dim, 0), (dim, dim)).copy_from(&v);
            for c in rec.count_vector()? {
                freq.push(c as f64 / rec.shots as f64);
                weight.push(c as f64 / total as f64);
            }
        }
        Ok(Self { w, freq, weight, n_settings: records.len() as f64 })
    }

    fn probabilities(&self, rho: &CMatrix) -> Vec<f64> {
        let wr = &self.w * rho;
        (0..self.w.nrows())
            .map(|r| {
                let mut acc = C64::new(0.0, 0.0);
                for c in 0..self.w.ncols() {
                    acc += wr[(r, c)] * self.w[(r, c)].conj();
                }
                acc.re.max(1e-300)
            })
            .collect()
    }

    fn log_likelihood(&self, probs: &[f64]) -> f64 {
        probs.iter().zip(&self.weight).filter(|(_, &w)| w > 0.0).map(|(p, w)| w * p.ln()).sum()
    }

    /// `R = (1/S) Σ (f/p) Π`, equal to the identity at the fixed point.
    fn r_operator(&self, probs: &[f64]) -> CMatrix {
        let mut scaled = self.w.clone();
        for (r, (p, f)) in probs.iter().zip(&self.freq).enumerate() {
            let k = C64::new(f / p / self.n_settings, 0.0);
            scaled.row_mut(r).iter_mut().for_each(|z| *z *= k);
        }
        self.w.adjoint() * scaled
    }
}

fn normalised_sandwich(a: &CMatrix, rho: &CMatrix) -> CMatrix {
    let m = a * rho * a.adjoint();
    let t = linalg::trace(&m).re;
    linalg::hermitize(&(m / C64::new(t, 0.0)))
}

/// Fixed-point `ρ → RρR / Tr` iteration. When a full step would lower the
/// likelihood, the step is diluted to `(1+εR)ρ(1+εR)` with halving `ε`, so the
/// recorded log-likelihood never decreases.
pub fn mle_reconstruct_with(records: &[MeasurementRecord], opts: &MleOptions) -> Result<MleOutcome> {
    let lik = Likelihood::new(records)?;
    let sites = records[0].sites.clone();
    let dim = 1usize << sites.len();
    let ident = CMatrix::identity(dim, dim);
    let mut rho = match &opts.initial {
        Some(r) if r.dim() == dim => r.matrix().clone(),
        Some(_) => return Err(Error::Dimension("initial state does not match records".into())),
        None => ident.clone() / C64::new(dim as f64, 0.0),
    };
    let mut probs = lik.probabilities(&rho);
    let mut ll = lik.log_likelihood(&probs);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let r = lik.r_operator(&probs);
        let mut candidate = normalised_sandwich(&r, &rho);
        let mut cand_probs = lik.probabilities(&candidate);
        let mut cand_ll = lik.log_likelihood(&cand_probs);
        let mut eps = 1.0;
        while cand_ll < ll && eps > 1e-9 {
            let step = &ident + &r * C64::new(eps, 0.0);
            candidate = normalised_sandwich(&step, &rho);
            cand_probs = lik.probabilities(&candidate);
            cand_ll = lik.log_likelihood(&cand_probs);
            eps *= 0.5;
        }
        if cand_ll < ll {
            // no ascent direction left at working precision
            trace.push(ll);
            converged = true;
            break;
        }
        let gain = cand_ll - ll;
        rho = candidate;
        probs = cand_probs;
        ll = cand_ll;
        trace.push(ll);
        if gain < opts.tolerance {
            converged = true;
            break;
        }
    }
    let rho = DensityOperator::project(sites, &rho)?;
    if !converged {
        return Err(Error::NotConverged { iterations, last: Box::new(rho) });
    }
    Ok(MleOutcome { rho, iterations, log_likelihood: trace })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BootstrapSummary {
    pub mean: f64,
    pub std: f64,
    /// 95 % percentile interval.
    pub ci_low: f64,
    pub ci_high: f64,
    pub resamples: usize,
    pub failures: usize,
}

/// Multinomial resample of every record at its own observed frequencies.
pub fn resample_records(records: &[MeasurementRecord], rng: &mut ChaCha8Rng) -> Result<Vec<MeasurementRecord>> {
    records
        .iter()
        .map(|rec| {
            let counts = rec.count_vector()?;
            let probs: Vec<f64> = counts.iter().map(|&c| c as f64 / rec.shots as f64).collect();
            let new = multinomial(&probs, rec.shots, rng)?;
            let n = rec.sites.len();
            Ok(MeasurementRecord {
                sites: rec.sites.clone(),
                setting: rec.setting.clone(),
                counts: new
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c > 0)
                    .map(|(i, &c)| (index_to_bits(i, n), c))
                    .collect(),
                shots: rec.shots,
            })
        })
        .collect()
}

/// Nonparametric bootstrap of `statistic`. Resample `b` draws from stream `b`
/// of `seed`; failing resamples are counted and skipped.
pub fn bootstrap_ci<F>(records: &[MeasurementRecord], statistic: F, resamples: usize, seed: u64) -> Result<BootstrapSummary>
where
    F: Fn(&[MeasurementRecord]) -> Result<f64>,
{
    if resamples < 100 {
        return Err(Error::Validation(format!("need at least 100 resamples, got {resamples}")));
    }
    let mut values = Vec::with_capacity(resamples);
    let mut failures = 0;
    for b in 0..resamples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b as u64);
        match resample_records(records, &mut rng).and_then(|r| statistic(&r)) {
            Ok(v) if v.is_finite() => values.push(v),
            _ => failures += 1,
        }
    }
    summarize(values, failures)
}

/// Mean, sample std and 95% percentile interval of bootstrap values.
pub fn summarize(mut values: Vec<f64>, failures: usize) -> Result<BootstrapSummary> {
    if values.is_empty() {
        return Err(Error::Numerical("every bootstrap resample failed".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    values.sort_by(f64::total_cmp);
    Ok(BootstrapSummary {
        mean,
        std: var.sqrt(),
        ci_low: percentile(&values, 0.025),
        ci_high: percentile(&values, 0.975),
        resamples: values.len(),
        failures,
    })
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}
