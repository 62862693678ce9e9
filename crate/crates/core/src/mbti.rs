//! Partial-reflection and partial-time-reversal invariants of a bulk block
//! `I = I₁ ∪ I₂`, and residual-sum-of-squares model comparison.
//!
//! `Z_R = Tr[ρ_I R] / √p̄`, `Z_T = Tr[ρ_I u ρ_I^{T₁} u†] / p̄^{3/2}` with
//! `p̄ = (Tr ρ²_{I₁} + Tr ρ²_{I₂}) / 2`, `R` the site-order reversal and
//! `u = Π_{i∈I₁} σʸ_i`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::hilbert::{DensityOperator, Pauli};
use crate::linalg::{self, CMatrix, C64};
use crate::measurement::MeasurementRecord;
use crate::tomography::{self, mle_reconstruct_with, resample_records, MleOptions};

const IMAG_TOL: f64 = 1e-9;
const DENOM_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MBTIResult {
    pub z_r: f64,
    pub z_t: f64,
    pub purity_i1: f64,
    pub purity_i2: f64,
    pub n_sites: usize,
}

fn reverse_bits(j: usize, n: usize) -> usize {
    (0..n).fold(0, |acc, k| acc | ((j >> k & 1) << (n - 1 - k)))
}

fn real(z: C64, what: &str) -> Result<f64> {
    if z.im.abs() > IMAG_TOL {
        return Err(Error::Numerical(format!("{what} has imaginary part {:.2e}", z.im)));
    }
    Ok(z.re)
}

fn check_even(rho: &DensityOperator) -> Result<usize> {
    let n = rho.n_sites();
    if n % 2 != 0 {
        return Err(Error::Validation(format!("invariants need an even site count, got {n}")));
    }
    Ok(n)
}

/// `Tr[ρ R]` with `R` reversing the site order.
pub fn reflection_expectation(rho_i: &DensityOperator) -> Result<f64> {
    let n = check_even(rho_i)?;
    let m = rho_i.matrix();
    let z: C64 = (0..rho_i.dim()).map(|j| m[(j, reverse_bits(j, n))]).sum();
    real(z, "Tr[ρR]")
}

/// Transpose on the first `n/2` of `n` sites (the high bits of the index).
pub fn partial_transpose_first_half(m: &CMatrix, n: usize) -> Result<CMatrix> {
    if n % 2 != 0 || m.nrows() != 1 << n || m.ncols() != 1 << n {
        return Err(Error::Validation(format!("partial transpose needs an even site count matching the matrix, got {n}")));
    }
    let h = n / 2;
    let lo_mask = (1usize << h) - 1;
    let dim = m.nrows();
    Ok(CMatrix::from_fn(dim, dim, |r, c| {
        let (r1, r2) = (r >> h, r & lo_mask);
        let (c1, c2) = (c >> h, c & lo_mask);
        m[((c1 << h) | r2, (r1 << h) | c2)]
    }))
}

fn mean_purity(rho_i1: &DensityOperator, rho_i2: &DensityOperator) -> Result<f64> {
    let p = 0.5 * (rho_i1.purity() + rho_i2.purity());
    if p < DENOM_FLOOR {
        return Err(Error::Degenerate(format!("half-block purity {p:.2e} too small")));
    }
    Ok(p)
}

pub fn z_r(rho_i: &DensityOperator, rho_i1: &DensityOperator, rho_i2: &DensityOperator) -> Result<f64> {
    Ok(reflection_expectation(rho_i)? / mean_purity(rho_i1, rho_i2)?.sqrt())
}

pub fn z_t(rho_i: &DensityOperator, rho_i1: &DensityOperator, rho_i2: &DensityOperator) -> Result<f64> {
    let n = check_even(rho_i)?;
    let mut conj = partial_transpose_first_half(rho_i.matrix(), n)?;
    let y = Pauli::Y.matrix();
    for k in 0..n / 2 {
        let bit = n - 1 - k;
        linalg::apply_left_on_bit(&mut conj, bit, &y);
        linalg::apply_right_adjoint_on_bit(&mut conj, bit, &y);
    }
    let m = rho_i.matrix();
    let z: C64 = m.iter().zip(conj.transpose().iter()).map(|(a, b)| a * b).sum();
    Ok(real(z, "time-reversal overlap")? / mean_purity(rho_i1, rho_i2)?.powf(1.5))
}

/// Both invariants, with `I₁`/`I₂` the left/right halves of `rho_i`'s sites.
pub fn mbti(rho_i: &DensityOperator) -> Result<MBTIResult> {
    let n = check_even(rho_i)?;
    let sites = rho_i.sites();
    let i1 = rho_i.reduce(&sites[..n / 2])?;
    let i2 = rho_i.reduce(&sites[n / 2..])?;
    Ok(MBTIResult {
        z_r: z_r(rho_i, &i1, &i2)?,
        z_t: z_t(rho_i, &i1, &i2)?,
        purity_i1: i1.purity(),
        purity_i2: i2.purity(),
        n_sites: n,
    })
}

pub fn rss(data: &[f64], model: &[f64]) -> Result<f64> {
    if data.len() != model.len() {
        return Err(Error::Validation(format!("{} data points vs {} model points", data.len(), model.len())));
    }
    Ok(data.iter().zip(model).map(|(d, m)| (d - m).powi(2)).sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MbtiComponent {
    ZR,
    ZT,
    /// Z_R values followed by Z_T values.
    Both,
}

impl MbtiComponent {
    pub fn values(&self, results: &[MBTIResult]) -> Vec<f64> {
        match self {
            MbtiComponent::ZR => results.iter().map(|r| r.z_r).collect(),
            MbtiComponent::ZT => results.iter().map(|r| r.z_t).collect(),
            MbtiComponent::Both => results.iter().map(|r| r.z_r).chain(results.iter().map(|r| r.z_t)).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RssEstimate {
    pub rss: f64,
    pub sigma: f64,
    pub failures: usize,
}

/// Invariants of the MLE reconstruction of one sweep point's tomography data.
pub fn mbti_from_records(records: &[MeasurementRecord], initial: Option<DensityOperator>) -> Result<(MBTIResult, DensityOperator)> {
    let opts = MleOptions { initial, ..MleOptions::default() };
    let rho = match mle_reconstruct_with(records, &opts) {
        Ok(o) => o.rho,
        Err(Error::NotConverged { last, .. }) => *last,
        Err(e) => return Err(e),
    };
    Ok((mbti(&rho)?, rho))
}

/// RSS between tomography-derived invariants (one record set per sweep
/// point) and model values, with the bootstrap standard deviation over
/// multinomially resampled data. Resamples warm-start the likelihood
/// iteration from the point estimate.
pub fn rss_with_bootstrap_error(
    data: &[Vec<MeasurementRecord>],
    model: &[f64],
    component: MbtiComponent,
    resamples: usize,
    seed: u64,
) -> Result<RssEstimate> {
    let point: Vec<(MBTIResult, DensityOperator)> =
        data.iter().map(|recs| mbti_from_records(recs, None)).collect::<Result<_>>()?;
    let base: Vec<MBTIResult> = point.iter().map(|(m, _)| *m).collect();
    let value = rss(&component.values(&base), model)?;
    let mut samples = Vec::with_capacity(resamples);
    let mut failures = 0;
    for b in 0..resamples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b as u64);
        let attempt = data
            .iter()
            .zip(&point)
            .map(|(recs, (_, rho))| {
                let res = resample_records(recs, &mut rng)?;
                mbti_from_records(&res, Some(rho.clone())).map(|(m, _)| m)
            })
            .collect::<Result<Vec<_>>>()
            .and_then(|m| rss(&component.values(&m), model));
        match attempt {
            Ok(v) => samples.push(v),
            Err(_) => failures += 1,
        }
    }
    let sigma = if samples.is_empty() { f64::NAN } else { tomography::summarize(samples, failures)?.std };
    Ok(RssEstimate { rss: value, sigma, failures })
}

/// RSS with σ from a parametric bootstrap: each data value is redrawn from
/// a normal with its reported error.
pub fn rss_parametric(data: &[f64], errors: &[f64], model: &[f64], resamples: usize, seed: u64) -> Result<RssEstimate> {
    if errors.len() != data.len() {
        return Err(Error::Validation("error column length differs from data".into()));
    }
    let value = rss(data, model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
    let mut samples = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let drawn: Vec<f64> = data
            .iter()
            .zip(errors)
            .map(|(&d, &e)| {
                if e > 0.0 && e.is_finite() {
                    d + Normal::new(0.0, e).expect("positive sigma").sample(&mut rng)
                } else {
                    d
                }
            })
            .collect();
        samples.push(rss(&drawn, model)?);
    }
    let informative = errors.iter().any(|&e| e > 0.0 && e.is_finite());
    let sigma = if samples.len() > 1 && informative { tomography::summarize(samples, 0)?.std } else { 0.0 };
    Ok(RssEstimate { rss: value, sigma, failures: 0 })
}

/// Reference bulk states at the dimer points, on sites `sites` (length 4).
pub mod dimer {
    use super::*;

    fn singlet() -> [C64; 4] {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        [C64::new(0.0, 0.0), C64::new(h, 0.0), C64::new(-h, 0.0), C64::new(0.0, 0.0)]
    }

    fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
        a.kronecker(b)
    }

    fn pure(v: &[C64]) -> CMatrix {
        CMatrix::from_fn(v.len(), v.len(), |r, c| v[r] * v[c].conj())
    }

    /// Singlets on (0,1) and (2,3).
    pub fn trivial(sites: Vec<usize>) -> DensityOperator {
        let s = pure(&singlet());
        DensityOperator::new(sites, kron(&s, &s)).expect("valid state")
    }

    /// Free end spins around a central singlet: `(1/2) ⊗ singlet ⊗ (1/2)`.
    pub fn topological(sites: Vec<usize>) -> DensityOperator {
        let half = CMatrix::identity(2, 2) * C64::new(0.5, 0.0);
        let s = pure(&singlet());
        DensityOperator::new(sites, kron(&kron(&half, &s), &half)).expect("valid state")
    }
}
