//! States on the hybrid space `boson(d_max) ⊗ (C²)^⊗N`.
//!
//! Conventions shared by every module:
//!
//! * Joint amplitudes are stored Fock-major: index `n * 2^N + j`, where `n` is
//!   the phonon number and `j` the qubit bitstring read with qubit 0 as the
//!   most significant bit (`"0101"` is `j = 0b0101`).
//! * `|1⟩` is the excited level, which is "spin up": `Z|1⟩ = +|1⟩`,
//!   `Z|0⟩ = -|0⟩`, `σ⁺ = |1⟩⟨0|`. With `X = σ⁺ + σ⁻` and `Y = -iσ⁺ + iσ⁻`
//!   the Paulis obey `XY = iZ`.
//! * A measured bit `1` means eigenvalue `+1` of the measured Pauli.
//!
//! Sites are 0-based qubit indices.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, C64, I, ONE, ZERO};

pub const DEFAULT_LEAKAGE_THRESHOLD: f64 = 1e-6;
const NORM_TOL: f64 = 1e-10;
const HERMITIAN_TOL: f64 = 1e-10;
const TRACE_TOL: f64 = 1e-9;
const PSD_TOL: f64 = 1e-9;
const IMAG_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pauli {
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 3] = [Pauli::X, Pauli::Y, Pauli::Z];

    /// `P|b⟩ = phase |b'⟩`.
    #[inline]
    pub fn act(self, bit: bool) -> (bool, C64) {
        match self {
            Pauli::X => (!bit, ONE),
            Pauli::Y => {
                if bit {
                    (false, I)
                } else {
                    (true, -I)
                }
            }
            Pauli::Z => (bit, if bit { ONE } else { -ONE }),
        }
    }

    /// Matrix elements `m[r][c] = ⟨r|P|c⟩`.
    pub fn matrix(self) -> [[C64; 2]; 2] {
        match self {
            Pauli::X => [[ZERO, ONE], [ONE, ZERO]],
            Pauli::Y => [[ZERO, I], [-I, ZERO]],
            Pauli::Z => [[-ONE, ZERO], [ZERO, ONE]],
        }
    }

    /// Unitary mapping the `+1` eigenvector to `|1⟩` and the `-1` eigenvector to `|0⟩`.
    pub fn readout_rotation(self) -> [[C64; 2]; 2] {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        match self {
            // rows are ⟨e₋| and ⟨e₊|
            Pauli::X => [[C64::new(h, 0.0), C64::new(-h, 0.0)], [C64::new(h, 0.0), C64::new(h, 0.0)]],
            // e₊ = (i, 1)/√2, e₋ = (-i, 1)/√2
            Pauli::Y => [[C64::new(0.0, h), C64::new(h, 0.0)], [C64::new(0.0, -h), C64::new(h, 0.0)]],
            Pauli::Z => [[ONE, ZERO], [ZERO, ONE]],
        }
    }

    pub fn label(self) -> char {
        match self {
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }

    pub fn from_label(c: char) -> Result<Self> {
        match c.to_ascii_uppercase() {
            'X' => Ok(Pauli::X),
            'Y' => Ok(Pauli::Y),
            'Z' => Ok(Pauli::Z),
            other => Err(Error::Validation(format!("unknown Pauli label '{other}'"))),
        }
    }
}

impl fmt::Display for Pauli {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// `coeff * ⊗_{(site, P) in ops} P`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PauliTerm {
    pub coeff: f64,
    pub ops: Vec<(usize, Pauli)>,
}

impl PauliTerm {
    pub fn new(coeff: f64, mut ops: Vec<(usize, Pauli)>) -> Result<Self> {
        ops.sort_by_key(|&(s, _)| s);
        if ops.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Validation("Pauli term repeats a site".into()));
        }
        Ok(Self { coeff, ops })
    }

    pub fn two_site(coeff: f64, a: usize, b: usize, p: Pauli) -> Self {
        Self::new(coeff, vec![(a, p), (b, p)]).expect("distinct sites")
    }

    pub fn single(coeff: f64, site: usize, p: Pauli) -> Self {
        Self { coeff, ops: vec![(site, p)] }
    }

    /// If every factor is the same Pauli, return it (terms measurable in one collective basis).
    pub fn collective_basis(&self) -> Option<Pauli> {
        let first = self.ops.first()?.1;
        self.ops.iter().all(|&(_, p)| p == first).then_some(first)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservableSpec {
    pub terms: Vec<PauliTerm>,
}

impl ObservableSpec {
    pub fn new(terms: Vec<PauliTerm>) -> Self {
        Self { terms }
    }

    pub fn validate(&self, n_sites: usize) -> Result<()> {
        for t in &self.terms {
            if !t.coeff.is_finite() {
                return Err(Error::Validation("non-finite observable coefficient".into()));
            }
            if let Some(&(s, _)) = t.ops.iter().find(|&&(s, _)| s >= n_sites) {
                return Err(Error::Validation(format!("observable site {s} outside register of {n_sites}")));
            }
        }
        Ok(())
    }

    /// Dense matrix on the register `sites` (same bit layout as [`DensityOperator`]).
    pub fn to_dense(&self, sites: &[usize]) -> Result<CMatrix> {
        let dim = 1usize << sites.len();
        let mut m = CMatrix::zeros(dim, dim);
        for term in &self.terms {
            let ops = register_ops(&term.ops, sites)?;
            for j in 0..dim {
                let (i, phase) = apply_ops(&ops, j);
                m[(i, j)] += phase * term.coeff;
            }
        }
        Ok(m)
    }
}

/// Converts (site, Pauli) pairs to (bit position, Pauli) pairs for a register.
pub(crate) fn register_ops(ops: &[(usize, Pauli)], sites: &[usize]) -> Result<Vec<(usize, Pauli)>> {
    let n = sites.len();
    ops.iter()
        .map(|&(s, p)| {
            sites
                .iter()
                .position(|&x| x == s)
                .map(|pos| (n - 1 - pos, p))
                .ok_or_else(|| Error::Dimension(format!("site {s} not in register {sites:?}")))
        })
        .collect()
}

#[inline]
pub(crate) fn apply_ops(ops: &[(usize, Pauli)], j: usize) -> (usize, C64) {
    let mut idx = j;
    let mut phase = ONE;
    for &(bit, p) in ops {
        let b = idx >> bit & 1 == 1;
        let (nb, ph) = p.act(b);
        phase *= ph;
        if nb != b {
            idx ^= 1 << bit;
        }
    }
    (idx, phase)
}

pub(crate) fn parse_bits(bits: &str) -> Result<Vec<bool>> {
    bits.chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(Error::Validation(format!("bad bit character '{other}'"))),
        })
        .collect()
}

pub(crate) fn bits_to_index(bits: &[bool]) -> usize {
    bits.iter().fold(0, |acc, &b| acc << 1 | b as usize)
}

pub fn index_to_bits(j: usize, n: usize) -> String {
    (0..n).map(|p| if j >> (n - 1 - p) & 1 == 1 { '1' } else { '0' }).collect()
}

/// Néel pattern `0101…` of length `n`.
pub fn neel_bits(n: usize) -> String {
    (0..n).map(|k| if k % 2 == 0 { '0' } else { '1' }).collect()
}

/// Pure state of N qubits and one truncated bosonic mode.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridState {
    n_qubits: usize,
    fock_dim: usize,
    amps: Vec<C64>,
    leakage_threshold: f64,
}

impl HybridState {
    pub fn new(n_qubits: usize, fock_dim: usize, amps: Vec<C64>) -> Result<Self> {
        check_register(n_qubits, fock_dim)?;
        if amps.len() != fock_dim << n_qubits {
            return Err(Error::Dimension(format!(
                "expected {} amplitudes, got {}",
                fock_dim << n_qubits,
                amps.len()
            )));
        }
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::Validation(format!("state norm² {norm} is not 1")));
        }
        let s = Self { n_qubits, fock_dim, amps, leakage_threshold: DEFAULT_LEAKAGE_THRESHOLD };
        s.check_leakage()?;
        Ok(s)
    }

    /// `|bits⟩ ⊗ |fock_n⟩`.
    pub fn basis(n_qubits: usize, fock_dim: usize, bits: &str, fock_n: usize) -> Result<Self> {
        check_register(n_qubits, fock_dim)?;
        let b = parse_bits(bits)?;
        if b.len() != n_qubits {
            return Err(Error::Dimension(format!("{} bits given for {} qubits", b.len(), n_qubits)));
        }
        if fock_n >= fock_dim {
            return Err(Error::Truncation(format!("Fock level {fock_n} not below d_max = {fock_dim}")));
        }
        let mut amps = vec![ZERO; fock_dim << n_qubits];
        amps[(fock_n << n_qubits) + bits_to_index(&b)] = ONE;
        Ok(Self { n_qubits, fock_dim, amps, leakage_threshold: DEFAULT_LEAKAGE_THRESHOLD })
    }

    pub fn with_leakage_threshold(mut self, threshold: f64) -> Self {
        self.leakage_threshold = threshold;
        self
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn fock_dim(&self) -> usize {
        self.fock_dim
    }

    pub fn qubit_dim(&self) -> usize {
        1 << self.n_qubits
    }

    pub fn leakage_threshold(&self) -> f64 {
        self.leakage_threshold
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub(crate) fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amps
    }

    pub fn index(&self, fock_n: usize, qubits: usize) -> usize {
        (fock_n << self.n_qubits) + qubits
    }

    pub fn amplitude(&self, fock_n: usize, bits: &str) -> Result<C64> {
        let b = parse_bits(bits)?;
        if b.len() != self.n_qubits || fock_n >= self.fock_dim {
            return Err(Error::Dimension("amplitude index out of range".into()));
        }
        Ok(self.amps[self.index(fock_n, bits_to_index(&b))])
    }

    pub fn fock_block(&self, n: usize) -> &[C64] {
        let q = self.qubit_dim();
        &self.amps[n * q..(n + 1) * q]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn fock_populations(&self) -> Vec<f64> {
        (0..self.fock_dim).map(|n| self.fock_block(n).iter().map(|a| a.norm_sqr()).sum()).collect()
    }

    pub fn top_level_population(&self) -> f64 {
        self.fock_block(self.fock_dim - 1).iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn check_leakage(&self) -> Result<()> {
        if self.fock_dim < 2 {
            return Ok(());
        }
        let top = self.top_level_population();
        if top > self.leakage_threshold {
            return Err(Error::Truncation(format!(
                "population {top:.3e} in top Fock level {} exceeds {:.1e}",
                self.fock_dim - 1,
                self.leakage_threshold
            )));
        }
        Ok(())
    }

    /// Largest |Im| over all amplitudes.
    pub fn max_imaginary(&self) -> f64 {
        self.amps.iter().map(|a| a.im.abs()).fold(0.0, f64::max)
    }

    pub fn partial_trace_boson(&self) -> DensityOperator {
        let q = self.qubit_dim();
        let mut m = CMatrix::zeros(q, q);
        for n in 0..self.fock_dim {
            let block = self.fock_block(n);
            for c in 0..q {
                let bc = block[c].conj();
                if bc == ZERO {
                    continue;
                }
                for r in 0..q {
                    m[(r, c)] += block[r] * bc;
                }
            }
        }
        DensityOperator::from_trusted((0..self.n_qubits).collect(), m)
    }

    /// `⟨ψ|O ⊗ 1_boson|ψ⟩`.
    pub fn expectation(&self, obs: &ObservableSpec) -> Result<f64> {
        obs.validate(self.n_qubits)?;
        let sites: Vec<usize> = (0..self.n_qubits).collect();
        let q = self.qubit_dim();
        let mut total = ZERO;
        for term in &obs.terms {
            let ops = register_ops(&term.ops, &sites)?;
            let mut acc = ZERO;
            for n in 0..self.fock_dim {
                let block = self.fock_block(n);
                for (j, &a) in block.iter().enumerate().take(q) {
                    if a == ZERO {
                        continue;
                    }
                    let (i, phase) = apply_ops(&ops, j);
                    acc += block[i].conj() * phase * a;
                }
            }
            total += acc * term.coeff;
        }
        real_part(total)
    }
}

fn check_register(n_qubits: usize, fock_dim: usize) -> Result<()> {
    if n_qubits == 0 || fock_dim == 0 {
        return Err(Error::Dimension("need at least one qubit and one Fock level".into()));
    }
    if n_qubits > 20 {
        return Err(Error::Capability(format!("{n_qubits} qubits exceed the dense simulator")));
    }
    Ok(())
}

fn real_part(z: C64) -> Result<f64> {
    if z.im.abs() > IMAG_TOL {
        return Err(Error::Numerical(format!("expectation has imaginary part {:.3e}", z.im)));
    }
    Ok(z.re)
}

/// `|bits⟩ ⊗ |fock_n⟩` on `n_qubits` qubits and `fock_dim` boson levels.
pub fn basis_state(n_qubits: usize, fock_dim: usize, bits: &str, fock_n: usize) -> Result<HybridState> {
    HybridState::basis(n_qubits, fock_dim, bits, fock_n)
}

pub fn partial_trace_boson(state: &HybridState) -> DensityOperator {
    state.partial_trace_boson()
}

/// Density matrix on an ordered list of qubit sites.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityOperator {
    sites: Vec<usize>,
    matrix: CMatrix,
}

impl DensityOperator {
    /// Validates Hermiticity, unit trace and positivity. Eigenvalues in
    /// `[-1e-9, 0)` are clipped to zero and the result renormalised.
    pub fn new(sites: Vec<usize>, matrix: CMatrix) -> Result<Self> {
        check_sites(&sites, &matrix)?;
        let herm = linalg::hermiticity_defect(&matrix);
        if herm > HERMITIAN_TOL {
            return Err(Error::Domain(format!("matrix not Hermitian (defect {herm:.2e})")));
        }
        let tr = linalg::trace(&matrix);
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::Domain(format!("trace {tr} is not 1")));
        }
        let matrix = linalg::hermitize(&matrix);
        let (values, vectors) = linalg::hermitian_eigen(&matrix);
        if values[0] < -PSD_TOL {
            return Err(Error::Domain(format!("negative eigenvalue {:.3e}", values[0])));
        }
        let matrix = if values[0] < 0.0 {
            let clipped = linalg::spectral_map(&values, &vectors, |x| x.max(0.0));
            let t = linalg::trace(&clipped).re;
            clipped / C64::new(t, 0.0)
        } else {
            matrix
        };
        Ok(Self { sites, matrix })
    }

    /// Projects an arbitrary Hermitian-ish matrix onto the closest density operator
    /// in spectral sense: hermitize, clip negative eigenvalues, renormalise.
    pub fn project(sites: Vec<usize>, matrix: &CMatrix) -> Result<Self> {
        check_sites(&sites, matrix)?;
        let (values, vectors) = linalg::hermitian_eigen(&linalg::hermitize(matrix));
        let clipped = linalg::spectral_map(&values, &vectors, |x| x.max(0.0));
        let t = linalg::trace(&clipped).re;
        if t <= 0.0 {
            return Err(Error::Degenerate("matrix has no positive spectrum".into()));
        }
        Ok(Self { sites, matrix: linalg::hermitize(&(clipped / C64::new(t, 0.0))) })
    }

    /// Used for matrices produced by exact physical maps; only symmetrised.
    pub(crate) fn from_trusted(sites: Vec<usize>, matrix: CMatrix) -> Self {
        debug_assert_eq!(matrix.nrows(), 1 << sites.len());
        Self { sites, matrix: linalg::hermitize(&matrix) }
    }

    pub fn from_pure(sites: Vec<usize>, amps: &[C64]) -> Result<Self> {
        let dim = 1usize << sites.len();
        if amps.len() != dim {
            return Err(Error::Dimension(format!("{} amplitudes for {} sites", amps.len(), sites.len())));
        }
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::Validation(format!("state norm² {norm} is not 1")));
        }
        let m = CMatrix::from_fn(dim, dim, |r, c| amps[r] * amps[c].conj());
        check_sites(&sites, &m)?;
        Ok(Self { sites, matrix: m })
    }

    pub fn maximally_mixed(sites: Vec<usize>) -> Self {
        let dim = 1usize << sites.len();
        Self { sites, matrix: CMatrix::identity(dim, dim) / C64::new(dim as f64, 0.0) }
    }

    pub fn sites(&self) -> &[usize] {
        &self.sites
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        linalg::hermitian_eigenvalues(&self.matrix)
    }

    /// Same matrix relabelled onto different sites.
    pub fn relabel(&self, sites: Vec<usize>) -> Result<Self> {
        check_sites(&sites, &self.matrix)?;
        Ok(Self { sites, matrix: self.matrix.clone() })
    }

    pub fn reduce(&self, keep: &[usize]) -> Result<Self> {
        reduce_qubits(self, keep)
    }

    pub fn expectation(&self, obs: &ObservableSpec) -> Result<f64> {
        let mut total = ZERO;
        for term in &obs.terms {
            if !term.coeff.is_finite() {
                return Err(Error::Validation("non-finite observable coefficient".into()));
            }
            let ops = register_ops(&term.ops, &self.sites)?;
            let mut acc = ZERO;
            for j in 0..self.dim() {
                let (i, phase) = apply_ops(&ops, j);
                acc += self.matrix[(j, i)] * phase;
            }
            total += acc * term.coeff;
        }
        real_part(total)
    }

    /// `Tr ρ²`.
    pub fn purity(&self) -> f64 {
        self.matrix.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Uhlmann fidelity `(Tr √(√ρ σ √ρ))²`; reduces to `Tr ρσ` when either state is pure.
    pub fn fidelity(&self, other: &Self) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::Dimension("fidelity between different dimensions".into()));
        }
        let overlap = || -> f64 {
            self.matrix.iter().zip(other.matrix.iter()).map(|(a, b)| (a.conj() * b).re).sum()
        };
        if self.purity() > 1.0 - 1e-10 || other.purity() > 1.0 - 1e-10 {
            return Ok(overlap().clamp(0.0, 1.0));
        }
        let sq = linalg::psd_sqrt(&self.matrix);
        let inner = &sq * &other.matrix * &sq;
        let values = linalg::hermitian_eigenvalues(&linalg::hermitize(&inner));
        if values[0] < -PSD_TOL {
            return Err(Error::Domain(format!("fidelity argument not PSD ({:.2e})", values[0])));
        }
        let root: f64 = values.iter().map(|x| x.max(0.0).sqrt()).sum();
        Ok((root * root).clamp(0.0, 1.0))
    }

    /// `½ ‖ρ − σ‖₁`.
    pub fn trace_distance(&self, other: &Self) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::Dimension("trace distance between different dimensions".into()));
        }
        let diff = &self.matrix - &other.matrix;
        Ok(0.5 * linalg::hermitian_eigenvalues(&linalg::hermitize(&diff)).iter().map(|x| x.abs()).sum::<f64>())
    }
}

fn check_sites(sites: &[usize], matrix: &CMatrix) -> Result<()> {
    if sites.is_empty() {
        return Err(Error::Dimension("density operator needs at least one site".into()));
    }
    let unique: BTreeSet<_> = sites.iter().collect();
    if unique.len() != sites.len() {
        return Err(Error::Validation("duplicate site in density operator".into()));
    }
    let dim = 1usize << sites.len();
    if matrix.nrows() != dim || matrix.ncols() != dim {
        return Err(Error::Dimension(format!(
            "{}x{} matrix for {} sites",
            matrix.nrows(),
            matrix.ncols(),
            sites.len()
        )));
    }
    Ok(())
}

/// Partial trace onto `keep`; the result's sites follow the order of `keep`.
pub fn reduce_qubits(rho: &DensityOperator, keep: &[usize]) -> Result<DensityOperator> {
    if keep.is_empty() {
        return Err(Error::Dimension("cannot reduce to an empty site list".into()));
    }
    let n = rho.n_sites();
    let mut keep_bits = Vec::with_capacity(keep.len());
    for &s in keep {
        let pos = rho
            .sites
            .iter()
            .position(|&x| x == s)
            .ok_or_else(|| Error::Dimension(format!("site {s} not in {:?}", rho.sites)))?;
        if keep_bits.contains(&(n - 1 - pos)) {
            return Err(Error::Validation(format!("site {s} listed twice")));
        }
        keep_bits.push(n - 1 - pos);
    }
    let traced_bits: Vec<usize> = (0..n).filter(|b| !keep_bits.contains(b)).collect();
    let k = keep_bits.len();
    let scatter = |x: usize, bits: &[usize]| -> usize {
        let m = bits.len();
        bits.iter().enumerate().fold(0, |acc, (p, &b)| acc | ((x >> (m - 1 - p) & 1) << b))
    };
    let keep_full: Vec<usize> = (0..1usize << k).map(|a| scatter(a, &keep_bits)).collect();
    let traced_full: Vec<usize> = (0..1usize << traced_bits.len()).map(|t| scatter(t, &traced_bits)).collect();
    let dk = 1usize << k;
    let mut out = CMatrix::zeros(dk, dk);
    for a in 0..dk {
        for b in 0..dk {
            let mut acc = ZERO;
            for &t in &traced_full {
                acc += rho.matrix[(keep_full[a] | t, keep_full[b] | t)];
            }
            out[(a, b)] = acc;
        }
    }
    Ok(DensityOperator::from_trusted(keep.to_vec(), out))
}

pub fn purity(rho: &DensityOperator) -> f64 {
    rho.purity()
}

pub fn fidelity(rho: &DensityOperator, sigma: &DensityOperator) -> Result<f64> {
    rho.fidelity(sigma)
}

/// Anything an observable can be evaluated on.
pub trait Expectation {
    fn expectation(&self, obs: &ObservableSpec) -> Result<f64>;
}

impl Expectation for HybridState {
    fn expectation(&self, obs: &ObservableSpec) -> Result<f64> {
        HybridState::expectation(self, obs)
    }
}

impl Expectation for DensityOperator {
    fn expectation(&self, obs: &ObservableSpec) -> Result<f64> {
        DensityOperator::expectation(self, obs)
    }
}

pub fn expectation<S: Expectation + ?Sized>(state: &S, obs: &ObservableSpec) -> Result<f64> {
    state.expectation(obs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn zz(a: usize, b: usize) -> ObservableSpec {
        ObservableSpec::new(vec![PauliTerm::two_site(1.0, a, b, Pauli::Z)])
    }

    #[test]
    fn pauli_matrices_match_action() {
        for p in Pauli::ALL {
            let m = p.matrix();
            for c in 0..2 {
                let (r, ph) = p.act(c == 1);
                assert_eq!(m[r as usize][c], ph);
                assert_eq!(m[1 - r as usize][c], ZERO);
            }
        }
        // XY = iZ
        let x = Pauli::X.matrix();
        let y = Pauli::Y.matrix();
        let z = Pauli::Z.matrix();
        for r in 0..2 {
            for c in 0..2 {
                let xy = x[r][0] * y[0][c] + x[r][1] * y[1][c];
                assert_eq!(xy, I * z[r][c]);
            }
        }
    }

    #[test]
    fn readout_rotation_diagonalises() {
        for p in Pauli::ALL {
            let v = p.readout_rotation();
            let m = p.matrix();
            // V P V† should be Z
            for r in 0..2 {
                for c in 0..2 {
                    let mut acc = ZERO;
                    for a in 0..2 {
                        for b in 0..2 {
                            acc += v[r][a] * m[a][b] * v[c][b].conj();
                        }
                    }
                    assert!((acc - Pauli::Z.matrix()[r][c]).norm() < 1e-12, "{p}");
                }
            }
        }
    }

    #[test]
    fn basis_state_examples() {
        let s = basis_state(8, 4, "01010101", 0).unwrap();
        assert_eq!(s.amplitude(0, "01010101").unwrap(), ONE);
        assert_abs_diff_eq!(s.norm_sqr(), 1.0);
        let s = basis_state(1, 2, "0", 0).unwrap();
        assert_eq!(s.amplitudes(), &[ONE, ZERO, ZERO, ZERO]);
        let s = basis_state(2, 3, "11", 2).unwrap();
        assert_eq!(s.amplitudes()[2 * 4 + 3], ONE);
        assert_abs_diff_eq!(s.norm_sqr(), 1.0);
    }

    #[test]
    fn basis_state_errors() {
        assert!(matches!(basis_state(2, 3, "11", 3), Err(Error::Truncation(_))));
        assert!(matches!(basis_state(3, 3, "11", 0), Err(Error::Dimension(_))));
    }

    #[test]
    fn leakage_guard_trips_on_top_level() {
        let mut amps = vec![ZERO; 2 * 2];
        amps[2] = ONE; // n = 1 = top
        assert!(matches!(HybridState::new(1, 2, amps), Err(Error::Truncation(_))));
    }

    #[test]
    fn partial_trace_of_product_is_pure() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut amps = vec![ZERO; 3 * 2];
        amps[0] = C64::new(h, 0.0);
        amps[1] = C64::new(0.0, h);
        let s = HybridState::new(1, 3, amps).unwrap();
        let rho = partial_trace_boson(&s);
        assert_abs_diff_eq!(rho.purity(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn partial_trace_of_bell_like_is_mixed() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut amps = vec![ZERO; 3 * 2];
        amps[0] = C64::new(h, 0.0); // |0>_q |0>_b
        amps[2 + 1] = C64::new(h, 0.0); // |1>_q |1>_b
        let s = HybridState::new(1, 3, amps).unwrap();
        let rho = partial_trace_boson(&s);
        assert_abs_diff_eq!(rho.matrix()[(0, 0)].re, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(rho.matrix()[(1, 1)].re, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(rho.matrix()[(0, 1)].norm(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rho.purity(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn reduce_neel_to_bulk() {
        let rho = basis_state(8, 1, "01010101", 0).unwrap().partial_trace_boson();
        let bulk = rho.reduce(&[2, 3, 4, 5]).unwrap();
        assert_eq!(bulk.sites(), &[2, 3, 4, 5]);
        assert_abs_diff_eq!(bulk.matrix()[(0b0101, 0b0101)].re, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(bulk.purity(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn reduce_singlet_is_maximally_mixed() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let singlet = [ZERO, C64::new(h, 0.0), C64::new(-h, 0.0), ZERO];
        let rho = DensityOperator::from_pure(vec![0, 1], &singlet).unwrap();
        let one = rho.reduce(&[0]).unwrap();
        let mixed = DensityOperator::maximally_mixed(vec![0]);
        assert!((one.matrix() - mixed.matrix()).norm() < 1e-12);
    }

    #[test]
    fn reduce_rejects_empty_and_unknown() {
        let rho = DensityOperator::maximally_mixed(vec![0, 1]);
        assert!(matches!(rho.reduce(&[]), Err(Error::Dimension(_))));
        assert!(matches!(rho.reduce(&[5]), Err(Error::Dimension(_))));
    }

    #[test]
    fn neel_expectations() {
        let s = basis_state(8, 2, "01010101", 0).unwrap();
        assert_abs_diff_eq!(s.expectation(&zz(2, 3)).unwrap(), -1.0);
        let xx = ObservableSpec::new(vec![PauliTerm::two_site(1.0, 2, 3, Pauli::X)]);
        assert_abs_diff_eq!(s.expectation(&xx).unwrap(), 0.0);
        let rho = s.partial_trace_boson();
        assert_abs_diff_eq!(rho.expectation(&zz(2, 3)).unwrap(), -1.0);
    }

    #[test]
    fn purity_and_fidelity_examples() {
        let mixed = DensityOperator::maximally_mixed(vec![0, 1]);
        assert_abs_diff_eq!(mixed.purity(), 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(mixed.fidelity(&mixed).unwrap(), 1.0, epsilon = 1e-9);
        let zero = DensityOperator::from_pure(vec![0], &[ONE, ZERO]).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let plus = DensityOperator::from_pure(vec![0], &[C64::new(h, 0.0), C64::new(h, 0.0)]).unwrap();
        assert_abs_diff_eq!(zero.fidelity(&plus).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn density_validation() {
        let bad = CMatrix::from_row_slice(2, 2, &[C64::new(1.5, 0.0), ZERO, ZERO, C64::new(-0.5, 0.0)]);
        assert!(matches!(DensityOperator::new(vec![0], bad), Err(Error::Domain(_))));
        let tiny_negative =
            CMatrix::from_row_slice(2, 2, &[C64::new(1.0 + 5e-10, 0.0), ZERO, ZERO, C64::new(-5e-10, 0.0)]);
        let ok = DensityOperator::new(vec![0], tiny_negative).unwrap();
        assert!(ok.eigenvalues()[0] >= 0.0);
    }

    #[test]
    fn expectation_rejects_foreign_site() {
        let rho = DensityOperator::maximally_mixed(vec![0, 1]);
        assert!(matches!(rho.expectation(&zz(1, 4)), Err(Error::Dimension(_))));
    }
}
