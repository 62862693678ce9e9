//! Thermal initial motion, per-pulse heating and weighted Pauli errors.
//!
//! Heating uses the Kraus set `{√(1−p) 1, √p S, √p P_top}` where
//! `S = Σ_{n<d−1} |n+1⟩⟨n|` raises the phonon number by one (normalised jump,
//! no √(n+1) weighting) and `P_top` keeps the truncation level in place. The
//! map is linear, trace preserving and completely positive; the trajectory
//! form applies the normalised jump with probability `p`.
//!
//! All channels conserve the block structure in the charge
//! `(#up) − n`, so density-mode propagation stores one dense block per charge.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{DensityOperator, HybridState, Pauli};
use crate::linalg::{self, CMatrix, C64, ONE, ZERO};
use crate::sideband::{self, SidebandPulse, TranspiledCircuit};

/// Phonons per second.
pub const LAB_HEATING_RATE: f64 = 27.0;
/// Seconds for a θ = π pulse.
pub const LAB_PULSE_TIME: f64 = 125e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PauliScope {
    #[default]
    AddressedOnly,
    AllQubits,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NoiseMode {
    #[default]
    Density,
    Trajectories { count: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub nbar: f64,
    pub heating_rate: f64,
    pub pulse_time: f64,
    pub pauli_pxy: f64,
    pub pauli_pz: f64,
    pub pauli_scope: PauliScope,
    pub mode: NoiseMode,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            nbar: 0.0,
            heating_rate: 0.0,
            pulse_time: LAB_PULSE_TIME,
            pauli_pxy: 0.0,
            pauli_pz: 0.0,
            pauli_scope: PauliScope::AddressedOnly,
            mode: NoiseMode::Density,
        }
    }
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        Self::default()
    }

    pub fn is_noiseless(&self) -> bool {
        self.nbar == 0.0 && self.heating_rate == 0.0 && self.pauli_pxy == 0.0 && self.pauli_pz == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.nbar, self.heating_rate, self.pulse_time, self.pauli_pxy, self.pauli_pz]
            .iter()
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::Validation("noise parameters must be finite".into()));
        }
        if self.nbar < 0.0 || self.heating_rate < 0.0 || self.pauli_pxy < 0.0 || self.pauli_pz < 0.0 {
            return Err(Error::Validation("noise rates and probabilities must be ≥ 0".into()));
        }
        if self.pulse_time <= 0.0 {
            return Err(Error::Validation("pulse_time must be positive".into()));
        }
        check_pauli_probabilities(self.pauli_pxy, self.pauli_pz)?;
        if let NoiseMode::Trajectories { count: 0 } = self.mode {
            return Err(Error::Validation("trajectory count must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn heating_probability(&self, pulse: &SidebandPulse) -> Result<f64> {
        let p = pulse_duration(pulse.theta, self.pulse_time) * self.heating_rate;
        check_probability(p)?;
        Ok(p)
    }

    fn pauli_sites(&self, pulse: &SidebandPulse, n_qubits: usize) -> Vec<usize> {
        match self.pauli_scope {
            PauliScope::AddressedOnly => vec![pulse.ion],
            PauliScope::AllQubits => (0..n_qubits).collect(),
        }
    }

    fn has_pauli(&self) -> bool {
        self.pauli_pxy > 0.0 || self.pauli_pz > 0.0
    }
}

fn check_probability(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Validation(format!("probability {p} outside [0, 1]")));
    }
    Ok(())
}

fn check_pauli_probabilities(p_xy: f64, p_z: f64) -> Result<()> {
    if p_xy < 0.0 || p_z < 0.0 || 2.0 * p_xy + p_z > 1.0 {
        return Err(Error::Validation(format!("Pauli probabilities p_xy={p_xy}, p_z={p_z} not admissible")));
    }
    Ok(())
}

/// Geometric occupation `n̄ⁿ/(1+n̄)ⁿ⁺¹`, truncated to `d_max` levels and renormalised.
pub fn thermal_boson_weights(nbar: f64, d_max: usize) -> Result<Vec<f64>> {
    if !(nbar >= 0.0 && nbar.is_finite()) {
        return Err(Error::Validation(format!("nbar must be finite and ≥ 0, got {nbar}")));
    }
    if d_max == 0 {
        return Err(Error::Dimension("d_max must be positive".into()));
    }
    let ratio = nbar / (1.0 + nbar);
    let raw: Vec<f64> = (0..d_max).map(|n| ratio.powi(n as i32) / (1.0 + nbar)).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// `|θ|/π · t_π`.
pub fn pulse_duration(theta: f64, t_pi: f64) -> f64 {
    theta.abs() / std::f64::consts::PI * t_pi
}

pub fn circuit_duration(circuit: &TranspiledCircuit, t_pi: f64) -> f64 {
    circuit.pulses.iter().map(|p| pulse_duration(p.theta, t_pi)).sum()
}

/// Heating on a dense joint matrix (Fock-major, `rho.nrows() = fock_dim · 2^N`).
/// Linear in `rho`, so it also serves Choi-matrix checks.
pub fn heating_channel(rho: &CMatrix, fock_dim: usize, p: f64) -> Result<CMatrix> {
    check_probability(p)?;
    let dim = rho.nrows();
    if fock_dim == 0 || dim % fock_dim != 0 || rho.ncols() != dim {
        return Err(Error::Dimension(format!("{}x{} matrix with {fock_dim} Fock levels", dim, rho.ncols())));
    }
    let q = dim / fock_dim;
    let top = (fock_dim - 1) * q;
    let mut out = rho * C64::new(1.0 - p, 0.0);
    let pc = C64::new(p, 0.0);
    for c in 0..dim {
        for r in 0..dim {
            let v = rho[(r, c)];
            if v == ZERO {
                continue;
            }
            match (r < top, c < top) {
                (true, true) => out[(r + q, c + q)] += pc * v,
                (false, false) => out[(r, c)] += pc * v,
                _ => {}
            }
        }
    }
    Ok(out)
}

/// `(1−2p_xy−p_z)ρ + p_xy(XρX + YρY) + p_z ZρZ` on `site` of a qubit density operator.
pub fn weighted_pauli_channel(rho: &DensityOperator, site: usize, p_xy: f64, p_z: f64) -> Result<DensityOperator> {
    let pos = rho
        .sites()
        .iter()
        .position(|&s| s == site)
        .ok_or_else(|| Error::Dimension(format!("site {site} not in {:?}", rho.sites())))?;
    let bit = rho.n_sites() - 1 - pos;
    let out = weighted_pauli_on_bit(rho.matrix(), bit, p_xy, p_z)?;
    Ok(DensityOperator::from_trusted(rho.sites().to_vec(), out))
}

/// Dense Pauli channel on bit position `bit` of any square matrix (the bit
/// index counts from the least significant end).
pub fn weighted_pauli_on_bit(m: &CMatrix, bit: usize, p_xy: f64, p_z: f64) -> Result<CMatrix> {
    check_pauli_probabilities(p_xy, p_z)?;
    if m.nrows() >> bit == 0 {
        return Err(Error::Dimension(format!("bit {bit} outside a {}-dim matrix", m.nrows())));
    }
    let mut out = m * C64::new(1.0 - 2.0 * p_xy - p_z, 0.0);
    for (p, w) in [(Pauli::X, p_xy), (Pauli::Y, p_xy), (Pauli::Z, p_z)] {
        if w == 0.0 {
            continue;
        }
        let u = p.matrix();
        let mut t = m.clone();
        linalg::apply_left_on_bit(&mut t, bit, &u);
        linalg::apply_right_adjoint_on_bit(&mut t, bit, &u);
        out += t * C64::new(w, 0.0);
    }
    Ok(out)
}

/// Choi matrix `Σ_ij |i⟩⟨j| ⊗ E(|i⟩⟨j|)` of a linear map on `dim × dim` matrices.
pub fn choi_matrix(dim: usize, channel: impl Fn(&CMatrix) -> Result<CMatrix>) -> Result<CMatrix> {
    let mut choi = CMatrix::zeros(dim * dim, dim * dim);
    for i in 0..dim {
        for j in 0..dim {
            let mut e = CMatrix::zeros(dim, dim);
            e[(i, j)] = ONE;
            let img = channel(&e)?;
            for r in 0..dim {
                for c in 0..dim {
                    choi[(i * dim + r, j * dim + c)] = img[(r, c)];
                }
            }
        }
    }
    Ok(choi)
}

/// Members of each charge block of `boson(d) ⊗ qubits(N)`.
#[derive(Debug, PartialEq)]
pub struct SectorLayout {
    n_qubits: usize,
    fock_dim: usize,
    key: Vec<i32>,
    pos: Vec<usize>,
    members: BTreeMap<i32, Vec<usize>>,
}

impl SectorLayout {
    pub fn new(n_qubits: usize, fock_dim: usize) -> Arc<Self> {
        let q = 1usize << n_qubits;
        let dim = fock_dim * q;
        let mut key = vec![0; dim];
        let mut pos = vec![0; dim];
        let mut members: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
        for idx in 0..dim {
            let k = (idx % q).count_ones() as i32 - (idx / q) as i32;
            let list = members.entry(k).or_default();
            key[idx] = k;
            pos[idx] = list.len();
            list.push(idx);
        }
        Arc::new(Self { n_qubits, fock_dim, key, pos, members })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn fock_dim(&self) -> usize {
        self.fock_dim
    }

    pub fn block_size(&self, key: i32) -> usize {
        self.members.get(&key).map_or(0, Vec::len)
    }

    pub fn members(&self, key: i32) -> &[usize] {
        self.members.get(&key).map_or(&[], Vec::as_slice)
    }
}

/// Block-diagonal joint density operator on `boson ⊗ qubits`.
#[derive(Clone, Debug, PartialEq)]
pub struct JointDensity {
    layout: Arc<SectorLayout>,
    blocks: BTreeMap<i32, CMatrix>,
}

impl JointDensity {
    /// `Σ_n w_n |φ, n⟩⟨φ, n|` for a qubit vector `φ` of definite magnetisation.
    pub fn product(layout: Arc<SectorLayout>, phi: &[C64], weights: &[f64]) -> Result<Self> {
        let q = 1usize << layout.n_qubits;
        if phi.len() != q || weights.len() != layout.fock_dim {
            return Err(Error::Dimension("initial state does not match layout".into()));
        }
        let ups = charge_of(phi.iter().enumerate().map(|(j, a)| (j, j.count_ones() as i32, *a)))?;
        let mut blocks = BTreeMap::new();
        for (n, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let k = ups - n as i32;
            let size = layout.block_size(k);
            let mut v = vec![ZERO; size];
            for (j, &a) in phi.iter().enumerate() {
                if a != ZERO {
                    v[layout.pos[n * q + j]] = a;
                }
            }
            let m = CMatrix::from_fn(size, size, |r, c| v[r] * v[c].conj() * w);
            blocks.insert(k, m);
        }
        Ok(Self { layout, blocks })
    }

    pub fn from_pure(layout: Arc<SectorLayout>, state: &HybridState) -> Result<Self> {
        if state.n_qubits() != layout.n_qubits || state.fock_dim() != layout.fock_dim {
            return Err(Error::Dimension("state does not match layout".into()));
        }
        let amps = state.amplitudes();
        let k = charge_of(amps.iter().enumerate().map(|(i, a)| (i, layout.key[i], *a)))?;
        let size = layout.block_size(k);
        let mut v = vec![ZERO; size];
        for (i, &a) in amps.iter().enumerate() {
            if a != ZERO {
                v[layout.pos[i]] = a;
            }
        }
        let m = CMatrix::from_fn(size, size, |r, c| v[r] * v[c].conj());
        Ok(Self { layout, blocks: [(k, m)].into_iter().collect() })
    }

    /// Splits a block-diagonal dense matrix; off-block entries above 1e-12 are an error.
    pub fn from_dense(layout: Arc<SectorLayout>, m: &CMatrix) -> Result<Self> {
        let dim = layout.key.len();
        if m.nrows() != dim || m.ncols() != dim {
            return Err(Error::Dimension("dense matrix does not match layout".into()));
        }
        let mut blocks: BTreeMap<i32, CMatrix> = BTreeMap::new();
        for c in 0..dim {
            for r in 0..dim {
                let v = m[(r, c)];
                if v == ZERO {
                    continue;
                }
                let k = layout.key[r];
                if layout.key[c] != k {
                    if v.norm() > 1e-12 {
                        return Err(Error::Validation("matrix mixes charge sectors".into()));
                    }
                    continue;
                }
                let size = layout.block_size(k);
                blocks.entry(k).or_insert_with(|| CMatrix::zeros(size, size))[(layout.pos[r], layout.pos[c])] = v;
            }
        }
        Ok(Self { layout, blocks })
    }

    pub fn layout(&self) -> &Arc<SectorLayout> {
        &self.layout
    }

    pub fn block(&self, key: i32) -> Option<&CMatrix> {
        self.blocks.get(&key)
    }

    pub fn to_dense(&self) -> CMatrix {
        let dim = self.layout.key.len();
        let mut out = CMatrix::zeros(dim, dim);
        for (k, b) in &self.blocks {
            let mem = self.layout.members(*k);
            for c in 0..b.ncols() {
                for r in 0..b.nrows() {
                    out[(mem[r], mem[c])] = b[(r, c)];
                }
            }
        }
        out
    }

    pub fn trace(&self) -> f64 {
        self.blocks.values().map(|b| linalg::trace(b).re).sum()
    }

    pub fn fock_populations(&self) -> Vec<f64> {
        let q = 1usize << self.layout.n_qubits;
        let mut pops = vec![0.0; self.layout.fock_dim];
        for (k, b) in &self.blocks {
            for (p, &idx) in self.layout.members(*k).iter().enumerate() {
                pops[idx / q] += b[(p, p)].re;
            }
        }
        pops
    }

    pub fn top_population(&self) -> f64 {
        *self.fock_populations().last().unwrap_or(&0.0)
    }

    /// Boson traced out; sites `0..N`.
    pub fn qubit_density(&self) -> DensityOperator {
        let n_q = self.layout.n_qubits;
        let q = 1usize << n_q;
        let mut out = CMatrix::zeros(q, q);
        for (k, b) in &self.blocks {
            let mem = self.layout.members(*k);
            for (c, &ic) in mem.iter().enumerate() {
                for (r, &ir) in mem.iter().enumerate() {
                    if ir / q == ic / q {
                        out[(ir % q, ic % q)] += b[(r, c)];
                    }
                }
            }
        }
        DensityOperator::from_trusted((0..n_q).collect(), out)
    }

    pub fn apply_sideband(&mut self, pulse: &SidebandPulse) -> Result<()> {
        sideband::check_pulse(pulse, self.layout.n_qubits)?;
        let q = 1usize << self.layout.n_qubits;
        let mask = 1usize << (self.layout.n_qubits - 1 - pulse.ion);
        let e = C64::from_polar(1.0, pulse.phase);
        for (k, b) in self.blocks.iter_mut() {
            let mem = self.layout.members(*k);
            for (pa, &idx) in mem.iter().enumerate() {
                let (n, j) = (idx / q, idx % q);
                if j & mask != 0 || n + 1 >= self.layout.fock_dim {
                    continue;
                }
                let pb = self.layout.pos[(n + 1) * q + (j | mask)];
                let x = 0.5 * pulse.theta * ((n + 1) as f64).sqrt();
                let (s, c) = x.sin_cos();
                let u = [[C64::new(c, 0.0), e * s], [-e.conj() * s, C64::new(c, 0.0)]];
                rotate_pair(b, pa, pb, &u);
            }
        }
        Ok(())
    }

    pub fn apply_heating(&mut self, p: f64) -> Result<()> {
        check_probability(p)?;
        if p == 0.0 {
            return Ok(());
        }
        let q = 1usize << self.layout.n_qubits;
        let top = self.layout.fock_dim - 1;
        let mut out: BTreeMap<i32, CMatrix> = BTreeMap::new();
        for (k, b) in &self.blocks {
            let mut stay = b * C64::new(1.0 - p, 0.0);
            let mem = self.layout.members(*k);
            for (c, &ic) in mem.iter().enumerate() {
                for (r, &ir) in mem.iter().enumerate() {
                    if ir / q == top && ic / q == top {
                        stay[(r, c)] += b[(r, c)] * p;
                    }
                }
            }
            accumulate(&mut out, *k, stay);
            self.transfer(&mut out, *k, b, p, |idx| (idx / q < top).then_some(idx + q));
        }
        self.blocks = out;
        Ok(())
    }

    pub fn apply_pauli(&mut self, site: usize, p_xy: f64, p_z: f64) -> Result<()> {
        check_pauli_probabilities(p_xy, p_z)?;
        if site >= self.layout.n_qubits {
            return Err(Error::Dimension(format!("site {site} outside register")));
        }
        if p_xy == 0.0 && p_z == 0.0 {
            return Ok(());
        }
        let q = 1usize << self.layout.n_qubits;
        let mask = 1usize << (self.layout.n_qubits - 1 - site);
        let mut out: BTreeMap<i32, CMatrix> = BTreeMap::new();
        for (k, b) in &self.blocks {
            let mem = self.layout.members(*k);
            let sign: Vec<f64> = mem.iter().map(|&i| if i % q & mask != 0 { 1.0 } else { -1.0 }).collect();
            let keep = 1.0 - 2.0 * p_xy - p_z;
            let stay = CMatrix::from_fn(b.nrows(), b.ncols(), |r, c| b[(r, c)] * (keep + p_z * sign[r] * sign[c]));
            accumulate(&mut out, *k, stay);
            if p_xy > 0.0 {
                // XρX + YρY = 2(σ⁺ρσ⁻ + σ⁻ρσ⁺)
                self.transfer(&mut out, *k, b, 2.0 * p_xy, |idx| (idx & mask == 0).then_some(idx | mask));
                self.transfer(&mut out, *k, b, 2.0 * p_xy, |idx| (idx & mask != 0).then_some(idx & !mask));
            }
        }
        self.blocks = out;
        Ok(())
    }

    /// Adds `w · M ρ_k M†` for a partial basis map `M` that moves block `k` into one target block.
    fn transfer(
        &self,
        out: &mut BTreeMap<i32, CMatrix>,
        k: i32,
        b: &CMatrix,
        w: f64,
        map: impl Fn(usize) -> Option<usize>,
    ) {
        let mem = self.layout.members(k);
        let moved: Vec<(usize, usize)> = mem
            .iter()
            .enumerate()
            .filter_map(|(p, &idx)| map(idx).map(|t| (p, t)))
            .collect();
        let Some(&(_, first)) = moved.first() else { return };
        let target = self.layout.key[first];
        let size = self.layout.block_size(target);
        let dst = out.entry(target).or_insert_with(|| CMatrix::zeros(size, size));
        for &(pc, tc) in &moved {
            let dc = self.layout.pos[tc];
            for &(pr, tr) in &moved {
                dst[(self.layout.pos[tr], dc)] += b[(pr, pc)] * w;
            }
        }
    }
}

fn accumulate(out: &mut BTreeMap<i32, CMatrix>, k: i32, m: CMatrix) {
    match out.get_mut(&k) {
        Some(existing) => *existing += m,
        None => {
            out.insert(k, m);
        }
    }
}

fn charge_of(entries: impl Iterator<Item = (usize, i32, C64)>) -> Result<i32> {
    let mut key = None;
    for (_, k, a) in entries {
        if a == ZERO {
            continue;
        }
        match key {
            None => key = Some(k),
            Some(existing) if existing != k => {
                return Err(Error::Validation(
                    "density-mode propagation needs an initial state of definite charge".into(),
                ))
            }
            _ => {}
        }
    }
    key.ok_or_else(|| Error::Validation("zero initial state".into()))
}

/// Rotates rows and columns `(a, b)` of `m` by the 2×2 unitary `u`: `m → U m U†`.
fn rotate_pair(m: &mut CMatrix, a: usize, b: usize, u: &[[C64; 2]; 2]) {
    let n = m.nrows();
    for c in 0..n {
        let x = m[(a, c)];
        let y = m[(b, c)];
        m[(a, c)] = u[0][0] * x + u[0][1] * y;
        m[(b, c)] = u[1][0] * x + u[1][1] * y;
    }
    let (ca, cb) = if a < b { (a, b) } else { (b, a) };
    let (lo, hi) = m.columns_range_pair_mut(ca, cb);
    let (mut col_a, mut col_b) = if a < b { (lo, hi) } else { (hi, lo) };
    let u00 = u[0][0].conj();
    let u01 = u[0][1].conj();
    let u10 = u[1][0].conj();
    let u11 = u[1][1].conj();
    for r in 0..n {
        let x = col_a[r];
        let y = col_b[r];
        col_a[r] = x * u00 + y * u01;
        col_b[r] = x * u10 + y * u11;
    }
}

/// Averaged qubit state from stochastic trajectories, with elementwise standard errors.
#[derive(Clone, Debug)]
pub struct TrajectoryResult {
    pub mean: CMatrix,
    pub stderr_re: DMatrix<f64>,
    pub stderr_im: DMatrix<f64>,
    pub top_population: f64,
    pub count: usize,
}

impl TrajectoryResult {
    pub fn qubit_density(&self) -> DensityOperator {
        let n = self.mean.nrows().trailing_zeros() as usize;
        DensityOperator::from_trusted((0..n).collect(), self.mean.clone())
    }
}

/// Result of a noisy circuit run.
#[derive(Clone, Debug)]
pub enum NoisyState {
    Pure(HybridState),
    Density(JointDensity),
    Trajectories(TrajectoryResult),
}

impl NoisyState {
    pub fn qubit_density(&self) -> DensityOperator {
        match self {
            NoisyState::Pure(s) => s.partial_trace_boson(),
            NoisyState::Density(d) => d.qubit_density(),
            NoisyState::Trajectories(t) => t.qubit_density(),
        }
    }

    pub fn top_population(&self) -> f64 {
        match self {
            NoisyState::Pure(s) => s.top_level_population(),
            NoisyState::Density(d) => d.top_population(),
            NoisyState::Trajectories(t) => t.top_population,
        }
    }
}

/// Qubit amplitudes of `initial`; with a thermal boson the input must sit in Fock level 0.
fn initial_qubits(initial: &HybridState) -> Result<Vec<C64>> {
    let pops = initial.fock_populations();
    if pops.iter().skip(1).any(|&p| p > 1e-14) {
        return Err(Error::Validation("thermal initialisation needs the input in Fock level 0".into()));
    }
    Ok(initial.fock_block(0).to_vec())
}

/// Runs `circuit` with per-pulse heating and Pauli errors. Order per pulse:
/// sideband, heating, Pauli channel. With `nbar > 0` the boson of `initial`
/// is replaced by the thermal state. The leakage guard uses the threshold of
/// `initial`.
pub fn run_noisy(initial: &HybridState, circuit: &TranspiledCircuit, cfg: &NoiseConfig, seed: u64) -> Result<NoisyState> {
    cfg.validate()?;
    if circuit.n_qubits != initial.n_qubits() {
        return Err(Error::Dimension("circuit and state sizes differ".into()));
    }
    if cfg.is_noiseless() {
        return sideband::run_circuit(initial, circuit).map(NoisyState::Pure);
    }
    match cfg.mode {
        NoiseMode::Density => run_density(initial, circuit, cfg).map(NoisyState::Density),
        NoiseMode::Trajectories { count } => {
            run_trajectories(initial, circuit, cfg, count, seed).map(NoisyState::Trajectories)
        }
    }
}

pub fn run_density(initial: &HybridState, circuit: &TranspiledCircuit, cfg: &NoiseConfig) -> Result<JointDensity> {
    let (n_q, d) = (initial.n_qubits(), initial.fock_dim());
    let layout = SectorLayout::new(n_q, d);
    let mut rho = if cfg.nbar > 0.0 {
        JointDensity::product(layout, &initial_qubits(initial)?, &thermal_boson_weights(cfg.nbar, d)?)?
    } else {
        JointDensity::from_pure(layout, initial)?
    };
    let threshold = initial.leakage_threshold();
    for pulse in &circuit.pulses {
        rho.apply_sideband(pulse)?;
        rho.apply_heating(cfg.heating_probability(pulse)?)?;
        if cfg.has_pauli() {
            for site in cfg.pauli_sites(pulse, n_q) {
                rho.apply_pauli(site, cfg.pauli_pxy, cfg.pauli_pz)?;
            }
        }
        let top = rho.top_population();
        if d > 1 && top > threshold {
            return Err(Error::Truncation(format!(
                "population {top:.3e} in top Fock level {} exceeds {threshold:.1e}",
                d - 1
            )));
        }
    }
    Ok(rho)
}

/// Independent trajectories with per-trajectory streams `(seed, index)`.
pub fn run_trajectories(
    initial: &HybridState,
    circuit: &TranspiledCircuit,
    cfg: &NoiseConfig,
    count: usize,
    seed: u64,
) -> Result<TrajectoryResult> {
    if count == 0 {
        return Err(Error::Validation("trajectory count must be ≥ 1".into()));
    }
    let (n_q, d) = (initial.n_qubits(), initial.fock_dim());
    let q = 1usize << n_q;
    let thermal = if cfg.nbar > 0.0 {
        Some((initial_qubits(initial)?, WeightedIndex::new(thermal_boson_weights(cfg.nbar, d)?).map_err(|e| Error::Numerical(e.to_string()))?))
    } else {
        None
    };
    let heat: Vec<f64> = circuit.pulses.iter().map(|p| cfg.heating_probability(p)).collect::<Result<_>>()?;
    for p in &circuit.pulses {
        sideband::check_pulse(p, n_q)?;
    }
    let mut sum = CMatrix::zeros(q, q);
    let mut sq_re = DMatrix::<f64>::zeros(q, q);
    let mut sq_im = DMatrix::<f64>::zeros(q, q);
    let mut top = 0.0;
    for t in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t as u64);
        let mut amps = match &thermal {
            Some((phi, dist)) => {
                let n = dist.sample(&mut rng);
                let mut v = vec![ZERO; d * q];
                v[n * q..(n + 1) * q].copy_from_slice(phi);
                v
            }
            None => initial.amplitudes().to_vec(),
        };
        for (pulse, &p_heat) in circuit.pulses.iter().zip(&heat) {
            sideband::rotate_in_place(&mut amps, n_q, d, pulse);
            if p_heat > 0.0 && rng.gen::<f64>() < p_heat {
                heating_jump(&mut amps, q, d, &mut rng);
            }
            if cfg.has_pauli() {
                for site in cfg.pauli_sites(pulse, n_q) {
                    let r: f64 = rng.gen();
                    let pauli = if r < cfg.pauli_pxy {
                        Some(Pauli::X)
                    } else if r < 2.0 * cfg.pauli_pxy {
                        Some(Pauli::Y)
                    } else if r < 2.0 * cfg.pauli_pxy + cfg.pauli_pz {
                        Some(Pauli::Z)
                    } else {
                        None
                    };
                    if let Some(p) = pauli {
                        apply_pauli_vec(&mut amps, n_q, site, p);
                    }
                }
            }
        }
        top += amps[(d - 1) * q..].iter().map(|a| a.norm_sqr()).sum::<f64>();
        let mut rho_t = CMatrix::zeros(q, q);
        for n in 0..d {
            let block = &amps[n * q..(n + 1) * q];
            for c in 0..q {
                if block[c] == ZERO {
                    continue;
                }
                let bc = block[c].conj();
                for r in 0..q {
                    rho_t[(r, c)] += block[r] * bc;
                }
            }
        }
        sum += &rho_t;
        for (i, v) in rho_t.iter().enumerate() {
            sq_re[i] += v.re * v.re;
            sq_im[i] += v.im * v.im;
        }
    }
    let nf = count as f64;
    let mean = sum / C64::new(nf, 0.0);
    let se = |sq: &DMatrix<f64>, part: fn(&C64) -> f64| {
        DMatrix::from_fn(q, q, |r, c| {
            let m = part(&mean[(r, c)]);
            let var = (sq[(r, c)] / nf - m * m).max(0.0) * nf / (nf - 1.0).max(1.0);
            (var / nf).sqrt()
        })
    };
    let stderr_re = se(&sq_re, |z| z.re);
    let stderr_im = se(&sq_im, |z| z.im);
    let top = top / nf;
    if d > 1 && top > initial.leakage_threshold() {
        return Err(Error::Truncation(format!("mean top-level population {top:.3e} exceeds the leakage threshold")));
    }
    Ok(TrajectoryResult { mean, stderr_re, stderr_im, top_population: top, count })
}

/// Unravels the heating Kraus set given that a jump happened:
/// raise with probability `‖Sψ‖²`, otherwise project on the top level.
fn heating_jump(amps: &mut [C64], q: usize, d: usize, rng: &mut impl Rng) {
    let top: f64 = amps[(d - 1) * q..].iter().map(|a| a.norm_sqr()).sum();
    if rng.gen::<f64>() < 1.0 - top {
        amps.copy_within(0..(d - 1) * q, q);
        amps[..q].iter_mut().for_each(|a| *a = ZERO);
    } else {
        amps[..(d - 1) * q].iter_mut().for_each(|a| *a = ZERO);
    }
    let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    if norm > 0.0 {
        amps.iter_mut().for_each(|a| *a /= norm);
    }
}

fn apply_pauli_vec(amps: &mut [C64], n_qubits: usize, site: usize, p: Pauli) {
    let mask = 1usize << (n_qubits - 1 - site);
    let m = p.matrix();
    for i in 0..amps.len() {
        if i & mask != 0 {
            continue;
        }
        let (a, b) = (amps[i], amps[i | mask]);
        amps[i] = m[0][0] * a + m[0][1] * b;
        amps[i | mask] = m[1][0] * a + m[1][1] * b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::basis_state;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn thermal_weights() {
        assert_eq!(thermal_boson_weights(0.0, 4).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
        let w = thermal_boson_weights(0.05, 4).unwrap();
        let raw0 = 1.0 / 1.05;
        let raw = [raw0, raw0 * 0.05 / 1.05, raw0 * (0.05f64 / 1.05).powi(2)];
        assert_abs_diff_eq!(raw[0], 0.95238, epsilon = 1e-5);
        assert_abs_diff_eq!(raw[1], 0.04535, epsilon = 1e-5);
        assert_abs_diff_eq!(raw[2], 0.00216, epsilon = 1e-5);
        assert!(w[0] > raw[0] && w[0] < raw[0] + 1e-4);
        for nbar in [0.0, 0.05, 1.0, 7.3] {
            assert_abs_diff_eq!(thermal_boson_weights(nbar, 6).unwrap().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn durations() {
        assert_abs_diff_eq!(pulse_duration(PI, LAB_PULSE_TIME), 125e-6, epsilon = 1e-18);
        assert_abs_diff_eq!(pulse_duration(0.03 * PI, LAB_PULSE_TIME), 3.75e-6, epsilon = 1e-18);
        assert_eq!(pulse_duration(0.0, LAB_PULSE_TIME), 0.0);
        let cfg = NoiseConfig { heating_rate: LAB_HEATING_RATE, ..NoiseConfig::default() };
        assert_abs_diff_eq!(cfg.heating_probability(&SidebandPulse::new(0, PI)).unwrap(), 3.375e-3, epsilon = 1e-15);
    }

    #[test]
    fn heating_on_vacuum() {
        let mut rho = CMatrix::zeros(3, 3);
        rho[(0, 0)] = ONE;
        let out = heating_channel(&rho, 3, 0.1).unwrap();
        assert_abs_diff_eq!(out[(0, 0)].re, 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(out[(1, 1)].re, 0.1, epsilon = 1e-15);
        assert_eq!(heating_channel(&rho, 3, 0.0).unwrap(), rho);
        assert!(matches!(heating_channel(&rho, 3, 1.5), Err(Error::Validation(_))));
    }

    #[test]
    fn pauli_examples() {
        let zero = DensityOperator::from_pure(vec![0], &[ONE, ZERO]).unwrap();
        let out = weighted_pauli_channel(&zero, 0, 0.0, 0.03).unwrap();
        assert!((out.matrix() - zero.matrix()).norm() < 1e-15);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let plus = DensityOperator::from_pure(vec![0], &[C64::new(h, 0.0), C64::new(h, 0.0)]).unwrap();
        let out = weighted_pauli_channel(&plus, 0, 0.0, 0.03).unwrap();
        assert_abs_diff_eq!(out.matrix()[(0, 1)].re, 0.5 * 0.94, epsilon = 1e-15);
        let same = weighted_pauli_channel(&plus, 0, 0.0, 0.0).unwrap();
        assert!((same.matrix() - plus.matrix()).norm() < 1e-15);
        assert!(matches!(weighted_pauli_channel(&plus, 0, 0.4, 0.3), Err(Error::Validation(_))));
    }

    fn random_block_diagonal(layout: &Arc<SectorLayout>, seed: u64) -> CMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = layout.key.len();
        let mut m = CMatrix::zeros(dim, dim);
        for r in 0..dim {
            for c in 0..=r {
                if layout.key[r] == layout.key[c] {
                    let v = C64::new(rng.gen::<f64>() - 0.5, if r == c { 0.0 } else { rng.gen::<f64>() - 0.5 });
                    m[(r, c)] = v;
                    m[(c, r)] = v.conj();
                }
            }
        }
        m
    }

    #[test]
    fn block_channels_match_dense() {
        let layout = SectorLayout::new(3, 4);
        let m = random_block_diagonal(&layout, 7);
        let mut jd = JointDensity::from_dense(layout.clone(), &m).unwrap();
        assert!((jd.to_dense() - &m).norm() < 1e-14);

        jd.apply_heating(0.2).unwrap();
        let want = heating_channel(&m, 4, 0.2).unwrap();
        assert!((jd.to_dense() - &want).norm() < 1e-12);

        jd.apply_pauli(1, 0.07, 0.11).unwrap();
        // site 1 of 3 qubits is bit 1 of the qubit index, which is also bit 1 of the joint index
        let want = weighted_pauli_on_bit(&want, 1, 0.07, 0.11).unwrap();
        assert!((jd.to_dense() - &want).norm() < 1e-12);

        let pulse = SidebandPulse::new(2, 0.9);
        jd.apply_sideband(&pulse).unwrap();
        let u = linalg::expm(&(sideband::sideband_generator(3, 4, 2) * C64::new(0.45, 0.0)));
        let want = &u * want * u.adjoint();
        assert!((jd.to_dense() - &want).norm() < 1e-12);
    }

    #[test]
    fn qubit_density_matches_partial_trace() {
        let s = basis_state(2, 3, "01", 0).unwrap();
        let c = TranspiledCircuit {
            n_qubits: 2,
            pulses: vec![SidebandPulse::new(0, 0.6 * PI), SidebandPulse::new(1, 0.4 * PI)],
            slots: vec![0, 1],
            dropped: vec![],
        };
        let pure = sideband::run_circuit(&s, &c).unwrap();
        let cfg = NoiseConfig { pauli_pz: 1e-300, ..NoiseConfig::default() };
        let dens = run_density(&s, &c, &cfg).unwrap();
        assert!((dens.qubit_density().matrix() - pure.partial_trace_boson().matrix()).norm() < 1e-12);
    }

    #[test]
    fn trajectories_converge_to_density() {
        let s = basis_state(2, 4, "01", 0).unwrap().with_leakage_threshold(1.0);
        let c = TranspiledCircuit {
            n_qubits: 2,
            pulses: vec![
                SidebandPulse::new(0, 0.7 * PI),
                SidebandPulse::new(1, 0.5 * PI),
                SidebandPulse::new(0, -0.3 * PI),
            ],
            slots: vec![0, 1, 2],
            dropped: vec![],
        };
        let cfg = NoiseConfig {
            nbar: 0.1,
            heating_rate: 400.0,
            pauli_pxy: 0.02,
            pauli_pz: 0.05,
            pauli_scope: PauliScope::AllQubits,
            ..NoiseConfig::default()
        };
        let dens = run_density(&s, &c, &cfg).unwrap().qubit_density();
        let traj = run_trajectories(&s, &c, &cfg, 20_000, 11).unwrap();
        for i in 0..16 {
            let d = dens.matrix()[i] - traj.mean[i];
            assert!(d.re.abs() <= 4.0 * traj.stderr_re[i] + 1e-12, "re {i}: {d}");
            assert!(d.im.abs() <= 4.0 * traj.stderr_im[i] + 1e-12, "im {i}: {d}");
        }
    }

    #[test]
    fn trajectories_are_reproducible() {
        let s = basis_state(2, 3, "01", 0).unwrap().with_leakage_threshold(1.0);
        let c = TranspiledCircuit { n_qubits: 2, pulses: vec![SidebandPulse::new(0, 0.5 * PI)], slots: vec![0], dropped: vec![] };
        let cfg = NoiseConfig { pauli_pz: 0.3, ..NoiseConfig::default() };
        let a = run_trajectories(&s, &c, &cfg, 50, 3).unwrap();
        let b = run_trajectories(&s, &c, &cfg, 50, 3).unwrap();
        assert_eq!(a.mean, b.mean);
    }

    #[test]
    fn density_mode_rejects_mixed_charge_input() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let amps = vec![C64::new(h, 0.0), C64::new(h, 0.0), ZERO, ZERO];
        let s = HybridState::new(1, 2, amps).unwrap();
        let cfg = NoiseConfig { pauli_pz: 0.1, ..NoiseConfig::default() };
        assert!(matches!(run_density(&s, &TranspiledCircuit::empty(1), &cfg), Err(Error::Validation(_))));
    }
}
