//! Extended SSH chain with optional boundary pinning field:
//!
//! `H = Σ_k [1 + (−1)^k t₋] (XₖXₖ₊₁ + YₖYₖ₊₁ + δ ZₖZₖ₊₁) + B (Z₀ − Z_{N−1})`
//!
//! with 0-based bonds `k = 0..N−2` (the first bond carries `1 + t₋`).

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{apply_ops, register_ops, DensityOperator, ObservableSpec, Pauli, PauliTerm};
use crate::linalg::{CMatrix, C64, ZERO};

pub const MAX_DENSE_SITES: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n: usize,
    pub t_minus: f64,
    pub delta: f64,
    #[serde(default)]
    pub b: f64,
}

impl ModelSpec {
    pub fn new(n: usize, t_minus: f64, delta: f64) -> Self {
        Self { n, t_minus, delta, b: 0.0 }
    }

    pub fn with_field(mut self, b: f64) -> Self {
        self.b = b;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Validation(format!("need at least 2 sites, got {}", self.n)));
        }
        if ![self.t_minus, self.delta, self.b].iter().all(|x| x.is_finite()) {
            return Err(Error::Validation("model parameters must be finite".into()));
        }
        if self.delta < 0.0 {
            return Err(Error::Validation(format!("delta must be ≥ 0, got {}", self.delta)));
        }
        Ok(())
    }

    pub fn bond_coefficient(&self, k: usize) -> f64 {
        if k % 2 == 0 {
            1.0 + self.t_minus
        } else {
            1.0 - self.t_minus
        }
    }
}

/// XX and YY terms on every bond (zero-coefficient bonds included), ZZ terms
/// only when δ ≠ 0, field terms only when B ≠ 0.
pub fn build_hamiltonian(spec: &ModelSpec) -> Result<ObservableSpec> {
    spec.validate()?;
    let mut terms = Vec::new();
    for k in 0..spec.n - 1 {
        let c = spec.bond_coefficient(k);
        terms.push(PauliTerm::two_site(c, k, k + 1, Pauli::X));
        terms.push(PauliTerm::two_site(c, k, k + 1, Pauli::Y));
        if spec.delta != 0.0 {
            terms.push(PauliTerm::two_site(c * spec.delta, k, k + 1, Pauli::Z));
        }
    }
    if spec.b != 0.0 {
        terms.push(PauliTerm::single(spec.b, 0, Pauli::Z));
        terms.push(PauliTerm::single(-spec.b, spec.n - 1, Pauli::Z));
    }
    Ok(ObservableSpec::new(terms))
}

/// Dense `2^N × 2^N` matrix; reference for the sector solver.
pub fn dense_hamiltonian(spec: &ModelSpec) -> Result<CMatrix> {
    check_size(spec)?;
    let sites: Vec<usize> = (0..spec.n).collect();
    build_hamiltonian(spec)?.to_dense(&sites)
}

/// `H|ψ⟩` for a vector on `2^N`.
pub fn apply_hamiltonian(h: &ObservableSpec, n: usize, psi: &[C64]) -> Result<Vec<C64>> {
    let sites: Vec<usize> = (0..n).collect();
    let mut out = vec![ZERO; psi.len()];
    for term in &h.terms {
        let ops = register_ops(&term.ops, &sites)?;
        for (j, &a) in psi.iter().enumerate() {
            if a == ZERO {
                continue;
            }
            let (i, phase) = apply_ops(&ops, j);
            out[i] += phase * a * term.coeff;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumResult {
    /// Full spectrum, ascending.
    pub energies: Vec<f64>,
    /// Real, phase-fixed ground vector on `2^N`.
    pub ground_state: Vec<C64>,
    /// `E₁ − E₀` over the full spectrum.
    pub degeneracy_gap: f64,
    /// Number of up spins in the sector the ground vector was taken from.
    pub ground_sector: usize,
}

impl SpectrumResult {
    pub fn ground_energy(&self) -> f64 {
        self.energies[0]
    }

    pub fn density(&self) -> DensityOperator {
        let n = self.ground_state.len().trailing_zeros() as usize;
        DensityOperator::from_pure((0..n).collect(), &self.ground_state).expect("normalised eigenvector")
    }
}

fn check_size(spec: &ModelSpec) -> Result<()> {
    spec.validate()?;
    if spec.n > MAX_DENSE_SITES {
        return Err(Error::Capability(format!("{} sites exceed the dense limit of {MAX_DENSE_SITES}", spec.n)));
    }
    Ok(())
}

/// Diagonalises each fixed-magnetisation sector. Among sectors whose lowest
/// level ties the global minimum (within 1e-10), the one closest to half
/// filling supplies the ground vector.
pub fn exact_ground_state(spec: &ModelSpec) -> Result<SpectrumResult> {
    check_size(spec)?;
    let n = spec.n;
    let h = build_hamiltonian(spec)?;
    let sites: Vec<usize> = (0..n).collect();
    let term_ops: Vec<_> = h
        .terms
        .iter()
        .map(|t| register_ops(&t.ops, &sites).map(|ops| (t.coeff, ops)))
        .collect::<Result<_>>()?;

    let mut energies = Vec::with_capacity(1 << n);
    let mut best: Option<(f64, usize, Vec<f64>, Vec<usize>)> = None;
    for up in 0..=n {
        let members: Vec<usize> = (0..1usize << n).filter(|j| j.count_ones() as usize == up).collect();
        let pos: BTreeMap<usize, usize> = members.iter().enumerate().map(|(p, &j)| (j, p)).collect();
        let m = members.len();
        let mut hs = DMatrix::<f64>::zeros(m, m);
        for (c, &j) in members.iter().enumerate() {
            let mut col: BTreeMap<usize, C64> = BTreeMap::new();
            for (coeff, ops) in &term_ops {
                let (i, phase) = apply_ops(ops, j);
                *col.entry(i).or_insert(ZERO) += phase * *coeff;
            }
            for (i, v) in col {
                match pos.get(&i) {
                    Some(&r) => {
                        if v.im.abs() > 1e-12 {
                            return Err(Error::Numerical("Hamiltonian matrix element not real".into()));
                        }
                        hs[(r, c)] += v.re;
                    }
                    None if v.norm() > 1e-12 => {
                        return Err(Error::Numerical("Hamiltonian does not conserve magnetisation".into()));
                    }
                    None => {}
                }
            }
        }
        let eig = hs.symmetric_eigen();
        let lowest = (0..m).min_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b])).unwrap();
        let e = eig.eigenvalues[lowest];
        energies.extend(eig.eigenvalues.iter().copied());
        let dist = (2 * up).abs_diff(n);
        let better = match &best {
            None => true,
            Some((be, bup, _, _)) => {
                e < be - 1e-10 || ((e - be).abs() <= 1e-10 && dist < (2 * bup).abs_diff(n))
            }
        };
        if better {
            let v: Vec<f64> = eig.eigenvectors.column(lowest).iter().copied().collect();
            best = Some((e, up, v, members));
        }
    }
    energies.sort_by(f64::total_cmp);
    let (_, up, v, members) = best.expect("at least one sector");
    let mut psi = vec![ZERO; 1 << n];
    for (p, &j) in members.iter().enumerate() {
        psi[j] = C64::new(v[p], 0.0);
    }
    fix_phase(&mut psi);
    let e0 = energies[0];
    let hpsi = apply_hamiltonian(&h, n, &psi)?;
    let residual: f64 = hpsi.iter().zip(&psi).map(|(a, b)| (a - b * e0).norm_sqr()).sum::<f64>().sqrt();
    if residual > 1e-8 {
        return Err(Error::Numerical(format!("ground-state residual {residual:.2e}")));
    }
    Ok(SpectrumResult {
        degeneracy_gap: energies.get(1).map_or(0.0, |e1| e1 - e0),
        energies,
        ground_state: psi,
        ground_sector: up,
    })
}

/// Makes the largest-magnitude amplitude real positive.
fn fix_phase(psi: &mut [C64]) {
    let mut idx = 0;
    for (i, a) in psi.iter().enumerate() {
        if a.norm() > psi[idx].norm() + 1e-12 {
            idx = i;
        }
    }
    let a = psi[idx];
    if a.norm() == 0.0 {
        return;
    }
    let rot = a.conj() / a.norm();
    psi.iter_mut().for_each(|x| *x *= rot);
}

/// `Tr[ρH]` for a density operator over sites `0..N` in order.
pub fn energy_of(rho: &DensityOperator, spec: &ModelSpec) -> Result<f64> {
    let expected: Vec<usize> = (0..spec.n).collect();
    if rho.sites() != expected.as_slice() {
        return Err(Error::Dimension(format!("density on {:?}, model has {} sites", rho.sites(), spec.n)));
    }
    rho.expectation(&build_hamiltonian(spec)?)
}

/// `(E_targ − E) / E_targ`.
pub fn relative_energy_error(e: f64, e_target: f64) -> Result<f64> {
    if e_target == 0.0 {
        return Err(Error::Domain("target energy is zero".into()));
    }
    Ok((e_target - e) / e_target)
}

/// Same as [`relative_energy_error`] with the target from an exact solve.
pub fn relative_energy_error_for(e: f64, spec: &ModelSpec) -> Result<f64> {
    relative_energy_error(e, exact_ground_state(spec)?.ground_energy())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::basis_state;
    use crate::linalg::hermitian_eigenvalues;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn free_fermion_e0(n: usize) -> f64 {
        (1..=n).map(|j| 4.0 * (j as f64 * PI / (n + 1) as f64).cos()).filter(|e| *e < 0.0).sum()
    }

    #[test]
    fn hamiltonian_term_counts() {
        let h = build_hamiltonian(&ModelSpec::new(4, 0.0, 0.0)).unwrap();
        assert_eq!(h.terms.len(), 6);
        assert!(h.terms.iter().all(|t| t.coeff == 1.0 && t.collective_basis() != Some(Pauli::Z)));
        let h = build_hamiltonian(&ModelSpec::new(8, 0.333, 4.0).with_field(-3.0)).unwrap();
        assert_eq!(h.terms.len(), 3 * 7 + 2);
        assert!(h.terms.contains(&PauliTerm::single(-3.0, 0, Pauli::Z)));
        assert!(h.terms.contains(&PauliTerm::single(3.0, 7, Pauli::Z)));
    }

    #[test]
    fn dimerised_coefficients() {
        let h = build_hamiltonian(&ModelSpec::new(8, 1.0, 0.0)).unwrap();
        for t in &h.terms {
            let k = t.ops[0].0;
            assert_eq!(t.coeff, if k % 2 == 0 { 2.0 } else { 0.0 });
        }
    }

    #[test]
    fn free_fermion_energies() {
        for n in [4, 6, 8] {
            let r = exact_ground_state(&ModelSpec::new(n, 0.0, 0.0)).unwrap();
            assert_abs_diff_eq!(r.ground_energy(), free_fermion_e0(n), epsilon = 1e-9);
        }
        let r = exact_ground_state(&ModelSpec::new(4, 0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(r.ground_energy(), -2.0 * 5f64.sqrt(), epsilon = 1e-9);
        let r = exact_ground_state(&ModelSpec::new(8, 0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(r.ground_energy(), -9.517540966287, epsilon = 1e-9);
    }

    #[test]
    fn single_bond_singlet() {
        for tm in [-0.5, 0.0, 0.7] {
            let r = exact_ground_state(&ModelSpec::new(2, tm, 0.0)).unwrap();
            assert_abs_diff_eq!(r.ground_energy(), -2.0 * (1.0 + tm), epsilon = 1e-12);
        }
    }

    #[test]
    fn sector_solver_matches_full() {
        for spec in [
            ModelSpec::new(6, 0.3, 1.5),
            ModelSpec::new(6, -0.7, 4.0).with_field(0.8),
            ModelSpec::new(5, 0.1, 0.0),
        ] {
            let r = exact_ground_state(&spec).unwrap();
            let full = hermitian_eigenvalues(&dense_hamiltonian(&spec).unwrap());
            for (a, b) in r.energies.iter().zip(&full) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn magnetisation_commutes() {
        let spec = ModelSpec::new(6, 0.4, 2.0).with_field(-1.0);
        let h = dense_hamiltonian(&spec).unwrap();
        let dim = h.nrows();
        let sz = CMatrix::from_fn(dim, dim, |r, c| {
            if r == c {
                C64::new(2.0 * r.count_ones() as f64 - 6.0, 0.0)
            } else {
                ZERO
            }
        });
        assert!((&h * &sz - &sz * &h).norm() < 1e-10);
    }

    #[test]
    fn ground_state_is_real() {
        let r = exact_ground_state(&ModelSpec::new(8, 0.333, 4.0)).unwrap();
        assert!(r.ground_state.iter().all(|a| a.im.abs() < 1e-14));
        let max = r.ground_state.iter().map(|a| a.norm()).fold(0.0, f64::max);
        assert!(r.ground_state.iter().any(|a| a.re > 0.0 && (a.norm() - max).abs() < 1e-12));
    }

    #[test]
    fn pinning_limit_is_continuous() {
        let e0 = exact_ground_state(&ModelSpec::new(8, 0.333, 4.0)).unwrap().ground_energy();
        let eb = exact_ground_state(&ModelSpec::new(8, 0.333, 4.0).with_field(-1e-3)).unwrap().ground_energy();
        assert!((e0 - eb).abs() < 1e-2);
    }

    #[test]
    fn energy_of_examples() {
        let spec = ModelSpec::new(8, 0.0, 4.0);
        let neel = basis_state(8, 1, "01010101", 0).unwrap().partial_trace_boson();
        assert_abs_diff_eq!(energy_of(&neel, &spec).unwrap(), -28.0, epsilon = 1e-12);
        let mixed = DensityOperator::maximally_mixed((0..8).collect());
        assert_abs_diff_eq!(energy_of(&mixed, &spec).unwrap(), 0.0, epsilon = 1e-12);
        let r = exact_ground_state(&spec).unwrap();
        assert_abs_diff_eq!(energy_of(&r.density(), &spec).unwrap(), r.ground_energy(), epsilon = 1e-9);
        let part = mixed.reduce(&[0, 1]).unwrap();
        assert!(matches!(energy_of(&part, &spec), Err(Error::Dimension(_))));
    }

    #[test]
    fn relative_error_examples() {
        assert_abs_diff_eq!(relative_energy_error(-9.5175, -9.5175).unwrap(), 0.0);
        assert_abs_diff_eq!(relative_energy_error(0.0, -9.5175).unwrap(), 1.0);
        assert_abs_diff_eq!(relative_energy_error(-8.0, -9.5175).unwrap(), 0.15944, epsilon = 1e-4);
        assert!(matches!(relative_energy_error(1.0, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn too_large_is_capability_error() {
        assert!(matches!(exact_ground_state(&ModelSpec::new(14, 0.0, 0.0)), Err(Error::Capability(_))));
    }
}
