//! Blue-sideband pulses, the block-structured circuit template and its transpiler.
//!
//! A pulse of angle θ on ion k applies `exp((θ/2)(a σₖ⁻ − a† σₖ⁺))`, so that
//! θ = π moves `|0, 0⟩` fully to `|1, 1⟩`. On each pair `(|0ₖ, n⟩, |1ₖ, n+1⟩)`
//! it acts as the real rotation `[[c, s], [−s, c]]` with `c = cos x`,
//! `s = sin x`, `x = θ√(n+1)/2`. The unpaired `|0ₖ, d_max−1⟩` stays put, which
//! is exact for the truncated generator; the leakage guard keeps that level
//! empty.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::hilbert::HybridState;
use crate::linalg::{CMatrix, C64, ONE};

pub const DEFAULT_PRUNE_THRESHOLD: f64 = 0.03;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SidebandPulse {
    pub ion: usize,
    /// Radians.
    pub theta: f64,
    #[serde(default)]
    pub phase: f64,
}

impl SidebandPulse {
    pub fn new(ion: usize, theta: f64) -> Self {
        Self { ion, theta, phase: 0.0 }
    }
}

/// Applies one pulse in place without the leakage check.
pub(crate) fn rotate_in_place(amps: &mut [C64], n_qubits: usize, fock_dim: usize, pulse: &SidebandPulse) {
    let q = 1usize << n_qubits;
    let mask = 1usize << (n_qubits - 1 - pulse.ion);
    let (ph, ph_conj) = if pulse.phase == 0.0 {
        (ONE, ONE)
    } else {
        let e = C64::from_polar(1.0, pulse.phase);
        (e, e.conj())
    };
    for n in 0..fock_dim.saturating_sub(1) {
        let x = 0.5 * pulse.theta * ((n + 1) as f64).sqrt();
        let (s, c) = x.sin_cos();
        let (lo, hi) = amps.split_at_mut((n + 1) * q);
        let lo = &mut lo[n * q..];
        let hi = &mut hi[..q];
        for j in 0..q {
            if j & mask != 0 {
                continue;
            }
            let a = lo[j];
            let b = hi[j | mask];
            lo[j] = a * c + ph * b * s;
            hi[j | mask] = b * c - ph_conj * a * s;
        }
    }
}

pub fn apply_sideband(state: &HybridState, pulse: &SidebandPulse) -> Result<HybridState> {
    let mut out = state.clone();
    apply_sideband_mut(&mut out, pulse)?;
    Ok(out)
}

pub fn apply_sideband_mut(state: &mut HybridState, pulse: &SidebandPulse) -> Result<()> {
    check_pulse(pulse, state.n_qubits())?;
    let (n, d) = (state.n_qubits(), state.fock_dim());
    rotate_in_place(state.amplitudes_mut(), n, d, pulse);
    state.check_leakage()
}

pub(crate) fn check_pulse(pulse: &SidebandPulse, n_qubits: usize) -> Result<()> {
    if pulse.ion >= n_qubits {
        return Err(Error::Dimension(format!("ion {} outside register of {n_qubits}", pulse.ion)));
    }
    if !pulse.theta.is_finite() || !pulse.phase.is_finite() {
        return Err(Error::Validation("non-finite pulse angle".into()));
    }
    Ok(())
}

/// Dense truncated generator `a σₖ⁻ − a† σₖ⁺`; the pulse unitary is `exp((θ/2) G)`.
/// Reference implementation for cross-checks.
pub fn sideband_generator(n_qubits: usize, fock_dim: usize, ion: usize) -> CMatrix {
    let q = 1usize << n_qubits;
    let mask = 1usize << (n_qubits - 1 - ion);
    let dim = fock_dim * q;
    let mut g = CMatrix::zeros(dim, dim);
    for n in 0..fock_dim.saturating_sub(1) {
        let r = ((n + 1) as f64).sqrt();
        for j in (0..q).filter(|j| j & mask == 0) {
            let lo = n * q + j;
            let hi = (n + 1) * q + (j | mask);
            // a†σ⁺ |0,n⟩ = √(n+1) |1,n+1⟩ enters with a minus sign
            g[(hi, lo)] = C64::new(-r, 0.0);
            g[(lo, hi)] = C64::new(r, 0.0);
        }
    }
    g
}

/// Expectation of `(1/2)Σσᶻ − a†a`.
pub fn conserved_charge(state: &HybridState) -> f64 {
    let n_q = state.n_qubits();
    let mut total = 0.0;
    for n in 0..state.fock_dim() {
        for (j, a) in state.fock_block(n).iter().enumerate() {
            let p = a.norm_sqr();
            if p == 0.0 {
                continue;
            }
            let up = j.count_ones() as f64;
            total += p * (0.5 * (2.0 * up - n_q as f64) - n as f64);
        }
    }
    total
}

/// Largest imaginary amplitude; zero for circuits built from phase-free pulses on real inputs.
pub fn realness_residue(state: &HybridState) -> f64 {
    state.max_imaginary()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    L,
    R,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::L => "L",
            Side::R => "R",
        })
    }
}

pub fn parse_order(s: &str) -> Result<Vec<Side>> {
    s.chars()
        .map(|c| match c.to_ascii_uppercase() {
            'L' => Ok(Side::L),
            'R' => Ok(Side::R),
            other => Err(Error::Config(format!("ordering character '{other}' is not L or R"))),
        })
        .collect()
}

pub fn order_string(order: &[Side]) -> String {
    order.iter().map(|s| s.to_string()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplateOptions {
    /// Ion sequence inside 5-pulse boxes, e.g. "LRLRL".
    pub order5: String,
    pub order2: String,
    /// Pulses with |θ| below this many π are dropped.
    pub prune_threshold: f64,
}

impl Default for TemplateOptions {
    fn default() -> Self {
        Self { order5: "LRLRL".into(), order2: "LR".into(), prune_threshold: DEFAULT_PRUNE_THRESHOLD }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub label: String,
    /// (left, right) ion pair.
    pub ions: [usize; 2],
    pub slots: Vec<usize>,
    pub order: Vec<Side>,
}

impl Block {
    pub fn pulse_ions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.slots.iter().zip(&self.order).map(|(&slot, side)| {
            let ion = match side {
                Side::L => self.ions[0],
                Side::R => self.ions[1],
            };
            (ion, slot)
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircuitTemplate {
    pub n_qubits: usize,
    pub blocks: Vec<Block>,
    pub slot_sharing: BTreeMap<String, Vec<usize>>,
    pub n_parameters: usize,
    pub prune_threshold: f64,
}

pub fn default_template(n_qubits: usize) -> Result<CircuitTemplate> {
    template_with_options(n_qubits, &TemplateOptions::default())
}

/// Edge box A on (0,1), bulk boxes on (k,k+1) for k = 1..N−2 alternating
/// labels B and C, edge box D on (N−2,N−1). Slots: A 0–1, B 2–6, C 7–11, D 12–13.
pub fn template_with_options(n_qubits: usize, opts: &TemplateOptions) -> Result<CircuitTemplate> {
    if n_qubits < 4 || n_qubits % 2 != 0 {
        return Err(Error::Config(format!("template needs an even qubit count ≥ 4, got {n_qubits}")));
    }
    let o5 = parse_order(&opts.order5)?;
    let o2 = parse_order(&opts.order2)?;
    if o5.len() != 5 || o2.len() != 2 {
        return Err(Error::Config("orderings must have 5 and 2 entries".into()));
    }
    if !(opts.prune_threshold >= 0.0 && opts.prune_threshold.is_finite()) {
        return Err(Error::Config("prune threshold must be finite and non-negative".into()));
    }
    let slot_sharing: BTreeMap<String, Vec<usize>> = [
        ("A".to_string(), vec![0, 1]),
        ("B".to_string(), (2..7).collect()),
        ("C".to_string(), (7..12).collect()),
        ("D".to_string(), vec![12, 13]),
    ]
    .into_iter()
    .collect();
    let mk = |label: &str, l: usize, order: &[Side]| Block {
        label: label.to_string(),
        ions: [l, l + 1],
        slots: slot_sharing[label].clone(),
        order: order.to_vec(),
    };
    let mut blocks = vec![mk("A", 0, &o2)];
    for (i, k) in (1..n_qubits - 1).enumerate() {
        blocks.push(mk(if i % 2 == 0 { "B" } else { "C" }, k, &o5));
    }
    blocks.push(mk("D", n_qubits - 2, &o2));
    Ok(CircuitTemplate { n_qubits, blocks, slot_sharing, n_parameters: 14, prune_threshold: opts.prune_threshold })
}

impl CircuitTemplate {
    /// (ion, slot) for every pulse in execution order.
    pub fn pulse_layout(&self) -> Vec<(usize, usize)> {
        self.blocks.iter().flat_map(|b| b.pulse_ions()).collect()
    }

    pub fn n_pulses(&self) -> usize {
        self.blocks.iter().map(|b| b.slots.len()).sum()
    }

    /// Overrides the within-box ordering of one block.
    pub fn set_block_order(&mut self, block: usize, order: Vec<Side>) -> Result<()> {
        let b = self
            .blocks
            .get_mut(block)
            .ok_or_else(|| Error::Config(format!("no block {block}")))?;
        if order.len() != b.slots.len() {
            return Err(Error::Config(format!(
                "block {} needs {} ordering entries, got {}",
                b.label,
                b.slots.len(),
                order.len()
            )));
        }
        b.order = order;
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        json!({
            "n_qubits": self.n_qubits,
            "n_parameters": self.n_parameters,
            "prune_threshold_pi": self.prune_threshold,
            "blocks": self.blocks.iter().map(|b| json!({
                "label": b.label,
                "ions": b.ions,
                "slots": b.slots,
                "order": order_string(&b.order),
            })).collect::<Vec<_>>(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranspiledCircuit {
    pub n_qubits: usize,
    pub pulses: Vec<SidebandPulse>,
    /// Parameter slot feeding each surviving pulse.
    pub slots: Vec<usize>,
    /// (slot, angle in units of π) for every pruned pulse.
    pub dropped: Vec<(usize, f64)>,
}

impl TranspiledCircuit {
    pub fn empty(n_qubits: usize) -> Self {
        Self { n_qubits, pulses: Vec::new(), slots: Vec::new(), dropped: Vec::new() }
    }

    pub fn to_json(&self) -> Value {
        json!({
            "n_qubits": self.n_qubits,
            "pulses": self.pulses.iter().zip(&self.slots).map(|(p, s)| json!({
                "ion": p.ion,
                "slot": s,
                "angle_pi": p.theta / PI,
                "phase": p.phase,
            })).collect::<Vec<_>>(),
            "dropped": self.dropped.iter().map(|(s, a)| json!({"slot": s, "angle_pi": a})).collect::<Vec<_>>(),
        })
    }
}

/// Expands slot sharing; `theta` is in units of π.
pub fn transpile(template: &CircuitTemplate, theta: &[f64]) -> Result<TranspiledCircuit> {
    if theta.len() != template.n_parameters {
        return Err(Error::Dimension(format!(
            "template has {} parameters, got {}",
            template.n_parameters,
            theta.len()
        )));
    }
    if let Some(bad) = theta.iter().find(|t| !t.is_finite()) {
        return Err(Error::Validation(format!("non-finite angle {bad}")));
    }
    let mut out = TranspiledCircuit::empty(template.n_qubits);
    for (ion, slot) in template.pulse_layout() {
        let angle = theta[slot];
        if angle.abs() < template.prune_threshold {
            out.dropped.push((slot, angle));
        } else {
            out.pulses.push(SidebandPulse::new(ion, angle * PI));
            out.slots.push(slot);
        }
    }
    Ok(out)
}

pub fn run_circuit(initial: &HybridState, circuit: &TranspiledCircuit) -> Result<HybridState> {
    if circuit.n_qubits != initial.n_qubits() {
        return Err(Error::Dimension(format!(
            "circuit for {} qubits applied to {}",
            circuit.n_qubits,
            initial.n_qubits()
        )));
    }
    let mut state = initial.clone();
    for p in &circuit.pulses {
        apply_sideband_mut(&mut state, p)?;
    }
    Ok(state)
}
