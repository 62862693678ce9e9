//! Rotating-stencil pattern search for noisy costs, with a Gaussian-process
//! surrogate that only orders poll points and OCBA-split resampling of close
//! comparisons.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{Error, Result};

const ORTHO_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lengthscale {
    MedianHeuristic,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpConfig {
    pub enabled: bool,
    pub lengthscale: Lengthscale,
    /// Added to every per-point noise variance.
    pub noise_floor: f64,
    /// Prior mean used when there are no observations.
    pub prior_mean: f64,
    /// Only the observations nearest to the stencil centre enter the fit.
    pub nearest: usize,
    /// Refresh the median-heuristic lengthscale after this many new observations.
    pub refresh_every: usize,
    /// Minimum observations before the surrogate orders poll points.
    pub min_observations: usize,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            lengthscale: Lengthscale::MedianHeuristic,
            noise_floor: 1e-8,
            prior_mean: 0.0,
            nearest: 40,
            refresh_every: 25,
            min_observations: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Units of the parameters (π for circuit angles).
    pub initial_stencil: f64,
    pub expand_factor: f64,
    pub shrink_factor: f64,
    pub min_stencil: f64,
    pub max_stencil: Option<f64>,
    /// Cost calls, resamples included.
    pub max_evaluations: usize,
    /// Optional shot budget; 0 means unlimited.
    pub max_shots: u64,
    /// Shots for a fresh evaluation (0 for exact costs).
    pub shots_per_eval: u64,
    /// Extra shots spread by OCBA over a close comparison.
    pub ocba_batch: u64,
    /// Resample when |ΔE| < trigger · (σ_poll + σ_incumbent).
    pub resample_trigger: f64,
    /// Resampling rounds allowed per comparison.
    pub max_resample_rounds: usize,
    pub random_orientation: bool,
    pub gp: GpConfig,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            initial_stencil: 0.25,
            expand_factor: 2.0,
            shrink_factor: 0.5,
            min_stencil: 0.01,
            max_stencil: None,
            max_evaluations: 3000,
            max_shots: 0,
            shots_per_eval: 0,
            ocba_batch: 1000,
            resample_trigger: 2.0,
            max_resample_rounds: 2,
            random_orientation: true,
            gp: GpConfig::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let positive = [self.initial_stencil, self.min_stencil, self.resample_trigger]
            .iter()
            .all(|x| *x > 0.0 && x.is_finite());
        if !positive {
            return Err(Error::Config("stencil sizes and resample trigger must be positive".into()));
        }
        if !(self.expand_factor > 1.0) || !(self.shrink_factor > 0.0 && self.shrink_factor < 1.0) {
            return Err(Error::Config("need expand_factor > 1 and 0 < shrink_factor < 1".into()));
        }
        if self.max_stencil.is_some_and(|m| m < self.initial_stencil) {
            return Err(Error::Config("max_stencil below initial_stencil".into()));
        }
        if self.max_evaluations > 0 && self.max_evaluations < dim + 1 {
            return Err(Error::Config(format!("max_evaluations must be 0 or ≥ {}", dim + 1)));
        }
        if self.gp.noise_floor < 0.0 || self.gp.nearest == 0 || self.gp.refresh_every == 0 {
            return Err(Error::Config("invalid surrogate settings".into()));
        }
        if let Lengthscale::Fixed(l) = self.gp.lengthscale {
            if !(l > 0.0) {
                return Err(Error::Config("GP lengthscale must be positive".into()));
            }
        }
        Ok(())
    }
}

fn orthonormality_defect(b: &DMatrix<f64>) -> f64 {
    let g = b.transpose() * b - DMatrix::identity(b.ncols(), b.ncols());
    g.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `2d` poll points `c ± Δ bᵢ`, ordered `+b₁, −b₁, +b₂, …`.
pub fn make_stencil(center: &[f64], size: f64, orientation: &DMatrix<f64>) -> Result<Vec<Vec<f64>>> {
    let d = center.len();
    if orientation.nrows() != d || orientation.ncols() != d {
        return Err(Error::Dimension(format!("orientation must be {d}x{d}")));
    }
    let defect = orthonormality_defect(orientation);
    if defect > ORTHO_TOL {
        return Err(Error::Validation(format!("orientation not orthonormal (defect {defect:.2e})")));
    }
    let mut out = Vec::with_capacity(2 * d);
    for i in 0..d {
        for sign in [1.0, -1.0] {
            out.push(center.iter().enumerate().map(|(k, c)| c + sign * size * orientation[(k, i)]).collect());
        }
    }
    Ok(out)
}

/// New orthonormal basis whose first vector is `v/‖v‖`.
pub fn rotate(orientation: &DMatrix<f64>, v: &[f64]) -> Result<DMatrix<f64>> {
    let d = v.len();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Validation("cannot align stencil with a zero step".into()));
    }
    let mut m = DMatrix::zeros(d, d + 1);
    for k in 0..d {
        m[(k, 0)] = v[k] / norm;
    }
    m.view_mut((0, 1), (d, d)).copy_from(orientation);
    let mut q = m.qr().q();
    if (0..d).map(|k| q[(k, 0)] * v[k]).sum::<f64>() < 0.0 {
        q.column_mut(0).neg_mut();
    }
    Ok(q)
}

pub fn random_orientation(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    g.qr().q()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub theta: Vec<f64>,
    pub value: f64,
    pub sigma: f64,
}

/// Squared-exponential GP with per-point noise.
#[derive(Clone, Debug)]
pub struct GpModel {
    xs: Vec<Vec<f64>>,
    alpha: DVector<f64>,
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    lengthscale: f64,
    signal_var: f64,
    mean: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Median pairwise distance; 1 when undefined.
pub fn median_heuristic(xs: &[Vec<f64>]) -> f64 {
    let mut d: Vec<f64> = Vec::new();
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            d.push(sq_dist(&xs[i], &xs[j]).sqrt());
        }
    }
    d.retain(|x| *x > 0.0);
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    d[d.len() / 2]
}

pub fn gp_fit(obs: &[Observation], cfg: &GpConfig) -> Result<GpModel> {
    let lengthscale = match cfg.lengthscale {
        Lengthscale::Fixed(l) => l,
        Lengthscale::MedianHeuristic => median_heuristic(&obs.iter().map(|o| o.theta.clone()).collect::<Vec<_>>()),
    };
    if obs.is_empty() {
        return Ok(GpModel { xs: vec![], alpha: DVector::zeros(0), chol: None, lengthscale, signal_var: 1.0, mean: cfg.prior_mean });
    }
    let n = obs.len();
    let mean = obs.iter().map(|o| o.value).sum::<f64>() / n as f64;
    let var = obs.iter().map(|o| (o.value - mean).powi(2)).sum::<f64>() / n as f64;
    let signal_var = if var > 0.0 { var } else { 1.0 };
    let xs: Vec<Vec<f64>> = obs.iter().map(|o| o.theta.clone()).collect();
    let k = DMatrix::from_fn(n, n, |i, j| {
        let base = signal_var * (-sq_dist(&xs[i], &xs[j]) / (2.0 * lengthscale * lengthscale)).exp();
        if i == j {
            base + obs[i].sigma.powi(2) + cfg.noise_floor
        } else {
            base
        }
    });
    let y = DVector::from_iterator(n, obs.iter().map(|o| o.value - mean));
    let mut jitter = 0.0;
    loop {
        let kj = &k + DMatrix::identity(n, n) * jitter;
        if let Some(chol) = kj.cholesky() {
            let alpha = chol.solve(&y);
            return Ok(GpModel { xs, alpha, chol: Some(chol), lengthscale, signal_var, mean });
        }
        jitter = if jitter == 0.0 { 1e-10 * signal_var } else { jitter * 10.0 };
        if jitter > 1e-2 * signal_var {
            return Err(Error::Numerical("GP kernel matrix is ill-conditioned".into()));
        }
    }
}

impl GpModel {
    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    fn kvec(&self, theta: &[f64]) -> DVector<f64> {
        let l2 = 2.0 * self.lengthscale * self.lengthscale;
        DVector::from_iterator(self.xs.len(), self.xs.iter().map(|x| self.signal_var * (-sq_dist(x, theta) / l2).exp()))
    }
}

/// Posterior mean and variance at `theta`.
pub fn gp_predict(model: &GpModel, theta: &[f64]) -> (f64, f64) {
    match &model.chol {
        None => (model.mean, model.signal_var),
        Some(chol) => {
            let k = model.kvec(theta);
            let mean = model.mean + k.dot(&model.alpha);
            let v = chol.solve(&k);
            (mean, (model.signal_var - k.dot(&v)).max(0.0))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub mean: f64,
    /// Per-sample standard deviation.
    pub sigma: f64,
    pub n: u64,
}

/// Splits `extra` samples by the OCBA ratios: competitors `∝ (σᵢ/δᵢ)²`, the
/// best `σ_b √(Σ Nᵢ²/σᵢ²)`. Candidates tied with the best (gap ≤ 1e-12 relative)
/// share the budget equally; so do all candidates when every σ is zero.
/// Rounded by largest remainder.
pub fn ocba_allocate(cands: &[Candidate], extra: u64) -> Result<Vec<u64>> {
    if cands.len() < 2 {
        return Err(Error::Validation("OCBA needs at least two candidates".into()));
    }
    if cands.iter().any(|c| !c.mean.is_finite() || !(c.sigma >= 0.0)) {
        return Err(Error::Validation("candidate means must be finite and σ ≥ 0".into()));
    }
    let b = (0..cands.len()).min_by(|&i, &j| cands[i].mean.total_cmp(&cands[j].mean)).unwrap();
    let tol = 1e-12 * cands[b].mean.abs().max(1.0);
    let tied: Vec<usize> = (0..cands.len()).filter(|&i| cands[i].mean - cands[b].mean <= tol).collect();
    let mut weights = vec![0.0; cands.len()];
    if tied.len() > 1 {
        for &i in &tied {
            weights[i] = 1.0;
        }
    } else {
        let mut sum_sq = 0.0;
        for (i, c) in cands.iter().enumerate() {
            if i == b {
                continue;
            }
            let delta = c.mean - cands[b].mean;
            weights[i] = (c.sigma / delta).powi(2);
            if c.sigma > 0.0 {
                sum_sq += weights[i].powi(2) / c.sigma.powi(2);
            }
        }
        weights[b] = cands[b].sigma * sum_sq.sqrt();
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        weights = vec![1.0; cands.len()];
    }
    Ok(largest_remainder(&weights, extra))
}

fn largest_remainder(weights: &[f64], total: u64) -> Vec<u64> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut out: Vec<u64> = exact.iter().map(|x| x.floor() as u64).collect();
    let mut left = total - out.iter().sum::<u64>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&i, &j| (exact[j] - exact[j].floor()).total_cmp(&(exact[i] - exact[i].floor())).then(i.cmp(&j)));
    for i in order.into_iter().cycle() {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out
}

/// One cost evaluation: estimate, standard error of the estimate, shots spent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostSample {
    pub value: f64,
    pub sigma: f64,
    pub shots: u64,
}

impl CostSample {
    pub fn exact(value: f64) -> Self {
        Self { value, sigma: 0.0, shots: 0 }
    }

    /// Shot-weighted pooling of two independent estimates.
    pub fn pool(&self, other: &CostSample) -> CostSample {
        let (n1, n2) = (self.shots as f64, other.shots as f64);
        if n1 + n2 == 0.0 {
            return *other;
        }
        let n = n1 + n2;
        CostSample {
            value: (n1 * self.value + n2 * other.value) / n,
            sigma: ((n1 * self.sigma).powi(2) + (n2 * other.sigma).powi(2)).sqrt() / n,
            shots: self.shots + other.shots,
        }
    }

    fn per_shot_sigma(&self) -> f64 {
        self.sigma * (self.shots.max(1) as f64).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Move,
    Expand,
    Shrink,
    Resample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PollRecord {
    pub theta: Vec<f64>,
    pub value: Option<f64>,
    pub sigma: Option<f64>,
    pub shots: u64,
    pub predicted: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Best {
    pub theta: Vec<f64>,
    pub value: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub center: Vec<f64>,
    pub stencil_size: f64,
    pub polled: Vec<PollRecord>,
    pub decisions: Vec<Decision>,
    pub best: Best,
    pub evaluations: usize,
    pub shots: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerTrace {
    pub initial: PollRecord,
    pub iterations: Vec<IterationRecord>,
    pub best: Best,
    pub evaluations: usize,
    pub shots: u64,
    pub termination: String,
}

impl OptimizerTrace {
    /// Best energy after each iteration, starting with the initial point.
    pub fn best_history(&self) -> Vec<f64> {
        std::iter::once(self.initial.value.unwrap_or(f64::INFINITY))
            .chain(self.iterations.iter().map(|it| it.best.value))
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for it in &self.iterations {
            out.push_str(&serde_json::to_string(it).expect("trace serialises"));
            out.push('\n');
        }
        out
    }
}

struct Search<'a, F> {
    cost: F,
    cfg: &'a OptimizerConfig,
    seed: u64,
    evaluations: usize,
    shots: u64,
    observations: Vec<Observation>,
    lengthscale: Option<f64>,
    lengthscale_at: usize,
}

impl<F> Search<'_, F>
where
    F: FnMut(&[f64], u64, u64) -> Result<CostSample>,
{
    fn budget_left(&self) -> bool {
        self.evaluations < self.cfg.max_evaluations && (self.cfg.max_shots == 0 || self.shots < self.cfg.max_shots)
    }

    fn call(&mut self, theta: &[f64], shots: u64) -> Result<CostSample> {
        let seed = derive_seed(self.seed, 1 + self.evaluations as u64);
        self.evaluations += 1;
        let r = (self.cost)(theta, shots, seed);
        if let Ok(s) = &r {
            self.shots += s.shots;
            if !s.value.is_finite() {
                return Err(Error::Numerical("cost returned a non-finite value".into()));
            }
        }
        r
    }

    fn observe(&mut self, theta: &[f64], s: &CostSample) {
        self.observations.push(Observation { theta: theta.to_vec(), value: s.value, sigma: s.sigma });
    }

    /// Surrogate predictions for the poll points, if the GP is active.
    fn predictions(&mut self, center: &[f64], points: &[Vec<f64>]) -> Option<Vec<f64>> {
        let gp = &self.cfg.gp;
        if !gp.enabled || self.observations.len() < gp.min_observations {
            return None;
        }
        let mut idx: Vec<usize> = (0..self.observations.len()).collect();
        idx.sort_by(|&a, &b| {
            sq_dist(&self.observations[a].theta, center)
                .total_cmp(&sq_dist(&self.observations[b].theta, center))
                .then(a.cmp(&b))
        });
        idx.truncate(gp.nearest);
        let local: Vec<Observation> = idx.iter().map(|&i| self.observations[i].clone()).collect();
        let lengthscale = match gp.lengthscale {
            Lengthscale::Fixed(l) => l,
            Lengthscale::MedianHeuristic => {
                let stale = self.lengthscale.is_none() || self.observations.len() >= self.lengthscale_at + gp.refresh_every;
                if stale {
                    let xs: Vec<Vec<f64>> = local.iter().map(|o| o.theta.clone()).collect();
                    self.lengthscale = Some(median_heuristic(&xs));
                    self.lengthscale_at = self.observations.len();
                }
                self.lengthscale.unwrap()
            }
        };
        let cfg = GpConfig { lengthscale: Lengthscale::Fixed(lengthscale), ..gp.clone() };
        let model = gp_fit(&local, &cfg).ok()?;
        Some(points.iter().map(|p| gp_predict(&model, p).0).collect())
    }
}

/// Minimises `cost(θ, shots, seed)` from `theta0`.
///
/// Each iteration polls the stencil opportunistically (surrogate order when
/// enabled) and moves to the first point with a measured improvement; the
/// stencil then expands and is rotated so its first direction follows the
/// move. Without an improvement it shrinks. When the best poll and the
/// incumbent are within `resample_trigger · (σ₁ + σ₂)`, both are resampled
/// with an OCBA split of `ocba_batch` shots before deciding.
pub fn pattern_search<F>(cost: F, theta0: &[f64], cfg: &OptimizerConfig, seed: u64) -> Result<OptimizerTrace>
where
    F: FnMut(&[f64], u64, u64) -> Result<CostSample>,
{
    let d = theta0.len();
    if d == 0 || theta0.iter().any(|x| !x.is_finite()) {
        return Err(Error::Validation("initial parameters must be finite and non-empty".into()));
    }
    cfg.validate(d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
    let mut basis = if cfg.random_orientation { random_orientation(d, &mut rng) } else { DMatrix::identity(d, d) };
    let mut s = Search { cost, cfg, seed, evaluations: 0, shots: 0, observations: vec![], lengthscale: None, lengthscale_at: 0 };

    let mut x = theta0.to_vec();
    let mut initial = PollRecord { theta: x.clone(), value: None, sigma: None, shots: 0, predicted: None, error: None };
    let mut inc = if cfg.max_evaluations == 0 {
        None
    } else {
        match s.call(&x, cfg.shots_per_eval) {
            Ok(v) => {
                initial.value = Some(v.value);
                initial.sigma = Some(v.sigma);
                initial.shots = v.shots;
                s.observe(&x, &v);
                Some(v)
            }
            Err(e) => return Err(e),
        }
    };
    let mut trace = OptimizerTrace {
        initial,
        iterations: vec![],
        best: Best { theta: x.clone(), value: inc.map_or(f64::NAN, |v| v.value), sigma: inc.map_or(f64::NAN, |v| v.sigma) },
        evaluations: s.evaluations,
        shots: s.shots,
        termination: String::new(),
    };
    let mut size = cfg.initial_stencil;
    let mut iteration = 0;
    let termination = loop {
        let Some(mut current) = inc else { break "zero evaluation budget".to_string() };
        if size < cfg.min_stencil {
            break "stencil below minimum".to_string();
        }
        if !s.budget_left() {
            break "evaluation budget exhausted".to_string();
        }
        let mut points = make_stencil(&x, size, &basis)?;
        let preds = s.predictions(&x, &points);
        let mut predicted: Vec<Option<f64>> = vec![None; points.len()];
        if let Some(p) = preds {
            let mut order: Vec<usize> = (0..points.len()).collect();
            order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
            points = order.iter().map(|&i| points[i].clone()).collect();
            predicted = order.iter().map(|&i| Some(p[i])).collect();
        }
        let mut polled = Vec::new();
        let mut decisions = Vec::new();
        let mut moved = None;
        for (p, pred) in points.iter().zip(predicted) {
            if !s.budget_left() {
                break;
            }
            let mut rec = PollRecord { theta: p.clone(), value: None, sigma: None, shots: 0, predicted: pred, error: None };
            let mut sample = match s.call(p, cfg.shots_per_eval) {
                Ok(v) => v,
                Err(e) => {
                    rec.error = Some(e.to_string());
                    polled.push(rec);
                    continue;
                }
            };
            s.observe(p, &sample);
            let mut rounds = 0;
            while sample.value < current.value
                && (sample.sigma > 0.0 || current.sigma > 0.0)
                && current.value - sample.value < cfg.resample_trigger * (sample.sigma + current.sigma)
                && rounds < cfg.max_resample_rounds
                && cfg.ocba_batch > 0
                && s.budget_left()
            {
                rounds += 1;
                decisions.push(Decision::Resample);
                let cands = [
                    Candidate { mean: current.value, sigma: current.per_shot_sigma(), n: current.shots },
                    Candidate { mean: sample.value, sigma: sample.per_shot_sigma(), n: sample.shots },
                ];
                let alloc = ocba_allocate(&cands, cfg.ocba_batch)?;
                if alloc[0] > 0 && s.budget_left() {
                    if let Ok(extra) = s.call(&x, alloc[0]) {
                        current = current.pool(&extra);
                    }
                }
                if alloc[1] > 0 && s.budget_left() {
                    if let Ok(extra) = s.call(p, alloc[1]) {
                        sample = sample.pool(&extra);
                    }
                }
            }
            rec.value = Some(sample.value);
            rec.sigma = Some(sample.sigma);
            rec.shots = sample.shots;
            polled.push(rec);
            if sample.value < current.value {
                moved = Some((p.clone(), sample));
                break;
            }
        }
        match moved {
            Some((p, sample)) => {
                let step: Vec<f64> = p.iter().zip(&x).map(|(a, b)| a - b).collect();
                basis = rotate(&basis, &step)?;
                x = p;
                current = sample;
                size *= cfg.expand_factor;
                if let Some(m) = cfg.max_stencil {
                    size = size.min(m);
                }
                decisions.push(Decision::Move);
                decisions.push(Decision::Expand);
            }
            None => {
                if polled.len() == 2 * d {
                    size *= cfg.shrink_factor;
                    decisions.push(Decision::Shrink);
                }
            }
        }
        inc = Some(current);
        iteration += 1;
        let best = Best { theta: x.clone(), value: current.value, sigma: current.sigma };
        trace.iterations.push(IterationRecord {
            iteration,
            center: x.clone(),
            stencil_size: size,
            polled,
            decisions,
            best: best.clone(),
            evaluations: s.evaluations,
            shots: s.shots,
        });
        trace.best = best;
    };
    trace.evaluations = s.evaluations;
    trace.shots = s.shots;
    trace.termination = termination;
    Ok(trace)
}
