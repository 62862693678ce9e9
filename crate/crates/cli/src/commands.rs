//! Subcommand implementations. Each returns a JSON summary that `main` prints.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sbvqe::derive_seed;
use sbvqe::essh::{energy_of, exact_ground_state, relative_energy_error, ModelSpec};
use sbvqe::hilbert::DensityOperator;
use sbvqe::mbti::{mbti, mbti_from_records, rss_parametric, MBTIResult};
use sbvqe::measurement::{measure_energy, MeasurementRecord};
use sbvqe::noise::NoiseConfig;
use sbvqe::optimizer::OptimizerTrace;
use sbvqe::sideband::TranspiledCircuit;
use sbvqe::tomography::{resample_records, sample_tomography, summarize};
use sbvqe::vqe::{prepare, vqe_run};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Source};
use crate::error::{CliError, CliResult, Context};
use crate::output::{format_theta, parse_theta, read_csv, DensityJson, OutputDir, SweepRow};

/// Command-line overrides applied on top of the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub shots: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub dump_circuit: bool,
    pub save_shots: bool,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.seed = Some(s);
        }
        if let Some(s) = self.shots {
            cfg.measurement.shots_per_basis = s;
        }
        if let Some(d) = &self.out_dir {
            cfg.output.out_dir = d.clone();
        }
        cfg.output.dump_circuit |= self.dump_circuit;
        cfg.output.save_shots |= self.save_shots;
    }
}

/// The central four sites of an `n`-site chain.
pub fn bulk_sites(n: usize) -> CliResult<Vec<usize>> {
    if n < 4 {
        return Err(CliError::Config(format!("bulk invariants need at least 4 sites, got {n}")));
    }
    let c = n / 2;
    Ok((c - 2..c + 2).collect())
}

fn bulk_mbti(rho: &DensityOperator, n: usize) -> CliResult<(MBTIResult, DensityOperator)> {
    let bulk = rho.reduce(&bulk_sites(n)?).context("bulk reduction")?;
    Ok((mbti(&bulk).context("bulk invariants")?, bulk))
}

pub fn cmd_exact_gs(cfg: &ExperimentConfig) -> CliResult<Value> {
    cfg.validate(false)?;
    let spec = exact_ground_state(&cfg.model).context("exact ground state")?;
    let (m, _) = bulk_mbti(&spec.density(), cfg.model.n)?;
    let report = json!({
        "model": cfg.model,
        "e0": spec.ground_energy(),
        "gap": spec.degeneracy_gap,
        "ground_sector": spec.ground_sector,
        "bulk_sites": bulk_sites(cfg.model.n)?,
        "z_r": m.z_r,
        "z_t": m.z_t,
        "purity_i1": m.purity_i1,
        "purity_i2": m.purity_i2,
    });
    let mut out = OutputDir::create(&cfg.output.out_dir)?;
    out.write_json("exact.json", &report)?;
    out.finish("exact-gs", cfg)?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
struct ShotLine<'a> {
    t_minus: f64,
    kind: &'a str,
    record: &'a MeasurementRecord,
}

struct PointResult {
    t_minus: f64,
    rows: Vec<SweepRow>,
    trace: Option<OptimizerTrace>,
    energy_records: Vec<MeasurementRecord>,
    tomography_records: Vec<MeasurementRecord>,
    densities: Vec<DensityJson>,
    circuit: Option<TranspiledCircuit>,
    summary: Value,
}

fn empty_row(model: &ModelSpec, source: Source) -> SweepRow {
    SweepRow {
        t_minus: model.t_minus,
        delta: model.delta,
        source: source.label().into(),
        z_r: None,
        z_r_err: None,
        z_t: None,
        z_t_err: None,
        energy: None,
        energy_err: None,
        rel_error: None,
        e_exact: None,
        z_r_exact: None,
        z_t_exact: None,
        theta_opt: String::new(),
        error: String::new(),
    }
}

/// Invariants from simulated tomography, with bootstrap standard deviations.
fn tomography_mbti(
    bulk: &DensityOperator,
    shots: u64,
    resamples: usize,
    seed: u64,
) -> CliResult<(MBTIResult, Option<(f64, f64)>, DensityOperator, Vec<MeasurementRecord>)> {
    let records = sample_tomography(bulk, shots, derive_seed(seed, 0)).context("tomography sampling")?;
    let (m, rho) = mbti_from_records(&records, None).context("tomography reconstruction")?;
    if resamples == 0 {
        return Ok((m, None, rho, records));
    }
    let boot_seed = derive_seed(seed, 1);
    let draws: Vec<Option<MBTIResult>> = (0..resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(boot_seed);
            rng.set_stream(b as u64);
            resample_records(&records, &mut rng)
                .and_then(|r| mbti_from_records(&r, Some(rho.clone())))
                .ok()
                .map(|(m, _)| m)
                .filter(|m| m.z_r.is_finite() && m.z_t.is_finite())
        })
        .collect();
    let failures = draws.iter().filter(|d| d.is_none()).count();
    let ok: Vec<MBTIResult> = draws.into_iter().flatten().collect();
    let zr = summarize(ok.iter().map(|m| m.z_r).collect(), failures).context("bootstrap")?;
    let zt = summarize(ok.iter().map(|m| m.z_t).collect(), failures).context("bootstrap")?;
    Ok((m, Some((zr.std, zt.std)), rho, records))
}

fn run_point(
    cfg: &ExperimentConfig,
    model: ModelSpec,
    sources: &[Source],
    theta_fixed: Option<Vec<f64>>,
    seed: u64,
) -> CliResult<PointResult> {
    let n = model.n;
    let exact = exact_ground_state(&model).context("exact ground state")?;
    let e0 = exact.ground_energy();
    let (m_exact, bulk_exact) = bulk_mbti(&exact.density(), n)?;
    let mut rows = vec![];
    let mut densities = vec![];
    let with_refs = |mut r: SweepRow| {
        r.e_exact = Some(e0);
        r.z_r_exact = Some(m_exact.z_r);
        r.z_t_exact = Some(m_exact.z_t);
        r
    };
    if sources.contains(&Source::Exact) {
        let mut r = empty_row(&model, Source::Exact);
        r.z_r = Some(m_exact.z_r);
        r.z_t = Some(m_exact.z_t);
        r.energy = Some(e0);
        r.rel_error = Some(0.0);
        rows.push(with_refs(r));
        densities.push(DensityJson::new(format!("exact t_minus={}", model.t_minus), &bulk_exact));
    }
    let mut summary = json!({"t_minus": model.t_minus, "delta": model.delta, "e_exact": e0, "z_r_exact": m_exact.z_r, "z_t_exact": m_exact.z_t});
    let needs_circuit = sources.iter().any(|s| *s != Source::Exact);
    if !needs_circuit {
        return Ok(PointResult {
            t_minus: model.t_minus,
            rows,
            trace: None,
            energy_records: vec![],
            tomography_records: vec![],
            densities,
            circuit: None,
            summary,
        });
    }

    let template = cfg.template()?;
    let settings = cfg.vqe_settings();
    let (theta, circuit, rho, trace) = match theta_fixed {
        Some(theta) => {
            let (circuit, state) =
                prepare(&template, &cfg.noise, &theta, &settings, derive_seed(seed, 4)).context("circuit simulation")?;
            (theta, circuit, state.qubit_density(), None)
        }
        None => {
            let r = vqe_run(&model, &template, &cfg.noise, &cfg.optimizer(), &cfg.theta0(), &settings, derive_seed(seed, 0))
                .context("variational optimisation")?;
            (r.theta_opt, r.circuit, r.final_state, Some(r.trace))
        }
    };
    let e_direct = energy_of(&rho, &model).context("energy")?;
    let shots = cfg.measurement.shots_per_basis;
    let (energy, energy_err, energy_records) = if shots > 0 {
        let (est, recs) = measure_energy(&rho, &model, shots, derive_seed(seed, 1)).context("energy sampling")?;
        (est.value, Some(est.std_error), recs)
    } else {
        (e_direct, None, vec![])
    };
    let rel = relative_energy_error(energy, e0).context("relative error")?;
    let theta_str = format_theta(&theta);
    let (m_sim, bulk) = bulk_mbti(&rho, n)?;
    if sources.contains(&Source::CircuitSim) {
        let mut r = empty_row(&model, Source::CircuitSim);
        r.z_r = Some(m_sim.z_r);
        r.z_t = Some(m_sim.z_t);
        r.energy = Some(energy);
        r.energy_err = energy_err;
        r.rel_error = Some(rel);
        r.theta_opt = theta_str.clone();
        rows.push(with_refs(r));
        densities.push(DensityJson::new(format!("circuit-sim t_minus={}", model.t_minus), &bulk));
    }
    let mut tomography_records = vec![];
    if sources.contains(&Source::Tomography) {
        let (m, errs, rho_rec, recs) =
            tomography_mbti(&bulk, cfg.measurement.tomography_shots, cfg.measurement.bootstrap, derive_seed(seed, 2))?;
        let mut r = empty_row(&model, Source::Tomography);
        r.z_r = Some(m.z_r);
        r.z_t = Some(m.z_t);
        r.z_r_err = errs.map(|e| e.0);
        r.z_t_err = errs.map(|e| e.1);
        r.energy = Some(energy);
        r.energy_err = energy_err;
        r.rel_error = Some(rel);
        r.theta_opt = theta_str.clone();
        rows.push(with_refs(r));
        densities.push(DensityJson::new(format!("tomography t_minus={}", model.t_minus), &rho_rec));
        summary["z_r_tomography"] = json!(m.z_r);
        summary["z_t_tomography"] = json!(m.z_t);
        summary["z_r_tomography_err"] = json!(errs.map(|e| e.0));
        tomography_records = recs;
    }
    summary["theta_opt"] = json!(theta);
    summary["energy"] = json!(energy);
    summary["energy_err"] = json!(energy_err);
    summary["energy_exact_expectation"] = json!(e_direct);
    summary["rel_error"] = json!(rel);
    summary["z_r"] = json!(m_sim.z_r);
    summary["z_t"] = json!(m_sim.z_t);
    if let Some(t) = &trace {
        summary["evaluations"] = json!(t.evaluations);
        summary["shots"] = json!(t.shots);
        summary["termination"] = json!(t.termination);
    }
    Ok(PointResult {
        t_minus: model.t_minus,
        rows,
        trace,
        energy_records,
        tomography_records,
        densities,
        circuit: Some(circuit),
        summary,
    })
}

fn check_sources(cfg: &ExperimentConfig, sources: &[Source]) -> CliResult<()> {
    if sources.contains(&Source::Tomography) && cfg.measurement.tomography_shots == 0 {
        return Err(CliError::Config("tomography source needs measurement.tomography_shots > 0".into()));
    }
    Ok(())
}

fn trace_lines(points: &[&PointResult], tagged: bool) -> Vec<Value> {
    let mut lines = vec![];
    for p in points {
        if let Some(t) = &p.trace {
            for it in &t.iterations {
                let v = serde_json::to_value(it).expect("trace serialises");
                lines.push(if tagged { json!({"t_minus": p.t_minus, "iteration": v}) } else { v });
            }
        }
    }
    lines
}

fn shot_lines<'a>(points: &[&'a PointResult]) -> Vec<ShotLine<'a>> {
    let mut out = vec![];
    for p in points {
        out.extend(p.energy_records.iter().map(|r| ShotLine { t_minus: p.t_minus, kind: "energy", record: r }));
        out.extend(p.tomography_records.iter().map(|r| ShotLine { t_minus: p.t_minus, kind: "tomography", record: r }));
    }
    out
}

pub fn cmd_vqe(cfg: &ExperimentConfig) -> CliResult<Value> {
    cfg.validate(cfg.is_stochastic())?;
    let mut sources = vec![Source::Exact, Source::CircuitSim];
    if cfg.measurement.tomography_shots > 0 {
        sources.push(Source::Tomography);
    }
    let seed = cfg.seed();
    let p = run_point(cfg, cfg.model, &sources, None, seed)?;
    let mut out = OutputDir::create(&cfg.output.out_dir)?;
    out.write_json("result.json", &p.summary)?;
    out.write_csv("sweep.csv", &p.rows)?;
    out.write_jsonl("trace.jsonl", &trace_lines(&[&p], false))?;
    if cfg.output.save_shots {
        out.write_jsonl("shots.jsonl", &shot_lines(&[&p]))?;
    }
    let rho = p.densities.last().expect("circuit state present");
    out.write_json("rho_bulk.json", rho)?;
    if cfg.output.dump_circuit {
        out.write_json("circuit.json", &p.circuit.as_ref().expect("circuit present").to_json())?;
    }
    out.finish("vqe", cfg)?;
    Ok(p.summary)
}

fn thetas_from(path: &Path) -> CliResult<Vec<(f64, Vec<f64>)>> {
    let rows: Vec<SweepRow> = read_csv(path)?;
    let mut out: Vec<(f64, Vec<f64>)> = vec![];
    for r in rows {
        if r.theta_opt.is_empty() || out.iter().any(|(t, _)| (*t - r.t_minus).abs() < 1e-9) {
            continue;
        }
        out.push((r.t_minus, parse_theta(&r.theta_opt)?));
    }
    Ok(out)
}

pub fn cmd_sweep(cfg: &ExperimentConfig) -> CliResult<Value> {
    let sources = cfg.sweep.sources.clone();
    // exact-only sweeps never touch the optimizer or a sampler
    let simulated = sources.iter().any(|s| *s != Source::Exact);
    cfg.validate(simulated && (cfg.is_stochastic() && cfg.sweep.theta_from.is_none() || cfg.measurement.tomography_shots > 0))?;
    check_sources(cfg, &sources)?;
    if cfg.sweep.t_minus.is_empty() {
        return Err(CliError::Config("sweep.t_minus is empty".into()));
    }
    let fixed = match &cfg.sweep.theta_from {
        Some(p) => Some(thetas_from(p)?),
        None => None,
    };
    let delta = cfg.sweep.delta.unwrap_or(cfg.model.delta);
    let seed = cfg.seed();
    let results: Vec<CliResult<PointResult>> = cfg
        .sweep
        .t_minus
        .par_iter()
        .enumerate()
        .map(|(i, &t)| {
            let model = ModelSpec { t_minus: t, delta, ..cfg.model };
            let theta = match &fixed {
                Some(list) => Some(
                    list.iter()
                        .find(|(tm, _)| (tm - t).abs() < 1e-9)
                        .map(|(_, th)| th.clone())
                        .ok_or_else(|| CliError::Config(format!("no θ for t_minus = {t} in theta_from file")))?,
                ),
                None => None,
            };
            run_point(cfg, model, &sources, theta, derive_seed(seed, i as u64))
        })
        .collect();
    let mut ok = vec![];
    let mut rows = vec![];
    let mut failures = vec![];
    for (r, &t) in results.into_iter().zip(&cfg.sweep.t_minus) {
        match r {
            Ok(p) => {
                rows.extend(p.rows.iter().cloned());
                ok.push(p);
            }
            Err(e) if e.exit_code() == 2 => return Err(e),
            Err(e) => {
                let mut row = empty_row(&ModelSpec { t_minus: t, delta, ..cfg.model }, Source::CircuitSim);
                row.error = e.to_string();
                failures.push(json!({"t_minus": t, "error": e.to_string()}));
                rows.push(row);
            }
        }
    }
    let refs: Vec<&PointResult> = ok.iter().collect();
    let mut out = OutputDir::create(&cfg.output.out_dir)?;
    out.write_csv("sweep.csv", &rows)?;
    let traces = trace_lines(&refs, true);
    if !traces.is_empty() {
        out.write_jsonl("trace.jsonl", &traces)?;
    }
    if cfg.output.save_shots {
        out.write_jsonl("shots.jsonl", &shot_lines(&refs))?;
    }
    let densities: Vec<&DensityJson> = refs.iter().flat_map(|p| &p.densities).collect();
    out.write_json("rho_bulk.json", &densities)?;
    if cfg.output.dump_circuit {
        let circuits: Vec<Value> = refs
            .iter()
            .filter_map(|p| p.circuit.as_ref().map(|c| json!({"t_minus": p.t_minus, "circuit": c.to_json()})))
            .collect();
        out.write_json("circuit.json", &circuits)?;
    }
    out.finish("sweep", cfg)?;
    Ok(json!({
        "points": refs.iter().map(|p| p.summary.clone()).collect::<Vec<_>>(),
        "failures": failures,
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct InterpRow {
    pub alpha: f64,
    pub nbar: f64,
    pub energy: f64,
    pub rel_error: f64,
    pub z_r: f64,
    pub z_t: f64,
    pub top_population: f64,
}

pub fn cmd_interp(cfg: &ExperimentConfig) -> CliResult<Value> {
    cfg.validate(matches!(cfg.noise.mode, sbvqe::noise::NoiseMode::Trajectories { .. }))?;
    let ic = &cfg.interp;
    let load = |p: &Option<crate::config::ParamSource>, name: &str| {
        p.as_ref().ok_or_else(|| CliError::Config(format!("interp.{name} is required")))?.load(Path::new(""))
    };
    let a = load(&ic.theta_a, "theta_a")?;
    let b = load(&ic.theta_b, "theta_b")?;
    if a.len() != b.len() || a.len() != 14 {
        return Err(CliError::Config(format!("interp endpoints need 14 angles each, got {} and {}", a.len(), b.len())));
    }
    if ic.alphas.is_empty() || ic.nbar.is_empty() {
        return Err(CliError::Config("interp.alphas and interp.nbar must be non-empty".into()));
    }
    let e0 = exact_ground_state(&cfg.model).context("exact ground state")?.ground_energy();
    let template = cfg.template()?;
    let settings = cfg.vqe_settings();
    let jobs: Vec<(usize, f64, f64)> = ic
        .alphas
        .iter()
        .flat_map(|&al| ic.nbar.iter().map(move |&nb| (al, nb)))
        .enumerate()
        .map(|(i, (al, nb))| (i, al, nb))
        .collect();
    let rows: Vec<CliResult<InterpRow>> = jobs
        .par_iter()
        .map(|&(i, alpha, nbar)| {
            let theta: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (1.0 - alpha) * x + alpha * y).collect();
            let noise = NoiseConfig { nbar, ..cfg.noise.clone() };
            let (_, state) =
                prepare(&template, &noise, &theta, &settings, derive_seed(cfg.seed(), i as u64)).context("circuit simulation")?;
            let rho = state.qubit_density();
            let energy = energy_of(&rho, &cfg.model).context("energy")?;
            let (m, _) = bulk_mbti(&rho, cfg.model.n)?;
            Ok(InterpRow {
                alpha,
                nbar,
                energy,
                rel_error: relative_energy_error(energy, e0).context("relative error")?,
                z_r: m.z_r,
                z_t: m.z_t,
                top_population: state.top_population(),
            })
        })
        .collect();
    let rows: Vec<InterpRow> = rows.into_iter().collect::<CliResult<_>>()?;
    let mut out = OutputDir::create(&cfg.output.out_dir)?;
    out.write_csv("interp.csv", &rows)?;
    out.finish("interp", cfg)?;
    Ok(json!({"e_exact": e0, "rows": rows}))
}

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct NoiseCell {
    pub p_xy: f64,
    pub p_z: f64,
    pub rss: f64,
    pub rss_sigma: f64,
}

pub fn cmd_noise_study(cfg: &ExperimentConfig) -> CliResult<Value> {
    cfg.validate(true)?;
    let ns = &cfg.noise_study;
    let path = ns.reference.as_ref().ok_or_else(|| CliError::Config("noise_study.reference is required".into()))?;
    let all: Vec<SweepRow> = read_csv(path)?;
    let data: Vec<&SweepRow> = all.iter().filter(|r| r.source == ns.reference_source.label() && r.error.is_empty()).collect();
    if data.is_empty() {
        return Err(CliError::Config(format!("{}: no {} rows", path.display(), ns.reference_source.label())));
    }
    let mut points = vec![];
    for r in &data {
        let z = r.z_r.ok_or_else(|| CliError::Config(format!("row t_minus={} has no z_r", r.t_minus)))?;
        if r.theta_opt.is_empty() {
            return Err(CliError::Config(format!("row t_minus={} has no theta_opt", r.t_minus)));
        }
        points.push((ModelSpec { t_minus: r.t_minus, delta: r.delta, ..cfg.model }, parse_theta(&r.theta_opt)?, z, r.z_r_err.unwrap_or(0.0)));
    }
    if ns.p_xy.is_empty() || ns.p_z.is_empty() {
        return Err(CliError::Config("noise grid is empty".into()));
    }
    let template = cfg.template()?;
    let settings = cfg.vqe_settings();
    let grid: Vec<(usize, f64, f64)> =
        ns.p_xy.iter().flat_map(|&x| ns.p_z.iter().map(move |&z| (x, z))).enumerate().map(|(i, (x, z))| (i, x, z)).collect();
    let seed = cfg.seed();
    let data_z: Vec<f64> = points.iter().map(|p| p.2).collect();
    let errs: Vec<f64> = points.iter().map(|p| p.3).collect();
    let cells: Vec<CliResult<NoiseCell>> = grid
        .par_iter()
        .map(|&(i, p_xy, p_z)| {
            let noise = NoiseConfig { pauli_pxy: p_xy, pauli_pz: p_z, ..cfg.noise.clone() };
            noise.validate().context("noise grid")?;
            let mut model_z = vec![];
            for (k, (model, theta, _, _)) in points.iter().enumerate() {
                let (_, state) = prepare(&template, &noise, theta, &settings, derive_seed(derive_seed(seed, i as u64), k as u64))
                    .context("circuit simulation")?;
                model_z.push(bulk_mbti(&state.qubit_density(), model.n)?.0.z_r);
            }
            let est = rss_parametric(&data_z, &errs, &model_z, ns.resamples, derive_seed(seed, 1_000_000 + i as u64))
                .context("rss")?;
            Ok(NoiseCell { p_xy, p_z, rss: est.rss, rss_sigma: est.sigma })
        })
        .collect();
    let cells: Vec<NoiseCell> = cells.into_iter().collect::<CliResult<_>>()?;
    let best = cells.iter().min_by(|a, b| a.rss.total_cmp(&b.rss)).expect("non-empty grid").clone();
    let summary = json!({"argmin": best, "points": points.len(), "cells": cells.len()});
    let mut out = OutputDir::create(&cfg.output.out_dir)?;
    out.write_csv("noise_study.csv", &cells)?;
    out.write_json("noise_study.json", &summary)?;
    out.finish("noise-study", cfg)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bulk_is_central() {
        assert_eq!(bulk_sites(8).unwrap(), vec![2, 3, 4, 5]);
        assert_eq!(bulk_sites(4).unwrap(), vec![0, 1, 2, 3]);
        assert!(bulk_sites(2).is_err());
    }

    #[test]
    fn overrides_win() {
        let mut cfg = ExperimentConfig::default();
        Overrides { seed: Some(4), shots: Some(10), save_shots: true, ..Default::default() }.apply(&mut cfg);
        assert_eq!(cfg.seed, Some(4));
        assert_eq!(cfg.measurement.shots_per_basis, 10);
        assert!(cfg.output.save_shots);
    }
}
