use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use svsa_core::dynamics::{
    euler_solve, fmt_row, inward_check_with, InwardOptions, InwardSetPair, LyapunovEstimate, LyapunovParams,
    Perturbation, SelectionStrategy, Selector, SetValuedMap,
};
use svsa_core::fixed_point::{
    fp_gap_bound_check, generic_boundedness_check, observed_diameter, partner_sets, run_fixed_point,
    run_stage_maps, ContractiveSetMap,
};
use svsa_core::mdp::{gap_recursion_check, run_avi, AviConfig, AviResult, ErrorInjector, Mdp};
use svsa_core::norms::{FiniteSet, NormSpec};
use svsa_core::saa::{
    noise_window_check, run_projective, run_saa, separation_constant, validate_schedule, NoiseModel, RunTrace,
    SaaSettings, ScheduleVerdict, StepSchedule, ComparabilityReport,
};
use svsa_core::Vector;

use crate::config::{output_root, ExperimentConfig};
use crate::error::{HarnessError, Result};

/// Rows kept in plot CSVs of long runs.
const PLOT_ROWS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub id: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub metrics: BTreeMap<String, f64>,
    pub checks: BTreeMap<String, bool>,
    pub pass: bool,
    pub wall_time_s: f64,
}

/// Everything an experiment produces, kept in memory until the run has
/// succeeded so that failed runs leave nothing behind.
#[derive(Default)]
struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
    metrics: BTreeMap<String, f64>,
    checks: BTreeMap<String, bool>,
}

impl Artifacts {
    fn metric(&mut self, key: &str, value: f64) {
        self.metrics.insert(key.to_string(), value);
    }

    fn check(&mut self, key: &str, ok: bool) {
        self.checks.insert(key.to_string(), ok);
    }

    fn file<F>(&mut self, name: &str, write: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<()>,
    {
        let mut buf = Vec::new();
        write(&mut buf)?;
        self.files.push((name.to_string(), buf));
        Ok(())
    }

    fn trace(&mut self, name: &str, trace: &RunTrace) -> Result<()> {
        self.file(name, |w| Ok(trace.write_csv(w)?))
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<SummaryRecord> {
    run_experiment_in(cfg, &output_root())
}

/// Run `cfg` and write `trace.csv`, `plot.csv`, `summary.json` and
/// `config.json` (plus experiment-specific extras) to its output directory.
pub fn run_experiment_in(cfg: &ExperimentConfig, root: &Path) -> Result<SummaryRecord> {
    cfg.validate()?;
    let start = Instant::now();
    let art = match cfg.id.as_str() {
        "saa-demo" => saa_demo(cfg)?,
        "projective-demo" => projective_demo(cfg)?,
        "avi-discounted" | "avi-ssp" | "avi-pnorm" => avi(cfg)?,
        "epsilon-sweep" => epsilon_sweep(cfg)?,
        "fixed-point" => fixed_point(cfg)?,
        "note-lemma" => note_lemma(cfg)?,
        "lyapunov-build" => lyapunov_build(cfg)?,
        "inward-check" => inward_check(cfg)?,
        "noise-window" => noise_window(cfg)?,
        other => return Err(HarnessError::UnknownExperiment(other.to_string())),
    };
    let summary = SummaryRecord {
        id: cfg.id.clone(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        pass: art.checks.values().all(|ok| *ok),
        metrics: art.metrics,
        checks: art.checks,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    let dir = cfg.output_dir(root);
    std::fs::create_dir_all(&dir)?;
    for (name, bytes) in &art.files {
        std::fs::write(dir.join(name), bytes)?;
    }
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(&cfg.to_json())? + "\n")?;
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}

pub fn summary_path(cfg: &ExperimentConfig, root: &Path) -> PathBuf {
    cfg.output_dir(root).join("summary.json")
}

// ---------------------------------------------------------------- params

fn euclidean() -> NormSpec {
    NormSpec::Euclidean
}

fn zero_noise() -> NoiseModel {
    NoiseModel::Zero
}

fn unit_harmonic() -> StepSchedule {
    StepSchedule::harmonic(1.0)
}

fn avi_schedule() -> StepSchedule {
    StepSchedule::harmonic_shifted(10.0, 9.0)
}

fn default_tail() -> f64 {
    0.1
}

fn default_slack() -> f64 {
    0.05
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BallSpec {
    radius: f64,
    #[serde(default = "euclidean")]
    norm: NormSpec,
    #[serde(default)]
    growth: f64,
}

/// `H(x) = {Ax + b} + ball`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FieldSpec {
    a: Vec<Vec<f64>>,
    #[serde(default)]
    b: Option<Vec<f64>>,
    #[serde(default)]
    perturbation: Option<BallSpec>,
}

impl FieldSpec {
    fn build(&self) -> Result<SetValuedMap> {
        let d = self.a.len();
        if d == 0 || self.a.iter().any(|row| row.len() != d) {
            return Err(HarnessError::Config("field matrix `a` must be square and nonempty".into()));
        }
        let a = DMatrix::from_fn(d, d, |i, j| self.a[i][j]);
        let b = match &self.b {
            Some(b) => vector("field.b", b, d)?,
            None => Vector::zeros(d),
        };
        let map = SetValuedMap::affine(a, b)?;
        Ok(match &self.perturbation {
            Some(p) => map.with_perturbation(Perturbation::Ball {
                radius: p.radius,
                norm: p.norm.clone(),
                growth: p.growth,
            })?,
            None => map,
        })
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum StrategySpec {
    #[default]
    Center,
    Uniform,
    FixedBias {
        offset: Vec<f64>,
    },
}

impl StrategySpec {
    fn build(&self, d: usize, seed: u64) -> Result<SelectionStrategy> {
        Ok(match self {
            StrategySpec::Center => SelectionStrategy::Center,
            StrategySpec::Uniform => SelectionStrategy::Uniform { seed },
            StrategySpec::FixedBias { offset } => SelectionStrategy::FixedBias(vector("strategy.offset", offset, d)?),
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairSpec {
    center: Vec<f64>,
    r_b: f64,
    r_c: f64,
    #[serde(default = "euclidean")]
    norm: NormSpec,
}

impl PairSpec {
    fn build(&self, d: usize) -> Result<InwardSetPair> {
        Ok(InwardSetPair::balls(vector("pair.center", &self.center, d)?, self.r_b, self.r_c, self.norm.clone())?)
    }
}

fn vector(name: &str, v: &[f64], d: usize) -> Result<Vector> {
    if v.len() != d {
        return Err(HarnessError::Config(format!("`{name}` has {} entries, expected {d}", v.len())));
    }
    Ok(Vector::from_column_slice(v))
}

fn stride(n: usize) -> usize {
    (n / PLOT_ROWS).max(1)
}

fn plot_indices(len: usize) -> impl Iterator<Item = usize> {
    let s = stride(len);
    (0..len).step_by(s).chain(std::iter::once(len))
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn schedule_not_failing(schedule: &StepSchedule) -> Result<bool> {
    Ok(!matches!(validate_schedule(schedule)?, ScheduleVerdict::Fail(_)))
}

// ------------------------------------------------------------- saa-demo

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SaaParams {
    field: FieldSpec,
    x0: Vec<f64>,
    #[serde(default = "unit_harmonic")]
    schedule: StepSchedule,
    #[serde(default = "zero_noise")]
    noise: NoiseModel,
    #[serde(default)]
    strategy: StrategySpec,
    n_iter: usize,
}

fn saa_demo(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let p: SaaParams = cfg.params()?;
    let map = p.field.build()?;
    let x0 = vector("x0", &p.x0, map.dim())?;
    let strategy = p.strategy.build(map.dim(), cfg.seed())?;
    let settings = SaaSettings { schedule: p.schedule.clone(), noise: p.noise, seed: cfg.seed(), n_iter: p.n_iter };
    let trace = run_saa(&map, &x0, &settings, &strategy)?;

    let mut art = Artifacts::default();
    art.metric("final_norm", trace.last().norm());
    art.metric("tail_average_norm", trace.tail_average(default_tail()).norm());
    art.metric("final_time", trace.times[trace.len()]);
    art.check("no_divergence", trace.diverged.is_none());
    art.check("schedule", schedule_not_failing(&p.schedule)?);
    art.trace("trace.csv", &trace)?;
    art.file("plot.csv", |w| {
        writeln!(w, "n,t_n,norm_x")?;
        for n in plot_indices(trace.len()) {
            writeln!(w, "{n},{}", fmt_row([trace.times[n], trace.x[n].norm()]))?;
        }
        Ok(())
    })?;
    Ok(art)
}

// ------------------------------------------------------ projective-demo

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProjectiveParams {
    field: FieldSpec,
    x0: Vec<f64>,
    #[serde(default)]
    partner_x0: Option<Vec<f64>>,
    pair: PairSpec,
    #[serde(default = "unit_harmonic")]
    schedule: StepSchedule,
    #[serde(default = "zero_noise")]
    noise: NoiseModel,
    #[serde(default)]
    strategy: StrategySpec,
    n_iter: usize,
    #[serde(default = "default_samples")]
    boundary_samples: usize,
}

fn default_samples() -> usize {
    256
}

fn projective_demo(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let p: ProjectiveParams = cfg.params()?;
    let map = p.field.build()?;
    let d = map.dim();
    let x0 = vector("x0", &p.x0, d)?;
    let partner_x0 = match &p.partner_x0 {
        Some(v) => vector("partner_x0", v, d)?,
        None => x0.clone(),
    };
    let pair = p.pair.build(d)?;
    let strategy = p.strategy.build(d, cfg.seed())?;
    let settings =
        SaaSettings { schedule: p.schedule.clone(), noise: p.noise.clone(), seed: cfg.seed(), n_iter: p.n_iter };
    let partner = run_projective(&map, &partner_x0, &settings, &strategy, &pair)?;
    let plain = run_saa(&map, &x0, &settings, &strategy)?;

    let mut contained = true;
    for x in &partner.x {
        contained &= pair.in_closure_c(x)?;
    }
    let events = partner.projection_events();
    let mut art = Artifacts::default();
    art.metric("projection_events", events.len() as f64);
    art.metric("N", partner.last_projection_index() as f64);
    art.metric("plain_diverged", flag(plain.diverged.is_some()));
    art.check("containment", contained);
    let gaps = if plain.diverged.is_none() {
        let report = ComparabilityReport::from_traces(&plain, &partner, &p.pair.norm)?;
        art.metric("sup_gap", report.sup_gap);
        art.check("comparable", report.is_comparable());
        art.file("gaps.csv", |w| Ok(report.write_gap_csv(w)?))?;
        art.file("comparability.json", |w| Ok(serde_json::to_writer_pretty(w, &report.to_json("gaps.csv"))?))?;
        Some(report.gaps)
    } else {
        None
    };
    if let Some(bound) = p.noise.bound() {
        let sep = separation_constant(&pair, &map, bound, p.boundary_samples)?;
        art.metric("separation_bound", sep);
        if let Some(min_sep) = partner.min_event_separation() {
            art.metric("min_event_separation", min_sep);
            art.check("separation", min_sep >= sep - 1e-6);
        }
    }
    art.trace("trace.csv", &partner)?;
    art.trace("plain.csv", &plain)?;
    art.file("plot.csv", |w| {
        writeln!(w, "n,t_n,norm_plain,norm_projective,gap,projected")?;
        for n in plot_indices(partner.len()) {
            let projected = n > 0 && partner.corrections[n - 1].iter().any(|v| *v != 0.0);
            let plain_norm = plain.x.get(n).map_or(f64::NAN, |x| x.norm());
            let gap = gaps.as_ref().map_or(f64::NAN, |g| g[n]);
            writeln!(
                w,
                "{n},{},{}",
                fmt_row([partner.times[n], plain_norm, partner.x[n].norm(), gap]),
                u8::from(projected)
            )?;
        }
        Ok(())
    })?;
    Ok(art)
}

// ------------------------------------------------------------------ avi

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AviParams {
    mdp: String,
    #[serde(default)]
    epsilon: Option<f64>,
    #[serde(default)]
    epsilons: Option<Vec<f64>>,
    #[serde(default)]
    error_norm: Option<NormSpec>,
    #[serde(default)]
    nu: Option<NormSpec>,
    #[serde(default)]
    alpha: Option<f64>,
    #[serde(default = "default_injector")]
    injector: ErrorInjector,
    #[serde(default = "avi_schedule")]
    schedule: StepSchedule,
    #[serde(default = "zero_noise")]
    noise: NoiseModel,
    n_iter: usize,
    #[serde(default = "default_tail")]
    tail_fraction: f64,
    #[serde(default)]
    j0: Option<Vec<f64>>,
    #[serde(default = "default_pairs")]
    certificate_pairs: usize,
    #[serde(default = "default_slack")]
    residual_slack: f64,
    #[serde(default = "default_slack")]
    distance_slack: f64,
    #[serde(default = "default_monotone_slack")]
    monotone_slack: f64,
}

fn default_injector() -> ErrorInjector {
    ErrorInjector::FixedBias { direction: None }
}

fn default_pairs() -> usize {
    2000
}

fn default_monotone_slack() -> f64 {
    0.02
}

impl AviParams {
    fn load(&self, cfg: &ExperimentConfig) -> Result<(Mdp, AviConfig)> {
        let path = cfg.resolve(&self.mdp);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| HarnessError::Config(format!("cannot read MDP file {}: {e}", path.display())))?;
        let mdp = Mdp::from_json(&text)?;
        let nu = self.nu.clone().unwrap_or_else(|| NormSpec::max(mdp.n_states()));
        let config = AviConfig {
            epsilon: self.epsilon.unwrap_or(0.0),
            error_norm: self.error_norm.clone().unwrap_or_else(|| nu.clone()),
            nu,
            alpha: self.alpha,
            injector: self.injector.clone(),
            schedule: self.schedule.clone(),
            noise: self.noise.clone(),
            seed: cfg.seed(),
            n_iter: self.n_iter,
            tail_fraction: self.tail_fraction,
            j0: self.j0.clone(),
            certificate_pairs: self.certificate_pairs,
        };
        Ok((mdp, config))
    }
}

fn avi_plot(w: &mut Vec<u8>, mdp: &Mdp, config: &AviConfig, result: &AviResult) -> Result<()> {
    writeln!(w, "n,residual,distance,gap")?;
    let trace = result.trace();
    for n in plot_indices(trace.len()) {
        let j = &trace.x[n];
        let residual = config.error_norm.eval(&(mdp.bellman(j)? - j))?;
        let distance = config.error_norm.eval(&(j - &result.j_star))?;
        writeln!(w, "{n},{}", fmt_row([residual, distance, result.coupled.report.gaps[n]]))?;
    }
    Ok(())
}

fn avi(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let p: AviParams = cfg.params()?;
    if p.epsilon.is_none() || p.epsilons.is_some() {
        return Err(HarnessError::Config(format!("`{}` takes a single `epsilon`", cfg.id)));
    }
    let (mdp, config) = p.load(cfg)?;
    let r = run_avi(&mdp, &config)?;
    let eps = config.epsilon;
    let bound = r.epsilon_nu / (1.0 - r.alpha);
    let gap = gap_recursion_check(&r, r.alpha, r.epsilon_nu)?;

    let mut art = Artifacts::default();
    art.metric("epsilon", eps);
    art.metric("epsilon_nu", r.epsilon_nu);
    art.metric("alpha", r.alpha);
    art.metric("alpha_hat", r.certificate.alpha_hat);
    art.metric("residual", r.residual);
    art.metric("residual_threshold", eps + p.residual_slack);
    art.metric("residual_nu", r.residual_nu);
    art.metric("distance", r.distance);
    art.metric("distance_nu", r.distance_nu);
    art.metric("distance_threshold", bound + p.distance_slack);
    art.metric("max_injected", r.max_injected);
    art.metric("max_injected_nu", r.max_injected_nu);
    art.metric("N", gap.n as f64);
    art.metric("gap_closed_form_bound", gap.closed_form_bound);
    art.metric("sup_gap", r.coupled.report.sup_gap);
    art.check("no_divergence", !r.diverged());
    art.check("certificate", r.certificate.passes);
    art.check("residual", r.residual <= eps + p.residual_slack);
    art.check("distance", r.distance_nu <= bound + p.distance_slack);
    art.check("norm_bridge", r.max_injected_nu <= r.epsilon_nu + 1e-12);
    art.check("gap_recursion", gap.recursion_ok);
    art.check("gap_closed_form", gap.closed_form_ok);
    art.trace("trace.csv", r.trace())?;
    art.file("gaps.csv", |w| Ok(r.coupled.report.write_gap_csv(w)?))?;
    art.file("plot.csv", |w| avi_plot(w, &mdp, &config, &r))?;
    Ok(art)
}

fn epsilon_sweep(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let p: AviParams = cfg.params()?;
    let epsilons = match (&p.epsilon, &p.epsilons) {
        (None, Some(e)) if !e.is_empty() => e.clone(),
        _ => return Err(HarnessError::Config("`epsilon-sweep` takes a nonempty `epsilons` list".into())),
    };
    if epsilons.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(HarnessError::Config("`epsilons` must be strictly decreasing".into()));
    }
    let (mdp, base) = p.load(cfg)?;
    let mut rows = Vec::new();
    let mut last = None;
    for eps in &epsilons {
        let r = run_avi(&mdp, &AviConfig { epsilon: *eps, ..base.clone() })?;
        rows.push((*eps, r.residual, r.distance, r.diverged()));
        last = Some(r);
    }
    let last = last.expect("nonempty sweep");

    let mut art = Artifacts::default();
    let monotone = rows.windows(2).all(|w| w[1].2 <= w[0].2 + p.monotone_slack);
    let residual_ok = rows.iter().all(|(e, r, _, _)| *r <= e + p.residual_slack);
    for (e, r, dist, _) in &rows {
        art.metric(&format!("residual@{e}"), *r);
        art.metric(&format!("distance@{e}"), *dist);
    }
    art.check("distance_monotone", monotone);
    art.check("residual", residual_ok);
    art.check("no_divergence", rows.iter().all(|row| !row.3));
    art.trace("trace.csv", last.trace())?;
    let table = |w: &mut Vec<u8>| -> Result<()> {
        writeln!(w, "epsilon,residual,distance")?;
        for (e, r, dist, _) in &rows {
            writeln!(w, "{}", fmt_row([*e, *r, *dist]))?;
        }
        Ok(())
    };
    art.file("sweep.csv", table)?;
    art.file("plot.csv", table)?;
    Ok(art)
}

// ---------------------------------------------------------- fixed point

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FixedPointParams {
    map: String,
    x0: Vec<f64>,
    #[serde(default = "unit_harmonic")]
    schedule: StepSchedule,
    #[serde(default = "zero_noise")]
    noise: NoiseModel,
    #[serde(default)]
    strategy: StrategySpec,
    n_iter: usize,
    #[serde(default = "default_tail")]
    tail_fraction: f64,
    #[serde(default = "default_slack")]
    residual_tol: f64,
}

fn load_fp_map(cfg: &ExperimentConfig, rel: &str) -> Result<ContractiveSetMap> {
    let path = cfg.resolve(rel);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| HarnessError::Config(format!("cannot read map file {}: {e}", path.display())))?;
    Ok(ContractiveSetMap::from_json(&text)?)
}

fn fixed_point(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let p: FixedPointParams = cfg.params()?;
    let map = load_fp_map(cfg, &p.map)?;
    let x0 = vector("x0", &p.x0, map.dim())?;
    let strategy = p.strategy.build(map.dim(), cfg.seed())?;
    let settings = SaaSettings { schedule: p.schedule, noise: p.noise, seed: cfg.seed(), n_iter: p.n_iter };
    let r = run_fixed_point(&map, &x0, &settings, &strategy, p.tail_fraction)?;
    let gap = fp_gap_bound_check(&r, map.alpha(), map.diameter())?;
    let bounded = generic_boundedness_check(&r.coupled, map.alpha(), map.diameter())?;

    let mut art = Artifacts::default();
    art.metric("residual", r.residual);
    art.metric("residual_threshold", p.residual_tol);
    for (i, v) in r.x_bar.iter().enumerate() {
        art.metric(&format!("x_bar_{}", i + 1), *v);
    }
    art.metric("N", gap.n as f64);
    art.metric("gap_closed_form_bound", gap.closed_form_bound);
    art.metric("sup_gap", r.coupled.report.sup_gap);
    art.metric("boundedness_bound", bounded.bound);
    art.metric("boundedness_sup", bounded.sup_after);
    art.check("residual", r.residual <= p.residual_tol);
    art.check("gap_recursion", gap.recursion_ok);
    art.check("gap_closed_form", gap.closed_form_ok);
    art.check("boundedness", bounded.holds);
    art.check("no_divergence", r.trace().diverged.is_none());
    art.trace("trace.csv", r.trace())?;
    art.file("gaps.csv", |w| Ok(r.coupled.report.write_gap_csv(w)?))?;
    art.file("comparability.json", |w| {
        Ok(serde_json::to_writer_pretty(w, &r.coupled.report.to_json("gaps.csv"))?)
    })?;
    art.file("plot.csv", |w| {
        writeln!(w, "n,residual,gap")?;
        let tr = r.trace();
        for n in plot_indices(tr.len()) {
            writeln!(w, "{n},{}", fmt_row([map.residual(&tr.x[n]), r.coupled.report.gaps[n]]))?;
        }
        Ok(())
    })?;
    Ok(art)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoteLemmaParams {
    map: String,
    x0: Vec<f64>,
    #[serde(default)]
    partner_x0: Option<Vec<f64>>,
    #[serde(default)]
    pair: Option<PairSpec>,
    #[serde(default = "zero_noise")]
    noise: NoiseModel,
    #[serde(default)]
    strategy: StrategySpec,
    n_iter: usize,
}

fn note_lemma(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let p: NoteLemmaParams = cfg.params()?;
    let map = load_fp_map(cfg, &p.map)?;
    let d = map.dim();
    let x0 = vector("x0", &p.x0, d)?;
    let partner_x0 = match &p.partner_x0 {
        Some(v) => vector("partner_x0", v, d)?,
        None => x0.clone(),
    };
    let pair = match &p.pair {
        Some(spec) => spec.build(d)?,
        None => partner_sets(&map)?,
    };
    let strategy = p.strategy.build(d, cfg.seed())?;
    let settings = SaaSettings { schedule: unit_harmonic(), noise: p.noise, seed: cfg.seed(), n_iter: p.n_iter };
    let run = run_stage_maps(&map, &x0, &partner_x0, &settings, &strategy, &pair)?;
    let check = generic_boundedness_check(&run, map.alpha(), map.diameter())?;

    let mut art = Artifacts::default();
    art.metric("N", check.n as f64);
    art.metric("bound", check.bound);
    art.metric("sup_after", check.sup_after);
    art.metric("observed_diameter", observed_diameter(&map, &[&run.plain, &run.projective]));
    art.metric("projection_events", run.report.projection_events as f64);
    art.check("boundedness", check.holds);
    art.trace("trace.csv", &run.plain)?;
    art.trace("partner.csv", &run.projective)?;
    art.file("plot.csv", |w| {
        writeln!(w, "n,gap")?;
        for n in plot_indices(run.plain.len()) {
            writeln!(w, "{n},{}", fmt_row([run.report.gaps[n]]))?;
        }
        Ok(())
    })?;
    Ok(art)
}

// ------------------------------------------------------------- lyapunov

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSpec {
    lo: Vec<f64>,
    hi: Vec<f64>,
    count: usize,
}

impl GridSpec {
    /// Tensor grid with `count` points per axis.
    fn build(&self, d: usize) -> Result<FiniteSet> {
        let lo = vector("grid.lo", &self.lo, d)?;
        let hi = vector("grid.hi", &self.hi, d)?;
        if self.count < 2 {
            return Err(HarnessError::Config("`grid.count` must be at least 2".into()));
        }
        let m = self.count;
        let total = m.checked_pow(d as u32).filter(|t| *t <= 1_000_000);
        let total = total.ok_or_else(|| HarnessError::Config("grid too large".into()))?;
        let points = (0..total)
            .map(|mut k| {
                Vector::from_fn(d, |i, _| {
                    let idx = k % m;
                    k /= m;
                    lo[i] + (hi[i] - lo[i]) * idx as f64 / (m - 1) as f64
                })
            })
            .collect();
        Ok(FiniteSet::new(points)?)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LyapunovParamsSpec {
    field: FieldSpec,
    attractor: Vec<Vec<f64>>,
    c: f64,
    d_g: f64,
    horizon: f64,
    step: f64,
    grid: GridSpec,
    #[serde(default = "default_multiples")]
    step_multiples: Vec<usize>,
    /// Compare `V` against the distance to the attractor within this
    /// tolerance.
    #[serde(default)]
    reference_tol: Option<f64>,
}

fn default_multiples() -> Vec<usize> {
    vec![1, 10, 100, 1000]
}

fn build_lyapunov(field: &FieldSpec, attractor: &[Vec<f64>], params: LyapunovParams) -> Result<LyapunovEstimate> {
    let map = field.build()?;
    let d = map.dim();
    let pts = attractor.iter().map(|a| vector("attractor", a, d)).collect::<Result<Vec<_>>>()?;
    Ok(LyapunovEstimate::build(map, FiniteSet::new(pts)?, params)?)
}

fn lyapunov_build(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let p: LyapunovParamsSpec = cfg.params()?;
    let v = build_lyapunov(&p.field, &p.attractor, LyapunovParams::new(p.c, p.d_g, p.horizon, p.step))?;
    let d = v.map().dim();
    let grid = p.grid.build(d)?;
    let decrease = v.check_decrease(&grid, &p.step_multiples)?;

    let mut art = Artifacts::default();
    art.metric("grid_points", grid.len() as f64);
    art.metric("decrease_checked", decrease.checked as f64);
    art.metric("decrease_violations", decrease.violations.len() as f64);
    art.check("decrease", decrease.violations.is_empty());
    if let Some(tol) = p.reference_tol {
        let mut worst: f64 = 0.0;
        for x in grid.points() {
            worst = worst.max((v.eval(x)? - v.distance_to_attractor(x)).abs());
        }
        art.metric("reference_error", worst);
        art.metric("reference_tol", tol);
        art.check("reference", worst <= tol);
    }
    let start = grid.points().last().expect("nonempty grid").clone();
    let traj = euler_solve(v.map(), &start, p.step, p.horizon, &mut Selector::new(SelectionStrategy::Center))?;
    art.file("trace.csv", |w| Ok(traj.write_csv(w)?))?;
    art.file("plot.csv", |w| Ok(v.write_grid_csv(&grid, w)?))?;
    Ok(art)
}

// --------------------------------------------------------- inward-check

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InwardParams {
    field: FieldSpec,
    pair: PairSpec,
    #[serde(default = "default_boundary")]
    n_boundary: usize,
    step: f64,
    horizon: f64,
    #[serde(default = "default_true")]
    expect_inward: bool,
    #[serde(default)]
    margin_frac: Option<f64>,
}

fn default_boundary() -> usize {
    64
}

fn default_true() -> bool {
    true
}

fn inward_check(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let p: InwardParams = cfg.params()?;
    let map = p.field.build()?;
    let d = map.dim();
    let pair = p.pair.build(d)?;
    let mut opts = InwardOptions { seed: cfg.seed(), ..InwardOptions::default() };
    if let Some(m) = p.margin_frac {
        opts.margin_frac = m;
    }
    let report = inward_check_with(&pair, &map, p.n_boundary, p.step, p.horizon, &opts)?;
    let samples = pair.boundary_samples(p.n_boundary, opts.seed, opts.boundary_tol)?;

    let mut art = Artifacts::default();
    art.metric("holds", flag(report.holds));
    art.metric("trajectories", report.trajectories as f64);
    art.check("verdict", report.holds == p.expect_inward);
    if let Some(cx) = &report.counterexample {
        art.metric("counterexample_time", cx.time);
        art.metric("counterexample_level", cx.level);
        let json = serde_json::json!({
            "start": cx.start.as_slice(),
            "time": cx.time,
            "state": cx.state.as_slice(),
            "level": cx.level,
            "selection": cx.selection,
        });
        art.file("counterexample.json", |w| Ok(serde_json::to_writer_pretty(w, &json)?))?;
    }
    let start = report.counterexample.as_ref().map_or_else(|| samples[0].clone(), |cx| cx.start.clone());
    let traj = euler_solve(&map, &start, p.step, p.horizon, &mut Selector::new(SelectionStrategy::Center))?;
    art.file("trace.csv", |w| Ok(traj.write_csv(w)?))?;
    art.file("plot.csv", |w| {
        let header: Vec<String> = (1..=d).map(|i| format!("x_{i}")).chain(["level".to_string()]).collect();
        writeln!(w, "{}", header.join(","))?;
        for x in &samples {
            let level = pair.level().value(x)?;
            writeln!(w, "{}", fmt_row(x.iter().copied().chain([level])))?;
        }
        Ok(())
    })?;
    Ok(art)
}

// --------------------------------------------------------- noise-window

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseWindowParams {
    dim: usize,
    noise: NoiseModel,
    #[serde(default = "unit_harmonic")]
    schedule: StepSchedule,
    n_iter: usize,
    horizon: f64,
    k_lo: usize,
    k_hi: usize,
    #[serde(default = "default_slack")]
    threshold: f64,
}

fn noise_window(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let p: NoiseWindowParams = cfg.params()?;
    if p.dim == 0 {
        return Err(HarnessError::Config("`dim` must be positive".into()));
    }
    let map = SetValuedMap::constant(Vector::zeros(p.dim));
    let settings = SaaSettings { schedule: p.schedule, noise: p.noise, seed: cfg.seed(), n_iter: p.n_iter };
    let trace = run_saa(&map, &Vector::zeros(p.dim), &settings, &SelectionStrategy::Center)?;
    let report = noise_window_check(&trace, p.horizon, Some((p.k_lo, p.k_hi)))?;

    let mut art = Artifacts::default();
    art.metric("max_window_sum", report.max_window_sum);
    art.metric("argmax_k", report.argmax_k as f64);
    art.metric("windows", report.windows as f64);
    art.metric("threshold", p.threshold);
    art.check("window_sum", report.max_window_sum <= p.threshold);
    art.check("complete_windows", !report.partial);
    art.trace("trace.csv", &trace)?;
    art.file("plot.csv", |w| {
        writeln!(w, "n,t_n,weighted_noise_sum")?;
        for n in plot_indices(trace.len()) {
            writeln!(w, "{n},{}", fmt_row([trace.times[n], trace.x[n].norm()]))?;
        }
        Ok(())
    })?;
    Ok(art)
}

/// Parsed summary file.
pub fn read_summary(path: &Path) -> Result<SummaryRecord> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
