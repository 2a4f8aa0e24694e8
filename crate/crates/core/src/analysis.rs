//! Seed-paired sweeps over sampling and perturbation settings.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, RedrawPolicy, SampleMode, SearchConfig, Strategy};
use crate::error::{Error, Result};
use crate::grid::LatentGrid;
use crate::lab::Lab;
use crate::noiseshape::{dft_forward, radial_frequency, Band};
use crate::reward::diversity;
use crate::sampler::{switch_plan, uniform_plan, Attenuation};
use crate::schedule::ScheduleSpec;
use crate::search::{best_of_n, particle_search, running_max};
use crate::tep::Lineage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub variable: String,
    pub arm: String,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub variable: String,
    pub arm: String,
    pub seed: u64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub name: String,
    pub rows: Vec<SweepRow>,
    pub records: Vec<SeedRecord>,
}

/// Mean and standard error; the error is NaN below two samples.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

impl SweepResult {
    fn new(name: &str) -> Self {
        Self { name: name.to_string(), rows: Vec::new(), records: Vec::new() }
    }

    fn push(&mut self, variable: impl ToString, arm: &str, seeds: &[u64], values: Vec<f64>) {
        let variable = variable.to_string();
        let (mean, stderr) = mean_stderr(&values);
        self.rows.push(SweepRow { variable: variable.clone(), arm: arm.to_string(), mean, stderr, n: values.len() });
        for (seed, value) in seeds.iter().zip(values) {
            self.records.push(SeedRecord { variable: variable.clone(), arm: arm.to_string(), seed: *seed, value });
        }
    }

    pub fn row(&self, variable: &str, arm: &str) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.variable == variable && r.arm == arm)
    }

    /// Per-seed values of one row, in seed order.
    pub fn values(&self, variable: &str, arm: &str) -> Vec<f64> {
        self.records.iter().filter(|r| r.variable == variable && r.arm == arm).map(|r| r.value).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variable,arm,mean,stderr,n\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{},{}\n", r.variable, r.arm, r.mean, r.stderr, r.n));
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

fn require_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        Err(Error::Invalid("seed list is empty".into()))
    } else {
        Ok(())
    }
}

fn bon_best(lab: &Lab, plan: &[SampleMode], seeds: &[u64], attenuation: Option<&Attenuation>) -> Result<Vec<f64>> {
    let verifier = lab.verifier();
    let reward = |x: &LatentGrid| verifier.score(x);
    seeds
        .par_iter()
        .map(|&seed| {
            let mut sampler = lab.sampler();
            if let Some(a) = attenuation {
                sampler = sampler.with_attenuation(a.clone());
            }
            Ok(best_of_n(&sampler, plan, lab.config.search.n, seed, &reward)?.best_reward)
        })
        .collect()
}

/// BoN reward when sampling runs SDE before each switch step and ODE after.
/// Runs with spatial randomness only.
pub fn sde_to_ode_sweep(lab: &Lab, switch_steps: &[usize], seeds: &[u64]) -> Result<SweepResult> {
    require_seeds(seeds)?;
    let steps = lab.config.sampler.steps;
    let base = lab.with_config(lab.config.spatial_baseline());
    let mut out = SweepResult::new("sde_to_ode");
    for &s in switch_steps {
        if s > steps {
            return Err(Error::Invalid(format!("switch step {s} beyond {steps} steps")));
        }
        let vals = bon_best(&base, &switch_plan(s, steps), seeds, None)?;
        out.push(s, "bon", seeds, vals);
    }
    Ok(out)
}

/// Named groups of steps for attenuation sweeps: none, each quarter, all.
pub fn default_windows(steps: usize) -> Vec<(String, Vec<usize>)> {
    let q = |a: usize, b: usize| (a * steps / 4..b * steps / 4).collect::<Vec<_>>();
    vec![
        ("none".into(), vec![]),
        ("q1".into(), q(0, 1)),
        ("q2".into(), q(1, 2)),
        ("q3".into(), q(2, 3)),
        ("q4".into(), q(3, 4)),
        ("all".into(), (0..steps).collect()),
    ]
}

/// All-SDE BoN with one band of the injected noise removed at the window's steps.
pub fn band_attenuation_sweep(
    lab: &Lab,
    band: Band,
    windows: &[(String, Vec<usize>)],
    seeds: &[u64],
) -> Result<SweepResult> {
    require_seeds(seeds)?;
    let steps = lab.config.sampler.steps;
    let base = lab.with_config(lab.config.spatial_baseline());
    let plan = uniform_plan(SampleMode::Sde, steps);
    let arm = match band {
        Band::Low => "low",
        Band::High => "high",
    };
    let mut out = SweepResult::new("band_attenuation");
    for (name, window) in windows {
        let att = Attenuation { band, cutoff: lab.config.analysis.attenuation_cutoff, steps: window.clone() };
        let vals = bon_best(&base, &plan, seeds, Some(&att))?;
        out.push(name, arm, seeds, vals);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Spatial,
    Embedding,
    Both,
}

impl Source {
    pub fn name(&self) -> &'static str {
        match self {
            Source::Spatial => "spatial",
            Source::Embedding => "embedding",
            Source::Both => "both",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceRecord {
    pub step: usize,
    pub source: Source,
    pub seed: u64,
    pub mse_total: f64,
    pub mse_low: f64,
    pub mse_high: f64,
}

/// Mean squared difference and its split at `cutoff` via the DFT.
pub fn mse_bands(a: &LatentGrid, b: &LatentGrid, cutoff: f64) -> Result<(f64, f64, f64)> {
    let d = a.zip_map(b, |x, y| x - y)?;
    let n = d.len() as f64;
    let total = d.sq_norm() / n;
    let spec = dft_forward(&d);
    let radius = radial_frequency(d.height(), d.width());
    let (mut lo, mut hi) = (0.0, 0.0);
    for (bin, r) in spec.bins.iter().zip(radius) {
        if r <= cutoff + 1e-12 {
            lo += bin.norm_sqr();
        } else {
            hi += bin.norm_sqr();
        }
    }
    Ok((total, lo / (n * n), hi / (n * n)))
}

/// Paired runs that differ only by randomness of `source` injected at
/// `step`. The reference is a deterministic ODE run without perturbation.
/// Spatial randomness is one SDE step; embedding randomness is one step of
/// perturbation at the configured final magnitudes.
pub fn influence_probe(lab: &Lab, step: usize, source: Source, seeds: &[u64]) -> Result<Vec<InfluenceRecord>> {
    require_seeds(seeds)?;
    let steps = lab.config.sampler.steps;
    if step >= steps {
        return Err(Error::StepOutOfRange { step, steps });
    }
    let base_cfg = lab.config.spatial_baseline();
    let base = lab.with_config(base_cfg.clone());
    let mut probe_cfg = base_cfg;
    let spatial = matches!(source, Source::Spatial | Source::Both);
    let embedding = matches!(source, Source::Embedding | Source::Both);
    if embedding {
        probe_cfg.tep.w1 = ScheduleSpec::constant(lab.config.tep.w1.end);
        probe_cfg.tep.w2 = ScheduleSpec::constant(lab.config.tep.w2.end);
        probe_cfg.tep.window = Some((step, step + 1));
        probe_cfg.tep.redraw = RedrawPolicy::OnceAtStart;
    }
    let probe = lab.with_config(probe_cfg);
    let ode = uniform_plan(SampleMode::Ode, steps);
    let mut plan = ode.clone();
    if spatial {
        plan[step] = SampleMode::Sde;
    }
    let cutoff = lab.config.analysis.band_cutoff;
    seeds
        .par_iter()
        .map(|&seed| {
            let lin = Lineage::single(seed, 0);
            let a = base.sampler().run_trajectory(&ode, lin.clone())?;
            let b = probe.sampler().run_trajectory(&plan, lin)?;
            let (mse_total, mse_low, mse_high) = mse_bands(&a.latent, &b.latent, cutoff)?;
            Ok(InfluenceRecord { step, source, seed, mse_total, mse_low, mse_high })
        })
        .collect()
}

pub fn influence_csv(records: &[InfluenceRecord]) -> String {
    let mut groups: Vec<(usize, Source, Vec<&InfluenceRecord>)> = Vec::new();
    for r in records {
        match groups.iter_mut().find(|g| g.0 == r.step && g.1 == r.source) {
            Some(g) => g.2.push(r),
            None => groups.push((r.step, r.source, vec![r])),
        }
    }
    let mut out = String::from("step,source,mse_total,mse_low,mse_high,stderr_total,n\n");
    for (step, source, rs) in groups {
        let tot: Vec<f64> = rs.iter().map(|r| r.mse_total).collect();
        let lo = rs.iter().map(|r| r.mse_low).sum::<f64>() / rs.len() as f64;
        let hi = rs.iter().map(|r| r.mse_high).sum::<f64>() / rs.len() as f64;
        let (m, se) = mean_stderr(&tot);
        out.push_str(&format!("{step},{},{m},{lo},{hi},{se},{}\n", source.name(), rs.len()));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToleranceDimension {
    TimestepWindow,
    Branch,
    Layer,
}

/// Config for one slice of a tolerance sweep at magnitude `m`.
fn slice_config(base: &ExperimentConfig, dim: ToleranceDimension, slice: &str, m: f64) -> ExperimentConfig {
    let mut c = base.spatial_baseline();
    let steps = c.sampler.steps;
    let t = &mut c.tep;
    t.rho_sem = 1.0;
    t.rho_pad = 1.0;
    t.redraw = RedrawPolicy::OnceAtStart;
    let mag = ScheduleSpec::constant(m);
    match (dim, slice) {
        (ToleranceDimension::Branch, "cond") => t.w2 = mag,
        (ToleranceDimension::Branch, _) => t.w1 = mag,
        (ToleranceDimension::Layer, s) => {
            t.w1 = mag;
            t.w2 = mag;
            let shallow = s == "shallow";
            t.shallow_scale = if shallow { 1.0 } else { 0.0 };
            t.deep_scale = if shallow { 0.0 } else { 1.0 };
        }
        (ToleranceDimension::TimestepWindow, s) => {
            t.w1 = mag;
            t.w2 = mag;
            t.shallow_scale = 1.0;
            t.deep_scale = 1.0;
            t.window = Some(if s == "early" { (0, steps / 2) } else { (steps / 2, steps) });
        }
    }
    c
}

pub fn tolerance_slices(dim: ToleranceDimension) -> [&'static str; 2] {
    match dim {
        ToleranceDimension::TimestepWindow => ["early", "late"],
        ToleranceDimension::Branch => ["cond", "uncond"],
        ToleranceDimension::Layer => ["shallow", "deep"],
    }
}

/// ODE BoN reward with perturbation confined to one slice at each magnitude.
pub fn tolerance_sweep(
    lab: &Lab,
    dimension: ToleranceDimension,
    magnitudes: &[f64],
    seeds: &[u64],
) -> Result<SweepResult> {
    require_seeds(seeds)?;
    if magnitudes.iter().any(|m| !(*m >= 0.0)) {
        return Err(Error::Invalid("magnitudes must be non-negative".into()));
    }
    let steps = lab.config.sampler.steps;
    let plan = uniform_plan(SampleMode::Ode, steps);
    let mut out = SweepResult::new("tolerance");
    for slice in tolerance_slices(dimension) {
        for &m in magnitudes {
            let cfg = slice_config(&lab.config, dimension, slice, m);
            let vals = bon_best(&lab.with_config(cfg), &plan, seeds, None)?;
            out.push(m, slice, seeds, vals);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Ode,
    Sde,
    SdeTep,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Ode => "ode",
            Variant::Sde => "sde",
            Variant::SdeTep => "sde_tep",
        }
    }
}

/// Diversity of `search.n` samples per seed, for each CFG scale and variant.
/// Every variant draws its initial noise from the same streams.
pub fn diversity_vs_cfg(lab: &Lab, w_values: &[f64], variants: &[Variant], seeds: &[u64]) -> Result<SweepResult> {
    require_seeds(seeds)?;
    let k = lab.config.search.n;
    if k < 2 {
        return Err(Error::TooFewSamples(k));
    }
    let steps = lab.config.sampler.steps;
    let projector = lab.projector();
    let mut out = SweepResult::new("diversity_cfg");
    for &w in w_values {
        for &variant in variants {
            let mut cfg = match variant {
                Variant::Ode | Variant::Sde => lab.config.spatial_baseline(),
                Variant::SdeTep => lab.config.clone(),
            };
            cfg.guidance.cfg_scale = w;
            let arm_lab = lab.with_config(cfg);
            let mode = if variant == Variant::Ode { SampleMode::Ode } else { SampleMode::Sde };
            let plan = uniform_plan(mode, steps);
            let vals: Vec<f64> = seeds
                .par_iter()
                .map(|&seed| {
                    let sampler = arm_lab.sampler().with_redraw(RedrawPolicy::PerSdeStep);
                    let samples = (0..k as u64)
                        .map(|i| Ok(sampler.run_trajectory(&plan, Lineage::single(seed, i))?.latent))
                        .collect::<Result<Vec<_>>>()?;
                    diversity(&samples, &projector)
                })
                .collect::<Result<_>>()?;
            out.push(w, variant.name(), seeds, vals);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Ndfe,
    Nrfe,
}

/// Search config realizing `budget` on the axis. NDFE budgets map to BoN
/// with `budget / T` candidates; NRFE budgets map to particle search with
/// the configured particles and children and `budget / (P * M)` evenly
/// spaced checkpoints.
pub fn budget_config(base: &SearchConfig, steps: usize, axis: Axis, budget: usize) -> Result<SearchConfig> {
    let mut cfg = base.clone();
    match axis {
        Axis::Ndfe => {
            if budget == 0 || !budget.is_multiple_of(steps) {
                let lo = (budget / steps).max(1) * steps;
                let hi = (budget / steps + 1) * steps;
                let mut nearest = vec![lo];
                if hi != lo {
                    nearest.push(hi);
                }
                return Err(Error::UnreachableBudget { requested: budget, nearest });
            }
            cfg.strategy = Strategy::BestOfN;
            cfg.n = budget / steps;
        }
        Axis::Nrfe => {
            let live = base.particles * base.children;
            let achievable: Vec<usize> =
                (1..=steps).filter(|c| steps.is_multiple_of(*c)).map(|c| c * live).collect();
            if !achievable.contains(&budget) {
                let mut by_dist = achievable.clone();
                by_dist.sort_by_key(|b| (b.abs_diff(budget), *b));
                return Err(Error::UnreachableBudget { requested: budget, nearest: by_dist.into_iter().take(2).collect() });
            }
            cfg.strategy = Strategy::Particle;
            cfg.block = steps / (budget / live);
        }
    }
    Ok(cfg)
}

/// Mean best reward per budget, with and without perturbation and shaping.
pub fn scaling_curves(lab: &Lab, axis: Axis, budgets: &[usize], seeds: &[u64]) -> Result<SweepResult> {
    require_seeds(seeds)?;
    let steps = lab.config.sampler.steps;
    let mut out = SweepResult::new("scaling");
    let arms = [("tep", lab.config.clone()), ("no_tep", lab.config.spatial_baseline())];
    for &budget in budgets {
        let search = budget_config(&lab.config.search, steps, axis, budget)?;
        for (arm, cfg) in &arms {
            let arm_lab = lab.with_config(cfg.clone());
            let verifier = arm_lab.verifier();
            let reward = |x: &LatentGrid| verifier.score(x);
            let vals: Vec<f64> = seeds
                .par_iter()
                .map(|&seed| {
                    let sampler = arm_lab.sampler();
                    let res = match axis {
                        Axis::Ndfe => {
                            let plan = uniform_plan(arm_lab.config.sampler.mode, steps);
                            best_of_n(&sampler, &plan, search.n, seed, &reward)?
                        }
                        Axis::Nrfe => particle_search(&sampler, &search, seed, &reward)?,
                    };
                    Ok(res.best_reward)
                })
                .collect::<Result<_>>()?;
            out.push(budget, arm, seeds, vals);
        }
    }
    Ok(out)
}

/// Per-seed best-over-first-n curves of one BoN run.
pub fn bon_prefix_curves(lab: &Lab, n: usize, seeds: &[u64]) -> Result<Vec<Vec<f64>>> {
    let verifier = lab.verifier();
    let reward = |x: &LatentGrid| verifier.score(x);
    let plan = uniform_plan(lab.config.sampler.mode, lab.config.sampler.steps);
    seeds
        .par_iter()
        .map(|&seed| Ok(running_max(&best_of_n(&lab.sampler(), &plan, n, seed, &reward)?.rewards)))
        .collect()
}
