//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line each, and exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use tepkit::analysis::{
    bon_prefix_curves, diversity_vs_cfg, influence_probe, mean_stderr, scaling_curves, sde_to_ode_sweep,
    tolerance_sweep, Axis, Source, SweepResult, ToleranceDimension, Variant,
};
use tepkit::config::{ModelSpec, NoiseShapeConfig, SampleMode, SearchConfig, Selection, Strategy};
use tepkit::guidance::cfg_combine;
use tepkit::noiseshape::{dft_forward, dft_inverse, energy_fraction_above, low_pass, shape_noise};
use tepkit::reward::cosine_dissimilarity;
use tepkit::sampler::{forward_noise, ode_update, predict_x0, sde_update, time_levels, uniform_plan, vp_schedule};
use tepkit::search::{
    best_of_n, importance_weights, particle_search, run_strategy, search_over_paths, systematic_resample,
    SearchResult,
};
use tepkit::tep::Lineage;
use tepkit::toymodel::{build_model, ConditionVector, ToyModel};
use tepkit::{derive_stream, labels, ExperimentConfig, Lab, LatentGrid, ScheduleSpec};

const FD_REL_TOL: f64 = 1e-4;
const FD_BUDGET: Duration = Duration::from_secs(60);
const ROUND_TRIP_TOL: f64 = 1e-10;
const FILTER_TOL: f64 = 1e-12;
const ABOVE_CUTOFF_TOL: f64 = 1e-10;
const MOMENT_TOL: f64 = 1e-12;
const METRIC_TOL: f64 = 1e-12;
const PARSEVAL_TOL: f64 = 1e-10;
const SUITE_BUDGET: Duration = Duration::from_secs(600);

const IDENTITY_SEEDS: u64 = 20;
const REGRESSION_SEEDS: u64 = 200;

// Means from the first verified 200-seed runs at default settings.
const PIN_SWITCH: [(usize, f64); 5] = [
    (0, -139.39038366895883),
    (16, -158.49600136258982),
    (32, -160.08751760034346),
    (48, -161.0220244480811),
    (64, -173.77796064332796),
];
const TOLERANCE_MAGNITUDES: [f64; 6] = [0.0, 0.25, 0.5, 1.0, 1.5, 2.0];
const PIN_TOL_COND: [f64; 6] = [
    -139.39038366895883,
    -44.07733701747125,
    16.146005108502255,
    -20.390738035253293,
    -183.3751894133692,
    -428.1317583102923,
];
const PIN_TOL_UNCOND: [f64; 6] = [
    -139.39038366895883,
    -97.75923889971077,
    -45.078193572389075,
    13.195418760320067,
    15.242267512335516,
    -21.92451430121431,
];
const PIN_DIVERSITY: [(&str, f64); 3] =
    [("ode", 0.341998282170157), ("sde", 0.3180930133355519), ("sde_tep", 0.32174604568112997)];
const PIN_SCALING: [(&str, f64); 2] = [("tep", -79.91457466377841), ("no_tep", -126.29397409012967)];
const DIVERSITY_CFG: f64 = 5.0;
const NRFE_BUDGET: usize = 256;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn default_lab() -> Lab {
    Lab::new(ExperimentConfig::default()).expect("default config is valid")
}

fn seeds(n: u64) -> Vec<u64> {
    (0..n).collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let spec = ModelSpec { components: 3, base_cutoff: 0.4, ..ModelSpec::default() };
    let embed_dim = 16;
    let model = build_model(&spec, 4, 4, embed_dim).map_err(|e| e.to_string())?;
    let mut rng = derive_stream(11, &labels!["oracle-fd"]).unwrap();
    let mut worst = 0.0f64;
    for probe in 0..100 {
        let v = ConditionVector(rng.normals(embed_dim));
        let t = 0.05 + 0.9 * rng.uniform();
        let (alpha, sigma) = vp_schedule(t);
        let x = if probe % 2 == 0 {
            let means = model.component_means(&v);
            let mu = &means[probe / 2 % means.len()];
            let s = (alpha * alpha * model.within_std().powi(2) + sigma * sigma).sqrt();
            mu.map(|m| alpha * m + s * rng.normal())
        } else {
            LatentGrid::from_fn(4, 4, |_, _| 1.5 * rng.normal())
        };
        let eps = model.exact_epsilon(&x, t, &v).map_err(|e| e.to_string())?;
        let h = 1e-5;
        let mut fd = Vec::with_capacity(x.len());
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.values_mut()[i] += h;
            let mut xm = x.clone();
            xm.values_mut()[i] -= h;
            let grad = (model.marginal_log_density(&xp, t, &v).unwrap()
                - model.marginal_log_density(&xm, t, &v).unwrap())
                / (2.0 * h);
            fd.push(-sigma * grad);
        }
        worst = worst.max(rel_err(eps.values(), &fd));
    }
    let elapsed = start.elapsed();
    check(
        worst < FD_REL_TOL && elapsed < FD_BUDGET,
        format!("max rel err {worst:.2e} over 100 probes in {elapsed:.2?}"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = derive_stream(12, &labels!["spectral"]).unwrap();
    let mut round_trip = 0.0f64;
    let mut idempotence = 0.0f64;
    let mut nesting = 0.0f64;
    let max_abs = |a: &LatentGrid, b: &LatentGrid| {
        a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    };
    for i in 0..200 {
        let (h, w) = [(16, 16), (8, 12), (5, 7), (16, 9)][i % 4];
        let x = LatentGrid::from_fn(h, w, |_, _| rng.normal());
        round_trip = round_trip.max(max_abs(&dft_inverse(&dft_forward(&x)), &x));
        let p = rng.uniform();
        let q = rng.uniform();
        let lp = low_pass(&x, p).unwrap();
        idempotence = idempotence.max(max_abs(&low_pass(&lp, p).unwrap(), &lp));
        let nested = low_pass(&low_pass(&x, p.max(q)).unwrap(), p.min(q)).unwrap();
        nesting = nesting.max(max_abs(&nested, &low_pass(&x, p.min(q)).unwrap()));
    }
    let cfg = NoiseShapeConfig { enabled: true, cutoff: ScheduleSpec::constant(0.5) };
    let mut above = 0.0f64;
    for d in 0..1000u64 {
        let mut r = derive_stream(12, &labels!["shaped", d]).unwrap();
        let z = shape_noise(0, 1, &cfg, 16, 16, &mut r).unwrap();
        above = above.max(energy_fraction_above(&z, 0.5));
    }
    check(
        round_trip < ROUND_TRIP_TOL && idempotence < FILTER_TOL && nesting < FILTER_TOL && above < ABOVE_CUTOFF_TOL,
        format!(
            "round trip {round_trip:.1e}, idempotence {idempotence:.1e}, nesting {nesting:.1e}, above-cutoff {above:.1e}"
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut worst_mean = 0.0f64;
    let mut worst_std = 0.0f64;
    let mut count = 0;
    for (k, p) in [0.1, 0.25, 0.5, 0.75, 1.0].into_iter().enumerate() {
        let cfg = NoiseShapeConfig { enabled: true, cutoff: ScheduleSpec::constant(p) };
        for d in 0..1000u64 {
            let mut r = derive_stream(13, &labels!["moments", k, d]).unwrap();
            let z = shape_noise(0, 1, &cfg, 16, 16, &mut r).unwrap();
            worst_mean = worst_mean.max(z.mean().abs());
            worst_std = worst_std.max((z.std() - 1.0).abs());
            count += 1;
        }
    }
    check(
        worst_mean < MOMENT_TOL && worst_std < MOMENT_TOL,
        format!("{count} outputs, max |mean| {worst_mean:.1e}, max |std-1| {worst_std:.1e}"),
    )
}

/// Sampler with spatial randomness only, written against the model and
/// update primitives directly.
struct Baseline<'a> {
    model: &'a ToyModel,
    v_cond: ConditionVector,
    v_uncond: ConditionVector,
    w: f64,
    eta: f64,
    levels: Vec<f64>,
    steps: usize,
}

struct Run {
    latent: LatentGrid,
    step: usize,
}

impl<'a> Baseline<'a> {
    fn new(lab: &'a Lab) -> Self {
        let c = &lab.config;
        Self {
            model: &lab.model,
            v_cond: lab.model.condition_vector(&lab.pair.cond).unwrap(),
            v_uncond: lab.model.condition_vector(&lab.pair.uncond).unwrap(),
            w: c.guidance.cfg_scale,
            eta: c.sampler.eta,
            levels: time_levels(c.sampler.steps, c.sampler.t_max),
            steps: c.sampler.steps,
        }
    }

    fn eps(&self, x: &LatentGrid, step: usize) -> LatentGrid {
        let t = self.levels[step];
        let ec = self.model.exact_epsilon(x, t, &self.v_cond).unwrap();
        if self.w == 1.0 {
            return ec;
        }
        let eu = self.model.exact_epsilon(x, t, &self.v_uncond).unwrap();
        cfg_combine(&eu, &ec, self.w).unwrap()
    }

    fn init(&self, lin: &Lineage) -> LatentGrid {
        let mut r = derive_stream(lin.root, &lin.labels("init", 0)).unwrap();
        LatentGrid::from_fn(self.model.height(), self.model.width(), |_, _| r.normal())
    }

    fn advance(&self, mut run: Run, plan: &[SampleMode], until: usize, lin: &Lineage) -> Run {
        while run.step < until {
            let s = run.step;
            let (t, tn) = (self.levels[s], self.levels[s + 1]);
            let eps = self.eps(&run.latent, s);
            run.latent = match plan[s] {
                SampleMode::Sde if self.eta != 0.0 => {
                    let mut r = derive_stream(lin.root, &lin.labels("sde", s)).unwrap();
                    let z = LatentGrid::from_fn(self.model.height(), self.model.width(), |_, _| r.normal());
                    sde_update(&run.latent, &eps, &z, t, tn, self.eta).unwrap()
                }
                _ => ode_update(&run.latent, &eps, t, tn).unwrap(),
            };
            run.step += 1;
        }
        run
    }

    fn trajectory(&self, plan: &[SampleMode], lin: &Lineage) -> LatentGrid {
        self.advance(Run { latent: self.init(lin), step: 0 }, plan, self.steps, lin).latent
    }
}

struct Outputs {
    best: LatentGrid,
    rewards: Vec<f64>,
}

fn stable_desc(r: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..r.len()).collect();
    idx.sort_by(|&a, &b| r[b].total_cmp(&r[a]).then(a.cmp(&b)));
    idx
}

fn first_max(r: &[f64]) -> usize {
    let mut b = 0;
    for i in 1..r.len() {
        if r[i] > r[b] {
            b = i;
        }
    }
    b
}

fn baseline_bon(base: &Baseline, plan: &[SampleMode], n: usize, root: u64, score: &dyn Fn(&LatentGrid) -> f64) -> Outputs {
    let xs: Vec<LatentGrid> = (0..n as u64).map(|i| base.trajectory(plan, &Lineage::single(root, i))).collect();
    let rewards: Vec<f64> = xs.iter().map(score).collect();
    Outputs { best: xs[first_max(&rewards)].clone(), rewards }
}

fn baseline_zero_order(base: &Baseline, cfg: &SearchConfig, root: u64, score: &dyn Fn(&LatentGrid) -> f64) -> Outputs {
    let ode = uniform_plan(SampleMode::Ode, base.steps);
    let lam = cfg.zo_radius;
    let keep = (1.0 - lam * lam).max(0.0).sqrt();
    let pivot_lin = Lineage::single(root, 0);
    let mut pivot = base.init(&pivot_lin);
    let mut best = base.trajectory(&ode, &pivot_lin);
    let mut pivot_reward = score(&best);
    let mut best_reward = pivot_reward;
    let mut rewards = vec![pivot_reward];
    for round in 1..=cfg.zo_rounds as u64 {
        let mut round_out = Vec::new();
        for i in 0..cfg.n as u64 {
            let lin = Lineage::new(root, vec![round, i]);
            let mut r = derive_stream(root, &lin.labels("zo", 0)).unwrap();
            let init = pivot.map(|p| keep * p + lam * r.normal());
            let x = base.advance(Run { latent: init.clone(), step: 0 }, &ode, base.steps, &lin).latent;
            let s = score(&x);
            round_out.push((init, x, s));
        }
        let rs: Vec<f64> = round_out.iter().map(|o| o.2).collect();
        rewards.extend_from_slice(&rs);
        let top = first_max(&rs);
        if rs[top] > pivot_reward {
            pivot = round_out[top].0.clone();
            pivot_reward = rs[top];
            if rs[top] > best_reward {
                best_reward = rs[top];
                best = round_out[top].1.clone();
            }
        }
    }
    Outputs { best, rewards }
}

fn baseline_particle(base: &Baseline, cfg: &SearchConfig, root: u64, score: &dyn Fn(&LatentGrid) -> f64) -> Outputs {
    let sde = uniform_plan(SampleMode::Sde, base.steps);
    let (p, m) = (cfg.particles, cfg.children);
    let mut parents: Vec<LatentGrid> = (0..p as u64).map(|i| base.init(&Lineage::single(root, i))).collect();
    let mut step = 0;
    loop {
        let next = (step + cfg.block).min(base.steps);
        let children: Vec<LatentGrid> = (0..p * m)
            .map(|slot| {
                let lin = Lineage::single(root, slot as u64);
                base.advance(Run { latent: parents[slot / m].clone(), step }, &sde, next, &lin).latent
            })
            .collect();
        let rewards: Vec<f64> = children
            .iter()
            .map(|x| {
                if next == base.steps {
                    score(x)
                } else {
                    let t = base.levels[next];
                    score(&predict_x0(x, &base.eps(x, next), t).unwrap())
                }
            })
            .collect();
        if next == base.steps {
            return Outputs { best: children[first_max(&rewards)].clone(), rewards };
        }
        let kept: Vec<usize> = match cfg.selection {
            Selection::GreedyTopk => stable_desc(&rewards).into_iter().take(p).collect(),
            Selection::Importance => {
                let w = importance_weights(&rewards, cfg.temperature).unwrap();
                let mut r = derive_stream(root, &Lineage::single(root, 0).labels("resample", next)).unwrap();
                systematic_resample(&w, p, &mut r).unwrap()
            }
        };
        parents = kept.iter().map(|&i| children[i].clone()).collect();
        step = next;
    }
}

fn baseline_paths(base: &Baseline, cfg: &SearchConfig, root: u64, score: &dyn Fn(&LatentGrid) -> f64) -> Outputs {
    let ode = uniform_plan(SampleMode::Ode, base.steps);
    let first = baseline_bon(base, &ode, cfg.n, root, score);
    let mut rewards = first.rewards.clone();
    let mut pool: Vec<(LatentGrid, f64)> = (0..cfg.n as u64)
        .map(|i| base.trajectory(&ode, &Lineage::single(root, i)))
        .zip(first.rewards)
        .collect();
    let back_to = base.steps - cfg.resolved_sop_depth(base.steps).min(base.steps);
    for round in 1..=cfg.sop_rounds as u64 {
        let order = stable_desc(&pool.iter().map(|p| p.1).collect::<Vec<_>>());
        let topk = cfg.sop_topk.min(pool.len());
        let mut fresh = Vec::new();
        for (q, &i) in order.iter().take(topk).enumerate() {
            let lin = Lineage::new(root, vec![round, q as u64]);
            let mut r = derive_stream(root, &lin.labels("renoise", back_to)).unwrap();
            let x = forward_noise(&pool[i].0, 0.0, base.levels[back_to], &mut r).unwrap();
            let x = base.advance(Run { latent: x, step: back_to }, &ode, base.steps, &lin).latent;
            let s = score(&x);
            rewards.push(s);
            fresh.push((x, s));
        }
        pool.extend(fresh);
        let order = stable_desc(&pool.iter().map(|p| p.1).collect::<Vec<_>>());
        pool = order.iter().take(cfg.n).map(|&i| pool[i].clone()).collect();
    }
    Outputs { best: pool[0].0.clone(), rewards }
}

fn same_outputs(lib: &SearchResult, base: &Outputs) -> bool {
    lib.best.latent.bit_eq(&base.best)
        && lib.rewards.len() == base.rewards.len()
        && lib.rewards.iter().zip(&base.rewards).all(|(a, b)| a.to_bits() == b.to_bits())
}

fn criterion_4() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.tep.w1 = ScheduleSpec::zero();
    cfg.tep.w2 = ScheduleSpec::zero();
    cfg.noiseshape.enabled = false;
    let lab = Lab::new(cfg).map_err(|e| e.to_string())?;
    let base = Baseline::new(&lab);
    let verifier = lab.verifier();
    let reward = |x: &LatentGrid| verifier.score(x);
    let score = |x: &LatentGrid| verifier.score(x).unwrap();
    let strategies: Vec<(&str, SearchConfig)> = vec![
        ("best_of_n", SearchConfig { strategy: Strategy::BestOfN, ..lab.config.search.clone() }),
        ("zero_order", SearchConfig { strategy: Strategy::ZeroOrder, ..lab.config.search.clone() }),
        ("particle_greedy", SearchConfig { strategy: Strategy::Particle, ..lab.config.search.clone() }),
        (
            "particle_importance",
            SearchConfig { strategy: Strategy::Particle, selection: Selection::Importance, ..lab.config.search.clone() },
        ),
        ("search_over_paths", SearchConfig { strategy: Strategy::SearchOverPaths, ..lab.config.search.clone() }),
    ];
    let mut mismatches = Vec::new();
    for (name, sc) in &strategies {
        let bad: Vec<u64> = seeds(IDENTITY_SEEDS)
            .into_par_iter()
            .filter(|&seed| {
                let lib = run_strategy(&lab.sampler(), sc, seed, &reward).unwrap();
                let reference = match sc.strategy {
                    Strategy::BestOfN => baseline_bon(&base, &uniform_plan(lab.config.sampler.mode, base.steps), sc.n, seed, &score),
                    Strategy::ZeroOrder => baseline_zero_order(&base, sc, seed, &score),
                    Strategy::Particle => baseline_particle(&base, sc, seed, &score),
                    Strategy::SearchOverPaths => baseline_paths(&base, sc, seed, &score),
                };
                !same_outputs(&lib, &reference)
            })
            .collect();
        if !bad.is_empty() {
            mismatches.push(format!("{name} seeds {bad:?}"));
        }
    }
    check(
        mismatches.is_empty(),
        if mismatches.is_empty() {
            format!("{} strategies x {IDENTITY_SEEDS} seeds byte-identical", strategies.len())
        } else {
            mismatches.join("; ")
        },
    )
}

fn criterion_5() -> Outcome {
    let lab = default_lab();
    let verifier = lab.verifier();
    let reward = |x: &LatentGrid| verifier.score(x);
    let steps = lab.config.sampler.steps;
    let sde = uniform_plan(SampleMode::Sde, steps);
    let ode = uniform_plan(SampleMode::Ode, steps);
    let particle_cfg = SearchConfig {
        strategy: Strategy::Particle,
        particles: 1,
        children: 1,
        selection: Selection::GreedyTopk,
        ..lab.config.search.clone()
    };
    let paths_cfg = SearchConfig { strategy: Strategy::SearchOverPaths, sop_rounds: 0, ..lab.config.search.clone() };
    let failures: Vec<String> = seeds(IDENTITY_SEEDS)
        .into_par_iter()
        .flat_map_iter(|seed| {
            let sampler = lab.sampler();
            let mut bad = Vec::new();
            let bon = best_of_n(&sampler, &sde, 1, seed, &reward).unwrap();
            let single = sampler.clone().run_trajectory(&sde, Lineage::single(seed, 0)).unwrap();
            if !bon.best.latent.bit_eq(&single.latent) {
                bad.push(format!("bon seed {seed}"));
            }
            let particle = particle_search(&sampler, &particle_cfg, seed, &reward).unwrap();
            let per_step = sampler
                .clone()
                .with_redraw(tepkit::config::RedrawPolicy::PerSdeStep)
                .run_trajectory(&sde, Lineage::single(seed, 0))
                .unwrap();
            if !particle.best.latent.bit_eq(&per_step.latent) {
                bad.push(format!("particle seed {seed}"));
            }
            let paths = search_over_paths(&sampler, &paths_cfg, seed, &reward).unwrap();
            let ode_bon = best_of_n(&sampler, &ode, paths_cfg.n, seed, &reward).unwrap();
            if !paths.best.latent.bit_eq(&ode_bon.best.latent)
                || paths.rewards.iter().zip(&ode_bon.rewards).any(|(a, b)| a.to_bits() != b.to_bits())
            {
                bad.push(format!("paths seed {seed}"));
            }
            bad
        })
        .collect();
    check(
        failures.is_empty(),
        if failures.is_empty() {
            format!("3 identities x {IDENTITY_SEEDS} seeds byte-identical")
        } else {
            failures.join(", ")
        },
    )
}

fn criterion_6() -> Outcome {
    let lab = default_lab();
    let curves = bon_prefix_curves(&lab, 16, &seeds(REGRESSION_SEEDS)).map_err(|e| e.to_string())?;
    let violations: usize = curves.iter().map(|c| c.windows(2).filter(|w| w[1] < w[0]).count()).sum();
    let lengths_ok = curves.iter().all(|c| c.len() == 16);
    check(
        violations == 0 && lengths_ok && curves.len() == REGRESSION_SEEDS as usize,
        format!("{} seeds x n=1..16, {violations} violations", curves.len()),
    )
}

fn criterion_7() -> Outcome {
    let mut rng = derive_stream(17, &labels!["resampling"]).unwrap();
    let mut violations = 0;
    let mut trials = 0;
    for &p in &[4usize, 10, 37] {
        for _ in 0..1000 {
            let k = 1 + rng.below(50);
            let raw: Vec<f64> = (0..k).map(|_| rng.uniform().powi(3)).collect();
            let total: f64 = raw.iter().sum();
            if total == 0.0 {
                continue;
            }
            let w: Vec<f64> = raw.iter().map(|r| r / total).collect();
            let idx = systematic_resample(&w, p, &mut rng).map_err(|e| e.to_string())?;
            let mut counts = vec![0usize; k];
            for i in idx {
                counts[i] += 1;
            }
            for (c, wi) in counts.iter().zip(&w) {
                let e = p as f64 * wi;
                // Tiny slack for the cumulative sum's rounding.
                if (*c as f64) < (e - 1e-9).floor() || (*c as f64) > (e + 1e-9).ceil() {
                    violations += 1;
                }
            }
            trials += 1;
        }
    }
    check(violations == 0, format!("{trials} weight vectors, {violations} count violations"))
}

fn criterion_8() -> Outcome {
    let mut rng = derive_stream(18, &labels!["metric"]).unwrap();
    let mut worst_self = 0.0f64;
    let mut worst_neg = 0.0f64;
    let mut worst_scale = 0.0f64;
    let mut out_of_range = 0;
    for _ in 0..1000 {
        let d = 1 + rng.below(64);
        let x = rng.normals(d);
        let y = rng.normals(d);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let a = 10f64.powf(4.0 * rng.uniform() - 2.0);
        let b = -(10f64.powf(4.0 * rng.uniform() - 2.0));
        let ax: Vec<f64> = x.iter().map(|v| a * v).collect();
        let by: Vec<f64> = y.iter().map(|v| b * v).collect();
        let s = cosine_dissimilarity(&x, &y).map_err(|e| e.to_string())?;
        if !(0.0..=1.0).contains(&s) {
            out_of_range += 1;
        }
        worst_self = worst_self.max(cosine_dissimilarity(&x, &x).unwrap().abs());
        worst_neg = worst_neg.max(cosine_dissimilarity(&x, &neg).unwrap().abs());
        worst_scale = worst_scale.max((cosine_dissimilarity(&ax, &by).unwrap() - s).abs());
    }
    check(
        worst_self < METRIC_TOL && worst_neg < METRIC_TOL && worst_scale < METRIC_TOL && out_of_range == 0,
        format!("1000 pairs: s(x,x) {worst_self:.1e}, s(x,-x) {worst_neg:.1e}, scale {worst_scale:.1e}, out of range {out_of_range}"),
    )
}

fn criterion_9() -> Outcome {
    let lab = default_lab();
    let steps = lab.config.sampler.steps;
    let mut worst = 0.0f64;
    let mut probes = 0;
    for step in (0..steps).step_by(8) {
        for source in [Source::Spatial, Source::Embedding, Source::Both] {
            let recs = influence_probe(&lab, step, source, &seeds(IDENTITY_SEEDS)).map_err(|e| e.to_string())?;
            for r in recs {
                worst = worst.max((r.mse_low + r.mse_high - r.mse_total).abs() / r.mse_total.max(1.0));
                probes += 1;
            }
        }
    }
    check(worst < PARSEVAL_TOL, format!("{probes} probes, max band-sum error {worst:.1e}"))
}

/// Measured mean within one stderr of its pin, for every pinned row.
fn regression(result: &SweepResult, pins: &[(String, String, f64)]) -> (bool, Vec<String>) {
    let mut ok = true;
    let mut notes = Vec::new();
    for (var, arm, pin) in pins {
        let row = result.row(var, arm).expect("pinned row exists");
        let within = (row.mean - pin).abs() <= row.stderr;
        ok &= within;
        notes.push(format!("{arm}@{var} {:.3}±{:.3}{}", row.mean, row.stderr, if within { "" } else { " (drift)" }));
    }
    (ok, notes)
}

fn criterion_10a(lab: &Lab) -> Outcome {
    let switches: Vec<usize> = PIN_SWITCH.iter().map(|p| p.0).collect();
    let res = sde_to_ode_sweep(lab, &switches, &seeds(REGRESSION_SEEDS)).map_err(|e| e.to_string())?;
    let pins: Vec<_> = PIN_SWITCH.iter().map(|(s, m)| (s.to_string(), "bon".to_string(), *m)).collect();
    let (pinned, notes) = regression(&res, &pins);
    let mean = |s: usize| res.row(&s.to_string(), "bon").unwrap().mean;
    let early = mean(0).min(mean(16));
    let late = mean(48).max(mean(64));
    check(pinned && early > late, format!("early min {early:.3} > late max {late:.3}; {}", notes.join(", ")))
}

fn peak_magnitude(res: &SweepResult, arm: &str) -> (f64, f64, f64) {
    let rows: Vec<_> = TOLERANCE_MAGNITUDES.iter().map(|m| res.row(&m.to_string(), arm).unwrap()).collect();
    let i = first_max(&rows.iter().map(|r| r.mean).collect::<Vec<_>>());
    let last = rows.last().unwrap();
    (TOLERANCE_MAGNITUDES[i], rows[i].mean - rows[i].stderr, last.mean + last.stderr)
}

fn criterion_10b(lab: &Lab) -> Outcome {
    let res = tolerance_sweep(lab, ToleranceDimension::Branch, &TOLERANCE_MAGNITUDES, &seeds(REGRESSION_SEEDS))
        .map_err(|e| e.to_string())?;
    let mut pins = Vec::new();
    for (arm, vals) in [("cond", PIN_TOL_COND), ("uncond", PIN_TOL_UNCOND)] {
        for (m, v) in TOLERANCE_MAGNITUDES.iter().zip(vals) {
            pins.push((m.to_string(), arm.to_string(), v));
        }
    }
    let (pinned, notes) = regression(&res, &pins);
    let (cond_peak, cond_lo, cond_last) = peak_magnitude(&res, "cond");
    let (uncond_peak, uncond_lo, uncond_last) = peak_magnitude(&res, "uncond");
    // Both arms must actually decline past their peak, by more than one stderr.
    let declines = cond_last < cond_lo && uncond_last < uncond_lo;
    check(
        pinned && declines && uncond_peak > cond_peak,
        format!("decline starts after {cond_peak} (cond) vs {uncond_peak} (uncond); {}", notes.join(", ")),
    )
}

fn criterion_10c(lab: &Lab) -> Outcome {
    let variants = [Variant::Ode, Variant::Sde, Variant::SdeTep];
    let res = diversity_vs_cfg(lab, &[DIVERSITY_CFG], &variants, &seeds(REGRESSION_SEEDS)).map_err(|e| e.to_string())?;
    let pins: Vec<_> = PIN_DIVERSITY.iter().map(|(a, m)| (DIVERSITY_CFG.to_string(), a.to_string(), *m)).collect();
    let (pinned, notes) = regression(&res, &pins);
    let d = |a: &str| res.row(&DIVERSITY_CFG.to_string(), a).unwrap().mean;
    let ordered = d("sde_tep") > d("sde") && d("sde") > d("ode");
    check(pinned && ordered, format!("want sde_tep > sde > ode at w={DIVERSITY_CFG}; {}", notes.join(", ")))
}

fn criterion_10d(lab: &Lab) -> Outcome {
    let res = scaling_curves(lab, Axis::Nrfe, &[NRFE_BUDGET], &seeds(REGRESSION_SEEDS)).map_err(|e| e.to_string())?;
    let pins: Vec<_> = PIN_SCALING.iter().map(|(a, m)| (NRFE_BUDGET.to_string(), a.to_string(), *m)).collect();
    let (pinned, notes) = regression(&res, &pins);
    let tep = res.values(&NRFE_BUDGET.to_string(), "tep");
    let base = res.values(&NRFE_BUDGET.to_string(), "no_tep");
    let diffs: Vec<f64> = tep.iter().zip(&base).map(|(a, b)| a - b).collect();
    let (md, se) = mean_stderr(&diffs);
    check(pinned && md >= 0.0, format!("paired diff {md:.3}±{se:.3} at NRFE {NRFE_BUDGET}; {}", notes.join(", ")))
}

fn main() {
    let suite_start = Instant::now();
    let lab = default_lab();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("1  oracle equivalence", Box::new(criterion_1)),
        ("2  spectral correctness", Box::new(criterion_2)),
        ("3  renormalization exactness", Box::new(criterion_3)),
        ("4  reduction to baseline", Box::new(criterion_4)),
        ("5  degenerate-search identities", Box::new(criterion_5)),
        ("6  best-of-n monotonicity", Box::new(criterion_6)),
        ("7  systematic resampling", Box::new(criterion_7)),
        ("8  dissimilarity metric", Box::new(criterion_8)),
        ("9  band decomposition", Box::new(criterion_9)),
        ("10a early vs late switch", Box::new(|| criterion_10a(&lab))),
        ("10b branch tolerance", Box::new(|| criterion_10b(&lab))),
        ("10c diversity ordering", Box::new(|| criterion_10c(&lab))),
        ("10d scaling with perturbation", Box::new(|| criterion_10d(&lab))),
    ];
    let mut failed = Vec::new();
    for (name, run) in &criteria {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed.push(*name);
                ("FAIL", d)
            }
        };
        println!("criterion {name:<34} {tag}  [{:.1?}] {detail}", t.elapsed());
    }
    let total = suite_start.elapsed();
    let in_budget = total < SUITE_BUDGET;
    if !in_budget {
        failed.push("11");
    }
    println!(
        "criterion {:<34} {}  total {total:.1?} (budget {SUITE_BUDGET:?})",
        "11 suite wall time",
        if in_budget { "PASS" } else { "FAIL" }
    );
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed {failed:?}");
        std::process::exit(1);
    }
}
