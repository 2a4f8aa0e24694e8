//! Test-time search strategies over a shared trajectory abstraction.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RedrawPolicy, SampleMode, SearchConfig, Selection, Strategy};
use crate::error::{Error, Result};
use crate::grid::LatentGrid;
use crate::rng::RngStream;
use crate::sampler::{uniform_plan, Sampler, Trajectory};
use crate::tep::{Lineage, StrategyEvent};

pub type RewardFn<'a> = dyn Fn(&LatentGrid) -> Result<f64> + Sync + 'a;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "event")]
pub enum SearchEvent {
    Candidate { index: usize, reward: f64 },
    Expansion { step: usize, parents: Vec<usize>, children: usize },
    Selection { step: usize, kept: Vec<usize>, rewards: Vec<f64> },
    Resample { step: usize, indices: Vec<usize>, weights: Vec<f64> },
    Round { round: usize, best_so_far: f64 },
    Warning { message: String },
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub best: Trajectory,
    pub best_reward: f64,
    /// Final rewards of every candidate, in candidate order.
    pub rewards: Vec<f64>,
    /// Best-so-far after each round (strategies with rounds) or candidate.
    pub history: Vec<f64>,
    pub ndfe: usize,
    pub nrfe: usize,
    pub wall_time: Duration,
    pub events: Vec<SearchEvent>,
}

/// Index of the maximum, ties to the lower index. NaN never wins.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] || values[best].is_nan() {
            best = i;
        }
    }
    best
}

pub fn running_max(values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut m = f64::NEG_INFINITY;
    for &v in values {
        m = m.max(v);
        out.push(m);
    }
    out
}

/// Indices sorted by reward descending; ties keep the lower index first.
fn ranked(rewards: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..rewards.len()).collect();
    idx.sort_by(|&a, &b| rewards[b].total_cmp(&rewards[a]).then(a.cmp(&b)));
    idx
}

fn run_candidates(
    sampler: &Sampler<'_>,
    plan: &[SampleMode],
    lineages: Vec<Lineage>,
    reward: &RewardFn<'_>,
) -> Result<Vec<(Trajectory, f64)>> {
    lineages
        .into_par_iter()
        .map(|lin| {
            let traj = sampler.run_trajectory(plan, lin)?;
            let r = reward(&traj.latent)?;
            Ok((traj, r))
        })
        .collect()
}

/// `n` independent full trajectories, each with its own start-of-run
/// perturbation draw; the best final reward wins.
pub fn best_of_n(
    sampler: &Sampler<'_>,
    plan: &[SampleMode],
    n: usize,
    root: u64,
    reward: &RewardFn<'_>,
) -> Result<SearchResult> {
    let start = Instant::now();
    if n == 0 {
        return Err(Error::Invalid("best_of_n needs n >= 1".into()));
    }
    let sampler = sampler.clone().with_redraw(RedrawPolicy::OnceAtStart);
    let lineages = (0..n as u64).map(|i| Lineage::single(root, i)).collect();
    let results = run_candidates(&sampler, plan, lineages, reward)?;
    let rewards: Vec<f64> = results.iter().map(|(_, r)| *r).collect();
    let ndfe = results.iter().map(|(t, _)| t.nfe).sum();
    let events = rewards.iter().enumerate().map(|(index, &reward)| SearchEvent::Candidate { index, reward }).collect();
    let best_idx = argmax(&rewards);
    let best = results.into_iter().nth(best_idx).expect("n >= 1").0;
    Ok(SearchResult {
        best,
        best_reward: rewards[best_idx],
        history: running_max(&rewards),
        rewards,
        ndfe,
        nrfe: n,
        wall_time: start.elapsed(),
        events,
    })
}

/// Local search over the initial latent by spherical mixing around a pivot.
pub fn zero_order(
    sampler: &Sampler<'_>,
    cfg: &SearchConfig,
    root: u64,
    reward: &RewardFn<'_>,
) -> Result<SearchResult> {
    let start = Instant::now();
    let sampler = sampler.clone().with_redraw(RedrawPolicy::OnceAtStart);
    let steps = sampler.steps();
    let plan = uniform_plan(SampleMode::Ode, steps);
    let lam = cfg.zo_radius;
    let keep = (1.0 - lam * lam).max(0.0).sqrt();

    let pivot_lin = Lineage::single(root, 0);
    let mut pivot = sampler.initial_latent(&pivot_lin);
    let first = sampler.run_trajectory(&plan, pivot_lin)?;
    let mut pivot_reward = reward(&first.latent)?;
    let mut ndfe = first.nfe;
    let mut nrfe = 1;
    let mut rewards = vec![pivot_reward];
    let mut best = first;
    let mut best_reward = pivot_reward;
    let mut history = Vec::with_capacity(cfg.zo_rounds);
    let mut events = vec![SearchEvent::Candidate { index: 0, reward: pivot_reward }];

    for round in 1..=cfg.zo_rounds {
        let proposals: Vec<(Lineage, LatentGrid)> = (0..cfg.n as u64)
            .map(|i| {
                let lin = Lineage::new(root, vec![round as u64, i]);
                let mut rng = lin.stream("zo", 0);
                let init = pivot.map(|p| keep * p + lam * rng.normal());
                (lin, init)
            })
            .collect();
        let results: Vec<(Trajectory, f64, LatentGrid)> = proposals
            .into_par_iter()
            .map(|(lin, init)| {
                let traj = sampler.start(init.clone(), lin);
                let traj = sampler.advance(traj, &plan, steps)?;
                let r = reward(&traj.latent)?;
                Ok((traj, r, init))
            })
            .collect::<Result<_>>()?;
        let round_rewards: Vec<f64> = results.iter().map(|r| r.1).collect();
        ndfe += results.iter().map(|r| r.0.nfe).sum::<usize>();
        nrfe += results.len();
        for (k, &r) in round_rewards.iter().enumerate() {
            events.push(SearchEvent::Candidate { index: rewards.len() + k, reward: r });
        }
        rewards.extend_from_slice(&round_rewards);
        let top = argmax(&round_rewards);
        if round_rewards[top] > pivot_reward {
            let (traj, r, init) = results.into_iter().nth(top).expect("non-empty round");
            pivot = init;
            pivot_reward = r;
            if r > best_reward {
                best_reward = r;
                best = traj;
            }
        }
        history.push(best_reward);
        events.push(SearchEvent::Round { round, best_so_far: best_reward });
    }
    Ok(SearchResult { best, best_reward, rewards, history, ndfe, nrfe, wall_time: start.elapsed(), events })
}

fn check_normalized(weights: &[f64]) -> Result<()> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::BadNormalization { sum });
    }
    Ok(())
}

/// Systematic resampling with explicit offset `u` in [0, 1).
pub fn systematic_resample_with_offset(weights: &[f64], count: usize, u: f64) -> Result<Vec<usize>> {
    check_normalized(weights)?;
    let mut cum = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cum.push(acc);
    }
    let total = acc;
    for c in &mut cum {
        *c /= total;
    }
    let last = cum.len() - 1;
    cum[last] = 1.0;
    let mut out = Vec::with_capacity(count);
    let mut j = 0;
    for i in 0..count {
        let pos = (u + i as f64) / count as f64;
        while j < last && pos >= cum[j] {
            j += 1;
        }
        out.push(j);
    }
    Ok(out)
}

pub fn systematic_resample(weights: &[f64], count: usize, rng: &mut RngStream) -> Result<Vec<usize>> {
    systematic_resample_with_offset(weights, count, rng.uniform())
}

/// Normalized weights proportional to `exp(reward / temp)`, where `temp`
/// is `temperature` times the observed reward range.
pub fn importance_weights(rewards: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if let Some(i) = rewards.iter().position(|r| !r.is_finite()) {
        return Err(Error::NonFiniteWeight { particle: i });
    }
    let max = rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = rewards.iter().cloned().fold(f64::INFINITY, f64::min);
    let range = max - min;
    let raw: Vec<f64> = if range > 0.0 {
        let temp = temperature * range;
        rewards.iter().map(|r| ((r - max) / temp).exp()).collect()
    } else {
        vec![1.0; rewards.len()]
    };
    if let Some(i) = raw.iter().position(|w| !w.is_finite()) {
        return Err(Error::NonFiniteWeight { particle: i });
    }
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Blockwise particle search with SDE expansions and greedy or importance selection.
pub fn particle_search(
    sampler: &Sampler<'_>,
    cfg: &SearchConfig,
    root: u64,
    reward: &RewardFn<'_>,
) -> Result<SearchResult> {
    let start = Instant::now();
    let sampler = sampler.clone().with_redraw(RedrawPolicy::PerSdeStep);
    let steps = sampler.steps();
    let plan = uniform_plan(SampleMode::Sde, steps);
    let (p_count, m_count, block) = (cfg.particles, cfg.children, cfg.block);
    if p_count == 0 || m_count == 0 || block == 0 {
        return Err(Error::Invalid("particles, children and block must be >= 1".into()));
    }
    let mut particles: Vec<Trajectory> = (0..p_count as u64)
        .map(|p| {
            let lin = Lineage::single(root, p);
            sampler.start(sampler.initial_latent(&lin), lin)
        })
        .collect();
    let mut ndfe = 0;
    let mut nrfe = 0;
    let mut events = Vec::new();
    let mut step = 0;
    loop {
        let next = (step + block).min(steps);
        let n_children = particles.len() * m_count;
        events.push(SearchEvent::Expansion { step, parents: (0..particles.len()).collect(), children: m_count });
        let seeds: Vec<Trajectory> = (0..n_children)
            .map(|slot| {
                let mut child = particles[slot / m_count].clone();
                child.lineage = Lineage::single(root, slot as u64);
                child.nfe = 0;
                child
            })
            .collect();
        let scored: Vec<(Trajectory, f64, usize)> = seeds
            .into_par_iter()
            .map(|child| {
                let mut child = sampler.advance(child, &plan, next)?;
                let (x0, extra) = sampler.lookahead_x0(&child)?;
                let r = reward(&x0)?;
                child.rewards.push((child.step, r));
                Ok((child, r, extra))
            })
            .collect::<Result<_>>()?;
        ndfe += scored.iter().map(|(c, _, extra)| c.nfe + extra).sum::<usize>();
        nrfe += scored.len();
        let rewards: Vec<f64> = scored.iter().map(|s| s.1).collect();
        if next == steps {
            let best_idx = argmax(&rewards);
            events.push(SearchEvent::Selection { step: next, kept: vec![best_idx], rewards: rewards.clone() });
            let best = scored.into_iter().nth(best_idx).expect("non-empty").0;
            return Ok(SearchResult {
                best,
                best_reward: rewards[best_idx],
                history: running_max(&rewards),
                rewards,
                ndfe,
                nrfe,
                wall_time: start.elapsed(),
                events,
            });
        }
        let kept: Vec<usize> = match cfg.selection {
            Selection::GreedyTopk => ranked(&rewards).into_iter().take(p_count).collect(),
            Selection::Importance => {
                let w = importance_weights(&rewards, cfg.temperature)?;
                let mut rng = Lineage::single(root, 0).stream("resample", next);
                let idx = systematic_resample(&w, p_count, &mut rng)?;
                events.push(SearchEvent::Resample { step: next, indices: idx.clone(), weights: w });
                idx
            }
        };
        events.push(SearchEvent::Selection { step: next, kept: kept.clone(), rewards: rewards.clone() });
        let pool: Vec<Trajectory> = scored.into_iter().map(|s| s.0).collect();
        particles = kept.iter().map(|&i| pool[i].clone()).collect();
        step = next;
    }
}

/// ODE candidates refined by re-noising the best ones and denoising again.
pub fn search_over_paths(
    sampler: &Sampler<'_>,
    cfg: &SearchConfig,
    root: u64,
    reward: &RewardFn<'_>,
) -> Result<SearchResult> {
    let start = Instant::now();
    let steps = sampler.steps();
    let plan = uniform_plan(SampleMode::Ode, steps);
    if cfg.sop_rounds == 0 {
        return best_of_n(sampler, &plan, cfg.n, root, reward);
    }
    let sampler_init = sampler.clone().with_redraw(RedrawPolicy::OnceAtStart);
    let lineages = (0..cfg.n as u64).map(|i| Lineage::single(root, i)).collect();
    let mut pool = run_candidates(&sampler_init, &plan, lineages, reward)?;
    let mut all_rewards: Vec<f64> = pool.iter().map(|p| p.1).collect();
    let mut events: Vec<SearchEvent> = all_rewards
        .iter()
        .enumerate()
        .map(|(index, &reward)| SearchEvent::Candidate { index, reward })
        .collect();
    let mut ndfe: usize = pool.iter().map(|p| p.0.nfe).sum();
    let mut nrfe = pool.len();

    let mut depth = cfg.resolved_sop_depth(steps);
    if depth > steps {
        events.push(SearchEvent::Warning {
            message: format!("re-noise depth {depth} exceeds available {steps}; clipped"),
        });
        eprintln!("warning: re-noise depth {depth} exceeds available {steps}; clipped");
        depth = steps;
    }
    let back_to = steps - depth;
    let resampler = sampler.clone().with_redraw(RedrawPolicy::PerResample);
    let mut history = Vec::with_capacity(cfg.sop_rounds);
    for round in 1..=cfg.sop_rounds {
        let topk = cfg.sop_topk.min(pool.len());
        let order = ranked(&pool.iter().map(|p| p.1).collect::<Vec<_>>());
        let chosen: Vec<(usize, &Trajectory)> =
            order.iter().take(topk).enumerate().map(|(q, &i)| (q, &pool[i].0)).collect();
        let fresh: Vec<(Trajectory, f64)> = chosen
            .into_par_iter()
            .map(|(q, parent)| {
                let lin = Lineage::new(root, vec![round as u64, q as u64]);
                let mut rng = lin.stream("renoise", back_to);
                let x = resampler.forward_noise(&parent.latent, steps, back_to, &mut rng)?;
                let mut traj = resampler.start_at(x, back_to, lin, parent.tep.clone());
                resampler.tep_event(&mut traj, StrategyEvent::Resample);
                let traj = resampler.advance(traj, &plan, steps)?;
                let r = reward(&traj.latent)?;
                Ok((traj, r))
            })
            .collect::<Result<_>>()?;
        ndfe += fresh.iter().map(|f| f.0.nfe).sum::<usize>();
        nrfe += fresh.len();
        for f in &fresh {
            events.push(SearchEvent::Candidate { index: all_rewards.len(), reward: f.1 });
            all_rewards.push(f.1);
        }
        pool.extend(fresh);
        let order = ranked(&pool.iter().map(|p| p.1).collect::<Vec<_>>());
        let mut merged: Vec<(Trajectory, f64)> = Vec::with_capacity(cfg.n);
        for &i in order.iter().take(cfg.n) {
            merged.push(pool[i].clone());
        }
        pool = merged;
        history.push(pool[0].1);
        events.push(SearchEvent::Round { round, best_so_far: pool[0].1 });
    }
    let (best, best_reward) = pool.into_iter().next().expect("non-empty pool");
    Ok(SearchResult {
        best,
        best_reward,
        rewards: all_rewards,
        history,
        ndfe,
        nrfe,
        wall_time: start.elapsed(),
        events,
    })
}

/// Run the configured strategy.
pub fn run_strategy(sampler: &Sampler<'_>, cfg: &SearchConfig, root: u64, reward: &RewardFn<'_>) -> Result<SearchResult> {
    match cfg.strategy {
        Strategy::BestOfN => {
            let plan = uniform_plan(sampler.config.sampler.mode, sampler.steps());
            best_of_n(sampler, &plan, cfg.n, root, reward)
        }
        Strategy::ZeroOrder => zero_order(sampler, cfg, root, reward),
        Strategy::Particle => particle_search(sampler, cfg, root, reward),
        Strategy::SearchOverPaths => search_over_paths(sampler, cfg, root, reward),
    }
}

/// Closed-form (NDFE, NRFE) of a strategy.
pub fn predicted_budget(cfg: &SearchConfig, steps: usize) -> (usize, usize) {
    match cfg.strategy {
        Strategy::BestOfN => (cfg.n * steps, cfg.n),
        Strategy::ZeroOrder => ((1 + cfg.zo_rounds * cfg.n) * steps, 1 + cfg.zo_rounds * cfg.n),
        Strategy::Particle => {
            let checkpoints = steps.div_ceil(cfg.block);
            let live = cfg.particles * cfg.children;
            (live * steps + (checkpoints - 1) * live, checkpoints * live)
        }
        Strategy::SearchOverPaths => {
            let depth = cfg.resolved_sop_depth(steps).min(steps);
            let topk = cfg.sop_topk.min(cfg.n);
            (cfg.n * steps + cfg.sop_rounds * topk * depth, cfg.n + cfg.sop_rounds * topk)
        }
    }
}
