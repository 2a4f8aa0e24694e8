use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tepkit::io::{encode_pgm, grid_csv};
use tepkit::search::{run_strategy, SearchResult};
use tepkit::{ExperimentConfig, Lab, LatentGrid};

use crate::artifacts::{jsonl, with_artifacts};
use crate::error::CliResult;
use crate::manifest::{write_manifest, RunManifest, Timings, RESOLVED_CONFIG};

pub const RESULTS: &str = "results.jsonl";
pub const EVENTS: &str = "events.jsonl";

/// One line of `results.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub strategy: String,
    /// Whether embedding perturbation or noise shaping was active.
    pub tep: bool,
    pub best_reward: f64,
    pub ndfe: usize,
    pub nrfe: usize,
    pub rewards: Vec<f64>,
    pub history: Vec<f64>,
}

#[derive(Serialize)]
struct TrajectoryLine<'a> {
    seed: u64,
    step: usize,
    mode: &'a tepkit::config::SampleMode,
    x0_reward: Option<f64>,
}

pub fn method_active(cfg: &ExperimentConfig) -> bool {
    !cfg.tep.is_zero(cfg.sampler.steps) || cfg.noiseshape.enabled
}

fn search_one(lab: &Lab, seed: u64) -> CliResult<SearchResult> {
    let verifier = lab.verifier();
    let reward = |x: &LatentGrid| verifier.score(x);
    let sampler = lab.sampler().with_recorder(&reward);
    Ok(run_strategy(&sampler, &lab.config.search, seed, &reward)?)
}

pub fn cmd_run(cfg: ExperimentConfig, seeds: &[u64], out: &Path) -> CliResult<RunManifest> {
    let start = Instant::now();
    let lab = Lab::new(cfg)?;
    let results: Vec<SearchResult> =
        seeds.par_iter().map(|&seed| search_one(&lab, seed)).collect::<CliResult<_>>()?;
    with_artifacts(out, |art| {
        art.write(RESOLVED_CONFIG, lab.config.to_toml().as_bytes())?;
        let tep = method_active(&lab.config);
        let strategy = lab.config.search.strategy.name().to_string();
        let mut events = Vec::new();
        let mut records = Vec::new();
        for (&seed, res) in seeds.iter().zip(&results) {
            let lines = res.best.records.iter().map(|r| TrajectoryLine {
                seed,
                step: r.step,
                mode: &r.mode,
                x0_reward: r.x0_reward,
            });
            art.write(&format!("trajectory_s{seed}.jsonl"), jsonl(lines).as_bytes())?;
            for ev in &res.events {
                let mut v = serde_json::to_value(ev).expect("event serializes");
                v.as_object_mut().expect("events are objects").insert("seed".into(), seed.into());
                events.push(v);
            }
            let (pgm, scaling) = encode_pgm(&res.best.latent);
            art.write(&format!("final_s{seed}.pgm"), &pgm)?;
            art.write(
                &format!("final_s{seed}.json"),
                serde_json::to_string_pretty(&scaling).expect("scaling serializes").as_bytes(),
            )?;
            art.write(&format!("final_s{seed}.csv"), grid_csv(&res.best.latent).as_bytes())?;
            records.push(RunRecord {
                seed,
                strategy: strategy.clone(),
                tep,
                best_reward: res.best_reward,
                ndfe: res.ndfe,
                nrfe: res.nrfe,
                rewards: res.rewards.clone(),
                history: res.history.clone(),
            });
        }
        art.write(EVENTS, jsonl(&events).as_bytes())?;
        art.write(RESULTS, jsonl(&records).as_bytes())?;
        let timings = Timings {
            total_ms: start.elapsed().as_secs_f64() * 1e3,
            per_seed_ms: results.iter().map(|r| r.wall_time.as_secs_f64() * 1e3).collect(),
        };
        write_manifest(art, "run", None, &lab.config, seeds, timings)
    })
}
