use std::path::Path;
use std::time::Instant;

use clap::ValueEnum;
use tepkit::analysis::{
    band_attenuation_sweep, default_windows, diversity_vs_cfg, influence_csv, influence_probe, scaling_curves,
    sde_to_ode_sweep, tolerance_sweep, Axis, Source, SweepResult, ToleranceDimension, Variant,
};
use tepkit::noiseshape::Band;
use tepkit::{ExperimentConfig, Lab};

use crate::artifacts::{jsonl, with_artifacts};
use crate::error::{CliError, CliResult};
use crate::manifest::{write_manifest, RunManifest, Timings, RESOLVED_CONFIG};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Experiment {
    SdeToOde,
    BandAttenuation,
    Influence,
    Tolerance,
    DiversityCfg,
    Scaling,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::SdeToOde => "sde_to_ode",
            Experiment::BandAttenuation => "band_attenuation",
            Experiment::Influence => "influence",
            Experiment::Tolerance => "tolerance",
            Experiment::DiversityCfg => "diversity_cfg",
            Experiment::Scaling => "scaling",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AxisArg {
    Ndfe,
    Nrfe,
}

pub const TOLERANCE_MAGNITUDES: [f64; 6] = [0.0, 0.25, 0.5, 1.0, 1.5, 2.0];
const BUDGET_MULTIPLES: [usize; 5] = [1, 2, 4, 8, 16];

fn merge(name: &str, parts: Vec<SweepResult>) -> SweepResult {
    let mut out = SweepResult { name: name.to_string(), rows: Vec::new(), records: Vec::new() };
    for p in parts {
        out.rows.extend(p.rows);
        out.records.extend(p.records);
    }
    out
}

/// Budgets on the axis: multiples of T for NDFE; for NRFE, multiples of
/// the live particle count whose checkpoint count divides T.
pub fn default_budgets(cfg: &ExperimentConfig, axis: Axis) -> Vec<usize> {
    let steps = cfg.sampler.steps;
    match axis {
        Axis::Ndfe => BUDGET_MULTIPLES.iter().map(|m| m * steps).collect(),
        Axis::Nrfe => {
            let live = cfg.search.particles * cfg.search.children;
            BUDGET_MULTIPLES.iter().filter(|c| steps.is_multiple_of(**c)).map(|c| c * live).collect()
        }
    }
}

/// File name and contents of every output of one experiment.
fn outputs(lab: &Lab, exp: Experiment, axis: Option<AxisArg>, seeds: &[u64]) -> CliResult<Vec<(String, String)>> {
    let steps = lab.config.sampler.steps;
    let name = exp.name();
    let sweep = |r: SweepResult| vec![(format!("{name}.csv"), r.to_csv()), (format!("{name}_seeds.jsonl"), r.to_jsonl())];
    Ok(match exp {
        Experiment::SdeToOde => {
            let switches: Vec<usize> = (0..=steps).step_by((steps / 4).max(1)).collect();
            sweep(sde_to_ode_sweep(lab, &switches, seeds)?)
        }
        Experiment::BandAttenuation => {
            let windows = default_windows(steps);
            let low = band_attenuation_sweep(lab, Band::Low, &windows, seeds)?;
            let high = band_attenuation_sweep(lab, Band::High, &windows, seeds)?;
            sweep(merge(name, vec![low, high]))
        }
        Experiment::Influence => {
            let mut records = Vec::new();
            for step in (0..steps).step_by((steps / 8).max(1)) {
                for source in [Source::Spatial, Source::Embedding, Source::Both] {
                    records.extend(influence_probe(lab, step, source, seeds)?);
                }
            }
            vec![(format!("{name}.csv"), influence_csv(&records)), (format!("{name}_seeds.jsonl"), jsonl(&records))]
        }
        Experiment::Tolerance => {
            let parts = [ToleranceDimension::TimestepWindow, ToleranceDimension::Branch, ToleranceDimension::Layer]
                .into_iter()
                .map(|d| tolerance_sweep(lab, d, &TOLERANCE_MAGNITUDES, seeds))
                .collect::<tepkit::Result<Vec<_>>>()?;
            sweep(merge(name, parts))
        }
        Experiment::DiversityCfg => {
            let variants = [Variant::Ode, Variant::Sde, Variant::SdeTep];
            sweep(diversity_vs_cfg(lab, &lab.config.analysis.diversity_cfg, &variants, seeds)?)
        }
        Experiment::Scaling => {
            let axis = match axis.unwrap_or(AxisArg::Nrfe) {
                AxisArg::Ndfe => Axis::Ndfe,
                AxisArg::Nrfe => Axis::Nrfe,
            };
            let budgets = default_budgets(&lab.config, axis);
            sweep(scaling_curves(lab, axis, &budgets, seeds)?)
        }
    })
}

pub fn cmd_analyze(
    cfg: ExperimentConfig,
    exp: Experiment,
    axis: Option<AxisArg>,
    seeds: &[u64],
    out: &Path,
) -> CliResult<RunManifest> {
    if axis.is_some() && exp != Experiment::Scaling {
        return Err(CliError::Usage(format!("--axis applies only to the scaling experiment, not {}", exp.name())));
    }
    let start = Instant::now();
    let lab = Lab::new(cfg)?;
    let files = outputs(&lab, exp, axis, seeds)?;
    with_artifacts(out, |art| {
        art.write(RESOLVED_CONFIG, lab.config.to_toml().as_bytes())?;
        for (fname, text) in &files {
            art.write(fname, text.as_bytes())?;
        }
        let timings = Timings { total_ms: start.elapsed().as_secs_f64() * 1e3, per_seed_ms: Vec::new() };
        let experiment = match (exp, axis) {
            (Experiment::Scaling, a) => {
                format!("scaling_{}", if a == Some(AxisArg::Ndfe) { "ndfe" } else { "nrfe" })
            }
            _ => exp.name().to_string(),
        };
        write_manifest(art, "analyze", Some(experiment), &lab.config, seeds, timings)
    })
}
