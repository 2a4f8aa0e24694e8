use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tepkit::config::{NoiseShapeConfig, PerturbConfig, Strategy};
use tepkit::{resolve_config, ExperimentConfig};

use crate::artifacts::{Artifacts, FileEntry};
use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";
pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Timings {
    pub total_ms: f64,
    pub per_seed_ms: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<String>,
    /// Hash of `resolved_config.toml`.
    pub config_hash: String,
    /// Hash with the fields that may differ between compared arms reset.
    pub comparison_hash: String,
    pub seeds: Vec<u64>,
    pub out_dir: String,
    pub files: Vec<FileEntry>,
    pub timings: Timings,
}

/// Hash of everything except the perturbation, noise shaping, strategy
/// choice and default seed. Runs that agree on it can share a report.
pub fn comparison_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.seed = 0;
    c.tep = PerturbConfig::default();
    c.noiseshape = NoiseShapeConfig::default();
    c.search.strategy = Strategy::BestOfN;
    c.hash()
}

pub fn load_config(path: Option<&Path>, overrides: &[String]) -> CliResult<ExperimentConfig> {
    let text = match path {
        Some(p) => Some(
            fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", p.display())))?,
        ),
        None => None,
    };
    Ok(resolve_config(text.as_deref(), overrides)?)
}

pub fn write_manifest(
    out: &mut Artifacts,
    command: &str,
    experiment: Option<String>,
    cfg: &ExperimentConfig,
    seeds: &[u64],
    timings: Timings,
) -> CliResult<RunManifest> {
    let manifest = RunManifest {
        command: command.to_string(),
        experiment,
        config_hash: cfg.hash(),
        comparison_hash: comparison_hash(cfg),
        seeds: seeds.to_vec(),
        out_dir: out.dir().display().to_string(),
        files: out.files().to_vec(),
        timings,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    out.write(MANIFEST, text.as_bytes())?;
    Ok(manifest)
}

/// Manifest plus the config re-read from its directory; the stored hash
/// must match the recomputed one.
pub fn read_manifest(dir: &Path) -> CliResult<(RunManifest, ExperimentConfig)> {
    let mpath: PathBuf = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| CliError::io(&mpath, e))?;
    let manifest: RunManifest =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", mpath.display())))?;
    let cpath = dir.join(RESOLVED_CONFIG);
    let ctext = fs::read_to_string(&cpath).map_err(|e| CliError::io(&cpath, e))?;
    let cfg = resolve_config(Some(&ctext), &[])
        .map_err(|e| CliError::Data(format!("{}: {e}", cpath.display())))?;
    if cfg.hash() != manifest.config_hash {
        return Err(CliError::Data(format!(
            "{}: config hash {} does not match {} recomputed from {}",
            mpath.display(),
            manifest.config_hash,
            cfg.hash(),
            RESOLVED_CONFIG
        )));
    }
    Ok((manifest, cfg))
}
