use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use tepkit::analysis::mean_stderr;

use crate::error::{CliError, CliResult};
use crate::manifest::read_manifest;
use crate::run::{RunRecord, RESULTS};

/// Aggregate of one (strategy, method on/off) arm.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmSummary {
    pub strategy: String,
    pub tep: bool,
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
    /// Seed-paired difference against the same strategy without the method.
    pub paired: Option<(f64, f64, usize)>,
}

pub fn read_records(path: &Path) -> CliResult<Vec<RunRecord>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| CliError::Data(format!("{}: line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn summarize(dirs: &[PathBuf]) -> CliResult<Vec<ArmSummary>> {
    let mut hashes: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut arms: BTreeMap<(String, bool), Vec<(u64, f64)>> = BTreeMap::new();
    for dir in dirs {
        let (manifest, _) = read_manifest(dir)?;
        if manifest.command != "run" {
            return Err(CliError::Usage(format!(
                "{} holds '{}' output; report aggregates run outputs",
                dir.display(),
                manifest.command
            )));
        }
        hashes.entry(manifest.comparison_hash.clone()).or_default().push(dir.display().to_string());
        for r in read_records(&dir.join(RESULTS))? {
            arms.entry((r.strategy, r.tep)).or_default().push((r.seed, r.best_reward));
        }
    }
    if hashes.len() > 1 {
        let listing: Vec<String> = hashes.iter().map(|(h, d)| format!("{} ({})", &h[..12], d.join(", "))).collect();
        return Err(CliError::Usage(format!("incompatible config hashes: {}", listing.join("; "))));
    }
    let mut out = Vec::new();
    for ((strategy, tep), vals) in &arms {
        let rewards: Vec<f64> = vals.iter().map(|v| v.1).collect();
        let (mean, stderr) = mean_stderr(&rewards);
        let paired = if *tep {
            arms.get(&(strategy.clone(), false)).map(|base| {
                let diffs: Vec<f64> = vals
                    .iter()
                    .filter_map(|(s, r)| base.iter().find(|b| b.0 == *s).map(|b| r - b.1))
                    .collect();
                let (d, se) = mean_stderr(&diffs);
                (d, se, diffs.len())
            })
        } else {
            None
        };
        out.push(ArmSummary { strategy: strategy.clone(), tep: *tep, n: vals.len(), mean, stderr, paired });
    }
    Ok(out)
}

fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x:.6}")
    }
}

pub fn to_csv(rows: &[ArmSummary]) -> String {
    let mut s = String::from("strategy,tep,n,mean,stderr,paired_diff,paired_stderr,paired_n\n");
    for r in rows {
        let (d, se, n) = match r.paired {
            Some((d, se, n)) => (num(d), num(se), n.to_string()),
            None => (String::new(), String::new(), String::new()),
        };
        s.push_str(&format!("{},{},{},{},{},{d},{se},{n}\n", r.strategy, r.tep, r.n, num(r.mean), num(r.stderr)));
    }
    s
}

/// One line per strategy: without the method, with it, and the paired gain.
pub fn to_table(rows: &[ArmSummary]) -> String {
    let cell = |r: Option<&ArmSummary>| match r {
        Some(r) => format!("{} ± {} (n={})", num(r.mean), num(r.stderr), r.n),
        None => "-".into(),
    };
    let mut strategies: Vec<&str> = rows.iter().map(|r| r.strategy.as_str()).collect();
    strategies.dedup();
    let mut s = format!("{:<20} {:<34} {:<34} {}\n", "strategy", "w/o", "w/", "paired diff");
    for st in strategies {
        let off = rows.iter().find(|r| r.strategy == st && !r.tep);
        let on = rows.iter().find(|r| r.strategy == st && r.tep);
        let diff = match on.and_then(|r| r.paired) {
            Some((d, se, n)) => format!("{} ± {} (n={n})", num(d), num(se)),
            None => "-".into(),
        };
        s.push_str(&format!("{:<20} {:<34} {:<34} {}\n", st, cell(off), cell(on), diff));
    }
    s
}
