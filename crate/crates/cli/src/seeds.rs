use crate::error::{CliError, CliResult};

/// Parse `a..b`, `a..=b` or a comma list. The result must be non-empty.
pub fn parse_seeds(text: &str) -> CliResult<Vec<u64>> {
    let bad = |why: &str| CliError::Usage(format!("bad seed list '{text}': {why}"));
    let num = |s: &str| s.trim().parse::<u64>().map_err(|_| bad("not an unsigned integer"));
    let seeds: Vec<u64> = if let Some((a, b)) = text.split_once("..=") {
        (num(a)?..=num(b)?).collect()
    } else if let Some((a, b)) = text.split_once("..") {
        (num(a)?..num(b)?).collect()
    } else {
        text.split(',').map(num).collect::<CliResult<_>>()?
    };
    if seeds.is_empty() {
        return Err(bad("seed list is empty"));
    }
    Ok(seeds)
}
