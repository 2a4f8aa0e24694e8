//! File encodings for latents.

use serde::{Deserialize, Serialize};

use crate::grid::LatentGrid;

/// Min/max used to scale a latent into 16-bit gray levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgmScaling {
    pub min: f64,
    pub max: f64,
}

/// Binary PGM (P5, maxval 65535, big-endian), min-max scaled.
pub fn encode_pgm(grid: &LatentGrid) -> (Vec<u8>, PgmScaling) {
    let (min, max) = grid.min_max();
    let span = max - min;
    let mut out = format!("P5\n{} {}\n65535\n", grid.width(), grid.height()).into_bytes();
    for &v in grid.values() {
        let level = if span > 0.0 { ((v - min) / span * 65535.0).round() as u16 } else { 0 };
        out.extend_from_slice(&level.to_be_bytes());
    }
    (out, PgmScaling { min, max })
}

/// Approximate inverse of `encode_pgm`.
pub fn decode_pgm(bytes: &[u8], scaling: PgmScaling) -> Option<LatentGrid> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).ok()?.to_string());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "65535" {
        return None;
    }
    let w: usize = fields[1].parse().ok()?;
    let h: usize = fields[2].parse().ok()?;
    let data = bytes.get(pos..pos + 2 * w * h)?;
    let span = scaling.max - scaling.min;
    let vals = data
        .chunks_exact(2)
        .map(|c| scaling.min + u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0 * span)
        .collect();
    LatentGrid::from_vec(h, w, vals).ok()
}

pub fn grid_csv(grid: &LatentGrid) -> String {
    let mut out = String::new();
    for r in 0..grid.height() {
        let row: Vec<String> = (0..grid.width()).map(|c| format!("{}", grid.get(r, c))).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let g = LatentGrid::from_fn(3, 5, |r, c| (r * 5 + c) as f64 * 0.1 - 0.7);
        let (bytes, s) = encode_pgm(&g);
        assert!(bytes.starts_with(b"P5\n5 3\n65535\n"));
        let back = decode_pgm(&bytes, s).unwrap();
        for (a, b) in g.values().iter().zip(back.values()) {
            assert!((a - b).abs() < 1.5 * (s.max - s.min) / 65535.0);
        }
    }
}
