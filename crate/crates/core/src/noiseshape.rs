//! 2-D DFT helpers, radial low-pass filtering and renormalized noise shaping.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::config::NoiseShapeConfig;
use crate::error::{Error, Result};
use crate::grid::LatentGrid;
use crate::rng::RngStream;

pub const DEGENERATE_STD: f64 = 1e-8;

// slack when comparing a bin's radius to a cutoff
const RADIUS_EPS: f64 = 1e-12;

/// Row-major H×W complex spectrum (unnormalized forward DFT).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub height: usize,
    pub width: usize,
    pub bins: Vec<Complex64>,
}

impl Spectrum {
    pub fn energy(&self) -> f64 {
        self.bins.iter().map(|c| c.norm_sqr()).sum()
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

fn fft2(bins: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    let row = plan(w, inverse);
    for r in bins.chunks_exact_mut(w) {
        row.process(r);
    }
    let col = plan(h, inverse);
    let mut buf = vec![Complex64::new(0.0, 0.0); h];
    for c in 0..w {
        for r in 0..h {
            buf[r] = bins[r * w + c];
        }
        col.process(&mut buf);
        for r in 0..h {
            bins[r * w + c] = buf[r];
        }
    }
}

pub fn dft_forward(grid: &LatentGrid) -> Spectrum {
    let (h, w) = (grid.height(), grid.width());
    let mut bins: Vec<Complex64> = grid.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2(&mut bins, h, w, false);
    Spectrum { height: h, width: w, bins }
}

/// Inverse DFT, keeping the real part.
pub fn dft_inverse(spec: &Spectrum) -> LatentGrid {
    let (h, w) = (spec.height, spec.width);
    let mut bins = spec.bins.clone();
    fft2(&mut bins, h, w, true);
    let n = (h * w) as f64;
    LatentGrid::from_fn(h, w, |r, c| bins[r * w + c].re / n)
}

fn signed_index(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Radial frequency of every bin, scaled so the Nyquist corner is 1.
pub fn radial_frequency(height: usize, width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(height * width);
    for ky in 0..height {
        let fy = signed_index(ky, height) / (height as f64 / 2.0);
        for kx in 0..width {
            let fx = signed_index(kx, width) / (width as f64 / 2.0);
            out.push(((fx * fx + fy * fy) / 2.0).sqrt());
        }
    }
    out
}

fn in_low_band(r: f64, p: f64) -> bool {
    r <= p + RADIUS_EPS
}

fn check_fraction(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::Invalid(format!("cutoff {p} must lie in (0, 1]")))
    }
}

fn mask_spectrum(grid: &LatentGrid, keep: impl Fn(f64) -> bool) -> LatentGrid {
    let mut spec = dft_forward(grid);
    let radius = radial_frequency(grid.height(), grid.width());
    for (b, r) in spec.bins.iter_mut().zip(radius) {
        if !keep(r) {
            *b = Complex64::new(0.0, 0.0);
        }
    }
    dft_inverse(&spec)
}

/// Zero every bin whose radial frequency exceeds `p`. DC is always kept.
pub fn low_pass(grid: &LatentGrid, p: f64) -> Result<LatentGrid> {
    check_fraction(p)?;
    if p >= 1.0 {
        return Ok(grid.clone());
    }
    Ok(mask_spectrum(grid, |r| in_low_band(r, p)))
}

/// Complement of `low_pass`: keeps only bins strictly above `p`.
pub fn high_pass(grid: &LatentGrid, p: f64) -> Result<LatentGrid> {
    check_fraction(p)?;
    Ok(mask_spectrum(grid, |r| !in_low_band(r, p)))
}

/// Spectral energy at or below and strictly above `cutoff`.
pub fn band_energies(grid: &LatentGrid, cutoff: f64) -> (f64, f64) {
    let spec = dft_forward(grid);
    let radius = radial_frequency(grid.height(), grid.width());
    let mut lo = 0.0;
    let mut hi = 0.0;
    for (b, r) in spec.bins.iter().zip(radius) {
        if in_low_band(r, cutoff) {
            lo += b.norm_sqr();
        } else {
            hi += b.norm_sqr();
        }
    }
    (lo, hi)
}

/// Fraction of spectral energy strictly above `cutoff`.
pub fn energy_fraction_above(grid: &LatentGrid, cutoff: f64) -> f64 {
    let (lo, hi) = band_energies(grid, cutoff);
    if lo + hi == 0.0 {
        0.0
    } else {
        hi / (lo + hi)
    }
}

/// Subtract the mean, divide by the population std.
pub fn renormalize(grid: &LatentGrid) -> Result<LatentGrid> {
    let m = grid.mean();
    let s = grid.std();
    if !(s > DEGENERATE_STD) {
        return Err(Error::DegenerateStd { std: s });
    }
    Ok(grid.map(|v| (v - m) / s))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Low,
    High,
}

/// Remove one band of `grid` at radial cutoff `p`.
pub fn attenuate(grid: &LatentGrid, band: Band, p: f64) -> Result<LatentGrid> {
    match band {
        Band::High => low_pass(grid, p),
        Band::Low => high_pass(grid, p),
    }
}

pub fn raw_noise(height: usize, width: usize, rng: &mut RngStream) -> LatentGrid {
    LatentGrid::from_fn(height, width, |_, _| rng.normal())
}

/// Draw a standard normal grid and, if enabled, low-pass it at the step's
/// cutoff and renormalize to unit moments.
pub fn shape_noise(
    step: usize,
    steps: usize,
    config: &NoiseShapeConfig,
    height: usize,
    width: usize,
    rng: &mut RngStream,
) -> Result<LatentGrid> {
    let z = raw_noise(height, width, rng);
    if !config.enabled {
        return Ok(z);
    }
    let p = config.cutoff.eval(step, steps)?;
    renormalize(&low_pass(&z, p)?)
}
