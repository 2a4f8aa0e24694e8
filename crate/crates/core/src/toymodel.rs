//! Analytic conditional target: a Gaussian mixture over latent grids whose
//! component logits and shared detail term depend on the prompt embedding.

use std::fmt::Write as _;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::config::ModelSpec;
use crate::embedding::PromptEmbedding;
use crate::error::{Error, Result};
use crate::grid::LatentGrid;
use crate::labels;
use crate::noiseshape::{dft_inverse, radial_frequency, Spectrum};
use crate::rng::stream;
use crate::sampler::vp_schedule;

/// Reduced embedding consumed by the target (mean of the semantic tokens).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionVector(pub Vec<f64>);

impl ConditionVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.0.len() == other.0.len() && self.0.iter().zip(&other.0).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    height: usize,
    width: usize,
    embed_dim: usize,
    log_weights: Vec<f64>,
    base_patterns: Vec<LatentGrid>,
    detail_basis: Vec<LatentGrid>,
    /// detail_bases × embed_dim, row-major
    detail_proj: Vec<f64>,
    /// components × embed_dim, row-major
    selector: Vec<f64>,
    within_std: f64,
    layer_weights: Vec<f64>,
    layer_split: usize,
    base_cutoff: f64,
    detail_cutoff: f64,
}

/// Logits and detail coefficients: everything the denoiser needs from a prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    pub logits: Vec<f64>,
    pub detail: Vec<f64>,
}

fn band_pattern(
    height: usize,
    width: usize,
    radius: &[f64],
    lo: f64,
    hi: f64,
    rng: &mut crate::rng::RngStream,
) -> Result<LatentGrid> {
    let bins: Vec<Complex64> = radius
        .iter()
        .map(|&r| {
            let (a, b) = (rng.normal(), rng.normal());
            if r > lo && r <= hi {
                Complex64::new(a, b)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    let g = dft_inverse(&Spectrum { height, width, bins });
    let rms = (g.sq_norm() / g.len() as f64).sqrt();
    if rms == 0.0 {
        return Err(Error::EmptyBand { lo, hi });
    }
    Ok(g.scaled(1.0 / rms))
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn mat_vec(m: &[f64], rows: usize, v: &[f64]) -> Vec<f64> {
    let cols = v.len();
    (0..rows).map(|r| m[r * cols..(r + 1) * cols].iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

pub fn build_model(spec: &ModelSpec, height: usize, width: usize, embed_dim: usize) -> Result<ToyModel> {
    if height < 4 || width < 4 {
        return Err(Error::GridTooSmall { height, width });
    }
    if spec.components == 0 || spec.detail_bases == 0 || spec.layers == 0 || embed_dim == 0 {
        return Err(Error::Invalid("components, detail bases, layers and embed dim must be positive".into()));
    }
    let radius = radial_frequency(height, width);
    let seed = spec.seed;
    let base_patterns = (0..spec.components)
        .map(|j| {
            band_pattern(height, width, &radius, 0.0, spec.base_cutoff, &mut stream(seed, labels!["base", j]))
        })
        .collect::<Result<Vec<_>>>()?;
    let norm = 1.0 / (spec.detail_bases as f64).sqrt();
    let detail_basis = (0..spec.detail_bases)
        .map(|m| {
            band_pattern(height, width, &radius, spec.detail_cutoff, 1.0, &mut stream(seed, labels!["detail", m]))
                .map(|g| g.scaled(norm))
        })
        .collect::<Result<Vec<_>>>()?;
    let p_scale = spec.detail_scale * (spec.detail_bases as f64 / embed_dim as f64).sqrt();
    let detail_proj = stream(seed, labels!["proj"])
        .normals(spec.detail_bases * embed_dim)
        .into_iter()
        .map(|v| v * p_scale)
        .collect();
    let selector = stream(seed, labels!["selector"])
        .normals(spec.components * embed_dim)
        .into_iter()
        .map(|v| v * spec.selector_scale)
        .collect();
    let j = spec.components as f64;
    Ok(ToyModel {
        height,
        width,
        embed_dim,
        log_weights: vec![-j.ln(); spec.components],
        base_patterns,
        detail_basis,
        detail_proj,
        selector,
        within_std: spec.within_std,
        layer_weights: vec![1.0 / spec.layers as f64; spec.layers],
        layer_split: spec.layers / 2,
        base_cutoff: spec.base_cutoff,
        detail_cutoff: spec.detail_cutoff,
    })
}

impl ToyModel {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn n_components(&self) -> usize {
        self.base_patterns.len()
    }

    pub fn n_layers(&self) -> usize {
        self.layer_weights.len()
    }

    pub fn layer_split(&self) -> usize {
        self.layer_split
    }

    pub fn within_std(&self) -> f64 {
        self.within_std
    }

    pub fn base_patterns(&self) -> &[LatentGrid] {
        &self.base_patterns
    }

    pub fn detail_basis(&self) -> &[LatentGrid] {
        &self.detail_basis
    }

    pub fn base_cutoff(&self) -> f64 {
        self.base_cutoff
    }

    pub fn detail_cutoff(&self) -> f64 {
        self.detail_cutoff
    }

    /// Layer `i` drives component selection when `i >= split`, detail otherwise.
    pub fn with_layer_split(mut self, split: usize) -> Self {
        self.layer_split = split.min(self.n_layers());
        self
    }

    pub fn with_within_std(mut self, s: f64) -> Self {
        self.within_std = s;
        self
    }

    pub fn with_log_weights(mut self, w: Vec<f64>) -> Self {
        assert_eq!(w.len(), self.n_components());
        self.log_weights = w;
        self
    }

    pub fn with_layer_weights(mut self, u: Vec<f64>) -> Self {
        assert_eq!(u.len(), self.n_layers());
        self.layer_weights = u;
        self
    }

    /// Mean of the semantic tokens.
    pub fn condition_vector(&self, e: &PromptEmbedding) -> Result<ConditionVector> {
        let n_sem = e.eos_index();
        if n_sem == 0 {
            return Err(Error::NoSemanticTokens);
        }
        if e.dim() != self.embed_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("embedding dim {}", self.embed_dim),
                got: format!("{}", e.dim()),
            });
        }
        let mut v = vec![0.0; e.dim()];
        for i in 0..n_sem {
            for (acc, x) in v.iter_mut().zip(e.token(i)) {
                *acc += x;
            }
        }
        let inv = 1.0 / n_sem as f64;
        Ok(ConditionVector(v.into_iter().map(|x| x * inv).collect()))
    }

    pub fn logits(&self, v: &ConditionVector) -> Vec<f64> {
        mat_vec(&self.selector, self.n_components(), &v.0)
            .into_iter()
            .zip(&self.log_weights)
            .map(|(q, lp)| lp + q)
            .collect()
    }

    pub fn detail_coefficients(&self, v: &ConditionVector) -> Vec<f64> {
        mat_vec(&self.detail_proj, self.detail_basis.len(), &v.0)
    }

    pub fn conditioning(&self, v: &ConditionVector) -> Conditioning {
        Conditioning { logits: self.logits(v), detail: self.detail_coefficients(v) }
    }

    /// Normalized component probabilities for a condition.
    pub fn component_probs(&self, v: &ConditionVector) -> Vec<f64> {
        let l = self.logits(v);
        let z = log_sum_exp(&l);
        l.iter().map(|x| (x - z).exp()).collect()
    }

    fn detail_grid(&self, coeffs: &[f64]) -> LatentGrid {
        let mut d = LatentGrid::zeros(self.height, self.width);
        for (c, basis) in coeffs.iter().zip(&self.detail_basis) {
            for (o, b) in d.values_mut().iter_mut().zip(basis.values()) {
                *o += c * b;
            }
        }
        d
    }

    fn means_from(&self, coeffs: &[f64]) -> Vec<LatentGrid> {
        let d = self.detail_grid(coeffs);
        self.base_patterns.iter().map(|b| b.zip_map(&d, |x, y| x + y).expect("same shape")).collect()
    }

    pub fn component_means(&self, v: &ConditionVector) -> Vec<LatentGrid> {
        self.means_from(&self.detail_coefficients(v))
    }

    /// Posterior-mixture epsilon for explicit logits and detail coefficients.
    pub fn epsilon_for(&self, x: &LatentGrid, t: f64, c: &Conditioning) -> Result<LatentGrid> {
        let (alpha, sigma) = vp_schedule(t);
        if sigma == 0.0 {
            return Err(Error::ZeroSigma);
        }
        if x.height() != self.height || x.width() != self.width {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", self.height, self.width),
                got: format!("{}x{}", x.height(), x.width()),
            });
        }
        let var = alpha * alpha * self.within_std * self.within_std + sigma * sigma;
        let means = self.means_from(&c.detail);
        let mut log_r: Vec<f64> = means
            .iter()
            .zip(&c.logits)
            .map(|(mu, l)| {
                let d2: f64 =
                    x.values().iter().zip(mu.values()).map(|(xv, m)| (xv - alpha * m).powi(2)).sum();
                l - d2 / (2.0 * var)
            })
            .collect();
        let z = log_sum_exp(&log_r);
        for lr in &mut log_r {
            *lr = (*lr - z).exp();
        }
        let mut out = x.clone();
        let k = sigma / var;
        let vals = out.values_mut();
        for (i, o) in vals.iter_mut().enumerate() {
            let mut blended = 0.0;
            for (r, mu) in log_r.iter().zip(&means) {
                blended += r * mu.values()[i];
            }
            *o = k * (*o - alpha * blended);
        }
        Ok(out)
    }

    pub fn exact_epsilon(&self, x: &LatentGrid, t: f64, v: &ConditionVector) -> Result<LatentGrid> {
        self.epsilon_for(x, t, &self.conditioning(v))
    }

    /// Conditioning from per-layer embeddings: deep layers (index >= split)
    /// feed the logits, shallow layers feed the detail coefficients, each a
    /// weight-normalized average within its group. An empty group falls back
    /// to all layers.
    pub fn layered_conditioning(&self, layers: &[PromptEmbedding]) -> Result<Conditioning> {
        if layers.len() != self.n_layers() {
            return Err(Error::LayerCount { expected: self.n_layers(), got: layers.len() });
        }
        let vs = layers.iter().map(|e| self.condition_vector(e)).collect::<Result<Vec<_>>>()?;
        let all: Vec<usize> = (0..vs.len()).collect();
        let deep: Vec<usize> = (self.layer_split..vs.len()).collect();
        let shallow: Vec<usize> = (0..self.layer_split).collect();
        let deep = if deep.is_empty() { &all } else { &deep };
        let shallow = if shallow.is_empty() { &all } else { &shallow };
        let v_deep = self.group_average(&vs, deep);
        let v_shallow = self.group_average(&vs, shallow);
        Ok(Conditioning { logits: self.logits(&v_deep), detail: self.detail_coefficients(&v_shallow) })
    }

    fn group_average(&self, vs: &[ConditionVector], idx: &[usize]) -> ConditionVector {
        let first = &vs[idx[0]];
        if idx.iter().all(|&i| vs[i].bit_eq(first)) {
            return first.clone();
        }
        let total: f64 = idx.iter().map(|&i| self.layer_weights[i]).sum();
        let mut acc = vec![0.0; first.0.len()];
        for &i in idx {
            let u = self.layer_weights[i] / total;
            for (a, x) in acc.iter_mut().zip(&vs[i].0) {
                *a += u * x;
            }
        }
        ConditionVector(acc)
    }

    pub fn layered_epsilon(&self, x: &LatentGrid, t: f64, layers: &[PromptEmbedding]) -> Result<LatentGrid> {
        self.epsilon_for(x, t, &self.layered_conditioning(layers)?)
    }

    /// Component index, then `mu_j + s * z`.
    pub fn sample_prior(&self, v: &ConditionVector, rng: &mut crate::rng::RngStream) -> LatentGrid {
        let probs = self.component_probs(v);
        let u = rng.uniform();
        let mut acc = 0.0;
        let mut j = probs.len() - 1;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                j = i;
                break;
            }
        }
        let mu = &self.component_means(v)[j];
        let s = self.within_std;
        mu.map(|m| m + s * rng.normal())
    }

    fn mixture_log_density(&self, x: &LatentGrid, c: &Conditioning, scale: f64, var: f64) -> f64 {
        let means = self.means_from(&c.detail);
        let z = log_sum_exp(&c.logits);
        let n = x.len() as f64;
        let norm = -0.5 * n * (2.0 * std::f64::consts::PI * var).ln();
        let terms: Vec<f64> = means
            .iter()
            .zip(&c.logits)
            .map(|(mu, l)| {
                let d2: f64 = x.values().iter().zip(mu.values()).map(|(xv, m)| (xv - scale * m).powi(2)).sum();
                l - z + norm - d2 / (2.0 * var)
            })
            .collect();
        log_sum_exp(&terms)
    }

    /// log p(x0 | v) of the clean mixture.
    pub fn log_density(&self, x0: &LatentGrid, v: &ConditionVector) -> Result<f64> {
        if self.within_std <= 0.0 {
            return Err(Error::ZeroWithinStd);
        }
        let s2 = self.within_std * self.within_std;
        Ok(self.mixture_log_density(x0, &self.conditioning(v), 1.0, s2))
    }

    /// log density of the noised marginal at level `t`.
    pub fn marginal_log_density(&self, x: &LatentGrid, t: f64, v: &ConditionVector) -> Result<f64> {
        let (alpha, sigma) = vp_schedule(t);
        let var = alpha * alpha * self.within_std * self.within_std + sigma * sigma;
        if var <= 0.0 {
            return Err(Error::ZeroSigma);
        }
        Ok(self.mixture_log_density(x, &self.conditioning(v), alpha, var))
    }

    /// Plain-text dump with grids as CSV blocks.
    pub fn dump_text(&self) -> String {
        let mut out = String::new();
        let grid_csv = |out: &mut String, g: &LatentGrid| {
            for r in 0..g.height() {
                let row: Vec<String> = (0..g.width()).map(|c| format!("{:.17e}", g.get(r, c))).collect();
                let _ = writeln!(out, "{}", row.join(","));
            }
        };
        let _ = writeln!(out, "# grid {}x{}", self.height, self.width);
        let _ = writeln!(out, "# within_std {}", self.within_std);
        let _ = writeln!(out, "# log_weights {:?}", self.log_weights);
        let _ = writeln!(out, "# layer_weights {:?} split {}", self.layer_weights, self.layer_split);
        for (j, b) in self.base_patterns.iter().enumerate() {
            let _ = writeln!(out, "[base {j}]");
            grid_csv(&mut out, b);
        }
        for (m, d) in self.detail_basis.iter().enumerate() {
            let _ = writeln!(out, "[detail {m}]");
            grid_csv(&mut out, d);
        }
        let _ = writeln!(out, "[detail_projection {}x{}]", self.detail_basis.len(), self.embed_dim);
        for row in self.detail_proj.chunks(self.embed_dim) {
            let _ = writeln!(out, "{}", row.iter().map(|v| format!("{v:.17e}")).collect::<Vec<_>>().join(","));
        }
        let _ = writeln!(out, "[selector {}x{}]", self.n_components(), self.embed_dim);
        for row in self.selector.chunks(self.embed_dim) {
            let _ = writeln!(out, "{}", row.iter().map(|v| format!("{v:.17e}")).collect::<Vec<_>>().join(","));
        }
        out
    }
}
