//! Analytic rewards and the pairwise diversity metric.

use crate::config::{RewardConfig, RewardKind};
use crate::error::{Error, Result};
use crate::grid::LatentGrid;
use crate::labels;
use crate::noiseshape::{dft_forward, radial_frequency};
use crate::rng::stream;
use crate::toymodel::{ConditionVector, ToyModel};

pub fn reward_loglik(model: &ToyModel, x0: &LatentGrid, v: &ConditionVector) -> Result<f64> {
    model.log_density(x0, v)
}

/// Equal-width radial band of a bin; DC belongs to band 0.
fn band_index(r: f64, bands: usize) -> usize {
    if r <= 0.0 {
        return 0;
    }
    ((r * bands as f64).ceil() as usize).clamp(1, bands) - 1
}

/// Spectral energy fraction per equal-width radial band.
pub fn band_fractions(x0: &LatentGrid, bands: usize) -> Result<Vec<f64>> {
    let spec = dft_forward(x0);
    let radius = radial_frequency(x0.height(), x0.width());
    let mut acc = vec![0.0; bands];
    for (b, r) in spec.bins.iter().zip(radius) {
        acc[band_index(r, bands)] += b.norm_sqr();
    }
    let total: f64 = acc.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroEnergy);
    }
    Ok(acc.into_iter().map(|e| e / total).collect())
}

/// Negative L1 distance between the band fractions of `x0` and `profile`.
pub fn reward_band(x0: &LatentGrid, profile: &[f64]) -> Result<f64> {
    let sum: f64 = profile.iter().sum();
    if profile.is_empty() || (sum - 1.0).abs() > 1e-9 || profile.iter().any(|p| *p < 0.0) {
        return Err(Error::BadNormalization { sum });
    }
    let f = band_fractions(x0, profile.len())?;
    Ok(-f.iter().zip(profile).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// `1 - |cos(e1, e2)|`.
pub fn cosine_dissimilarity(e1: &[f64], e2: &[f64]) -> Result<f64> {
    let n1: f64 = e1.iter().map(|v| v * v).sum::<f64>().sqrt();
    let n2: f64 = e2.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = e1.iter().zip(e2).map(|(a, b)| a * b).sum();
    Ok((1.0 - (dot / (n1 * n2)).abs()).clamp(0.0, 1.0))
}

/// Fixed random Gaussian feature map from flattened latents.
#[derive(Debug, Clone, PartialEq)]
pub struct DiversityProjector {
    input_dim: usize,
    feature_dim: usize,
    matrix: Vec<f64>,
}

impl DiversityProjector {
    pub fn new(input_dim: usize, feature_dim: usize, seed: u64) -> Self {
        let matrix = stream(seed, labels!["projector"]).normals(input_dim * feature_dim);
        Self { input_dim, feature_dim, matrix }
    }

    /// Explicit matrix (rows are features).
    pub fn from_matrix(input_dim: usize, feature_dim: usize, matrix: Vec<f64>) -> Result<Self> {
        if matrix.len() != input_dim * feature_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{feature_dim}x{input_dim}"),
                got: format!("{} values", matrix.len()),
            });
        }
        Ok(Self { input_dim, feature_dim, matrix })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn project(&self, x: &LatentGrid) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values", self.input_dim),
                got: format!("{}", x.len()),
            });
        }
        Ok(self
            .matrix
            .chunks_exact(self.input_dim)
            .map(|row| row.iter().zip(x.values()).map(|(a, b)| a * b).sum())
            .collect())
    }
}

const EXHAUSTIVE_BELOW: usize = 64;
const SUBSAMPLED_PAIRS: usize = 1000;

/// Mean pairwise dissimilarity of projected samples. Exhaustive over pairs
/// for fewer than 64 samples, else 1000 uniformly drawn pairs.
pub fn diversity(samples: &[LatentGrid], projector: &DiversityProjector) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples(samples.len()));
    }
    let feats = samples.iter().map(|s| projector.project(s)).collect::<Result<Vec<_>>>()?;
    let n = feats.len();
    let mut total = 0.0;
    let mut count = 0usize;
    if n < EXHAUSTIVE_BELOW {
        for i in 0..n {
            for j in i + 1..n {
                total += cosine_dissimilarity(&feats[i], &feats[j])?;
                count += 1;
            }
        }
    } else {
        let mut rng = stream(n as u64, labels!["pairs"]);
        while count < SUBSAMPLED_PAIRS {
            let i = rng.below(n);
            let j = rng.below(n);
            if i == j {
                continue;
            }
            total += cosine_dissimilarity(&feats[i], &feats[j])?;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Average of per-condition diversities.
pub fn diversity_multi(groups: &[Vec<LatentGrid>], projector: &DiversityProjector) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::TooFewSamples(0));
    }
    let vals = groups.iter().map(|g| diversity(g, projector)).collect::<Result<Vec<_>>>()?;
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Reward bound to one model and prompt.
#[derive(Debug, Clone)]
pub struct Verifier<'a> {
    pub model: &'a ToyModel,
    pub condition: ConditionVector,
    pub config: RewardConfig,
}

impl<'a> Verifier<'a> {
    pub fn new(model: &'a ToyModel, condition: ConditionVector, config: RewardConfig) -> Self {
        Self { model, condition, config }
    }

    pub fn score(&self, x0: &LatentGrid) -> Result<f64> {
        match self.config.kind {
            RewardKind::Loglik => reward_loglik(self.model, x0, &self.condition),
            RewardKind::BandMatch => reward_band(x0, &self.config.band_profile),
            RewardKind::Composite => {
                let [wl, wb] = self.config.weights;
                let ll = reward_loglik(self.model, x0, &self.condition)? / x0.len() as f64;
                let band = reward_band(x0, &self.config.band_profile)?;
                Ok(wl * ll + wb * band)
            }
        }
    }
}
