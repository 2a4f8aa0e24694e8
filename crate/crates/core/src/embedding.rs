use serde::{Deserialize, Serialize};

use crate::config::PromptSpec;
use crate::error::{Error, Result};
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Conditional,
    Unconditional,
}

/// Token matrix (rows are tokens). Rows at or after `eos_index` are padding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptEmbedding {
    n_tokens: usize,
    dim: usize,
    tokens: Vec<f64>,
    eos_index: usize,
    branch: Branch,
}

impl PromptEmbedding {
    pub fn new(
        n_tokens: usize,
        dim: usize,
        tokens: Vec<f64>,
        eos_index: usize,
        branch: Branch,
    ) -> Result<Self> {
        if tokens.len() != n_tokens * dim || n_tokens == 0 || dim == 0 {
            return Err(Error::ShapeMismatch {
                expected: format!("{n_tokens}x{dim}"),
                got: format!("{} values", tokens.len()),
            });
        }
        if eos_index >= n_tokens {
            return Err(Error::Invalid(format!(
                "eos_index {eos_index} must be below n_tokens {n_tokens}"
            )));
        }
        if tokens.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("embedding values must be finite".into()));
        }
        Ok(Self { n_tokens, dim, tokens, eos_index, branch })
    }

    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eos_index(&self) -> usize {
        self.eos_index
    }

    pub fn branch(&self) -> Branch {
        self.branch
    }

    pub fn tokens(&self) -> &[f64] {
        &self.tokens
    }

    pub fn token(&self, i: usize) -> &[f64] {
        &self.tokens[i * self.dim..(i + 1) * self.dim]
    }

    pub fn token_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.tokens[i * self.dim..(i + 1) * self.dim]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_tokens, self.dim)
    }

    /// Population std over every entry.
    pub fn entry_std(&self) -> f64 {
        let n = self.tokens.len() as f64;
        let m = self.tokens.iter().sum::<f64>() / n;
        (self.tokens.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt()
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.shape() == other.shape()
            && self.eos_index == other.eos_index
            && self.branch == other.branch
            && self.tokens.iter().zip(&other.tokens).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Conditional and unconditional prompt embeddings of matching shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionPair {
    pub cond: PromptEmbedding,
    pub uncond: PromptEmbedding,
}

impl ConditionPair {
    pub fn new(cond: PromptEmbedding, uncond: PromptEmbedding) -> Result<Self> {
        if cond.branch() != Branch::Conditional || uncond.branch() != Branch::Unconditional {
            return Err(Error::Invalid("pair branches must be (conditional, unconditional)".into()));
        }
        if cond.shape() != uncond.shape() {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", cond.shape()),
                got: format!("{:?}", uncond.shape()),
            });
        }
        Ok(Self { cond, uncond })
    }

    /// Unit for perturbation magnitudes: the std of the conditional entries.
    pub fn embedding_scale(&self) -> f64 {
        self.cond.entry_std()
    }
}

/// Synthetic prompt pair: semantic rows share a topic vector plus jitter,
/// padding rows are plain normals. The null prompt has its own topic vector.
pub fn synth_pair(spec: &PromptSpec) -> Result<ConditionPair> {
    let dim = spec.embed_dim;
    let n_sem = spec.semantic_tokens;
    let n = n_sem + spec.padding_tokens;
    if n_sem == 0 {
        return Err(Error::NoSemanticTokens);
    }
    let build = |name: &str, topic_scale: f64, branch: Branch| {
        let mut rng = stream(spec.seed, crate::labels!["prompt", name]);
        let topic: Vec<f64> = rng.normals(dim).into_iter().map(|v| v * topic_scale).collect();
        let mut tokens = Vec::with_capacity(n * dim);
        for _ in 0..n_sem {
            for t in &topic {
                tokens.push(t + spec.jitter * rng.normal());
            }
        }
        for _ in n_sem..n {
            tokens.extend(rng.normals(dim));
        }
        PromptEmbedding::new(n, dim, tokens, n_sem, branch)
    };
    let cond = build("cond", 1.0, Branch::Conditional)?;
    let uncond = build("null", spec.null_scale, Branch::Unconditional)?;
    ConditionPair::new(cond, uncond)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_shape_and_eos() {
        assert!(PromptEmbedding::new(2, 2, vec![0.0; 4], 2, Branch::Conditional).is_err());
        assert!(PromptEmbedding::new(2, 2, vec![0.0; 3], 1, Branch::Conditional).is_err());
        assert!(PromptEmbedding::new(2, 2, vec![0.0; 4], 1, Branch::Conditional).is_ok());
    }

    #[test]
    fn synth_is_deterministic_and_paired() {
        let spec = PromptSpec::default();
        let a = synth_pair(&spec).unwrap();
        let b = synth_pair(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cond.shape(), a.uncond.shape());
        assert_eq!(a.cond.eos_index(), spec.semantic_tokens);
    }
}
