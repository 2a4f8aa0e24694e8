//! Embedding perturbation engine: branch-, token-, layer- and step-dependent
//! Gaussian offsets added to prompt embeddings.

use serde::{Deserialize, Serialize};

use crate::config::{PerturbConfig, RedrawPolicy};
use crate::embedding::{Branch, PromptEmbedding};
use crate::error::{Error, Result};
use crate::rng::{Label, RngStream};

/// Identity of a trajectory for stream derivation: labels are
/// `[name, step, tag...]` under the root seed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Lineage {
    pub root: u64,
    pub tag: Vec<u64>,
}

impl Lineage {
    pub fn new(root: u64, tag: Vec<u64>) -> Self {
        Self { root, tag }
    }

    pub fn single(root: u64, slot: u64) -> Self {
        Self { root, tag: vec![slot] }
    }

    pub fn labels(&self, name: &str, step: usize) -> Vec<Label> {
        let mut l = vec![Label::from(name), Label::from(step)];
        l.extend(self.tag.iter().map(|&t| Label::Index(t)));
        l
    }

    pub fn stream(&self, name: &str, step: usize) -> RngStream {
        crate::rng::stream(self.root, self.labels(name, step))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationDraw {
    /// Shaped like the unconditional embedding.
    pub eps1: Vec<f64>,
    /// Shaped like the conditional embedding.
    pub eps2: Vec<f64>,
    pub draw_step: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyEvent {
    TrajectoryStart,
    SdeStep,
    Resample,
}

/// Current perturbation directions of one trajectory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TepState {
    pub draw: Option<PerturbationDraw>,
    pub redraws: usize,
}

impl TepState {
    pub fn none() -> Self {
        Self::default()
    }
}

pub fn layer_scale(i: usize, n_layers: usize, config: &PerturbConfig) -> Result<f64> {
    if i >= n_layers {
        return Err(Error::Invalid(format!("layer {i} out of range for {n_layers} layers")));
    }
    Ok(if i < config.k { config.shallow_scale } else { config.deep_scale })
}

pub fn token_scales(eos_index: usize, n_tokens: usize, config: &PerturbConfig) -> Vec<f64> {
    (0..n_tokens).map(|i| if i < eos_index { config.rho_sem } else { config.rho_pad }).collect()
}

pub fn draw_perturbation(
    uncond_shape: (usize, usize),
    cond_shape: (usize, usize),
    step: usize,
    rng: &mut RngStream,
) -> PerturbationDraw {
    let eps1 = rng.normals(uncond_shape.0 * uncond_shape.1);
    let eps2 = rng.normals(cond_shape.0 * cond_shape.1);
    PerturbationDraw { eps1, eps2, draw_step: step }
}

/// Branch magnitude at `step` in embedding-std units, before layer scaling.
pub fn branch_magnitude(config: &PerturbConfig, branch: Branch, step: usize, steps: usize) -> Result<f64> {
    if let Some((lo, hi)) = config.window {
        if step < lo || step >= hi {
            return Ok(0.0);
        }
    }
    match branch {
        Branch::Unconditional => config.w1.eval(step, steps),
        Branch::Conditional => config.w2.eval(step, steps),
    }
}

/// `e + s_layer * w(step) * unit * eps`, with per-row token scales on the
/// conditional branch. `unit` converts magnitudes to embedding units.
#[allow(clippy::too_many_arguments)]
pub fn apply_perturbation(
    e: &PromptEmbedding,
    draw: &PerturbationDraw,
    step: usize,
    steps: usize,
    layer: usize,
    n_layers: usize,
    config: &PerturbConfig,
    unit: f64,
) -> Result<PromptEmbedding> {
    let branch = e.branch();
    let eps = match branch {
        Branch::Unconditional => &draw.eps1,
        Branch::Conditional => &draw.eps2,
    };
    if eps.len() != e.tokens().len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} entries", e.tokens().len()),
            got: format!("{}", eps.len()),
        });
    }
    let mag = branch_magnitude(config, branch, step, steps)? * layer_scale(layer, n_layers, config)? * unit;
    if mag == 0.0 {
        return Ok(e.clone());
    }
    let rows = match branch {
        Branch::Unconditional => vec![1.0; e.n_tokens()],
        Branch::Conditional => token_scales(e.eos_index(), e.n_tokens(), config),
    };
    let dim = e.dim();
    let mut out = e.clone();
    for (i, rho) in rows.iter().enumerate() {
        if *rho == 0.0 {
            continue;
        }
        let k = mag * rho;
        for (o, z) in out.token_mut(i).iter_mut().zip(&eps[i * dim..(i + 1) * dim]) {
            *o += k * z;
        }
    }
    Ok(out)
}

/// Redraw iff the event matches the policy; otherwise keep the current draw.
pub fn prepare_step_state(
    config: &PerturbConfig,
    state: TepState,
    step: usize,
    event: StrategyEvent,
    shapes: ((usize, usize), (usize, usize)),
    lineage: &Lineage,
) -> TepState {
    let redraw = matches!(
        (config.redraw, event),
        (RedrawPolicy::OnceAtStart, StrategyEvent::TrajectoryStart)
            | (RedrawPolicy::PerSdeStep, StrategyEvent::SdeStep)
            | (RedrawPolicy::PerResample, StrategyEvent::Resample)
    );
    if !redraw {
        return state;
    }
    let mut rng = lineage.stream("tep", step);
    TepState { draw: Some(draw_perturbation(shapes.0, shapes.1, step, &mut rng)), redraws: state.redraws + 1 }
}
