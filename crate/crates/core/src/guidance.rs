use crate::config::PerturbConfig;
use crate::embedding::{ConditionPair, PromptEmbedding};
use crate::error::Result;
use crate::grid::LatentGrid;
use crate::tep::{apply_perturbation, branch_magnitude, TepState};
use crate::toymodel::ToyModel;

/// `eps_uncond + w * (eps_cond - eps_uncond)`.
pub fn cfg_combine(eps_uncond: &LatentGrid, eps_cond: &LatentGrid, w: f64) -> Result<LatentGrid> {
    eps_uncond.check_shape(eps_cond)?;
    if w == 1.0 {
        return Ok(eps_cond.clone());
    }
    if w == 0.0 {
        return Ok(eps_uncond.clone());
    }
    eps_uncond.zip_map(eps_cond, |u, c| u + w * (c - u))
}

/// Everything needed to evaluate guided epsilon at one step.
#[derive(Debug, Clone, Copy)]
pub struct GuidanceInputs<'a> {
    pub model: &'a ToyModel,
    pub pair: &'a ConditionPair,
    pub perturb: &'a PerturbConfig,
    /// Embedding-std unit for perturbation magnitudes.
    pub unit: f64,
    pub cfg_scale: f64,
    pub steps: usize,
}

fn branch_epsilon(
    inp: &GuidanceInputs<'_>,
    e: &PromptEmbedding,
    x: &LatentGrid,
    step: usize,
    t: f64,
    state: &TepState,
) -> Result<LatentGrid> {
    let model = inp.model;
    let active = match &state.draw {
        Some(_) => branch_magnitude(inp.perturb, e.branch(), step, inp.steps)? != 0.0,
        None => false,
    };
    if !active {
        return model.exact_epsilon(x, t, &model.condition_vector(e)?);
    }
    let draw = state.draw.as_ref().expect("checked above");
    let n = model.n_layers();
    let layers = (0..n)
        .map(|i| apply_perturbation(e, draw, step, inp.steps, i, n, inp.perturb, inp.unit))
        .collect::<Result<Vec<_>>>()?;
    model.layered_epsilon(x, t, &layers)
}

/// Perturb both branches per the state, evaluate, combine.
pub fn guided_epsilon(
    inp: &GuidanceInputs<'_>,
    x: &LatentGrid,
    step: usize,
    t: f64,
    state: &TepState,
) -> Result<LatentGrid> {
    let eps_c = branch_epsilon(inp, &inp.pair.cond, x, step, t, state)?;
    if inp.cfg_scale == 1.0 {
        return Ok(eps_c);
    }
    let eps_u = branch_epsilon(inp, &inp.pair.uncond, x, step, t, state)?;
    cfg_combine(&eps_u, &eps_c, inp.cfg_scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combine_endpoints() {
        let u = LatentGrid::from_vec(1, 2, vec![1.0, -2.0]).unwrap();
        let c = LatentGrid::from_vec(1, 2, vec![0.3, 5.0]).unwrap();
        assert_eq!(cfg_combine(&u, &c, 1.0).unwrap(), c);
        assert_eq!(cfg_combine(&u, &c, 0.0).unwrap(), u);
        let z = LatentGrid::zeros(1, 2);
        assert_eq!(cfg_combine(&z, &c, 2.0).unwrap(), c.scaled(2.0));
        assert!(cfg_combine(&u, &LatentGrid::zeros(2, 1), 1.0).is_err());
    }
}
