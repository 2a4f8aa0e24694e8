use crate::config::ExperimentConfig;
use crate::embedding::{synth_pair, ConditionPair};
use crate::error::Result;
use crate::reward::{DiversityProjector, Verifier};
use crate::sampler::Sampler;
use crate::toymodel::{build_model, ConditionVector, ToyModel};

/// A validated config with its built model and prompt pair.
#[derive(Debug, Clone)]
pub struct Lab {
    pub config: ExperimentConfig,
    pub model: ToyModel,
    pub pair: ConditionPair,
    pub condition: ConditionVector,
}

impl Lab {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let config = config.validate()?;
        let model = build_model(&config.model, config.grid.height, config.grid.width, config.prompt.embed_dim)?
            .with_layer_split(config.tep.k);
        let pair = synth_pair(&config.prompt)?;
        let condition = model.condition_vector(&pair.cond)?;
        Ok(Self { config, model, pair, condition })
    }

    /// Same model and prompt under a different config. Model and prompt
    /// fields of `config` are ignored except the layer split.
    pub fn with_config(&self, config: ExperimentConfig) -> Self {
        let model = self.model.clone().with_layer_split(config.tep.k);
        Self { config, model, pair: self.pair.clone(), condition: self.condition.clone() }
    }

    pub fn sampler(&self) -> Sampler<'_> {
        Sampler::new(&self.model, &self.pair, &self.config)
    }

    pub fn verifier(&self) -> Verifier<'_> {
        Verifier::new(&self.model, self.condition.clone(), self.config.reward.clone())
    }

    pub fn projector(&self) -> DiversityProjector {
        DiversityProjector::new(
            self.model.n_pixels(),
            self.config.reward.projector_dim,
            self.config.reward.projector_seed,
        )
    }
}
