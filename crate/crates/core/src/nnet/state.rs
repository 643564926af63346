use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::forward::{backward, forward, Cache, ModelInput, OutputGrads, Outputs};
use super::optim::{adamw_step, AdamState, AdamWConfig};
use super::params::Params;
use crate::error::{Error, Result};

/// Weights, optimizer moments and bookkeeping for one model copy.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub params: Params,
    pub lm_head_frozen: bool,
    pub optimizer: AdamState,
    pub step: u64,
}

impl ModelState {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = Params::init(&config, seed);
        let optimizer = AdamState::new(&params);
        Ok(Self {
            config,
            params,
            lm_head_frozen: false,
            optimizer,
            step: 0,
        })
    }

    pub fn forward(
        &self,
        input: ModelInput<'_>,
        want_lm: bool,
        train_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Outputs, Cache)> {
        forward(&self.params, &self.config, input, want_lm, train_rng)
    }

    /// Inference-mode forward that only returns the outputs.
    pub fn infer(&self, input: ModelInput<'_>, want_lm: bool) -> Result<Outputs> {
        Ok(self.forward(input, want_lm, None)?.0)
    }

    /// Adds this input's parameter gradients to `grads`.
    pub fn accumulate_grads(
        &self,
        input: ModelInput<'_>,
        outputs: &Outputs,
        cache: &Cache,
        dout: &OutputGrads,
        grads: &mut Params,
    ) {
        backward(&self.params, &self.config, input, outputs, cache, dout, grads);
    }

    /// Applies one optimizer update with learning rate `lr`.
    pub fn step(&mut self, grads: &Params, opt: &AdamWConfig, lr: f64) -> Result<()> {
        adamw_step(
            &mut self.params,
            grads,
            &mut self.optimizer,
            opt,
            lr,
            self.lm_head_frozen,
        )?;
        self.step += 1;
        Ok(())
    }

    pub fn zero_grads(&self) -> Params {
        self.params.zeros_like()
    }

    pub fn freeze_lm_head(&mut self) {
        self.lm_head_frozen = true;
    }

    pub fn require_frozen(&self) -> Result<()> {
        if self.lm_head_frozen {
            Ok(())
        } else {
            Err(Error::LmHeadNotFrozen)
        }
    }

    /// Fresh optimizer moments, step counter reset.
    pub fn reset_optimizer(&mut self) {
        self.optimizer = AdamState::new(&self.params);
        self.step = 0;
    }
}
