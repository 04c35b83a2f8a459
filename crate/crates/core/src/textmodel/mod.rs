//! Tokenization and the two desk-scale conditional sequence models.
//!
//! Both models implement [`SequenceModel`]: whole-response log-probability
//! `log P(y | dh, x)` and its exact gradient with respect to a flat
//! parameter vector. The training and evaluation layers only ever talk to
//! this trait.

mod decode;
mod rnn;
mod tabular;
mod vocab;

use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::Turn;

pub use decode::{argmax, log_sum_exp, pick, softmax, DecodeMethod};
pub use rnn::{RnnConfig, TinyRnnLm};
pub use tabular::{context_key, TabularModel};
pub use vocab::{word_tokens, ContextEncoding, Vocab, BOS, DEFAULT_MAX_CONTEXT, EOS, PAD, SEP, UNK};

/// Default generation budget in tokens.
pub const DEFAULT_MAX_LEN: usize = 64;

pub const CHECKPOINT_VERSION: &str = "cdk-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("unknown context: {0}")]
    UnknownContext(String),
    #[error("response not in inventory: {0}")]
    UnknownResponse(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

/// Flat gradient aligned to a model's parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector(pub Vec<f64>);

impl GradientVector {
    pub fn zeros(n: usize) -> Self {
        GradientVector(vec![0.0; n])
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub trait SequenceModel {
    fn num_params(&self) -> usize;

    fn params(&self) -> &[f64];

    /// The only mutation path; used by optimizers.
    fn params_mut(&mut self) -> &mut [f64];

    /// `log P(y | dh, x)` over the whole response.
    fn logprob(&self, dh: &[Turn], x: &Turn, y: &Turn) -> Result<f64, ModelError>;

    /// Add `scale * d logprob / d params` into `grad` and return the logprob.
    fn accumulate_grad(&self, dh: &[Turn], x: &Turn, y: &Turn, scale: f64, grad: &mut [f64]) -> Result<f64, ModelError>;

    fn grad_logprob(&self, dh: &[Turn], x: &Turn, y: &Turn) -> Result<GradientVector, ModelError> {
        let mut g = GradientVector::zeros(self.num_params());
        self.accumulate_grad(dh, x, y, 1.0, &mut g.0)?;
        Ok(g)
    }

    /// Token count used to normalize perplexity.
    fn token_count(&self, y: &Turn) -> usize;

    /// Rendered response text (`speaker: text` when the model produced a speaker).
    fn generate(&self, dh: &[Turn], x: &Turn, method: DecodeMethod, max_len: usize, rng: &mut dyn RngCore) -> Result<String, ModelError>;
}

/// Ablation wrapper: hides the cause turn `x` from the wrapped model.
#[derive(Debug, Clone)]
pub struct ContextBlind<M>(pub M);

impl<M> ContextBlind<M> {
    fn placeholder() -> Turn {
        Turn::scene("<blind>")
    }
}

impl<M: SequenceModel> SequenceModel for ContextBlind<M> {
    fn num_params(&self) -> usize {
        self.0.num_params()
    }
    fn params(&self) -> &[f64] {
        self.0.params()
    }
    fn params_mut(&mut self) -> &mut [f64] {
        self.0.params_mut()
    }
    fn logprob(&self, dh: &[Turn], _x: &Turn, y: &Turn) -> Result<f64, ModelError> {
        self.0.logprob(dh, &Self::placeholder(), y)
    }
    fn accumulate_grad(&self, dh: &[Turn], _x: &Turn, y: &Turn, scale: f64, grad: &mut [f64]) -> Result<f64, ModelError> {
        self.0.accumulate_grad(dh, &Self::placeholder(), y, scale, grad)
    }
    fn token_count(&self, y: &Turn) -> usize {
        self.0.token_count(y)
    }
    fn generate(&self, dh: &[Turn], _x: &Turn, method: DecodeMethod, max_len: usize, rng: &mut dyn RngCore) -> Result<String, ModelError> {
        self.0.generate(dh, &Self::placeholder(), method, max_len, rng)
    }
}

/// Either model, as stored in a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AnyModel {
    Tabular(TabularModel),
    Neural(TinyRnnLm),
}

macro_rules! delegate {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            AnyModel::Tabular($m) => $e,
            AnyModel::Neural($m) => $e,
        }
    };
}

impl SequenceModel for AnyModel {
    fn num_params(&self) -> usize {
        delegate!(self, m => m.num_params())
    }
    fn params(&self) -> &[f64] {
        delegate!(self, m => m.params())
    }
    fn params_mut(&mut self) -> &mut [f64] {
        delegate!(self, m => m.params_mut())
    }
    fn logprob(&self, dh: &[Turn], x: &Turn, y: &Turn) -> Result<f64, ModelError> {
        delegate!(self, m => m.logprob(dh, x, y))
    }
    fn accumulate_grad(&self, dh: &[Turn], x: &Turn, y: &Turn, scale: f64, grad: &mut [f64]) -> Result<f64, ModelError> {
        delegate!(self, m => m.accumulate_grad(dh, x, y, scale, grad))
    }
    fn token_count(&self, y: &Turn) -> usize {
        delegate!(self, m => m.token_count(y))
    }
    fn generate(&self, dh: &[Turn], x: &Turn, method: DecodeMethod, max_len: usize, rng: &mut dyn RngCore) -> Result<String, ModelError> {
        delegate!(self, m => m.generate(dh, x, method, max_len, rng))
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: String,
    model: AnyModel,
}

impl AnyModel {
    pub fn to_checkpoint_json(&self) -> String {
        let file = CheckpointFile {
            version: CHECKPOINT_VERSION.to_string(),
            model: self.clone(),
        };
        serde_json::to_string(&file).expect("checkpoint serializes")
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self, ModelError> {
        let file: CheckpointFile = serde_json::from_str(text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if file.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version `{}`", file.version)));
        }
        file.model.check()?;
        Ok(file.model)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_checkpoint_json())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_checkpoint_json(&text)
    }

    fn check(&self) -> Result<(), ModelError> {
        let expected = match self {
            AnyModel::Tabular(m) => m.expected_params(),
            AnyModel::Neural(m) => m.config().param_count(m.vocab().len()),
        };
        if expected != self.num_params() {
            return Err(ModelError::Checkpoint(format!(
                "parameter vector has {} entries, architecture needs {expected}",
                self.num_params()
            )));
        }
        if self.params().iter().any(|p| !p.is_finite()) {
            return Err(ModelError::Checkpoint("non-finite parameter".into()));
        }
        Ok(())
    }
}
