//! Batch decoding: one hypothesis per evaluation context.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::EvalExample;
use crate::extract::Turn;
use crate::textmodel::{DecodeMethod, ModelError, SequenceModel, DEFAULT_MAX_LEN};

/// Text of a hypothesis for which the model produced nothing.
pub const EMPTY_MARKER: &str = "∅";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenerationError {
    #[error("invalid inference config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub method: DecodeMethod,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            method: DecodeMethod::Greedy,
            max_len: DEFAULT_MAX_LEN,
            seed: 0,
        }
    }
}

impl InferenceConfig {
    pub fn new(method: DecodeMethod, max_len: usize, seed: u64) -> Result<Self, GenerationError> {
        let c = InferenceConfig { method, max_len, seed };
        c.check(None)?;
        Ok(c)
    }

    /// `vocab_size` bounds `K` when known.
    pub fn check(&self, vocab_size: Option<usize>) -> Result<(), GenerationError> {
        match self.method {
            DecodeMethod::Softmax { temperature } if !(temperature > 0.0 && temperature.is_finite()) => Err(
                GenerationError::InvalidConfig(format!("temperature {temperature} must be positive")),
            ),
            DecodeMethod::TopK { k: 0 } => Err(GenerationError::InvalidConfig("K must be at least 1".into())),
            DecodeMethod::TopK { k } if vocab_size.is_some_and(|v| k > v) => Err(GenerationError::InvalidConfig(format!(
                "K = {k} exceeds the vocabulary size {}",
                vocab_size.unwrap_or(0)
            ))),
            _ if self.max_len == 0 => Err(GenerationError::InvalidConfig("max_len must be at least 1".into())),
            _ => Ok(()),
        }
    }
}

/// One line of a hypothesis file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub example_id: usize,
    pub speaker: Option<String>,
    pub text: String,
    pub method: String,
    pub seed: u64,
}

impl Hypothesis {
    pub fn turn(&self) -> Turn {
        Turn {
            speaker: self.speaker.clone(),
            text: self.text.clone(),
        }
    }
}

/// Split raw model output at the first `:` into speaker and text.
/// Output without a usable prefix has no speaker; empty output becomes [`EMPTY_MARKER`].
pub fn parse_hypothesis(raw: &str) -> Turn {
    let raw = raw.trim();
    if raw.is_empty() {
        return Turn::scene(EMPTY_MARKER);
    }
    match raw.split_once(':') {
        Some((s, t)) if !s.trim().is_empty() => {
            let text = t.trim();
            Turn::new(s.trim(), if text.is_empty() { EMPTY_MARKER } else { text })
        }
        Some((_, t)) if !t.trim().is_empty() => Turn::scene(t.trim()),
        Some(_) => Turn::scene(EMPTY_MARKER),
        None => Turn::scene(raw),
    }
}

/// Seed for example `index`: `seed XOR index`.
pub fn example_seed(seed: u64, index: usize) -> u64 {
    seed ^ index as u64
}

/// Decode one hypothesis per example.
pub fn generate_split<M: SequenceModel + ?Sized>(
    model: &M,
    examples: &[EvalExample],
    config: &InferenceConfig,
) -> Result<Vec<Hypothesis>, GenerationError> {
    config.check(None)?;
    let method = config.method.to_string();
    examples
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let seed = example_seed(config.seed, i);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let raw = model.generate(&e.dh, &e.x, config.method, config.max_len, &mut rng)?;
            let turn = parse_hypothesis(&raw);
            Ok(Hypothesis {
                example_id: i,
                speaker: turn.speaker,
                text: turn.text,
                method: method.clone(),
                seed,
            })
        })
        .collect()
}

/// Store each hypothesis on its example.
pub fn attach(examples: &mut [EvalExample], hypotheses: &[Hypothesis]) {
    for h in hypotheses {
        if let Some(e) = examples.get_mut(h.example_id) {
            e.hypothesis = Some(h.turn());
        }
    }
}

pub fn hypotheses_to_jsonl(hypotheses: &[Hypothesis]) -> String {
    let mut out = String::new();
    for h in hypotheses {
        out.push_str(&serde_json::to_string(h).expect("hypothesis serializes"));
        out.push('\n');
    }
    out
}
