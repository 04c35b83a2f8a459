use std::collections::{BTreeSet, HashMap};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::decode::{log_sum_exp, pick, softmax, DecodeMethod};
use super::vocab::word_tokens;
use super::{ModelError, SequenceModel};
use crate::extract::{Triple, Turn};

/// Canonical string for a `(dh, x)` conditioning context.
pub fn context_key(dh: &[Turn], x: &Turn) -> String {
    let mut s = String::new();
    for t in dh.iter().chain(std::iter::once(x)) {
        s.push_str(&t.to_string());
        s.push('\n');
    }
    s
}

#[derive(Serialize, Deserialize)]
struct TabularState {
    contexts: Vec<String>,
    responses: Vec<Turn>,
    strict: bool,
    params: Vec<f64>,
}

/// One softmax over the finite response inventory per known context.
///
/// Parameters are laid out context-major: the logits for context `c` occupy
/// `params[c * R .. (c + 1) * R]` where `R` is the inventory size. Contexts
/// outside the table are uniform over the inventory unless the model is
/// strict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "TabularState", into = "TabularState")]
pub struct TabularModel {
    contexts: Vec<String>,
    context_index: HashMap<String, usize>,
    responses: Vec<Turn>,
    response_index: HashMap<Turn, usize>,
    strict: bool,
    params: Vec<f64>,
}

impl From<TabularState> for TabularModel {
    fn from(s: TabularState) -> Self {
        let mut m = TabularModel::new(s.contexts, s.responses);
        m.strict = s.strict;
        // length mismatches are reported by the checkpoint loader
        m.params = s.params;
        m
    }
}

impl From<TabularModel> for TabularState {
    fn from(m: TabularModel) -> Self {
        TabularState {
            contexts: m.contexts,
            responses: m.responses,
            strict: m.strict,
            params: m.params,
        }
    }
}

impl TabularModel {
    /// Zero logits (uniform) for every context. Duplicate keys are merged.
    pub fn new(contexts: Vec<String>, responses: Vec<Turn>) -> Self {
        let mut contexts = contexts;
        let mut seen = BTreeSet::new();
        contexts.retain(|c| seen.insert(c.clone()));
        let mut rseen = BTreeSet::new();
        let mut responses = responses;
        responses.retain(|r| rseen.insert(r.clone()));
        let context_index = contexts.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
        let response_index = responses.iter().enumerate().map(|(i, r)| (r.clone(), i)).collect();
        let params = vec![0.0; contexts.len() * responses.len()];
        TabularModel {
            contexts,
            context_index,
            responses,
            response_index,
            strict: false,
            params,
        }
    }

    /// Contexts are every training `(dh, x)` plus every `(dh, x_c)` for
    /// counterparts; the inventory is every distinct training `y`. Both
    /// sorted for a stable parameter order.
    pub fn from_triples(triples: &[Triple]) -> Self {
        let mut contexts = BTreeSet::new();
        let mut responses = BTreeSet::new();
        for t in triples {
            contexts.insert(context_key(&t.dh, &t.x));
            for c in &t.counterparts {
                contexts.insert(context_key(&t.dh, &c.turn));
            }
            responses.insert(t.y.clone());
        }
        TabularModel::new(contexts.into_iter().collect(), responses.into_iter().collect())
    }

    pub fn with_strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    pub fn is_strict(&self) -> bool {
        self.strict
    }

    pub fn responses(&self) -> &[Turn] {
        &self.responses
    }

    pub fn contexts(&self) -> &[String] {
        &self.contexts
    }

    pub(crate) fn expected_params(&self) -> usize {
        self.contexts.len() * self.responses.len()
    }

    pub fn response_id(&self, y: &Turn) -> Option<usize> {
        self.response_index.get(y).copied()
    }

    pub fn context_id(&self, dh: &[Turn], x: &Turn) -> Option<usize> {
        self.context_index.get(&context_key(dh, x)).copied()
    }

    /// Logit block for a known context.
    pub fn logits(&self, context: usize) -> &[f64] {
        let r = self.responses.len();
        &self.params[context * r..(context + 1) * r]
    }

    pub fn set_logits(&mut self, context: usize, logits: &[f64]) {
        let r = self.responses.len();
        assert_eq!(logits.len(), r, "logit block must match the inventory size");
        self.params[context * r..(context + 1) * r].copy_from_slice(logits);
    }

    /// Distribution over the inventory for a context.
    pub fn distribution(&self, dh: &[Turn], x: &Turn) -> Result<Vec<f64>, ModelError> {
        match self.resolve(dh, x)? {
            Some(c) => Ok(softmax(self.logits(c))),
            None => Ok(vec![1.0 / self.responses.len() as f64; self.responses.len()]),
        }
    }

    fn resolve(&self, dh: &[Turn], x: &Turn) -> Result<Option<usize>, ModelError> {
        let key = context_key(dh, x);
        match self.context_index.get(&key) {
            Some(&c) => Ok(Some(c)),
            None if self.strict => Err(ModelError::UnknownContext(key)),
            None => Ok(None),
        }
    }

    fn target(&self, y: &Turn) -> Result<usize, ModelError> {
        self.response_id(y).ok_or_else(|| ModelError::UnknownResponse(y.to_string()))
    }
}

impl SequenceModel for TabularModel {
    fn num_params(&self) -> usize {
        self.params.len()
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn logprob(&self, dh: &[Turn], x: &Turn, y: &Turn) -> Result<f64, ModelError> {
        let target = self.target(y)?;
        match self.resolve(dh, x)? {
            Some(c) => {
                let z = self.logits(c);
                Ok(z[target] - log_sum_exp(z))
            }
            None => Ok(-(self.responses.len() as f64).ln()),
        }
    }

    fn accumulate_grad(&self, dh: &[Turn], x: &Turn, y: &Turn, scale: f64, grad: &mut [f64]) -> Result<f64, ModelError> {
        let target = self.target(y)?;
        let Some(c) = self.resolve(dh, x)? else {
            return Ok(-(self.responses.len() as f64).ln());
        };
        let r = self.responses.len();
        let z = self.logits(c);
        let lse = log_sum_exp(z);
        let block = &mut grad[c * r..(c + 1) * r];
        for (i, (g, zi)) in block.iter_mut().zip(z).enumerate() {
            let p = (zi - lse).exp();
            let onehot = if i == target { 1.0 } else { 0.0 };
            *g += scale * (onehot - p);
        }
        Ok(z[target] - lse)
    }

    /// Number of word tokens in the response text (speaker tag excluded), at least one.
    fn token_count(&self, y: &Turn) -> usize {
        word_tokens(&y.text).len().max(1)
    }

    fn generate(&self, dh: &[Turn], x: &Turn, method: DecodeMethod, _max_len: usize, rng: &mut dyn RngCore) -> Result<String, ModelError> {
        if self.responses.is_empty() {
            return Ok(String::new());
        }
        let logits = match self.resolve(dh, x)? {
            Some(c) => self.logits(c).to_vec(),
            None => vec![0.0; self.responses.len()],
        };
        Ok(self.responses[pick(&logits, method, rng)].to_string())
    }
}
