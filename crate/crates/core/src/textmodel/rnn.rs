use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::decode::{log_sum_exp, pick, DecodeMethod};
use super::vocab::{ContextEncoding, Vocab, BOS, DEFAULT_MAX_CONTEXT, EOS};
use super::{ModelError, SequenceModel};
use crate::extract::Turn;

/// Parameters are drawn from `uniform(-INIT_SCALE, INIT_SCALE)`.
pub const INIT_SCALE: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RnnConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub max_context: usize,
}

impl Default for RnnConfig {
    fn default() -> Self {
        RnnConfig {
            embed_dim: 32,
            hidden_dim: 32,
            max_context: DEFAULT_MAX_CONTEXT,
        }
    }
}

/// Offsets of each parameter block in the flat vector.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Layout {
    v: usize,
    d: usize,
    h: usize,
    emb: usize,
    w_x: usize,
    w_h: usize,
    b: usize,
    u: usize,
    c: usize,
    total: usize,
}

impl Layout {
    fn new(v: usize, d: usize, h: usize) -> Self {
        let emb = 0;
        let w_x = emb + v * d;
        let w_h = w_x + h * d;
        let b = w_h + h * h;
        let u = b + h;
        let c = u + v * h;
        let total = c + v;
        Layout {
            v,
            d,
            h,
            emb,
            w_x,
            w_h,
            b,
            u,
            c,
            total,
        }
    }
}

impl RnnConfig {
    /// Embedding `V×D`, input weights `H×D`, recurrent weights `H×H`, bias `H`,
    /// output weights `V×H`, output bias `V`, in that order.
    pub fn param_count(&self, vocab_size: usize) -> usize {
        Layout::new(vocab_size, self.embed_dim, self.hidden_dim).total
    }
}

#[derive(Serialize, Deserialize)]
struct RnnState {
    vocab: Vocab,
    config: RnnConfig,
    params: Vec<f64>,
}

/// Elman recurrent language model over `[BOS] context response`:
/// `h_t = tanh(W_x e_t + W_h h_{t-1} + b)`, next-token logits `U h_t + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "RnnState", into = "RnnState")]
pub struct TinyRnnLm {
    vocab: Vocab,
    config: RnnConfig,
    params: Vec<f64>,
    layout: Layout,
}

impl From<RnnState> for TinyRnnLm {
    fn from(s: RnnState) -> Self {
        let layout = Layout::new(s.vocab.len(), s.config.embed_dim, s.config.hidden_dim);
        TinyRnnLm {
            vocab: s.vocab,
            config: s.config,
            params: s.params,
            layout,
        }
    }
}

impl From<TinyRnnLm> for RnnState {
    fn from(m: TinyRnnLm) -> Self {
        RnnState {
            vocab: m.vocab,
            config: m.config,
            params: m.params,
        }
    }
}

struct Forward {
    inputs: Vec<u32>,
    /// hidden state after each input step
    hidden: Vec<Vec<f64>>,
    /// (step index whose hidden state predicts, target token, softmax probabilities)
    predictions: Vec<(usize, u32, Vec<f64>)>,
    logprob: f64,
}

impl TinyRnnLm {
    pub fn new(vocab: Vocab, config: RnnConfig, seed: u64) -> Self {
        let layout = Layout::new(vocab.len(), config.embed_dim, config.hidden_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = (0..layout.total).map(|_| rng.random_range(-INIT_SCALE..INIT_SCALE)).collect();
        TinyRnnLm {
            vocab,
            config,
            params,
            layout,
        }
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn config(&self) -> &RnnConfig {
        &self.config
    }

    pub fn set_params(&mut self, params: Vec<f64>) {
        assert_eq!(params.len(), self.layout.total);
        self.params = params;
    }

    fn step(&self, token: u32, prev: &[f64]) -> Vec<f64> {
        let l = self.layout;
        let p = &self.params;
        let e = &p[l.emb + token as usize * l.d..l.emb + (token as usize + 1) * l.d];
        (0..l.h)
            .map(|i| {
                let wx = &p[l.w_x + i * l.d..l.w_x + (i + 1) * l.d];
                let wh = &p[l.w_h + i * l.h..l.w_h + (i + 1) * l.h];
                let a =
                    p[l.b + i] + wx.iter().zip(e).map(|(w, x)| w * x).sum::<f64>() + wh.iter().zip(prev).map(|(w, x)| w * x).sum::<f64>();
                a.tanh()
            })
            .collect()
    }

    fn logits(&self, hidden: &[f64]) -> Vec<f64> {
        let l = self.layout;
        let p = &self.params;
        (0..l.v)
            .map(|k| {
                let row = &p[l.u + k * l.h..l.u + (k + 1) * l.h];
                p[l.c + k] + row.iter().zip(hidden).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect()
    }

    /// Token-level probability distribution at every prediction step.
    pub fn step_distributions(&self, context: &[u32], y: &[u32]) -> Vec<Vec<f64>> {
        self.forward(context, y).predictions.into_iter().map(|(_, _, p)| p).collect()
    }

    fn forward(&self, context: &[u32], y: &[u32]) -> Forward {
        let mut inputs = Vec::with_capacity(1 + context.len() + y.len());
        inputs.push(BOS);
        inputs.extend_from_slice(context);
        if !y.is_empty() {
            inputs.extend_from_slice(&y[..y.len() - 1]);
        }
        let mut hidden: Vec<Vec<f64>> = Vec::with_capacity(inputs.len());
        let mut prev = vec![0.0; self.layout.h];
        for &tok in &inputs {
            let h = self.step(tok, &prev);
            hidden.push(h.clone());
            prev = h;
        }
        let first = context.len(); // hidden[first] has consumed BOS + full context
        let mut predictions = Vec::with_capacity(y.len());
        let mut logprob = 0.0;
        for (j, &target) in y.iter().enumerate() {
            let step = first + j;
            let z = self.logits(&hidden[step]);
            let lse = log_sum_exp(&z);
            logprob += z[target as usize] - lse;
            let probs = z.iter().map(|v| (v - lse).exp()).collect();
            predictions.push((step, target, probs));
        }
        Forward {
            inputs,
            hidden,
            predictions,
            logprob,
        }
    }

    /// `Σ_j log P(y_j | context, y_<j)`; zero for an empty `y`.
    pub fn logprob_tokens(&self, context: &[u32], y: &[u32]) -> f64 {
        if y.is_empty() {
            return 0.0;
        }
        self.forward(context, y).logprob
    }

    /// Backpropagation through time; adds `scale * gradient` into `grad`.
    pub fn accumulate_grad_tokens(&self, context: &[u32], y: &[u32], scale: f64, grad: &mut [f64]) -> f64 {
        if y.is_empty() {
            return 0.0;
        }
        let l = self.layout;
        let p = &self.params;
        let fwd = self.forward(context, y);
        let n = fwd.inputs.len();

        // dL/dh_t collected from the output layer
        let mut dh_out = vec![vec![0.0; l.h]; n];
        for (step, target, probs) in &fwd.predictions {
            let h = &fwd.hidden[*step];
            for k in 0..l.v {
                let dz = scale * (if k as u32 == *target { 1.0 } else { 0.0 } - probs[k]);
                if dz == 0.0 {
                    continue;
                }
                grad[l.c + k] += dz;
                let urow = &p[l.u + k * l.h..l.u + (k + 1) * l.h];
                for i in 0..l.h {
                    grad[l.u + k * l.h + i] += dz * h[i];
                    dh_out[*step][i] += dz * urow[i];
                }
            }
        }

        let mut carry = vec![0.0; l.h];
        for t in (0..n).rev() {
            let h = &fwd.hidden[t];
            let da: Vec<f64> = (0..l.h).map(|i| (dh_out[t][i] + carry[i]) * (1.0 - h[i] * h[i])).collect();
            let tok = fwd.inputs[t] as usize;
            let e_off = l.emb + tok * l.d;
            let mut next_carry = vec![0.0; l.h];
            for i in 0..l.h {
                let g = da[i];
                if g == 0.0 {
                    continue;
                }
                grad[l.b + i] += g;
                for j in 0..l.d {
                    grad[l.w_x + i * l.d + j] += g * p[e_off + j];
                    grad[e_off + j] += g * p[l.w_x + i * l.d + j];
                }
                if t > 0 {
                    let hp = &fwd.hidden[t - 1];
                    for j in 0..l.h {
                        grad[l.w_h + i * l.h + j] += g * hp[j];
                        next_carry[j] += g * p[l.w_h + i * l.h + j];
                    }
                }
            }
            carry = next_carry;
        }
        fwd.logprob
    }

    /// Sample a token sequence (EOS excluded) after the context.
    pub fn generate_tokens(&self, context: &[u32], method: DecodeMethod, max_len: usize, rng: &mut dyn RngCore) -> Vec<u32> {
        let mut h = vec![0.0; self.layout.h];
        h = self.step(BOS, &h);
        for &tok in context {
            h = self.step(tok, &h);
        }
        let mut out = Vec::new();
        while out.len() < max_len {
            let z = self.logits(&h);
            let tok = pick(&z, method, rng) as u32;
            if tok == EOS {
                break;
            }
            out.push(tok);
            h = self.step(tok, &h);
        }
        out
    }

    pub fn encode_context(&self, dh: &[Turn], x: &Turn) -> ContextEncoding {
        ContextEncoding::new(&self.vocab, dh, x, self.config.max_context)
    }
}

impl SequenceModel for TinyRnnLm {
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
        let ctx = self.encode_context(dh, x);
        Ok(self.logprob_tokens(&ctx.ids, &self.vocab.encode_response(y)))
    }

    fn accumulate_grad(&self, dh: &[Turn], x: &Turn, y: &Turn, scale: f64, grad: &mut [f64]) -> Result<f64, ModelError> {
        let ctx = self.encode_context(dh, x);
        Ok(self.accumulate_grad_tokens(&ctx.ids, &self.vocab.encode_response(y), scale, grad))
    }

    /// Speaker tokens, `:`, text tokens and EOS.
    fn token_count(&self, y: &Turn) -> usize {
        self.vocab.encode_response(y).len()
    }

    fn generate(&self, dh: &[Turn], x: &Turn, method: DecodeMethod, max_len: usize, rng: &mut dyn RngCore) -> Result<String, ModelError> {
        let ctx = self.encode_context(dh, x);
        let ids = self.generate_tokens(&ctx.ids, method, max_len, rng);
        Ok(self.vocab.decode(&ids))
    }
}
