use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

/// Per-step decoding rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum DecodeMethod {
    Greedy,
    Softmax {
        temperature: f64,
    },
    #[serde(rename = "topk")]
    TopK {
        k: usize,
    },
}

impl fmt::Display for DecodeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecodeMethod::Greedy => write!(f, "greedy"),
            DecodeMethod::Softmax { temperature } => write!(f, "softmax(T={temperature})"),
            DecodeMethod::TopK { k } => write!(f, "topk(K={k})"),
        }
    }
}

impl FromStr for DecodeMethod {
    type Err = String;

    /// Accepts `greedy`, `softmax`, `softmax:<T>`, `topk`, `topk:<K>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        match name {
            "greedy" => Ok(DecodeMethod::Greedy),
            "softmax" => {
                let temperature = arg.map(str::parse).transpose().map_err(|e| format!("{e}"))?.unwrap_or(0.5);
                Ok(DecodeMethod::Softmax { temperature })
            }
            "topk" => {
                let k = arg.map(str::parse).transpose().map_err(|e| format!("{e}"))?.unwrap_or(10);
                Ok(DecodeMethod::TopK { k })
            }
            other => Err(format!("unknown inference method `{other}`")),
        }
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable `log Σ exp`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(values: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(values);
    values.iter().map(|v| (v - lse).exp()).collect()
}

fn sample_index(probs: &[f64], rng: &mut dyn RngCore) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the running total; take the last non-zero entry
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Choose one index from unnormalized log-scores.
pub fn pick(logits: &[f64], method: DecodeMethod, rng: &mut dyn RngCore) -> usize {
    match method {
        DecodeMethod::Greedy => argmax(logits),
        DecodeMethod::Softmax { temperature } => {
            let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
            sample_index(&softmax(&scaled), rng)
        }
        DecodeMethod::TopK { k } => {
            let k = k.clamp(1, logits.len());
            let mut order: Vec<usize> = (0..logits.len()).collect();
            // stable: ties keep the lower index
            order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]));
            let top = &order[..k];
            let sub: Vec<f64> = top.iter().map(|&i| logits[i]).collect();
            top[sample_index(&softmax(&sub), rng)]
        }
    }
}
