//! MLE and ExMATE objectives, the ATE diagnostic and the training loop.
//!
//! ExMATE adds, for each example with a fork sibling `x_c`, the whole-response
//! probability `P(y | dh, x_c)` to the usual negative log-likelihood. Its
//! gradient is `P(y | dh, x_c) * d log P(y | dh, x_c)`, which fades as the
//! counterpart probability goes to zero. Examples without counterparts
//! contribute only the likelihood term.
//!
//! The treatment indicator of the fork (taking branch `X1` versus `X2`) has
//! no runtime representation; it only shows up in [`estimate_ate`] as the
//! two directions of each fork pair.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::perplexity_triples;
use crate::extract::{fork_pairs, sample_counterpart, ForkPair, Triple};
use crate::textmodel::{GradientVector, ModelError, SequenceModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mle,
    Exmate,
}

impl FromStr for LossKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mle" => Ok(LossKind::Mle),
            "exmate" => Ok(LossKind::Exmate),
            other => Err(format!("unknown loss `{other}`")),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Mle => "mle",
            LossKind::Exmate => "exmate",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl FromStr for Optimizer {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::adam()),
            other => Err(format!("unknown optimizer `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub loss: LossKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Stop after this many parameter updates, across epochs.
    pub max_steps: Option<usize>,
    /// Global gradient-norm clip.
    pub clip_norm: Option<f64>,
    /// Early stopping patience in epochs (only with a validation set).
    pub patience: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            loss: LossKind::Mle,
            learning_rate: 1e-5,
            batch_size: 64,
            epochs: 1,
            seed: 0,
            optimizer: Optimizer::adam(),
            max_steps: None,
            clip_norm: Some(5.0),
            patience: 3,
        }
    }
}

impl LossConfig {
    pub fn check(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Loss values for one batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// Mean negative whole-response log-likelihood.
    pub mle_term: f64,
    /// Mean of `P(y | dh, x_c)`, zero for examples without a counterpart.
    pub counterpart_term: f64,
    pub total: f64,
    pub grad_norm: f64,
    /// Fraction of examples that drew a counterpart.
    pub coverage: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AteReport {
    pub ate: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("loss became non-finite at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("no fork pairs available")]
    NoForkPairs,
    #[error("checkpoint hook failed: {0}")]
    Hook(String),
}

fn batch_loss<'a, M, F>(model: &M, batch: &[&'a Triple], mut counterpart: F) -> Result<(LossReport, GradientVector), ModelError>
where
    M: SequenceModel + ?Sized,
    F: FnMut(&'a Triple) -> Option<&'a crate::extract::Counterpart>,
{
    let mut grad = GradientVector::zeros(model.num_params());
    if batch.is_empty() {
        return Ok((
            LossReport {
                mle_term: 0.0,
                counterpart_term: 0.0,
                total: 0.0,
                grad_norm: 0.0,
                coverage: 0.0,
            },
            grad,
        ));
    }
    let inv = 1.0 / batch.len() as f64;
    let mut mle = 0.0;
    let mut cp_term = 0.0;
    let mut covered = 0usize;
    // fixed left-to-right reduction over the batch
    for &t in batch {
        let lp = model.accumulate_grad(&t.dh, &t.x, &t.y, -inv, &mut grad.0)?;
        mle -= lp * inv;
        if let Some(c) = counterpart(t) {
            let p = model.logprob(&t.dh, &c.turn, &t.y)?.exp();
            model.accumulate_grad(&t.dh, &c.turn, &t.y, p * inv, &mut grad.0)?;
            cp_term += p * inv;
            covered += 1;
        }
    }
    let report = LossReport {
        mle_term: mle,
        counterpart_term: cp_term,
        total: mle + cp_term,
        grad_norm: grad.norm(),
        coverage: covered as f64 * inv,
    };
    Ok((report, grad))
}

/// Mean negative log-likelihood of `y` given `(dh, x)` and its gradient.
pub fn mle_loss<'a, M, I>(model: &M, batch: I) -> Result<(LossReport, GradientVector), ModelError>
where
    M: SequenceModel + ?Sized,
    I: IntoIterator<Item = &'a Triple>,
{
    let batch: Vec<&Triple> = batch.into_iter().collect();
    batch_loss(model, &batch, |_| None)
}

/// MLE plus `P(y | dh, x_c)` for one uniformly drawn counterpart per example.
pub fn exmate_loss<'a, M, I, R>(model: &M, batch: I, rng: &mut R) -> Result<(LossReport, GradientVector), ModelError>
where
    M: SequenceModel + ?Sized,
    I: IntoIterator<Item = &'a Triple>,
    R: Rng + ?Sized,
{
    let batch: Vec<&Triple> = batch.into_iter().collect();
    batch_loss(model, &batch, |t| sample_counterpart(t, rng))
}

/// Mean over fork pairs of `P(Y1|X1) - P(Y1|X2) + P(Y2|X2) - P(Y2|X1)`.
pub fn estimate_ate<M: SequenceModel + ?Sized>(model: &M, triples: &[Triple], pairs: &[ForkPair]) -> Result<AteReport, TrainError> {
    if pairs.is_empty() {
        return Err(TrainError::NoForkPairs);
    }
    let mut sum = 0.0;
    for p in pairs {
        let (a, b) = (&triples[p.first], &triples[p.second]);
        let prob = |x, y| model.logprob(&a.dh, x, y).map(f64::exp);
        let d1 = prob(&a.x, &a.y)? - prob(&b.x, &a.y)?;
        let d2 = prob(&b.x, &b.y)? - prob(&a.x, &b.y)?;
        sum += d1 + d2;
    }
    Ok(AteReport {
        ate: sum / pairs.len() as f64,
        pairs: pairs.len(),
    })
}

/// [`estimate_ate`] over every fork pair found in `triples`.
pub fn estimate_ate_all<M: SequenceModel + ?Sized>(model: &M, triples: &[Triple]) -> Result<AteReport, TrainError> {
    estimate_ate(model, triples, &fork_pairs(triples))
}

/// Per-parameter optimizer state.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: Optimizer,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl OptimizerState {
    pub fn new(kind: Optimizer, n: usize) -> Self {
        let (m, v) = match kind {
            Optimizer::Sgd => (Vec::new(), Vec::new()),
            Optimizer::Adam { .. } => (vec![0.0; n], vec![0.0; n]),
        };
        OptimizerState { kind, m, v, t: 0 }
    }

    /// Descent step on `params` along `grad` (the gradient of the loss).
    pub fn apply(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        match self.kind {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.t as i32);
                let c2 = 1.0 - beta2.powi(self.t as i32);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    params[i] -= lr * mh / (vh.sqrt() + eps);
                }
            }
        }
    }
}

/// Scale `grad` so its norm is at most `max_norm`.
pub fn clip_grad(grad: &mut GradientVector, max_norm: f64) {
    let n = grad.norm();
    if n > max_norm && n > 0.0 {
        let s = max_norm / n;
        grad.0.iter_mut().for_each(|g| *g *= s);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub steps: usize,
    pub mle_term: f64,
    pub counterpart_term: f64,
    pub loss: f64,
    pub coverage: f64,
    pub train_ppl: f64,
    pub valid_loss: Option<f64>,
    pub valid_ppl: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<EpochReport>,
    pub batches: Vec<LossReport>,
    pub steps: usize,
    pub stopped_early: bool,
}

impl TrainOutcome {
    /// `epoch,split,loss,ppl` rows.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,split,loss,ppl\n");
        for e in &self.history {
            out.push_str(&format!("{},train,{},{}\n", e.epoch, e.loss, e.train_ppl));
            if let (Some(l), Some(p)) = (e.valid_loss, e.valid_ppl) {
                out.push_str(&format!("{},valid,{},{}\n", e.epoch, l, p));
            }
        }
        out
    }
}

fn mean_nll<M: SequenceModel + ?Sized>(model: &M, triples: &[Triple]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for t in triples {
        if let Ok(lp) = model.logprob(&t.dh, &t.x, &t.y) {
            sum -= lp;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Train in place.
///
/// Shuffling and counterpart draws use separate generators derived from
/// `config.seed`, so MLE and ExMATE runs see the same batch order. `on_epoch`
/// runs after every epoch (checkpoint writing). With a validation set, training
/// stops after `patience` epochs without a validation-PPL improvement and the
/// best parameters are restored.
pub fn train<M, H>(
    model: &mut M,
    triples: &[Triple],
    valid: Option<&[Triple]>,
    config: &LossConfig,
    mut on_epoch: H,
) -> Result<TrainOutcome, TrainError>
where
    M: SequenceModel + ?Sized,
    H: FnMut(&EpochReport, &M) -> Result<(), String>,
{
    config.check()?;
    let mut out = TrainOutcome::default();
    if triples.is_empty() {
        return Ok(out);
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut cp_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5851_f42d_4c95_7f2d);
    let mut opt = OptimizerState::new(config.optimizer, model.num_params());
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut since_best = 0usize;

    'epochs: for epoch in 0..config.epochs {
        if config.max_steps.is_some_and(|m| out.steps >= m) {
            break;
        }
        let mut order: Vec<usize> = (0..triples.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let (mut mle, mut cp, mut tot, mut cov, mut nb) = (0.0, 0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            if config.max_steps.is_some_and(|m| out.steps >= m) {
                break;
            }
            let batch = chunk.iter().map(|&i| &triples[i]);
            let (report, mut grad) = match config.loss {
                LossKind::Mle => mle_loss(&*model, batch)?,
                LossKind::Exmate => exmate_loss(&*model, batch, &mut cp_rng)?,
            };
            if !report.total.is_finite() || !report.grad_norm.is_finite() {
                return Err(TrainError::Divergence { epoch, step: out.steps });
            }
            if let Some(c) = config.clip_norm {
                clip_grad(&mut grad, c);
            }
            opt.apply(model.params_mut(), &grad.0, config.learning_rate);
            if model.params().iter().any(|p| !p.is_finite()) {
                return Err(TrainError::Divergence { epoch, step: out.steps });
            }
            out.steps += 1;
            out.batches.push(report);
            mle += report.mle_term;
            cp += report.counterpart_term;
            tot += report.total;
            cov += report.coverage;
            nb += 1;
        }
        let nbf = nb.max(1) as f64;
        let train_ppl = perplexity_triples(&*model, triples).ppl;
        let (valid_loss, valid_ppl) = match valid {
            Some(v) if !v.is_empty() => (Some(mean_nll(&*model, v)), Some(perplexity_triples(&*model, v).ppl)),
            _ => (None, None),
        };
        let report = EpochReport {
            epoch,
            steps: out.steps,
            mle_term: mle / nbf,
            counterpart_term: cp / nbf,
            loss: tot / nbf,
            coverage: cov / nbf,
            train_ppl,
            valid_loss,
            valid_ppl,
        };
        on_epoch(&report, &*model).map_err(TrainError::Hook)?;
        out.history.push(report);

        if let Some(vp) = valid_ppl {
            match &best {
                Some((b, _)) if vp >= *b => {
                    since_best += 1;
                    if since_best >= config.patience {
                        out.stopped_early = true;
                        break 'epochs;
                    }
                }
                _ => {
                    best = Some((vp, model.params().to_vec()));
                    since_best = 0;
                }
            }
        }
    }
    if out.stopped_early {
        if let Some((_, params)) = best {
            model.params_mut().copy_from_slice(&params);
        }
    }
    Ok(out)
}
