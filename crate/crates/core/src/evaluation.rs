//! Corpus metrics: perplexity, multi-reference BLEU, Distinct-N, CCE,
//! identity accuracy and the human-response baselines.
//!
//! Text metrics tokenize the response text with [`word_tokens`]; the speaker
//! tag is scored separately by identity accuracy.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::{fork_pairs, ForkPair, Triple, Turn};
use crate::textmodel::{word_tokens, ModelError, SequenceModel};

/// Above this many unordered fork pairs CCE uses a seeded subsample.
pub const CCE_PAIR_CAP: usize = 100_000;

const BLEU_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no fork pairs available")]
    NoForkPairs,
    #[error("BLEU order must be 1, 2 or 4, got {0}")]
    InvalidOrder(usize),
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One evaluation context with all its ground-truth responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalExample {
    pub dh: Vec<Turn>,
    pub x: Turn,
    pub references: Vec<Turn>,
    /// Generated response; `None` until generation has run.
    pub hypothesis: Option<Turn>,
}

impl EvalExample {
    /// Group triples by `(dh, x)` in first-appearance order with de-duplicated references.
    pub fn group(triples: &[Triple]) -> Vec<EvalExample> {
        let mut index: HashMap<(&[Turn], &Turn), usize> = HashMap::new();
        let mut out: Vec<EvalExample> = Vec::new();
        for t in triples {
            let slot = *index.entry((t.dh.as_slice(), &t.x)).or_insert_with(|| {
                out.push(EvalExample {
                    dh: t.dh.clone(),
                    x: t.x.clone(),
                    references: Vec::new(),
                    hypothesis: None,
                });
                out.len() - 1
            });
            let ex = &mut out[slot];
            if !ex.references.contains(&t.y) {
                ex.references.push(t.y.clone());
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PplResult {
    /// `NaN` when no reference could be scored.
    pub ppl: f64,
    pub tokens: usize,
    pub used: usize,
    /// References the model cannot score (outside a tabular inventory).
    pub skipped: usize,
}

fn ppl_over<'a, M, I>(model: &M, items: I) -> Result<PplResult, EvalError>
where
    M: SequenceModel + ?Sized,
    I: IntoIterator<Item = (&'a [Turn], &'a Turn, &'a Turn)>,
{
    let (mut nll, mut tokens, mut used, mut skipped) = (0.0, 0usize, 0usize, 0usize);
    for (dh, x, y) in items {
        match model.logprob(dh, x, y) {
            Ok(lp) => {
                nll -= lp;
                tokens += model.token_count(y);
                used += 1;
            }
            Err(ModelError::UnknownResponse(_)) => skipped += 1,
            Err(e) => return Err(e.into()),
        }
    }
    let ppl = if tokens == 0 { f64::NAN } else { (nll / tokens as f64).exp() };
    Ok(PplResult {
        ppl,
        tokens,
        used,
        skipped,
    })
}

/// Corpus perplexity `exp(sum NLL / sum tokens)` over every reference of every example.
pub fn perplexity<M: SequenceModel + ?Sized>(model: &M, examples: &[EvalExample]) -> Result<PplResult, EvalError> {
    ppl_over(
        model,
        examples
            .iter()
            .flat_map(|e| e.references.iter().map(move |y| (e.dh.as_slice(), &e.x, y))),
    )
}

/// [`perplexity`] over raw triples. Unknown contexts of a strict model count as skipped.
pub fn perplexity_triples<M: SequenceModel + ?Sized>(model: &M, triples: &[Triple]) -> PplResult {
    let mut nll = 0.0;
    let (mut tokens, mut used, mut skipped) = (0usize, 0usize, 0usize);
    for t in triples {
        match model.logprob(&t.dh, &t.x, &t.y) {
            Ok(lp) => {
                nll -= lp;
                tokens += model.token_count(&t.y);
                used += 1;
            }
            Err(_) => skipped += 1,
        }
    }
    PplResult {
        ppl: if tokens == 0 { f64::NAN } else { (nll / tokens as f64).exp() },
        tokens,
        used,
        skipped,
    }
}

/// Per-example perplexity `exp(-log P(y | dh, x) / |y|)`.
pub fn example_ppl<M: SequenceModel + ?Sized>(model: &M, dh: &[Turn], x: &Turn, y: &Turn) -> Result<f64, ModelError> {
    let lp = model.logprob(dh, x, y)?;
    Ok((-lp / model.token_count(y) as f64).exp())
}

fn ngrams(tokens: &[String], n: usize) -> impl Iterator<Item = &[String]> {
    tokens.windows(n)
}

fn check_order(n: usize) -> Result<(), EvalError> {
    match n {
        1 | 2 | 4 => Ok(()),
        other => Err(EvalError::InvalidOrder(other)),
    }
}

/// Corpus BLEU-`n` (x100) over tokenized `(hypothesis, references)` pairs.
///
/// Clipping is against the per-n-gram maximum over the references, zero
/// precisions are smoothed to `1e-9`, and the brevity penalty uses the
/// closest reference length (shorter on ties).
pub fn corpus_bleu(pairs: &[(Vec<String>, Vec<Vec<String>>)], n: usize) -> f64 {
    let mut matches = vec![0usize; n];
    let mut totals = vec![0usize; n];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (hyp, refs) in pairs {
        if refs.is_empty() {
            continue;
        }
        hyp_len += hyp.len();
        ref_len += refs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(hyp.len()), l))
            .unwrap_or(0);
        for k in 1..=n {
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in refs {
                let mut counts: HashMap<&[String], usize> = HashMap::new();
                for g in ngrams(r, k) {
                    *counts.entry(g).or_default() += 1;
                }
                for (g, c) in counts {
                    let m = max_ref.entry(g).or_default();
                    *m = (*m).max(c);
                }
            }
            let mut counts: HashMap<&[String], usize> = HashMap::new();
            for g in ngrams(hyp, k) {
                *counts.entry(g).or_default() += 1;
            }
            for (g, c) in counts {
                matches[k - 1] += c.min(max_ref.get(g).copied().unwrap_or(0));
                totals[k - 1] += c;
            }
        }
    }
    if hyp_len == 0 {
        return 0.0;
    }
    let log_p: f64 = (0..n)
        .map(|k| {
            let num = if matches[k] == 0 { BLEU_EPS } else { matches[k] as f64 };
            let den = totals[k].max(1) as f64;
            (num / den).ln()
        })
        .sum::<f64>()
        / n as f64;
    let bp = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    100.0 * bp * log_p.exp()
}

fn tokens_of(t: &Turn) -> Vec<String> {
    word_tokens(&t.text)
}

/// Corpus BLEU of the examples' hypotheses against their references.
pub fn bleu(examples: &[EvalExample], n: usize) -> Result<f64, EvalError> {
    check_order(n)?;
    let pairs: Vec<_> = examples
        .iter()
        .filter_map(|e| {
            let h = e.hypothesis.as_ref()?;
            Some((tokens_of(h), e.references.iter().map(tokens_of).collect()))
        })
        .collect();
    Ok(corpus_bleu(&pairs, n))
}

/// `100 * unique / total` n-grams pooled over all hypotheses; 0 when there are none.
pub fn distinct_n<S: AsRef<str>>(hypotheses: &[S], n: usize) -> f64 {
    let mut seen: HashSet<Vec<String>> = HashSet::new();
    let mut total = 0usize;
    for h in hypotheses {
        let toks = word_tokens(h.as_ref());
        for g in ngrams(&toks, n) {
            total += 1;
            seen.insert(g.to_vec());
        }
    }
    if total == 0 {
        0.0
    } else {
        100.0 * seen.len() as f64 / total as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CceReport {
    pub cce: f64,
    /// Ordered pairs that entered the mean.
    pub ordered_pairs: usize,
    pub skipped: usize,
}

/// Mean over ordered fork pairs of `PPL(y' | dh, x) - PPL(y | dh, x)`.
///
/// Each unordered pair is scored in both directions back to back, so a model
/// that ignores `x` gives exactly zero.
pub fn cce<M: SequenceModel + ?Sized>(model: &M, triples: &[Triple], pairs: &[ForkPair], seed: u64) -> Result<CceReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::NoForkPairs);
    }
    let chosen: Vec<&ForkPair> = if pairs.len() > CCE_PAIR_CAP {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = index::sample(&mut rng, pairs.len(), CCE_PAIR_CAP).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| &pairs[i]).collect()
    } else {
        pairs.iter().collect()
    };
    let (mut sum, mut n, mut skipped) = (0.0, 0usize, 0usize);
    for p in chosen {
        let (a, b) = (&triples[p.first], &triples[p.second]);
        let score = || -> Result<f64, ModelError> {
            let ab = example_ppl(model, &a.dh, &a.x, &b.y)? - example_ppl(model, &a.dh, &a.x, &a.y)?;
            let ba = example_ppl(model, &b.dh, &b.x, &a.y)? - example_ppl(model, &b.dh, &b.x, &b.y)?;
            Ok(ab + ba)
        };
        match score() {
            Ok(s) => {
                sum += s;
                n += 2;
            }
            Err(ModelError::UnknownResponse(_)) => skipped += 2,
            Err(e) => return Err(e.into()),
        }
    }
    if n == 0 {
        return Err(EvalError::NoForkPairs);
    }
    Ok(CceReport {
        cce: sum / n as f64,
        ordered_pairs: n,
        skipped,
    })
}

/// [`cce`] over every fork pair in `triples`.
pub fn cce_all<M: SequenceModel + ?Sized>(model: &M, triples: &[Triple], seed: u64) -> Result<CceReport, EvalError> {
    cce(model, triples, &fork_pairs(triples), seed)
}

fn norm_speaker(s: &str) -> String {
    s.trim().to_lowercase()
}

/// `100 * fraction` of hypotheses whose speaker matches any reference speaker.
/// Examples without a hypothesis are ignored; a hypothesis without a speaker is wrong.
pub fn identity_accuracy(examples: &[EvalExample]) -> (f64, usize) {
    let mut hits = 0usize;
    let mut n = 0usize;
    for e in examples {
        let Some(h) = &e.hypothesis else { continue };
        n += 1;
        let Some(hs) = h.speaker.as_deref().map(norm_speaker) else {
            continue;
        };
        if e.references
            .iter()
            .filter_map(|r| r.speaker.as_deref())
            .any(|rs| norm_speaker(rs) == hs)
        {
            hits += 1;
        }
    }
    if n == 0 {
        (0.0, 0)
    } else {
        (100.0 * hits as f64 / n as f64, n)
    }
}

/// Oracle that spreads probability `1/k` over the `k` references of each
/// context: `exp(mean over references of ln(k) / |y|)` with `|y|` the word
/// token count of the reference text (at least one).
pub fn human_oracle_ppl(examples: &[EvalExample]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for e in examples {
        let k = e.references.len();
        if k == 0 {
            continue;
        }
        for r in &e.references {
            sum += (k as f64).ln() / tokens_of(r).len().max(1) as f64;
            n += 1;
        }
    }
    if n == 0 {
        1.0
    } else {
        (sum / n as f64).exp()
    }
}

/// Each reference of a multi-reference context scored against the others.
pub fn human_holdout_bleu(examples: &[EvalExample], n: usize) -> Result<f64, EvalError> {
    check_order(n)?;
    let mut pairs = Vec::new();
    for e in examples.iter().filter(|e| e.references.len() >= 2) {
        let toks: Vec<Vec<String>> = e.references.iter().map(tokens_of).collect();
        for i in 0..toks.len() {
            let rest = toks.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, t)| t.clone()).collect();
            pairs.push((toks[i].clone(), rest));
        }
    }
    Ok(corpus_bleu(&pairs, n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Ppl,
    Bleu,
    Dist,
    Cce,
    Identity,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Ppl, Metric::Bleu, Metric::Dist, Metric::Cce, Metric::Identity];

    /// Whether the metric needs generated hypotheses.
    pub fn needs_hypotheses(self) -> bool {
        matches!(self, Metric::Bleu | Metric::Dist | Metric::Identity)
    }

    /// Comma-separated list such as `ppl,bleu,cce`.
    pub fn parse_list(s: &str) -> Result<Vec<Metric>, EvalError> {
        let mut out: Vec<Metric> = s
            .split(',')
            .map(str::trim)
            .filter(|m| !m.is_empty())
            .map(str::parse)
            .collect::<Result<_, _>>()?;
        out.sort();
        out.dedup();
        Ok(out)
    }
}

impl FromStr for Metric {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ppl" => Ok(Metric::Ppl),
            "bleu" => Ok(Metric::Bleu),
            "dist" => Ok(Metric::Dist),
            "cce" => Ok(Metric::Cce),
            "identity" | "acc" => Ok(Metric::Identity),
            other => Err(EvalError::UnknownMetric(other.to_string())),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Ppl => "ppl",
            Metric::Bleu => "bleu",
            Metric::Dist => "dist",
            Metric::Cce => "cce",
            Metric::Identity => "identity",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricCounts {
    pub examples: usize,
    pub ppl_references: usize,
    pub ppl_skipped: usize,
    pub hypotheses: usize,
    pub cce_ordered_pairs: usize,
    pub cce_skipped: usize,
    pub identity: usize,
}

/// Scaled metric values (BLEU, Dist and identity accuracy are x100). Metrics
/// that were not requested or could not be computed are `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ppl: Option<f64>,
    pub bleu1: Option<f64>,
    pub bleu2: Option<f64>,
    pub bleu4: Option<f64>,
    pub dist1: Option<f64>,
    pub dist2: Option<f64>,
    pub cce: Option<f64>,
    pub identity_acc: Option<f64>,
    pub counts: MetricCounts,
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_default()
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "model,loss,inference,ppl,bleu1,bleu2,bleu4,dist1,dist2,cce,identity_acc";

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn csv_row(&self, model: &str, loss: &str, inference: &str) -> String {
        let vals = [
            self.ppl,
            self.bleu1,
            self.bleu2,
            self.bleu4,
            self.dist1,
            self.dist2,
            self.cce,
            self.identity_acc,
        ];
        let mut row = format!("{model},{loss},{inference}");
        for v in vals {
            row.push(',');
            row.push_str(&cell(v));
        }
        row
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Compute the requested metrics. `examples` carry hypotheses for the
/// text metrics; `triples` are the split's triples for CCE.
pub fn evaluate<M: SequenceModel + ?Sized>(
    model: &M,
    examples: &[EvalExample],
    triples: &[Triple],
    metrics: &[Metric],
    seed: u64,
) -> Result<MetricReport, EvalError> {
    let mut r = MetricReport::default();
    r.counts.examples = examples.len();
    r.counts.hypotheses = examples.iter().filter(|e| e.hypothesis.is_some()).count();
    for m in metrics {
        match m {
            Metric::Ppl => {
                let p = perplexity(model, examples)?;
                r.ppl = finite(p.ppl);
                r.counts.ppl_references = p.used;
                r.counts.ppl_skipped = p.skipped;
            }
            Metric::Bleu => {
                r.bleu1 = Some(bleu(examples, 1)?);
                r.bleu2 = Some(bleu(examples, 2)?);
                r.bleu4 = Some(bleu(examples, 4)?);
            }
            Metric::Dist => {
                let hyps: Vec<&str> = examples
                    .iter()
                    .filter_map(|e| e.hypothesis.as_ref())
                    .map(|h| h.text.as_str())
                    .collect();
                r.dist1 = Some(distinct_n(&hyps, 1));
                r.dist2 = Some(distinct_n(&hyps, 2));
            }
            Metric::Cce => match cce_all(model, triples, seed) {
                Ok(c) => {
                    r.cce = finite(c.cce);
                    r.counts.cce_ordered_pairs = c.ordered_pairs;
                    r.counts.cce_skipped = c.skipped;
                }
                Err(EvalError::NoForkPairs) => {}
                Err(e) => return Err(e),
            },
            Metric::Identity => {
                let (acc, n) = identity_accuracy(examples);
                r.counts.identity = n;
                r.identity_acc = (n > 0).then_some(acc);
            }
        }
    }
    Ok(r)
}

/// The human-response row: oracle PPL, hold-out BLEU, and Dist over the references themselves.
pub fn human_baseline(examples: &[EvalExample]) -> Result<MetricReport, EvalError> {
    let refs: Vec<&str> = examples.iter().flat_map(|e| e.references.iter().map(|r| r.text.as_str())).collect();
    let multi = examples.iter().any(|e| e.references.len() >= 2);
    let hold = |n| -> Result<Option<f64>, EvalError> { Ok(multi.then_some(human_holdout_bleu(examples, n)?)) };
    Ok(MetricReport {
        ppl: Some(human_oracle_ppl(examples)),
        bleu1: hold(1)?,
        bleu2: hold(2)?,
        bleu4: hold(4)?,
        dist1: Some(distinct_n(&refs, 1)),
        dist2: Some(distinct_n(&refs, 2)),
        cce: None,
        identity_acc: None,
        counts: MetricCounts {
            examples: examples.len(),
            ppl_references: refs.len(),
            ..MetricCounts::default()
        },
    })
}

/// Reference counts per context size, for reporting.
pub fn reference_histogram(examples: &[EvalExample]) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for e in examples {
        *h.entry(e.references.len()).or_default() += 1;
    }
    h
}
