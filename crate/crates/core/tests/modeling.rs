mod common;

use std::collections::HashMap;

use approx::assert_abs_diff_eq;
use cdk::evaluation::{bleu, cce_all, distinct_n, perplexity, perplexity_triples, EvalExample};
use cdk::extract::{extract_triples, fork_pairs, Triple, Turn};
use cdk::generation::{generate_split, InferenceConfig};
use cdk::textmodel::{context_key, AnyModel, ContextBlind, DecodeMethod, RnnConfig, SequenceModel, TabularModel, TinyRnnLm, Vocab};
use cdk::training::{estimate_ate_all, exmate_loss, mle_loss, train, LossConfig, LossKind, Optimizer};
use common::{fixture, fork_triples, rng};
use proptest::prelude::*;

fn sgd(loss: LossKind, lr: f64, epochs: usize) -> LossConfig {
    LossConfig {
        loss,
        learning_rate: lr,
        batch_size: 4,
        epochs,
        seed: 7,
        optimizer: Optimizer::Sgd,
        max_steps: None,
        clip_norm: None,
        patience: 3,
    }
}

#[test]
fn mle_decreases_monotonically_over_50_sgd_steps() {
    let triples = fork_triples();
    assert_eq!(triples.len(), 4);
    let mut model = TabularModel::from_triples(&triples);
    let out = train(&mut model, &triples, None, &sgd(LossKind::Mle, 0.1, 50), |_, _| Ok(())).unwrap();
    assert_eq!(out.batches.len(), 50);
    for w in out.batches.windows(2) {
        assert!(w[1].total < w[0].total, "{} !< {}", w[1].total, w[0].total);
    }
}

/// Optimal train PPL of a per-context softmax: each context's empirical
/// response frequencies, scored against the model's token counts.
fn entropy_bound(model: &TabularModel, triples: &[Triple]) -> f64 {
    let mut by_ctx: HashMap<String, HashMap<&Turn, usize>> = HashMap::new();
    for t in triples {
        *by_ctx.entry(context_key(&t.dh, &t.x)).or_default().entry(&t.y).or_default() += 1;
    }
    let (mut nll, mut tokens) = (0.0, 0usize);
    for t in triples {
        let counts = &by_ctx[&context_key(&t.dh, &t.x)];
        let total: usize = counts.values().sum();
        nll -= (counts[&t.y] as f64 / total as f64).ln();
        tokens += model.token_count(&t.y);
    }
    (nll / tokens as f64).exp()
}

#[test]
fn tabular_mle_reaches_entropy_bound() {
    let triples = fork_triples();
    let mut model = TabularModel::from_triples(&triples);
    let bound = entropy_bound(&model, &triples);
    assert!(bound > 1.0);
    let cfg = LossConfig {
        max_steps: Some(200),
        optimizer: Optimizer::adam(),
        ..sgd(LossKind::Mle, 0.1, 200)
    };
    let out = train(&mut model, &triples, None, &cfg, |_, _| Ok(())).unwrap();
    assert_eq!(out.steps, 200);
    let ppl = perplexity_triples(&model, &triples).ppl;
    assert!((ppl - bound).abs() / bound <= 0.01, "ppl {ppl} bound {bound}");
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let triples = extract_triples(&fixture("diamond")).unwrap();
    let run = || {
        let mut m = AnyModel::Neural(TinyRnnLm::new(Vocab::build(&triples), RnnConfig::default(), 3));
        let cfg = LossConfig {
            learning_rate: 0.01,
            batch_size: 2,
            epochs: 3,
            ..LossConfig::default()
        };
        train(&mut m, &triples, None, &cfg, |_, _| Ok(())).unwrap();
        m.to_checkpoint_json()
    };
    assert_eq!(run(), run());
}

fn p(model: &TabularModel, t: &Triple, x: &Turn) -> f64 {
    model.logprob(&t.dh, x, &t.y).unwrap().exp()
}

#[test]
fn exmate_lowers_counterpart_probability_versus_mle() {
    let triples = fork_triples();
    let fork: Vec<&Triple> = triples.iter().filter(|t| !t.dh.is_empty()).collect();
    for steps in [1, 10, 50] {
        let mut mle = TabularModel::from_triples(&triples);
        let mut ex = mle.clone();
        train(&mut mle, &triples, None, &sgd(LossKind::Mle, 0.1, steps), |_, _| Ok(())).unwrap();
        train(&mut ex, &triples, None, &sgd(LossKind::Exmate, 0.1, steps), |_, _| Ok(())).unwrap();
        for t in &fork {
            let xc = &t.counterparts[0].turn;
            assert!(p(&ex, t, xc) < p(&mle, t, xc), "steps {steps}");
        }
    }
}

#[test]
fn ate_rises_under_exmate() {
    let triples = fork_triples();
    let mut model = TabularModel::from_triples(&triples);
    let before = estimate_ate_all(&model, &triples).unwrap();
    train(&mut model, &triples, None, &sgd(LossKind::Exmate, 0.1, 20), |_, _| Ok(())).unwrap();
    let after = estimate_ate_all(&model, &triples).unwrap();
    assert_eq!(before.ate, 0.0);
    assert!(after.ate > before.ate);
    assert!(after.ate <= 2.0);
}

#[test]
fn context_blind_model_has_zero_ate_and_cce() {
    let triples = fork_triples();
    let mut model = TabularModel::from_triples(&triples);
    train(&mut model, &triples, None, &sgd(LossKind::Mle, 0.5, 30), |_, _| Ok(())).unwrap();
    let vocab = Vocab::build(&triples);
    let rnn = TinyRnnLm::new(vocab, RnnConfig::default(), 1);
    assert_eq!(estimate_ate_all(&ContextBlind(model.clone()), &triples).unwrap().ate, 0.0);
    assert_eq!(cce_all(&ContextBlind(model.clone()), &triples, 0).unwrap().cce, 0.0);
    assert_eq!(estimate_ate_all(&ContextBlind(rnn.clone()), &triples).unwrap().ate, 0.0);
    assert_eq!(cce_all(&ContextBlind(rnn), &triples, 0).unwrap().cce, 0.0);
    assert!(cce_all(&model, &triples, 0).unwrap().cce > 0.0);
}

#[test]
fn exmate_counterpart_gradient_matches_finite_differences() {
    let triples = fork_triples();
    let vocab = Vocab::build(&triples);
    let model = TinyRnnLm::new(
        vocab,
        RnnConfig {
            embed_dim: 4,
            hidden_dim: 5,
            max_context: 64,
        },
        11,
    );
    let t = triples.iter().find(|t| !t.counterparts.is_empty()).unwrap();
    let loss = |m: &TinyRnnLm| {
        let mut r = rng(0);
        exmate_loss(m, [t], &mut r).unwrap().0.total
    };
    let (_, g) = exmate_loss(&model, [t], &mut rng(0)).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in (0..model.num_params()).step_by(7) {
        let mut a = model.clone();
        a.params_mut()[i] += h;
        let mut b = model.clone();
        b.params_mut()[i] -= h;
        let fd = (loss(&a) - loss(&b)) / (2.0 * h);
        // below 1e-8 the central difference is dominated by rounding
        if g.0[i].abs() <= 1e-8 {
            assert!(fd.abs() < 1e-8);
            continue;
        }
        worst = worst.max((fd - g.0[i]).abs() / fd.abs().max(g.0[i].abs()));
    }
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn metric_invariants() {
    let mk = |refs: &[&str], hyp: &str| EvalExample {
        dh: vec![],
        x: Turn::new("A", "q"),
        references: refs.iter().map(|r| Turn::new("B", *r)).collect(),
        hypothesis: Some(Turn::new("B", hyp)),
    };
    let a = [mk(&["the red fox runs", "a blue cat sits down"], "the red cat sits")];
    let b = [mk(&["a blue cat sits down", "the red fox runs"], "the red cat sits")];
    for n in [1, 2, 4] {
        assert_eq!(bleu(&a, n).unwrap(), bleu(&b, n).unwrap());
    }
    let hyps = ["a b c", "c d", "a b"];
    let rev = ["a b", "c d", "a b c"];
    assert_eq!(distinct_n(&hyps, 1), distinct_n(&rev, 1));
    let dup = ["a b c", "c d", "a b", "a b"];
    assert!(distinct_n(&dup, 2) <= distinct_n(&hyps, 2));
}

#[test]
fn perfect_model_has_unit_ppl() {
    let x = Turn::new("A", "q");
    let y = Turn::new("B", "r");
    let mut m = TabularModel::new(vec![context_key(&[], &x)], vec![y.clone(), Turn::new("B", "s")]);
    m.set_logits(0, &[800.0, 0.0]);
    let ex = [EvalExample {
        dh: vec![],
        x,
        references: vec![y],
        hypothesis: None,
    }];
    assert_eq!(perplexity(&m, &ex).unwrap().ppl, 1.0);
    let u = TabularModel::new(
        vec![context_key(&[], &ex[0].x)],
        vec![ex[0].references[0].clone(), Turn::new("B", "s")],
    );
    assert_abs_diff_eq!(perplexity(&u, &ex).unwrap().ppl, 2.0, epsilon = 1e-12);
}

fn synthetic_model(contexts: usize, responses: usize) -> (TabularModel, Vec<EvalExample>) {
    let words = [
        "red", "blue", "green", "cold", "warm", "fast", "slow", "big", "small", "old", "new", "loud",
    ];
    let mut r = rng(99);
    let resp: Vec<Turn> = (0..responses)
        .map(|i| {
            Turn::new(
                "B",
                format!("{} {} {}", words[i % 12], words[(i / 12) % 12], words[(i * 7 + 3) % 12]),
            )
        })
        .collect();
    let xs: Vec<Turn> = (0..contexts).map(|i| Turn::new("A", format!("prompt {i}"))).collect();
    let mut m = TabularModel::new(xs.iter().map(|x| context_key(&[], x)).collect(), resp.clone());
    use rand::Rng;
    for c in 0..contexts {
        let logits: Vec<f64> = (0..m.responses().len()).map(|_| r.random_range(-3.0..3.0)).collect();
        m.set_logits(c, &logits);
    }
    let ex = xs
        .into_iter()
        .map(|x| EvalExample {
            dh: vec![],
            x,
            references: vec![resp[0].clone()],
            hypothesis: None,
        })
        .collect();
    (m, ex)
}

#[test]
fn generation_determinism_and_decoder_relations() {
    let (m, ex) = synthetic_model(500, 60);
    let greedy = InferenceConfig::new(DecodeMethod::Greedy, 16, 5).unwrap();
    let g1 = generate_split(&m, &ex, &greedy).unwrap();
    let g2 = generate_split(&m, &ex, &greedy).unwrap();
    assert_eq!(g1, g2);
    assert_eq!(g1.len(), ex.len());
    let top1 = generate_split(&m, &ex, &InferenceConfig::new(DecodeMethod::TopK { k: 1 }, 16, 5).unwrap()).unwrap();
    for (a, b) in g1.iter().zip(&top1) {
        assert_eq!((&a.speaker, &a.text), (&b.speaker, &b.text));
    }
    let dist2 = |t: f64| {
        let h = generate_split(
            &m,
            &ex,
            &InferenceConfig::new(DecodeMethod::Softmax { temperature: t }, 16, 5).unwrap(),
        )
        .unwrap();
        let texts: Vec<&str> = h.iter().map(|h| h.text.as_str()).collect();
        distinct_n(&texts, 2)
    };
    assert!(dist2(2.0) >= dist2(0.5));
    assert!(g1.iter().all(|h| !h.text.is_empty() && h.speaker.as_deref() == Some("B")));
}

#[test]
fn fork_pairs_on_fixtures() {
    assert_eq!(fork_pairs(&fork_triples()).len(), 1);
    assert!(fork_pairs(&extract_triples(&fixture("diamond")).unwrap()).is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn counterpart_term_is_a_probability(logits in proptest::collection::vec(-30.0f64..30.0, 8)) {
        let triples = fork_triples();
        let mut model = TabularModel::from_triples(&triples);
        let r = model.responses().len();
        for c in 0..model.contexts().len() {
            let block: Vec<f64> = (0..r).map(|i| logits[(c * r + i) % logits.len()]).collect();
            model.set_logits(c, &block);
        }
        for t in triples.iter().filter(|t| !t.counterparts.is_empty()) {
            let (rep, _) = exmate_loss(&model, [t], &mut rng(1)).unwrap();
            prop_assert!(rep.counterpart_term > 0.0 && rep.counterpart_term <= 1.0);
            prop_assert!(rep.mle_term >= 0.0);
            prop_assert_eq!(rep.total, rep.mle_term + rep.counterpart_term);
        }
    }

    #[test]
    fn ate_stays_within_two(logits in proptest::collection::vec(-30.0f64..30.0, 2..12)) {
        let triples = fork_triples();
        let mut model = TabularModel::from_triples(&triples);
        let r = model.responses().len();
        for c in 0..model.contexts().len() {
            let block: Vec<f64> = (0..r).map(|i| logits[(c * 7 + i) % logits.len()]).collect();
            model.set_logits(c, &block);
        }
        let ate = estimate_ate_all(&model, &triples).unwrap().ate;
        prop_assert!((-2.0..=2.0).contains(&ate), "{}", ate);
    }

    #[test]
    fn exmate_equals_mle_without_counterparts(seed in any::<u64>()) {
        let mut triples = fork_triples();
        triples.iter_mut().for_each(|t| t.counterparts.clear());
        let model = TinyRnnLm::new(Vocab::build(&triples), RnnConfig { embed_dim: 3, hidden_dim: 4, max_context: 32 }, seed);
        let a = mle_loss(&model, &triples).unwrap();
        let b = exmate_loss(&model, &triples, &mut rng(seed)).unwrap();
        prop_assert_eq!(a, b);
    }
}
