//! Train the tabular model with MLE and ExMATE on a small fork corpus and
//! compare perplexity, counterpart probability, ATE and CCE.
//!
//! `cargo run --release --example train_exmate_vs_mle`

use cdk::dag::{DialogueDag, TurnNode};
use cdk::evaluation::{cce_all, perplexity_triples};
use cdk::extract::extract_corpus;
use cdk::textmodel::{SequenceModel, TabularModel};
use cdk::training::{estimate_ate_all, train, LossConfig, LossKind, Optimizer};

fn main() {
    let dags: Vec<DialogueDag> = (0..30)
        .map(|f| {
            let nodes = vec![
                TurnNode::utterance(0, "Ann", format!("want tea {f}?")),
                TurnNode::utterance(1, "Bo", format!("yes please {f}")),
                TurnNode::utterance(2, "Bo", format!("no thanks {f}")),
                TurnNode::utterance(3, "Ann", format!("kettle is on {f}")),
                TurnNode::utterance(4, "Ann", format!("suit yourself {f}")),
            ];
            DialogueDag::new(format!("tea-{f}"), nodes, vec![(0, 1), (0, 2), (1, 3), (2, 4)]).unwrap()
        })
        .collect();
    let triples = extract_corpus(&dags).unwrap();
    let probe = triples.iter().find(|t| !t.counterparts.is_empty()).unwrap();

    for loss in [LossKind::Mle, LossKind::Exmate] {
        let config = LossConfig {
            loss,
            learning_rate: 5.0,
            batch_size: 8,
            epochs: 30,
            seed: 11,
            optimizer: Optimizer::Sgd,
            clip_norm: None,
            ..LossConfig::default()
        };
        let mut model = TabularModel::from_triples(&triples);
        let out = train(&mut model, &triples, None, &config, |_, _| Ok(())).unwrap();
        let p_cf = model.logprob(&probe.dh, &probe.counterparts[0].turn, &probe.y).unwrap().exp();
        println!(
            "{loss:>6}: {} steps, final loss {:.4}, PPL {:.4}, P(y|x_c) {p_cf:.2e}, ATE {:.4}, CCE {:.4}",
            out.steps,
            out.history.last().unwrap().loss,
            perplexity_triples(&model, &triples).ppl,
            estimate_ate_all(&model, &triples).unwrap().ate,
            cce_all(&model, &triples, 0).unwrap().cce
        );
    }
}
