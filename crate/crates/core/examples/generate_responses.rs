//! Fit a small recurrent model, then decode with greedy, softmax and top-k.
//!
//! `cargo run --release --example generate_responses`

use cdk::evaluation::{distinct_n, evaluate, EvalExample, Metric};
use cdk::extract::extract_corpus;
use cdk::generation::{attach, generate_split, InferenceConfig};
use cdk::textmodel::{DecodeMethod, RnnConfig, TinyRnnLm, Vocab};
use cdk::training::{train, LossConfig, LossKind, Optimizer};
use std::path::Path;

fn main() {
    let dags = cdk::dag::read_corpus(&Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")).unwrap();
    let triples = extract_corpus(&dags).unwrap();
    let mut model = TinyRnnLm::new(
        Vocab::build(&triples),
        RnnConfig {
            embed_dim: 16,
            hidden_dim: 32,
            max_context: 48,
        },
        2,
    );
    let config = LossConfig {
        loss: LossKind::Exmate,
        learning_rate: 0.02,
        batch_size: 4,
        epochs: 150,
        seed: 2,
        optimizer: Optimizer::adam(),
        ..LossConfig::default()
    };
    let out = train(&mut model, &triples, None, &config, |_, _| Ok(())).unwrap();
    println!("trained {} steps, last loss {:.3}", out.steps, out.history.last().unwrap().loss);

    let examples = EvalExample::group(&triples);
    for method in [
        DecodeMethod::Greedy,
        DecodeMethod::Softmax { temperature: 0.7 },
        DecodeMethod::TopK { k: 3 },
    ] {
        let cfg = InferenceConfig::new(method, 20, 5).unwrap();
        let hyps = generate_split(&model, &examples, &cfg).unwrap();
        let mut scored = examples.clone();
        attach(&mut scored, &hyps);
        let report = evaluate(&model, &scored, &triples, &[Metric::Bleu, Metric::Identity], 0).unwrap();
        let texts: Vec<&str> = hyps.iter().map(|h| h.text.as_str()).collect();
        println!(
            "\n{method}: BLEU-1 {:.1}, identity {:.1}, Dist-2 {:.1}",
            report.bleu1.unwrap_or(f64::NAN),
            report.identity_acc.unwrap_or(f64::NAN),
            distinct_n(&texts, 2)
        );
        for (e, h) in examples.iter().zip(&hyps).take(3) {
            println!("  {} -> {}", e.x, h.turn());
        }
    }
}
