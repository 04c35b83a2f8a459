//! Score hand-written hypotheses with every metric, plus the human baselines.
//!
//! `cargo run --example evaluate_metrics`

use cdk::evaluation::{bleu, distinct_n, human_holdout_bleu, human_oracle_ppl, identity_accuracy, reference_histogram, EvalExample};
use cdk::extract::Turn;

fn example(x: &str, refs: &[(&str, &str)], hyp: (&str, &str)) -> EvalExample {
    EvalExample {
        dh: vec![],
        x: Turn::new("Ann", x),
        references: refs.iter().map(|(s, t)| Turn::new(*s, *t)).collect(),
        hypothesis: Some(Turn::new(hyp.0, hyp.1)),
    }
}

fn main() {
    let examples = vec![
        example(
            "any news?",
            &[("Bo", "the train is late again"), ("Bo", "the bus is late today")],
            ("Bo", "the train is late"),
        ),
        example("ready?", &[("Cy", "give me five minutes")], ("Bo", "give me a minute")),
        example("lunch?", &[("Bo", "sure , where ?")], ("Bo", "sure , where ?")),
    ];
    for n in [1, 2, 4] {
        println!("BLEU-{n}: {:.2}", bleu(&examples, n).unwrap());
    }
    let hyps: Vec<&str> = examples.iter().map(|e| e.hypothesis.as_ref().unwrap().text.as_str()).collect();
    println!("Dist-1 {:.2}  Dist-2 {:.2}", distinct_n(&hyps, 1), distinct_n(&hyps, 2));
    let (acc, n) = identity_accuracy(&examples);
    println!("identity accuracy {acc:.2} over {n}");
    println!("references per example {:?}", reference_histogram(&examples));
    println!("human oracle PPL {:.4}", human_oracle_ppl(&examples));
    println!("human hold-out BLEU-1 {:.2}", human_holdout_bleu(&examples, 1).unwrap());
}
