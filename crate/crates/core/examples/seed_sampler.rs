//! Draw seed-dialogue prefixes and compare the length histogram with the
//! clamped Poisson target.
//!
//! `cargo run --example seed_sampler`

use cdk::dag::{DialogueDag, TurnNode};
use cdk::extract::sample_seed_dialogue;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let len = 6;
    let nodes = (0..len as u32)
        .map(|i| TurnNode::utterance(i, if i % 2 == 0 { "A" } else { "B" }, format!("turn {i}")))
        .collect();
    let edges = (1..len as u32).map(|i| (i - 1, i)).collect();
    let dag = DialogueDag::new("line", nodes, edges).unwrap();

    let draws = 20_000;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut hist = vec![0usize; len + 1];
    for _ in 0..draws {
        hist[sample_seed_dialogue(&dag, 1.0, &mut rng).unwrap().len()] += 1;
    }
    // t ~ Poisson(1), prefix length clamp(t + 2, 2, len)
    let mut expected = vec![0.0; len + 1];
    let mut pmf = (-1f64).exp();
    for t in 0..40usize {
        if t > 0 {
            pmf /= t as f64;
        }
        expected[(t + 2).min(len)] += pmf;
    }
    println!("len  observed  expected");
    for k in 2..=len {
        println!("{k:>3}  {:>8.4}  {:>8.4}", hist[k] as f64 / draws as f64, expected[k]);
    }
}
