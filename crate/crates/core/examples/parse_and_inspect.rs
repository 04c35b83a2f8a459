//! Load the bundled fixtures, validate them and print structure, stats and DOT.
//!
//! `cargo run --example parse_and_inspect`

use std::path::Path;

use cdk::dag::{corpus_stats, enumerate_paths, export_dot, find_colliders, find_forks, read_corpus_entries, validate};

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let mut dags = Vec::new();
    for (name, parsed) in read_corpus_entries(&dir).expect("fixture directory") {
        let dag = match parsed {
            Ok(d) => d,
            Err(e) => {
                println!("{name}: {e}");
                continue;
            }
        };
        let problems = validate(&dag);
        println!(
            "{}: {} nodes, {} branches, forks {:?}, colliders {:?}, {} violations",
            dag.dialogue_id,
            dag.nodes.len(),
            dag.count_branches(),
            find_forks(&dag),
            find_colliders(&dag),
            problems.len()
        );
        for path in enumerate_paths(&dag).unwrap() {
            println!("  path {path:?}");
        }
        dags.push(dag);
    }
    let s = corpus_stats(&dags);
    println!(
        "corpus: {} dialogues, {} branches, {} utterances, {} speakers, {:.2} words/utterance",
        s.num_dialogues, s.num_branches, s.num_utterances, s.num_speakers, s.avg_words_per_utterance
    );
    if let Some(d) = dags.iter().find(|d| d.dialogue_id == "diamond") {
        println!("\n{}", export_dot(d));
    }
}
