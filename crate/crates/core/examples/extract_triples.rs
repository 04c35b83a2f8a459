//! Turn a forked dialogue into (history, cause, response) triples with
//! counterparts, then split a larger corpus by dialogue id.
//!
//! `cargo run --example extract_triples`

use std::path::Path;

use cdk::dag::{parse_dialogue, DialogueDag, TurnNode};
use cdk::extract::{extract_triples, fork_pairs, split_corpus, triples_to_jsonl, SplitSpec};

fn main() {
    let raw = std::fs::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/fork3.json")).unwrap();
    let dag = parse_dialogue(&raw).unwrap();
    let triples = extract_triples(&dag).unwrap();
    for t in &triples {
        let dh: Vec<String> = t.dh.iter().map(|u| u.to_string()).collect();
        println!("dh={dh:?}\n  x={}\n  y={}\n  counterparts={:?}", t.x, t.y, t.counterpart_x_ids());
    }
    println!("fork pairs: {:?}", fork_pairs(&triples));
    print!("{}", triples_to_jsonl(&triples[..1]));

    let corpus: Vec<DialogueDag> = (0..50)
        .map(|i| {
            let nodes = vec![
                TurnNode::utterance(0, "A", format!("hello {i}")),
                TurnNode::utterance(1, "B", format!("hi {i}")),
            ];
            DialogueDag::new(format!("dlg-{i}"), nodes, vec![(0, 1)]).unwrap()
        })
        .collect();
    let splits = split_corpus(&corpus, &SplitSpec::new(0.8, 0.1, 0.1, 7).unwrap()).unwrap();
    println!(
        "split sizes: train {} valid {} test {}",
        splits.train.len(),
        splits.valid.len(),
        splits.test.len()
    );
}
