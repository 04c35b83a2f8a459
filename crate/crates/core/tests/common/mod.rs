#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use cdk::dag::{parse_dialogue, DialogueDag, TurnNode};
use cdk::extract::{extract_triples, Triple};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn fixture(name: &str) -> DialogueDag {
    let bytes = std::fs::read(fixtures_dir().join(format!("{name}.json"))).unwrap();
    parse_dialogue(&bytes).unwrap()
}

pub fn fork_triples() -> Vec<Triple> {
    extract_triples(&fixture("fork3")).unwrap()
}

/// Random DAG with unique node texts: edges only go from lower to higher ids.
/// Roughly one node in eight is a scene note.
pub fn random_dag(rng: &mut ChaCha8Rng, max_nodes: u32) -> DialogueDag {
    let n = rng.random_range(1..=max_nodes);
    let nodes: Vec<TurnNode> = (0..n)
        .map(|i| {
            if i > 0 && rng.random_bool(0.125) {
                TurnNode::scene(i, format!("scene {i}"))
            } else {
                TurnNode::utterance(i, ["A", "B", "C"][rng.random_range(0..3)], format!("line {i}"))
            }
        })
        .collect();
    let mut edges = BTreeSet::new();
    for j in 1..n {
        // every non-root gets at least one parent most of the time
        if rng.random_bool(0.9) {
            edges.insert((rng.random_range(0..j), j));
        }
        if rng.random_bool(0.25) {
            edges.insert((rng.random_range(0..j), j));
        }
    }
    DialogueDag::new(format!("rand{n}"), nodes, edges.into_iter().collect()).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// All root-to-leaf paths by plain recursion.
pub fn brute_paths(dag: &DialogueDag) -> Vec<Vec<u32>> {
    fn walk(dag: &DialogueDag, path: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        let last = *path.last().unwrap();
        let kids: Vec<u32> = dag.edges.iter().filter(|e| e.0 == last).map(|e| e.1).collect();
        if kids.is_empty() {
            out.push(path.clone());
            return;
        }
        for k in kids {
            path.push(k);
            walk(dag, path, out);
            path.pop();
        }
    }
    let mut out = Vec::new();
    let targets: BTreeSet<u32> = dag.edges.iter().map(|e| e.1).collect();
    for n in &dag.nodes {
        if !targets.contains(&n.id) {
            walk(dag, &mut vec![n.id], &mut out);
        }
    }
    out
}

/// Distinct `(history ids, x, y)` along every root-to-leaf path, with
/// `x -> y` a direct edge between utterances.
pub fn brute_triple_keys(dag: &DialogueDag) -> BTreeSet<(Vec<u32>, u32, u32)> {
    let is_utt = |id: u32| dag.node(id).unwrap().is_utterance();
    let mut out = BTreeSet::new();
    for p in brute_paths(dag) {
        for i in 0..p.len().saturating_sub(1) {
            if is_utt(p[i]) && is_utt(p[i + 1]) {
                out.insert((p[..i].to_vec(), p[i], p[i + 1]));
            }
        }
    }
    out
}
