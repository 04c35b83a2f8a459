//! Causal triple extraction, fork counterparts, corpus splits and the
//! seed-dialogue sampler.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use rand::seq::IndexedRandom;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dag::{DagError, DialogueDag, NodeKind, DEFAULT_PATH_CAP};

/// One rendered turn. Scene turns have no speaker.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Option<String>,
    pub text: String,
}

impl Turn {
    pub fn new(speaker: impl Into<String>, text: impl Into<String>) -> Self {
        Turn {
            speaker: Some(speaker.into()),
            text: text.into(),
        }
    }

    pub fn scene(text: impl Into<String>) -> Self {
        Turn {
            speaker: None,
            text: text.into(),
        }
    }
}

impl fmt::Display for Turn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.speaker {
            Some(s) => write!(f, "{s}: {}", self.text),
            None => write!(f, "{}", self.text),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Counterpart {
    pub node_id: u32,
    pub turn: Turn,
}

/// A `(dh, x, y)` training example with the fork siblings of `x` that can
/// act as negative causes for `y`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triple {
    pub dialogue_id: String,
    pub dh: Vec<Turn>,
    pub x: Turn,
    pub y: Turn,
    pub x_node_id: u32,
    pub y_node_id: u32,
    pub counterparts: Vec<Counterpart>,
}

impl Triple {
    pub fn counterpart_x_ids(&self) -> Vec<u32> {
        self.counterparts.iter().map(|c| c.node_id).collect()
    }

    fn content_key(&self) -> (&[Turn], &Turn, &Turn) {
        (&self.dh, &self.x, &self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExtractError {
    #[error(transparent)]
    Dag(#[from] DagError),
    #[error("no root path with at least two turns")]
    TooShort,
    #[error("invalid split fractions: {0}")]
    InvalidSplit(String),
    #[error("lambda must be positive and finite, got {0}")]
    InvalidLambda(f64),
}

fn turn_of(dag: &DialogueDag, id: u32) -> (NodeKind, Turn) {
    let n = dag.node(id).expect("node id from validated dag");
    (
        n.kind,
        Turn {
            speaker: n.speaker.clone(),
            text: n.text.clone(),
        },
    )
}

/// Extract every distinct `(dh, x, y)` triple.
///
/// Each root path reaching `x` contributes its own history. Scene nodes
/// appear in histories but never as `x` or `y`. Duplicates are decided on
/// rendered content, so two paths that read the same produce one triple.
pub fn extract_triples(dag: &DialogueDag) -> Result<Vec<Triple>, ExtractError> {
    extract_triples_capped(dag, DEFAULT_PATH_CAP)
}

pub fn extract_triples_capped(dag: &DialogueDag, cap: usize) -> Result<Vec<Triple>, ExtractError> {
    if let Err(node) = dag.topological_order() {
        return Err(DagError::CycleDetected { node }.into());
    }
    let prefix_count: u128 = dag.paths_into().values().fold(0u128, |a, &b| a.saturating_add(b));
    if prefix_count > cap as u128 {
        return Err(DagError::PathExplosion { cap }.into());
    }

    let children = dag.children();
    let roots = dag.roots();
    let turns: BTreeMap<u32, (NodeKind, Turn)> = dag.nodes.iter().map(|n| (n.id, turn_of(dag, n.id))).collect();
    let is_utt = |id: u32| turns[&id].0 == NodeKind::Utterance;

    // (triple, candidate sibling ids) in DFS order
    let mut raw: Vec<(Triple, Vec<u32>)> = Vec::new();
    let mut seen: HashSet<(Vec<Turn>, Turn, Turn)> = HashSet::new();

    for &root in &roots {
        let mut path = vec![root];
        let mut cursor = vec![0usize];
        let mut fresh = true;
        while let Some(&last) = path.last() {
            if fresh && is_utt(last) {
                let siblings: Vec<u32> = if path.len() >= 2 {
                    children[&path[path.len() - 2]].clone()
                } else {
                    roots.clone()
                };
                let siblings: Vec<u32> = siblings.into_iter().filter(|&s| s != last && is_utt(s)).collect();
                let dh: Vec<Turn> = path[..path.len() - 1].iter().map(|id| turns[id].1.clone()).collect();
                let x = turns[&last].1.clone();
                for &child in children[&last].iter().filter(|&&c| is_utt(c)) {
                    let y = turns[&child].1.clone();
                    if seen.insert((dh.clone(), x.clone(), y.clone())) {
                        raw.push((
                            Triple {
                                dialogue_id: dag.dialogue_id.clone(),
                                dh: dh.clone(),
                                x: x.clone(),
                                y,
                                x_node_id: last,
                                y_node_id: child,
                                counterparts: Vec::new(),
                            },
                            siblings.clone(),
                        ));
                    }
                }
            }
            let kids = &children[&last];
            let idx = cursor.last_mut().unwrap();
            if *idx < kids.len() {
                let next = kids[*idx];
                *idx += 1;
                path.push(next);
                cursor.push(0);
                fresh = true;
            } else {
                path.pop();
                cursor.pop();
                fresh = false;
            }
        }
    }

    // Counterparts: siblings x_c with (dh, x_c, y) not in the extracted set.
    let present: HashSet<(&[Turn], &Turn, &Turn)> = raw.iter().map(|(t, _)| t.content_key()).collect();
    let mut filled = Vec::with_capacity(raw.len());
    for (t, siblings) in &raw {
        let mut used: BTreeSet<&Turn> = BTreeSet::new();
        let mut cps = Vec::new();
        for &sid in siblings {
            let turn = &turns[&sid].1;
            if turn == &t.x || present.contains(&(t.dh.as_slice(), turn, &t.y)) || !used.insert(turn) {
                continue;
            }
            cps.push(Counterpart {
                node_id: sid,
                turn: turn.clone(),
            });
        }
        filled.push(cps);
    }
    Ok(raw
        .into_iter()
        .zip(filled)
        .map(|((mut t, _), cps)| {
            t.counterparts = cps;
            t
        })
        .collect())
}

/// Extract triples from every dialogue, in corpus order.
pub fn extract_corpus(dags: &[DialogueDag]) -> Result<Vec<Triple>, ExtractError> {
    let mut out = Vec::new();
    for dag in dags {
        out.extend(extract_triples(dag)?);
    }
    Ok(out)
}

/// Uniform choice among the triple's counterparts. Does not touch `rng`
/// when there are none.
pub fn sample_counterpart<'a, R: Rng + ?Sized>(triple: &'a Triple, rng: &mut R) -> Option<&'a Counterpart> {
    if triple.counterparts.is_empty() {
        return None;
    }
    triple.counterparts.choose(rng)
}

/// A fork pair: two triples sharing `dh` with different causes, where
/// neither cause is recorded with the other's response.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForkPair {
    pub first: usize,
    pub second: usize,
}

/// Unordered fork pairs `(i, j)` with `i < j` over a triple list.
pub fn fork_pairs(triples: &[Triple]) -> Vec<ForkPair> {
    let present: HashSet<(&[Turn], &Turn, &Turn)> = triples.iter().map(|t| t.content_key()).collect();
    let mut by_dh: BTreeMap<&[Turn], Vec<usize>> = BTreeMap::new();
    for (i, t) in triples.iter().enumerate() {
        by_dh.entry(t.dh.as_slice()).or_default().push(i);
    }
    let mut out = Vec::new();
    for group in by_dh.values() {
        for (a, &i) in group.iter().enumerate() {
            for &j in &group[a + 1..] {
                let (ti, tj) = (&triples[i], &triples[j]);
                if ti.x == tj.x {
                    continue;
                }
                let dh = ti.dh.as_slice();
                if present.contains(&(dh, &ti.x, &tj.y)) || present.contains(&(dh, &tj.x, &ti.y)) {
                    continue;
                }
                out.push(ForkPair { first: i, second: j });
            }
        }
    }
    out.sort_by_key(|p| (p.first, p.second));
    out
}

// ---------------------------------------------------------------------------
// Splits

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, valid: f64, test: f64, seed: u64) -> Result<Self, ExtractError> {
        let spec = SplitSpec { train, valid, test, seed };
        spec.check()?;
        Ok(spec)
    }

    fn check(&self) -> Result<(), ExtractError> {
        for f in [self.train, self.valid, self.test] {
            if !(0.0..=1.0).contains(&f) {
                return Err(ExtractError::InvalidSplit(format!("fraction {f} outside [0, 1]")));
            }
        }
        let sum = self.train + self.valid + self.test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ExtractError::InvalidSplit(format!("fractions sum to {sum}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: BTreeSet<String>,
    pub valid: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

/// Position of a dialogue id in `[0, 1)` from a seeded SHA-256.
fn unit_hash(id: &str, seed: u64) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    let digest = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    // 53 high bits give an exact double in [0, 1)
    (u64::from_le_bytes(b) >> 11) as f64 / (1u64 << 53) as f64
}

/// Whole-dialogue split by stable hash of the id.
pub fn split_ids<'a>(ids: impl IntoIterator<Item = &'a str>, spec: &SplitSpec) -> Result<Splits, ExtractError> {
    spec.check()?;
    let mut out = Splits::default();
    for id in ids {
        let u = unit_hash(id, spec.seed);
        let bucket = if u < spec.train {
            &mut out.train
        } else if u < spec.train + spec.valid {
            &mut out.valid
        } else {
            &mut out.test
        };
        bucket.insert(id.to_string());
    }
    Ok(out)
}

pub fn split_corpus(dags: &[DialogueDag], spec: &SplitSpec) -> Result<Splits, ExtractError> {
    split_ids(dags.iter().map(|d| d.dialogue_id.as_str()), spec)
}

// ---------------------------------------------------------------------------
// Seed-dialogue sampler

/// Truncation length used by the seed sampler: `max(min(t + 2, len), 2)`.
pub fn clamp_seed_length(t: u64, len: usize) -> usize {
    let t = usize::try_from(t).unwrap_or(usize::MAX);
    t.saturating_add(2).min(len).max(2)
}

/// Draw a seed dialogue prefix.
///
/// `t` is drawn from Poisson(`lambda`). A branch is then walked from a
/// uniformly chosen root, picking uniformly among the children at every
/// step (only among those that can still reach two turns). With `L` the
/// number of turns on the branch, the returned prefix holds the first
/// `max(min(t + 2, L), 2)` turns; scene nodes before the last kept turn stay
/// in the prefix.
pub fn sample_seed_dialogue<R: RngCore + ?Sized>(dag: &DialogueDag, lambda: f64, rng: &mut R) -> Result<Vec<u32>, ExtractError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(ExtractError::InvalidLambda(lambda));
    }
    let order = dag
        .topological_order()
        .map_err(|node| ExtractError::Dag(DagError::CycleDetected { node }))?;
    let children = dag.children();
    let is_utt: BTreeMap<u32, usize> = dag.nodes.iter().map(|n| (n.id, n.is_utterance() as usize)).collect();

    // most turns on any path starting at each node
    let mut best: BTreeMap<u32, usize> = BTreeMap::new();
    for &id in order.iter().rev() {
        let tail = children[&id].iter().map(|c| best[c]).max().unwrap_or(0);
        best.insert(id, is_utt[&id] + tail);
    }
    let roots: Vec<u32> = dag.roots().into_iter().filter(|r| best[r] >= 2).collect();
    if roots.is_empty() {
        return Err(ExtractError::TooShort);
    }

    let t = Poisson::new(lambda).map_err(|_| ExtractError::InvalidLambda(lambda))?.sample(rng) as u64;

    let mut node = *roots.choose(rng).unwrap();
    let mut path = vec![node];
    let mut turns = is_utt[&node];
    loop {
        let viable: Vec<u32> = children[&node].iter().copied().filter(|c| turns + best[c] >= 2).collect();
        let Some(&next) = viable.choose(rng) else { break };
        node = next;
        turns += is_utt[&node];
        path.push(node);
    }

    let keep = clamp_seed_length(t, turns);
    let mut out = Vec::new();
    let mut kept = 0;
    for id in path {
        if kept == keep {
            break;
        }
        kept += is_utt[&id];
        out.push(id);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// JSON-lines triple records

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TripleRecord {
    pub dialogue_id: String,
    pub dh: Vec<Turn>,
    pub x: Turn,
    pub y: Turn,
    pub counterparts: Vec<Turn>,
    #[serde(default)]
    pub x_node_id: u32,
    #[serde(default)]
    pub y_node_id: u32,
    #[serde(default)]
    pub counterpart_x_ids: Vec<u32>,
}

impl From<&Triple> for TripleRecord {
    fn from(t: &Triple) -> Self {
        TripleRecord {
            dialogue_id: t.dialogue_id.clone(),
            dh: t.dh.clone(),
            x: t.x.clone(),
            y: t.y.clone(),
            counterparts: t.counterparts.iter().map(|c| c.turn.clone()).collect(),
            x_node_id: t.x_node_id,
            y_node_id: t.y_node_id,
            counterpart_x_ids: t.counterpart_x_ids(),
        }
    }
}

impl From<TripleRecord> for Triple {
    fn from(r: TripleRecord) -> Self {
        let ids = if r.counterpart_x_ids.len() == r.counterparts.len() {
            r.counterpart_x_ids
        } else {
            vec![0; r.counterparts.len()]
        };
        Triple {
            dialogue_id: r.dialogue_id,
            dh: r.dh,
            x: r.x,
            y: r.y,
            x_node_id: r.x_node_id,
            y_node_id: r.y_node_id,
            counterparts: ids
                .into_iter()
                .zip(r.counterparts)
                .map(|(node_id, turn)| Counterpart { node_id, turn })
                .collect(),
        }
    }
}

pub fn triples_to_jsonl(triples: &[Triple]) -> String {
    let mut out = String::new();
    for t in triples {
        out.push_str(&serde_json::to_string(&TripleRecord::from(t)).expect("triple serializes"));
        out.push('\n');
    }
    out
}

pub fn triples_from_jsonl(text: &str) -> Result<Vec<Triple>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str::<TripleRecord>(l).map(Triple::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::TurnNode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn utts(n: u32) -> Vec<TurnNode> {
        (0..n).map(|i| TurnNode::utterance(i, "S", format!("u{i}"))).collect()
    }

    #[test]
    fn chain_gives_one_triple_per_edge() {
        let dag = DialogueDag::new("c", utts(3), vec![(0, 1), (1, 2)]).unwrap();
        let t = extract_triples(&dag).unwrap();
        assert_eq!(t.len(), 2);
        assert!(t[0].dh.is_empty());
        assert_eq!((t[0].x.text.as_str(), t[0].y.text.as_str()), ("u0", "u1"));
        assert_eq!(t[1].dh, vec![Turn::new("S", "u0")]);
        assert_eq!((t[1].x.text.as_str(), t[1].y.text.as_str()), ("u1", "u2"));
    }

    #[test]
    fn fork_triples_carry_sibling_counterparts() {
        let dag = DialogueDag::new("f", utts(5), vec![(0, 1), (0, 2), (1, 3), (2, 4)]).unwrap();
        let t = extract_triples(&dag).unwrap();
        assert_eq!(t.len(), 4);
        let by_edge = |x: u32, y: u32| t.iter().find(|t| t.x_node_id == x && t.y_node_id == y).unwrap();
        assert_eq!(by_edge(1, 3).counterpart_x_ids(), vec![2]);
        assert_eq!(by_edge(2, 4).counterpart_x_ids(), vec![1]);
        assert!(by_edge(0, 1).counterparts.is_empty());
        assert!(by_edge(0, 2).counterparts.is_empty());
    }

    #[test]
    fn collider_shares_y() {
        let dag = DialogueDag::new("d", utts(4), vec![(0, 1), (0, 2), (1, 3), (2, 3)]).unwrap();
        let t = extract_triples(&dag).unwrap();
        assert_eq!(t.len(), 4);
        let to3: Vec<_> = t.iter().filter(|t| t.y_node_id == 3).collect();
        assert_eq!(to3.len(), 2);
        assert_eq!(to3[0].y, to3[1].y);
        assert_ne!((&to3[0].dh, &to3[0].x), (&to3[1].dh, &to3[1].x));
        // u1 and u2 both lead to u3, so neither is a counterpart for the other
        assert!(to3.iter().all(|t| t.counterparts.is_empty()));
    }

    #[test]
    fn scenes_enter_history_but_never_x_or_y() {
        let nodes = vec![
            TurnNode::utterance(0, "A", "hello"),
            TurnNode::scene(1, "Thunder outside."),
            TurnNode::utterance(2, "B", "what was that"),
            TurnNode::utterance(3, "A", "just the storm"),
        ];
        let dag = DialogueDag::new("s", nodes, vec![(0, 1), (1, 2), (2, 3)]).unwrap();
        let t = extract_triples(&dag).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].dh, vec![Turn::new("A", "hello"), Turn::scene("Thunder outside.")]);
        assert_eq!(t[0].x_node_id, 2);
    }

    #[test]
    fn identical_paths_deduplicate_on_content() {
        // two roots with the same text both leading to the same reply
        let nodes = vec![
            TurnNode::utterance(0, "A", "hi"),
            TurnNode::utterance(1, "A", "hi"),
            TurnNode::utterance(2, "B", "hello"),
        ];
        let dag = DialogueDag::new("dup", nodes, vec![(0, 2), (1, 2)]).unwrap();
        assert_eq!(extract_triples(&dag).unwrap().len(), 1);
    }

    #[test]
    fn counterpart_sampling() {
        let dag = DialogueDag::new("f", utts(5), vec![(0, 1), (0, 2), (1, 3), (2, 4)]).unwrap();
        let t = extract_triples(&dag).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(sample_counterpart(&t[0], &mut rng).is_none());
        let with_one = t.iter().find(|t| t.counterparts.len() == 1).unwrap();
        assert_eq!(
            sample_counterpart(with_one, &mut rng).unwrap().node_id,
            with_one.counterparts[0].node_id
        );

        let mut two = with_one.clone();
        two.counterparts = vec![
            Counterpart {
                node_id: 7,
                turn: Turn::new("S", "a"),
            },
            Counterpart {
                node_id: 9,
                turn: Turn::new("S", "b"),
            },
        ];
        let n = 10_000;
        let sevens = (0..n).filter(|_| sample_counterpart(&two, &mut rng).unwrap().node_id == 7).count();
        assert!((sevens as f64 / n as f64 - 0.5).abs() < 0.02, "{sevens}");
    }

    #[test]
    fn split_properties() {
        let ids: Vec<String> = (0..1000).map(|i| format!("dlg-{i}")).collect();
        let all = SplitSpec::new(1.0, 0.0, 0.0, 1).unwrap();
        let s = split_ids(ids.iter().map(String::as_str), &all).unwrap();
        assert_eq!(s.train.len(), 1000);

        let spec = SplitSpec::new(0.8, 0.1, 0.1, 42).unwrap();
        let a = split_ids(ids.iter().map(String::as_str), &spec).unwrap();
        let b = split_ids(ids.iter().map(String::as_str), &spec).unwrap();
        assert_eq!(a, b);
        assert!((a.train.len() as f64 - 800.0).abs() <= 30.0, "{}", a.train.len());
        assert!((a.valid.len() as f64 - 100.0).abs() <= 30.0, "{}", a.valid.len());
        assert!((a.test.len() as f64 - 100.0).abs() <= 30.0, "{}", a.test.len());
        assert!(a.train.is_disjoint(&a.valid) && a.valid.is_disjoint(&a.test) && a.train.is_disjoint(&a.test));

        assert!(SplitSpec::new(0.5, 0.5, 0.5, 0).is_err());
        assert!(SplitSpec::new(1.2, -0.2, 0.0, 0).is_err());
    }

    #[test]
    fn seed_sampler_clamps() {
        assert_eq!(clamp_seed_length(9, 5), 5);
        assert_eq!(clamp_seed_length(0, 10), 2);
        for t in 0..20 {
            assert_eq!(clamp_seed_length(t, 2), 2);
        }
        let dag = DialogueDag::new("two", utts(2), vec![(0, 1)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            assert_eq!(sample_seed_dialogue(&dag, 1.0, &mut rng).unwrap(), vec![0, 1]);
        }
        let single = DialogueDag::new("one", utts(1), vec![]).unwrap();
        assert_eq!(sample_seed_dialogue(&single, 1.0, &mut rng), Err(ExtractError::TooShort));
    }

    #[test]
    fn seed_sampler_counts_turns_not_scenes() {
        let nodes = vec![
            TurnNode::scene(0, "A market square."),
            TurnNode::utterance(1, "A", "morning"),
            TurnNode::utterance(2, "B", "morning to you"),
        ];
        let dag = DialogueDag::new("s", nodes, vec![(0, 1), (1, 2)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(sample_seed_dialogue(&dag, 1.0, &mut rng).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn jsonl_round_trip() {
        let dag = DialogueDag::new("f", utts(5), vec![(0, 1), (0, 2), (1, 3), (2, 4)]).unwrap();
        let t = extract_triples(&dag).unwrap();
        let text = triples_to_jsonl(&t);
        assert_eq!(text.lines().count(), 4);
        assert_eq!(triples_from_jsonl(&text).unwrap(), t);
        let first: serde_json::Value = serde_json::from_str(text.lines().nth(2).unwrap()).unwrap();
        for key in ["dh", "x", "y", "counterparts", "dialogue_id"] {
            assert!(first.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn fork_pairs_on_fork() {
        let dag = DialogueDag::new("f", utts(5), vec![(0, 1), (0, 2), (1, 3), (2, 4)]).unwrap();
        let t = extract_triples(&dag).unwrap();
        let pairs = fork_pairs(&t);
        assert_eq!(pairs.len(), 1);
        let p = pairs[0];
        let ids = [t[p.first].x_node_id, t[p.second].x_node_id];
        assert!(ids.contains(&1) && ids.contains(&2));
        // diamond has no fork pair because both causes share the response
        let d = DialogueDag::new("d", utts(4), vec![(0, 1), (0, 2), (1, 3), (2, 3)]).unwrap();
        assert!(fork_pairs(&extract_triples(&d).unwrap()).is_empty());
    }
}
