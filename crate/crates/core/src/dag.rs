//! Conversational DAGs: parsing, validation, path analysis and DOT export.
//!
//! A dialogue is stored as a set of turn nodes plus directed edges `(i, j)`
//! meaning "node `j` is a possible response to node `i`". Forks (out-degree
//! of two or more) split a conversation into alternative branches; colliders
//! (in-degree of two or more) merge branches back into a shared response.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default cap on the number of root-to-leaf paths a single DAG may produce.
pub const DEFAULT_PATH_CAP: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Utterance,
    Scene,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TurnNode {
    pub id: u32,
    pub kind: NodeKind,
    pub speaker: Option<String>,
    pub text: String,
    pub quality_flags: Vec<String>,
}

impl TurnNode {
    pub fn utterance(id: u32, speaker: impl Into<String>, text: impl Into<String>) -> Self {
        TurnNode {
            id,
            kind: NodeKind::Utterance,
            speaker: Some(speaker.into()),
            text: text.into(),
            quality_flags: Vec::new(),
        }
    }

    pub fn scene(id: u32, text: impl Into<String>) -> Self {
        TurnNode {
            id,
            kind: NodeKind::Scene,
            speaker: None,
            text: text.into(),
            quality_flags: Vec::new(),
        }
    }

    pub fn is_utterance(&self) -> bool {
        self.kind == NodeKind::Utterance
    }
}

/// One conversation. Values built through [`parse_dialogue`] or
/// [`DialogueDag::new`] are guaranteed valid; the fields stay public so
/// that [`validate`] can report on arbitrary hand-built graphs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueDag {
    pub dialogue_id: String,
    pub nodes: Vec<TurnNode>,
    pub edges: Vec<(u32, u32)>,
    pub speakers: Option<BTreeMap<String, String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DagError {
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("schema violation at {location}: {reason}")]
    SchemaViolation { location: String, reason: String },
    #[error("cycle detected through node {node}")]
    CycleDetected { node: u32 },
    #[error("dangling edge ({from}, {to})")]
    DanglingEdge { from: u32, to: u32 },
    #[error("invalid dialogue: {0}")]
    Invalid(Violation),
    #[error("path count exceeds cap of {cap}")]
    PathExplosion { cap: usize },
    #[error("i/o error on {path}: {message}")]
    Io { path: PathBuf, message: String },
}

/// A single broken invariant, reported as data by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Violation {
    SchemaViolation { node: u32, reason: String },
    DuplicateNodeId(u32),
    DanglingEdge((u32, u32)),
    SelfLoop(u32),
    DuplicateEdge((u32, u32)),
    CycleDetected(u32),
    NoRoot,
}

impl Violation {
    pub fn code(&self) -> &'static str {
        match self {
            Violation::SchemaViolation { .. } => "SchemaViolation",
            Violation::DuplicateNodeId(_) => "DuplicateNodeId",
            Violation::DanglingEdge(_) => "DanglingEdge",
            Violation::SelfLoop(_) => "SelfLoop",
            Violation::DuplicateEdge(_) => "DuplicateEdge",
            Violation::CycleDetected(_) => "CycleDetected",
            Violation::NoRoot => "NoRoot",
        }
    }

    /// Location token used in `file:location:code` report lines.
    pub fn location(&self) -> String {
        match self {
            Violation::SchemaViolation { node, .. }
            | Violation::DuplicateNodeId(node)
            | Violation::SelfLoop(node)
            | Violation::CycleDetected(node) => format!("node{node}"),
            Violation::DanglingEdge((a, b)) | Violation::DuplicateEdge((a, b)) => {
                format!("edge({a},{b})")
            }
            Violation::NoRoot => "-".to_string(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::SchemaViolation { reason, .. } => {
                write!(f, "{} at {}: {reason}", self.code(), self.location())
            }
            _ => write!(f, "{} at {}", self.code(), self.location()),
        }
    }
}

impl From<Violation> for DagError {
    fn from(v: Violation) -> Self {
        match v {
            Violation::SchemaViolation { node, reason } => DagError::SchemaViolation {
                location: format!("node {node}"),
                reason,
            },
            Violation::CycleDetected(node) => DagError::CycleDetected { node },
            Violation::DanglingEdge((from, to)) => DagError::DanglingEdge { from, to },
            other => DagError::Invalid(other),
        }
    }
}

// ---------------------------------------------------------------------------
// On-disk format

#[derive(Debug, Serialize, Deserialize)]
struct RawNode {
    id: Option<i64>,
    #[serde(rename = "type")]
    kind: Option<String>,
    #[serde(default)]
    speaker: Option<String>,
    text: Option<String>,
    #[serde(default)]
    quality_flags: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct RawDialogue {
    dialogue_id: Option<String>,
    nodes: Option<Vec<RawNode>>,
    edges: Option<Vec<(i64, i64)>>,
    #[serde(default)]
    speakers: Option<BTreeMap<String, String>>,
}

#[derive(Serialize)]
struct OutNode<'a> {
    id: u32,
    #[serde(rename = "type")]
    kind: NodeKind,
    speaker: Option<&'a str>,
    text: &'a str,
    quality_flags: &'a [String],
}

#[derive(Serialize)]
struct OutDialogue<'a> {
    dialogue_id: &'a str,
    nodes: Vec<OutNode<'a>>,
    edges: &'a [(u32, u32)],
    #[serde(skip_serializing_if = "Option::is_none")]
    speakers: Option<&'a BTreeMap<String, String>>,
}

fn schema(location: impl Into<String>, reason: impl Into<String>) -> DagError {
    DagError::SchemaViolation {
        location: location.into(),
        reason: reason.into(),
    }
}

fn to_id(v: i64, location: &str) -> Result<u32, DagError> {
    u32::try_from(v).map_err(|_| schema(location, format!("id {v} is not a non-negative 32-bit integer")))
}

/// Build a dialogue from the raw document structure without checking graph invariants.
fn from_raw(raw: RawDialogue) -> Result<DialogueDag, DagError> {
    let dialogue_id = raw.dialogue_id.ok_or_else(|| schema("document", "missing field `dialogue_id`"))?;
    let raw_nodes = raw.nodes.ok_or_else(|| schema("document", "missing field `nodes`"))?;
    let raw_edges = raw.edges.ok_or_else(|| schema("document", "missing field `edges`"))?;

    let mut nodes = Vec::with_capacity(raw_nodes.len());
    for (index, n) in raw_nodes.into_iter().enumerate() {
        let id = match n.id {
            Some(v) => to_id(v, &format!("nodes[{index}]"))?,
            None => return Err(schema(format!("nodes[{index}]"), "missing field `id`")),
        };
        let loc = format!("node {id}");
        let kind = match n.kind.as_deref() {
            Some("utterance") => NodeKind::Utterance,
            Some("scene") => NodeKind::Scene,
            Some(other) => return Err(schema(loc, format!("unknown type `{other}`"))),
            None => return Err(schema(loc, "missing field `type`")),
        };
        let text = n.text.ok_or_else(|| schema(loc.clone(), "missing field `text`"))?;
        nodes.push(TurnNode {
            id,
            kind,
            speaker: n.speaker,
            text,
            quality_flags: n.quality_flags,
        });
    }
    let mut edges = Vec::with_capacity(raw_edges.len());
    for (i, (a, b)) in raw_edges.into_iter().enumerate() {
        let loc = format!("edges[{i}]");
        edges.push((to_id(a, &loc)?, to_id(b, &loc)?));
    }
    Ok(DialogueDag {
        dialogue_id,
        nodes,
        edges,
        speakers: raw.speakers,
    })
}

/// Parse one dialogue document and check every graph invariant.
pub fn parse_dialogue(raw: &[u8]) -> Result<DialogueDag, DagError> {
    let doc: RawDialogue = serde_json::from_slice(raw).map_err(|e| match e.classify() {
        serde_json::error::Category::Data => schema("document", e.to_string()),
        _ => DagError::MalformedDocument(e.to_string()),
    })?;
    let dag = from_raw(doc)?;
    if let Some(first) = validate(&dag).into_iter().next() {
        return Err(first.into());
    }
    Ok(dag)
}

/// Parse without graph validation; used by reporting tools that want every violation.
pub fn parse_dialogue_unchecked(raw: &[u8]) -> Result<DialogueDag, DagError> {
    let doc: RawDialogue = serde_json::from_slice(raw).map_err(|e| match e.classify() {
        serde_json::error::Category::Data => schema("document", e.to_string()),
        _ => DagError::MalformedDocument(e.to_string()),
    })?;
    from_raw(doc)
}

/// Serialize to the canonical JSON document (compact, one line).
pub fn to_json(dag: &DialogueDag) -> String {
    let out = OutDialogue {
        dialogue_id: &dag.dialogue_id,
        nodes: dag
            .nodes
            .iter()
            .map(|n| OutNode {
                id: n.id,
                kind: n.kind,
                speaker: n.speaker.as_deref(),
                text: &n.text,
                quality_flags: &n.quality_flags,
            })
            .collect(),
        edges: &dag.edges,
        speakers: dag.speakers.as_ref(),
    };
    serde_json::to_string(&out).expect("dialogue serialization cannot fail")
}

impl DialogueDag {
    /// Construct and validate.
    pub fn new(dialogue_id: impl Into<String>, nodes: Vec<TurnNode>, edges: Vec<(u32, u32)>) -> Result<Self, DagError> {
        let dag = DialogueDag {
            dialogue_id: dialogue_id.into(),
            nodes,
            edges,
            speakers: None,
        };
        if let Some(first) = validate(&dag).into_iter().next() {
            return Err(first.into());
        }
        Ok(dag)
    }

    pub fn node(&self, id: u32) -> Option<&TurnNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn node_ids(&self) -> BTreeSet<u32> {
        self.nodes.iter().map(|n| n.id).collect()
    }

    /// Sorted child lists keyed by node id. Every node gets an entry.
    pub fn children(&self) -> BTreeMap<u32, Vec<u32>> {
        let mut out: BTreeMap<u32, Vec<u32>> = self.nodes.iter().map(|n| (n.id, Vec::new())).collect();
        for &(a, b) in &self.edges {
            out.entry(a).or_default().push(b);
        }
        for v in out.values_mut() {
            v.sort_unstable();
            v.dedup();
        }
        out
    }

    /// Sorted parent lists keyed by node id.
    pub fn parents(&self) -> BTreeMap<u32, Vec<u32>> {
        let mut out: BTreeMap<u32, Vec<u32>> = self.nodes.iter().map(|n| (n.id, Vec::new())).collect();
        for &(a, b) in &self.edges {
            out.entry(b).or_default().push(a);
        }
        for v in out.values_mut() {
            v.sort_unstable();
            v.dedup();
        }
        out
    }

    pub fn roots(&self) -> Vec<u32> {
        self.parents().into_iter().filter(|(_, p)| p.is_empty()).map(|(id, _)| id).collect()
    }

    pub fn leaves(&self) -> Vec<u32> {
        self.children()
            .into_iter()
            .filter(|(_, c)| c.is_empty())
            .map(|(id, _)| id)
            .collect()
    }

    /// Kahn topological order (smallest ready id first), or the id of a node on a cycle.
    pub fn topological_order(&self) -> Result<Vec<u32>, u32> {
        let children = self.children();
        let mut indeg: BTreeMap<u32, usize> = self.nodes.iter().map(|n| (n.id, 0)).collect();
        for kids in children.values() {
            for k in kids {
                if let Some(d) = indeg.get_mut(k) {
                    *d += 1;
                }
            }
        }
        let mut ready: BTreeSet<u32> = indeg.iter().filter(|(_, &d)| d == 0).map(|(&id, _)| id).collect();
        let mut order = Vec::with_capacity(indeg.len());
        while let Some(id) = ready.pop_first() {
            order.push(id);
            for k in &children[&id] {
                if let Some(d) = indeg.get_mut(k) {
                    *d -= 1;
                    if *d == 0 {
                        ready.insert(*k);
                    }
                }
            }
        }
        if order.len() == indeg.len() {
            Ok(order)
        } else {
            let stuck = indeg.iter().find(|(_, &d)| d > 0).map(|(&id, _)| id).unwrap_or(0);
            Err(stuck)
        }
    }

    /// Number of distinct root paths ending at each node.
    pub fn paths_into(&self) -> BTreeMap<u32, u128> {
        let order = self.topological_order().unwrap_or_default();
        let parents = self.parents();
        let mut counts: BTreeMap<u32, u128> = BTreeMap::new();
        for id in order {
            let ps = &parents[&id];
            let c = if ps.is_empty() {
                1
            } else {
                ps.iter().map(|p| counts[p]).fold(0u128, u128::saturating_add)
            };
            counts.insert(id, c);
        }
        counts
    }

    /// Root-to-leaf path count without enumerating paths.
    pub fn count_branches(&self) -> u128 {
        let into = self.paths_into();
        self.leaves()
            .iter()
            .map(|l| into.get(l).copied().unwrap_or(0))
            .fold(0u128, u128::saturating_add)
    }
}

/// Report every broken invariant; empty iff the dag is valid.
pub fn validate(dag: &DialogueDag) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for n in &dag.nodes {
        if !ids.insert(n.id) {
            out.push(Violation::DuplicateNodeId(n.id));
        }
        let speaker_ok = n.speaker.as_deref().map(|s| !s.trim().is_empty());
        match (n.kind, speaker_ok) {
            (NodeKind::Utterance, None) => out.push(Violation::SchemaViolation {
                node: n.id,
                reason: "utterance without speaker".into(),
            }),
            (NodeKind::Utterance, Some(false)) => out.push(Violation::SchemaViolation {
                node: n.id,
                reason: "utterance with empty speaker".into(),
            }),
            (NodeKind::Scene, Some(_)) => out.push(Violation::SchemaViolation {
                node: n.id,
                reason: "scene node must not carry a speaker".into(),
            }),
            _ => {}
        }
        if n.text.trim().is_empty() {
            out.push(Violation::SchemaViolation {
                node: n.id,
                reason: "empty text".into(),
            });
        }
    }

    let mut seen = HashSet::new();
    let mut structural_ok = true;
    for &(a, b) in &dag.edges {
        if !ids.contains(&a) || !ids.contains(&b) {
            out.push(Violation::DanglingEdge((a, b)));
            structural_ok = false;
            continue;
        }
        if a == b {
            out.push(Violation::SelfLoop(a));
            structural_ok = false;
            continue;
        }
        if !seen.insert((a, b)) {
            out.push(Violation::DuplicateEdge((a, b)));
        }
    }

    if structural_ok {
        if let Err(node) = dag.topological_order() {
            out.push(Violation::CycleDetected(node));
        }
    }
    if !dag.nodes.is_empty() && dag.roots().is_empty() {
        out.push(Violation::NoRoot);
    }
    if dag.nodes.is_empty() {
        out.push(Violation::SchemaViolation {
            node: 0,
            reason: "dialogue has no nodes".into(),
        });
    }
    out
}

/// Every root-to-leaf path, in lexicographic order of id sequences.
pub fn enumerate_paths(dag: &DialogueDag) -> Result<Vec<Vec<u32>>, DagError> {
    enumerate_paths_capped(dag, DEFAULT_PATH_CAP)
}

pub fn enumerate_paths_capped(dag: &DialogueDag, cap: usize) -> Result<Vec<Vec<u32>>, DagError> {
    if let Err(node) = dag.topological_order() {
        return Err(DagError::CycleDetected { node });
    }
    if dag.count_branches() > cap as u128 {
        return Err(DagError::PathExplosion { cap });
    }
    let children = dag.children();
    let mut out = Vec::new();
    // explicit stack of (path, next child index)
    for root in dag.roots() {
        let mut path = vec![root];
        let mut cursor = vec![0usize];
        while let Some(&last) = path.last() {
            let kids = &children[&last];
            if kids.is_empty() && *cursor.last().unwrap() == 0 {
                out.push(path.clone());
            }
            let idx = cursor.last_mut().unwrap();
            if *idx < kids.len() {
                let next = kids[*idx];
                *idx += 1;
                path.push(next);
                cursor.push(0);
            } else {
                path.pop();
                cursor.pop();
            }
        }
    }
    Ok(out)
}

/// Nodes with two or more children.
pub fn find_forks(dag: &DialogueDag) -> Vec<(u32, Vec<u32>)> {
    dag.children().into_iter().filter(|(_, c)| c.len() >= 2).collect()
}

/// Nodes with two or more parents.
pub fn find_colliders(dag: &DialogueDag) -> Vec<(u32, Vec<u32>)> {
    dag.parents().into_iter().filter(|(_, p)| p.len() >= 2).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub num_dialogues: usize,
    pub num_branches: u128,
    pub num_utterances: usize,
    pub num_speakers: usize,
    pub avg_utterances_per_dialogue: f64,
    pub avg_words_per_utterance: f64,
    pub avg_utterances_per_speaker: f64,
}

fn ratio(num: f64, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num / den as f64
    }
}

/// Corpus-level counts. Only utterance nodes count as utterances; words are
/// whitespace-separated tokens.
pub fn corpus_stats(dags: &[DialogueDag]) -> CorpusStats {
    let mut branches = 0u128;
    let mut utterances = 0usize;
    let mut words = 0usize;
    let mut speakers = BTreeSet::new();
    for dag in dags {
        branches = branches.saturating_add(dag.count_branches());
        for n in dag.nodes.iter().filter(|n| n.is_utterance()) {
            utterances += 1;
            words += n.text.split_whitespace().count();
            if let Some(s) = &n.speaker {
                speakers.insert(s.as_str());
            }
        }
    }
    CorpusStats {
        num_dialogues: dags.len(),
        num_branches: branches,
        num_utterances: utterances,
        num_speakers: speakers.len(),
        avg_utterances_per_dialogue: ratio(utterances as f64, dags.len()),
        avg_words_per_utterance: ratio(words as f64, utterances),
        avg_utterances_per_speaker: ratio(utterances as f64, speakers.len()),
    }
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: [(&str, String); 7] = [
            ("# Dialogues", self.num_dialogues.to_string()),
            ("# Branches", self.num_branches.to_string()),
            ("# Utterances", self.num_utterances.to_string()),
            ("# Speakers", self.num_speakers.to_string()),
            ("Avg. utts/dial.", format!("{:.1}", self.avg_utterances_per_dialogue)),
            ("Avg. words/utt.", format!("{:.1}", self.avg_words_per_utterance)),
            ("Avg. utts/spk.", format!("{:.1}", self.avg_utterances_per_speaker)),
        ];
        for (name, value) in rows {
            writeln!(f, "{name:<18}{value:>12}")?;
        }
        Ok(())
    }
}

fn dot_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' | '\r' => out.push(' '),
            c => out.push(c),
        }
    }
    out
}

/// Graphviz digraph; scene nodes are drawn as boxes.
pub fn export_dot(dag: &DialogueDag) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "digraph \"{}\" {{", dot_escape(&dag.dialogue_id));
    let _ = writeln!(out, "  node [shape=ellipse];");
    for n in &dag.nodes {
        let snippet: String = n.text.chars().take(40).collect();
        let label = match &n.speaker {
            Some(s) => format!("{s}: {snippet}"),
            None => snippet,
        };
        let shape = match n.kind {
            NodeKind::Scene => ", shape=box",
            NodeKind::Utterance => "",
        };
        let _ = writeln!(out, "  n{} [label=\"{}\"{}];", n.id, dot_escape(&label), shape);
    }
    for (a, b) in &dag.edges {
        let _ = writeln!(out, "  n{a} -> n{b};");
    }
    out.push_str("}\n");
    out
}

/// Read a corpus: a directory of `*.json` files (sorted by name) or a
/// JSON-lines file with one dialogue per line. Each entry carries its
/// source label (`file` or `file:line`) and the parse outcome.
pub fn read_corpus_entries(path: &Path) -> Result<CorpusEntries, DagError> {
    read_entries(path, parse_dialogue)
}

/// [`read_corpus_entries`] without graph validation, for [`validate`] reporting.
pub fn read_corpus_entries_unchecked(path: &Path) -> Result<CorpusEntries, DagError> {
    read_entries(path, parse_dialogue_unchecked)
}

/// Source label and parse outcome per dialogue.
pub type CorpusEntries = Vec<(String, Result<DialogueDag, DagError>)>;

fn read_entries(path: &Path, parse: fn(&[u8]) -> Result<DialogueDag, DagError>) -> Result<CorpusEntries, DagError> {
    let io_err = |e: std::io::Error| DagError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut out = Vec::new();
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(io_err)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && matches!(p.extension().and_then(|e| e.to_str()), Some("json" | "jsonl")))
            .collect();
        files.sort();
        for f in files {
            if f.extension().and_then(|e| e.to_str()) == Some("jsonl") {
                out.extend(read_entries(&f, parse)?);
                continue;
            }
            let bytes = std::fs::read(&f).map_err(io_err)?;
            out.push((f.display().to_string(), parse(&bytes)));
        }
    } else {
        let text = std::fs::read_to_string(path).map_err(io_err)?;
        if path.extension().and_then(|e| e.to_str()) == Some("json") {
            out.push((path.display().to_string(), parse(text.as_bytes())));
        } else {
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                out.push((format!("{}:{}", path.display(), i + 1), parse(line.as_bytes())));
            }
        }
    }
    Ok(out)
}

/// Read a corpus, failing on the first invalid dialogue.
pub fn read_corpus(path: &Path) -> Result<Vec<DialogueDag>, DagError> {
    read_corpus_entries(path)?.into_iter().map(|(_, r)| r).collect()
}
