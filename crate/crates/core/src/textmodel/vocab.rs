use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::extract::{Triple, Turn};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const SEP: u32 = 3;
pub const UNK: u32 = 4;

const RESERVED: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<sep>", "<unk>"];

/// Default context budget in tokens.
pub const DEFAULT_MAX_CONTEXT: usize = 256;

/// Lowercase, split on whitespace, and detach every non-alphanumeric
/// character as its own token.
pub fn word_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.to_lowercase().chars() {
        if c.is_whitespace() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else if c.is_alphanumeric() {
            cur.push(c);
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            out.push(c.to_string());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Token/id bijection with fixed reserved ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocab { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Reserved ids followed by the given tokens in sorted order.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let extra: BTreeSet<String> = tokens
            .into_iter()
            .map(Into::into)
            .filter(|t| !RESERVED.contains(&t.as_str()))
            .collect();
        let all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).chain(extra).collect();
        Vocab::from(all)
    }

    /// Vocabulary over every speaker name and text in the given (training) triples.
    pub fn build(triples: &[Triple]) -> Self {
        let mut toks: BTreeSet<String> = BTreeSet::new();
        toks.insert(":".to_string());
        let mut add = |t: &Turn| {
            if let Some(s) = &t.speaker {
                toks.extend(word_tokens(s));
            }
            toks.extend(word_tokens(&t.text));
        };
        for t in triples {
            t.dh.iter().for_each(&mut add);
            add(&t.x);
            add(&t.y);
            t.counterparts.iter().for_each(|c| add(&c.turn));
        }
        Vocab::from_tokens(toks)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        word_tokens(text).iter().map(|t| self.id(t)).collect()
    }

    /// Tokens of one turn: `speaker : text` (scene turns are text only).
    pub fn encode_turn(&self, turn: &Turn) -> Vec<u32> {
        let mut out = Vec::new();
        if let Some(s) = &turn.speaker {
            out.extend(self.tokenize(s));
            out.push(self.id(":"));
        }
        out.extend(self.tokenize(&turn.text));
        out
    }

    /// Target sequence for a response: the turn's tokens followed by EOS.
    pub fn encode_response(&self, y: &Turn) -> Vec<u32> {
        let mut out = self.encode_turn(y);
        out.push(EOS);
        out
    }

    /// Space-joined surface form, skipping reserved ids.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&i| i >= UNK)
            .filter_map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Token ids of `(dh, x)`: each turn rendered as `speaker : text SEP`.
///
/// The target speaker is not part of the prompt; models predict it as the
/// leading tokens of the response. When the budget is exceeded the oldest
/// history turns are dropped first, then the cause turn is cut from the left.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextEncoding {
    pub ids: Vec<u32>,
}

impl ContextEncoding {
    pub fn new(vocab: &Vocab, dh: &[Turn], x: &Turn, max_len: usize) -> Self {
        let render = |t: &Turn| {
            let mut v = vocab.encode_turn(t);
            v.push(SEP);
            v
        };
        let mut tail = render(x);
        if tail.len() > max_len {
            let cut = tail.len() - max_len;
            tail.drain(..cut);
            return ContextEncoding { ids: tail };
        }
        let mut blocks: Vec<Vec<u32>> = Vec::new();
        let mut used = tail.len();
        for t in dh.iter().rev() {
            let b = render(t);
            if used + b.len() > max_len {
                break;
            }
            used += b.len();
            blocks.push(b);
        }
        let mut ids = Vec::with_capacity(used);
        for b in blocks.into_iter().rev() {
            ids.extend(b);
        }
        ids.extend(tail);
        ContextEncoding { ids }
    }
}
