//! Opinion graphs: vertices are survey responses, edges are signed
//! similarity judgments.
//!
//! The canonical on-disk form is a JSON document with `question`,
//! `vertices` and `edges` fields (see [`GraphFile`]). A whitespace edge
//! list plus a tab-separated vertex table can be converted with
//! [`OpinionGraph::from_edge_list`].

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("vertex #{index} ({id:?}) duplicates an earlier id")]
    DuplicateVertex { index: usize, id: String },
    #[error("vertex #{index} ({id:?}) has empty text")]
    EmptyText { index: usize, id: String },
    #[error("edge #{index} is a self-loop on {id:?}")]
    SelfLoop { index: usize, id: String },
    #[error("edge #{index} references unknown vertex {id:?}")]
    UnknownEndpoint { index: usize, id: String },
    #[error("invalid edge label {0}; expected 1, -1 or 0")]
    InvalidLabel(i64),
}

/// Label carried by a judgment edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub enum EdgeLabel {
    /// Shown response chosen as similar.
    Positive,
    /// Shown response not chosen.
    Negative,
    /// Discarded edge, treated as an unobserved pair.
    Neutral,
}

impl EdgeLabel {
    pub fn value(self) -> i64 {
        match self {
            EdgeLabel::Positive => 1,
            EdgeLabel::Negative => -1,
            EdgeLabel::Neutral => 0,
        }
    }

    /// The label with positive and negative swapped.
    pub fn flipped(self) -> Self {
        match self {
            EdgeLabel::Positive => EdgeLabel::Negative,
            EdgeLabel::Negative => EdgeLabel::Positive,
            EdgeLabel::Neutral => EdgeLabel::Neutral,
        }
    }

    pub fn is_signed(self) -> bool {
        self != EdgeLabel::Neutral
    }
}

impl TryFrom<i64> for EdgeLabel {
    type Error = GraphError;

    fn try_from(value: i64) -> Result<Self, Self::Error> {
        match value {
            1 => Ok(EdgeLabel::Positive),
            -1 => Ok(EdgeLabel::Negative),
            0 => Ok(EdgeLabel::Neutral),
            other => Err(GraphError::InvalidLabel(other)),
        }
    }
}

impl From<EdgeLabel> for i64 {
    fn from(label: EdgeLabel) -> i64 {
        label.value()
    }
}

/// Normalized text used to decide whether two responses are the same:
/// trimmed, internal whitespace collapsed to single spaces, case kept.
pub fn text_key(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vertex {
    pub id: String,
    pub text: String,
    pub respondent: Option<String>,
    pub is_seed: bool,
    pub text_key: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub label: EdgeLabel,
}

impl Edge {
    /// The endpoint opposite to `v`.
    pub fn other(&self, v: usize) -> usize {
        if self.src == v {
            self.dst
        } else {
            self.src
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VertexRecord {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub respondent: Option<String>,
    #[serde(default)]
    pub seed: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub src: String,
    pub dst: String,
    pub label: EdgeLabel,
}

/// Serialized form of an opinion graph.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub question: String,
    pub vertices: Vec<VertexRecord>,
    pub edges: Vec<EdgeRecord>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

/// A validated, immutable opinion graph.
///
/// Parallel edges are kept: every judgment is its own edge record.
#[derive(Clone, Debug)]
pub struct OpinionGraph {
    question: String,
    vertices: Vec<Vertex>,
    edges: Vec<Edge>,
    index: HashMap<String, usize>,
    d_pos: Vec<usize>,
    d_neg: Vec<usize>,
    incident: Vec<Vec<usize>>,
    reported: Vec<bool>,
    metadata: BTreeMap<String, serde_json::Value>,
}

impl PartialEq for OpinionGraph {
    fn eq(&self, other: &Self) -> bool {
        self.question == other.question
            && self.vertices == other.vertices
            && self.edges == other.edges
            && self.reported == other.reported
    }
}

impl OpinionGraph {
    pub fn new(
        question: impl Into<String>,
        vertices: Vec<VertexRecord>,
        edges: Vec<EdgeRecord>,
    ) -> Result<Self, GraphError> {
        Self::from_file(GraphFile {
            question: question.into(),
            vertices,
            edges,
            metadata: BTreeMap::new(),
        })
    }

    pub fn from_file(file: GraphFile) -> Result<Self, GraphError> {
        let mut index = HashMap::with_capacity(file.vertices.len());
        let mut vertices = Vec::with_capacity(file.vertices.len());
        for (i, v) in file.vertices.into_iter().enumerate() {
            if v.text.trim().is_empty() {
                return Err(GraphError::EmptyText { index: i, id: v.id });
            }
            if index.insert(v.id.clone(), i).is_some() {
                return Err(GraphError::DuplicateVertex { index: i, id: v.id });
            }
            vertices.push(Vertex {
                text_key: text_key(&v.text),
                id: v.id,
                text: v.text,
                respondent: v.respondent,
                is_seed: v.seed,
            });
        }
        let mut edges = Vec::with_capacity(file.edges.len());
        for (i, e) in file.edges.into_iter().enumerate() {
            let lookup = |id: &String| {
                index.get(id).copied().ok_or_else(|| GraphError::UnknownEndpoint {
                    index: i,
                    id: id.clone(),
                })
            };
            let src = lookup(&e.src)?;
            let dst = lookup(&e.dst)?;
            if src == dst {
                return Err(GraphError::SelfLoop { index: i, id: e.src });
            }
            edges.push(Edge { src, dst, label: e.label });
        }
        Ok(Self::assemble(file.question, vertices, edges, index, file.metadata))
    }

    fn assemble(
        question: String,
        vertices: Vec<Vertex>,
        edges: Vec<Edge>,
        index: HashMap<String, usize>,
        metadata: BTreeMap<String, serde_json::Value>,
    ) -> Self {
        let n = vertices.len();
        let mut d_pos = vec![0; n];
        let mut d_neg = vec![0; n];
        let mut incident = vec![Vec::new(); n];
        for (k, e) in edges.iter().enumerate() {
            let degree = match e.label {
                EdgeLabel::Positive => &mut d_pos,
                EdgeLabel::Negative => &mut d_neg,
                EdgeLabel::Neutral => continue,
            };
            degree[e.src] += 1;
            degree[e.dst] += 1;
            incident[e.src].push(k);
            incident[e.dst].push(k);
        }
        OpinionGraph {
            question,
            reported: vec![true; n],
            vertices,
            edges,
            index,
            d_pos,
            d_neg,
            incident,
            metadata,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GraphError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| GraphError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let file: GraphFile =
            serde_json::from_str(text).map_err(|e| GraphError::Parse(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn to_file(&self) -> GraphFile {
        GraphFile {
            question: self.question.clone(),
            vertices: self
                .vertices
                .iter()
                .map(|v| VertexRecord {
                    id: v.id.clone(),
                    text: v.text.clone(),
                    respondent: v.respondent.clone(),
                    seed: v.is_seed,
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeRecord {
                    src: self.vertices[e.src].id.clone(),
                    dst: self.vertices[e.dst].id.clone(),
                    label: e.label,
                })
                .collect(),
            metadata: self.metadata.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("graph file serializes")
    }

    /// Builds a graph from a whitespace-separated edge list (`src dst label`
    /// per line, `#` starts a comment) and a tab-separated vertex table with
    /// a header row naming at least `id` and `text`, optionally
    /// `respondent` and `seed`.
    pub fn from_edge_list(
        question: impl Into<String>,
        edges: impl BufRead,
        vertex_table: impl BufRead,
    ) -> Result<Self, GraphError> {
        let parse_err = |line: usize, msg: &str| GraphError::Parse(format!("line {line}: {msg}"));
        let mut lines = vertex_table.lines().enumerate();
        let header = match lines.next() {
            Some((_, line)) => line.map_err(|e| GraphError::Parse(e.to_string()))?,
            None => return Err(GraphError::Parse("vertex table is empty".into())),
        };
        let columns: Vec<&str> = header.split('\t').map(str::trim).collect();
        let col = |name: &str| columns.iter().position(|c| *c == name);
        let (id_col, text_col) = match (col("id"), col("text")) {
            (Some(i), Some(t)) => (i, t),
            _ => return Err(parse_err(1, "vertex table header needs `id` and `text`")),
        };
        let respondent_col = col("respondent");
        let seed_col = col("seed");
        let mut vertices = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(|e| GraphError::Parse(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let field = |c: usize| fields.get(c).copied().unwrap_or("");
            if fields.len() <= id_col.max(text_col) {
                return Err(parse_err(i + 1, "missing columns"));
            }
            let respondent = respondent_col
                .map(field)
                .filter(|s| !s.is_empty())
                .map(str::to_owned);
            let seed = match seed_col.map(field).unwrap_or("") {
                "" | "0" | "false" => false,
                "1" | "true" => true,
                other => return Err(parse_err(i + 1, &format!("bad seed flag {other:?}"))),
            };
            vertices.push(VertexRecord {
                id: field(id_col).to_owned(),
                text: field(text_col).to_owned(),
                respondent,
                seed,
            });
        }
        let mut records = Vec::new();
        for (i, line) in edges.lines().enumerate() {
            let line = line.map_err(|e| GraphError::Parse(e.to_string()))?;
            let content = line.split('#').next().unwrap_or("");
            let fields: Vec<&str> = content.split_whitespace().collect();
            match fields.as_slice() {
                [] => continue,
                [src, dst, label] => {
                    let value: i64 = label
                        .parse()
                        .map_err(|_| parse_err(i + 1, &format!("bad label {label:?}")))?;
                    records.push(EdgeRecord {
                        src: (*src).to_owned(),
                        dst: (*dst).to_owned(),
                        label: EdgeLabel::try_from(value)?,
                    });
                }
                _ => return Err(parse_err(i + 1, "expected `src dst label`")),
            }
        }
        Self::new(question, vertices, records)
    }

    pub fn question(&self) -> &str {
        &self.question
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn vertex(&self, i: usize) -> &Vertex {
        &self.vertices[i]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Number of vertices.
    pub fn n(&self) -> usize {
        self.vertices.len()
    }

    /// Number of non-neutral edges.
    pub fn m(&self) -> usize {
        self.count(EdgeLabel::Positive) + self.count(EdgeLabel::Negative)
    }

    pub fn count(&self, label: EdgeLabel) -> usize {
        self.edges.iter().filter(|e| e.label == label).count()
    }

    pub fn d_pos(&self) -> &[usize] {
        &self.d_pos
    }

    pub fn d_neg(&self) -> &[usize] {
        &self.d_neg
    }

    /// Per-vertex degree for one signed label.
    pub fn degrees(&self, label: EdgeLabel) -> &[usize] {
        match label {
            EdgeLabel::Positive => &self.d_pos,
            EdgeLabel::Negative => &self.d_neg,
            EdgeLabel::Neutral => panic!("neutral edges carry no degree"),
        }
    }

    /// Indices of the non-neutral edges incident to `v`.
    pub fn incident(&self, v: usize) -> &[usize] {
        &self.incident[v]
    }

    /// Indices of all non-neutral edges.
    pub fn signed_edges(&self) -> impl Iterator<Item = usize> + '_ {
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.label.is_signed())
            .map(|(k, _)| k)
    }

    pub fn metadata(&self) -> &BTreeMap<String, serde_json::Value> {
        &self.metadata
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: serde_json::Value) -> Self {
        self.metadata.insert(key.into(), value);
        self
    }

    /// Whether vertex `i` is included in reports.
    pub fn is_reported(&self, i: usize) -> bool {
        self.reported[i]
    }

    pub fn reported_count(&self) -> usize {
        self.reported.iter().filter(|r| **r).count()
    }

    /// Relabels uniformly chosen negative edges as neutral until the
    /// negative count equals the positive count. Graphs with at least as
    /// many positive as negative edges are returned unchanged.
    pub fn neutralize_excess(&self, rng_seed: u64) -> OpinionGraph {
        let negatives: Vec<usize> = self
            .edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.label == EdgeLabel::Negative)
            .map(|(k, _)| k)
            .collect();
        let positives = self.count(EdgeLabel::Positive);
        if negatives.len() <= positives {
            return self.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let excess = negatives.len() - positives;
        let mut edges = self.edges.clone();
        for pick in sample(&mut rng, negatives.len(), excess) {
            edges[negatives[pick]].label = EdgeLabel::Neutral;
        }
        let mut graph = Self::assemble(
            self.question.clone(),
            self.vertices.clone(),
            edges,
            self.index.clone(),
            self.metadata.clone(),
        );
        graph.reported = self.reported.clone();
        graph
    }

    /// Marks seed vertices as excluded from reports when `exclude_seeds`
    /// is set. Inference still uses every vertex.
    pub fn induced_analysis_graph(&self, exclude_seeds: bool) -> OpinionGraph {
        let mut graph = self.clone();
        if exclude_seeds {
            for (flag, v) in graph.reported.iter_mut().zip(&graph.vertices) {
                *flag = *flag && !v.is_seed;
            }
        }
        graph
    }
}

impl fmt::Display for OpinionGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?}: N={} M+={} M-={} neutral={}",
            self.question,
            self.n(),
            self.count(EdgeLabel::Positive),
            self.count(EdgeLabel::Negative),
            self.count(EdgeLabel::Neutral)
        )
    }
}
