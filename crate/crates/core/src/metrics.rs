//! Partition comparison (NMI, ARI), agreement of a partition with signed
//! edges, and cross-question respondent flows.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::graph::{EdgeLabel, OpinionGraph};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("partitions have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("partitions are empty")]
    Empty,
    #[error("graph has no signed edges")]
    NoSignedEdges,
    #[error("need at least two questions, got {0}")]
    TooFewQuestions(usize),
    #[error("label files cover different vertex ids (e.g. {0:?})")]
    IdMismatch(String),
    #[error("duplicate vertex id {0:?} in label file")]
    DuplicateId(String),
    #[error("label file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Joint counts of two partitions over the same items.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContingencyTable {
    /// `counts[a][b]`: items in group `a` of the first partition and group
    /// `b` of the second. Groups are indexed in sorted label order.
    pub counts: Vec<Vec<usize>>,
    pub row_totals: Vec<usize>,
    pub col_totals: Vec<usize>,
    pub total: usize,
}

impl ContingencyTable {
    pub fn new<A: Ord, B: Ord>(a: &[A], b: &[B]) -> Result<Self, MetricsError> {
        if a.len() != b.len() {
            return Err(MetricsError::LengthMismatch(a.len(), b.len()));
        }
        let rows = group_index(a);
        let cols = group_index(b);
        let mut counts = vec![vec![0; cols.len()]; rows.len()];
        for (x, y) in a.iter().zip(b) {
            counts[rows[&x]][cols[&y]] += 1;
        }
        let row_totals = counts.iter().map(|r| r.iter().sum()).collect();
        let col_totals = (0..cols.len()).map(|c| counts.iter().map(|r| r[c]).sum()).collect();
        Ok(ContingencyTable {
            counts,
            row_totals,
            col_totals,
            total: a.len(),
        })
    }
}

fn group_index<L: Ord>(labels: &[L]) -> BTreeMap<&L, usize> {
    let distinct: BTreeSet<&L> = labels.iter().collect();
    distinct.into_iter().enumerate().map(|(i, l)| (l, i)).collect()
}

fn entropy(totals: &[usize], n: f64) -> f64 {
    totals
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information `2 I(A,B) / (H(A) + H(B))`.
///
/// Two single-group partitions score 1; a single-group partition against
/// a multi-group one scores 0.
pub fn nmi<A: Ord, B: Ord>(a: &[A], b: &[B]) -> Result<f64, MetricsError> {
    let table = ContingencyTable::new(a, b)?;
    if table.total == 0 {
        return Err(MetricsError::Empty);
    }
    let n = table.total as f64;
    let h_a = entropy(&table.row_totals, n);
    let h_b = entropy(&table.col_totals, n);
    match (h_a == 0.0, h_b == 0.0) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let mut mutual = 0.0;
    for (r, row) in table.counts.iter().enumerate() {
        for (c, &count) in row.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let p_ab = count as f64 / n;
            let p_a = table.row_totals[r] as f64 / n;
            let p_b = table.col_totals[c] as f64 / n;
            mutual += p_ab * (p_ab / (p_a * p_b)).ln();
        }
    }
    Ok((2.0 * mutual / (h_a + h_b)).clamp(0.0, 1.0))
}

fn choose2(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand index. A vanishing denominator (both partitions all
/// singletons, or both a single group) scores 1.
pub fn ari<A: Ord, B: Ord>(a: &[A], b: &[B]) -> Result<f64, MetricsError> {
    let table = ContingencyTable::new(a, b)?;
    if table.total == 0 {
        return Err(MetricsError::Empty);
    }
    let index: f64 = table.counts.iter().flatten().map(|&c| choose2(c)).sum();
    let sum_a: f64 = table.row_totals.iter().map(|&c| choose2(c)).sum();
    let sum_b: f64 = table.col_totals.iter().map(|&c| choose2(c)).sum();
    let pairs = choose2(table.total);
    if pairs == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_a * sum_b / pairs;
    let max_index = 0.5 * (sum_a + sum_b);
    let denominator = max_index - expected;
    if denominator == 0.0 {
        return Ok(1.0);
    }
    Ok((index - expected) / denominator)
}

fn agreeing_edges(graph: &OpinionGraph, labels: &[usize]) -> usize {
    graph
        .edges()
        .iter()
        .filter(|e| match e.label {
            EdgeLabel::Positive => labels[e.src] == labels[e.dst],
            EdgeLabel::Negative => labels[e.src] != labels[e.dst],
            EdgeLabel::Neutral => false,
        })
        .count()
}

fn check_agreement_inputs(graph: &OpinionGraph, labels: &[usize]) -> Result<usize, MetricsError> {
    if labels.len() != graph.n() {
        return Err(MetricsError::LengthMismatch(labels.len(), graph.n()));
    }
    match graph.m() {
        0 => Err(MetricsError::NoSignedEdges),
        m => Ok(m),
    }
}

/// Fraction of signed edges consistent with `labels`: positive edges inside
/// a group plus negative edges across groups, over all signed edges.
pub fn agreement_score(graph: &OpinionGraph, labels: &[usize]) -> Result<f64, MetricsError> {
    let m = check_agreement_inputs(graph, labels)?;
    Ok(agreeing_edges(graph, labels) as f64 / m as f64)
}

/// Agreement score minus its mean over `n_random` shuffles of `labels`
/// (shuffles keep every group's size).
pub fn adjusted_agreement_score(
    graph: &OpinionGraph,
    labels: &[usize],
    n_random: usize,
    rng_seed: u64,
) -> Result<f64, MetricsError> {
    let m = check_agreement_inputs(graph, labels)?;
    let n_random = n_random.max(1);
    let observed = agreeing_edges(graph, labels) as f64 / m as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut shuffled = labels.to_vec();
    // Integer accumulation keeps shuffle-invariant labellings at exactly 0.
    let mut total: u64 = 0;
    for _ in 0..n_random {
        shuffled.shuffle(&mut rng);
        total += agreeing_edges(graph, &shuffled) as u64;
    }
    let baseline = total as f64 / (n_random as u64 * m as u64) as f64;
    Ok(observed - baseline)
}

/// Respondent flows between the groups of two adjacent questions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CrosstabTable {
    pub from_question: String,
    pub to_question: String,
    /// `(from_group, to_group) -> respondents`.
    pub cells: BTreeMap<(String, String), usize>,
    pub from_totals: BTreeMap<String, usize>,
    pub to_totals: BTreeMap<String, usize>,
    pub respondents: usize,
}

/// Cross-tabulates group membership for each adjacent pair of questions,
/// joining on respondent id. `questions` holds `(question, respondent ->
/// group)` in order.
pub fn crosstab_flows(
    questions: &[(String, BTreeMap<String, String>)],
) -> Result<Vec<CrosstabTable>, MetricsError> {
    if questions.len() < 2 {
        return Err(MetricsError::TooFewQuestions(questions.len()));
    }
    let mut tables = Vec::with_capacity(questions.len() - 1);
    for pair in questions.windows(2) {
        let (from_q, from) = &pair[0];
        let (to_q, to) = &pair[1];
        let mut table = CrosstabTable {
            from_question: from_q.clone(),
            to_question: to_q.clone(),
            cells: BTreeMap::new(),
            from_totals: BTreeMap::new(),
            to_totals: BTreeMap::new(),
            respondents: 0,
        };
        for (respondent, a) in from {
            if let Some(b) = to.get(respondent) {
                *table.cells.entry((a.clone(), b.clone())).or_default() += 1;
                *table.from_totals.entry(a.clone()).or_default() += 1;
                *table.to_totals.entry(b.clone()).or_default() += 1;
                table.respondents += 1;
            }
        }
        if table.respondents == 0 {
            log::warn!("questions {from_q:?} and {to_q:?} share no respondents");
        }
        tables.push(table);
    }
    Ok(tables)
}

/// Reads a label file: tab-separated `vertex_id group` rows under a header.
pub fn read_labels(reader: impl BufRead) -> Result<Vec<(String, String)>, MetricsError> {
    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        match (fields.next(), fields.next()) {
            (Some(id), Some(group)) if !id.is_empty() => {
                if !seen.insert(id.to_owned()) {
                    return Err(MetricsError::DuplicateId(id.to_owned()));
                }
                rows.push((id.to_owned(), group.trim().to_owned()));
            }
            _ => {
                return Err(MetricsError::Parse {
                    line: i + 1,
                    message: "expected `vertex_id<TAB>group`".into(),
                })
            }
        }
    }
    Ok(rows)
}

pub fn write_labels<'a>(
    mut out: impl Write,
    rows: impl IntoIterator<Item = (&'a str, usize)>,
) -> std::io::Result<()> {
    writeln!(out, "vertex_id\tgroup")?;
    for (id, group) in rows {
        writeln!(out, "{id}\t{group}")?;
    }
    Ok(())
}

/// Pairs up two label files by vertex id, in the first file's order.
pub fn join_labels(
    a: &[(String, String)],
    b: &[(String, String)],
) -> Result<(Vec<String>, Vec<String>), MetricsError> {
    let lookup: BTreeMap<&str, &str> = b.iter().map(|(id, g)| (id.as_str(), g.as_str())).collect();
    if a.len() != b.len() {
        let ids: BTreeSet<&str> = a.iter().map(|(id, _)| id.as_str()).collect();
        let missing = b
            .iter()
            .find(|(id, _)| !ids.contains(id.as_str()))
            .or_else(|| a.iter().find(|(id, _)| !lookup.contains_key(id.as_str())))
            .map(|(id, _)| id.clone())
            .unwrap_or_default();
        return Err(MetricsError::IdMismatch(missing));
    }
    let mut left = Vec::with_capacity(a.len());
    let mut right = Vec::with_capacity(a.len());
    for (id, group) in a {
        let other = lookup.get(id.as_str()).ok_or_else(|| MetricsError::IdMismatch(id.clone()))?;
        left.push(group.clone());
        right.push((*other).to_owned());
    }
    Ok((left, right))
}
