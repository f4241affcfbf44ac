use std::collections::HashMap;

use super::{BlockModelParams, InferenceError};
use crate::graph::{EdgeLabel, OpinionGraph};

const PROBABILITY_SLACK: f64 = 1e-12;

/// Complete-data log-likelihood `log p(A, labels | params)` evaluated over
/// every vertex pair.
///
/// Pairs joined only by neutral edges contribute the no-edge factor. Pairs
/// joined by several signed edges contribute one factor per edge.
pub fn log_likelihood(
    graph: &OpinionGraph,
    params: &BlockModelParams,
    labels: &[usize],
) -> Result<f64, InferenceError> {
    let n = graph.n();
    let q = params.q();
    if labels.len() != n {
        return Err(InferenceError::LengthMismatch { expected: n, actual: labels.len() });
    }
    if let Some((vertex, &label)) = labels.iter().enumerate().find(|(_, l)| **l >= q) {
        return Err(InferenceError::InvalidLabel { vertex, label, q });
    }

    let mut observed: HashMap<(usize, usize), Vec<EdgeLabel>> = HashMap::new();
    for e in graph.edges().iter().filter(|e| e.label.is_signed()) {
        let key = (e.src.min(e.dst), e.src.max(e.dst));
        observed.entry(key).or_default().push(e.label);
    }

    let mut total: f64 = labels.iter().map(|&s| params.gamma[s].ln()).sum();
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (labels[i], labels[j]);
            let p_pos = params.edge_probability(graph, EdgeLabel::Positive, i, j, a, b);
            let p_neg = params.edge_probability(graph, EdgeLabel::Negative, i, j, a, b);
            let p_any = p_pos + p_neg;
            if p_any > 1.0 + PROBABILITY_SLACK {
                return Err(InferenceError::ProbabilityOutOfRange { i, j, p: p_any });
            }
            total += match observed.get(&(i, j)) {
                None => (1.0 - p_any).max(0.0).ln(),
                Some(edge_labels) => edge_labels
                    .iter()
                    .map(|l| match l {
                        EdgeLabel::Positive => p_pos.ln(),
                        _ => p_neg.ln(),
                    })
                    .sum(),
            };
        }
    }
    Ok(total)
}
