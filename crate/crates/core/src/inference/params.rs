use serde::{Deserialize, Serialize};

use super::InferenceError;
use crate::graph::{EdgeLabel, OpinionGraph};

/// Group fractions and per-label affinity matrices of a labelled block
/// model. Groups are numbered from 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockModelParams {
    pub gamma: Vec<f64>,
    pub omega_pos: Vec<Vec<f64>>,
    pub omega_neg: Vec<Vec<f64>>,
    pub degree_corrected: bool,
}

impl BlockModelParams {
    pub fn new(
        gamma: Vec<f64>,
        omega_pos: Vec<Vec<f64>>,
        omega_neg: Vec<Vec<f64>>,
        degree_corrected: bool,
    ) -> Result<Self, InferenceError> {
        let params = BlockModelParams {
            gamma,
            omega_pos,
            omega_neg,
            degree_corrected,
        };
        params.validate()?;
        Ok(params)
    }

    /// Uniform group fractions and constant affinities.
    pub fn uniform(q: usize, omega_pos: f64, omega_neg: f64, degree_corrected: bool) -> Self {
        BlockModelParams {
            gamma: vec![1.0 / q as f64; q],
            omega_pos: vec![vec![omega_pos; q]; q],
            omega_neg: vec![vec![omega_neg; q]; q],
            degree_corrected,
        }
    }

    pub fn q(&self) -> usize {
        self.gamma.len()
    }

    pub fn omega(&self, label: EdgeLabel) -> &[Vec<f64>] {
        match label {
            EdgeLabel::Positive => &self.omega_pos,
            EdgeLabel::Negative => &self.omega_neg,
            EdgeLabel::Neutral => panic!("neutral edges have no affinity matrix"),
        }
    }

    pub fn validate(&self) -> Result<(), InferenceError> {
        let q = self.q();
        if q == 0 {
            return Err(InferenceError::InvalidParams("q must be at least 1".into()));
        }
        let total: f64 = self.gamma.iter().sum();
        if self.gamma.iter().any(|g| !(*g >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(InferenceError::InvalidParams(format!(
                "gamma must be a probability vector (sum {total})"
            )));
        }
        for (name, omega) in [("omega_pos", &self.omega_pos), ("omega_neg", &self.omega_neg)] {
            if omega.len() != q || omega.iter().any(|row| row.len() != q) {
                return Err(InferenceError::InvalidParams(format!("{name} must be {q}x{q}")));
            }
            for a in 0..q {
                for b in 0..q {
                    let w = omega[a][b];
                    if !(w >= 0.0) || !w.is_finite() {
                        return Err(InferenceError::InvalidParams(format!(
                            "{name}[{a}][{b}] = {w} is not a nonnegative real"
                        )));
                    }
                    if w != omega[b][a] {
                        return Err(InferenceError::InvalidParams(format!("{name} is not symmetric")));
                    }
                }
            }
        }
        if !self.degree_corrected {
            for a in 0..q {
                for b in 0..q {
                    let total = self.omega_pos[a][b] + self.omega_neg[a][b];
                    if total > 1.0 + 1e-12 {
                        return Err(InferenceError::InvalidParams(format!(
                            "omega_pos + omega_neg at ({a},{b}) is {total} > 1"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Per-vertex multiplier for label-`label` affinities: the raw degree in
    /// the degree-corrected model, 1 otherwise.
    pub fn propensity(&self, graph: &OpinionGraph, label: EdgeLabel, v: usize) -> f64 {
        if self.degree_corrected {
            graph.degrees(label)[v] as f64
        } else {
            1.0
        }
    }

    /// Probability that `i` (in group `a`) and `j` (in group `b`) are joined
    /// by an edge with `label`.
    pub fn edge_probability(
        &self,
        graph: &OpinionGraph,
        label: EdgeLabel,
        i: usize,
        j: usize,
        a: usize,
        b: usize,
    ) -> f64 {
        self.propensity(graph, label, i) * self.omega(label)[a][b] * self.propensity(graph, label, j)
    }

    /// Applies a group relabelling: group `g` becomes `perm[g]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let q = self.q();
        let mut out = self.clone();
        for a in 0..q {
            out.gamma[perm[a]] = self.gamma[a];
            for b in 0..q {
                out.omega_pos[perm[a]][perm[b]] = self.omega_pos[a][b];
                out.omega_neg[perm[a]][perm[b]] = self.omega_neg[a][b];
            }
        }
        out
    }

    /// Largest change between two parameter sets: absolute for `γ`, and
    /// for each affinity matrix relative to its largest entry.
    pub(crate) fn max_relative_change(&self, other: &Self) -> f64 {
        let mut change = self
            .gamma
            .iter()
            .zip(&other.gamma)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        for (m, n) in [(&self.omega_pos, &other.omega_pos), (&self.omega_neg, &other.omega_neg)] {
            let scale = m.iter().chain(n).flatten().fold(0.0, |a: f64, b| a.max(b.abs()));
            if scale == 0.0 {
                continue;
            }
            for (row, other_row) in m.iter().zip(n) {
                for (x, y) in row.iter().zip(other_row) {
                    change = change.max((x - y).abs() / scale);
                }
            }
        }
        change
    }
}
