//! Planted-partition instances of the labelled block model.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::graph::{EdgeLabel, EdgeRecord, OpinionGraph, VertexRecord};
use crate::inference::{run_em, FitOptions, InferenceError};
use crate::metrics::nmi;

#[derive(Debug, thiserror::Error)]
pub enum SyntheticError {
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("edge probability {p} for groups ({a},{b}) is outside [0, 1]")]
    ProbabilityOutOfRange { a: usize, b: usize, p: f64 },
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorSpec {
    pub n: usize,
    pub gamma: Vec<f64>,
    pub omega_pos: Vec<Vec<f64>>,
    pub omega_neg: Vec<Vec<f64>>,
    /// Per-vertex (positive, negative) propensities. When present, pair
    /// probabilities are `θ_i ω θ_j`, clamped at 1.
    pub propensities: Option<Vec<(f64, f64)>>,
    pub rng_seed: u64,
}

impl GeneratorSpec {
    /// Equal-size groups with constant within-group and between-group
    /// affinities for each label.
    pub fn planted(
        n: usize,
        q: usize,
        (pos_in, pos_out): (f64, f64),
        (neg_in, neg_out): (f64, f64),
        rng_seed: u64,
    ) -> Self {
        let matrix = |inside: f64, outside: f64| {
            (0..q)
                .map(|a| (0..q).map(|b| if a == b { inside } else { outside }).collect())
                .collect()
        };
        GeneratorSpec {
            n,
            gamma: vec![1.0 / q as f64; q],
            omega_pos: matrix(pos_in, pos_out),
            omega_neg: matrix(neg_in, neg_out),
            propensities: None,
            rng_seed,
        }
    }

    pub fn q(&self) -> usize {
        self.gamma.len()
    }

    /// Balanced groups with positive edges concentrated inside groups and
    /// negative edges between them. `strength` runs from 0 (no structure)
    /// to 1 (positive edges only inside groups, negative only between).
    /// Expected degrees are held near `mean_pos` and `mean_neg`.
    pub fn signed_planted(
        n: usize,
        q: usize,
        mean_pos: f64,
        mean_neg: f64,
        strength: f64,
        rng_seed: u64,
    ) -> Self {
        let weak = 1.0 - strength.clamp(0.0, 1.0);
        let (qf, nf) = (q as f64, n.max(1) as f64);
        let pos_in = qf * mean_pos / (nf * (1.0 + (qf - 1.0) * weak));
        let neg_out = qf * mean_neg / (nf * (weak + qf - 1.0).max(f64::MIN_POSITIVE));
        let neg_in = if q == 1 { mean_neg / nf } else { weak * neg_out };
        Self::planted(n, q, (pos_in, weak * pos_in), (neg_in, neg_out), rng_seed)
    }


    fn validate(&self) -> Result<(), SyntheticError> {
        let q = self.q();
        if q == 0 {
            return Err(SyntheticError::InvalidSpec("gamma is empty".into()));
        }
        let total: f64 = self.gamma.iter().sum();
        if self.gamma.iter().any(|g| !(*g >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(SyntheticError::InvalidSpec(format!("gamma sums to {total}")));
        }
        for omega in [&self.omega_pos, &self.omega_neg] {
            if omega.len() != q || omega.iter().any(|r| r.len() != q) {
                return Err(SyntheticError::InvalidSpec(format!("affinities must be {q}x{q}")));
            }
            for a in 0..q {
                for b in 0..q {
                    if omega[a][b] != omega[b][a] {
                        return Err(SyntheticError::InvalidSpec("affinities must be symmetric".into()));
                    }
                }
            }
        }
        if let Some(props) = &self.propensities {
            if props.len() != self.n {
                return Err(SyntheticError::InvalidSpec(format!(
                    "{} propensities for {} vertices",
                    props.len(),
                    self.n
                )));
            }
            if props.iter().any(|(p, m)| !(*p >= 0.0) || !(*m >= 0.0)) {
                return Err(SyntheticError::InvalidSpec("propensities must be nonnegative".into()));
            }
        }
        for a in 0..q {
            for b in 0..q {
                let (p, m) = (self.omega_pos[a][b], self.omega_neg[a][b]);
                for value in [p, m] {
                    if !(value >= 0.0) {
                        return Err(SyntheticError::ProbabilityOutOfRange { a, b, p: value });
                    }
                }
                if self.propensities.is_none() && p + m > 1.0 + 1e-12 {
                    return Err(SyntheticError::ProbabilityOutOfRange { a, b, p: p + m });
                }
            }
        }
        Ok(())
    }
}

fn draw_group<R: Rng>(gamma: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (g, p) in gamma.iter().enumerate() {
        acc += p;
        if u < acc {
            return g;
        }
    }
    gamma.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Samples a graph and its planted labels. Each vertex draws its group from
/// `gamma`; each pair is then independently positive, negative or absent.
pub fn sample_graph(spec: &GeneratorSpec) -> Result<(OpinionGraph, Vec<usize>), SyntheticError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let labels: Vec<usize> = (0..spec.n).map(|_| draw_group(&spec.gamma, &mut rng)).collect();
    let mut clamped = 0usize;
    let mut edges = Vec::new();
    for i in 0..spec.n {
        for j in i + 1..spec.n {
            let (a, b) = (labels[i], labels[j]);
            let (mut p, mut m) = (spec.omega_pos[a][b], spec.omega_neg[a][b]);
            if let Some(props) = &spec.propensities {
                p *= props[i].0 * props[j].0;
                m *= props[i].1 * props[j].1;
                if p + m > 1.0 {
                    clamped += 1;
                    let scale = 1.0 / (p + m);
                    p *= scale;
                    m *= scale;
                }
            }
            if p == 0.0 && m == 0.0 {
                continue;
            }
            let u: f64 = rng.random();
            let label = if u < p {
                EdgeLabel::Positive
            } else if u < p + m {
                EdgeLabel::Negative
            } else {
                continue;
            };
            edges.push(EdgeRecord {
                src: format!("v{i}"),
                dst: format!("v{j}"),
                label,
            });
        }
    }
    if clamped > 0 {
        log::warn!("clamped {clamped} vertex pairs whose edge probability exceeded 1");
    }
    let vertices = (0..spec.n)
        .map(|i| VertexRecord {
            id: format!("v{i}"),
            text: format!("synthetic response {i}"),
            respondent: Some(format!("r{i}")),
            seed: false,
        })
        .collect();
    let graph = OpinionGraph::new("synthetic", vertices, edges).expect("generated graph is valid");
    Ok((graph, labels))
}

/// Independent seed for trial `trial` at level `level`.
pub fn trial_seed(base: u64, level: usize, trial: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(((level as u64) << 32) | trial as u64);
    rng.next_u64()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecoveryRow {
    pub strength: f64,
    pub trial: usize,
    pub nmi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecoveryReport {
    pub rows: Vec<RecoveryRow>,
}

impl RecoveryReport {
    /// `(strength, mean NMI)` per level, in input order.
    pub fn summary(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64, usize)> = Vec::new();
        for row in &self.rows {
            match out.iter_mut().find(|(s, _, _)| *s == row.strength) {
                Some(entry) => {
                    entry.1 += row.nmi;
                    entry.2 += 1;
                }
                None => out.push((row.strength, row.nmi, 1)),
            }
        }
        out.into_iter().map(|(s, total, n)| (s, total / n as f64)).collect()
    }

    /// Tab-separated `strength trial nmi` rows under a header.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("strength\ttrial\tnmi\n");
        for row in &self.rows {
            out.push_str(&format!("{}\t{}\t{:.6}\n", row.strength, row.trial, row.nmi));
        }
        out
    }
}

/// For each strength, samples `trials` graphs from `family(strength, seed)`,
/// fits the planted number of groups, and records NMI against the planted
/// labels.
pub fn recovery_experiment<F>(
    family: F,
    strengths: &[f64],
    trials: usize,
    options: &FitOptions,
) -> Result<RecoveryReport, SyntheticError>
where
    F: Fn(f64, u64) -> GeneratorSpec + Sync,
{
    let jobs: Vec<(usize, f64, usize)> = strengths
        .iter()
        .enumerate()
        .flat_map(|(level, &s)| (0..trials).map(move |t| (level, s, t)))
        .collect();
    let rows = jobs
        .into_par_iter()
        .map(|(level, strength, trial)| {
            let seed = trial_seed(options.rng_seed, level, trial);
            let spec = family(strength, seed);
            let (graph, planted) = sample_graph(&spec)?;
            let fit_options = FitOptions { rng_seed: seed, ..options.clone() };
            let q = spec.q().min(graph.n()).max(1);
            let score = if q > 1 && graph.m() == 0 {
                nmi(&planted, &vec![0; planted.len()]).expect("same length")
            } else {
                let fit = run_em(&graph, q, &fit_options)?;
                nmi(&planted, &fit.map_labels).expect("same length")
            };
            Ok(RecoveryRow { strength, trial, nmi: score })
        })
        .collect::<Result<Vec<_>, SyntheticError>>()?;
    Ok(RecoveryReport { rows })
}
