//! Choosing the number of groups: leave-one-out prediction errors per q,
//! label alignment across q, and alluvial flows between consecutive fits.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::graph::OpinionGraph;
use crate::inference::{argmax, cavity_predictive, run_em, FitOptions, FitResult, InferenceError};

/// Mean and standard error of per-edge contributions, in nats per edge.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    fn from_samples(samples: &[f64]) -> Self {
        let m = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / m;
        let stderr = if samples.len() > 1 {
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
            (var / m).sqrt()
        } else {
            0.0
        };
        Estimate { mean, stderr }
    }
}

/// Leave-one-out cross-validation errors of one fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ErrorEstimates {
    pub q: usize,
    pub e_gibbs: Estimate,
    pub e_map: Estimate,
    pub e_bayes: Estimate,
    pub e_training: Estimate,
    /// False when the underlying fit did not converge.
    pub converged: bool,
}

/// Leave-one-out prediction errors of every signed edge's label.
///
/// Each held-out edge is predicted from the cavity joint `ν^cav` of its
/// endpoints (the posterior with that edge removed):
/// * Gibbs: `-Σ ν^cav log p_x`
/// * MAP: `-log p_x(σ̃_i, σ̃_j)`, σ̃ the argmax of each cavity marginal
/// * Bayes: `-log Σ ν^cav p_x`
/// * training: `-Σ ν log p_x` with the full two-point marginal.
///
/// `p_x` is the fitted probability of the observed label, clamped to (0, 1].
pub fn loocv_errors(graph: &OpinionGraph, fit: &FitResult) -> Result<ErrorEstimates, InferenceError> {
    let q = fit.q();
    let params = &fit.params;
    let edges: Vec<usize> = graph.signed_edges().collect();
    if edges.is_empty() {
        return Err(InferenceError::NoSignedEdges);
    }
    if !fit.converged {
        log::warn!("computing prediction errors for an unconverged fit at q={q}");
    }
    let mut gibbs = Vec::with_capacity(edges.len());
    let mut map = Vec::with_capacity(edges.len());
    let mut bayes = Vec::with_capacity(edges.len());
    let mut training = Vec::with_capacity(edges.len());
    let mut prob = vec![0.0; q * q];
    let mut row = vec![0.0; q];
    let mut col = vec![0.0; q];
    for &k in &edges {
        let e = graph.edges()[k];
        for a in 0..q {
            for b in 0..q {
                let p = params.edge_probability(graph, e.label, e.src, e.dst, a, b);
                prob[a * q + b] = p.clamp(f64::MIN_POSITIVE, 1.0);
            }
        }
        let cavity = cavity_predictive(graph, &fit.state, k)?;
        let nu = fit.edge_marginals[k].as_ref().ok_or(InferenceError::NeutralEdge(k))?;

        gibbs.push(-cavity.iter().zip(&prob).map(|(c, p)| c * p.ln()).sum::<f64>());
        bayes.push(-cavity.iter().zip(&prob).map(|(c, p)| c * p).sum::<f64>().ln());
        training.push(-nu.iter().zip(&prob).map(|(c, p)| c * p.ln()).sum::<f64>());

        row.fill(0.0);
        col.fill(0.0);
        for a in 0..q {
            for b in 0..q {
                row[a] += cavity[a * q + b];
                col[b] += cavity[a * q + b];
            }
        }
        map.push(-prob[argmax(&row) * q + argmax(&col)].ln());
    }
    Ok(ErrorEstimates {
        q,
        e_gibbs: Estimate::from_samples(&gibbs),
        e_map: Estimate::from_samples(&map),
        e_bayes: Estimate::from_samples(&bayes),
        e_training: Estimate::from_samples(&training),
        converged: fit.converged,
    })
}

/// For each partition, a map from its raw group index to its aligned name.
///
/// The first partition keeps its names. Each later partition takes its
/// predecessor's names by greedy maximum overlap (largest contingency cell
/// first, ties by lower indices); unmatched groups, largest first, take the
/// smallest unused names. `partitions[k]` is `(group count, labels)`.
pub fn alignment_maps(partitions: &[(usize, Vec<usize>)]) -> Vec<Vec<usize>> {
    let mut maps: Vec<Vec<usize>> = Vec::with_capacity(partitions.len());
    let mut previous: Option<(usize, Vec<usize>)> = None;
    for (q, labels) in partitions {
        let q = *q;
        let map = match &previous {
            None => (0..q).collect(),
            Some((prev_q, prev_labels)) => {
                let mut overlap = vec![vec![0usize; q]; *prev_q];
                let mut sizes = vec![0usize; q];
                for (&a, &b) in prev_labels.iter().zip(labels) {
                    overlap[a][b] += 1;
                    sizes[b] += 1;
                }
                let mut cells: Vec<(usize, usize, usize)> = overlap
                    .iter()
                    .enumerate()
                    .flat_map(|(a, row)| row.iter().enumerate().map(move |(b, &c)| (c, a, b)))
                    .filter(|(c, _, _)| *c > 0)
                    .collect();
                cells.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
                let mut map = vec![usize::MAX; q];
                let mut used = vec![false; q.max(*prev_q)];
                for (_, a, b) in cells {
                    if map[b] == usize::MAX && a < q && !used[a] {
                        map[b] = a;
                        used[a] = true;
                    }
                }
                let mut leftovers: Vec<usize> = (0..q).filter(|&b| map[b] == usize::MAX).collect();
                leftovers.sort_by(|&x, &y| sizes[y].cmp(&sizes[x]).then(x.cmp(&y)));
                let mut free = (0..q).filter(|&g| !used[g]);
                for b in leftovers {
                    map[b] = free.next().expect("enough free names");
                }
                map
            }
        };
        let aligned: Vec<usize> = labels.iter().map(|&g| map[g]).collect();
        previous = Some((q, aligned));
        maps.push(map);
    }
    maps
}

/// Renames groups so that consecutive partitions share names where they
/// overlap most. Memberships are unchanged.
pub fn align_partitions(partitions: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let sized: Vec<(usize, Vec<usize>)> = partitions
        .iter()
        .map(|p| (p.iter().max().map_or(0, |m| m + 1), p.clone()))
        .collect();
    alignment_maps(&sized)
        .into_iter()
        .zip(partitions)
        .map(|(map, p)| p.iter().map(|&g| map[g]).collect())
        .collect()
}

/// One bundle of vertices moving between two consecutive fits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FlowRecord {
    pub from_q: usize,
    pub from_group: usize,
    pub to_q: usize,
    pub to_group: usize,
    pub count: usize,
    /// Every vertex in the bundle is typical in both fits.
    pub dark: bool,
}

#[derive(Clone, Debug)]
pub struct SweepEntry {
    pub errors: ErrorEstimates,
    /// Fit with groups renamed to align with the previous q.
    pub fit: FitResult,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub entries: Vec<SweepEntry>,
    pub flows: Vec<FlowRecord>,
}

impl SweepResult {
    pub fn qs(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.errors.q).collect()
    }

    pub fn entry(&self, q: usize) -> Option<&SweepEntry> {
        self.entries.iter().find(|e| e.errors.q == q)
    }

    /// Tab-separated table: q, four error means, four standard errors.
    pub fn error_table(&self) -> String {
        let mut out = String::from(
            "q\te_gibbs\te_map\te_bayes\te_training\tse_gibbs\tse_map\tse_bayes\tse_training\n",
        );
        for entry in &self.entries {
            let e = &entry.errors;
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                e.q,
                e.e_gibbs.mean,
                e.e_map.mean,
                e.e_bayes.mean,
                e.e_training.mean,
                e.e_gibbs.stderr,
                e.e_map.stderr,
                e.e_bayes.stderr,
                e.e_training.stderr
            )
            .expect("write to string");
        }
        out
    }

    /// Tab-separated flow records.
    pub fn flow_table(&self) -> String {
        flow_table(&self.flows)
    }
}

pub fn flow_table(flows: &[FlowRecord]) -> String {
    let mut out = String::from("from_q\tfrom_group\tto_q\tto_group\tcount\tdark\n");
    for f in flows {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            f.from_q, f.from_group, f.to_q, f.to_group, f.count, f.dark
        )
        .expect("write to string");
    }
    out
}

fn is_typical(marginal: &[f64], threshold: f64) -> bool {
    marginal.iter().copied().fold(0.0, f64::max) >= threshold
}

/// Flows between each consecutive pair of fits. Every (from, to) cell is
/// split into a dark record (vertices typical in both fits) and a pale
/// record (the rest); empty records are omitted, so counts per pair sum to
/// the vertex count.
pub fn alluvial_flows(sweep: &SweepResult, typical_threshold: f64) -> Vec<FlowRecord> {
    flows_between(&sweep.entries.iter().map(|e| &e.fit).collect::<Vec<_>>(), typical_threshold)
}

fn flows_between(fits: &[&FitResult], threshold: f64) -> Vec<FlowRecord> {
    let mut flows = Vec::new();
    for pair in fits.windows(2) {
        let (from, to) = (pair[0], pair[1]);
        let (qa, qb) = (from.q(), to.q());
        let mut dark = vec![vec![0usize; qb]; qa];
        let mut pale = vec![vec![0usize; qb]; qa];
        for i in 0..from.map_labels.len() {
            let (a, b) = (from.map_labels[i], to.map_labels[i]);
            if is_typical(&from.marginals[i], threshold) && is_typical(&to.marginals[i], threshold) {
                dark[a][b] += 1;
            } else {
                pale[a][b] += 1;
            }
        }
        for a in 0..qa {
            for b in 0..qb {
                for (count, is_dark) in [(dark[a][b], true), (pale[a][b], false)] {
                    if count > 0 {
                        flows.push(FlowRecord {
                            from_q: qa,
                            from_group: a,
                            to_q: qb,
                            to_group: b,
                            count,
                            dark: is_dark,
                        });
                    }
                }
            }
        }
    }
    flows
}

/// Fits every q in `q_min..=q_max`, computes prediction errors, aligns
/// group names across q and computes alluvial flows.
pub fn sweep(
    graph: &OpinionGraph,
    q_min: usize,
    q_max: usize,
    options: &FitOptions,
) -> Result<SweepResult, InferenceError> {
    if q_min == 0 || q_min > q_max || q_max > graph.n() {
        return Err(InferenceError::InvalidParams(format!(
            "q range {q_min}..={q_max} must satisfy 1 <= q_min <= q_max <= N = {}",
            graph.n()
        )));
    }
    let fits: Vec<FitResult> = (q_min..=q_max)
        .into_par_iter()
        .map(|q| run_em(graph, q, options))
        .collect::<Result<_, _>>()?;
    let partitions: Vec<(usize, Vec<usize>)> =
        fits.iter().map(|f| (f.q(), f.map_labels.clone())).collect();
    let maps = alignment_maps(&partitions);
    let entries = fits
        .into_iter()
        .zip(maps)
        .map(|(fit, map)| {
            let fit = fit.relabeled(&map);
            let errors = loocv_errors(graph, &fit)?;
            Ok(SweepEntry { errors, fit })
        })
        .collect::<Result<Vec<_>, InferenceError>>()?;
    let mut result = SweepResult { entries, flows: Vec::new() };
    result.flows = alluvial_flows(&result, options.typical_threshold);
    Ok(result)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Recommendation {
    /// Every q whose Gibbs error lies within one standard error of the
    /// minimum.
    pub q_candidates: Vec<usize>,
    pub q_final: usize,
    /// `(q, refinement rate relative to q - 1)` for each checked step.
    pub refinement: Vec<(usize, f64)>,
}

/// Share of dark mass at a transition that each child group receives from
/// its dominant parent. 1 means the finer partition only splits groups of
/// the coarser one (on typical vertices); 0 when there is no dark mass.
pub fn refinement_rate(flows: &[FlowRecord], from_q: usize, to_q: usize) -> f64 {
    let dark: Vec<&FlowRecord> = flows
        .iter()
        .filter(|f| f.dark && f.from_q == from_q && f.to_q == to_q)
        .collect();
    let total: usize = dark.iter().map(|f| f.count).sum();
    if total == 0 {
        return 0.0;
    }
    let mut children: Vec<usize> = dark.iter().map(|f| f.to_group).collect();
    children.sort_unstable();
    children.dedup();
    let kept: usize = children
        .iter()
        .map(|&b| dark.iter().filter(|f| f.to_group == b).map(|f| f.count).max().unwrap_or(0))
        .sum();
    kept as f64 / total as f64
}

pub const REFINEMENT_THRESHOLD: f64 = 0.95;

/// Suggests a number of groups.
///
/// Candidates are the q within one standard error of the smallest Gibbs
/// error. Starting from the smallest candidate, q is raised step by step
/// while each step refines the previous partition (refinement rate at least
/// [`REFINEMENT_THRESHOLD`]); the last candidate reached is the suggestion.
/// This is a heuristic starting point for an analyst, who may override it.
pub fn recommend_q(sweep: &SweepResult) -> Recommendation {
    let errors: Vec<&ErrorEstimates> = sweep.entries.iter().map(|e| &e.errors).collect();
    let best = errors
        .iter()
        .min_by(|a, b| a.e_gibbs.mean.total_cmp(&b.e_gibbs.mean))
        .expect("non-empty sweep");
    let bound = best.e_gibbs.mean + best.e_gibbs.stderr;
    let q_candidates: Vec<usize> = errors.iter().filter(|e| e.e_gibbs.mean <= bound).map(|e| e.q).collect();
    let start = q_candidates[0];
    let mut q_final = start;
    let mut refinement = Vec::new();
    let qs = sweep.qs();
    let mut q = start + 1;
    while qs.contains(&q) && q <= *q_candidates.last().expect("non-empty") {
        let rate = refinement_rate(&sweep.flows, q - 1, q);
        refinement.push((q, rate));
        if rate < REFINEMENT_THRESHOLD {
            break;
        }
        if q_candidates.contains(&q) {
            q_final = q;
        }
        q += 1;
    }
    Recommendation {
        q_candidates,
        q_final,
        refinement,
    }
}
