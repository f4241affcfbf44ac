//! Independent reference computations shared by the integration tests.
//! Nothing here calls into the inference or metrics code it is used to
//! check.
#![allow(dead_code)]

use std::collections::HashMap;

use opingraph_core::graph::{EdgeLabel, EdgeRecord, OpinionGraph, VertexRecord};
use opingraph_core::BlockModelParams;
use rand::Rng;

pub fn graph_from(n: usize, edges: &[(usize, usize, EdgeLabel)]) -> OpinionGraph {
    let vertices = (0..n)
        .map(|i| VertexRecord {
            id: format!("v{i}"),
            text: format!("response {i}"),
            respondent: Some(format!("r{i}")),
            seed: false,
        })
        .collect();
    let edges = edges
        .iter()
        .map(|&(a, b, label)| EdgeRecord {
            src: format!("v{a}"),
            dst: format!("v{b}"),
            label,
        })
        .collect();
    OpinionGraph::new("test", vertices, edges).unwrap()
}

pub fn random_label<R: Rng>(rng: &mut R) -> EdgeLabel {
    if rng.random_bool(0.5) {
        EdgeLabel::Positive
    } else {
        EdgeLabel::Negative
    }
}

/// Random labelled tree: vertex k attaches to a uniformly chosen earlier one.
pub fn random_tree<R: Rng>(rng: &mut R, n: usize) -> OpinionGraph {
    let edges: Vec<_> = (1..n)
        .map(|k| {
            let parent = rng.random_range(0..k);
            if rng.random_bool(0.5) {
                (parent, k, random_label(rng))
            } else {
                (k, parent, random_label(rng))
            }
        })
        .collect();
    graph_from(n, &edges)
}

pub fn random_symmetric<R: Rng>(rng: &mut R, q: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; q]; q];
    for a in 0..q {
        for b in a..q {
            m[a][b] = rng.random_range(lo..hi);
            m[b][a] = m[a][b];
        }
    }
    m
}

pub fn random_gamma<R: Rng>(rng: &mut R, q: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..q).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut gamma: Vec<f64> = raw.iter().map(|x| x / total).collect();
    let head: f64 = gamma[..q - 1].iter().sum();
    gamma[q - 1] = 1.0 - head;
    gamma
}

fn propensity(graph: &OpinionGraph, params: &BlockModelParams, label: EdgeLabel, v: usize) -> f64 {
    if !params.degree_corrected {
        return 1.0;
    }
    graph
        .edges()
        .iter()
        .filter(|e| e.label == label && (e.src == v || e.dst == v))
        .count() as f64
}

fn pair_probability(
    graph: &OpinionGraph,
    params: &BlockModelParams,
    label: EdgeLabel,
    i: usize,
    j: usize,
    a: usize,
    b: usize,
) -> f64 {
    let omega = match label {
        EdgeLabel::Positive => &params.omega_pos,
        _ => &params.omega_neg,
    };
    propensity(graph, params, label, i) * omega[a][b] * propensity(graph, params, label, j)
}

/// Complete-data likelihood multiplied out factor by factor, logged once.
pub fn direct_log_likelihood(graph: &OpinionGraph, params: &BlockModelParams, labels: &[usize]) -> f64 {
    let n = graph.n();
    let mut product = 1.0f64;
    for &s in labels {
        product *= params.gamma[s];
    }
    for i in 0..n {
        for j in i + 1..n {
            let between: Vec<EdgeLabel> = graph
                .edges()
                .iter()
                .filter(|e| e.label != EdgeLabel::Neutral)
                .filter(|e| (e.src == i && e.dst == j) || (e.src == j && e.dst == i))
                .map(|e| e.label)
                .collect();
            let (a, b) = (labels[i], labels[j]);
            let pos = pair_probability(graph, params, EdgeLabel::Positive, i, j, a, b);
            let neg = pair_probability(graph, params, EdgeLabel::Negative, i, j, a, b);
            if between.is_empty() {
                product *= 1.0 - pos - neg;
            }
            for label in between {
                product *= if label == EdgeLabel::Positive { pos } else { neg };
            }
        }
    }
    product.ln()
}

/// Mean-field external field on vertex `i` given the other vertices'
/// marginals, summed pair by pair.
pub fn direct_field(
    graph: &OpinionGraph,
    params: &BlockModelParams,
    marginals: &[Vec<f64>],
    i: usize,
) -> Vec<f64> {
    let q = params.q();
    let mut h = vec![0.0; q];
    for (k, psi) in marginals.iter().enumerate() {
        if k == i {
            continue;
        }
        for (s, hs) in h.iter_mut().enumerate() {
            for (t, p) in psi.iter().enumerate() {
                let w = pair_probability(graph, params, EdgeLabel::Positive, i, k, s, t)
                    + pair_probability(graph, params, EdgeLabel::Negative, i, k, s, t);
                *hs += w * p;
            }
        }
    }
    h
}

/// Exact posterior over all `q^N` labellings of the model with unary
/// factors `γ_σ exp(-h_i(σ))` and one factor per signed edge, optionally
/// leaving one edge out.
pub struct Enumeration {
    pub marginals: Vec<Vec<f64>>,
    /// Joint of each signed edge's (src, dst) groups, row-major.
    pub pair: HashMap<usize, Vec<f64>>,
}

pub fn enumerate_posterior(
    graph: &OpinionGraph,
    params: &BlockModelParams,
    fields: &[Vec<f64>],
    skip_edge: Option<usize>,
) -> Enumeration {
    let n = graph.n();
    let q = params.q();
    let edges: Vec<(usize, usize, usize, EdgeLabel)> = graph
        .edges()
        .iter()
        .enumerate()
        .filter(|(k, e)| e.label != EdgeLabel::Neutral && Some(*k) != skip_edge)
        .map(|(k, e)| (k, e.src, e.dst, e.label))
        .collect();
    let tracked: Vec<(usize, usize, usize)> = graph
        .edges()
        .iter()
        .enumerate()
        .filter(|(_, e)| e.label != EdgeLabel::Neutral)
        .map(|(k, e)| (k, e.src, e.dst))
        .collect();
    let mut marginals = vec![vec![0.0; q]; n];
    let mut pair: HashMap<usize, Vec<f64>> = tracked.iter().map(|t| (t.0, vec![0.0; q * q])).collect();
    let mut total = 0.0;
    let mut labels = vec![0usize; n];
    let count = q.pow(n as u32);
    for code in 0..count {
        let mut c = code;
        for l in labels.iter_mut() {
            *l = c % q;
            c /= q;
        }
        let mut weight = 1.0;
        for i in 0..n {
            weight *= params.gamma[labels[i]] * (-fields[i][labels[i]]).exp();
        }
        for &(_, i, j, label) in &edges {
            weight *= pair_probability(graph, params, label, i, j, labels[i], labels[j]);
        }
        total += weight;
        for i in 0..n {
            marginals[i][labels[i]] += weight;
        }
        for &(k, i, j) in &tracked {
            pair.get_mut(&k).unwrap()[labels[i] * q + labels[j]] += weight;
        }
    }
    for m in marginals.iter_mut() {
        m.iter_mut().for_each(|x| *x /= total);
    }
    for p in pair.values_mut() {
        p.iter_mut().for_each(|x| *x /= total);
    }
    Enumeration { marginals, pair }
}

/// NMI through `I = H(A) + H(B) - H(A,B)` with hash-map counting.
pub fn direct_nmi(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let entropy = |counts: HashMap<(usize, usize), usize>| -> f64 {
        counts
            .values()
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let mut ca = HashMap::new();
    let mut cb = HashMap::new();
    let mut cab = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *ca.entry((x, 0)).or_insert(0) += 1;
        *cb.entry((0, y)).or_insert(0) += 1;
        *cab.entry((x, y)).or_insert(0) += 1;
    }
    let (ha, hb, hab) = (entropy(ca), entropy(cb), entropy(cab));
    if ha == 0.0 && hb == 0.0 {
        return 1.0;
    }
    if ha == 0.0 || hb == 0.0 {
        return 0.0;
    }
    2.0 * (ha + hb - hab) / (ha + hb)
}

/// ARI from explicit pair counts (Hubert-Arabie form).
pub fn direct_ari(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut n11, mut n10, mut n01, mut n00) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for i in 0..n {
        for j in i + 1..n {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => n11 += 1.0,
                (true, false) => n10 += 1.0,
                (false, true) => n01 += 1.0,
                (false, false) => n00 += 1.0,
            }
        }
    }
    let denominator = (n00 + n01) * (n01 + n11) + (n00 + n10) * (n10 + n11);
    if denominator == 0.0 {
        return 1.0;
    }
    2.0 * (n00 * n11 - n01 * n10) / denominator
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest deviation between converged BP and exact enumeration on a
/// random tree, over marginals, edge two-point joints and cavity joints.
pub struct TreeDeviation {
    pub marginal: f64,
    pub two_point: f64,
    pub cavity: f64,
    pub converged: bool,
}

impl TreeDeviation {
    pub fn worst(&self) -> f64 {
        self.marginal.max(self.two_point).max(self.cavity)
    }
}

pub fn random_tree_params<R: Rng>(rng: &mut R, q: usize, degree_corrected: bool) -> BlockModelParams {
    let (lo, hi) = if degree_corrected { (0.005, 0.1) } else { (0.01, 0.45) };
    BlockModelParams {
        gamma: random_gamma(rng, q),
        omega_pos: random_symmetric(rng, q, lo, hi),
        omega_neg: random_symmetric(rng, q, lo, hi),
        degree_corrected,
    }
}

pub fn tree_deviation(seed: u64, degree_corrected: bool) -> TreeDeviation {
    use opingraph_core::inference::{cavity_predictive, converge, edge_two_point, BpState, MessageInit};
    use rand::SeedableRng;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=10usize);
    let q = if n >= 3 && rng.random_bool(0.5) { 3 } else { 2 };
    let graph = random_tree(&mut rng, n);
    let params = random_tree_params(&mut rng, q, degree_corrected);
    let mut state = BpState::new(&graph, &params, MessageInit::Dirichlet, &mut rng);
    let converged = converge(&graph, &params, &mut state, 1e-13, 20_000);

    let marginals: Vec<Vec<f64>> = (0..n).map(|i| state.marginal(i).to_vec()).collect();
    let fields: Vec<Vec<f64>> = (0..n).map(|i| direct_field(&graph, &params, &marginals, i)).collect();
    let exact = enumerate_posterior(&graph, &params, &fields, None);

    let marginal = (0..n)
        .map(|i| max_abs_diff(&marginals[i], &exact.marginals[i]))
        .fold(0.0, f64::max);
    let mut two_point = 0.0f64;
    let mut cavity = 0.0f64;
    for k in 0..graph.edges().len() {
        let bp_pair = edge_two_point(&graph, &params, &state, k).unwrap();
        two_point = two_point.max(max_abs_diff(&bp_pair, &exact.pair[&k]));
        let without = enumerate_posterior(&graph, &params, &fields, Some(k));
        let bp_cavity = cavity_predictive(&graph, &state, k).unwrap();
        cavity = cavity.max(max_abs_diff(&bp_cavity, &without.pair[&k]));
    }
    TreeDeviation { marginal, two_point, cavity, converged }
}

/// Up to six vertices with random labelled edges; repeated pairs allowed.
pub fn random_small_graph<R: Rng>(rng: &mut R) -> OpinionGraph {
    let n = rng.random_range(2..=6usize);
    let m = rng.random_range(0..=2 * n);
    let edges: Vec<_> = (0..m)
        .filter_map(|_| {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a == b {
                return None;
            }
            let label = match rng.random_range(0..5) {
                0 => EdgeLabel::Neutral,
                1 | 2 => EdgeLabel::Positive,
                _ => EdgeLabel::Negative,
            };
            Some((a, b, label))
        })
        .collect();
    graph_from(n, &edges)
}

/// A small graph, parameters keeping every edge probability below 1/2,
/// and a random labelling.
pub fn likelihood_case<R: Rng>(rng: &mut R, degree_corrected: bool) -> (OpinionGraph, BlockModelParams, Vec<usize>) {
    let graph = random_small_graph(rng);
    let q = rng.random_range(1..=3usize);
    let max_degree = graph
        .d_pos()
        .iter()
        .chain(graph.d_neg())
        .copied()
        .max()
        .unwrap_or(0)
        .max(1) as f64;
    let hi = if degree_corrected { 0.5 / (max_degree * max_degree) } else { 0.5 };
    let params = BlockModelParams {
        gamma: random_gamma(rng, q),
        omega_pos: random_symmetric(rng, q, 1e-3 * hi, hi),
        omega_neg: random_symmetric(rng, q, 1e-3 * hi, hi),
        degree_corrected,
    };
    let labels = (0..graph.n()).map(|_| rng.random_range(0..q)).collect();
    (graph, params, labels)
}
