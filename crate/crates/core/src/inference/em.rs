use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rand_distr::Exp1;

use super::bp::{bethe_free_energy, converge, edge_two_point, BpState};
use super::spectral;
use super::{BlockModelParams, InferenceError};
use crate::graph::{EdgeLabel, OpinionGraph};

#[derive(Clone, Debug, PartialEq)]
pub struct FitOptions {
    pub degree_corrected: bool,
    /// Sweep limit for each E-step.
    pub max_iters: usize,
    /// Message residual at which an E-step stops.
    pub tol: f64,
    pub max_em_iters: usize,
    /// Largest relative parameter change at which EM stops.
    pub em_tol: f64,
    pub restarts: usize,
    pub rng_seed: u64,
    pub typical_threshold: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            degree_corrected: false,
            max_iters: 500,
            tol: 1e-6,
            max_em_iters: 200,
            em_tol: 1e-5,
            restarts: 10,
            rng_seed: 0,
            typical_threshold: 0.9,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub params: BlockModelParams,
    pub state: BpState,
    /// `marginals[i][σ]`.
    pub marginals: Vec<Vec<f64>>,
    pub map_labels: Vec<usize>,
    pub typical: Vec<bool>,
    pub typical_threshold: f64,
    /// Two-point marginals indexed by edge; `None` for neutral edges.
    pub edge_marginals: Vec<Option<Vec<f64>>>,
    pub bethe_free_energy: f64,
    /// Free energy after each E-step of the winning restart.
    pub free_energy_trace: Vec<f64>,
    pub converged: bool,
    pub restarts_used: usize,
}

impl FitResult {
    pub fn q(&self) -> usize {
        self.params.q()
    }

    /// Group relabelling: group `g` becomes `perm[g]`.
    pub fn relabeled(&self, perm: &[usize]) -> FitResult {
        let q = self.q();
        let permute = |v: &[f64]| {
            let mut out = vec![0.0; q];
            for (g, &x) in v.iter().enumerate() {
                out[perm[g]] = x;
            }
            out
        };
        let permute_pair = |nu: &Vec<f64>| {
            let mut out = vec![0.0; q * q];
            for a in 0..q {
                for b in 0..q {
                    out[perm[a] * q + perm[b]] = nu[a * q + b];
                }
            }
            out
        };
        FitResult {
            params: self.params.permuted(perm),
            state: self.state.permuted(perm),
            marginals: self.marginals.iter().map(|m| permute(m)).collect(),
            map_labels: self.map_labels.iter().map(|&g| perm[g]).collect(),
            typical: self.typical.clone(),
            typical_threshold: self.typical_threshold,
            edge_marginals: self
                .edge_marginals
                .iter()
                .map(|nu| nu.as_ref().map(permute_pair))
                .collect(),
            bethe_free_energy: self.bethe_free_energy,
            free_energy_trace: self.free_energy_trace.clone(),
            converged: self.converged,
            restarts_used: self.restarts_used,
        }
    }

    pub fn export(&self, graph: &OpinionGraph) -> FitExport {
        FitExport {
            q: self.q(),
            degree_corrected: self.params.degree_corrected,
            bethe_free_energy: self.bethe_free_energy,
            converged: self.converged,
            typical_threshold: self.typical_threshold,
            gamma: self.params.gamma.clone(),
            omega_pos: self.params.omega_pos.clone(),
            omega_neg: self.params.omega_neg.clone(),
            vertices: graph
                .vertices()
                .iter()
                .enumerate()
                .map(|(i, v)| VertexAssignment {
                    id: v.id.clone(),
                    group: self.map_labels[i],
                    typical: self.typical[i],
                    reported: graph.is_reported(i),
                    marginals: self.marginals[i].clone(),
                })
                .collect(),
        }
    }
}

/// Serialized fit: fitted parameters plus per-vertex assignments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitExport {
    pub q: usize,
    pub degree_corrected: bool,
    pub bethe_free_energy: f64,
    pub converged: bool,
    pub typical_threshold: f64,
    pub gamma: Vec<f64>,
    pub omega_pos: Vec<Vec<f64>>,
    pub omega_neg: Vec<Vec<f64>>,
    pub vertices: Vec<VertexAssignment>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VertexAssignment {
    pub id: String,
    pub group: usize,
    pub typical: bool,
    pub reported: bool,
    pub marginals: Vec<f64>,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Closed-form parameter update from the current beliefs.
///
/// `γ_σ` is the mean vertex marginal. `ω^x_{σσ'}` is the symmetrized
/// two-point mass of label-`x` edges divided by the propensity-weighted
/// pair mass `Σ_{i≠j} f_i f_j ψ_i(σ) ψ_j(σ')`.
pub fn m_step(graph: &OpinionGraph, state: &BpState, degree_corrected: bool, previous: &BlockModelParams) -> BlockModelParams {
    let q = state.q();
    let n = graph.n();
    let mut gamma = vec![0.0; q];
    for i in 0..n {
        for (g, p) in gamma.iter_mut().zip(state.marginal(i)) {
            *g += p;
        }
    }
    gamma.iter_mut().for_each(|g| *g /= n as f64);

    let mut omegas = [vec![vec![0.0; q]; q], vec![vec![0.0; q]; q]];
    for (omega, label) in omegas.iter_mut().zip([EdgeLabel::Positive, EdgeLabel::Negative]) {
        let mut theta = vec![0.0; q];
        let mut self_pairs = vec![vec![0.0; q]; q];
        for i in 0..n {
            let f = if degree_corrected { graph.degrees(label)[i] as f64 } else { 1.0 };
            let psi = state.marginal(i);
            for a in 0..q {
                theta[a] += f * psi[a];
                for b in 0..q {
                    self_pairs[a][b] += f * f * psi[a] * psi[b];
                }
            }
        }
        let mut edge_mass = vec![vec![0.0; q]; q];
        for k in graph.signed_edges().filter(|&k| graph.edges()[k].label == label) {
            let nu = edge_two_point(graph, previous, state, k).expect("signed edge");
            for a in 0..q {
                for b in 0..q {
                    edge_mass[a][b] += nu[a * q + b] + nu[b * q + a];
                }
            }
        }
        for a in 0..q {
            for b in 0..q {
                let pairs = theta[a] * theta[b] - self_pairs[a][b];
                omega[a][b] = if pairs > 0.0 { edge_mass[a][b] / pairs } else { 0.0 };
            }
        }
    }
    let [omega_pos, omega_neg] = omegas;
    BlockModelParams {
        gamma,
        omega_pos,
        omega_neg,
        degree_corrected,
    }
}

/// Single-group estimate `ω^x = 2 M^x / Σ_{i≠j} f_i f_j`.
fn single_group_omega(graph: &OpinionGraph, label: EdgeLabel, degree_corrected: bool) -> f64 {
    let (sum, sum_sq) = if degree_corrected {
        graph
            .degrees(label)
            .iter()
            .fold((0.0, 0.0), |(s, s2), &d| (s + d as f64, s2 + (d * d) as f64))
    } else {
        let n = graph.n() as f64;
        (n, n)
    };
    let pairs = sum * sum - sum_sq;
    if pairs > 0.0 {
        2.0 * graph.count(label) as f64 / pairs
    } else {
        0.0
    }
}

/// Weight of the k-means label in a restart's starting marginals; the rest
/// is a Dirichlet(1) draw.
const SEED_WEIGHT: f64 = 0.7;
/// Floor on `ln(ω_ab / ω̄)` in the starting affinities.
const LOG_CONTRAST_FLOOR: f64 = -3.0;
/// Starting affinities whose widest log-ratio to the single-group value is
/// below this are stretched up to it, so the seed's structure survives the
/// first E-step.
const MIN_LOG_CONTRAST: f64 = 0.5;

/// Starting point of one restart. Vertices are partitioned by k-means on
/// the spectral embedding, the partition is softened with Dirichlet noise,
/// messages start at their sender's marginal, and the parameters are the
/// block densities of that soft partition.
fn initial_state<R: Rng>(
    graph: &OpinionGraph,
    q: usize,
    degree_corrected: bool,
    embedding: &[Vec<f64>],
    rng: &mut R,
) -> (BlockModelParams, BpState) {
    let labels = spectral::kmeans(embedding, q, rng);
    let marginals: Vec<Vec<f64>> = labels
        .iter()
        .map(|&label| {
            let noise: Vec<f64> = (0..q).map(|_| rng.sample::<f64, _>(Exp1).max(f64::MIN_POSITIVE)).collect();
            let total: f64 = noise.iter().sum();
            (0..q)
                .map(|s| {
                    let seed = if s == label { SEED_WEIGHT } else { 0.0 };
                    seed + (1.0 - SEED_WEIGHT) * noise[s] / total
                })
                .collect()
        })
        .collect();
    let state = BpState::from_marginals(graph, degree_corrected, &marginals, rng).expect("one row per vertex");
    let base = BlockModelParams::uniform(
        q,
        single_group_omega(graph, EdgeLabel::Positive, degree_corrected),
        single_group_omega(graph, EdgeLabel::Negative, degree_corrected),
        degree_corrected,
    );
    let mut params = m_step(graph, &state, degree_corrected, &base);
    for (omega, flat) in [(&mut params.omega_pos, &base.omega_pos), (&mut params.omega_neg, &base.omega_neg)] {
        let level = flat[0][0];
        if level == 0.0 {
            continue;
        }
        let logs: Vec<Vec<f64>> = omega
            .iter()
            .map(|row| row.iter().map(|w| (w / level).ln().max(LOG_CONTRAST_FLOOR)).collect())
            .collect();
        let widest = logs.iter().flatten().fold(0.0, |a: f64, b| a.max(b.abs()));
        let stretch = if widest > 0.0 { (MIN_LOG_CONTRAST / widest).max(1.0) } else { 1.0 };
        for (row, log_row) in omega.iter_mut().zip(&logs) {
            for (w, l) in row.iter_mut().zip(log_row) {
                *w = level * (stretch * l).exp();
            }
        }
    }
    (params, state)
}

struct RestartOutcome {
    params: BlockModelParams,
    state: BpState,
    free_energy: f64,
    trace: Vec<f64>,
    converged: bool,
}

fn run_restart(
    graph: &OpinionGraph,
    q: usize,
    options: &FitOptions,
    embedding: &[Vec<f64>],
    restart: usize,
) -> RestartOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(options.rng_seed);
    rng.set_stream(restart as u64);
    let (mut params, mut state) = initial_state(graph, q, options.degree_corrected, embedding, &mut rng);
    let mut trace = Vec::new();
    let mut em_converged = false;
    let mut bp_converged = false;
    for _ in 0..options.max_em_iters {
        state.set_damping(0.0);
        bp_converged = converge(graph, &params, &mut state, options.tol, options.max_iters);
        trace.push(bethe_free_energy(graph, &params, &state));
        let next = m_step(graph, &state, options.degree_corrected, &params);
        let change = next.max_relative_change(&params);
        params = next;
        if change < options.em_tol {
            em_converged = true;
            break;
        }
    }
    state.set_damping(0.0);
    bp_converged = converge(graph, &params, &mut state, options.tol, options.max_iters) && bp_converged;
    let free_energy = bethe_free_energy(graph, &params, &state);
    trace.push(free_energy);
    RestartOutcome {
        params,
        state,
        free_energy,
        trace,
        converged: em_converged && bp_converged,
    }
}

/// Fits a `q`-group labelled block model by EM with a BP E-step.
///
/// Each restart starts from its own random parameters and Dirichlet
/// messages; the restart with the lowest Bethe free energy wins (ties go to
/// the earlier restart). Not converging is reported in
/// [`FitResult::converged`], not as an error.
pub fn run_em(graph: &OpinionGraph, q: usize, options: &FitOptions) -> Result<FitResult, InferenceError> {
    if q == 0 {
        return Err(InferenceError::InvalidParams("q must be at least 1".into()));
    }
    if q > graph.n() {
        return Err(InferenceError::TooManyGroups { q, n: graph.n() });
    }
    if q > 1 && graph.m() == 0 {
        return Err(InferenceError::NoSignedEdges);
    }
    let restarts = options.restarts.max(1);
    let embedding = if q > 1 { spectral::embedding(graph, q) } else { vec![Vec::new(); graph.n()] };
    let outcomes: Vec<RestartOutcome> = (0..restarts)
        .into_par_iter()
        .map(|r| run_restart(graph, q, options, &embedding, r))
        .collect();
    let best = outcomes
        .into_iter()
        .reduce(|best, next| if next.free_energy < best.free_energy { next } else { best })
        .expect("at least one restart");

    let marginals: Vec<Vec<f64>> = (0..graph.n()).map(|i| best.state.marginal(i).to_vec()).collect();
    let map_labels = marginals.iter().map(|m| argmax(m)).collect();
    let typical = marginals
        .iter()
        .map(|m| m.iter().copied().fold(0.0, f64::max) >= options.typical_threshold)
        .collect();
    let edge_marginals = graph
        .edges()
        .iter()
        .enumerate()
        .map(|(k, e)| {
            e.label
                .is_signed()
                .then(|| edge_two_point(graph, &best.params, &best.state, k).expect("signed edge"))
        })
        .collect();
    Ok(FitResult {
        params: best.params,
        state: best.state,
        marginals,
        map_labels,
        typical,
        typical_threshold: options.typical_threshold,
        edge_marginals,
        bethe_free_energy: best.free_energy,
        free_energy_trace: best.trace,
        converged: best.converged,
        restarts_used: restarts,
    })
}
