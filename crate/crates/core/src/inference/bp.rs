//! Belief propagation for the labelled block model on sparse graphs.
//!
//! Messages live on both directions of every signed edge. Non-edges enter
//! only through a mean-field external field `h_i(σ) = Σ_{k≠i} Σ_σ'
//! p_ik(σ,σ') ψ_k(σ')`, using `log(1 - p) ≈ -p`. The field is kept cheap by
//! caching the propensity-weighted group masses `Θ(σ) = Σ_k f_k ψ_k(σ)`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Exp1;

use super::{BlockModelParams, InferenceError};
use crate::graph::{EdgeLabel, OpinionGraph};

const SIGNED: [EdgeLabel; 2] = [EdgeLabel::Positive, EdgeLabel::Negative];

/// How messages and marginals are initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MessageInit {
    /// Every vector uniform over groups.
    Uniform,
    /// Every vector equal to the group fractions.
    Prior,
    /// Independent draws from a symmetric Dirichlet with concentration 1.
    Dirichlet,
}

#[derive(Clone, Debug)]
pub struct BpState {
    q: usize,
    degree_corrected: bool,
    /// `edges.len() * 2 * q`; slot 0 of edge `k` is the message from its
    /// source, slot 1 from its destination. Neutral edges keep unused slots.
    messages: Vec<f64>,
    marginals: Vec<f64>,
    theta_pos: Vec<f64>,
    theta_neg: Vec<f64>,
    order: Vec<usize>,
    damping: f64,
    iterations: usize,
    residual: f64,
}

impl BpState {
    /// Creates a state for `params.q()` groups. The vertex update order is
    /// a permutation drawn from `rng` and stays fixed for the state's life.
    pub fn new<R: Rng + ?Sized>(
        graph: &OpinionGraph,
        params: &BlockModelParams,
        init: MessageInit,
        rng: &mut R,
    ) -> Self {
        let q = params.q();
        let mut order: Vec<usize> = (0..graph.n()).collect();
        order.shuffle(rng);
        let mut fill = |buf: &mut [f64]| match init {
            MessageInit::Uniform => buf.fill(1.0 / q as f64),
            MessageInit::Prior => buf.copy_from_slice(&params.gamma),
            MessageInit::Dirichlet => {
                for x in buf.iter_mut() {
                    *x = rng.sample::<f64, _>(Exp1).max(f64::MIN_POSITIVE);
                }
                let total: f64 = buf.iter().sum();
                buf.iter_mut().for_each(|x| *x /= total);
            }
        };
        let mut messages = vec![0.0; graph.edges().len() * 2 * q];
        for chunk in messages.chunks_mut(q) {
            fill(chunk);
        }
        let mut marginals = vec![0.0; graph.n() * q];
        for chunk in marginals.chunks_mut(q) {
            fill(chunk);
        }
        let mut state = BpState {
            q,
            degree_corrected: params.degree_corrected,
            messages,
            marginals,
            theta_pos: vec![0.0; q],
            theta_neg: vec![0.0; q],
            order,
            damping: 0.0,
            iterations: 0,
            residual: f64::INFINITY,
        };
        state.refresh_theta(graph);
        state
    }

    /// Creates a state whose messages all equal their sender's marginal.
    /// The vertex update order is drawn from `rng` as in [`BpState::new`].
    pub fn from_marginals<R: Rng + ?Sized>(
        graph: &OpinionGraph,
        degree_corrected: bool,
        marginals: &[Vec<f64>],
        rng: &mut R,
    ) -> Result<Self, InferenceError> {
        if marginals.len() != graph.n() {
            return Err(InferenceError::LengthMismatch { expected: graph.n(), actual: marginals.len() });
        }
        let q = marginals.first().map_or(1, Vec::len);
        if q == 0 || marginals.iter().any(|m| m.len() != q) {
            return Err(InferenceError::InvalidParams("marginals must share one nonzero length".into()));
        }
        let mut order: Vec<usize> = (0..graph.n()).collect();
        order.shuffle(rng);
        let mut messages = vec![1.0 / q as f64; graph.edges().len() * 2 * q];
        for k in graph.signed_edges() {
            let e = &graph.edges()[k];
            messages[k * 2 * q..(k * 2 + 1) * q].copy_from_slice(&marginals[e.src]);
            messages[(k * 2 + 1) * q..(k * 2 + 2) * q].copy_from_slice(&marginals[e.dst]);
        }
        let mut state = BpState {
            q,
            degree_corrected,
            messages,
            marginals: marginals.concat(),
            theta_pos: vec![0.0; q],
            theta_neg: vec![0.0; q],
            order,
            damping: 0.0,
            iterations: 0,
            residual: f64::INFINITY,
        };
        state.refresh_theta(graph);
        Ok(state)
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// Vertex marginal `ψ_i`.
    pub fn marginal(&self, i: usize) -> &[f64] {
        &self.marginals[i * self.q..(i + 1) * self.q]
    }

    /// Cavity message sent along edge `edge` by endpoint `from`.
    pub fn message(&self, graph: &OpinionGraph, edge: usize, from: usize) -> &[f64] {
        let slot = self.slot(graph, edge, from);
        &self.messages[slot..slot + self.q]
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Largest absolute message change in the most recent sweep.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn damping(&self) -> f64 {
        self.damping
    }

    pub fn set_damping(&mut self, damping: f64) {
        self.damping = damping.clamp(0.0, 1.0);
    }

    /// Degree-weighted group mass `Θ(σ) = Σ_k f_k ψ_k(σ)` for one label.
    pub fn theta(&self, label: EdgeLabel) -> &[f64] {
        match label {
            EdgeLabel::Positive => &self.theta_pos,
            _ => &self.theta_neg,
        }
    }

    fn slot(&self, graph: &OpinionGraph, edge: usize, from: usize) -> usize {
        let e = &graph.edges()[edge];
        let dir = if e.src == from { 0 } else { 1 };
        (edge * 2 + dir) * self.q
    }

    fn propensity(&self, graph: &OpinionGraph, label: EdgeLabel, v: usize) -> f64 {
        if self.degree_corrected {
            graph.degrees(label)[v] as f64
        } else {
            1.0
        }
    }

    fn refresh_theta(&mut self, graph: &OpinionGraph) {
        let q = self.q;
        self.theta_pos.fill(0.0);
        self.theta_neg.fill(0.0);
        for i in 0..graph.n() {
            let f_pos = self.propensity(graph, EdgeLabel::Positive, i);
            let f_neg = self.propensity(graph, EdgeLabel::Negative, i);
            for s in 0..q {
                let p = self.marginals[i * q + s];
                self.theta_pos[s] += f_pos * p;
                self.theta_neg[s] += f_neg * p;
            }
        }
    }

    /// External field `h_i(σ)` from every vertex other than `i`.
    pub fn field(&self, graph: &OpinionGraph, params: &BlockModelParams, i: usize) -> Vec<f64> {
        let q = self.q;
        let own = self.marginal(i);
        let mut h = vec![0.0; q];
        for label in SIGNED {
            let f = self.propensity(graph, label, i);
            if f == 0.0 {
                continue;
            }
            let omega = params.omega(label);
            let theta = self.theta(label);
            for (s, hs) in h.iter_mut().enumerate() {
                let mut acc = 0.0;
                for t in 0..q {
                    acc += omega[s][t] * (theta[t] - f * own[t]);
                }
                *hs += f * acc;
            }
        }
        h
    }

    /// Log of each incoming factor `Σ_σ' ψ^{j→i}(σ') w(i,j,σ,σ')`, one row
    /// of `q` per incident signed edge of `i`, in `graph.incident(i)` order.
    fn incoming_logs(&self, graph: &OpinionGraph, params: &BlockModelParams, i: usize) -> Vec<f64> {
        let q = self.q;
        let incident = graph.incident(i);
        let mut logs = vec![0.0; incident.len() * q];
        for (t, &k) in incident.iter().enumerate() {
            let e = &graph.edges()[k];
            let j = e.other(i);
            let scale = (self.propensity(graph, e.label, i) * self.propensity(graph, e.label, j)).ln();
            let omega = params.omega(e.label);
            let incoming = self.message(graph, k, j);
            for s in 0..q {
                let sum: f64 = incoming.iter().zip(&omega[s]).map(|(m, w)| m * w).sum();
                logs[t * q + s] = sum.ln() + scale;
            }
        }
        logs
    }

    fn local_field(&self, graph: &OpinionGraph, params: &BlockModelParams, i: usize) -> Vec<f64> {
        self.field(graph, params, i)
            .into_iter()
            .zip(&params.gamma)
            .map(|(h, g)| g.ln() - h)
            .collect()
    }

    /// Applies a group relabelling: group `g` becomes `perm[g]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let q = self.q;
        let remap = |buf: &[f64]| {
            let mut out = vec![0.0; buf.len()];
            for (src, dst) in buf.chunks(q).zip(out.chunks_mut(q)) {
                for (g, &v) in src.iter().enumerate() {
                    dst[perm[g]] = v;
                }
            }
            out
        };
        BpState {
            messages: remap(&self.messages),
            marginals: remap(&self.marginals),
            theta_pos: remap(&self.theta_pos),
            theta_neg: remap(&self.theta_neg),
            order: self.order.clone(),
            ..*self
        }
    }
}

/// Converts log-weights into a probability vector in place. A vector with
/// no finite entry becomes uniform.
pub(crate) fn normalize_log(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        let u = 1.0 / v.len() as f64;
        v.fill(u);
        return;
    }
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    v.iter_mut().for_each(|x| *x /= total);
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// One asynchronous sweep over all vertices in the state's fixed order.
/// Each visit recomputes every outgoing message and the marginal of the
/// visited vertex. Returns the largest absolute message change.
pub fn bp_sweep(graph: &OpinionGraph, params: &BlockModelParams, state: &mut BpState) -> f64 {
    let q = state.q;
    state.refresh_theta(graph);
    let mut residual: f64 = 0.0;
    let order = std::mem::take(&mut state.order);
    let mut out = vec![0.0; q];
    for &i in &order {
        let base = state.local_field(graph, params, i);
        let logs = state.incoming_logs(graph, params, i);
        let incident = graph.incident(i);
        let d = incident.len();

        // suffix[t] = sum of rows t..d
        let mut suffix = vec![0.0; (d + 1) * q];
        for t in (0..d).rev() {
            for s in 0..q {
                suffix[t * q + s] = suffix[(t + 1) * q + s] + logs[t * q + s];
            }
        }
        let mut prefix = vec![0.0; q];
        for (t, &k) in incident.iter().enumerate() {
            for s in 0..q {
                out[s] = base[s] + prefix[s] + suffix[(t + 1) * q + s];
            }
            normalize_log(&mut out);
            let slot = state.slot(graph, k, i);
            for s in 0..q {
                let old = state.messages[slot + s];
                let new = (1.0 - state.damping) * out[s] + state.damping * old;
                residual = residual.max((new - old).abs());
                state.messages[slot + s] = new;
            }
            for s in 0..q {
                prefix[s] += logs[t * q + s];
            }
        }

        let mut marginal: Vec<f64> = (0..q).map(|s| base[s] + suffix[s]).collect();
        normalize_log(&mut marginal);
        let f_pos = state.propensity(graph, EdgeLabel::Positive, i);
        let f_neg = state.propensity(graph, EdgeLabel::Negative, i);
        for s in 0..q {
            let delta = marginal[s] - state.marginals[i * q + s];
            state.theta_pos[s] += f_pos * delta;
            state.theta_neg[s] += f_neg * delta;
            state.marginals[i * q + s] = marginal[s];
        }
    }
    state.order = order;
    state.iterations += 1;
    state.residual = residual;
    residual
}

/// Runs sweeps until the residual drops below `tol` or `max_sweeps` is
/// reached. Damping of 0.5 switches on after two consecutive residual
/// increases. Returns whether the messages converged.
pub fn converge(
    graph: &OpinionGraph,
    params: &BlockModelParams,
    state: &mut BpState,
    tol: f64,
    max_sweeps: usize,
) -> bool {
    let mut previous = f64::INFINITY;
    let mut increases = 0;
    for _ in 0..max_sweeps {
        let residual = bp_sweep(graph, params, state);
        if residual < tol {
            return true;
        }
        if residual > previous {
            increases += 1;
            if increases >= 2 {
                state.set_damping(0.5);
            }
        } else {
            increases = 0;
        }
        previous = residual;
    }
    false
}

fn signed_edge(graph: &OpinionGraph, edge: usize) -> Result<(usize, usize, EdgeLabel), InferenceError> {
    let e = graph.edges().get(edge).ok_or(InferenceError::UnknownEdge(edge))?;
    if !e.label.is_signed() {
        return Err(InferenceError::NeutralEdge(edge));
    }
    Ok((e.src, e.dst, e.label))
}

/// Two-point marginal `ν(σ,σ')` of an edge's endpoints (row: source
/// group, column: destination group), flattened row-major.
pub fn edge_two_point(
    graph: &OpinionGraph,
    params: &BlockModelParams,
    state: &BpState,
    edge: usize,
) -> Result<Vec<f64>, InferenceError> {
    let (i, j, label) = signed_edge(graph, edge)?;
    let q = state.q;
    let from_i = state.message(graph, edge, i);
    let from_j = state.message(graph, edge, j);
    let omega = params.omega(label);
    let mut nu = vec![0.0; q * q];
    for a in 0..q {
        for b in 0..q {
            nu[a * q + b] = from_i[a] * from_j[b] * omega[a][b];
        }
    }
    normalize(&mut nu);
    Ok(nu)
}

/// Joint of an edge's endpoints with that edge's own factor removed:
/// `ν^cav(σ,σ') ∝ ψ^{i→j}(σ) ψ^{j→i}(σ')`, flattened row-major.
pub fn cavity_predictive(
    graph: &OpinionGraph,
    state: &BpState,
    edge: usize,
) -> Result<Vec<f64>, InferenceError> {
    let (i, j, _) = signed_edge(graph, edge)?;
    let q = state.q;
    let from_i = state.message(graph, edge, i);
    let from_j = state.message(graph, edge, j);
    let mut nu = vec![0.0; q * q];
    for a in 0..q {
        for b in 0..q {
            nu[a * q + b] = from_i[a] * from_j[b];
        }
    }
    normalize(&mut nu);
    Ok(nu)
}

fn normalize(v: &mut [f64]) {
    let total: f64 = v.iter().sum();
    if total > 0.0 && total.is_finite() {
        v.iter_mut().for_each(|x| *x /= total);
    } else {
        let u = 1.0 / v.len() as f64;
        v.fill(u);
    }
}

/// Bethe free energy of the current messages:
/// `-Σ_i log Z_i + Σ_(ij) log Z_ij - ½ Σ_i Σ_σ ψ_i(σ) h_i(σ)`.
///
/// The last term removes the double counting of non-edge pairs in the
/// vertex fields. At a fixed point this is the variational free energy
/// whose minimizer over parameters is the M-step.
pub fn bethe_free_energy(graph: &OpinionGraph, params: &BlockModelParams, state: &BpState) -> f64 {
    let q = state.q;
    let mut state = state.clone();
    state.refresh_theta(graph);
    let mut energy = 0.0;
    let mut row = vec![0.0; q];
    for i in 0..graph.n() {
        let h = state.field(graph, params, i);
        let logs = state.incoming_logs(graph, params, i);
        for s in 0..q {
            row[s] = params.gamma[s].ln() - h[s];
        }
        for chunk in logs.chunks(q) {
            for s in 0..q {
                row[s] += chunk[s];
            }
        }
        energy -= log_sum_exp(&row);
        let marginal = state.marginal(i);
        energy -= 0.5 * marginal.iter().zip(&h).map(|(p, h)| p * h).sum::<f64>();
    }
    for k in graph.signed_edges() {
        let e = &graph.edges()[k];
        let from_i = state.message(graph, k, e.src);
        let from_j = state.message(graph, k, e.dst);
        let omega = params.omega(e.label);
        let mut z = 0.0;
        for a in 0..q {
            for b in 0..q {
                z += from_i[a] * from_j[b] * omega[a][b];
            }
        }
        let scale = state.propensity(graph, e.label, e.src) * state.propensity(graph, e.label, e.dst);
        energy += (z * scale).ln();
    }
    energy
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn assert_normalized(state: &BpState, graph: &OpinionGraph) {
        for i in 0..graph.n() {
            let total: f64 = state.marginal(i).iter().sum();
            assert!((total - 1.0).abs() < 1e-10);
        }
        for k in graph.signed_edges() {
            let e = graph.edges()[k];
            for from in [e.src, e.dst] {
                let total: f64 = state.message(graph, k, from).iter().sum();
                assert!((total - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn uniform_affinities_are_a_fixed_point() {
        let g = graph(6, &[(0, 1, 1), (1, 2, -1), (2, 3, 1), (3, 0, -1), (4, 5, 1), (0, 4, -1)]);
        let params = BlockModelParams::uniform(3, 0.05, 0.07, false);
        let mut state = BpState::new(&g, &params, MessageInit::Uniform, &mut rng());
        let residual = bp_sweep(&g, &params, &mut state);
        assert!(residual <= 1e-10, "residual {residual}");
        for i in 0..g.n() {
            for p in state.marginal(i) {
                assert!((p - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn messages_stay_normalized_with_extreme_parameters() {
        let g = graph(5, &[(0, 1, 1), (1, 2, 1), (2, 3, -1), (3, 4, -1), (4, 0, 1)]);
        let params = BlockModelParams::new(
            vec![0.5, 0.5, 0.0],
            vec![vec![0.9, 0.0, 0.0], vec![0.0, 1e-300, 0.0], vec![0.0, 0.0, 0.0]],
            vec![vec![0.0, 0.1, 0.0], vec![0.1, 0.0, 0.0], vec![0.0, 0.0, 0.0]],
            false,
        )
        .unwrap();
        let mut state = BpState::new(&g, &params, MessageInit::Dirichlet, &mut rng());
        for _ in 0..20 {
            let r = bp_sweep(&g, &params, &mut state);
            assert!(r.is_finite());
            assert_normalized(&state, &g);
        }
    }

    #[test]
    fn isolated_vertex_marginal_follows_prior_and_field() {
        let g = graph(3, &[(0, 1, 1)]);
        let params = BlockModelParams::new(
            vec![0.3, 0.7],
            vec![vec![0.2, 0.05], vec![0.05, 0.1]],
            vec![vec![0.01, 0.04], vec![0.04, 0.02]],
            false,
        )
        .unwrap();
        let mut state = BpState::new(&g, &params, MessageInit::Dirichlet, &mut rng());
        converge(&g, &params, &mut state, 1e-13, 500);
        let h = state.field(&g, &params, 2);
        let mut expected: Vec<f64> = params.gamma.iter().zip(&h).map(|(g, h)| g.ln() - h).collect();
        normalize_log(&mut expected);
        for (p, e) in state.marginal(2).iter().zip(&expected) {
            assert!((p - e).abs() < 1e-12);
        }
    }

    #[test]
    fn single_group_two_point_is_degenerate() {
        let g = graph(3, &[(0, 1, 1), (1, 2, -1)]);
        let params = BlockModelParams::uniform(1, 0.3, 0.2, false);
        let mut state = BpState::new(&g, &params, MessageInit::Uniform, &mut rng());
        bp_sweep(&g, &params, &mut state);
        assert_eq!(edge_two_point(&g, &params, &state, 0).unwrap(), vec![1.0]);
        assert_eq!(cavity_predictive(&g, &state, 1).unwrap(), vec![1.0]);
    }

    #[test]
    fn neutral_edge_has_no_two_point_marginal() {
        let g = graph(3, &[(0, 1, 1), (1, 2, 0)]);
        let params = BlockModelParams::uniform(2, 0.3, 0.2, false);
        let state = BpState::new(&g, &params, MessageInit::Uniform, &mut rng());
        assert!(matches!(edge_two_point(&g, &params, &state, 1), Err(InferenceError::NeutralEdge(1))));
        assert!(matches!(cavity_predictive(&g, &state, 1), Err(InferenceError::NeutralEdge(1))));
        assert!(matches!(cavity_predictive(&g, &state, 9), Err(InferenceError::UnknownEdge(9))));
    }

    #[test]
    fn symmetric_pair_gives_symmetric_two_point() {
        let g = graph(2, &[(0, 1, 1)]);
        let params = BlockModelParams::new(
            vec![0.5, 0.5],
            vec![vec![0.4, 0.1], vec![0.1, 0.4]],
            vec![vec![0.05, 0.2], vec![0.2, 0.05]],
            false,
        )
        .unwrap();
        let mut state = BpState::new(&g, &params, MessageInit::Dirichlet, &mut rng());
        converge(&g, &params, &mut state, 1e-14, 200);
        let nu = edge_two_point(&g, &params, &state, 0).unwrap();
        assert!((nu[1] - nu[2]).abs() < 1e-12);
        assert!((nu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_fixed_point_cavity_is_outer_product_of_prior() {
        let g = graph(4, &[(0, 1, 1), (1, 2, -1), (2, 3, 1)]);
        let mut params = BlockModelParams::uniform(2, 0.1, 0.1, false);
        params.gamma = vec![0.25, 0.75];
        let mut state = BpState::new(&g, &params, MessageInit::Prior, &mut rng());
        converge(&g, &params, &mut state, 1e-14, 100);
        let nu = cavity_predictive(&g, &state, 1).unwrap();
        let expected = [0.0625, 0.1875, 0.1875, 0.5625];
        for (a, b) in nu.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn permuting_groups_permutes_one_sweep() {
        let g = graph(5, &[(0, 1, 1), (1, 2, -1), (2, 3, 1), (3, 4, -1), (4, 0, 1), (1, 3, 1)]);
        let params = BlockModelParams::new(
            vec![0.2, 0.3, 0.5],
            vec![vec![0.3, 0.05, 0.02], vec![0.05, 0.25, 0.01], vec![0.02, 0.01, 0.2]],
            vec![vec![0.01, 0.1, 0.08], vec![0.1, 0.02, 0.12], vec![0.08, 0.12, 0.03]],
            false,
        )
        .unwrap();
        let perm = [2, 0, 1];
        let mut state = BpState::new(&g, &params, MessageInit::Dirichlet, &mut rng());
        let mut permuted = state.permuted(&perm);
        let permuted_params = params.permuted(&perm);
        bp_sweep(&g, &params, &mut state);
        bp_sweep(&g, &permuted_params, &mut permuted);
        for i in 0..g.n() {
            for s in 0..3 {
                let a = state.marginal(i)[s];
                let b = permuted.marginal(i)[perm[s]];
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
