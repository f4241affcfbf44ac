//! Spectral starting partitions for EM.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::graph::{EdgeLabel, OpinionGraph};

const POWER_ITERATIONS: usize = 300;
const KMEANS_ITERATIONS: usize = 100;

/// Embedding of each vertex: for every label with edges, the dominant
/// `k`-dimensional invariant subspace of that label's non-backtracking
/// matrix, summed over each vertex's incoming directed edges. Each label's
/// block is scaled to norm `sqrt(d^x_i / d_i)`, so rows have unit norm and
/// a label weighs in proportion to the vertex's edges of that label.
/// Deterministic.
pub(crate) fn embedding(graph: &OpinionGraph, k: usize) -> Vec<Vec<f64>> {
    let n = graph.n();
    let total: Vec<usize> = (0..n).map(|i| graph.d_pos()[i] + graph.d_neg()[i]).collect();
    let mut features = vec![Vec::new(); n];
    for label in [EdgeLabel::Positive, EdgeLabel::Negative] {
        if graph.count(label) == 0 {
            continue;
        }
        let degrees = graph.degrees(label);
        let block = label_subspace(graph, label, k);
        for (i, (row, extra)) in features.iter_mut().zip(block).enumerate() {
            let norm = extra.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                let weight = (degrees[i] as f64 / total[i] as f64).sqrt();
                row.extend(extra.iter().map(|x| weight * x / norm));
            } else {
                row.extend(extra);
            }
        }
    }
    features
}

/// Subspace iteration on `B`, where `(Bv)(u→w) = Σ_{x→u, x≠w} v(x→u)`.
/// Directed edge `2e` runs from edge `e`'s source to its destination and
/// `2e + 1` back.
fn label_subspace(graph: &OpinionGraph, label: EdgeLabel, k: usize) -> Vec<Vec<f64>> {
    let n = graph.n();
    let ends: Vec<(usize, usize)> = graph
        .edges()
        .iter()
        .filter(|e| e.label == label)
        .map(|e| (e.src, e.dst))
        .collect();
    let k = k.min(2 * ends.len());
    let heads = |d: usize| {
        let (a, b) = ends[d / 2];
        if d % 2 == 0 { (a, b) } else { (b, a) }
    };
    let mut inflow = vec![0.0; n];
    let into = |v: &[f64], inflow: &mut [f64]| {
        inflow.fill(0.0);
        for (d, x) in v.iter().enumerate() {
            inflow[heads(d).1] += x;
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut basis: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..2 * ends.len()).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    orthonormalize(&mut basis, &mut rng);
    for _ in 0..POWER_ITERATIONS {
        for column in basis.iter_mut() {
            into(column, &mut inflow);
            let previous = column.clone();
            for (d, x) in column.iter_mut().enumerate() {
                *x = inflow[heads(d).0] - previous[d ^ 1];
            }
        }
        orthonormalize(&mut basis, &mut rng);
    }
    let mut out = vec![vec![0.0; k]; n];
    for (c, column) in basis.iter().enumerate() {
        into(column, &mut inflow);
        for (row, x) in out.iter_mut().zip(&inflow) {
            row[c] = *x;
        }
    }
    out
}

/// Modified Gram-Schmidt. A column that collapses is redrawn once and
/// zeroed if it collapses again.
fn orthonormalize<R: Rng>(basis: &mut [Vec<f64>], rng: &mut R) {
    for c in 0..basis.len() {
        for attempt in 0..2 {
            let (done, rest) = basis.split_at_mut(c);
            let column = &mut rest[0];
            for previous in done.iter() {
                let dot: f64 = previous.iter().zip(column.iter()).map(|(a, b)| a * b).sum();
                column.iter_mut().zip(previous).for_each(|(x, p)| *x -= dot * p);
            }
            let norm = column.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-10 {
                column.iter_mut().for_each(|x| *x /= norm);
                break;
            }
            if attempt == 0 {
                column.iter_mut().for_each(|x| *x = rng.sample(StandardNormal));
            } else {
                column.fill(0.0);
            }
        }
    }
}

fn distance2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm from a k-means++ seeding. Returns one cluster index
/// per point.
pub(crate) fn kmeans<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<usize> {
    let n = points.len();
    if k <= 1 || n == 0 {
        return vec![0; n];
    }
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut nearest: Vec<f64> = points.iter().map(|p| distance2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in nearest.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[next].clone());
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(distance2(p, &centers[centers.len() - 1]));
        }
    }

    let mut labels = vec![0usize; n];
    for iteration in 0..KMEANS_ITERATIONS {
        let mut changed = false;
        for (label, p) in labels.iter_mut().zip(points) {
            let best = (0..k)
                .min_by(|&a, &b| distance2(p, &centers[a]).total_cmp(&distance2(p, &centers[b])))
                .expect("k > 1");
            changed |= best != *label;
            *label = best;
        }
        if !changed && iteration > 0 {
            break;
        }
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&label, p) in labels.iter().zip(points) {
            counts[label] += 1;
            sums[label].iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    labels
}
