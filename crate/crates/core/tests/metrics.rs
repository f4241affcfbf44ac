mod support;

use opingraph_core::graph::EdgeLabel;
use opingraph_core::metrics::{adjusted_agreement_score, agreement_score, ari, nmi};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{direct_ari, direct_nmi, graph_from, random_label};

fn random_pair(rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let n = rng.random_range(1..=8);
    let (qa, qb) = (rng.random_range(1..=4), rng.random_range(1..=4));
    let a = (0..n).map(|_| rng.random_range(0..qa)).collect();
    let b = (0..n).map(|_| rng.random_range(0..qb)).collect();
    (a, b)
}

#[test]
fn nmi_and_ari_match_direct_formulas() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let (a, b) = random_pair(&mut rng);
        let (fast, slow) = (nmi(&a, &b).unwrap(), direct_nmi(&a, &b));
        assert!((fast - slow).abs() < 1e-12, "nmi {a:?} {b:?}: {fast} vs {slow}");
        let (fast, slow) = (ari(&a, &b).unwrap(), direct_ari(&a, &b));
        assert!((fast - slow).abs() < 1e-12, "ari {a:?} {b:?}: {fast} vs {slow}");
        assert_eq!(ari(&a, &a).unwrap(), 1.0);
    }
}

#[test]
fn agreement_matches_edge_by_edge_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let n = rng.random_range(2..12);
        let edges: Vec<_> = (0..rng.random_range(1..25))
            .map(|_| {
                let a = rng.random_range(0..n);
                let b = (a + rng.random_range(1..n)) % n;
                (a, b, random_label(&mut rng))
            })
            .collect();
        let graph = graph_from(n, &edges);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let agreeing = edges
            .iter()
            .filter(|(a, b, l)| (labels[*a] == labels[*b]) == (*l == EdgeLabel::Positive))
            .count();
        let expected = agreeing as f64 / edges.len() as f64;
        assert!((agreement_score(&graph, &labels).unwrap() - expected).abs() < 1e-15);
    }
}

#[test]
fn single_group_adjusted_agreement_is_exactly_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for seed in 0..20 {
        let n = rng.random_range(2..15);
        let edges: Vec<_> = (0..n - 1).map(|k| (k, k + 1, random_label(&mut rng))).collect();
        let graph = graph_from(n, &edges);
        assert_eq!(adjusted_agreement_score(&graph, &vec![0; n], 50, seed).unwrap(), 0.0);
    }
}

proptest! {
    #[test]
    fn nmi_symmetric_and_bounded(
        pairs in prop::collection::vec((0usize..5, 0usize..5), 1..40)
    ) {
        let (a, b): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let ab = nmi(&a, &b).unwrap();
        prop_assert!((ab - nmi(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&ab));
        prop_assert!(ari(&a, &b).unwrap() <= 1.0 + 1e-12);
    }

    #[test]
    fn renaming_groups_changes_nothing(
        labels in prop::collection::vec(0usize..4, 2..30),
        shift in 1usize..4,
    ) {
        let renamed: Vec<usize> = labels.iter().map(|l| (l + shift) % 4).collect();
        prop_assert!((nmi(&labels, &renamed).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!((ari(&labels, &renamed).unwrap() - 1.0).abs() < 1e-12);
    }
}
