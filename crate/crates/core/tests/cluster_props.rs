use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use tsb_core::kmeans::{inertia_of, kmeans_fit, restart_histories, KmeansConfig};
use tsb_core::rng::stream;
use tsb_core::tsne::{kl_divergence, joint_probabilities, tsne_fit, TsneConfig};

pub fn blobs(seed: u64, per: usize, centers: &[[f64; 3]], spread: f64) -> Vec<f64> {
    let mut rng = stream(seed, "blobs", 0);
    let mut out = Vec::new();
    for c in centers {
        for _ in 0..per {
            for x in c {
                out.push(x + spread * rng.sample::<f64, _>(StandardNormal));
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn lloyd_inertia_never_increases(seed in 0u64..1000, k in 1usize..6, spread in 0.1f64..3.0) {
        let data = blobs(seed, 15, &[[0.0, 0.0, 0.0], [4.0, 0.0, 1.0], [0.0, 5.0, -2.0]], spread);
        for h in restart_histories(&data, 45, 3, k, seed, &KmeansConfig::default()).unwrap() {
            for w in h.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{:?}", h);
            }
        }
    }

    #[test]
    fn seeded_permutation_invariant_and_consistent(seed in 0u64..1000, rot in 1usize..44) {
        let data = blobs(seed, 15, &[[0.0, 0.0, 0.0], [9.0, 0.0, 1.0], [0.0, 9.0, -2.0]], 0.5);
        let cfg = KmeansConfig::default();
        let a = kmeans_fit(&data, 45, 3, 3, seed, &cfg).unwrap();
        prop_assert_eq!(&a, &kmeans_fit(&data, 45, 3, 3, seed, &cfg).unwrap());
        prop_assert!((inertia_of(&data, 3, &a.assignments, &a.centroids) - a.inertia).abs() < 1e-9);
        let mut rotated = data.clone();
        rotated.rotate_left(rot * 3);
        let b = kmeans_fit(&rotated, 45, 3, 3, seed, &cfg).unwrap();
        prop_assert!((a.inertia - b.inertia).abs() < 1e-9 * (1.0 + a.inertia));
        // same partition up to relabeling
        for i in 0..45 {
            for j in 0..45 {
                let (ri, rj) = ((i + 45 - rot) % 45, (j + 45 - rot) % 45);
                prop_assert_eq!(a.assignments[i] == a.assignments[j], b.assignments[ri] == b.assignments[rj]);
            }
        }
    }
}

#[test]
fn tsne_layout_is_finite_and_kl_mostly_decreases() {
    let data = blobs(2, 25, &[[0.0, 0.0, 0.0], [6.0, 0.0, 0.0], [0.0, 6.0, 6.0]], 1.0);
    let cfg = TsneConfig { perplexity: 10.0, iterations: 600, seed: 1, ..Default::default() };
    let r = tsne_fit(&data, 75, 3, &cfg).unwrap();
    assert!(r.layout.iter().all(|v| v.is_finite()));
    assert!(r.final_kl() < r.initial_kl);
    let post = &r.kl_history[cfg.exaggeration_iterations..];
    let ok = post.windows(2).filter(|w| w[1] <= w[0] + 1e-12).count();
    assert!(ok as f64 >= 0.9 * (post.len() - 1) as f64, "{ok} of {}", post.len() - 1);
    let p = joint_probabilities(&data, 75, 3, 10.0);
    let shifted: Vec<f64> = r.layout.iter().enumerate().map(|(i, v)| v + if i % 2 == 0 { 3.5 } else { -7.0 }).collect();
    assert!((kl_divergence(&p, &shifted, 75, 2) - kl_divergence(&p, &r.layout, 75, 2)).abs() < 1e-9);
}
