use proptest::prelude::*;
use tsb_core::cohort::{self, resample_to_hours, Cohort, CohortConfig, RawObservation, Split};
use tsb_core::kmeans::{kmeans_fit, KmeansConfig};
use tsb_core::metrics::v_measure;
use tsb_core::synth::{generate_cohort, generate_taxonomy, leaf_probabilities, SynthConfig};

fn small(seed: u64, n_stays: usize) -> SynthConfig {
    SynthConfig { n_stays, n_features: 3, n_statics: 2, hours: 5, branching: [2, 2, 2, 2], seed, ..Default::default() }
}

fn generated(config: &SynthConfig) -> Cohort {
    let tree = generate_taxonomy(config).unwrap();
    generate_cohort(config, &tree).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn csv_round_trip(seed in 0u64..1000, missing in 0.0f64..0.9) {
        let config = SynthConfig { missing_rate: missing, ..small(seed, 12) };
        let c = generated(&config);
        let (ts, st, lb) = c.to_csv_text();
        let back = Cohort::from_csv_text(&ts, &st, &lb, &CohortConfig::default()).unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn split_is_a_pure_function_of_id_and_seed(seed in 0u64..1000) {
        let c = generated(&small(seed, 150));
        let a = cohort::split(&c, [0.7, 0.15, 0.15], seed).unwrap();
        let b = cohort::split(&c, [0.7, 0.15, 0.15], seed).unwrap();
        prop_assert_eq!(&a, &b);
        let mut reversed = c.clone();
        reversed.stays.reverse();
        let r = cohort::split(&reversed, [0.7, 0.15, 0.15], seed).unwrap();
        for s in &c.stays {
            prop_assert_eq!(a.get(&s.stay_id), r.get(&s.stay_id));
        }
        let other = cohort::split(&c, [0.7, 0.15, 0.15], seed + 1).unwrap();
        prop_assert!(c.stays.iter().any(|s| a.get(&s.stay_id) != other.get(&s.stay_id)));
        prop_assert_eq!(a.count(Split::Train) + a.count(Split::Val) + a.count(Split::Test), 150);
    }

    #[test]
    fn resampled_rows_are_hourly_means(
        rows in prop::collection::vec((0u8..3, 0.0f64..300.0, 0u8..2, prop::option::of(-5.0f64..5.0)), 1..40)
    ) {
        let raw: Vec<RawObservation> = rows
            .iter()
            .map(|&(s, m, f, v)| RawObservation { stay_id: format!("s{s}"), minute: m, feature: format!("f{f}"), value: v })
            .collect();
        let hourly = resample_to_hours(&raw).unwrap();
        for h in &hourly {
            let members: Vec<f64> = raw
                .iter()
                .filter(|r| r.stay_id == h.stay_id && r.feature == h.feature && (r.minute / 60.0).floor() as u64 == h.hour)
                .filter_map(|r| r.value)
                .collect();
            match h.value {
                Some(v) => prop_assert!((v - members.iter().sum::<f64>() / members.len() as f64).abs() < 1e-12),
                None => prop_assert!(members.is_empty()),
            }
        }
        let mut keys: Vec<_> = hourly.iter().map(|h| (&h.stay_id, h.hour, &h.feature)).collect();
        let n = keys.len();
        keys.sort();
        keys.dedup();
        prop_assert_eq!(keys.len(), n);
    }
}

#[test]
fn split_fractions_are_binomially_close() {
    let c = generated(&small(3, 2000));
    let a = cohort::split(&c, [0.7, 0.15, 0.15], 9).unwrap();
    for (which, p) in [(Split::Train, 0.7), (Split::Val, 0.15), (Split::Test, 0.15)] {
        let sd = (2000.0f64 * p * (1.0 - p)).sqrt();
        assert!((a.count(which) as f64 - 2000.0 * p).abs() < 3.0 * sd, "{which:?}");
    }
}

#[test]
fn empirical_missingness_matches_rate() {
    for rate in [0.0, 0.1, 0.4] {
        let c = generated(&SynthConfig { missing_rate: rate, hours: 12, ..small(5, 600) });
        let cells: Vec<bool> = c.stays.iter().flat_map(|s| s.cells.iter().map(Option::is_none)).collect();
        let observed = cells.iter().filter(|&&m| m).count() as f64 / cells.len() as f64;
        assert!((observed - rate).abs() <= 0.02, "rate {rate}: {observed}");
    }
}

#[test]
fn leaf_frequencies_are_long_tailed() {
    let config = SynthConfig::default();
    let mut p = leaf_probabilities(&config, 54);
    p.sort_by(|a, b| b.partial_cmp(a).unwrap());
    assert!(p.windows(2).all(|w| w[0] >= w[1]));
    assert!(p[0] / p[53] > 50.0);
    let c = generated(&SynthConfig { n_stays: 2000, hours: 2, ..config });
    let mut counts = std::collections::BTreeMap::new();
    for s in &c.stays {
        *counts.entry(&s.label_code).or_insert(0usize) += 1;
    }
    let max = *counts.values().max().unwrap();
    assert!(max as f64 > 2000.0 / 54.0 * 4.0);
}

fn stay_means(c: &Cohort) -> Vec<Vec<f64>> {
    let f = c.n_features();
    c.stays
        .iter()
        .map(|s| {
            (0..f)
                .map(|j| {
                    let v: Vec<f64> = (0..s.hours).filter_map(|t| s.cell(t, j)).collect();
                    v.iter().sum::<f64>() / v.len().max(1) as f64
                })
                .collect()
        })
        .collect()
}

#[test]
fn chapter_pairs_are_farther_apart_than_leaf_pairs() {
    let config = SynthConfig { n_stays: 400, ..SynthConfig::strong_signal() };
    let c = generated(&config);
    let means = stay_means(&c);
    let chapter = |s: &str| s.split('.').next().unwrap().to_string();
    let (mut cross, mut nc, mut within, mut nw) = (0.0, 0, 0.0, 0);
    for i in 0..means.len() {
        for j in i + 1..means.len() {
            let d: f64 = means[i].iter().zip(&means[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let (a, b) = (&c.stays[i].label_code, &c.stays[j].label_code);
            if chapter(a) != chapter(b) {
                cross += d;
                nc += 1;
            } else if a != b {
                within += d;
                nw += 1;
            }
        }
    }
    assert!(cross / nc as f64 > within / nw as f64);
}

#[test]
fn chapter_only_signal_is_recoverable() {
    let config = SynthConfig { n_stays: 600, signal_strengths: [6.0, 0.0, 0.0, 0.0], ..SynthConfig::default() };
    let c = generated(&config);
    let means = stay_means(&c);
    let data: Vec<f64> = means.iter().flatten().copied().collect();
    let fit = kmeans_fit(&data, means.len(), config.n_features, 3, 0, &KmeansConfig::default()).unwrap();
    let truth: Vec<&str> = c.stays.iter().map(|s| s.label_code.split('.').next().unwrap()).collect();
    assert!(v_measure(&truth, &fit.assignments).unwrap().v > 0.95);
}
