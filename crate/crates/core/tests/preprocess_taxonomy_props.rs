use proptest::prelude::*;
use tsb_core::cohort::{self, Cohort, Split, StaticValue};
use tsb_core::preprocess::{self, fit_scaler, impute, population_medians, quantile_sorted, transform};
use tsb_core::synth::{generate_cohort, generate_taxonomy, SynthConfig};
use tsb_core::taxonomy::TaxonomyTree;

fn cohort(seed: u64, missing: f64) -> Cohort {
    let config = SynthConfig {
        n_stays: 60,
        n_features: 3,
        n_statics: 2,
        hours: 6,
        branching: [2, 2, 1, 2],
        missing_rate: missing,
        seed,
        ..Default::default()
    };
    let tree = generate_taxonomy(&config).unwrap();
    generate_cohort(&config, &tree).unwrap()
}

fn tree(branching: [usize; 4]) -> TaxonomyTree {
    generate_taxonomy(&SynthConfig { branching, ..Default::default() }).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn scaled_train_has_zero_median_unit_iqr(seed in 0u64..500, missing in 0.0f64..0.5) {
        let c = cohort(seed, missing);
        let split = cohort::split(&c, [0.7, 0.15, 0.15], seed).unwrap();
        let scaler = fit_scaler(&c, &split).unwrap();
        let scaled = transform(&c, &scaler).unwrap();
        let f = c.n_features();
        for j in 0..f {
            let mut v: Vec<f64> = scaled
                .stays
                .iter()
                .filter(|s| split.get(&s.stay_id) == Some(Split::Train))
                .flat_map(|s| (0..s.hours).filter_map(move |t| s.cell(t, j)))
                .collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            prop_assert!(quantile_sorted(&v, 0.5).abs() < 1e-9);
            if scaler.features[j].iqr > 0.0 {
                prop_assert!((quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25) - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn impute_keeps_observed_and_is_idempotent(seed in 0u64..500, missing in 0.0f64..0.8) {
        let c = cohort(seed, missing);
        let split = cohort::split(&c, [0.7, 0.15, 0.15], seed).unwrap();
        let medians = population_medians(&c, &split).unwrap();
        let once = impute(&c, &medians);
        for (s, i) in c.stays.iter().zip(&once) {
            for (k, cell) in s.cells.iter().enumerate() {
                if let Some(v) = cell {
                    prop_assert_eq!(*v, i.values[k]);
                    prop_assert!(!i.was_imputed[k]);
                }
            }
        }
        let mut filled = c.clone();
        for (s, i) in filled.stays.iter_mut().zip(&once) {
            s.cells = i.values.iter().map(|&v| Some(v)).collect();
            s.statics = i.statics.clone();
        }
        let twice = impute(&filled, &medians);
        for (a, b) in once.iter().zip(&twice) {
            prop_assert_eq!(&a.values, &b.values);
            prop_assert_eq!(&a.statics, &b.statics);
        }
        let (prepared, params) = preprocess::prepare(&c, &split, &Default::default()).unwrap();
        prop_assert_eq!(preprocess::apply(&c, &params).unwrap(), prepared);
    }

    #[test]
    fn taxonomy_projection_laws(b in prop::array::uniform4(1usize..4)) {
        let t = tree(b);
        prop_assert_eq!(t.edges().len(), t.vertex_count() - t.codes_at_level(1).len());
        for level in 2..=4u8 {
            let upper = t.codes_at_level(level - 1);
            for c in t.codes_at_level(level) {
                prop_assert!(upper.contains(t.ancestor_at_level(c, level - 1).unwrap()));
                let via = t.ancestor_at_level(t.ancestor_at_level(c, 2).unwrap(), 1).unwrap();
                prop_assert_eq!(t.ancestor_at_level(c, 1).unwrap(), via);
            }
        }
        let back = TaxonomyTree::from_tsv(&t.to_tsv()).unwrap();
        prop_assert_eq!(back.vertex_count(), t.vertex_count());
    }
}

#[test]
fn missing_numeric_static_takes_train_median() {
    let mut c = cohort(1, 0.1);
    c.stays[0].statics[0] = StaticValue::Missing;
    let split = cohort::split(&c, [1.0, 0.0, 0.0], 0).unwrap();
    let (prepared, params) = preprocess::prepare(&c, &split, &Default::default()).unwrap();
    // medians live in the scaled domain
    let median = params.medians.statics[0].unwrap();
    assert_eq!(prepared.stays[0].statics[0], median);
}
