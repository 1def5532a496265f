mod common;

use common::gradcheck::{max_relative_error, random_stay, TOL};
use tsb_core::embed_rnn::{CellKind, LossWeighting, RnnConfig, RnnModel};

#[test]
fn bptt_matches_central_differences() {
    for cell in [CellKind::Gru, CellKind::Lstm] {
        for per_feature in [false, true] {
            for seed in [1, 2, 3] {
                let err = max_relative_error(cell, per_feature, LossWeighting::None, seed);
                assert!(err < TOL, "{cell:?} per_feature={per_feature} seed={seed}: {err:e}");
            }
        }
    }
}

#[test]
fn observed_only_weighting_gradient() {
    for cell in [CellKind::Gru, CellKind::Lstm] {
        let err = max_relative_error(cell, false, LossWeighting::ObservedOnly, 5);
        assert!(err < TOL, "{cell:?}: {err:e}");
    }
}

#[test]
fn hidden_states_stay_bounded() {
    for cell in [CellKind::Gru, CellKind::Lstm] {
        let cfg = RnnConfig { cell, hidden_size: 6, seed: 4, ..Default::default() };
        let mut m = RnnModel::init(&cfg, 3, 2).unwrap();
        m.params.iter_mut().for_each(|p| *p *= 20.0);
        let mut stay = random_stay(30, 3, 2, 8);
        stay.values.iter_mut().for_each(|v| *v *= 100.0);
        let out = m.forward(&stay).unwrap();
        assert!(out.hidden.iter().flatten().all(|h| h.abs() <= 1.0 && h.is_finite()));
    }
}
