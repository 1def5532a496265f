use rand::Rng;
use tsb_core::embed_rnn::{CellKind, LossWeighting, RnnConfig, RnnModel};
use tsb_core::preprocess::PreparedStay;
use tsb_core::rng::stream;

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub fn random_stay(hours: usize, f: usize, s: usize, seed: u64) -> PreparedStay {
    let mut rng = stream(seed, "gradcheck-stay", 0);
    PreparedStay {
        stay_id: format!("g{seed}"),
        label_code: "X".into(),
        hours,
        values: (0..hours * f).map(|_| rng.random_range(-2.0..2.0)).collect(),
        observed: (0..hours * f).map(|_| rng.random_bool(0.6)).collect(),
        statics: (0..s).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

/// Largest relative error between the analytic gradient and central
/// differences over every parameter, with biases randomized so every
/// tensor is exercised.
pub fn max_relative_error(cell: CellKind, per_feature: bool, weighting: LossWeighting, seed: u64) -> f64 {
    let cfg = RnnConfig { cell, hidden_size: 5, per_feature, per_feature_hidden: 3, seed, ..Default::default() };
    let mut model = RnnModel::init(&cfg, 3, 2).unwrap();
    let mut rng = stream(seed, "gradcheck-params", 0);
    for p in &mut model.params {
        *p = rng.random_range(-0.8..0.8);
    }
    let stay = random_stay(4, 3, 2, seed);
    let (_, grad) = model.stay_loss_grad(&stay, weighting).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..model.params.len() {
        let orig = model.params[k];
        model.params[k] = orig + EPS;
        let up = model.stay_loss(&stay, weighting).unwrap();
        model.params[k] = orig - EPS;
        let down = model.stay_loss(&stay, weighting).unwrap();
        model.params[k] = orig;
        let numeric = (up - down) / (2.0 * EPS);
        let denom = grad[k].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((grad[k] - numeric).abs() / denom);
    }
    worst
}
