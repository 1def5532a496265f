mod common;

use std::collections::BTreeMap;

use common::oracle::{self, Table};
use tsb_core::metrics::{self, ContingencyTable};

const TOL: f64 = 1e-9;

fn majority_labels(t: &Table) -> BTreeMap<usize, usize> {
    (0..t.cells[0].len())
        .map(|j| {
            let best = (0..t.cells.len()).max_by(|&a, &b| t.cells[a][j].cmp(&t.cells[b][j]).then(b.cmp(&a))).unwrap();
            (j, best)
        })
        .collect()
}

fn check(t: &Table) {
    let (truth, pred) = t.labels();
    let v = metrics::v_measure(&truth, &pred).unwrap();
    let (h, c, vv) = oracle::v_measure(t);
    assert!((v.homogeneity - h).abs() < TOL, "h {} vs {h} for {:?}", v.homogeneity, t.cells);
    assert!((v.completeness - c).abs() < TOL, "c {} vs {c}", v.completeness);
    assert!((v.v - vv).abs() < TOL);
    let a = metrics::ami(&truth, &pred).unwrap();
    assert!((a - oracle::ami(t)).abs() < TOL, "ami {a} vs {} for {:?}", oracle::ami(t), t.cells);
    let labels = majority_labels(t);
    let predicted = metrics::predict_from_cluster_labels(&pred, &labels).unwrap();
    let acc = metrics::accuracy(&truth, &predicted).unwrap();
    assert!((acc - oracle::majority_accuracy(t)).abs() < TOL);
}

#[test]
fn twenty_random_tables() {
    for i in 0..20 {
        check(&oracle::random_table(2024, i));
    }
}

#[test]
fn two_by_two_table() {
    let t = Table { cells: vec![vec![2, 1], vec![1, 2]] };
    check(&t);
    let emi_nats = ContingencyTable::from_counts(t.cells.clone()).expected_mutual_information();
    assert!((emi_nats / 2f64.ln() - oracle::expected_mi(&t)).abs() < TOL);
}

#[test]
fn hypergeometric_sum_matches_permutation_average() {
    for cells in [vec![vec![2, 1], vec![1, 2]], vec![vec![3, 0, 1], vec![1, 2, 1]], vec![vec![1, 1], vec![0, 2], vec![2, 0]]] {
        let t = Table { cells };
        let perm = oracle::expected_mi_by_permutation(&t);
        assert!((oracle::expected_mi(&t) - perm).abs() < 1e-12);
        let lib = ContingencyTable::from_counts(t.cells.clone()).expected_mutual_information() / 2f64.ln();
        assert!((lib - perm).abs() < TOL);
    }
}

#[test]
fn ami_near_zero_for_random_clustering() {
    use rand::Rng;
    let mut rng = tsb_core::rng::stream(11, "ami-chance", 0);
    let truth: Vec<u8> = (0..2000).map(|i| (i % 2) as u8).collect();
    let pred: Vec<u8> = (0..2000).map(|_| rng.random_range(0..2)).collect();
    assert!(metrics::ami(&truth, &pred).unwrap().abs() < 0.05);
}
