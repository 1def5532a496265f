//! Brute-force references for the clustering metrics, written directly from
//! the definitions and sharing no code with the library.

use rand::Rng;
use tsb_core::rng::stream;

fn h(counts: &[f64], n: f64) -> f64 {
    counts.iter().filter(|&&c| c > 0.0).map(|&c| -(c / n) * (c / n).log2()).sum()
}

pub struct Table {
    pub cells: Vec<Vec<u64>>,
}

impl Table {
    pub fn rows(&self) -> Vec<f64> {
        self.cells.iter().map(|r| r.iter().sum::<u64>() as f64).collect()
    }

    pub fn cols(&self) -> Vec<f64> {
        (0..self.cells[0].len()).map(|j| self.cells.iter().map(|r| r[j]).sum::<u64>() as f64).collect()
    }

    pub fn n(&self) -> f64 {
        self.rows().iter().sum()
    }

    /// Expands the table into per-sample (class, cluster) labels.
    pub fn labels(&self) -> (Vec<usize>, Vec<usize>) {
        let mut t = Vec::new();
        let mut p = Vec::new();
        for (i, r) in self.cells.iter().enumerate() {
            for (j, &c) in r.iter().enumerate() {
                for _ in 0..c {
                    t.push(i);
                    p.push(j);
                }
            }
        }
        (t, p)
    }
}

/// Conditional entropy H(A|B) in bits computed column by column.
fn conditional(cells: &[Vec<u64>], by_cols: bool) -> f64 {
    let n: u64 = cells.iter().flatten().sum();
    let (outer, inner) = if by_cols { (cells[0].len(), cells.len()) } else { (cells.len(), cells[0].len()) };
    let mut total = 0.0;
    for o in 0..outer {
        let group: Vec<f64> =
            (0..inner).map(|i| if by_cols { cells[i][o] } else { cells[o][i] } as f64).collect();
        let size: f64 = group.iter().sum();
        if size > 0.0 {
            total += size / n as f64 * h(&group, size);
        }
    }
    total
}

/// (homogeneity, completeness, v) from the conditional-entropy definitions.
pub fn v_measure(t: &Table) -> (f64, f64, f64) {
    let n = t.n();
    let hc = h(&t.rows(), n);
    let hk = h(&t.cols(), n);
    let hom = if hc == 0.0 { 1.0 } else { 1.0 - conditional(&t.cells, true) / hc };
    let com = if hk == 0.0 { 1.0 } else { 1.0 - conditional(&t.cells, false) / hk };
    let v = if hom + com == 0.0 { 0.0 } else { 2.0 * hom * com / (hom + com) };
    (hom, com, v)
}

fn mi_bits(cells: &[Vec<u64>]) -> f64 {
    let n: f64 = cells.iter().flatten().sum::<u64>() as f64;
    let rows: Vec<f64> = cells.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    let cols: Vec<f64> = (0..cells[0].len()).map(|j| cells.iter().map(|r| r[j]).sum::<u64>() as f64).collect();
    let mut mi = 0.0;
    for (i, r) in cells.iter().enumerate() {
        for (j, &c) in r.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (n * c / (rows[i] * cols[j])).log2();
            }
        }
    }
    mi
}

fn factorial(k: u64) -> f64 {
    (1..=k).map(|x| x as f64).product()
}

/// Every non-negative integer table with the given margins.
fn enumerate(rows: &[u64], cols: &[u64]) -> Vec<Vec<Vec<u64>>> {
    fn rec(i: usize, rows: &[u64], cols_left: Vec<u64>, acc: &mut Vec<Vec<u64>>, out: &mut Vec<Vec<Vec<u64>>>) {
        if i == rows.len() {
            if cols_left.iter().all(|&c| c == 0) {
                out.push(acc.clone());
            }
            return;
        }
        let mut row = vec![0u64; cols_left.len()];
        fill(0, rows[i], &cols_left, &mut row, &mut |r| {
            let left: Vec<u64> = cols_left.iter().zip(r).map(|(c, x)| c - x).collect();
            acc.push(r.to_vec());
            rec(i + 1, rows, left, acc, out);
            acc.pop();
        });
    }
    fn fill(j: usize, remaining: u64, caps: &[u64], row: &mut Vec<u64>, f: &mut dyn FnMut(&[u64])) {
        if j == caps.len() - 1 {
            if remaining <= caps[j] {
                row[j] = remaining;
                f(row);
            }
            return;
        }
        for x in 0..=remaining.min(caps[j]) {
            row[j] = x;
            fill(j + 1, remaining - x, caps, row, f);
        }
    }
    let mut out = Vec::new();
    rec(0, rows, cols.to_vec(), &mut Vec::new(), &mut out);
    out
}

/// E[MI] in bits: sum over all tables with these margins, weighted by the
/// multivariate hypergeometric probability Π a_i! Π b_j! / (n! Π n_ij!).
pub fn expected_mi(t: &Table) -> f64 {
    let rows: Vec<u64> = t.cells.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<u64> = (0..t.cells[0].len()).map(|j| t.cells.iter().map(|r| r[j]).sum()).collect();
    let n: u64 = rows.iter().sum();
    let numer: f64 = rows.iter().chain(&cols).map(|&x| factorial(x)).product();
    let mut emi = 0.0;
    let mut mass = 0.0;
    for table in enumerate(&rows, &cols) {
        let denom: f64 = factorial(n) * table.iter().flatten().map(|&x| factorial(x)).product::<f64>();
        let p = numer / denom;
        mass += p;
        emi += p * mi_bits(&table);
    }
    assert!((mass - 1.0).abs() < 1e-9, "probabilities sum to {mass}");
    emi
}

/// E[MI] in bits by averaging over every permutation of the cluster labels.
pub fn expected_mi_by_permutation(t: &Table) -> f64 {
    let (truth, pred) = t.labels();
    let r = t.cells.len();
    let c = t.cells[0].len();
    let mut perm = pred.clone();
    let mut total = 0.0;
    let mut count = 0.0;
    heap_permute(&mut perm, pred.len(), &mut |p| {
        let mut cells = vec![vec![0u64; c]; r];
        for (&a, &b) in truth.iter().zip(p) {
            cells[a][b] += 1;
        }
        total += mi_bits(&cells);
        count += 1.0;
    });
    total / count
}

fn heap_permute(v: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
    if k <= 1 {
        f(v);
        return;
    }
    for i in 0..k - 1 {
        heap_permute(v, k - 1, f);
        if k % 2 == 0 {
            v.swap(i, k - 1);
        } else {
            v.swap(0, k - 1);
        }
    }
    heap_permute(v, k - 1, f);
}

/// AMI with the arithmetic-mean normalizer, in bits.
pub fn ami(t: &Table) -> f64 {
    let n = t.n();
    let rows = t.rows();
    let cols = t.cols();
    let identical = rows.len() == cols.len()
        && t.cells.iter().all(|r| r.iter().filter(|&&x| x > 0).count() == 1)
        && (0..cols.len()).all(|j| t.cells.iter().filter(|r| r[j] > 0).count() == 1);
    if identical {
        return 1.0;
    }
    let emi = expected_mi(t);
    let denom = 0.5 * (h(&rows, n) + h(&cols, n)) - emi;
    if denom.abs() < 1e-15 {
        return 0.0;
    }
    (mi_bits(&t.cells) - emi) / denom
}

/// Accuracy when each cluster predicts its most frequent class.
pub fn majority_accuracy(t: &Table) -> f64 {
    let hits: u64 = (0..t.cells[0].len()).map(|j| t.cells.iter().map(|r| r[j]).max().unwrap()).sum();
    hits as f64 / t.n()
}

/// A random table with n ≤ 12, r, c ≤ 4 and no empty row or column.
pub fn random_table(seed: u64, index: u64) -> Table {
    let mut rng = stream(seed, "oracle-table", index);
    loop {
        let r = rng.random_range(1..=4);
        let c = rng.random_range(1..=4);
        let n = rng.random_range(2..=12u64);
        let mut cells = vec![vec![0u64; c]; r];
        for _ in 0..n {
            cells[rng.random_range(0..r)][rng.random_range(0..c)] += 1;
        }
        let t = Table { cells };
        if t.rows().iter().all(|&x| x > 0.0) && t.cols().iter().all(|&x| x > 0.0) {
            return t;
        }
    }
}
