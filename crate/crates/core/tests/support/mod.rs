//! Brute-force reference implementations and random instance generators
//! shared by the property tests and the acceptance suite.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxcurate_core::clustering::{ClusterAssignment, DistanceMatrix, NOISE};

/// Reference DBSCAN: neighbourhood counts, transitive closure of the core
/// graph by Warshall's algorithm, border points to the adjacent component
/// with the lowest core index, then size-then-index labelling.
pub fn brute_dbscan(d: &DistanceMatrix, eps: f64, min_pts: usize) -> ClusterAssignment {
    let n = d.len();
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| d.get(i, j) <= eps).count() >= min_pts).collect();
    let mut reach = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            reach[i][j] = core[i] && core[j] && d.get(i, j) <= eps;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    // Representative of a core point: smallest core index reachable from it.
    let rep: Vec<Option<usize>> =
        (0..n).map(|i| if core[i] { (0..n).find(|&j| reach[i][j] || j == i) } else { None }).collect();
    let mut owner: Vec<Option<usize>> = rep.clone();
    for p in 0..n {
        if !core[p] {
            owner[p] = (0..n).filter(|&q| core[q] && d.get(p, q) <= eps).filter_map(|q| rep[q]).min();
        }
    }
    let mut reps: Vec<usize> = owner.iter().flatten().copied().collect();
    reps.sort_unstable();
    reps.dedup();
    let size = |r: usize| owner.iter().filter(|o| **o == Some(r)).count();
    let first = |r: usize| owner.iter().position(|o| *o == Some(r)).unwrap();
    reps.sort_by(|&a, &b| size(b).cmp(&size(a)).then(first(a).cmp(&first(b))));
    let labels = owner
        .iter()
        .map(|o| match o {
            Some(r) => reps.iter().position(|x| x == r).unwrap() as i32,
            None => NOISE,
        })
        .collect();
    ClusterAssignment { labels, core }
}

/// Random symmetric instance: points on a small integer grid so that ties
/// at exactly `eps` occur, with `n` in `1..=max_n`.
pub fn random_instance(rng: &mut ChaCha8Rng, max_n: usize) -> (DistanceMatrix, f64, usize) {
    let n = rng.random_range(1..=max_n);
    let dim = rng.random_range(1..=3);
    let pts: Vec<Vec<f64>> =
        (0..n).map(|_| (0..dim).map(|_| f64::from(rng.random_range(0..12u32))).collect()).collect();
    let d = DistanceMatrix::from_fn(n, |i, j| pts[i].iter().zip(&pts[j]).map(|(a, b)| (a - b).abs()).sum())
        .unwrap();
    let eps = f64::from(rng.random_range(0..8u32));
    let min_pts = rng.random_range(1..=5);
    (d, eps, min_pts)
}

/// Counts errors at threshold `t` (accept when score >= t).
fn rates(tgt: &[f64], non: &[f64], t: f64) -> (f64, f64) {
    let far = non.iter().filter(|&&s| s >= t).count() as f64 / non.len() as f64;
    let frr = tgt.iter().filter(|&&s| s < t).count() as f64 / tgt.len() as f64;
    (far, frr)
}

fn thresholds(tgt: &[f64], non: &[f64]) -> Vec<f64> {
    let mut ts: Vec<f64> = tgt.iter().chain(non).copied().collect();
    ts.push(f64::INFINITY);
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts
}

/// Reference EER in percent: every threshold evaluated by direct counting,
/// linear interpolation at the first sign change of FRR - FAR.
pub fn brute_eer(tgt: &[f64], non: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = thresholds(tgt, non).into_iter().map(|t| rates(tgt, non, t)).collect();
    for k in 0..pts.len() {
        let (far, frr) = pts[k];
        if frr - far >= 0.0 {
            if k == 0 {
                return 100.0 * far;
            }
            let (far0, frr0) = pts[k - 1];
            let (d0, d1) = (frr0 - far0, frr - far);
            return 100.0 * (far0 + (-d0 / (d1 - d0)) * (far - far0));
        }
    }
    unreachable!("FRR - FAR is 1 at +inf")
}

pub fn brute_min_dcf(tgt: &[f64], non: &[f64], p: f64, c_miss: f64, c_fa: f64) -> f64 {
    let norm = (c_miss * p).min(c_fa * (1.0 - p));
    thresholds(tgt, non)
        .into_iter()
        .map(|t| {
            let (far, frr) = rates(tgt, non, t);
            (c_miss * p * frr + c_fa * (1.0 - p) * far) / norm
        })
        .fold(f64::INFINITY, f64::min)
}

/// Random trial scores with frequent ties, both labels present, at most
/// `max_n` trials in total.
pub fn random_scores(rng: &mut ChaCha8Rng, max_n: usize) -> (Vec<f64>, Vec<f64>) {
    let n_tgt = rng.random_range(1..max_n / 2);
    let n_non = rng.random_range(1..=max_n - n_tgt);
    let shift = rng.random_range(0.0..3.0);
    let grid = rng.random_bool(0.5);
    let mut draw = |offset: f64| {
        let x: f64 = rng.random_range(-2.0..2.0) + offset;
        if grid {
            (x * 4.0).round() / 4.0
        } else {
            x
        }
    };
    let tgt = (0..n_tgt).map(|_| draw(shift)).collect();
    let non = (0..n_non).map(|_| draw(0.0)).collect();
    (tgt, non)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
