//! Independent oracles for the integration suites.
//!
//! Everything here recomputes results along a different route than the
//! library: eigenvalue counting instead of Jacobi rotations, raw
//! exponentials instead of softmax probabilities, reverse-order sums
//! instead of forward ones. The oracles stay deliberately naive — their
//! job is to disagree loudly when the fast path is wrong.

// each test target compiles this module but uses only some oracles
#![allow(dead_code)]
#![allow(clippy::needless_range_loop)]

use weightedkv::numerics::Mat;
use weightedkv::rng::SplitMix64;

/// Singular values of `m` computed through the Gram matrix: bisection on
/// the eigenvalue-counting function obtained from the inertia of
/// `G - x I` (Sylvester's law via unpivoted elimination).
pub fn gram_singular_values(m: &Mat) -> Vec<f64> {
    let work = if m.rows() >= m.cols() { m.clone() } else { m.transpose() };
    let n = work.cols();
    // G = M^T M, dense symmetric
    let mut g = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut sum = 0.0;
            for r in 0..work.rows() {
                sum += work.row(r)[i] * work.row(r)[j];
            }
            g[i][j] = sum;
        }
    }
    // Gershgorin bound on the spectrum
    let radius = g
        .iter()
        .map(|row| row.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut eigenvalues: Vec<f64> =
        (0..n).map(|k| kth_smallest_eigenvalue(&g, k, radius)).collect();
    eigenvalues.reverse();
    eigenvalues.into_iter().map(|l| l.max(0.0).sqrt()).collect()
}

/// Number of eigenvalues of `g` strictly below `x`: negative pivots of the
/// unpivoted elimination of `g - x I`.
fn eigen_count_below(g: &[Vec<f64>], x: f64) -> usize {
    let n = g.len();
    let mut a = g.to_vec();
    for (i, row) in a.iter_mut().enumerate() {
        row[i] -= x;
    }
    let mut negatives = 0;
    for k in 0..n {
        let pivot = a[k][k];
        if pivot < 0.0 {
            negatives += 1;
        }
        // nudge exact-zero pivots; bisection never needs exact hits
        let p = if pivot == 0.0 { 1e-300 } else { pivot };
        for i in (k + 1)..n {
            let f = a[i][k] / p;
            if f == 0.0 {
                continue;
            }
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
        }
    }
    negatives
}

fn kth_smallest_eigenvalue(g: &[Vec<f64>], k: usize, radius: f64) -> f64 {
    let mut lo = -radius - 1.0;
    let mut hi = radius + 1.0;
    for _ in 0..140 {
        let mid = 0.5 * (lo + hi);
        if eigen_count_below(g, mid) > k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Scaled-dot-product attention output evaluated directly, with sums taken
/// in reverse index order so the arithmetic path differs from the engine's.
pub fn brute_force_attention(query: &[f64], keys: &[Vec<f64>], values: &[Vec<f64>]) -> Vec<f64> {
    let d = query.len();
    let scale = 1.0 / (d as f64).sqrt();
    let logits: Vec<f64> = keys
        .iter()
        .map(|k| {
            let mut dot = 0.0;
            for i in (0..d).rev() {
                dot += query[i] * k[i];
            }
            dot * scale
        })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for l in logits.iter().rev() {
        total += (l - max).exp();
    }
    let width = values[0].len();
    let mut out = vec![0.0; width];
    for t in (0..values.len()).rev() {
        let w = (logits[t] - max).exp() / total;
        for c in 0..width {
            out[c] += w * values[t][c];
        }
    }
    out
}

/// The exact substitution value evaluated term by term from its displayed
/// closed form, using raw exponentials `e_i = exp(q.k_i / sqrt d)`:
///
/// `(1 - e_1/S) (e_1/e_2 v_1 + v_2) - (e_1/e_2) / S * sum_{i>=3} e_i v_i`
///
/// with `S = sum_i e_i`, all sums in reverse order. Valid for the modest
/// logit ranges the tests draw.
pub fn ideal_merge_direct(query: &[f64], keys: &[Vec<f64>], values: &[Vec<f64>]) -> Vec<f64> {
    let d = query.len();
    let scale = 1.0 / (d as f64).sqrt();
    let exps: Vec<f64> = keys
        .iter()
        .map(|k| {
            let mut dot = 0.0;
            for i in 0..d {
                dot += query[i] * k[i];
            }
            (dot * scale).exp()
        })
        .collect();
    let mut total = 0.0;
    for e in exps.iter().rev() {
        total += e;
    }
    let ratio = exps[0] / exps[1];
    let lead = 1.0 - exps[0] / total;
    let width = values[0].len();
    let mut out = vec![0.0; width];
    for c in 0..width {
        out[c] = lead * (ratio * values[0][c] + values[1][c]);
    }
    for t in (2..values.len()).rev() {
        for c in 0..width {
            out[c] -= ratio / total * exps[t] * values[t][c];
        }
    }
    out
}

/// P(X >= wins) for X ~ Binomial(n, 1/2); the one-sided sign test p-value.
pub fn binomial_tail(n: u64, wins: u64) -> f64 {
    let mut coefficient = 1.0; // C(n, 0)
    let mut tail = 0.0;
    let mut total = 0.0;
    for k in 0..=n {
        if k >= wins {
            tail += coefficient;
        }
        total += coefficient;
        coefficient = coefficient * (n - k) as f64 / (k + 1) as f64;
    }
    tail / total
}

pub fn gaussian_rows(rng: &mut SplitMix64, count: usize, d: usize) -> Vec<Vec<f64>> {
    (0..count).map(|_| rng.gaussian_vec(d)).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
