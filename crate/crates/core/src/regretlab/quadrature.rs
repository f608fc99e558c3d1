//! One-dimensional quadrature rules.

use nalgebra::{DMatrix, SymmetricEigen};

/// Trapezoid estimate with a step-halving error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    /// `|I_h − I_2h| / 3`, the leading-order trapezoid error.
    pub error_estimate: f64,
}

/// Composite trapezoid rule for `f` over `[lo, hi]` with step at most `step`.
///
/// The interval is split at every knot strictly inside it, and on each piece
/// the endpoints are evaluated as one-sided limits (nudged inward by 1e-12 of
/// the piece length), so jump discontinuities at knots are integrated exactly.
pub fn trapezoid<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, knots: &[f64], step: f64) -> QuadResult {
    assert!(step > 0.0 && lo <= hi, "invalid quadrature interval");
    let mut cuts: Vec<f64> = knots.iter().copied().filter(|&k| k > lo && k < hi).collect();
    cuts.push(lo);
    cuts.push(hi);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut fine = 0.0;
    let mut coarse = 0.0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = b - a;
        if len <= 0.0 {
            continue;
        }
        let mut n = (len / step).ceil() as usize;
        n = n.max(2);
        n += n % 2;
        let h = len / n as f64;
        let nudge = 1e-12 * len;
        let mut sum_even = 0.0;
        let mut sum_odd = 0.0;
        for i in 1..n {
            let v = f(a + i as f64 * h);
            if i % 2 == 0 {
                sum_even += v;
            } else {
                sum_odd += v;
            }
        }
        let ends = f(a + nudge) + f(b - nudge);
        fine += h * (0.5 * ends + sum_even + sum_odd);
        coarse += 2.0 * h * (0.5 * ends + sum_even);
    }
    QuadResult {
        value: fine,
        error_estimate: (fine - coarse).abs() / 3.0,
    }
}

/// Gauss–Hermite rule for `E[g(Z)]`, `Z ~ N(0, 1)`: nodes and weights summing to 1.
///
/// Golub–Welsch: nodes are the eigenvalues of the Jacobi matrix of the
/// probabilists' Hermite polynomials (off-diagonal `√k`), weights the
/// squared first components of the normalized eigenvectors.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let jacobi = DMatrix::from_fn(n, n, |i, j| if i.abs_diff(j) == 1 { (i.max(j) as f64).sqrt() } else { 0.0 });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // symmetrize away round-off
    for i in 0..n / 2 {
        let x = 0.5 * (pairs[n - 1 - i].0 - pairs[i].0);
        let w = 0.5 * (pairs[i].1 + pairs[n - 1 - i].1);
        pairs[i] = (-x, w);
        pairs[n - 1 - i] = (x, w);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    pairs.into_iter().map(|(x, w)| (x, w / total)).unzip()
}
