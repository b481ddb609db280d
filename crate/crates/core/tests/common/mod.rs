//! Reference implementations for the oracle tests. Each one takes the slow, obvious
//! route: exact rationals, full enumeration, or a generic first-order QP method.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, ToPrimitive, Zero};

fn binomial(n: u64, k: u64) -> BigInt {
    let mut acc = BigInt::one();
    for i in 0..k {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

/// Two-sided Fisher p by exact enumeration of every table with the observed margins.
/// Tables count as extreme when their probability is at most the observed one times
/// `1 + 1e-7`, the usual allowance for floating ties.
pub fn fisher_p_reference(a: u64, b: u64, c: u64, d: u64) -> f64 {
    let (r1, r2, c1) = (a + b, c + d, a + c);
    let lo = c1.saturating_sub(r2);
    let hi = r1.min(c1);
    let weight = |x: u64| binomial(r1, x) * binomial(r2, c1 - x);
    let observed = BigRational::from_integer(weight(a));
    let slack = BigRational::one() + BigRational::new(BigInt::one(), BigInt::from(10_000_000u64));
    let cutoff = observed * slack;
    let mut total = BigInt::zero();
    let mut extreme = BigInt::zero();
    for x in lo..=hi {
        let w = weight(x);
        if BigRational::from_integer(w.clone()) <= cutoff {
            extreme += &w;
        }
        total += w;
    }
    BigRational::new(extreme, total).to_f64().unwrap()
}

/// Exact two-sided Mann-Whitney p for tie-free samples: every split of the pooled
/// ranks into groups of the observed sizes is enumerated.
pub fn mann_whitney_p_reference(xs: &[f64], ys: &[f64]) -> f64 {
    let m = xs.len();
    let n = m + ys.len();
    assert!(n <= 20);
    let mut pooled: Vec<(f64, bool)> = xs.iter().map(|&v| (v, true)).chain(ys.iter().map(|&v| (v, false))).collect();
    pooled.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
    let observed: usize = pooled.iter().enumerate().filter(|(_, p)| p.1).map(|(r, _)| r + 1).sum();
    let (mut le, mut ge, mut total) = (0u64, 0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != m {
            continue;
        }
        let rank_sum: usize = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| i + 1).sum();
        total += 1;
        le += (rank_sum <= observed) as u64;
        ge += (rank_sum >= observed) as u64;
    }
    (2.0 * le.min(ge) as f64 / total as f64).min(1.0)
}

/// `sum a - 1/2 a'Qa` with `Q_ij = y_i y_j K_ij`.
pub fn dual_objective(k: &[Vec<f64>], y: &[f64], alpha: &[f64]) -> f64 {
    let n = y.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += alpha[i] * alpha[j] * y[i] * y[j] * k[i][j];
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

/// Euclidean projection onto `{0 <= a <= c, y'a = 0}` by bisection on the multiplier.
pub fn project(v: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let at = |lambda: f64| -> Vec<f64> {
        v.iter().zip(y).map(|(vi, yi)| (vi - lambda * yi).clamp(0.0, c)).collect()
    };
    let balance = |a: &[f64]| a.iter().zip(y).map(|(ai, yi)| ai * yi).sum::<f64>();
    let span = v.iter().fold(0.0f64, |m, x| m.max(x.abs())) + c + 1.0;
    let (mut lo, mut hi) = (-span, span);
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if balance(&at(mid)) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

/// Accelerated projected gradient with function-value restarts on the SVM dual.
pub fn qp_reference(k: &[Vec<f64>], y: &[f64], c: f64, iterations: usize) -> Vec<f64> {
    let n = y.len();
    let q: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| y[i] * y[j] * k[i][j]).collect()).collect();
    let lipschitz = q.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max).max(1e-12);
    let f = |a: &[f64]| -dual_objective(k, y, a);
    let mut x = vec![0.0; n];
    let mut z = x.clone();
    let mut t = 1.0f64;
    let mut fx = f(&x);
    let mut still = 0;
    for _ in 0..iterations {
        let step: Vec<f64> = (0..n)
            .map(|i| z[i] - ((0..n).map(|j| q[i][j] * z[j]).sum::<f64>() - 1.0) / lipschitz)
            .collect();
        let next = project(&step, y, c);
        let fnext = f(&next);
        if fnext > fx {
            z = x.clone();
            t = 1.0;
            continue;
        }
        let moved = next.iter().zip(&x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        still = if moved <= 1e-14 * c.max(1.0) { still + 1 } else { 0 };
        if still >= 20 {
            return next;
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        z = (0..n).map(|i| next[i] + (t - 1.0) / t_next * (next[i] - x[i])).collect();
        x = next;
        fx = fnext;
        t = t_next;
    }
    x
}

/// Elbow of integer-valued curves by exact arithmetic. Returns the last position when
/// every point lies on the chord.
pub fn elbow_reference_exact(values: &[i64]) -> usize {
    let n = values.len();
    let (x1, y1) = (0i128, values[0] as i128);
    let (xn, yn) = ((n - 1) as i128, values[n - 1] as i128);
    let mut best = 0;
    let mut best_cross = -1i128;
    for (i, &v) in values.iter().enumerate() {
        // twice the triangle area spanned with the chord
        let cross = ((xn - x1) * (v as i128 - y1) - (yn - y1) * (i as i128 - x1)).abs();
        if cross > best_cross {
            best_cross = cross;
            best = i;
        }
    }
    if best_cross == 0 {
        n - 1
    } else {
        best
    }
}

/// Elbow of real-valued curves: distance from each point to its orthogonal projection
/// on the chord.
pub fn elbow_reference(values: &[f64]) -> usize {
    let n = values.len();
    let (ux, uy) = ((n - 1) as f64, values[n - 1] - values[0]);
    let len = (ux * ux + uy * uy).sqrt();
    let (ux, uy) = (ux / len, uy / len);
    let mut best = 0;
    let mut best_dist = -1.0;
    for (i, &v) in values.iter().enumerate() {
        let (wx, wy) = (i as f64, v - values[0]);
        let along = wx * ux + wy * uy;
        let (px, py) = (wx - along * ux, wy - along * uy);
        let dist = (px * px + py * py).sqrt();
        if dist > best_dist {
            best_dist = dist;
            best = i;
        }
    }
    let range = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - values.iter().cloned().fold(f64::INFINITY, f64::min);
    if best_dist <= 1e-12 * range {
        n - 1
    } else {
        best
    }
}

/// Path of a shared fixture; works from either crate of the workspace.
pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}
