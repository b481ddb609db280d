//! Two-group tests used to characterize flagged samples.
//!
//! Fisher's exact test (with the conditional maximum-likelihood odds ratio),
//! the 2x2 chi-square test with Yates' correction, and the Mann-Whitney U test.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::serde_ext;

/// Relative slack used when collecting tables "at least as extreme" as the
/// observed one, so that floating-point ties count as ties.
const FISHER_TIE_SLACK: f64 = 1e-7;

/// 2x2 counts. Rows are {has value, other values}, columns are
/// {anomalous group, origin group}:
///
/// ```text
///            anomalous  origin
/// value          a         b
/// other          c         d
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contingency2x2 {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl Contingency2x2 {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        Self { a, b, c, d }
    }

    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }

    pub fn min_cell(&self) -> u64 {
        self.a.min(self.b).min(self.c).min(self.d)
    }

    /// Swap the two rows.
    pub fn swap_rows(&self) -> Self {
        Self::new(self.c, self.d, self.a, self.b)
    }

    /// Swap the two columns.
    pub fn swap_cols(&self) -> Self {
        Self::new(self.b, self.a, self.d, self.c)
    }

    pub fn transpose(&self) -> Self {
        Self::new(self.a, self.c, self.b, self.d)
    }

    fn expected(&self) -> [f64; 4] {
        let n = self.total() as f64;
        let r1 = (self.a + self.b) as f64;
        let r2 = (self.c + self.d) as f64;
        let c1 = (self.a + self.c) as f64;
        let c2 = (self.b + self.d) as f64;
        [r1 * c1 / n, r1 * c2 / n, r2 * c1 / n, r2 * c2 / n]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestMethod {
    Fisher,
    ChiSquare,
    MannWhitney,
}

impl std::fmt::Display for TestMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TestMethod::Fisher => "Fisher exact",
            TestMethod::ChiSquare => "Chi-square",
            TestMethod::MannWhitney => "Mann-Whitney",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    OddsRatio(#[serde(with = "serde_ext::f64_ext")] f64),
    Means { first: f64, second: f64 },
}

impl Effect {
    pub fn odds_ratio(&self) -> Option<f64> {
        match *self {
            Effect::OddsRatio(or) => Some(or),
            Effect::Means { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub method: TestMethod,
    pub p_value: f64,
    pub effect: Effect,
    /// Test statistic: the observed count `a` for Fisher, X^2 for chi-square, U for Mann-Whitney.
    pub statistic: f64,
    pub sizes: (usize, usize),
}

/// Which categorical test to run on a 2x2 table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestRule {
    /// Fisher iff every cell is above 10, chi-square otherwise.
    #[default]
    LargeCells,
    /// Fisher iff any expected count is below 5, chi-square otherwise.
    Conventional,
    AlwaysFisher,
}

/// Upper tail of the chi-square distribution with one degree of freedom.
pub fn chi_square_tail(x: f64) -> Result<f64> {
    if x.is_nan() || x < 0.0 {
        return Err(Error::Domain(format!(
            "chi-square statistic must be non-negative, got {x}"
        )));
    }
    Ok(erfc((x / 2.0).sqrt()).clamp(0.0, 1.0))
}

/// Unnormalized hypergeometric weights over the support of the `a` cell,
/// scaled so the mode has weight 1. Built by the ratio recurrence outward
/// from the mode, which keeps every term accurate to a few ulps.
struct Hypergeometric {
    lo: u64,
    weights: Vec<f64>,
}

impl Hypergeometric {
    fn new(t: &Contingency2x2) -> Self {
        let r1 = t.a + t.b;
        let r2 = t.c + t.d;
        let c1 = t.a + t.c;
        let lo = c1.saturating_sub(r2);
        let hi = r1.min(c1);
        let len = (hi - lo + 1) as usize;

        // ratio p(x+1)/p(x)
        let ratio = |x: u64| -> f64 {
            ((r1 - x) as f64 * (c1 - x) as f64) / ((x + 1) as f64 * (r2 + x + 1 - c1) as f64)
        };

        // mode of the hypergeometric distribution
        let n = (r1 + r2) as f64;
        let mode_guess = (((r1 + 1) as f64) * ((c1 + 1) as f64) / (n + 2.0)).floor() as u64;
        let mode = mode_guess.clamp(lo, hi);

        let mut weights = vec![0.0; len];
        let m = (mode - lo) as usize;
        weights[m] = 1.0;
        for i in m + 1..len {
            let x = lo + i as u64 - 1;
            weights[i] = weights[i - 1] * ratio(x);
        }
        for i in (0..m).rev() {
            let x = lo + i as u64;
            weights[i] = weights[i + 1] / ratio(x);
        }
        Self { lo, weights }
    }

    fn hi(&self) -> u64 {
        self.lo + self.weights.len() as u64 - 1
    }

    /// Mean of the noncentral (Fisher) hypergeometric distribution at log odds `log_psi`.
    fn noncentral_mean(&self, log_psi: f64) -> f64 {
        let logs: Vec<f64> = self
            .weights
            .iter()
            .enumerate()
            .map(|(i, w)| w.ln() + (self.lo + i as u64) as f64 * log_psi)
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, l) in logs.iter().enumerate() {
            let w = (l - max).exp();
            num += (self.lo + i as u64) as f64 * w;
            den += w;
        }
        num / den
    }

    /// Conditional maximum-likelihood odds ratio given the observed `a` cell.
    fn conditional_mle(&self, observed: u64) -> f64 {
        if self.weights.len() == 1 {
            return 1.0;
        }
        if observed == self.lo {
            return 0.0;
        }
        if observed == self.hi() {
            return f64::INFINITY;
        }
        let target = observed as f64;
        let (mut lo, mut hi) = (-1.0, 1.0);
        while self.noncentral_mean(lo) > target {
            lo *= 2.0;
        }
        while self.noncentral_mean(hi) < target {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.noncentral_mean(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (0.5 * (lo + hi)).exp()
    }
}

/// Two-sided Fisher exact test with the conditional-MLE odds ratio.
pub fn fisher_exact(t: &Contingency2x2) -> Result<TestResult> {
    if t.total() == 0 {
        return Err(Error::Domain("Fisher test on an all-zero table".into()));
    }
    let dist = Hypergeometric::new(t);
    let observed = dist.weights[(t.a - dist.lo) as usize];
    let cutoff = observed * (1.0 + FISHER_TIE_SLACK);
    let total: f64 = dist.weights.iter().sum();
    let extreme: f64 = dist.weights.iter().filter(|&&w| w <= cutoff).sum();
    Ok(TestResult {
        method: TestMethod::Fisher,
        p_value: (extreme / total).clamp(0.0, 1.0),
        effect: Effect::OddsRatio(dist.conditional_mle(t.a)),
        statistic: t.a as f64,
        sizes: ((t.a + t.c) as usize, (t.b + t.d) as usize),
    })
}

/// Sample cross-product odds ratio, with +0.5 added to every cell when any cell is zero.
pub fn sample_odds_ratio(t: &Contingency2x2) -> f64 {
    let cells = [t.a, t.b, t.c, t.d].map(|v| v as f64);
    let [a, b, c, d] = if t.min_cell() == 0 {
        cells.map(|v| v + 0.5)
    } else {
        cells
    };
    (a * d) / (b * c)
}

/// Pearson chi-square test on a 2x2 table, optionally with Yates' continuity correction.
pub fn chi_square_2x2(t: &Contingency2x2, yates: bool) -> Result<TestResult> {
    let margins = [t.a + t.b, t.c + t.d, t.a + t.c, t.b + t.d];
    if margins.contains(&0) {
        return Err(Error::Domain(format!(
            "chi-square test needs non-zero margins, table is {:?}",
            [t.a, t.b, t.c, t.d]
        )));
    }
    let observed = [t.a, t.b, t.c, t.d].map(|v| v as f64);
    let expected = t.expected();
    let statistic: f64 = observed
        .iter()
        .zip(expected.iter())
        .map(|(o, e)| {
            let dev = (o - e).abs();
            let h = if yates { dev.min(0.5) } else { 0.0 };
            (dev - h).powi(2) / e
        })
        .sum();
    Ok(TestResult {
        method: TestMethod::ChiSquare,
        p_value: chi_square_tail(statistic)?,
        effect: Effect::OddsRatio(sample_odds_ratio(t)),
        statistic,
        sizes: ((t.a + t.c) as usize, (t.b + t.d) as usize),
    })
}

pub fn choose_categorical_test(t: &Contingency2x2, rule: TestRule) -> TestMethod {
    match rule {
        TestRule::LargeCells => {
            if t.min_cell() > 10 {
                TestMethod::Fisher
            } else {
                TestMethod::ChiSquare
            }
        }
        TestRule::Conventional => {
            if t.total() == 0 || t.expected().iter().any(|&e| e < 5.0) {
                TestMethod::Fisher
            } else {
                TestMethod::ChiSquare
            }
        }
        TestRule::AlwaysFisher => TestMethod::Fisher,
    }
}

/// Run whichever test `rule` selects for `t`.
pub fn categorical_test(t: &Contingency2x2, rule: TestRule) -> Result<TestResult> {
    match choose_categorical_test(t, rule) {
        TestMethod::ChiSquare => chi_square_2x2(t, true),
        _ => fisher_exact(t),
    }
}

/// Options for [`mann_whitney_with`].
#[derive(Debug, Clone, Copy)]
pub struct MannWhitneyOptions {
    /// Largest combined sample size for which the exact null distribution is used
    /// (tie-free data only).
    pub exact_max_n: usize,
    pub continuity: bool,
}

impl Default for MannWhitneyOptions {
    fn default() -> Self {
        Self {
            exact_max_n: 12,
            continuity: true,
        }
    }
}

/// Midranks of `values` plus the sizes of every tie group.
fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // ranks start..end (0-based) share the average of start+1..=end
        let rank = (start + end + 1) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        if end - start > 1 {
            ties.push(end - start);
        }
        start = end;
    }
    (ranks, ties)
}

/// Number of arrangements of `m` x-values and `n` y-values for each value of U (0..=m*n).
fn u_null_counts(m: usize, n: usize) -> Vec<u64> {
    // counts[j][u] for the current m, built up row by row over m
    let width = m * n + 1;
    let mut prev: Vec<Vec<u64>> = (0..=n)
        .map(|_| {
            let mut v = vec![0u64; width];
            v[0] = 1;
            v
        })
        .collect();
    for i in 1..=m {
        let mut cur = vec![vec![0u64; width]; n + 1];
        cur[0][0] = 1;
        for j in 1..=n {
            for u in 0..=i * j {
                // last element is an x (beats all j y's) or a y
                let from_x = if u >= j { prev[j][u - j] } else { 0 };
                cur[j][u] = from_x + cur[j - 1][u];
            }
        }
        prev = cur;
    }
    prev.swap_remove(n)
}

pub fn mann_whitney(xs: &[f64], ys: &[f64]) -> Result<TestResult> {
    mann_whitney_with(xs, ys, MannWhitneyOptions::default())
}

/// Two-sided Mann-Whitney U test. `U` counts pairs where the x value exceeds the y value
/// (ties count one half).
pub fn mann_whitney_with(xs: &[f64], ys: &[f64], opts: MannWhitneyOptions) -> Result<TestResult> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::Domain(
            "Mann-Whitney test needs at least one value per group".into(),
        ));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Domain("Mann-Whitney test on non-finite values".into()));
    }
    let m = xs.len();
    let n = ys.len();
    let combined: Vec<f64> = xs.iter().chain(ys).copied().collect();
    let (ranks, ties) = midranks(&combined);
    let rank_sum: f64 = ranks[..m].iter().sum();
    let u = rank_sum - (m * (m + 1)) as f64 / 2.0;
    let mn = (m * n) as f64;
    let mean = mn / 2.0;

    let p_value = if ties.is_empty() && m + n <= opts.exact_max_n {
        let counts = u_null_counts(m, n);
        let total: u64 = counts.iter().sum();
        let u_int = u.round() as usize;
        let tail: u64 = if u > mean {
            counts[u_int..].iter().sum()
        } else {
            counts[..=u_int].iter().sum()
        };
        (2.0 * tail as f64 / total as f64).min(1.0)
    } else {
        let total = (m + n) as f64;
        let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>()
            / (total * (total - 1.0));
        let variance = mn / 12.0 * ((total + 1.0) - tie_term);
        if variance <= 0.0 {
            1.0
        } else {
            let diff = u - mean;
            let correction = if opts.continuity && diff != 0.0 {
                0.5 * diff.signum()
            } else {
                0.0
            };
            let z = (diff - correction) / variance.sqrt();
            erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
        }
    };

    Ok(TestResult {
        method: TestMethod::MannWhitney,
        p_value,
        effect: Effect::Means {
            first: mean_of(xs),
            second: mean_of(ys),
        },
        statistic: u,
        sizes: (m, n),
    })
}

pub(crate) fn mean_of(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Benjamini-Hochberg adjusted p-values, in input order.
pub fn benjamini_hochberg(p_values: &[f64]) -> Vec<f64> {
    let n = p_values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| p_values[i].total_cmp(&p_values[j]));
    let mut adjusted = vec![0.0; n];
    let mut running = 1.0f64;
    for (rank, &idx) in order.iter().enumerate().rev() {
        let q = p_values[idx] * n as f64 / (rank + 1) as f64;
        running = running.min(q);
        adjusted[idx] = running.min(1.0);
    }
    adjusted
}
