//! Hyperparameter search under stratified k-fold cross-validation, with the
//! majority class downsampled inside every training split.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta_reg, inv_beta_reg};

use crate::error::{Error, Result};
use crate::ingest::{ClinicalTable, CohortMatrix, Group};
use crate::stats::chi_square_tail;
use crate::svm::{solve_dual, DenseGram, Gram, KernelSpec, SmoParams, SubGram, SUPPORT_CUTOFF};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Linear,
    Rbf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperGrid {
    pub costs: Vec<f64>,
    pub gammas: Vec<f64>,
    pub kernels: Vec<KernelKind>,
}

impl Default for HyperGrid {
    /// C in 10^-3..10^3 and gamma in 10^-1..10^9, both kernels.
    fn default() -> Self {
        Self {
            costs: (-3..=3).map(|k| 10f64.powi(k)).collect(),
            gammas: (-1..=9).map(|k| 10f64.powi(k)).collect(),
            kernels: vec![KernelKind::Linear, KernelKind::Rbf],
        }
    }
}

/// One point of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub kernel: KernelSpec,
    pub cost: f64,
}

impl GridCell {
    pub fn kind(&self) -> KernelKind {
        match self.kernel {
            KernelSpec::Linear => KernelKind::Linear,
            KernelSpec::Rbf { .. } => KernelKind::Rbf,
        }
    }
}

impl HyperGrid {
    pub fn validate(&self) -> Result<()> {
        if self.costs.is_empty() || self.kernels.is_empty() {
            return Err(Error::Config("grid needs at least one cost and one kernel".into()));
        }
        if self.kernels.contains(&KernelKind::Rbf) && self.gammas.is_empty() {
            return Err(Error::Config("RBF kernel requested with an empty gamma list".into()));
        }
        let bad = self
            .costs
            .iter()
            .chain(&self.gammas)
            .find(|v| !(**v > 0.0 && v.is_finite()));
        if let Some(v) = bad {
            return Err(Error::Config(format!("grid values must be positive, got {v}")));
        }
        Ok(())
    }

    /// Cells in tie-break order: linear before RBF, then ascending C, then ascending gamma.
    /// Gamma is not crossed with the linear kernel.
    pub fn cells(&self) -> Vec<GridCell> {
        let mut costs = self.costs.clone();
        costs.sort_by(f64::total_cmp);
        costs.dedup();
        let mut gammas = self.gammas.clone();
        gammas.sort_by(f64::total_cmp);
        gammas.dedup();
        let mut cells = Vec::new();
        if self.kernels.contains(&KernelKind::Linear) {
            cells.extend(costs.iter().map(|&cost| GridCell {
                kernel: KernelSpec::Linear,
                cost,
            }));
        }
        if self.kernels.contains(&KernelKind::Rbf) {
            for &cost in &costs {
                cells.extend(gammas.iter().map(|&gamma| GridCell {
                    kernel: KernelSpec::Rbf { gamma },
                    cost,
                }));
            }
        }
        cells
    }
}

/// 2x2 confusion counts with cases as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn correct(&self) -> u64 {
        self.tp + self.tn
    }

    pub fn accuracy(&self) -> f64 {
        self.correct() as f64 / self.total() as f64
    }

    /// Same predictions with the roles of the two classes exchanged.
    pub fn swap_classes(&self) -> Confusion {
        Confusion {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }

    pub fn record(&mut self, truth: Group, predicted: Group) {
        match (truth, predicted) {
            (Group::Case, Group::Case) => self.tp += 1,
            (Group::Case, Group::Control) => self.fn_ += 1,
            (Group::Control, Group::Case) => self.fp += 1,
            (Group::Control, Group::Control) => self.tn += 1,
        }
    }
}

pub fn balanced_accuracy(c: &Confusion) -> Result<f64> {
    let positives = c.tp + c.fn_;
    let negatives = c.tn + c.fp;
    if positives == 0 || negatives == 0 {
        return Err(Error::Domain(
            "balanced accuracy needs both classes present".into(),
        ));
    }
    let sensitivity = c.tp as f64 / positives as f64;
    let specificity = c.tn as f64 / negatives as f64;
    Ok((sensitivity + specificity) / 2.0)
}

/// One-sided exact binomial test of accuracy against the no-information rate
/// (the majority-class share).
pub fn nir_test(c: &Confusion) -> f64 {
    let n = c.total();
    if n == 0 {
        return 1.0;
    }
    let nir = (c.tp + c.fn_).max(c.tn + c.fp) as f64 / n as f64;
    let k = c.correct();
    if k == 0 {
        return 1.0;
    }
    if nir >= 1.0 {
        return 1.0;
    }
    // P(X >= k) = I_nir(k, n - k + 1)
    beta_reg(k as f64, (n - k + 1) as f64, nir).clamp(0.0, 1.0)
}

/// McNemar test on the off-diagonal counts (b = FP, c = FN).
pub fn mcnemar_test(c: &Confusion, continuity: bool) -> f64 {
    let (b, cc) = (c.fp as f64, c.fn_ as f64);
    if b + cc == 0.0 {
        return 1.0;
    }
    let diff = (b - cc).abs();
    let num = if continuity { diff - 1.0 } else { diff };
    chi_square_tail(num * num / (b + cc)).unwrap_or(1.0)
}

/// Clopper-Pearson interval for a binomial proportion.
pub fn accuracy_ci(correct: u64, n: u64, level: f64) -> Result<(f64, f64)> {
    if correct > n || n == 0 {
        return Err(Error::Domain(format!(
            "invalid accuracy counts {correct}/{n}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("confidence level must be in (0,1), got {level}")));
    }
    let tail = (1.0 - level) / 2.0;
    let (x, n) = (correct as f64, n as f64);
    let lo = if correct == 0 {
        0.0
    } else {
        inv_beta_reg(x, n - x + 1.0, tail)
    };
    let hi = if correct as f64 == n {
        1.0
    } else {
        inv_beta_reg(x + 1.0, n - x, 1.0 - tail)
    };
    Ok((lo, hi))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the downsampling draw of one (cell, fold) task.
pub fn task_seed(seed: u64, cell: usize, fold: usize) -> u64 {
    seed ^ splitmix64(((cell as u64) << 32) | fold as u64)
}

/// Seed for the final full-data refit.
pub fn final_fit_seed(seed: u64) -> u64 {
    seed ^ splitmix64(u64::MAX)
}

/// Assign each sample to one of `k` folds, stratified by class.
pub fn stratified_kfold(labels: &[Group], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; labels.len()];
    let mut offset = 0;
    for group in [Group::Control, Group::Case] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == group).collect();
        if members.len() < k {
            return Err(Error::Domain(format!(
                "class {group:?} has {} samples, fewer than k = {k}",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for (pos, &i) in members.iter().enumerate() {
            folds[i] = (offset + pos) % k;
        }
        offset = (offset + members.len()) % k;
    }
    Ok(folds)
}

/// Subsample the majority class of `indices` (without replacement) down to the minority
/// size. Returns sorted indices.
pub fn downsample(indices: &[usize], labels: &[Group], seed: u64) -> Result<Vec<usize>> {
    let (mut control, mut case): (Vec<usize>, Vec<usize>) =
        indices.iter().partition(|&&i| labels[i] == Group::Control);
    if control.is_empty() || case.is_empty() {
        return Err(Error::Domain("downsampling needs both classes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = control.len().min(case.len());
    let majority = if control.len() > case.len() {
        &mut control
    } else {
        &mut case
    };
    majority.shuffle(&mut rng);
    majority.truncate(keep);
    let mut out: Vec<usize> = control.into_iter().chain(case).collect();
    out.sort_unstable();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: GridCell,
    pub confusion: Confusion,
    pub balanced_accuracy: f64,
    pub accuracy: f64,
    /// Folds whose solver stopped at the iteration budget.
    pub unconverged_folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub per_cell: Vec<CellResult>,
    pub best_cell: GridCell,
    pub pooled_confusion: Confusion,
    pub balanced_accuracy: f64,
    pub accuracy: f64,
    pub acc_ci: (f64, f64),
    pub nir_pvalue: f64,
    pub mcnemar_pvalue: f64,
    pub fold_assignments: BTreeMap<String, usize>,
    pub k: usize,
    pub seed: u64,
}

/// Solver settings shared by every fit of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_passes: Option<usize>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            max_passes: None,
        }
    }
}

impl SolverSettings {
    pub fn params(&self, cost: f64) -> SmoParams {
        SmoParams {
            cost,
            tol: self.tol,
            max_passes: self.max_passes,
        }
    }
}

/// Kernel matrices over all samples, one per distinct kernel in the grid.
pub(crate) struct KernelBank {
    linear: Option<DenseGram>,
    rbf: Vec<(f64, DenseGram)>,
}

impl KernelBank {
    pub(crate) fn build(rows: &[Vec<f64>], cells: &[GridCell]) -> Self {
        let n = rows.len();
        let needs_linear = cells.iter().any(|c| c.kind() == KernelKind::Linear);
        let mut gammas: Vec<f64> = cells.iter().filter_map(|c| c.kernel.gamma()).collect();
        gammas.sort_by(f64::total_cmp);
        gammas.dedup();
        let linear = needs_linear.then(|| DenseGram::from_rows(rows, &KernelSpec::Linear));
        let rbf = if gammas.is_empty() {
            Vec::new()
        } else {
            let sq = DenseGram::from_fn(n, |i, j| crate::svm::squared_distance(&rows[i], &rows[j]));
            gammas
                .into_iter()
                .map(|gamma| {
                    let k = KernelSpec::Rbf { gamma };
                    (gamma, DenseGram::from_fn(n, |i, j| k.from_pair(0.0, sq.get(i, j))))
                })
                .collect()
        };
        Self { linear, rbf }
    }

    pub(crate) fn gram(&self, kernel: &KernelSpec) -> &DenseGram {
        match kernel {
            KernelSpec::Linear => self.linear.as_ref().expect("linear kernel built"),
            KernelSpec::Rbf { gamma } => {
                &self
                    .rbf
                    .iter()
                    .find(|(g, _)| g == gamma)
                    .expect("rbf kernel built")
                    .1
            }
        }
    }
}

struct FoldOutcome {
    predictions: Vec<(usize, Group)>,
    converged: bool,
}

fn run_fold(
    gram: &DenseGram,
    labels: &[Group],
    folds: &[usize],
    fold: usize,
    cell: &GridCell,
    solver: &SolverSettings,
    seed: u64,
) -> Result<FoldOutcome> {
    let train: Vec<usize> = (0..labels.len()).filter(|&i| folds[i] != fold).collect();
    let test: Vec<usize> = (0..labels.len()).filter(|&i| folds[i] == fold).collect();
    let has_both = train.iter().any(|&i| labels[i] == Group::Control)
        && train.iter().any(|&i| labels[i] == Group::Case);
    if !has_both {
        return Err(Error::Domain(format!(
            "fold {fold}: training split contains a single class"
        )));
    }
    let train = downsample(&train, labels, seed)?;
    let y: Vec<f64> = train.iter().map(|&i| labels[i].sign()).collect();
    let sub = SubGram::new(gram, &train);
    let sol = solve_dual(&sub, &y, &solver.params(cell.cost));
    let support: Vec<(usize, f64)> = train
        .iter()
        .zip(sol.alpha.iter().zip(&y))
        .filter(|(_, (a, _))| **a > SUPPORT_CUTOFF)
        .map(|(&i, (a, yi))| (i, a * yi))
        .collect();
    let predictions = test
        .iter()
        .map(|&t| {
            let d: f64 = support.iter().map(|&(s, c)| c * gram.get(s, t)).sum::<f64>() + sol.bias;
            (t, if d >= 0.0 { Group::Case } else { Group::Control })
        })
        .collect();
    Ok(FoldOutcome {
        predictions,
        converged: sol.converged,
    })
}

/// Evaluate every grid cell by k-fold cross-validation and pick the best by pooled
/// out-of-fold balanced accuracy. `clin` must be aligned to the matrix samples.
pub fn grid_search_cv(
    m: &CohortMatrix,
    clin: &ClinicalTable,
    grid: &HyperGrid,
    k: usize,
    seed: u64,
    solver: &SolverSettings,
) -> Result<CvResult> {
    grid.validate()?;
    if clin.sample_ids() != m.sample_ids() {
        return Err(Error::Structure(
            "clinical table is not aligned with the matrix samples".into(),
        ));
    }
    if m.n_features() == 0 {
        return Err(Error::Domain("no features left to train on".into()));
    }
    let labels = clin.labels();
    let folds = stratified_kfold(labels, k, seed)?;
    let cells = grid.cells();
    let bank = KernelBank::build(&m.sample_rows(), &cells);

    let tasks: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..k).map(move |f| (c, f)))
        .collect();
    let outcomes: Vec<FoldOutcome> = tasks
        .par_iter()
        .map(|&(c, f)| {
            let cell = &cells[c];
            run_fold(bank.gram(&cell.kernel), labels, &folds, f, cell, solver, task_seed(seed, c, f))
        })
        .collect::<Result<_>>()?;

    let mut per_cell = Vec::with_capacity(cells.len());
    for (c, cell) in cells.iter().enumerate() {
        let mut confusion = Confusion::default();
        let mut unconverged = 0;
        for outcome in &outcomes[c * k..(c + 1) * k] {
            for &(i, predicted) in &outcome.predictions {
                confusion.record(labels[i], predicted);
            }
            unconverged += usize::from(!outcome.converged);
        }
        per_cell.push(CellResult {
            cell: *cell,
            confusion,
            balanced_accuracy: balanced_accuracy(&confusion)?,
            accuracy: confusion.accuracy(),
            unconverged_folds: unconverged,
        });
    }

    // strict improvement keeps the earliest (simplest) cell on ties
    let mut best = 0;
    for (i, r) in per_cell.iter().enumerate() {
        if r.balanced_accuracy > per_cell[best].balanced_accuracy {
            best = i;
        }
    }
    let best_result = &per_cell[best];
    let pooled = best_result.confusion;
    Ok(CvResult {
        best_cell: best_result.cell,
        pooled_confusion: pooled,
        balanced_accuracy: best_result.balanced_accuracy,
        accuracy: best_result.accuracy,
        acc_ci: accuracy_ci(pooled.correct(), pooled.total(), 0.95)?,
        nir_pvalue: nir_test(&pooled),
        mcnemar_pvalue: mcnemar_test(&pooled, true),
        fold_assignments: m
            .sample_ids()
            .iter()
            .cloned()
            .zip(folds.iter().copied())
            .collect(),
        k,
        seed,
        per_cell,
    })
}

/// Per-cell metrics: kernel, C, gamma (empty for linear), balanced accuracy, accuracy.
pub fn write_grid_csv(per_cell: &[CellResult], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["kernel", "C", "gamma", "balanced_accuracy", "accuracy"])
        .map_err(|e| Error::csv(path, e))?;
    for r in per_cell {
        let kind = match r.cell.kind() {
            KernelKind::Linear => "linear",
            KernelKind::Rbf => "rbf",
        };
        w.write_record([
            kind.to_string(),
            r.cell.cost.to_string(),
            r.cell.kernel.gamma().map(|g| g.to_string()).unwrap_or_default(),
            r.balanced_accuracy.to_string(),
            r.accuracy.to_string(),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
