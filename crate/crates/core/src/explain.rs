//! Group-level tests between flagged samples and the rest of their origin group, their
//! template explanations, and per-sample annotation against the expert table.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::anomaly::AnomalyRecord;
use crate::dekt::{
    display_observation, entry_supports, find_entry, CmpOp, Condition, DektEntry,
    Direction, RiskSign, Support,
};
use crate::error::{Error, Result};
use crate::ingest::{ClinicalTable, CovariateValues, Group, Observation};
use crate::stats::{
    benjamini_hochberg, categorical_test, mann_whitney, Contingency2x2, TestResult, TestRule,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupTestOptions {
    pub alpha: f64,
    pub test_rule: TestRule,
    /// Judge significance on Benjamini-Hochberg adjusted p-values.
    pub benjamini_hochberg: bool,
}

impl Default for GroupTestOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            test_rule: TestRule::LargeCells,
            benjamini_hochberg: false,
        }
    }
}

/// Which group a level is typical of according to the expert table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelativeTo {
    Case,
    Control,
    Unknown,
}

impl RelativeTo {
    pub fn label(self) -> &'static str {
        match self {
            RelativeTo::Case => "Case",
            RelativeTo::Control => "Control",
            RelativeTo::Unknown => "unknown",
        }
    }
}

/// Names used for a flagged set and its origin group, e.g. "AHC" and "HC".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comparison {
    pub origin: Group,
    pub anomalous_label: String,
    pub origin_label: String,
}

impl Comparison {
    pub fn new(clin: &ClinicalTable, origin: Group) -> Self {
        let level = clin.target().level(origin);
        Self {
            origin,
            anomalous_label: format!("A{level}"),
            origin_label: level.to_string(),
        }
    }
}

/// One level-vs-rest test. The table rows are (level, other levels) and the columns
/// (flagged, origin remainder).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalTest {
    pub covariate: String,
    pub level: String,
    pub other_levels: Vec<String>,
    pub table: Contingency2x2,
    pub result: TestResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjusted_p: Option<f64>,
    pub relative_to: RelativeTo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericTest {
    pub covariate: String,
    pub result: TestResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjusted_p: Option<f64>,
    pub flagged_values: Vec<f64>,
    pub origin_values: Vec<f64>,
    pub expectation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedTest {
    pub covariate: String,
    pub reason: String,
}

fn origin_remainder(flagged: &[usize], origin: &[usize]) -> Vec<usize> {
    origin.iter().copied().filter(|i| !flagged.contains(i)).collect()
}

fn significant(p: f64, adjusted: Option<f64>, alpha: f64) -> bool {
    adjusted.unwrap_or(p) < alpha
}

fn relative_to(dekt: &[DektEntry], covariate: &str, level: &str) -> RelativeTo {
    match find_entry(dekt, covariate) {
        None => RelativeTo::Unknown,
        Some(e) => match e.condition.matches(Observation::Level(level)) {
            Some(true) => RelativeTo::Case,
            Some(false) => RelativeTo::Control,
            None => RelativeTo::Unknown,
        },
    }
}

/// Level-vs-rest tests for every categorical covariate and every level observed in the
/// two sets, with pairwise deletion of missing values. Only significant results are
/// returned, ordered by covariate name and then level order.
pub fn group_categorical_tests(
    flagged: &[usize],
    origin: &[usize],
    clin: &ClinicalTable,
    dekt: &[DektEntry],
    opts: &GroupTestOptions,
) -> Result<(Vec<CategoricalTest>, Vec<SkippedTest>)> {
    let rest = origin_remainder(flagged, origin);
    let mut covariates: Vec<_> = clin.covariates().iter().collect();
    covariates.sort_by(|a, b| a.name.cmp(&b.name));
    let mut tests = Vec::new();
    let mut skipped = Vec::new();
    for cov in covariates {
        let CovariateValues::Categorical { levels, codes } = &cov.values else {
            continue;
        };
        let f_codes: Vec<usize> = flagged.iter().filter_map(|&i| codes[i]).collect();
        let o_codes: Vec<usize> = rest.iter().filter_map(|&i| codes[i]).collect();
        if f_codes.is_empty() || o_codes.is_empty() {
            skipped.push(SkippedTest {
                covariate: cov.name.clone(),
                reason: "no observed values on one side".into(),
            });
            continue;
        }
        let mut observed: Vec<usize> = f_codes.iter().chain(&o_codes).copied().collect();
        observed.sort_unstable();
        observed.dedup();
        if observed.len() < 2 {
            skipped.push(SkippedTest {
                covariate: cov.name.clone(),
                reason: "a single level observed".into(),
            });
            continue;
        }
        for &level in &observed {
            let a = f_codes.iter().filter(|&&c| c == level).count() as u64;
            let b = o_codes.iter().filter(|&&c| c == level).count() as u64;
            let table = Contingency2x2::new(a, b, f_codes.len() as u64 - a, o_codes.len() as u64 - b);
            let result = categorical_test(&table, opts.test_rule)?;
            tests.push(CategoricalTest {
                covariate: cov.name.clone(),
                level: levels[level].clone(),
                other_levels: observed
                    .iter()
                    .filter(|&&l| l != level)
                    .map(|&l| levels[l].clone())
                    .collect(),
                table,
                result,
                adjusted_p: None,
                relative_to: relative_to(dekt, &cov.name, &levels[level]),
            });
        }
    }
    if opts.benjamini_hochberg {
        let p: Vec<f64> = tests.iter().map(|t| t.result.p_value).collect();
        for (t, q) in tests.iter_mut().zip(benjamini_hochberg(&p)) {
            t.adjusted_p = Some(q);
        }
    }
    tests.retain(|t| significant(t.result.p_value, t.adjusted_p, opts.alpha));
    Ok((tests, skipped))
}

/// Plain-language expectation for a numeric covariate, used as a plot title.
pub fn numeric_expectation(dekt: &[DektEntry], covariate: &str, clin: &ClinicalTable) -> String {
    let target = clin.target();
    match find_entry(dekt, covariate).map(|e| &e.condition) {
        Some(cond @ Condition::Cmp { op, .. }) => {
            let direction = match op {
                CmpOp::Gt | CmpOp::Ge => "higher",
                CmpOp::Lt | CmpOp::Le => "lower",
            };
            format!(
                "expected {direction} in {} ({cond})",
                target.case_level
            )
        }
        _ => "no expert expectation".to_string(),
    }
}

/// Mann-Whitney test per numeric covariate with pairwise deletion. Only significant
/// results are returned, ordered by covariate name.
pub fn group_numeric_tests(
    flagged: &[usize],
    origin: &[usize],
    clin: &ClinicalTable,
    dekt: &[DektEntry],
    opts: &GroupTestOptions,
) -> Result<(Vec<NumericTest>, Vec<SkippedTest>)> {
    let rest = origin_remainder(flagged, origin);
    let mut covariates: Vec<_> = clin.covariates().iter().collect();
    covariates.sort_by(|a, b| a.name.cmp(&b.name));
    let mut tests = Vec::new();
    let mut skipped = Vec::new();
    for cov in covariates {
        let CovariateValues::Numeric(values) = &cov.values else {
            continue;
        };
        let fv: Vec<f64> = flagged.iter().filter_map(|&i| values[i]).collect();
        let ov: Vec<f64> = rest.iter().filter_map(|&i| values[i]).collect();
        if fv.is_empty() || ov.is_empty() {
            skipped.push(SkippedTest {
                covariate: cov.name.clone(),
                reason: "no observed values on one side".into(),
            });
            continue;
        }
        let result = mann_whitney(&fv, &ov)?;
        tests.push(NumericTest {
            covariate: cov.name.clone(),
            result,
            adjusted_p: None,
            flagged_values: fv,
            origin_values: ov,
            expectation: numeric_expectation(dekt, &cov.name, clin),
        });
    }
    if opts.benjamini_hochberg {
        let p: Vec<f64> = tests.iter().map(|t| t.result.p_value).collect();
        for (t, q) in tests.iter_mut().zip(benjamini_hochberg(&p)) {
            t.adjusted_p = Some(q);
        }
    }
    tests.retain(|t| significant(t.result.p_value, t.adjusted_p, opts.alpha));
    Ok((tests, skipped))
}

/// p-value in the form `6.436e-03`.
pub fn format_p(p: f64) -> String {
    if p == 0.0 || !p.is_finite() {
        return format!("{p:.3e}");
    }
    let s = format!("{p:.3e}");
    let (mantissa, exp) = s.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

/// Template paragraph for a categorical test, followed by the expert-knowledge risk
/// sentence when the table has an entry for the covariate.
pub fn render_explanation_text(test: &CategoricalTest, cmp: &Comparison, dekt: &[DektEntry]) -> String {
    let or = test.result.effect.odds_ratio().unwrap_or(f64::NAN);
    let above = or > 1.0;
    let mut text = format!(
        "For the covariate {f}, we evaluated the prevalence of {v} over the remaining values of \
         the covariate ({others}) in both {ag} and {og} groups. We obtained an OR {cmp_sym} \
         (P<{p}), which means that {v} is {more} represented than the remaining values in the \
         {ag} group compared to the {og} group.",
        f = test.covariate,
        v = test.level,
        others = test.other_levels.join(","),
        ag = cmp.anomalous_label,
        og = cmp.origin_label,
        cmp_sym = if above { ">1" } else { "<1" },
        p = format_p(test.adjusted_p.unwrap_or(test.result.p_value)),
        more = if above { "more" } else { "less" },
    );
    if let Some(entry) = find_entry(dekt, &test.covariate) {
        if let Some(hit) = entry.condition.matches(Observation::Level(&test.level)) {
            let provides = hit != (entry.sign == RiskSign::Decreases);
            text.push_str(&format!(
                " Based on domain expert knowledge, {} {} a higher risk to develop the disease.",
                test.level,
                if provides { "provides" } else { "does not provide" }
            ));
        }
    }
    text
}

/// Covariate evidence shown for one sample, e.g. `b_cells_naive: 0.087 (<=0.09)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub feature: String,
    pub observed: String,
    pub condition: String,
}

impl Evidence {
    pub fn text(&self) -> String {
        format!("{}: {} ({})", self.feature, self.observed, self.condition)
    }
}

/// Per-entry mark for the summary table: observed value and its support outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mark {
    pub feature: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed: Option<String>,
    pub support: Support,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualAnnotation {
    pub sample_id: String,
    pub given_label: String,
    pub predicted_label: String,
    pub direction: Direction,
    pub distance: f64,
    pub supports: Vec<Evidence>,
    pub opposes: Vec<Evidence>,
    pub not_applicable: Vec<String>,
    pub marks: Vec<Mark>,
    /// (supporting entries, total entries)
    pub ratio: (usize, usize),
}

impl IndividualAnnotation {
    pub fn ratio_text(&self) -> String {
        format!("{} / {}", self.ratio.0, self.ratio.1)
    }
}

/// Evaluate every expert entry for one flagged sample. `sample` indexes `clin`.
pub fn annotate_individual(
    sample: usize,
    clin: &ClinicalTable,
    dekt: &[DektEntry],
    record: &AnomalyRecord,
) -> Result<IndividualAnnotation> {
    if clin.sample_ids().get(sample) != Some(&record.sample_id) {
        return Err(Error::Structure(format!(
            "sample index {sample} does not hold '{}'",
            record.sample_id
        )));
    }
    let direction = Direction::from_origin(record.given);
    let mut ann = IndividualAnnotation {
        sample_id: record.sample_id.clone(),
        given_label: record.given_label.clone(),
        predicted_label: record.predicted_label.clone(),
        direction,
        distance: record.distance,
        supports: Vec::new(),
        opposes: Vec::new(),
        not_applicable: Vec::new(),
        marks: Vec::new(),
        ratio: (0, dekt.len()),
    };
    for entry in dekt {
        let cov = clin.covariate(&entry.feature).ok_or_else(|| {
            Error::Structure(format!("expert table feature '{}' not in clinical table", entry.feature))
        })?;
        let observed = cov.observation(sample);
        let support = entry_supports(entry, observed, direction);
        let shown = display_observation(observed);
        let evidence = || Evidence {
            feature: entry.feature.clone(),
            observed: shown.clone().unwrap_or_default(),
            condition: entry.condition_text(),
        };
        match support {
            Support::Supports => ann.supports.push(evidence()),
            Support::Opposes => ann.opposes.push(evidence()),
            Support::NotApplicable => ann.not_applicable.push(entry.feature.clone()),
        }
        ann.marks.push(Mark {
            feature: entry.feature.clone(),
            observed: shown,
            support,
        });
    }
    ann.ratio.0 = ann.supports.len();
    Ok(ann)
}

/// Group tests of one direction: flagged samples of `origin` against the rest of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub comparison: Comparison,
    pub n_flagged: usize,
    pub n_origin_remainder: usize,
    pub categorical: Vec<CategoricalTest>,
    pub numeric: Vec<NumericTest>,
    pub skipped: Vec<SkippedTest>,
    /// Explanation paragraph per categorical test, in the same order.
    pub explanations: Vec<String>,
}

pub fn group_report(
    records: &[AnomalyRecord],
    clin: &ClinicalTable,
    dekt: &[DektEntry],
    origin: Group,
    opts: &GroupTestOptions,
) -> Result<GroupReport> {
    let comparison = Comparison::new(clin, origin);
    let members: Vec<usize> = (0..records.len()).filter(|&i| records[i].given == origin).collect();
    let flagged: Vec<usize> = members.iter().copied().filter(|&i| records[i].flagged).collect();
    let n_rest = members.len() - flagged.len();
    if flagged.is_empty() {
        return Ok(GroupReport {
            comparison,
            n_flagged: 0,
            n_origin_remainder: n_rest,
            categorical: Vec::new(),
            numeric: Vec::new(),
            skipped: Vec::new(),
            explanations: Vec::new(),
        });
    }
    let (categorical, mut skipped) = group_categorical_tests(&flagged, &members, clin, dekt, opts)?;
    let (numeric, skipped_numeric) = group_numeric_tests(&flagged, &members, clin, dekt, opts)?;
    skipped.extend(skipped_numeric);
    skipped.sort_by(|a, b| a.covariate.cmp(&b.covariate));
    let explanations = categorical
        .iter()
        .map(|t| render_explanation_text(t, &comparison, dekt))
        .collect();
    Ok(GroupReport {
        comparison,
        n_flagged: flagged.len(),
        n_origin_remainder: n_rest,
        categorical,
        numeric,
        skipped,
        explanations,
    })
}

/// Categorical results of both directions as one CSV, one row per test.
pub fn write_group_tests_csv(reports: &[GroupReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record([
        "Comparison",
        "Test",
        "OR",
        "P-value",
        "Adjusted P-value",
        "Covariate",
        "Value",
        "Relative to",
        "Other Values",
        "Anomalous Value",
        "Origin Value",
        "Anomalous Other Value",
        "Origin Other Value",
    ])
    .map_err(|e| Error::csv(path, e))?;
    for r in reports {
        for t in &r.categorical {
            let or = t.result.effect.odds_ratio().unwrap_or(f64::NAN);
            w.write_record([
                format!("{} vs {}", r.comparison.anomalous_label, r.comparison.origin_label),
                t.result.method.to_string(),
                or.to_string(),
                t.result.p_value.to_string(),
                t.adjusted_p.map(|q| q.to_string()).unwrap_or_default(),
                t.covariate.clone(),
                t.level.clone(),
                t.relative_to.label().to_string(),
                t.other_levels.join(","),
                t.table.a.to_string(),
                t.table.b.to_string(),
                t.table.c.to_string(),
                t.table.d.to_string(),
            ])
            .map_err(|e| Error::csv(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
