//! Loading and preprocessing of the omics matrix and the clinical table.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tokens read as a missing clinical value.
pub const MISSING_TOKENS: [&str; 2] = ["", "NA"];

/// Dense features x samples matrix, row-major by feature.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortMatrix {
    feature_ids: Vec<String>,
    sample_ids: Vec<String>,
    values: Vec<f64>,
}

fn first_duplicate<'a>(ids: impl IntoIterator<Item = &'a String>) -> Option<&'a String> {
    let mut seen = HashSet::new();
    ids.into_iter().find(|id| !seen.insert(id.as_str()))
}

impl CohortMatrix {
    pub fn new(feature_ids: Vec<String>, sample_ids: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if values.len() != feature_ids.len() * sample_ids.len() {
            return Err(Error::Dimension {
                expected: feature_ids.len() * sample_ids.len(),
                actual: values.len(),
            });
        }
        if let Some(id) = first_duplicate(&feature_ids) {
            return Err(Error::Structure(format!("duplicate feature id '{id}'")));
        }
        if let Some(id) = first_duplicate(&sample_ids) {
            return Err(Error::Structure(format!("duplicate sample id '{id}'")));
        }
        Ok(Self {
            feature_ids,
            sample_ids,
            values,
        })
    }

    pub fn feature_ids(&self) -> &[String] {
        &self.feature_ids
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn n_features(&self) -> usize {
        self.feature_ids.len()
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn row(&self, feature: usize) -> &[f64] {
        let n = self.n_samples();
        &self.values[feature * n..(feature + 1) * n]
    }

    pub fn get(&self, feature: usize, sample: usize) -> f64 {
        self.values[feature * self.n_samples() + sample]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// One vector per sample, each holding that sample's feature values.
    pub fn sample_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_samples())
            .map(|s| (0..self.n_features()).map(|f| self.get(f, s)).collect())
            .collect()
    }
}

/// Field delimiter guessed from the file extension: `.csv` is comma, anything else tab.
pub fn delimiter_for(path: &Path) -> u8 {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("csv") => b',',
        _ => b'\t',
    }
}

fn open_reader(path: &Path, delimiter: u8) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .flexible(true)
        .from_reader(file))
}

fn read_records(path: &Path, delimiter: u8) -> Result<Vec<csv::StringRecord>> {
    open_reader(path, delimiter)?
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::csv(path, e))
}

fn parse_error(path: &Path, line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        message: message.into(),
    }
}

/// Read a features x samples matrix. The header row holds sample ids (its first cell is
/// ignored) and the first column holds feature ids. Every other cell must be a finite number.
pub fn load_matrix(path: &Path, delimiter: u8) -> Result<CohortMatrix> {
    let records = read_records(path, delimiter)?;
    let Some((header, body)) = records.split_first() else {
        return Err(Error::Structure(format!("{}: empty matrix file", path.display())));
    };
    let sample_ids: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let mut feature_ids = Vec::with_capacity(body.len());
    let mut values = Vec::with_capacity(body.len() * sample_ids.len());
    for (r, record) in body.iter().enumerate() {
        let line = r + 2;
        if record.len() != sample_ids.len() + 1 {
            return Err(parse_error(
                path,
                line,
                record.len().min(sample_ids.len() + 1),
                format!(
                    "expected {} fields, found {}",
                    sample_ids.len() + 1,
                    record.len()
                ),
            ));
        }
        feature_ids.push(record[0].trim().to_string());
        for (c, cell) in record.iter().enumerate().skip(1) {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| parse_error(path, line, c + 1, format!("not a number: '{cell}'")))?;
            if !v.is_finite() {
                return Err(parse_error(path, line, c + 1, format!("non-finite value '{cell}'")));
            }
            values.push(v);
        }
    }
    CohortMatrix::new(feature_ids, sample_ids, values)
}

pub fn write_matrix(m: &CohortMatrix, path: &Path, delimiter: u8) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_writer(BufWriter::new(file));
    let header = std::iter::once("feature_id").chain(m.sample_ids.iter().map(String::as_str));
    w.write_record(header).map_err(|e| Error::csv(path, e))?;
    for (f, id) in m.feature_ids.iter().enumerate() {
        let row = std::iter::once(id.clone()).chain(m.row(f).iter().map(|v| v.to_string()));
        w.write_record(row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateKind {
    Categorical,
    Numeric,
}

/// Declared type of one clinical column. Categorical columns may pin their level set;
/// otherwise the observed levels are used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateDecl {
    pub kind: CovariateKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<String>>,
}

impl CovariateDecl {
    pub fn categorical() -> Self {
        Self {
            kind: CovariateKind::Categorical,
            levels: None,
        }
    }

    pub fn numeric() -> Self {
        Self {
            kind: CovariateKind::Numeric,
            levels: None,
        }
    }
}

pub type ClinicalSchema = BTreeMap<String, CovariateDecl>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateValues {
    Categorical {
        levels: Vec<String>,
        codes: Vec<Option<usize>>,
    },
    Numeric(Vec<Option<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariate {
    pub name: String,
    pub values: CovariateValues,
}

/// One observed clinical cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observation<'a> {
    Level(&'a str),
    Number(f64),
    Missing,
}

impl Covariate {
    pub fn kind(&self) -> CovariateKind {
        match self.values {
            CovariateValues::Categorical { .. } => CovariateKind::Categorical,
            CovariateValues::Numeric(_) => CovariateKind::Numeric,
        }
    }

    pub fn observation(&self, sample: usize) -> Observation<'_> {
        match &self.values {
            CovariateValues::Categorical { levels, codes } => match codes[sample] {
                Some(code) => Observation::Level(&levels[code]),
                None => Observation::Missing,
            },
            CovariateValues::Numeric(values) => match values[sample] {
                Some(v) => Observation::Number(v),
                None => Observation::Missing,
            },
        }
    }

    fn select(&self, order: &[usize]) -> Covariate {
        let values = match &self.values {
            CovariateValues::Categorical { levels, codes } => CovariateValues::Categorical {
                levels: levels.clone(),
                codes: order.iter().map(|&i| codes[i]).collect(),
            },
            CovariateValues::Numeric(v) => {
                CovariateValues::Numeric(order.iter().map(|&i| v[i]).collect())
            }
        };
        Covariate {
            name: self.name.clone(),
            values,
        }
    }
}

/// Role of a sample's label in the binary target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    /// Origin group A, the control-like level.
    Control,
    /// Origin group B, the case-like level.
    Case,
}

impl Group {
    pub fn other(self) -> Group {
        match self {
            Group::Control => Group::Case,
            Group::Case => Group::Control,
        }
    }

    /// SVM label: cases are +1, controls -1.
    pub fn sign(self) -> f64 {
        match self {
            Group::Control => -1.0,
            Group::Case => 1.0,
        }
    }
}

/// Target covariate name and which of its levels plays which role. Unspecified roles
/// fall back to sorted level order (first = control).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case: Option<String>,
}

impl TargetSpec {
    pub fn named(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            control: None,
            case: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub name: String,
    pub control_level: String,
    pub case_level: String,
    pub labels: Vec<Group>,
}

impl Target {
    pub fn level(&self, group: Group) -> &str {
        match group {
            Group::Control => &self.control_level,
            Group::Case => &self.case_level,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClinicalTable {
    sample_ids: Vec<String>,
    covariates: Vec<Covariate>,
    target: Target,
}

fn level_order(levels: &mut [String]) {
    let numeric: Option<Vec<f64>> = levels.iter().map(|l| l.parse::<f64>().ok()).collect();
    if numeric.is_some() {
        levels.sort_by(|a, b| {
            let (x, y): (f64, f64) = (a.parse().unwrap(), b.parse().unwrap());
            x.total_cmp(&y).then_with(|| a.cmp(b))
        });
    } else {
        levels.sort();
    }
}

fn is_missing(cell: &str) -> bool {
    MISSING_TOKENS.contains(&cell)
}

impl ClinicalTable {
    pub fn new(sample_ids: Vec<String>, covariates: Vec<Covariate>, target: Target) -> Result<Self> {
        if let Some(id) = first_duplicate(&sample_ids) {
            return Err(Error::Structure(format!("duplicate sample id '{id}' in clinical table")));
        }
        let n = sample_ids.len();
        let lengths_ok = target.labels.len() == n
            && covariates.iter().all(|c| match &c.values {
                CovariateValues::Categorical { codes, .. } => codes.len() == n,
                CovariateValues::Numeric(v) => v.len() == n,
            });
        if !lengths_ok {
            return Err(Error::Structure("clinical column lengths differ from sample count".into()));
        }
        Ok(Self {
            sample_ids,
            covariates,
            target,
        })
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn covariates(&self) -> &[Covariate] {
        &self.covariates
    }

    pub fn covariate(&self, name: &str) -> Option<&Covariate> {
        self.covariates.iter().find(|c| c.name == name)
    }

    pub fn target(&self) -> &Target {
        &self.target
    }

    pub fn labels(&self) -> &[Group] {
        &self.target.labels
    }

    /// Reorder (and restrict) the table to `sample_ids`. Every id must be present.
    pub fn align_to(&self, sample_ids: &[String]) -> Result<ClinicalTable> {
        let index: HashMap<&str, usize> = self
            .sample_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let order = sample_ids
            .iter()
            .map(|id| {
                index.get(id.as_str()).copied().ok_or_else(|| {
                    Error::Structure(format!("sample '{id}' missing from clinical table"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let covariates = self.covariates.iter().map(|c| c.select(&order)).collect();
        let target = Target {
            labels: order.iter().map(|&i| self.target.labels[i]).collect(),
            ..self.target.clone()
        };
        ClinicalTable::new(sample_ids.to_vec(), covariates, target)
    }

    /// Write the table back out (target first, then covariates in table order).
    pub fn write(&self, path: &Path, delimiter: u8) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::WriterBuilder::new()
            .delimiter(delimiter)
            .from_writer(BufWriter::new(file));
        let mut header = vec!["sample_id".to_string(), self.target.name.clone()];
        header.extend(self.covariates.iter().map(|c| c.name.clone()));
        w.write_record(&header).map_err(|e| Error::csv(path, e))?;
        for (s, id) in self.sample_ids.iter().enumerate() {
            let mut row = vec![
                id.clone(),
                self.target.level(self.target.labels[s]).to_string(),
            ];
            for c in &self.covariates {
                row.push(match c.observation(s) {
                    Observation::Level(l) => l.to_string(),
                    Observation::Number(v) => v.to_string(),
                    Observation::Missing => "NA".to_string(),
                });
            }
            w.write_record(&row).map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Read a clinical table: header row of covariate names, first column sample ids.
/// Every column except the target must be declared in `schema`.
pub fn load_clinical(
    path: &Path,
    delimiter: u8,
    schema: &ClinicalSchema,
    target: &TargetSpec,
) -> Result<ClinicalTable> {
    let records = read_records(path, delimiter)?;
    let Some((header, body)) = records.split_first() else {
        return Err(Error::Structure(format!("{}: empty clinical file", path.display())));
    };
    let names: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    if let Some(dup) = first_duplicate(&names) {
        return Err(Error::Structure(format!("duplicate clinical column '{dup}'")));
    }
    let undeclared: Vec<&str> = names
        .iter()
        .filter(|n| **n != target.name && !schema.contains_key(n.as_str()))
        .map(String::as_str)
        .collect();
    if !undeclared.is_empty() {
        return Err(Error::Config(format!(
            "clinical columns not declared in the schema: {}",
            undeclared.join(", ")
        )));
    }
    let Some(target_col) = names.iter().position(|n| *n == target.name) else {
        return Err(Error::Config(format!(
            "target covariate '{}' not found in {}",
            target.name,
            path.display()
        )));
    };

    let mut sample_ids = Vec::with_capacity(body.len());
    let mut cells: Vec<Vec<String>> = vec![Vec::with_capacity(body.len()); names.len()];
    for (r, record) in body.iter().enumerate() {
        if record.len() != names.len() + 1 {
            return Err(parse_error(
                path,
                r + 2,
                record.len().min(names.len() + 1),
                format!("expected {} fields, found {}", names.len() + 1, record.len()),
            ));
        }
        sample_ids.push(record[0].trim().to_string());
        for (c, cell) in record.iter().skip(1).enumerate() {
            cells[c].push(cell.trim().to_string());
        }
    }

    // target
    let target_cells = &cells[target_col];
    if let Some(row) = target_cells.iter().position(|c| is_missing(c)) {
        return Err(Error::Config(format!(
            "sample '{}' has no value for target '{}'",
            sample_ids[row], target.name
        )));
    }
    let mut observed: Vec<String> = target_cells
        .iter()
        .cloned()
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    level_order(&mut observed);
    if observed.len() != 2 {
        return Err(Error::Config(format!(
            "target '{}' must have exactly 2 levels, found {}: {}",
            target.name,
            observed.len(),
            observed.join(", ")
        )));
    }
    let (control_level, case_level) = match (&target.control, &target.case) {
        (Some(ctl), Some(case)) => (ctl.clone(), case.clone()),
        (Some(ctl), None) => {
            let other = observed.iter().find(|l| *l != ctl).cloned().unwrap_or_default();
            (ctl.clone(), other)
        }
        (None, Some(case)) => {
            let other = observed.iter().find(|l| *l != case).cloned().unwrap_or_default();
            (other, case.clone())
        }
        (None, None) => (observed[0].clone(), observed[1].clone()),
    };
    if control_level == case_level || !observed.contains(&control_level) || !observed.contains(&case_level)
    {
        return Err(Error::Config(format!(
            "target roles control='{control_level}', case='{case_level}' do not match observed levels {}",
            observed.join(", ")
        )));
    }
    let labels = target_cells
        .iter()
        .map(|c| {
            if *c == control_level {
                Group::Control
            } else {
                Group::Case
            }
        })
        .collect();
    let target = Target {
        name: target.name.clone(),
        control_level,
        case_level,
        labels,
    };

    let mut covariates = Vec::new();
    for (c, name) in names.iter().enumerate() {
        if c == target_col {
            continue;
        }
        let decl = &schema[name.as_str()];
        let column = &cells[c];
        let values = match decl.kind {
            CovariateKind::Numeric => {
                let mut out = Vec::with_capacity(column.len());
                for (r, cell) in column.iter().enumerate() {
                    if is_missing(cell) {
                        out.push(None);
                        continue;
                    }
                    let v: f64 = cell.parse().map_err(|_| {
                        parse_error(path, r + 2, c + 2, format!("'{name}': not a number: '{cell}'"))
                    })?;
                    if !v.is_finite() {
                        return Err(parse_error(path, r + 2, c + 2, format!("'{name}': non-finite value")));
                    }
                    out.push(Some(v));
                }
                CovariateValues::Numeric(out)
            }
            CovariateKind::Categorical => {
                let levels = match &decl.levels {
                    Some(levels) => levels.clone(),
                    None => {
                        let mut levels: Vec<String> = column
                            .iter()
                            .filter(|c| !is_missing(c))
                            .cloned()
                            .collect::<HashSet<_>>()
                            .into_iter()
                            .collect();
                        level_order(&mut levels);
                        levels
                    }
                };
                let lookup: HashMap<&str, usize> =
                    levels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
                let mut codes = Vec::with_capacity(column.len());
                for (r, cell) in column.iter().enumerate() {
                    if is_missing(cell) {
                        codes.push(None);
                        continue;
                    }
                    let code = lookup.get(cell.as_str()).copied().ok_or_else(|| {
                        parse_error(
                            path,
                            r + 2,
                            c + 2,
                            format!("'{name}': level '{cell}' is not one of the declared levels"),
                        )
                    })?;
                    codes.push(Some(code));
                }
                CovariateValues::Categorical { levels, codes }
            }
        };
        covariates.push(Covariate {
            name: name.clone(),
            values,
        });
    }

    ClinicalTable::new(sample_ids, covariates, target)
}

/// Replace every value `v` with `log2(v + 1)`.
pub fn log_normalize(raw: &CohortMatrix) -> Result<CohortMatrix> {
    if let Some(pos) = raw.values.iter().position(|v| *v < 0.0) {
        let n = raw.n_samples();
        return Err(Error::Domain(format!(
            "negative value {} for feature '{}' in sample '{}'",
            raw.values[pos],
            raw.feature_ids[pos / n],
            raw.sample_ids[pos % n]
        )));
    }
    Ok(CohortMatrix {
        values: raw.values.iter().map(|v| (v + 1.0).log2()).collect(),
        ..raw.clone()
    })
}

/// Keep features whose value exceeds `threshold` in at least `ceil(fraction * n_samples)`
/// samples. Feature order is preserved.
pub fn filter_features(m: &CohortMatrix, threshold: f64, fraction: f64) -> Result<CohortMatrix> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "filter fraction must lie in (0, 1], got {fraction}"
        )));
    }
    // the small offset keeps e.g. 0.7 * 10 from rounding up to 8
    let needed = (fraction * m.n_samples() as f64 - 1e-9).ceil() as usize;
    let mut feature_ids = Vec::new();
    let mut values = Vec::new();
    for (f, id) in m.feature_ids.iter().enumerate() {
        let row = m.row(f);
        if row.iter().filter(|v| **v > threshold).count() >= needed {
            feature_ids.push(id.clone());
            values.extend_from_slice(row);
        }
    }
    Ok(CohortMatrix {
        feature_ids,
        sample_ids: m.sample_ids.clone(),
        values,
    })
}

/// Centered nuisance design: one column per non-reference observed level of each
/// categorical covariate and one per numeric covariate.
fn nuisance_design(clin: &ClinicalTable, names: &[String]) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let n = clin.n_samples();
    let mut labels = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for name in names {
        if *name == clin.target.name {
            return Err(Error::Config(format!(
                "target '{name}' cannot be removed as a nuisance covariate"
            )));
        }
        let cov = clin
            .covariate(name)
            .ok_or_else(|| Error::Config(format!("unknown covariate '{name}'")))?;
        if let Some(s) = (0..n).find(|&s| cov.observation(s) == Observation::Missing) {
            return Err(Error::Domain(format!(
                "covariate '{name}' is missing for sample '{}'",
                clin.sample_ids[s]
            )));
        }
        match &cov.values {
            CovariateValues::Numeric(v) => {
                labels.push(name.clone());
                columns.push(v.iter().map(|x| x.unwrap()).collect());
            }
            CovariateValues::Categorical { levels, codes } => {
                let mut used: Vec<usize> = codes.iter().map(|c| c.unwrap()).collect();
                used.sort_unstable();
                used.dedup();
                for &level in used.iter().skip(1) {
                    labels.push(format!("{name}={}", levels[level]));
                    columns.push(
                        codes
                            .iter()
                            .map(|c| if *c == Some(level) { 1.0 } else { 0.0 })
                            .collect(),
                    );
                }
            }
        }
    }
    for col in &mut columns {
        let mean = col.iter().sum::<f64>() / n as f64;
        col.iter_mut().for_each(|x| *x -= mean);
    }
    Ok((labels, columns))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Orthonormal basis of the design columns by modified Gram-Schmidt with one
/// re-orthogonalization pass. A column that collapses is collinear with earlier ones.
fn orthonormal_basis(labels: &[String], columns: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(columns.len());
    let mut collinear = Vec::new();
    for (label, col) in labels.iter().zip(columns) {
        let norm0 = dot(col, col).sqrt();
        let mut v = col.clone();
        for _ in 0..2 {
            for q in &basis {
                let proj = dot(q, &v);
                v.iter_mut().zip(q).for_each(|(x, qi)| *x -= proj * qi);
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm0 == 0.0 || norm <= 1e-9 * norm0 {
            collinear.push(label.as_str());
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    if !collinear.is_empty() {
        return Err(Error::Domain(format!(
            "rank-deficient covariate design; collinear (or constant) columns: {}",
            collinear.join(", ")
        )));
    }
    Ok(basis)
}

/// Subtract each feature's least-squares fit on the named nuisance covariates, keeping
/// the intercept. `clin` must be aligned to the matrix samples.
///
/// All design columns are centered, so the intercept estimate is the row mean and is
/// untouched by the subtraction.
pub fn remove_covariate_effects(
    m: &CohortMatrix,
    clin: &ClinicalTable,
    covariate_names: &[String],
) -> Result<CohortMatrix> {
    if clin.sample_ids != m.sample_ids {
        return Err(Error::Structure(
            "clinical table is not aligned with the matrix samples".into(),
        ));
    }
    if covariate_names.is_empty() {
        return Ok(m.clone());
    }
    let (labels, columns) = nuisance_design(clin, covariate_names)?;
    let basis = orthonormal_basis(&labels, &columns)?;
    let n = m.n_samples();
    let mut values = vec![0.0; m.values.len()];
    values
        .par_chunks_mut(n.max(1))
        .zip(m.values.par_chunks(n.max(1)))
        .for_each(|(out, row)| {
            out.copy_from_slice(row);
            for q in &basis {
                let proj = dot(q, out);
                out.iter_mut().zip(q).for_each(|(x, qi)| *x -= proj * qi);
            }
        });
    Ok(CohortMatrix {
        values,
        ..m.clone()
    })
}
