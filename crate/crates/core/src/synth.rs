//! Synthetic cohorts with planted mislabeled samples, and detection scoring.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::{Inputs, Preprocess, RunConfig};
use crate::dekt::format_number;
use crate::error::{Error, Result};
use crate::ingest::{CovariateDecl, Group, TargetSpec};
use crate::model_select::{HyperGrid, SolverSettings};
use crate::stats::TestRule;

pub const CONTROL_LEVEL: &str = "CTRL";
pub const CASE_LEVEL: &str = "CASE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_control: usize,
    pub n_case: usize,
    pub n_features: usize,
    pub n_informative: usize,
    /// Distance between the class means over the informative features, in
    /// within-class standard deviations. Each informative feature is shifted by
    /// `separation / sqrt(n_informative)`.
    pub separation: f64,
    pub planted_per_group: usize,
    /// Shift of every numeric clinical covariate between the classes, in SD units.
    pub covariate_effect: f64,
    /// Fraction of numeric clinical cells left missing.
    pub missing_rate: f64,
    /// Per-plate offset added to every feature (SD units).
    pub batch_effect: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_control: 200,
            n_case: 200,
            n_features: 50,
            n_informative: 10,
            separation: 4.0,
            planted_per_group: 5,
            covariate_effect: 1.0,
            missing_rate: 0.02,
            batch_effect: 0.0,
            seed: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.planted_per_group > self.n_control || self.planted_per_group > self.n_case {
            return Err(Error::Config("planted samples exceed a group size".into()));
        }
        if self.n_informative > self.n_features || self.n_features == 0 {
            return Err(Error::Config(
                "n_informative must not exceed n_features, and n_features must be positive".into(),
            ));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::Config("separation must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(Error::Config("missing_rate must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<SynthSpec> {
        let spec: SynthSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// A planted sample: nominal label differs from the class its data was drawn from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plant {
    pub sample_id: String,
    pub given_label: String,
    pub true_label: String,
}

/// Numeric clinical covariate: control mean, SD and direction of the case shift.
struct NumericCov {
    name: &'static str,
    mean: f64,
    sd: f64,
    direction: f64,
}

const NUMERIC: [NumericCov; 4] = [
    NumericCov { name: "age", mean: 60.0, sd: 8.0, direction: 1.0 },
    NumericCov { name: "motor_score", mean: 10.0, sd: 4.0, direction: 1.0 },
    NumericCov { name: "cell_fraction", mean: 0.12, sd: 0.03, direction: -1.0 },
    NumericCov { name: "sleep_score", mean: 3.0, sd: 2.0, direction: 1.0 },
];

const SYMPTOM_CONTROL: [f64; 4] = [0.6, 0.25, 0.1, 0.05];
const SYMPTOM_CASE: [f64; 4] = [0.2, 0.3, 0.3, 0.2];
const PLATES: [&str; 4] = ["P1", "P2", "P3", "P4"];

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

fn pick(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Generated cohort held in memory.
#[derive(Debug, Clone)]
pub struct SynthCohort {
    pub sample_ids: Vec<String>,
    pub feature_ids: Vec<String>,
    /// Row-major by feature.
    pub values: Vec<f64>,
    pub given: Vec<Group>,
    pub truth: Vec<Group>,
    /// Header and rows of the clinical table (target column first).
    pub clinical_header: Vec<String>,
    pub clinical_rows: Vec<Vec<String>>,
    pub dekt_rows: Vec<[String; 4]>,
    pub plants: Vec<Plant>,
}

pub fn generate(spec: &SynthSpec) -> Result<SynthCohort> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_control + spec.n_case;
    let given: Vec<Group> = (0..n)
        .map(|i| if i < spec.n_control { Group::Control } else { Group::Case })
        .collect();
    let mut truth = given.clone();
    for (lo, hi) in [(0, spec.n_control), (spec.n_control, n)] {
        let mut members: Vec<usize> = (lo..hi).collect();
        members.shuffle(&mut rng);
        for &i in &members[..spec.planted_per_group] {
            truth[i] = given[i].other();
        }
    }
    let width = n.to_string().len();
    let sample_ids: Vec<String> = (0..n).map(|i| format!("S{:0width$}", i + 1)).collect();
    let fwidth = spec.n_features.to_string().len();
    let feature_ids: Vec<String> = (0..spec.n_features).map(|j| format!("F{:0fwidth$}", j + 1)).collect();

    let plate: Vec<usize> = (0..n).map(|_| rng.random_range(0..PLATES.len())).collect();
    let plate_offset: Vec<f64> = (0..PLATES.len())
        .map(|k| spec.batch_effect * (k as f64 - 1.5))
        .collect();
    let shift = if spec.n_informative > 0 {
        spec.separation / (spec.n_informative as f64).sqrt()
    } else {
        0.0
    };
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let mut values = Vec::with_capacity(spec.n_features * n);
    for j in 0..spec.n_features {
        for s in 0..n {
            let mean = if j < spec.n_informative && truth[s] == Group::Case { shift } else { 0.0 };
            values.push(round3(mean + plate_offset[plate[s]] + std_normal.sample(&mut rng)));
        }
    }

    let mut clinical_header = vec!["sample_id".to_string(), "diagnosis".to_string()];
    clinical_header.extend(NUMERIC.iter().map(|c| c.name.to_string()));
    clinical_header.extend(["sex", "symptom", "plate"].map(String::from));
    let mut clinical_rows = Vec::with_capacity(n);
    for s in 0..n {
        let case = truth[s] == Group::Case;
        let mut row = vec![
            sample_ids[s].clone(),
            if given[s] == Group::Case { CASE_LEVEL } else { CONTROL_LEVEL }.to_string(),
        ];
        for c in &NUMERIC {
            let mean = c.mean + if case { c.direction * spec.covariate_effect * c.sd } else { 0.0 };
            let v = Normal::new(mean, c.sd).expect("valid normal").sample(&mut rng);
            let missing = rng.random::<f64>() < spec.missing_rate;
            row.push(if missing { "NA".into() } else { format_number(v) });
        }
        let male = rng.random::<f64>() < if case { 0.65 } else { 0.45 };
        row.push(if male { "Male" } else { "Female" }.to_string());
        let probs = if case { &SYMPTOM_CASE } else { &SYMPTOM_CONTROL };
        row.push(pick(&mut rng, probs).to_string());
        row.push(PLATES[plate[s]].to_string());
        clinical_rows.push(row);
    }

    let mut dekt_rows = Vec::new();
    for c in &NUMERIC {
        let mid = c.mean + c.direction * spec.covariate_effect * c.sd / 2.0;
        let op = if c.direction > 0.0 { ">" } else { "<" };
        dekt_rows.push([
            CASE_LEVEL.to_string(),
            c.name.to_string(),
            format!("{op}{}", format_number(mid)),
            "+".to_string(),
        ]);
    }
    dekt_rows.push([CONTROL_LEVEL.into(), "sex".into(), "Male".into(), "+".into()]);
    dekt_rows.push([CASE_LEVEL.into(), "symptom".into(), "1,2,3".into(), "+".into()]);

    let level = |g: Group| if g == Group::Case { CASE_LEVEL } else { CONTROL_LEVEL };
    let plants = (0..n)
        .filter(|&s| truth[s] != given[s])
        .map(|s| Plant {
            sample_id: sample_ids[s].clone(),
            given_label: level(given[s]).into(),
            true_label: level(truth[s]).into(),
        })
        .collect();
    Ok(SynthCohort {
        sample_ids,
        feature_ids,
        values,
        given,
        truth,
        clinical_header,
        clinical_rows,
        dekt_rows,
        plants,
    })
}

/// Configuration matching a simulated cohort written by [`simulate`].
///
/// Costs stop at 1: on overlapping synthetic classes the linear fits at larger costs
/// need millions of solver iterations and are never the selected cell.
pub fn example_config(spec: &SynthSpec) -> RunConfig {
    let mut schema = BTreeMap::new();
    for c in &NUMERIC {
        schema.insert(c.name.to_string(), CovariateDecl::numeric());
    }
    schema.insert("sex".into(), CovariateDecl::categorical());
    schema.insert(
        "symptom".into(),
        CovariateDecl {
            levels: Some(["0", "1", "2", "3"].map(String::from).to_vec()),
            ..CovariateDecl::categorical()
        },
    );
    schema.insert("plate".into(), CovariateDecl::categorical());
    RunConfig {
        inputs: Inputs {
            matrix: PathBuf::from("matrix.tsv"),
            clinical: PathBuf::from("clinical.tsv"),
            dekt: PathBuf::from("dekt.csv"),
        },
        target: TargetSpec {
            name: "diagnosis".into(),
            control: Some(CONTROL_LEVEL.into()),
            case: Some(CASE_LEVEL.into()),
        },
        schema,
        preprocess: Preprocess {
            normalize: false,
            filter: false,
            remove_covariates: if spec.batch_effect != 0.0 { vec!["plate".into()] } else { Vec::new() },
            ..Preprocess::default()
        },
        grid: HyperGrid {
            costs: vec![0.001, 0.01, 0.1, 1.0],
            ..HyperGrid::default()
        },
        solver: SolverSettings::default(),
        k_folds: 10,
        seed: spec.seed,
        alpha: 0.05,
        test_rule: TestRule::LargeCells,
        benjamini_hochberg: false,
        output_dir: PathBuf::from("run"),
        timestamp: Some("2000-01-01T00:00:00Z".into()),
    }
}

/// Write `matrix.tsv`, `clinical.tsv`, `dekt.csv`, `truth.csv` and `config.toml` into `out`.
pub fn simulate(spec: &SynthSpec, out: &Path) -> Result<SynthCohort> {
    let cohort = generate(spec)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let n = cohort.sample_ids.len();

    let path = out.join("matrix.tsv");
    let mut w = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .from_path(&path)
        .map_err(|e| Error::csv(&path, e))?;
    let mut header = vec!["feature_id".to_string()];
    header.extend(cohort.sample_ids.iter().cloned());
    w.write_record(&header).map_err(|e| Error::csv(&path, e))?;
    for (j, id) in cohort.feature_ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(cohort.values[j * n..(j + 1) * n].iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(|e| Error::csv(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = out.join("clinical.tsv");
    let mut w = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .from_path(&path)
        .map_err(|e| Error::csv(&path, e))?;
    w.write_record(&cohort.clinical_header).map_err(|e| Error::csv(&path, e))?;
    for row in &cohort.clinical_rows {
        w.write_record(row).map_err(|e| Error::csv(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = out.join("dekt.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::csv(&path, e))?;
    w.write_record(["Group", "Feature", "Value", "Sign"]).map_err(|e| Error::csv(&path, e))?;
    for row in &cohort.dekt_rows {
        w.write_record(row).map_err(|e| Error::csv(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = out.join("truth.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::csv(&path, e))?;
    for p in &cohort.plants {
        w.serialize(p).map_err(|e| Error::csv(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = out.join("config.toml");
    std::fs::write(&path, example_config(spec).to_toml()?).map_err(|e| Error::io(&path, e))?;
    Ok(cohort)
}

pub fn load_truth(path: &Path) -> Result<Vec<Plant>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::csv(path, e)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    pub n_flagged: usize,
    pub n_truth: usize,
    pub true_positives: usize,
    /// 1 when nothing was flagged; see `precision_defined`.
    pub precision: f64,
    pub precision_defined: bool,
    pub recall: f64,
}

impl DetectionScore {
    pub fn precision_text(&self) -> String {
        if self.precision_defined {
            format!("{:.3}", self.precision)
        } else {
            "n/a".into()
        }
    }
}

pub fn score_detection<'a>(
    flagged: impl IntoIterator<Item = &'a str>,
    truth: impl IntoIterator<Item = &'a str>,
) -> DetectionScore {
    let flagged: BTreeSet<&str> = flagged.into_iter().collect();
    let truth: BTreeSet<&str> = truth.into_iter().collect();
    let tp = flagged.intersection(&truth).count();
    DetectionScore {
        n_flagged: flagged.len(),
        n_truth: truth.len(),
        true_positives: tp,
        precision: if flagged.is_empty() { 1.0 } else { tp as f64 / flagged.len() as f64 },
        precision_defined: !flagged.is_empty(),
        recall: if truth.is_empty() { 1.0 } else { tp as f64 / truth.len() as f64 },
    }
}
