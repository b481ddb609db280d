//! Final model fit, per-sample scoring and elbow-based anomaly selection.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ClinicalTable, CohortMatrix, Group};
use crate::model_select::{downsample, final_fit_seed, GridCell, SolverSettings};
use crate::svm::{train_svm, LabelMap, SvmModel};

/// Refit on the whole cohort (majority class downsampled) with the selected cell.
pub fn fit_final_model(
    m: &CohortMatrix,
    clin: &ClinicalTable,
    cell: &GridCell,
    seed: u64,
    solver: &SolverSettings,
) -> Result<SvmModel> {
    if clin.sample_ids() != m.sample_ids() {
        return Err(Error::Structure(
            "clinical table is not aligned with the matrix samples".into(),
        ));
    }
    let labels = clin.labels();
    let all: Vec<usize> = (0..labels.len()).collect();
    let train = downsample(&all, labels, final_fit_seed(seed))?;
    let rows = m.sample_rows();
    let x: Vec<Vec<f64>> = train.iter().map(|&i| rows[i].clone()).collect();
    let y: Vec<f64> = train.iter().map(|&i| labels[i].sign()).collect();
    let target = clin.target();
    let model = train_svm(&x, &y, cell.kernel, &solver.params(cell.cost))?;
    Ok(model.with_label_map(LabelMap {
        positive: target.case_level.clone(),
        negative: target.control_level.clone(),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub sample_id: String,
    pub decision_value: f64,
    pub distance: f64,
    pub predicted: Group,
}

/// Decision value, distance and predicted group for every sample (ties go to cases).
pub fn score_all(model: &SvmModel, m: &CohortMatrix) -> Result<Vec<SampleScore>> {
    if model.dimension() != m.n_features() {
        return Err(Error::Dimension {
            expected: model.dimension(),
            actual: m.n_features(),
        });
    }
    m.sample_rows()
        .par_iter()
        .zip(m.sample_ids())
        .map(|(x, id)| {
            let d = model.decision_value(x)?;
            Ok(SampleScore {
                sample_id: id.clone(),
                decision_value: d,
                distance: d.abs() / model.w_norm,
                predicted: if d >= 0.0 { Group::Case } else { Group::Control },
            })
        })
        .collect()
}

/// Knee of a non-increasing curve: the position (0-based) of the point farthest from the
/// chord joining the first and last points. Earliest position wins ties; a straight
/// curve returns the last position. `None` for fewer than three values.
pub fn find_curve_elbow(values: &[f64]) -> Option<usize> {
    let n = values.len();
    if n < 3 {
        return None;
    }
    let (first, last) = (values[0], values[n - 1]);
    let dx = (n - 1) as f64;
    let dy = last - first;
    let chord = dx.hypot(dy);
    let mut best = 0;
    let mut best_dist = f64::NEG_INFINITY;
    for (i, &v) in values.iter().enumerate() {
        let dist = (dx * (first - v) + i as f64 * dy).abs() / chord;
        if dist > best_dist {
            best = i;
            best_dist = dist;
        }
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if best_dist <= 1e-12 * (hi - lo) {
        return Some(n - 1);
    }
    Some(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyRecord {
    pub sample_id: String,
    pub given: Group,
    pub given_label: String,
    pub predicted: Group,
    pub predicted_label: String,
    pub decision_value: f64,
    pub distance: f64,
    pub flagged: bool,
    /// Elbow distance of the sample's given group (0 when the group had no elbow).
    pub group_threshold: f64,
}

impl AnomalyRecord {
    pub fn misclassified(&self) -> bool {
        self.given != self.predicted
    }
}

/// How the threshold of one given group was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSelection {
    pub group: Group,
    pub level: String,
    pub n_samples: usize,
    pub n_misclassified: usize,
    /// Distances of the misclassified samples, sorted descending.
    pub sorted_distances: Vec<f64>,
    /// Position of the elbow in `sorted_distances`; `None` when fewer than three
    /// samples were misclassified and all of them were flagged.
    pub elbow_position: Option<usize>,
    pub threshold: f64,
    pub n_flagged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalySelection {
    pub records: Vec<AnomalyRecord>,
    pub groups: Vec<GroupSelection>,
}

impl AnomalySelection {
    pub fn flagged(&self) -> impl Iterator<Item = &AnomalyRecord> {
        self.records.iter().filter(|r| r.flagged)
    }

    pub fn group(&self, group: Group) -> Option<&GroupSelection> {
        self.groups.iter().find(|g| g.group == group)
    }
}

/// Per given group, flag misclassified samples farther than the elbow of their sorted
/// distance curve. `scores` must follow the sample order of `clin`.
pub fn select_anomalies(scores: &[SampleScore], clin: &ClinicalTable) -> Result<AnomalySelection> {
    if scores.len() != clin.n_samples()
        || scores.iter().zip(clin.sample_ids()).any(|(s, id)| s.sample_id != *id)
    {
        return Err(Error::Structure(
            "scores are not aligned with the clinical table".into(),
        ));
    }
    let labels = clin.labels();
    let target = clin.target();
    let mut groups = Vec::new();
    let mut thresholds = [0.0; 2];
    let mut flag_all = [false; 2];
    for (slot, group) in [Group::Control, Group::Case].into_iter().enumerate() {
        let mut sorted: Vec<f64> = scores
            .iter()
            .zip(labels)
            .filter(|(s, &g)| g == group && s.predicted != g)
            .map(|(s, _)| s.distance)
            .collect();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let elbow = find_curve_elbow(&sorted);
        thresholds[slot] = elbow.map_or(0.0, |p| sorted[p]);
        flag_all[slot] = elbow.is_none();
        groups.push(GroupSelection {
            group,
            level: target.level(group).to_string(),
            n_samples: labels.iter().filter(|&&g| g == group).count(),
            n_misclassified: sorted.len(),
            sorted_distances: sorted,
            elbow_position: elbow,
            threshold: thresholds[slot],
            n_flagged: 0,
        });
    }
    let records: Vec<AnomalyRecord> = scores
        .iter()
        .zip(labels)
        .map(|(s, &given)| {
            let slot = usize::from(given == Group::Case);
            let wrong = s.predicted != given;
            AnomalyRecord {
                sample_id: s.sample_id.clone(),
                given,
                given_label: target.level(given).to_string(),
                predicted: s.predicted,
                predicted_label: target.level(s.predicted).to_string(),
                decision_value: s.decision_value,
                distance: s.distance,
                flagged: wrong && (flag_all[slot] || s.distance > thresholds[slot]),
                group_threshold: thresholds[slot],
            }
        })
        .collect();
    for g in &mut groups {
        g.n_flagged = records.iter().filter(|r| r.flagged && r.given == g.group).count();
    }
    Ok(AnomalySelection { records, groups })
}

pub fn write_anomalies_csv(records: &[AnomalyRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record([
        "sample_id",
        "given_label",
        "predicted_label",
        "decision_value",
        "distance",
        "group_threshold",
        "flagged",
    ])
    .map_err(|e| Error::csv(path, e))?;
    for r in records {
        w.write_record([
            r.sample_id.clone(),
            r.given_label.clone(),
            r.predicted_label.clone(),
            r.decision_value.to_string(),
            r.distance.to_string(),
            r.group_threshold.to_string(),
            r.flagged.to_string(),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{ClinicalTable, Target};
    use crate::svm::{KernelSpec, SmoParams};

    fn clinical(labels: &[Group]) -> ClinicalTable {
        let ids = (0..labels.len()).map(|i| format!("s{i}")).collect();
        ClinicalTable::new(
            ids,
            Vec::new(),
            Target {
                name: "diagnosis".into(),
                control_level: "HC".into(),
                case_level: "PD".into(),
                labels: labels.to_vec(),
            },
        )
        .unwrap()
    }

    fn score(i: usize, d: f64, predicted: Group) -> SampleScore {
        SampleScore {
            sample_id: format!("s{i}"),
            decision_value: if predicted == Group::Case { d } else { -d },
            distance: d,
            predicted,
        }
    }

    #[test]
    fn elbow_examples() {
        assert_eq!(find_curve_elbow(&[10.0, 1.0, 0.9, 0.8, 0.7]), Some(1));
        assert_eq!(find_curve_elbow(&[5.0, 4.0, 3.0, 2.0, 1.0]), Some(4));
        assert_eq!(find_curve_elbow(&[3.0, 2.0, 1.0]), Some(2));
        assert_eq!(find_curve_elbow(&[2.0, 2.0, 2.0, 2.0]), Some(3));
        assert_eq!(find_curve_elbow(&[2.0, 1.0]), None);
    }

    #[test]
    fn two_point_scores() {
        let x = vec![vec![-1.0, 0.0], vec![1.0, 0.0]];
        let model = train_svm(&x, &[-1.0, 1.0], KernelSpec::Linear, &SmoParams::with_cost(1000.0)).unwrap();
        let m = CohortMatrix::new(
            vec!["f1".into(), "f2".into()],
            vec!["a".into(), "b".into()],
            vec![-3.0, 0.0, 0.0, 0.0],
        )
        .unwrap();
        let s = score_all(&model, &m).unwrap();
        assert!((s[0].decision_value + 3.0).abs() < 1e-9);
        assert!((s[0].distance - 3.0).abs() < 1e-9);
        assert_eq!(s[0].predicted, Group::Control);
        assert!(s[1].distance.abs() < 1e-12);

        let exact = SvmModel { bias: 0.0, dual_coefs: vec![-0.5, 0.5], ..model };
        let s = score_all(&exact, &m).unwrap();
        assert_eq!(s[1].distance, 0.0);
        assert_eq!(s[1].predicted, Group::Case);
    }

    #[test]
    fn selection_flags_beyond_elbow_only() {
        let labels = vec![Group::Control; 8];
        let clin = clinical(&labels);
        let d = [10.0, 1.0, 0.9, 0.8, 0.7];
        let mut scores: Vec<SampleScore> =
            d.iter().enumerate().map(|(i, &d)| score(i, d, Group::Case)).collect();
        scores.extend((5..8).map(|i| score(i, 2.0, Group::Control)));
        let sel = select_anomalies(&scores, &clin).unwrap();
        let flagged: Vec<&str> = sel.flagged().map(|r| r.sample_id.as_str()).collect();
        assert_eq!(flagged, ["s0"]);
        assert_eq!(sel.records[1].group_threshold, 1.0);
        assert_eq!(sel.group(Group::Control).unwrap().n_misclassified, 5);
        assert_eq!(sel.group(Group::Case).unwrap().n_flagged, 0);
        assert_eq!(sel.records[0].predicted_label, "PD");
    }

    #[test]
    fn few_misclassified_are_all_flagged() {
        let labels = vec![Group::Case, Group::Case, Group::Case, Group::Control];
        let clin = clinical(&labels);
        let scores = vec![
            score(0, 0.5, Group::Control),
            score(1, 0.1, Group::Control),
            score(2, 3.0, Group::Case),
            score(3, 1.0, Group::Control),
        ];
        let sel = select_anomalies(&scores, &clin).unwrap();
        let flagged: Vec<&str> = sel.flagged().map(|r| r.sample_id.as_str()).collect();
        assert_eq!(flagged, ["s0", "s1"]);
        assert_eq!(sel.group(Group::Case).unwrap().elbow_position, None);
        assert_eq!(sel.group(Group::Control).unwrap().n_flagged, 0);
    }

    #[test]
    fn misaligned_scores_error() {
        let clin = clinical(&[Group::Case, Group::Control]);
        assert!(select_anomalies(&[score(1, 1.0, Group::Case)], &clin).is_err());
    }
}
