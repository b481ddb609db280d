//! Expert knowledge table: condition language, loading and per-sample evaluation.
//!
//! Each entry's condition describes the observation typical of cases. The control-typical
//! observation is its complement.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ClinicalTable, CovariateKind, CovariateValues, Group, Observation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            CmpOp::Lt => value < threshold,
            CmpOp::Le => value <= threshold,
            CmpOp::Gt => value > threshold,
            CmpOp::Ge => value >= threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Cmp { op: CmpOp, threshold: f64 },
    OneOf(Vec<String>),
    Equals(String),
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Cmp { op, threshold } => write!(f, "{}{}", op.symbol(), threshold),
            Condition::OneOf(items) => f.write_str(&items.join(",")),
            Condition::Equals(level) => f.write_str(level),
        }
    }
}

fn condition_error(offset: usize, message: impl Into<String>) -> Error {
    Error::Condition {
        offset,
        message: message.into(),
    }
}

fn leading_op(text: &str) -> Option<(CmpOp, usize)> {
    [("<=", CmpOp::Le), (">=", CmpOp::Ge), ("<", CmpOp::Lt), (">", CmpOp::Gt)]
        .into_iter()
        .find(|(sym, _)| text.starts_with(sym))
        .map(|(sym, op)| (op, sym.len()))
}

/// Parse a condition for a covariate of the given kind. Error offsets are byte
/// positions in `text`.
///
/// ```text
/// cond    := op number | list | literal
/// op      := "<=" | ">=" | "<" | ">"
/// list    := item ("," item)+
/// ```
pub fn parse_condition(text: &str, kind: CovariateKind) -> Result<Condition> {
    let start = text.len() - text.trim_start().len();
    let body = text.trim();
    if body.is_empty() {
        return Err(condition_error(start, "empty condition"));
    }
    match (leading_op(body), kind) {
        (Some((op, len)), CovariateKind::Numeric) => {
            let rest = &body[len..];
            let num_start = start + len + (rest.len() - rest.trim_start().len());
            let num = rest.trim();
            if num.is_empty() {
                return Err(condition_error(num_start, "missing number after operator"));
            }
            let threshold: f64 = num
                .parse()
                .map_err(|_| condition_error(num_start, format!("malformed number '{num}'")))?;
            if !threshold.is_finite() {
                return Err(condition_error(num_start, "threshold must be finite"));
            }
            Ok(Condition::Cmp { op, threshold })
        }
        (None, CovariateKind::Numeric) => Err(condition_error(
            start,
            "numeric covariates need a comparison (<, <=, >, >=)",
        )),
        (Some(_), CovariateKind::Categorical) => Err(condition_error(
            start,
            "comparison given for a categorical covariate",
        )),
        (None, CovariateKind::Categorical) => {
            if !body.contains(',') {
                return Ok(Condition::Equals(body.to_string()));
            }
            let mut items = Vec::new();
            let mut offset = start;
            for raw in body.split(',') {
                let item = raw.trim();
                if item.is_empty() {
                    return Err(condition_error(offset, "empty list item"));
                }
                items.push(item.to_string());
                offset += raw.len() + 1;
            }
            Ok(Condition::OneOf(items))
        }
    }
}

impl Condition {
    pub fn kind(&self) -> CovariateKind {
        match self {
            Condition::Cmp { .. } => CovariateKind::Numeric,
            _ => CovariateKind::Categorical,
        }
    }

    /// Whether a non-missing observation meets the condition; `None` when missing
    /// or of the other kind.
    pub fn matches(&self, observed: Observation<'_>) -> Option<bool> {
        match (self, observed) {
            (Condition::Cmp { op, threshold }, Observation::Number(v)) => Some(op.holds(v, *threshold)),
            (Condition::OneOf(items), Observation::Level(l)) => Some(items.iter().any(|i| i == l)),
            (Condition::Equals(level), Observation::Level(l)) => Some(level == l),
            _ => None,
        }
    }

    fn levels_mut(&mut self) -> Vec<&mut String> {
        match self {
            Condition::Cmp { .. } => Vec::new(),
            Condition::OneOf(items) => items.iter_mut().collect(),
            Condition::Equals(level) => vec![level],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RiskSign {
    #[serde(rename = "+")]
    Increases,
    #[serde(rename = "-")]
    Decreases,
}

impl RiskSign {
    pub fn parse(token: &str) -> Option<RiskSign> {
        match token.trim() {
            "+" => Some(RiskSign::Increases),
            "-" => Some(RiskSign::Decreases),
            _ => None,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            RiskSign::Increases => "+",
            RiskSign::Decreases => "-",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DektEntry {
    pub group: Group,
    /// Covariate name as it appears in the clinical table.
    pub feature: String,
    pub condition: Condition,
    pub sign: RiskSign,
}

impl DektEntry {
    pub fn condition_text(&self) -> String {
        self.condition.to_string()
    }
}

pub fn find_entry<'a>(dekt: &'a [DektEntry], feature: &str) -> Option<&'a DektEntry> {
    dekt.iter().find(|e| e.feature == feature)
}

fn resolve_group(token: &str, clin: &ClinicalTable) -> Option<Group> {
    let target = clin.target();
    let t = token.trim();
    if t == target.control_level || t.eq_ignore_ascii_case("control") {
        Some(Group::Control)
    } else if t == target.case_level || t.eq_ignore_ascii_case("case") {
        Some(Group::Case)
    } else if t.eq_ignore_ascii_case(&target.control_level) {
        Some(Group::Control)
    } else if t.eq_ignore_ascii_case(&target.case_level) {
        Some(Group::Case)
    } else {
        None
    }
}

fn resolve_feature<'a>(name: &str, clin: &'a ClinicalTable) -> Option<&'a crate::ingest::Covariate> {
    let name = name.trim();
    clin.covariate(name).or_else(|| {
        let mut hits = clin
            .covariates()
            .iter()
            .filter(|c| c.name.eq_ignore_ascii_case(name));
        match (hits.next(), hits.next()) {
            (Some(c), None) => Some(c),
            _ => None,
        }
    })
}

fn resolve_level(level: &mut String, levels: &[String]) -> bool {
    if levels.contains(level) {
        return true;
    }
    let mut hits = levels.iter().filter(|l| l.eq_ignore_ascii_case(level));
    match (hits.next(), hits.next()) {
        (Some(l), None) => {
            *level = l.clone();
            true
        }
        _ => false,
    }
}

/// Parse one row against the clinical table; names and levels are matched exactly,
/// then case-insensitively, and stored in their clinical spelling.
fn parse_row(fields: &[&str], clin: &ClinicalTable) -> std::result::Result<DektEntry, String> {
    let [group, feature, value, sign] = fields else {
        return Err(format!("expected 4 fields, found {}", fields.len()));
    };
    let group = resolve_group(group, clin).ok_or_else(|| {
        let t = clin.target();
        format!(
            "unknown group '{group}' (expected {}, {}, control or case)",
            t.control_level, t.case_level
        )
    })?;
    if feature.trim() == clin.target().name {
        return Err(format!("feature '{}' is the target covariate", feature.trim()));
    }
    let cov = resolve_feature(feature, clin).ok_or_else(|| format!("unknown feature '{}'", feature.trim()))?;
    let mut condition = parse_condition(value, cov.kind()).map_err(|e| e.to_string())?;
    if let CovariateValues::Categorical { levels, .. } = &cov.values {
        for level in condition.levels_mut() {
            if !resolve_level(level, levels) {
                return Err(format!("'{level}' is not a level of '{}'", cov.name));
            }
        }
    }
    let sign = RiskSign::parse(sign).ok_or_else(|| format!("invalid sign '{}' (expected + or -)", sign.trim()))?;
    Ok(DektEntry {
        group,
        feature: cov.name.clone(),
        condition,
        sign,
    })
}

/// Read a `Group,Feature,Value,Sign` CSV and validate it against the clinical table.
/// All bad rows are reported together.
pub fn load_dekt(path: &Path, clin: &ClinicalTable) -> Result<Vec<DektEntry>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let header = reader.headers().map_err(|e| Error::csv(path, e))?;
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != ["Group", "Feature", "Value", "Sign"] {
        return Err(Error::Structure(format!(
            "{}: header must be Group,Feature,Value,Sign, found {}",
            path.display(),
            names.join(",")
        )));
    }
    let mut entries: Vec<DektEntry> = Vec::new();
    let mut first_row: Vec<usize> = Vec::new();
    let mut problems = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::csv(path, e))?;
        let fields: Vec<&str> = record.iter().collect();
        match parse_row(&fields, clin) {
            Ok(entry) => {
                if let Some(prev) = entries.iter().position(|e| e.feature == entry.feature) {
                    problems.push(format!(
                        "line {line}: duplicate feature '{}' (first on line {})",
                        entry.feature, first_row[prev]
                    ));
                } else {
                    entries.push(entry);
                    first_row.push(line);
                }
            }
            Err(message) => problems.push(format!("line {line}: {message}")),
        }
    }
    if !problems.is_empty() {
        return Err(Error::Structure(format!(
            "{}: {}",
            path.display(),
            problems.join("; ")
        )));
    }
    Ok(entries)
}

pub fn write_dekt(entries: &[DektEntry], clin: &ClinicalTable, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["Group", "Feature", "Value", "Sign"])
        .map_err(|e| Error::csv(path, e))?;
    for e in entries {
        w.write_record([
            clin.target().level(e.group),
            &e.feature,
            &e.condition_text(),
            e.sign.symbol(),
        ])
        .map_err(|err| Error::csv(path, err))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Which group a flagged sample is being moved toward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    TowardCase,
    TowardControl,
}

impl Direction {
    /// Flagged controls move toward cases and vice versa.
    pub fn from_origin(origin: Group) -> Direction {
        match origin {
            Group::Control => Direction::TowardCase,
            Group::Case => Direction::TowardControl,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    Supports,
    Opposes,
    NotApplicable,
}

pub fn entry_supports(entry: &DektEntry, observed: Observation<'_>, direction: Direction) -> Support {
    match entry.condition.matches(observed) {
        None => Support::NotApplicable,
        Some(hit) => {
            if hit == (direction == Direction::TowardCase) {
                Support::Supports
            } else {
                Support::Opposes
            }
        }
    }
}

/// Observation as shown to readers: levels verbatim, numbers rounded to three decimals.
pub fn display_observation(observed: Observation<'_>) -> Option<String> {
    match observed {
        Observation::Level(l) => Some(l.to_string()),
        Observation::Number(v) => Some(format_number(v)),
        Observation::Missing => None,
    }
}

pub(crate) fn format_number(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    };
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Covariate, Target};
    use std::io::Write;

    fn clinical() -> ClinicalTable {
        ClinicalTable::new(
            vec!["s1".into(), "s2".into()],
            vec![
                Covariate {
                    name: "sex".into(),
                    values: CovariateValues::Categorical {
                        levels: vec!["Female".into(), "Male".into()],
                        codes: vec![Some(1), Some(0)],
                    },
                },
                Covariate {
                    name: "age".into(),
                    values: CovariateValues::Numeric(vec![Some(59.0), None]),
                },
            ],
            Target {
                name: "diagnosis".into(),
                control_level: "HC".into(),
                case_level: "PD".into(),
                labels: vec![Group::Control, Group::Case],
            },
        )
        .unwrap()
    }

    fn offset_of(r: Result<Condition>) -> usize {
        match r {
            Err(Error::Condition { offset, .. }) => offset,
            other => panic!("expected a condition error, got {other:?}"),
        }
    }

    #[test]
    fn parse_examples() {
        assert_eq!(
            parse_condition("<=0.09", CovariateKind::Numeric).unwrap(),
            Condition::Cmp { op: CmpOp::Le, threshold: 0.09 }
        );
        assert_eq!(
            parse_condition("1,2,3", CovariateKind::Categorical).unwrap(),
            Condition::OneOf(vec!["1".into(), "2".into(), "3".into()])
        );
        assert_eq!(
            parse_condition(" LRRK2 - Aff ", CovariateKind::Categorical).unwrap(),
            Condition::Equals("LRRK2 - Aff".into())
        );
        assert_eq!(offset_of(parse_condition(">=x", CovariateKind::Numeric)), 2);
        assert_eq!(offset_of(parse_condition("a,,b", CovariateKind::Categorical)), 2);
        assert_eq!(offset_of(parse_condition("a, ", CovariateKind::Categorical)), 2);
        assert_eq!(offset_of(parse_condition("Male", CovariateKind::Numeric)), 0);
        assert_eq!(offset_of(parse_condition(">3", CovariateKind::Categorical)), 0);
        assert_eq!(offset_of(parse_condition("   ", CovariateKind::Categorical)), 3);
        assert_eq!(offset_of(parse_condition("> inf", CovariateKind::Numeric)), 2);
    }

    #[test]
    fn render_round_trips() {
        for (text, kind) in [
            ("<=0.09", CovariateKind::Numeric),
            (">61", CovariateKind::Numeric),
            ("<-2.5", CovariateKind::Numeric),
            ("1,2,3", CovariateKind::Categorical),
            ("Male", CovariateKind::Categorical),
        ] {
            let c = parse_condition(text, kind).unwrap();
            assert_eq!(c.to_string(), text);
            assert_eq!(parse_condition(&c.to_string(), kind).unwrap(), c);
        }
        let tiny = parse_condition("<-1.5e-7", CovariateKind::Numeric).unwrap();
        assert_eq!(parse_condition(&tiny.to_string(), CovariateKind::Numeric).unwrap(), tiny);
    }

    #[test]
    fn support_examples() {
        let entry = DektEntry {
            group: Group::Case,
            feature: "b_cells_naive".into(),
            condition: parse_condition("<=0.09", CovariateKind::Numeric).unwrap(),
            sign: RiskSign::Increases,
        };
        let obs = Observation::Number(0.087);
        assert_eq!(entry_supports(&entry, obs, Direction::TowardCase), Support::Supports);
        assert_eq!(entry_supports(&entry, obs, Direction::TowardControl), Support::Opposes);
        assert_eq!(
            entry_supports(&entry, Observation::Missing, Direction::TowardCase),
            Support::NotApplicable
        );
        let age = DektEntry {
            condition: parse_condition(">61", CovariateKind::Numeric).unwrap(),
            feature: "age_at_baseline".into(),
            ..entry
        };
        assert_eq!(entry_supports(&age, Observation::Number(59.0), Direction::TowardCase), Support::Opposes);
    }

    #[test]
    fn load_resolves_names_and_levels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dekt.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "Group,Feature,Value,Sign\ncontrol,Sex,male,+\nPD,age,>61,+").unwrap();
        drop(f);
        let dekt = load_dekt(&path, &clinical()).unwrap();
        assert_eq!(dekt.len(), 2);
        assert_eq!(dekt[0].group, Group::Control);
        assert_eq!(dekt[0].feature, "sex");
        assert_eq!(dekt[0].condition, Condition::Equals("Male".into()));
        assert_eq!(dekt[0].sign, RiskSign::Increases);
        assert_eq!(dekt[1].group, Group::Case);
    }

    #[test]
    fn load_reports_every_bad_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dekt.csv");
        std::fs::write(
            &path,
            "Group,Feature,Value,Sign\ncontrol,bmi,>3,+\ncontrol,sex,Male,*\ncase,sex,Male,+\ncase,sex,Female,+\n",
        )
        .unwrap();
        let err = load_dekt(&path, &clinical()).unwrap_err().to_string();
        assert!(err.contains("line 2: unknown feature 'bmi'"), "{err}");
        assert!(err.contains("line 3: invalid sign"), "{err}");
        assert!(err.contains("line 5: duplicate feature 'sex' (first on line 4)"), "{err}");
    }

    #[test]
    fn header_only_file_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dekt.csv");
        std::fs::write(&path, "Group,Feature,Value,Sign\n").unwrap();
        assert!(load_dekt(&path, &clinical()).unwrap().is_empty());
    }

    #[test]
    fn unknown_level_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dekt.csv");
        std::fs::write(&path, "Group,Feature,Value,Sign\ncontrol,sex,Other,+\n").unwrap();
        assert!(load_dekt(&path, &clinical()).is_err());
    }

    #[test]
    fn number_display() {
        assert_eq!(format_number(0.0871), "0.087");
        assert_eq!(format_number(377.4), "377.4");
        assert_eq!(format_number(11.0), "11");
        assert_eq!(format_number(0.0004), "0");
        assert_eq!(format_number(-0.0004), "0");
    }
}
