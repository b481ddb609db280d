//! Run artifact, its JSON form, and the standalone HTML report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::anomaly::{AnomalyRecord, GroupSelection};
use crate::config::RunConfig;
use crate::dekt::{format_number, DektEntry, Support};
use crate::error::{Error, Result};
use crate::explain::{format_p, GroupReport, IndividualAnnotation};
use crate::ingest::Group;
use crate::model_select::CvResult;
use crate::svm::KernelSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub kernel: KernelSpec,
    pub cost: f64,
    pub n_support: usize,
    pub n_train: usize,
    pub w_norm: f64,
    pub bias: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSummary {
    pub n_samples: usize,
    pub n_features_input: usize,
    pub n_features_used: usize,
    pub normalized: bool,
    pub filtered: bool,
    pub removed_covariates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: RunConfig,
    pub seed: u64,
    /// SHA-256 of each input file, keyed by role.
    pub input_digests: BTreeMap<String, String>,
    pub tool_version: String,
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub provenance: Provenance,
    pub preprocessing: PreprocessSummary,
    pub cv: CvResult,
    pub model: ModelSummary,
    /// Every sample's score, in matrix order.
    pub samples: Vec<AnomalyRecord>,
    /// Flagged samples only.
    pub anomalies: Vec<AnomalyRecord>,
    pub groups: Vec<GroupSelection>,
    pub group_tests: Vec<GroupReport>,
    pub annotations: Vec<IndividualAnnotation>,
    pub dekt: Vec<DektEntry>,
    pub warnings: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

impl RunArtifact {
    /// Structural checks: one annotation per flagged sample, well-formed digests.
    pub fn validate(&self) -> Result<()> {
        for a in &self.anomalies {
            let n = self.annotations.iter().filter(|x| x.sample_id == a.sample_id).count();
            if n != 1 {
                return Err(Error::Structure(format!(
                    "flagged sample '{}' has {n} annotations",
                    a.sample_id
                )));
            }
        }
        if self.annotations.len() != self.anomalies.len() {
            return Err(Error::Structure("annotations for unflagged samples".into()));
        }
        for (role, d) in &self.provenance.input_digests {
            if d.len() != 64 || !d.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(Error::Structure(format!("digest of {role} is not 64 hex characters")));
            }
        }
        Ok(())
    }
}

pub fn export_json(artifact: &RunArtifact) -> Result<String> {
    let mut text = serde_json::to_string_pretty(artifact)?;
    text.push('\n');
    Ok(text)
}

pub fn import_json(text: &str) -> Result<RunArtifact> {
    Ok(serde_json::from_str(text)?)
}

pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// Quantile by linear interpolation between order statistics (`sorted` ascending).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
struct BoxStats {
    q1: f64,
    median: f64,
    q3: f64,
    whisker_lo: f64,
    whisker_hi: f64,
    outliers: Vec<f64>,
    mean: f64,
}

fn box_stats(values: &[f64]) -> BoxStats {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let (q1, median, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
    let iqr = q3 - q1;
    let (fence_lo, fence_hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = v.iter().copied().filter(|x| *x >= fence_lo && *x <= fence_hi).collect();
    BoxStats {
        q1,
        median,
        q3,
        whisker_lo: inside.first().copied().unwrap_or(q1),
        whisker_hi: inside.last().copied().unwrap_or(q3),
        outliers: v.iter().copied().filter(|x| *x < fence_lo || *x > fence_hi).collect(),
        mean: v.iter().sum::<f64>() / v.len() as f64,
    }
}

const PLOT_W: f64 = 640.0;
const PLOT_H: f64 = 400.0;

/// Two box-and-whisker glyphs (flagged, origin) with means, outliers and p-value stars.
pub fn boxplot_svg(
    flagged: &[f64],
    origin: &[f64],
    labels: (&str, &str),
    covariate: &str,
    expectation: &str,
    p: f64,
) -> Result<String> {
    if flagged.is_empty() || origin.is_empty() {
        return Err(Error::Domain("boxplot needs values in both groups".into()));
    }
    let stats = [box_stats(flagged), box_stats(origin)];
    let all = flagged.iter().chain(origin);
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = if hi > lo { (hi - lo) * 0.08 } else { lo.abs().max(1.0) * 0.5 };
    let (y_min, y_max) = (lo - pad, hi + pad);
    let (top, bottom, left, right) = (70.0, 340.0, 90.0, 610.0);
    let y = |v: f64| bottom - (v - y_min) / (y_max - y_min) * (bottom - top);

    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg class="boxplot" viewBox="0 0 {PLOT_W} {PLOT_H}" width="{PLOT_W}" height="{PLOT_H}" role="img">"#
    );
    let _ = write!(
        s,
        r#"<text x="320" y="24" text-anchor="middle" font-size="16" font-weight="bold">{}: {}</text>"#,
        escape(covariate),
        escape(expectation)
    );
    let star = stars(p);
    let _ = write!(
        s,
        r#"<text x="320" y="48" text-anchor="middle" font-size="13">Mann-Whitney P = {}{}</text>"#,
        format_p(p),
        if star.is_empty() { String::new() } else { format!(" {star}") }
    );
    let _ = write!(
        s,
        r##"<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="#333"/>"##
    );
    for i in 0..=4 {
        let v = y_min + (y_max - y_min) * i as f64 / 4.0;
        let yy = y(v);
        let _ = write!(
            s,
            r##"<line x1="{:.2}" y1="{yy:.2}" x2="{left}" y2="{yy:.2}" stroke="#333"/><text x="{:.2}" y="{:.2}" text-anchor="end" font-size="11">{}</text>"##,
            left - 5.0,
            left - 8.0,
            yy + 4.0,
            format_number(v)
        );
    }
    let names = [labels.0, labels.1];
    let counts = [flagged.len(), origin.len()];
    let fills = ["#e07a5f", "#81b29a"];
    for (k, b) in stats.iter().enumerate() {
        let cx = left + (right - left) * (0.25 + 0.5 * k as f64);
        let half = 60.0;
        let _ = write!(
            s,
            r##"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="#333"/><line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="#333"/>"##,
            y(b.whisker_hi),
            y(b.q3),
            y(b.q1),
            y(b.whisker_lo)
        );
        for w in [b.whisker_lo, b.whisker_hi] {
            let _ = write!(
                s,
                r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#333"/>"##,
                cx - half / 2.0,
                y(w),
                cx + half / 2.0,
                y(w)
            );
        }
        let _ = write!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}" stroke="#333"/>"##,
            cx - half,
            y(b.q3),
            2.0 * half,
            y(b.q1) - y(b.q3),
            fills[k]
        );
        let _ = write!(
            s,
            r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#000" stroke-width="2"/>"##,
            cx - half,
            y(b.median),
            cx + half,
            y(b.median)
        );
        for o in &b.outliers {
            let _ = write!(s, r##"<circle cx="{cx:.2}" cy="{:.2}" r="3" fill="none" stroke="#333"/>"##, y(*o));
        }
        let my = y(b.mean);
        let _ = write!(
            s,
            r##"<path d="M{:.2} {my:.2} L{cx:.2} {:.2} L{:.2} {my:.2} L{cx:.2} {:.2} Z" fill="#fff" stroke="#000"/><text x="{:.2}" y="{:.2}" font-size="11">mean {}</text>"##,
            cx - 5.0,
            my - 5.0,
            cx + 5.0,
            my + 5.0,
            cx + half + 6.0,
            my + 4.0,
            format_number(b.mean)
        );
        let _ = write!(
            s,
            r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle" font-size="13">{} (n={})</text>"#,
            bottom + 28.0,
            escape(names[k]),
            counts[k]
        );
    }
    s.push_str("</svg>");
    Ok(s)
}

/// Sorted misclassified distances of one group with the elbow and threshold marked.
pub fn distance_curve_svg(sel: &GroupSelection, label: &str) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg class="curve" viewBox="0 0 {PLOT_W} 300" width="{PLOT_W}" height="300" role="img">"#
    );
    let _ = write!(
        s,
        r#"<text x="320" y="22" text-anchor="middle" font-size="14" font-weight="bold">Misclassified {} samples: sorted distances</text>"#,
        escape(label)
    );
    let d = &sel.sorted_distances;
    if d.is_empty() {
        s.push_str(r#"<text x="320" y="150" text-anchor="middle" font-size="13">no misclassified samples</text></svg>"#);
        return s;
    }
    let (top, bottom, left, right) = (40.0, 260.0, 70.0, 610.0);
    let hi = d[0].max(f64::MIN_POSITIVE);
    let x = |i: usize| {
        if d.len() == 1 {
            (left + right) / 2.0
        } else {
            left + (right - left) * i as f64 / (d.len() - 1) as f64
        }
    };
    let y = |v: f64| bottom - v / hi * (bottom - top);
    let _ = write!(
        s,
        r##"<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="#333"/><line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="#333"/>"##
    );
    let _ = write!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-size="11">{}</text><text x="{:.2}" y="{:.2}" text-anchor="end" font-size="11">0</text>"#,
        left - 6.0,
        top + 4.0,
        format_number(hi),
        left - 6.0,
        bottom + 4.0
    );
    let points: Vec<String> = d.iter().enumerate().map(|(i, v)| format!("{:.2},{:.2}", x(i), y(*v))).collect();
    let _ = write!(
        s,
        r##"<polyline points="{}" fill="none" stroke="#3d5a80" stroke-width="1.5"/>"##,
        points.join(" ")
    );
    for (i, v) in d.iter().enumerate() {
        let colour = if *v > sel.threshold || sel.elbow_position.is_none() { "#c1121f" } else { "#3d5a80" };
        let _ = write!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{colour}"/>"#, x(i), y(*v));
    }
    match sel.elbow_position {
        Some(p) => {
            let ty = y(sel.threshold);
            let _ = write!(
                s,
                r##"<line x1="{left}" y1="{ty:.2}" x2="{right}" y2="{ty:.2}" stroke="#c1121f" stroke-dasharray="4 3"/><circle cx="{:.2}" cy="{ty:.2}" r="5" fill="none" stroke="#c1121f" stroke-width="2"/><text x="{right}" y="{:.2}" text-anchor="end" font-size="11">elbow at rank {}, threshold {}</text>"##,
                x(p),
                ty - 6.0,
                p + 1,
                format_number(sel.threshold)
            );
        }
        None => {
            s.push_str(&format!(
                r#"<text x="{right}" y="{:.2}" text-anchor="end" font-size="11">fewer than 3 misclassified: all flagged</text>"#,
                top + 4.0
            ));
        }
    }
    s.push_str("</svg>");
    s
}

const STYLE: &str = "body{font-family:sans-serif;margin:2em auto;max-width:1200px;color:#222}\
table{border-collapse:collapse;margin:1em 0}td,th{border:1px solid #bbb;padding:3px 8px;text-align:left}\
th{background:#eee;cursor:pointer}tr.best{background:#fff3b0}tr.sample{cursor:pointer}\
tr.sample:hover{background:#f2f2f2}.cols{display:flex;gap:3em}.cols ul{list-style:none;padding:0}\
.plus{color:#1b7f3b}.minus{color:#b00020}.na{color:#888}p.explain{max-width:900px}";

const SCRIPT: &str = "document.querySelectorAll('tr.sample').forEach(function(r){\
r.addEventListener('click',function(){var d=document.getElementById(r.getAttribute('data-detail'));d.hidden=!d.hidden;});});\
document.querySelectorAll('table.sortable').forEach(function(t){var dir={};\
t.querySelectorAll('thead th').forEach(function(th,i){th.addEventListener('click',function(){\
var body=t.tBodies[0];var rows=Array.prototype.filter.call(body.rows,function(r){return !r.classList.contains('detail');});\
dir[i]=!dir[i];var key=function(r){var v=r.cells[i].getAttribute('data-v')||r.cells[i].textContent;var n=parseFloat(v);return isNaN(n)?v:n;};\
rows.sort(function(a,b){var x=key(a),y=key(b);var c=(typeof x==='number'&&typeof y==='number')?x-y:String(x).localeCompare(String(y));return dir[i]?c:-c;});\
rows.forEach(function(r){var d=r.nextElementSibling&&r.nextElementSibling.classList.contains('detail')?r.nextElementSibling:null;body.appendChild(r);if(d){body.appendChild(d);}});});});});";

fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

fn section_classifier(out: &mut String, a: &RunArtifact) {
    let cv = &a.cv;
    let c = &cv.pooled_confusion;
    let target = &a.provenance.config.target.name;
    let (case, control) = (
        a.groups.iter().find(|g| g.group == Group::Case).map_or("case", |g| g.level.as_str()),
        a.groups.iter().find(|g| g.group == Group::Control).map_or("control", |g| g.level.as_str()),
    );
    let _ = write!(out, "<section id=\"classifier\"><h2>Classifier</h2>");
    let _ = write!(
        out,
        "<p>{} samples, {} of {} features used after preprocessing. Target <b>{}</b>: {} (+1) vs {} (-1).</p>",
        a.preprocessing.n_samples,
        a.preprocessing.n_features_used,
        a.preprocessing.n_features_input,
        escape(target),
        escape(case),
        escape(control)
    );
    let _ = write!(
        out,
        "<table><tbody><tr><th>Selected kernel</th><td>{}</td></tr><tr><th>C</th><td>{}</td></tr>\
<tr><th>Support vectors</th><td>{} of {} training samples</td></tr>\
<tr><th>Balanced accuracy ({}-fold, pooled)</th><td>{}</td></tr>\
<tr><th>Accuracy (95% CI)</th><td>{} [{}, {}]</td></tr>\
<tr><th>P-value [Acc &gt; NIR]</th><td>{}</td></tr><tr><th>McNemar P-value</th><td>{}</td></tr>\
<tr><th>Final fit converged</th><td>{}</td></tr></tbody></table>",
        escape(&a.model.kernel.to_string()),
        a.model.cost,
        a.model.n_support,
        a.model.n_train,
        cv.k,
        fmt4(cv.balanced_accuracy),
        fmt4(cv.accuracy),
        fmt4(cv.acc_ci.0),
        fmt4(cv.acc_ci.1),
        format_p(cv.nir_pvalue),
        format_p(cv.mcnemar_pvalue),
        if a.model.converged { "yes" } else { "no (iteration budget exhausted)" }
    );
    let _ = write!(
        out,
        "<h3>Pooled out-of-fold confusion matrix</h3><table><thead><tr><th></th><th>true {case}</th><th>true {control}</th></tr></thead>\
<tbody><tr><th>predicted {case}</th><td>{}</td><td>{}</td></tr><tr><th>predicted {control}</th><td>{}</td><td>{}</td></tr></tbody></table>",
        c.tp,
        c.fp,
        c.fn_,
        c.tn,
        case = escape(case),
        control = escape(control)
    );
    let _ = write!(
        out,
        "<h3>Hyperparameter grid</h3><table class=\"sortable\" id=\"grid\"><thead><tr><th>Kernel</th><th>C</th><th>gamma</th><th>Balanced accuracy</th><th>Accuracy</th><th>Unconverged folds</th></tr></thead><tbody>"
    );
    for r in &cv.per_cell {
        let best = r.cell == cv.best_cell;
        let gamma = r.cell.kernel.gamma().map(|g| g.to_string()).unwrap_or_default();
        let kind = match r.cell.kernel {
            KernelSpec::Linear => "linear",
            KernelSpec::Rbf { .. } => "rbf",
        };
        let _ = write!(
            out,
            "<tr{}><td>{kind}</td><td data-v=\"{}\">{}</td><td data-v=\"{gamma}\">{gamma}</td><td>{}</td><td>{}</td><td>{}</td></tr>",
            if best { " class=\"best\"" } else { "" },
            r.cell.cost,
            r.cell.cost,
            fmt4(r.balanced_accuracy),
            fmt4(r.accuracy),
            r.unconverged_folds
        );
    }
    out.push_str("</tbody></table><h3>Distances to the separating hyperplane</h3>");
    for g in &a.groups {
        let _ = write!(
            out,
            "<p>{}: {} samples, {} misclassified, {} flagged.</p>",
            escape(&g.level),
            g.n_samples,
            g.n_misclassified,
            g.n_flagged
        );
        out.push_str(&distance_curve_svg(g, &g.level));
    }
    out.push_str("</section>");
}

fn section_groups(out: &mut String, a: &RunArtifact) -> Result<()> {
    out.push_str("<section id=\"group-tests\"><h2>Group-level characterization</h2>");
    for r in &a.group_tests {
        let cmp = &r.comparison;
        let (ag, og) = (escape(&cmp.anomalous_label), escape(&cmp.origin_label));
        let _ = write!(
            out,
            "<h3>{ag} vs {og}</h3><p>{} flagged, {} remaining in {og}.</p>",
            r.n_flagged, r.n_origin_remainder
        );
        if r.n_flagged == 0 {
            out.push_str("<p>No flagged samples in this group.</p>");
            continue;
        }
        if r.categorical.is_empty() {
            out.push_str("<p>No significant categorical covariates.</p>");
        } else {
            let _ = write!(
                out,
                "<table class=\"sortable\"><thead><tr><th>OR</th><th>P-value</th><th>Test</th><th>Covariate</th><th>Value</th><th>Relative to</th><th>Other Values</th><th>{ag} Value</th><th>{og} Value</th><th>{ag} Other Value</th><th>{og} Other Value</th></tr></thead><tbody>"
            );
            for t in &r.categorical {
                let or = t.result.effect.odds_ratio().unwrap_or(f64::NAN);
                let p = t.adjusted_p.unwrap_or(t.result.p_value);
                let _ = write!(
                    out,
                    "<tr data-test=\"{}|{}|{}\"><td data-v=\"{or}\">{}</td><td data-v=\"{p}\">{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td></tr>",
                    ag,
                    escape(&t.covariate),
                    escape(&t.level),
                    if or.is_finite() { format!("{or:.3}") } else { "Inf".into() },
                    format_p(p),
                    t.result.method,
                    escape(&t.covariate),
                    escape(&t.level),
                    t.relative_to.label(),
                    escape(&t.other_levels.join(",")),
                    t.table.a,
                    t.table.b,
                    t.table.c,
                    t.table.d
                );
            }
            out.push_str("</tbody></table>");
            for (t, text) in r.categorical.iter().zip(&r.explanations) {
                let _ = write!(
                    out,
                    "<h4>Covariate: {}</h4><p class=\"explain\">{}</p>",
                    escape(&t.covariate),
                    escape(text)
                );
            }
        }
        if r.numeric.is_empty() {
            out.push_str("<p>No significant numeric covariates.</p>");
        }
        for t in &r.numeric {
            let p = t.adjusted_p.unwrap_or(t.result.p_value);
            let _ = write!(out, "<div data-test=\"{}|{}\">", ag, escape(&t.covariate));
            out.push_str(&boxplot_svg(
                &t.flagged_values,
                &t.origin_values,
                (&cmp.anomalous_label, &cmp.origin_label),
                &t.covariate,
                &t.expectation,
                p,
            )?);
            out.push_str("</div>");
        }
        if !r.skipped.is_empty() {
            out.push_str("<p>Covariates not tested: ");
            let items: Vec<String> = r
                .skipped
                .iter()
                .map(|s| format!("{} ({})", escape(&s.covariate), escape(&s.reason)))
                .collect();
            out.push_str(&items.join("; "));
            out.push_str(".</p>");
        }
    }
    out.push_str("</section>");
    Ok(())
}

fn evidence_list(out: &mut String, title: &str, items: &[crate::explain::Evidence]) {
    let _ = write!(out, "<div><p>{title}</p><ul>");
    for e in items {
        let _ = write!(out, "<li>{}</li>", escape(&e.text()));
    }
    out.push_str("</ul></div>");
}

fn section_samples(out: &mut String, a: &RunArtifact) {
    out.push_str("<section id=\"samples\"><h2>Anomalous samples</h2>");
    if a.anomalies.is_empty() {
        out.push_str("<p id=\"no-anomalies\">No anomalous samples detected.</p></section>");
        return;
    }
    out.push_str("<p>Click a row to list the covariates that support and do not support the change.</p>");
    let _ = write!(
        out,
        "<table class=\"sortable\" id=\"sample-table\"><thead><tr><th>ID</th><th>Clinic Supports Ratio</th><th>Group</th><th>Distance</th>"
    );
    for e in &a.dekt {
        let _ = write!(out, "<th>{}</th>", escape(&e.feature));
    }
    out.push_str("</tr></thead><tbody>");
    let ncol = 4 + a.dekt.len();
    for (i, ann) in a.annotations.iter().enumerate() {
        let _ = write!(
            out,
            "<tr class=\"sample\" data-sample=\"{}\" data-detail=\"detail-{i}\"><td>{}</td><td data-v=\"{}\">{}</td><td>A{}</td><td data-v=\"{}\">{}</td>",
            escape(&ann.sample_id),
            escape(&ann.sample_id),
            ann.ratio.0,
            ann.ratio_text(),
            escape(&ann.given_label),
            ann.distance,
            format_number(ann.distance)
        );
        for m in &ann.marks {
            let (cls, sym) = match m.support {
                Support::Supports => ("plus", " +"),
                Support::Opposes => ("minus", " -"),
                Support::NotApplicable => ("na", ""),
            };
            let _ = write!(
                out,
                "<td class=\"{cls}\">{}{sym}</td>",
                escape(m.observed.as_deref().unwrap_or("NA"))
            );
        }
        let _ = write!(out, "</tr><tr class=\"detail\" id=\"detail-{i}\" hidden><td colspan=\"{ncol}\"><div class=\"cols\">");
        evidence_list(out, "Covariates that support the change:", &ann.supports);
        evidence_list(out, "Covariates that do not support the change:", &ann.opposes);
        if !ann.not_applicable.is_empty() {
            let _ = write!(
                out,
                "<div><p>Missing values:</p><ul>{}</ul></div>",
                ann.not_applicable
                    .iter()
                    .map(|f| format!("<li>{}</li>", escape(f)))
                    .collect::<String>()
            );
        }
        out.push_str("</div></td></tr>");
    }
    out.push_str("</tbody></table></section>");
}

/// Standalone HTML page: no external scripts, styles, images or links.
pub fn render_html(a: &RunArtifact) -> Result<String> {
    let mut out = String::new();
    let _ = write!(
        out,
        "<!DOCTYPE html><html lang=\"en\"><head><meta charset=\"utf-8\"><title>Anomalous sample report</title><style>{STYLE}</style></head><body><h1>Anomalous sample report</h1>"
    );
    let _ = write!(
        out,
        "<p>Generated {} by cohort-audit {}, seed {}.</p><details><summary>Input digests (SHA-256)</summary><ul>",
        escape(&a.provenance.timestamp),
        escape(&a.provenance.tool_version),
        a.provenance.seed
    );
    for (role, d) in &a.provenance.input_digests {
        let _ = write!(out, "<li>{}: <code>{d}</code></li>", escape(role));
    }
    out.push_str("</ul></details>");
    if !a.warnings.is_empty() {
        out.push_str("<section id=\"warnings\"><h2>Warnings</h2><ul>");
        for w in &a.warnings {
            let _ = write!(out, "<li>{}</li>", escape(w));
        }
        out.push_str("</ul></section>");
    }
    section_classifier(&mut out, a);
    section_groups(&mut out, a)?;
    section_samples(&mut out, a);
    let _ = write!(out, "<script>{SCRIPT}</script></body></html>\n");
    Ok(out)
}
