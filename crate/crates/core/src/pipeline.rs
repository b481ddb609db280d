//! End-to-end run: ingest, model selection, anomaly selection, explanation, report.

use std::collections::BTreeMap;
use std::path::Path;

use crate::anomaly::{fit_final_model, score_all, select_anomalies, write_anomalies_csv};
use crate::config::RunConfig;
use crate::dekt::load_dekt;
use crate::error::{Error, Result};
use crate::explain::{annotate_individual, group_report, write_group_tests_csv};
use crate::ingest::{
    delimiter_for, filter_features, load_clinical, load_matrix, log_normalize,
    remove_covariate_effects, Group,
};
use crate::model_select::{grid_search_cv, write_grid_csv};
use crate::report::{
    export_json, file_digest, render_html, ModelSummary, PreprocessSummary, Provenance, RunArtifact,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const OUTPUT_FILES: [&str; 5] = [
    "report.html",
    "run.json",
    "anomalies.csv",
    "group_tests.csv",
    "grid.csv",
];

fn timestamp(config: &RunConfig) -> String {
    config.timestamp.clone().unwrap_or_else(|| {
        chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
    })
}

/// Run every step and return the artifact without writing anything.
pub fn analyze(config: &RunConfig) -> Result<RunArtifact> {
    config.validate()?;
    config.check_inputs()?;
    let inputs = &config.inputs;

    let raw = load_matrix(&inputs.matrix, delimiter_for(&inputs.matrix))?;
    let clin = load_clinical(
        &inputs.clinical,
        delimiter_for(&inputs.clinical),
        &config.schema,
        &config.target,
    )?
    .align_to(raw.sample_ids())?;

    let pre = &config.preprocess;
    let n_features_input = raw.n_features();
    let mut m = if pre.normalize { log_normalize(&raw)? } else { raw };
    if pre.filter {
        m = filter_features(&m, pre.filter_threshold, pre.filter_fraction)?;
    }
    m = remove_covariate_effects(&m, &clin, &pre.remove_covariates)?;
    if m.n_features() == 0 {
        return Err(Error::Domain(
            "no features left after preprocessing; relax the expression filter".into(),
        ));
    }

    let dekt = load_dekt(&inputs.dekt, &clin)?;
    let cv = grid_search_cv(&m, &clin, &config.grid, config.k_folds, config.seed, &config.solver)?;
    let model = fit_final_model(&m, &clin, &cv.best_cell, config.seed, &config.solver)?;
    let scores = score_all(&model, &m)?;
    let selection = select_anomalies(&scores, &clin)?;

    let opts = config.group_test_options();
    let group_tests = [Group::Control, Group::Case]
        .into_iter()
        .map(|g| group_report(&selection.records, &clin, &dekt, g, &opts))
        .collect::<Result<Vec<_>>>()?;
    let annotations = selection
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.flagged)
        .map(|(i, r)| annotate_individual(i, &clin, &dekt, r))
        .collect::<Result<Vec<_>>>()?;

    let mut warnings = Vec::new();
    let unconverged: usize = cv.per_cell.iter().map(|c| c.unconverged_folds).sum();
    if unconverged > 0 {
        warnings.push(format!(
            "{unconverged} cross-validation fits stopped at the iteration budget"
        ));
    }
    if !model.converged {
        warnings.push("the final model stopped at the iteration budget".into());
    }
    for g in &selection.groups {
        if g.elbow_position.is_none() && g.n_misclassified > 0 {
            warnings.push(format!(
                "{}: fewer than 3 misclassified samples, all of them flagged",
                g.level
            ));
        }
    }

    let mut input_digests = BTreeMap::new();
    input_digests.insert("matrix".to_string(), file_digest(&inputs.matrix)?);
    input_digests.insert("clinical".to_string(), file_digest(&inputs.clinical)?);
    input_digests.insert("dekt".to_string(), file_digest(&inputs.dekt)?);

    let n_train = 2 * clin
        .labels()
        .iter()
        .filter(|&&g| g == Group::Case)
        .count()
        .min(clin.labels().iter().filter(|&&g| g == Group::Control).count());
    Ok(RunArtifact {
        provenance: Provenance {
            config: config.clone(),
            seed: config.seed,
            input_digests,
            tool_version: TOOL_VERSION.to_string(),
            timestamp: timestamp(config),
        },
        preprocessing: PreprocessSummary {
            n_samples: m.n_samples(),
            n_features_input,
            n_features_used: m.n_features(),
            normalized: pre.normalize,
            filtered: pre.filter,
            removed_covariates: pre.remove_covariates.clone(),
        },
        model: ModelSummary {
            kernel: model.kernel,
            cost: model.cost,
            n_support: model.n_support(),
            n_train,
            w_norm: model.w_norm,
            bias: model.bias,
            converged: model.converged,
            iterations: model.iterations,
        },
        cv,
        anomalies: selection.flagged().cloned().collect(),
        samples: selection.records,
        groups: selection.groups,
        group_tests,
        annotations,
        dekt,
        warnings,
    })
}

pub fn write_outputs(artifact: &RunArtifact, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let html = render_html(artifact)?;
    let path = dir.join("report.html");
    std::fs::write(&path, html).map_err(|e| Error::io(&path, e))?;
    let path = dir.join("run.json");
    std::fs::write(&path, export_json(artifact)?).map_err(|e| Error::io(&path, e))?;
    write_anomalies_csv(&artifact.samples, &dir.join("anomalies.csv"))?;
    write_group_tests_csv(&artifact.group_tests, &dir.join("group_tests.csv"))?;
    write_grid_csv(&artifact.cv.per_cell, &dir.join("grid.csv"))?;
    Ok(())
}

/// Analyze and write all outputs into the configured directory.
pub fn run(config: &RunConfig) -> Result<RunArtifact> {
    let artifact = analyze(config)?;
    artifact.validate()?;
    write_outputs(&artifact, &config.output_dir)?;
    Ok(artifact)
}
