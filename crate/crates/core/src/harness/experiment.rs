//! Experiment recipes: train, evaluate, attack, sweep, and ablate.
//!
//! Every recipe is reproducible from (spec, seed): all randomness derives
//! from the spec seed, attacks and smoothing reduce by example index, and
//! output files carry no timestamps (wall times live only in the metrics
//! log).

use std::fs;
use std::io::Write as _;
use std::path::PathBuf;

use rand::Rng;
use rayon::prelude::*;

use crate::attacks::{
    evaluate_robustness, AttackKind, BasePredictor, Predict, RobustnessReport, SmoothedPredictor,
};
use crate::error::{Error, Result};
use crate::lexicon::{load_embeddings, load_synonyms, EmbeddingMatrix, SynonymGraph, TokenId, Vocabulary};
use crate::models::{load_checkpoint, save_checkpoint, Classifier};
use crate::seeding;
use crate::smoothing::smoothed_accuracy;
use crate::training::{base_accuracy, train, EpochMetrics, TrainMode};

use super::config::ExperimentSpec;
use super::data::{ingest_tsv, Dataset, Split};
use super::report::{write_summary, CellFailure, Summary, SummaryRow};

/// Everything loaded from the data files named by a spec.
pub struct Inputs {
    pub vocab: Vocabulary,
    pub embeddings: EmbeddingMatrix,
    pub synonyms: SynonymGraph,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

pub fn load_inputs(spec: &ExperimentSpec) -> Result<Inputs> {
    spec.check_data_paths()?;
    let (vocab, embeddings) = load_embeddings(&spec.data.embeddings, spec.data.embed_dim)?;
    let synonyms = load_synonyms(&spec.data.synonyms, &vocab, spec.data.symmetrize_synonyms)?;
    let classes = spec.data.classes;
    let max_len = spec.data.max_len;
    Ok(Inputs {
        train: ingest_tsv(&spec.data.train, &vocab, classes, max_len, Split::Train)?,
        val: ingest_tsv(&spec.data.val, &vocab, classes, max_len, Split::Val)?,
        test: ingest_tsv(&spec.data.test, &vocab, classes, max_len, Split::Test)?,
        vocab,
        embeddings,
        synonyms,
    })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct TrainOutcome {
    pub best_val: f64,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
}

/// Trains per the spec and keeps the checkpoint with the best validation
/// accuracy (the final model when validation is empty). Writes per-epoch
/// metrics as JSON lines.
pub fn run_train(spec: &ExperimentSpec, inputs: &Inputs) -> Result<(Classifier, TrainOutcome)> {
    fs::create_dir_all(&spec.output_dir).map_err(|e| Error::io(&spec.output_dir, e))?;
    let mut model = Classifier::new(
        spec.classifier_config(),
        &inputs.embeddings,
        seeding::derive(spec.seed, "model-init"),
    )?;
    let mut best: Option<(f64, Classifier)> = None;
    let metrics = train(
        &mut model,
        &inputs.train,
        Some(&inputs.val),
        &inputs.synonyms,
        &spec.train,
        |m: &EpochMetrics, snapshot: &Classifier| {
            let better = best.as_ref().map_or(true, |(v, _)| m.val_acc > *v);
            if better {
                best = Some((m.val_acc, snapshot.clone()));
            }
        },
    )?;
    let (best_val, best_model) = best.unwrap_or((f64::NAN, model));

    let metrics_path = spec.output_dir.join("metrics.jsonl");
    let mut f = fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    for m in &metrics {
        let line = serde_json::to_string(m).map_err(|e| Error::Data(e.to_string()))?;
        writeln!(f, "{}", line).map_err(|e| Error::io(&metrics_path, e))?;
    }
    let ckpt_path = spec.output_dir.join("model.ckpt");
    save_checkpoint(&best_model, &ckpt_path)?;
    Ok((
        best_model,
        TrainOutcome {
            best_val,
            checkpoint: ckpt_path,
            metrics: metrics_path,
        },
    ))
}

/// The predictor the experiment actually deploys: the smoothed classifier
/// for DNE and RAN, the base classifier for ORIG (or when the spec forces
/// base-only queries).
pub fn deployed_predictor<'a>(
    spec: &ExperimentSpec,
    inputs: &'a Inputs,
    model: &'a Classifier,
) -> Box<dyn Predict + 'a> {
    let smoothed = spec.train.mode != TrainMode::Orig && !spec.attack.query_base_only;
    if smoothed {
        Box::new(SmoothedPredictor {
            model,
            synonyms: &inputs.synonyms,
            ensemble: spec.ensemble,
            params: spec.train.dirichlet(),
        })
    } else {
        Box::new(BasePredictor { model })
    }
}

/// Clean accuracy of the deployed predictor on the test split.
pub fn deployed_clean_accuracy(
    spec: &ExperimentSpec,
    inputs: &Inputs,
    model: &Classifier,
) -> Result<f64> {
    if spec.train.mode == TrainMode::Orig || spec.attack.query_base_only {
        base_accuracy(model, &inputs.test)
    } else {
        smoothed_accuracy(
            model,
            &inputs.test.examples,
            &inputs.synonyms,
            &spec.ensemble,
            spec.train.dirichlet(),
        )
    }
}

/// Uniformly sampled attack subset of the test split (indices recorded).
pub fn attack_subset(
    spec: &ExperimentSpec,
    test: &Dataset,
) -> (Vec<usize>, Vec<(Vec<TokenId>, usize)>) {
    let n = spec.attack.examples.min(test.examples.len());
    let mut rng = seeding::rng(seeding::derive(spec.seed, "attack-subset"));
    let mut indices: Vec<usize> = (0..test.examples.len()).collect();
    for i in 0..n {
        let j = rng.random_range(i..indices.len());
        indices.swap(i, j);
    }
    indices.truncate(n);
    let subset = indices
        .iter()
        .map(|&i| test.examples[i].clone())
        .collect();
    (indices, subset)
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct AttackReportFile {
    pub attack: AttackKind,
    pub mode: String,
    pub sampled_indices: Vec<usize>,
    #[serde(flatten)]
    pub report: RobustnessReport,
}

/// Runs every configured attack kind against the deployed predictor; writes
/// one report file per kind.
pub fn run_attacks(
    spec: &ExperimentSpec,
    inputs: &Inputs,
    model: &Classifier,
) -> Result<Vec<(AttackKind, RobustnessReport)>> {
    fs::create_dir_all(&spec.output_dir).map_err(|e| Error::io(&spec.output_dir, e))?;
    let (indices, subset) = attack_subset(spec, &inputs.test);
    let predictor = deployed_predictor(spec, inputs, model);
    let budget = spec.attack_budget();
    let mut out = Vec::new();
    for kind in &spec.attack.kinds {
        let report = evaluate_robustness(&*predictor, &subset, *kind, &inputs.synonyms, &budget)?;
        let path = spec.output_dir.join(format!("attack_{}.json", kind));
        let file = AttackReportFile {
            attack: *kind,
            mode: spec.train.mode.to_string(),
            sampled_indices: indices.clone(),
            report: report.clone(),
        };
        let json =
            serde_json::to_string_pretty(&file).map_err(|e| Error::Data(e.to_string()))?;
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
        out.push((*kind, report));
    }
    Ok(out)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ExperimentOutcome {
    pub row: SummaryRow,
    pub best_val: f64,
}

/// Full recipe: train, evaluate the deployed predictor, attack, summarize.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    let inputs = load_inputs(spec)?;
    let (model, outcome) = run_train(spec, &inputs)?;
    let cln = deployed_clean_accuracy(spec, &inputs, &model)?;
    let reports = run_attacks(spec, &inputs, &model)?;
    let row = summary_row(spec.train.mode.to_string(), cln, &reports);
    let summary = Summary {
        rows: vec![row.clone()],
        failures: vec![],
    };
    write_summary(&spec.output_dir, "summary", &summary)?;
    Ok(ExperimentOutcome {
        row,
        best_val: outcome.best_val,
    })
}

fn summary_row(
    label: String,
    cln: f64,
    reports: &[(AttackKind, RobustnessReport)],
) -> SummaryRow {
    let robust = |kind: AttackKind| {
        reports
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, r)| r.robust_acc)
    };
    SummaryRow {
        label,
        cln,
        pwws: robust(AttackKind::Pwws),
        ga: robust(AttackKind::Ga),
    }
}

/// Evaluates an already-trained checkpoint; writes `eval.json`.
pub fn run_eval(spec: &ExperimentSpec) -> Result<f64> {
    let inputs = load_inputs(spec)?;
    let model = load_checkpoint(&spec.output_dir.join("model.ckpt"))?;
    let clean = deployed_clean_accuracy(spec, &inputs, &model)?;
    let path = spec.output_dir.join("eval.json");
    let body = serde_json::json!({
        "mode": spec.train.mode.to_string(),
        "examples": inputs.test.examples.len(),
        "clean_acc": clean,
    });
    fs::write(&path, serde_json::to_string_pretty(&body).unwrap() + "\n")
        .map_err(|e| Error::io(&path, e))?;
    Ok(clean)
}

/// Attacks an already-trained checkpoint.
pub fn run_attack_cmd(spec: &ExperimentSpec) -> Result<Vec<(AttackKind, RobustnessReport)>> {
    let inputs = load_inputs(spec)?;
    let model = load_checkpoint(&spec.output_dir.join("model.ckpt"))?;
    run_attacks(spec, &inputs, &model)
}

fn cell_spec(base: &ExperimentSpec, name: &str) -> ExperimentSpec {
    let mut spec = base.clone();
    spec.output_dir = base.output_dir.join("cells").join(name);
    spec
}

/// Runs every (alpha, lambda) cell; one failed cell does not abort the rest.
pub fn run_sweep(spec: &ExperimentSpec, alphas: &[f64], lambdas: &[f64]) -> Result<Summary> {
    let mut cells = Vec::new();
    for &alpha in alphas {
        for &lambda in lambdas {
            let name = format!("alpha{}_lambda{}", alpha, lambda);
            let mut cell = cell_spec(spec, &name);
            cell.train.alpha = alpha;
            cell.train.lambda = lambda;
            cells.push((format!("alpha={} lambda={}", alpha, lambda), cell));
        }
    }
    let summary = run_cells(cells);
    write_summary(&spec.output_dir, "sweep_summary", &summary)?;
    Ok(summary)
}

pub const ABLATION_FULL: &str = "full";
pub const ABLATION_VARIANTS: [&str; 4] = [
    "w/o expansion",
    "w/o adv-train",
    "w/o coord-upd",
    "w/o ensemble",
];

/// Full DNE plus the four single-component removals, in a fixed row order.
pub fn run_ablation(spec: &ExperimentSpec) -> Result<Summary> {
    if spec.train.mode != TrainMode::Dne {
        return Err(Error::Config("ablation requires train.mode = dne".into()));
    }
    let mut cells = vec![(ABLATION_FULL.to_string(), cell_spec(spec, "full"))];
    {
        let mut c = cell_spec(spec, "no_expansion");
        c.train.expand_hull = false;
        cells.push((ABLATION_VARIANTS[0].to_string(), c));
    }
    {
        let mut c = cell_spec(spec, "no_adv_train");
        c.train.adv_steps = 0;
        cells.push((ABLATION_VARIANTS[1].to_string(), c));
    }
    {
        let mut c = cell_spec(spec, "no_coord_upd");
        c.train.coordinated_update = false;
        cells.push((ABLATION_VARIANTS[2].to_string(), c));
    }
    {
        let mut c = cell_spec(spec, "no_ensemble");
        c.ensemble.k = 1;
        cells.push((ABLATION_VARIANTS[3].to_string(), c));
    }
    let summary = run_cells(cells);
    write_summary(&spec.output_dir, "ablation_summary", &summary)?;
    Ok(summary)
}

/// Cells run as independent parallel jobs; failures are recorded, not fatal.
fn run_cells(cells: Vec<(String, ExperimentSpec)>) -> Summary {
    let results: Vec<(String, Result<ExperimentOutcome>)> = cells
        .into_par_iter()
        .map(|(label, cell)| {
            let outcome = run_experiment(&cell);
            (label, outcome)
        })
        .collect();
    let mut summary = Summary::default();
    for (label, result) in results {
        match result {
            Ok(outcome) => summary.rows.push(SummaryRow {
                label,
                ..outcome.row
            }),
            Err(e) => summary.failures.push(CellFailure {
                label,
                error: e.to_string(),
            }),
        }
    }
    summary
}
