//! Stage orchestration: ingest, features, train, score, evaluate, rank and
//! allocate, with a manifest of content hashes, plus the hyperparameter sweep.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{self, CvConfig, CvReport, MetricReport};
use crate::features::{self, FeatureRow, FeatureStats, GeoIndex, PartisanTable};
use crate::ingest::{self, IngestSummary};
use crate::pu::{self, Approach, PuConfig, ScoredObservation};
use crate::rank::{self, Aggregation, AllocationMode, PlanReport};
use crate::synth::{self, TruthRow};
use crate::{io, seed};

/// A pipeline stage; each has its own process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Synth,
    Ingest,
    Features,
    Train,
    Score,
    Evaluate,
    Rank,
    Allocate,
    Sweep,
    Config,
}

impl Stage {
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Synth => 10,
            Stage::Ingest => 11,
            Stage::Features => 12,
            Stage::Train => 13,
            Stage::Score => 14,
            Stage::Evaluate => 15,
            Stage::Rank => 16,
            Stage::Allocate => 17,
            Stage::Sweep => 18,
            Stage::Config => 19,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::Features => "features",
            Stage::Train => "train",
            Stage::Score => "score",
            Stage::Evaluate => "evaluate",
            Stage::Rank => "rank",
            Stage::Allocate => "allocate",
            Stage::Sweep => "sweep",
            Stage::Config => "config",
        }
    }
}

#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub source: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {} failed: {}", self.stage.name(), self.source)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

pub trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

/// Fully resolved settings of a pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Root seed; stage seeds derive from it.
    pub seed: u64,
    /// Weeks before this date are dropped at ingest.
    pub start_date: NaiveDate,
    /// Consistency features use only weeks before this date; all weeks when unset.
    pub train_end: Option<NaiveDate>,
    pub approach: Approach,
    /// Bagging and forest settings; the seed field is replaced by a derived seed.
    pub pu: PuConfig,
    /// Hide spies during training and report spy metrics.
    pub spies: bool,
    pub thresholds: Vec<f64>,
    /// Business-level cross-validation folds; skipped when unset.
    pub cv_folds: Option<usize>,
    pub aggregation: Aggregation,
    /// Inspection budget; defaults to a tenth of the ranked establishments.
    pub budget: Option<f64>,
    pub allocation: AllocationMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            start_date: NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date"),
            train_end: None,
            approach: Approach::A,
            pu: PuConfig::default(),
            spies: true,
            thresholds: eval::DEFAULT_THRESHOLDS.to_vec(),
            cv_folds: None,
            aggregation: Aggregation::Max,
            budget: None,
            allocation: AllocationMode::Exact,
        }
    }
}

impl RunConfig {
    /// Bagging settings with the stage seed derived from the root seed.
    pub fn train_config(&self) -> PuConfig {
        PuConfig {
            seed: seed::derive(self.seed, "train", 0),
            ..self.pu
        }
    }

    pub fn cv_config(&self, folds: usize) -> CvConfig {
        CvConfig {
            folds,
            pu: PuConfig {
                seed: seed::derive(self.seed, "cv", 0),
                ..self.pu
            },
            coverage_levels: eval::COVERAGE_LEVELS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inputs {
    pub visits: PathBuf,
    pub ads: PathBuf,
    pub geo: PathBuf,
    pub partisan: Option<PathBuf>,
    pub costs: Option<PathBuf>,
    /// Latent classes of synthetic establishments, for extra metrics.
    pub truth: Option<PathBuf>,
}

impl Inputs {
    /// Inputs laid out by the synthetic generator.
    pub fn from_synth_dir(dir: &Path) -> Inputs {
        let p = synth::SynthPaths::in_dir(dir);
        Inputs {
            visits: p.visits,
            ads: p.ads,
            geo: p.geo,
            partisan: Some(p.partisan),
            costs: None,
            truth: Some(p.truth),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub stage: Stage,
    /// File name relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub ingest: IngestSummary,
    pub features: FeatureStats,
    pub artifacts: Vec<Artifact>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Evaluation output of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config: RunConfig,
    /// Mean score per label category.
    pub category_means: BTreeMap<String, f64>,
    pub spy: Option<MetricReport>,
    pub cv: Option<Vec<CvReport>>,
}

impl EvaluationReport {
    pub fn summary_table(&self) -> String {
        let mut s = String::new();
        if let Some(spy) = &self.spy {
            s.push_str(&eval::format_spy_table(spy));
        } else {
            for (k, v) in &self.category_means {
                s.push_str(&format!("{k:<34}{v:>10.3}\n"));
            }
        }
        if let Some(cv) = &self.cv {
            s.push('\n');
            s.push_str(&eval::format_cv_table(cv));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub config: RunConfig,
    #[serde(flatten)]
    pub report: PlanReport,
}

// ---------------------------------------------------------------------------
// Stages usable on their own.

pub fn load_geo(geo: &Path, partisan: Option<&Path>) -> Result<(GeoIndex, PartisanTable)> {
    let g = GeoIndex::read_csv(geo)?;
    let p = match partisan {
        Some(p) => PartisanTable::read_csv(p)?,
        None => PartisanTable::default(),
    };
    Ok((g, p))
}

pub fn category_means(scored: &[ScoredObservation]) -> BTreeMap<String, f64> {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for s in scored {
        let e = sums.entry(s.category.as_str().to_string()).or_default();
        e.0 += s.score;
        e.1 += 1;
    }
    sums.into_iter().map(|(k, (t, n))| (k, t / n as f64)).collect()
}

pub fn read_truth_set(path: Option<&Path>) -> Result<Option<BTreeSet<String>>> {
    path.map(|p| synth::read_truth(p).map(|t: Vec<TruthRow>| synth::illicit_set(&t)))
        .transpose()
}

pub fn evaluate(
    scored: &[ScoredObservation],
    rows: Option<&[FeatureRow]>,
    cfg: &RunConfig,
    illicit: Option<&BTreeSet<String>>,
) -> Result<EvaluationReport> {
    let spy = if scored.iter().any(|s| s.role == pu::Role::Spy) {
        Some(eval::spy_report(scored, illicit, &cfg.thresholds)?)
    } else {
        None
    };
    let cv = match (cfg.cv_folds, rows) {
        (Some(folds), Some(rows)) => Some(eval::business_cv(rows, &cfg.cv_config(folds), &Aggregation::ALL)?),
        (Some(_), None) => return Err(Error::Invalid("cross-validation needs the feature table".into())),
        _ => None,
    };
    Ok(EvaluationReport {
        config: cfg.clone(),
        category_means: category_means(scored),
        spy,
        cv,
    })
}

/// Ranks establishments from week scores.
pub fn rank_scores(scored: &[ScoredObservation], aggregation: Aggregation) -> Result<Vec<rank::EstablishmentRisk>> {
    let risks = rank::aggregate(&rank::group_scores(scored), aggregation)?;
    Ok(rank::rank_establishments(risks))
}

pub fn default_budget(n_ranked: usize) -> f64 {
    (n_ranked as f64 / 10.0).ceil()
}

pub fn allocate(
    ranked: &[rank::EstablishmentRisk],
    costs: Option<&Path>,
    budget: Option<f64>,
    mode: AllocationMode,
) -> Result<PlanReport> {
    let costs = costs.map(rank::read_costs).transpose()?;
    let budget = budget.unwrap_or_else(|| default_budget(ranked.len()));
    let plan = rank::solve_allocation(ranked, costs.as_ref(), budget, mode)?;
    Ok(rank::plan_report(ranked, costs.as_ref(), plan))
}

// ---------------------------------------------------------------------------
// Full run

pub const LABELED_FILE: &str = "labeled.jsonl";
pub const FEATURES_FILE: &str = "features.csv";
pub const MODEL_FILE: &str = "model.bundle";
pub const SCORES_FILE: &str = "scores.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const RANKS_FILE: &str = "ranks.csv";
pub const PLAN_FILE: &str = "plan.json";

fn artifact(stage: Stage, dir: &Path, name: &str) -> std::result::Result<Artifact, StageError> {
    let path = dir.join(name);
    let bytes = std::fs::metadata(&path).map_err(|e| Error::io(&path, e)).at(stage)?.len();
    Ok(Artifact {
        stage,
        path: name.to_string(),
        sha256: io::sha256_file(&path).at(stage)?,
        bytes,
    })
}

/// Runs every stage in order, writing artifacts and `manifest.json` into
/// `out_dir`. Returns the manifest and the evaluation report.
pub fn run_pipeline(
    inputs: &Inputs,
    cfg: &RunConfig,
    out_dir: &Path,
) -> std::result::Result<(Manifest, EvaluationReport), StageError> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e)).at(Stage::Config)?;
    let mut artifacts = Vec::new();

    let (labeled, ingest_summary) = ingest::run(&inputs.visits, &inputs.ads, cfg.start_date).at(Stage::Ingest)?;
    if labeled.is_empty() {
        return Err(Error::Empty("ingested observations")).at(Stage::Ingest);
    }
    ingest::write_labeled(&out_dir.join(LABELED_FILE), &labeled).at(Stage::Ingest)?;
    artifacts.push(artifact(Stage::Ingest, out_dir, LABELED_FILE)?);
    log::info!("ingest: {} observations kept", labeled.len());

    let (geo, partisan) = load_geo(&inputs.geo, inputs.partisan.as_deref()).at(Stage::Features)?;
    let (rows, feature_stats) =
        features::build_feature_table(&labeled, &geo, &partisan, cfg.train_end).at(Stage::Features)?;
    drop(labeled);
    features::write_feature_table(&out_dir.join(FEATURES_FILE), &rows).at(Stage::Features)?;
    artifacts.push(artifact(Stage::Features, out_dir, FEATURES_FILE)?);
    log::info!("features: {} rows", rows.len());

    let bundle = pu::train(&rows, &cfg.train_config(), cfg.approach, cfg.spies).at(Stage::Train)?;
    bundle.save(&out_dir.join(MODEL_FILE)).at(Stage::Train)?;
    artifacts.push(artifact(Stage::Train, out_dir, MODEL_FILE)?);
    log::info!("train: {} bagging iterations", bundle.model.models.len());

    let scored = pu::score_rows(&bundle, &rows).at(Stage::Score)?;
    io::write_jsonl(&out_dir.join(SCORES_FILE), &scored).at(Stage::Score)?;
    artifacts.push(artifact(Stage::Score, out_dir, SCORES_FILE)?);

    let illicit = read_truth_set(inputs.truth.as_deref()).at(Stage::Evaluate)?;
    let report = evaluate(&scored, Some(&rows), cfg, illicit.as_ref()).at(Stage::Evaluate)?;
    io::write_json(&out_dir.join(REPORT_FILE), &report).at(Stage::Evaluate)?;
    artifacts.push(artifact(Stage::Evaluate, out_dir, REPORT_FILE)?);
    log::info!("evaluate:\n{}", report.summary_table());

    let ranked = rank_scores(&scored, cfg.aggregation).at(Stage::Rank)?;
    rank::write_ranks(&out_dir.join(RANKS_FILE), &ranked).at(Stage::Rank)?;
    artifacts.push(artifact(Stage::Rank, out_dir, RANKS_FILE)?);

    let plan = allocate(&ranked, inputs.costs.as_deref(), cfg.budget, cfg.allocation).at(Stage::Allocate)?;
    let plan_file = PlanFile {
        config: cfg.clone(),
        report: plan,
    };
    io::write_json(&out_dir.join(PLAN_FILE), &plan_file).at(Stage::Allocate)?;
    artifacts.push(artifact(Stage::Allocate, out_dir, PLAN_FILE)?);

    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config: cfg.clone(),
        ingest: ingest_summary,
        features: feature_stats,
        artifacts,
    };
    io::write_json(&out_dir.join(MANIFEST_FILE), &manifest).at(Stage::Config)?;
    Ok((manifest, report))
}

// ---------------------------------------------------------------------------
// Sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub k: Vec<usize>,
    pub max_depth: Vec<usize>,
    pub n_trees: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub max_depth: usize,
    pub n_trees: usize,
    pub auc: f64,
    pub average_precision: f64,
    /// Against true negatives, when ground truth is supplied.
    pub true_negative_auc: Option<f64>,
    pub true_negative_average_precision: Option<f64>,
}

/// Evaluates every grid cell with the spy protocol on one fixed spy split
/// (it depends only on `base.seed`), sorted by AUC and then AP, both
/// descending; ties keep grid order.
pub fn sweep(
    rows: &[FeatureRow],
    base: &PuConfig,
    approach: Approach,
    grid: &SweepGrid,
    illicit: Option<&BTreeSet<String>>,
) -> Result<Vec<SweepRow>> {
    if grid.k.is_empty() || grid.max_depth.is_empty() || grid.n_trees.is_empty() {
        return Err(Error::Empty("sweep grid"));
    }
    let mut out = Vec::new();
    for &k in &grid.k {
        for &max_depth in &grid.max_depth {
            for &n_trees in &grid.n_trees {
                let mut cfg = *base;
                cfg.k = k;
                cfg.forest.max_depth = max_depth;
                cfg.forest.n_trees = n_trees;
                let bundle = pu::train(rows, &cfg, approach, true)?;
                let scored = pu::score_rows(&bundle, rows)?;
                let r = eval::spy_report(&scored, illicit, &[])?;
                log::info!("sweep cell k={k} depth={max_depth} trees={n_trees}: auc {:.4}", r.auc);
                out.push(SweepRow {
                    k,
                    max_depth,
                    n_trees,
                    auc: r.auc,
                    average_precision: r.average_precision,
                    true_negative_auc: r.true_negative.as_ref().map(|t| t.auc),
                    true_negative_average_precision: r.true_negative.as_ref().map(|t| t.average_precision),
                });
            }
        }
    }
    out.sort_by(|a, b| {
        b.auc
            .total_cmp(&a.auc)
            .then_with(|| b.average_precision.total_cmp(&a.average_precision))
    });
    Ok(out)
}

pub fn format_sweep_table(rows: &[SweepRow]) -> String {
    let mut s = format!("{:>6}{:>8}{:>8}{:>10}{:>10}\n", "K", "depth", "trees", "AUC", "AP");
    for r in rows {
        s.push_str(&format!(
            "{:>6}{:>8}{:>8}{:>10.4}{:>10.4}\n",
            r.k, r.max_depth, r.n_trees, r.auc, r.average_precision
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct() {
        let stages = [
            Stage::Synth,
            Stage::Ingest,
            Stage::Features,
            Stage::Train,
            Stage::Score,
            Stage::Evaluate,
            Stage::Rank,
            Stage::Allocate,
            Stage::Sweep,
            Stage::Config,
        ];
        let codes: BTreeSet<i32> = stages.iter().map(|s| s.exit_code()).collect();
        assert_eq!(codes.len(), stages.len());
        assert!(!codes.contains(&0) && !codes.contains(&1) && !codes.contains(&2));
    }

    #[test]
    fn default_budget_is_a_tenth() {
        assert_eq!(default_budget(2000), 200.0);
        assert_eq!(default_budget(5), 1.0);
    }

    #[test]
    fn run_config_round_trips_with_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"seed": 9, "approach": "C"}"#).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.approach, Approach::C);
        assert_eq!(cfg.pu.k, 50);
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
