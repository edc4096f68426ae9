//! PU Bagging over a random-forest base learner, the spy split used for
//! evaluation, and the naive positive-vs-unlabeled comparator.

use std::collections::BTreeSet;
use std::ops::Range;
use std::path::Path;

use chrono::NaiveDate;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{feature_names, FeatureRow, FEATURE_SCHEMA_VERSION};
use crate::forest::{codec, decode_trees, encode_trees, fit_forest_rows, Forest, FeatureMatrix, ForestConfig, Scorer};
use crate::ingest::LabelCategory;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpyUnit {
    Establishment,
    ObservationWeek,
}

/// Where Illicit Quiet weeks go during training: left out (A), into the
/// unlabeled pool (B), or into the positive set (C).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Approach {
    A,
    B,
    C,
}

impl std::str::FromStr for Approach {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(Approach::A),
            "B" => Ok(Approach::B),
            "C" => Ok(Approach::C),
            other => Err(format!("unknown approach {other:?} (expected A, B or C)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PuConfig {
    /// Number of bagging iterations.
    pub k: usize,
    pub forest: ForestConfig,
    pub seed: u64,
    pub spy_fraction: f64,
    pub spy_unit: SpyUnit,
}

impl Default for PuConfig {
    fn default() -> Self {
        PuConfig {
            k: 50,
            forest: ForestConfig::default(),
            seed: 0,
            spy_fraction: 0.2,
            spy_unit: SpyUnit::Establishment,
        }
    }
}

/// A learner fitted once per bagging iteration.
pub trait BaseLearner: Sync {
    type Model: Scorer + Send;

    fn fit(&self, x: &FeatureMatrix, rows: &[usize], labels: &[bool], seed: u64) -> Result<Self::Model>;
}

pub struct ForestLearner(pub ForestConfig);

impl BaseLearner for ForestLearner {
    type Model = Forest;

    fn fit(&self, x: &FeatureMatrix, rows: &[usize], labels: &[bool], seed: u64) -> Result<Forest> {
        fit_forest_rows(x, rows, labels, &ForestConfig { seed, ..self.0 })
    }
}

/// K fitted base models; the score of a row is their arithmetic mean.
#[derive(Debug, Clone, PartialEq)]
pub struct PuModel<M = Forest> {
    pub models: Vec<M>,
    pub config: PuConfig,
    pub feature_names: Vec<String>,
}

impl<M: Scorer> PuModel<M> {
    /// Per-iteration scores `h_k(x)`, in iteration order.
    pub fn iteration_scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.models.iter().map(|m| m.score(x)).collect()
    }
}

impl<M: Scorer> Scorer for PuModel<M> {
    fn width(&self) -> usize {
        self.feature_names.len()
    }

    fn score_row(&self, x: &[f64]) -> f64 {
        self.models.iter().fold(0.0, |acc, m| acc + m.score_row(x)) / self.models.len() as f64
    }

    fn score_block(&self, x: &FeatureMatrix, rows: Range<usize>, out: &mut [f64]) {
        out.fill(0.0);
        let mut part = vec![0.0; out.len()];
        for m in &self.models {
            m.score_block(x, rows.clone(), &mut part);
            out.iter_mut().zip(&part).for_each(|(o, p)| *o += p);
        }
        let k = self.models.len() as f64;
        out.iter_mut().for_each(|o| *o /= k);
    }
}

/// PU Bagging with an arbitrary base learner. `positives` and `unlabeled`
/// index rows of `x`. Each iteration draws `|P|` pseudo-negatives from `U`
/// without replacement, independently of other iterations.
pub fn pu_bagging_with<L: BaseLearner>(
    learner: &L,
    x: &FeatureMatrix,
    positives: &[usize],
    unlabeled: &[usize],
    k: usize,
    root_seed: u64,
) -> Result<Vec<L::Model>> {
    if k == 0 {
        return Err(Error::Invalid("K must be at least 1".into()));
    }
    if positives.is_empty() {
        return Err(Error::Empty("positive set"));
    }
    if unlabeled.len() < positives.len() {
        return Err(Error::InsufficientUnlabeled {
            positive: positives.len(),
            unlabeled: unlabeled.len(),
        });
    }
    x.check_finite()?;
    let n_pos = positives.len();
    let mut labels = vec![true; n_pos];
    labels.resize(2 * n_pos, false);
    let mut models = Vec::with_capacity(k);
    for iteration in 0..k as u64 {
        let mut rng = seed::derived_rng(root_seed, "pu-negatives", iteration);
        let mut rows = positives.to_vec();
        rows.extend(index::sample(&mut rng, unlabeled.len(), n_pos).into_iter().map(|i| unlabeled[i]));
        let model = learner.fit(x, &rows, &labels, seed::derive(root_seed, "pu-forest", iteration))?;
        log::debug!("pu iteration {iteration} fitted");
        models.push(model);
    }
    Ok(models)
}

/// PU Bagging with the forest learner on rows of a shared matrix.
pub fn fit_pu_model(x: &FeatureMatrix, positives: &[usize], unlabeled: &[usize], cfg: &PuConfig) -> Result<PuModel> {
    let models = pu_bagging_with(&ForestLearner(cfg.forest), x, positives, unlabeled, cfg.k, cfg.seed)?;
    Ok(PuModel {
        models,
        config: *cfg,
        feature_names: feature_names_for(x.n_cols()),
    })
}

fn feature_names_for(width: usize) -> Vec<String> {
    let canonical = feature_names();
    if width == canonical.len() {
        canonical
    } else {
        (0..width).map(|i| format!("x{i}")).collect()
    }
}

/// PU Bagging on separate positive and unlabeled matrices. Returns the model
/// with the scores of every positive row and every unlabeled row.
pub fn pu_bagging(p: &FeatureMatrix, u: &FeatureMatrix, cfg: &PuConfig) -> Result<(PuModel, Vec<f64>, Vec<f64>)> {
    if p.n_cols() != u.n_cols() {
        return Err(Error::WidthMismatch {
            expected: p.n_cols(),
            got: u.n_cols(),
        });
    }
    let mut rows: Vec<&[f64]> = (0..p.n_rows()).map(|i| p.row(i)).collect();
    rows.extend((0..u.n_rows()).map(|i| u.row(i)));
    let x = FeatureMatrix::from_rows(&rows)?;
    let positives: Vec<usize> = (0..p.n_rows()).collect();
    let unlabeled: Vec<usize> = (p.n_rows()..x.n_rows()).collect();
    let model = fit_pu_model(&x, &positives, &unlabeled, cfg)?;
    let mut scores = model.score_matrix(&x)?;
    let u_scores = scores.split_off(p.n_rows());
    Ok((model, scores, u_scores))
}

/// One forest trained with every unlabeled row as a negative. Returns the
/// forest and the scores of the positive rows followed by the unlabeled rows.
pub fn train_naive_baseline(
    x: &FeatureMatrix,
    positives: &[usize],
    unlabeled: &[usize],
    forest: &ForestConfig,
) -> Result<(Forest, Vec<f64>)> {
    let mut rows = positives.to_vec();
    rows.extend_from_slice(unlabeled);
    let mut labels = vec![true; positives.len()];
    labels.resize(rows.len(), false);
    let model = fit_forest_rows(x, &rows, &labels, forest)?;
    let scores = rows.iter().map(|&r| model.score_row(x.row(r))).collect();
    Ok((model, scores))
}

/// Hidden positives: whole establishments or individual weeks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpyAssignment {
    Establishments(BTreeSet<String>),
    Weeks(BTreeSet<(String, NaiveDate)>),
}

impl SpyAssignment {
    pub fn is_spy(&self, placekey: &str, week: NaiveDate) -> bool {
        match self {
            SpyAssignment::Establishments(keys) => keys.contains(placekey),
            SpyAssignment::Weeks(weeks) => weeks.contains(&(placekey.to_string(), week)),
        }
    }

    /// True when the establishment contributes any spy week.
    pub fn touches(&self, placekey: &str) -> bool {
        match self {
            SpyAssignment::Establishments(keys) => keys.contains(placekey),
            SpyAssignment::Weeks(weeks) => weeks.iter().any(|(k, _)| k == placekey),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SpyAssignment::Establishments(k) => k.len(),
            SpyAssignment::Weeks(w) => w.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn spy_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).round() as usize).clamp(1, n - 1)
}

/// Chooses hidden positives among the given positive (placekey, week) rows.
/// With establishment spies, a chosen establishment contributes all of its
/// positive weeks.
pub fn spy_split(positives: &[(String, NaiveDate)], cfg: &PuConfig) -> Result<SpyAssignment> {
    if !(cfg.spy_fraction > 0.0 && cfg.spy_fraction < 1.0) {
        return Err(Error::Invalid(format!("spy fraction {} must be in (0,1)", cfg.spy_fraction)));
    }
    let mut rng = seed::derived_rng(cfg.seed, "spy", 0);
    match cfg.spy_unit {
        SpyUnit::Establishment => {
            let keys: Vec<&String> = positives.iter().map(|(k, _)| k).collect::<BTreeSet<_>>().into_iter().collect();
            if keys.len() < 2 {
                return Err(Error::TooFewPositiveEstablishments {
                    needed: 2,
                    got: keys.len(),
                });
            }
            let n = spy_count(cfg.spy_fraction, keys.len());
            let chosen = index::sample(&mut rng, keys.len(), n).into_iter().map(|i| keys[i].clone()).collect();
            Ok(SpyAssignment::Establishments(chosen))
        }
        SpyUnit::ObservationWeek => {
            let weeks: Vec<&(String, NaiveDate)> = positives.iter().collect::<BTreeSet<_>>().into_iter().collect();
            if weeks.len() < 2 {
                return Err(Error::TooFewRows {
                    needed: 2,
                    got: weeks.len(),
                });
            }
            let n = spy_count(cfg.spy_fraction, weeks.len());
            let chosen = index::sample(&mut rng, weeks.len(), n).into_iter().map(|i| weeks[i].clone()).collect();
            Ok(SpyAssignment::Weeks(chosen))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    TrainPositive,
    Spy,
    Unlabeled,
    QuietHeldOut,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::TrainPositive => "train_positive",
            Role::Spy => "spy",
            Role::Unlabeled => "unlabeled",
            Role::QuietHeldOut => "quiet_held_out",
        }
    }
}

/// Training role of one row under an approach and an optional spy split.
pub fn role_of(row: &FeatureRow, approach: Approach, spies: Option<&SpyAssignment>) -> Role {
    let spy = |r: &FeatureRow| spies.is_some_and(|s| s.is_spy(&r.placekey, r.week_start));
    match row.category {
        LabelCategory::IllicitActive if spy(row) => Role::Spy,
        LabelCategory::IllicitActive => Role::TrainPositive,
        LabelCategory::NeverAsw => Role::Unlabeled,
        LabelCategory::IllicitQuiet => match approach {
            Approach::A => Role::QuietHeldOut,
            Approach::B => Role::Unlabeled,
            // Quiet weeks of spy establishments would leak them into P.
            Approach::C if spies.is_some_and(|s| s.touches(&row.placekey)) => Role::QuietHeldOut,
            Approach::C => Role::TrainPositive,
        },
    }
}

pub fn feature_matrix(rows: &[FeatureRow]) -> FeatureMatrix {
    let data = rows.iter().flat_map(|r| r.values.0).collect();
    FeatureMatrix::new(crate::features::N_FEATURES, data).expect("fixed width")
}

/// Row indices of the positive set (train positives) and the unlabeled pool
/// (unlabeled rows plus spies).
pub fn training_sets(roles: &[Role]) -> (Vec<usize>, Vec<usize>) {
    let mut p = Vec::new();
    let mut u = Vec::new();
    for (i, r) in roles.iter().enumerate() {
        match r {
            Role::TrainPositive => p.push(i),
            Role::Spy | Role::Unlabeled => u.push(i),
            Role::QuietHeldOut => {}
        }
    }
    (p, u)
}

/// A trained model plus what is needed to recover row roles when scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub model: PuModel,
    pub approach: Approach,
    pub spies: Option<SpyAssignment>,
}

impl ModelBundle {
    pub fn role_of(&self, row: &FeatureRow) -> Role {
        role_of(row, self.approach, self.spies.as_ref())
    }
}

/// Trains on a feature table. With `with_spies`, a spy split is drawn from
/// the Illicit Active rows and those rows join the unlabeled pool.
pub fn train(rows: &[FeatureRow], cfg: &PuConfig, approach: Approach, with_spies: bool) -> Result<ModelBundle> {
    let spies = if with_spies {
        let positives: Vec<(String, NaiveDate)> = rows
            .iter()
            .filter(|r| r.category == LabelCategory::IllicitActive)
            .map(|r| (r.placekey.clone(), r.week_start))
            .collect();
        Some(spy_split(&positives, cfg)?)
    } else {
        None
    };
    let roles: Vec<Role> = rows.iter().map(|r| role_of(r, approach, spies.as_ref())).collect();
    let (p, u) = training_sets(&roles);
    let x = feature_matrix(rows);
    let model = fit_pu_model(&x, &p, &u, cfg)?;
    Ok(ModelBundle { model, approach, spies })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredObservation {
    pub placekey: String,
    pub week_start: NaiveDate,
    pub category: LabelCategory,
    pub role: Role,
    pub score: f64,
}

/// Scores every row and tags it with its training role.
pub fn score_rows(bundle: &ModelBundle, rows: &[FeatureRow]) -> Result<Vec<ScoredObservation>> {
    let scores = bundle.model.score_matrix(&feature_matrix(rows))?;
    Ok(rows
        .iter()
        .zip(scores)
        .map(|(r, score)| ScoredObservation {
            placekey: r.placekey.clone(),
            week_start: r.week_start,
            category: r.category,
            role: bundle.role_of(r),
            score,
        })
        .collect())
}

/// Scores of held-out quiet rows, in input order.
pub fn score_quiet<M: Scorer>(model: &PuModel<M>, quiet_rows: &[FeatureRow]) -> Result<Vec<f64>> {
    if quiet_rows.is_empty() {
        return Ok(Vec::new());
    }
    model.score_matrix(&feature_matrix(quiet_rows))
}

// ---------------------------------------------------------------------------
// Bundle file

const BUNDLE_MAGIC: &[u8; 8] = b"PUSCRBDL";
const BUNDLE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct BundleHeader {
    feature_schema_version: u32,
    feature_names: Vec<String>,
    config: PuConfig,
    approach: Approach,
    spies: Option<SpyAssignment>,
}

impl ModelBundle {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = BundleHeader {
            feature_schema_version: FEATURE_SCHEMA_VERSION,
            feature_names: self.model.feature_names.clone(),
            config: self.model.config,
            approach: self.approach,
            spies: self.spies.clone(),
        };
        let mut out = Vec::new();
        codec::put_header(&mut out, BUNDLE_MAGIC, BUNDLE_VERSION, &header)?;
        codec::put_u32(&mut out, self.model.models.len() as u32);
        for forest in &self.model.models {
            codec::put_u64(&mut out, forest.config.seed);
            encode_trees(&mut out, &forest.trees);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ModelBundle> {
        let mut r = codec::Reader::new(bytes);
        let header: BundleHeader = codec::get_header(&mut r, BUNDLE_MAGIC, BUNDLE_VERSION)?;
        if header.feature_schema_version != FEATURE_SCHEMA_VERSION {
            return Err(Error::FeatureSchemaMismatch {
                expected: header.feature_names,
            });
        }
        let k = r.u32()? as usize;
        let width = header.feature_names.len();
        let mut models = Vec::with_capacity(k);
        for _ in 0..k {
            let seed = r.u64()?;
            let trees = decode_trees(&mut r, width)?;
            models.push(Forest::from_trees(
                ForestConfig {
                    seed,
                    ..header.config.forest
                },
                header.feature_names.clone(),
                trees,
            )?);
        }
        r.finish()?;
        Ok(ModelBundle {
            model: PuModel {
                models,
                config: header.config,
                feature_names: header.feature_names,
            },
            approach: header.approach,
            spies: header.spies,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ModelBundle> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Rejects bundles trained on a different feature list.
    pub fn check_schema(&self) -> Result<()> {
        if self.model.feature_names != feature_names() {
            return Err(Error::FeatureSchemaMismatch {
                expected: self.model.feature_names.clone(),
            });
        }
        Ok(())
    }
}
