//! Ranking metrics for PU evaluation: AUC, average precision, recovery,
//! budgeted coverage, business-level cross-validation and permutation
//! importance.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureRow, FEATURE_CATEGORIES, FEATURE_NAMES};
use crate::forest::{FeatureMatrix, Scorer};
use crate::ingest::LabelCategory;
use crate::pu::{self, PuConfig, Role, ScoredObservation};
use crate::rank::Aggregation;
use crate::seed;

fn check_scores(name: &'static str, s: &[f64]) -> Result<()> {
    if s.is_empty() {
        return Err(Error::Empty(name));
    }
    if s.iter().any(|v| v.is_nan()) {
        return Err(Error::Invalid(format!("{name} contain NaN")));
    }
    Ok(())
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from midrank sums in integer arithmetic.
pub fn auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    check_scores("positive scores", pos)?;
    check_scores("negative scores", neg)?;
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&s| (s, true)).chain(neg.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Twice the rank sum of positives; a tie group over 1-based ranks a..=b
    // gives each member the midrank (a+b)/2.
    let mut doubled: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let n_pos = all[i..=j].iter().filter(|e| e.1).count() as u128;
        doubled += n_pos * (i as u128 + 1 + j as u128 + 1);
        i = j + 1;
    }
    let (np, nn) = (pos.len() as u128, neg.len() as u128);
    let u2 = doubled - np * (np + 1);
    Ok(u2 as f64 / (2 * np * nn) as f64)
}

/// Area under the precision-recall step curve: Σ (R_k − R_{k−1})·P_k over the
/// list sorted by descending score. Equal scores keep input order with the
/// negatives listed before the positives, so ties never inflate precision.
pub fn average_precision(pos: &[f64], neg: &[f64]) -> Result<f64> {
    check_scores("positive scores", pos)?;
    check_scores("negative scores", neg)?;
    let mut all: Vec<(f64, bool)> = neg.iter().map(|&s| (s, false)).chain(pos.iter().map(|&s| (s, true))).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let n_pos = pos.len() as f64;
    let mut hits = 0usize;
    let mut ap = 0.0;
    for (k, &(_, is_pos)) in all.iter().enumerate() {
        if is_pos {
            hits += 1;
            ap += (hits as f64 / (k + 1) as f64) / n_pos;
        }
    }
    Ok(ap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryPoint {
    pub threshold: f64,
    pub fraction: f64,
}

pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.5, 0.6, 0.7];

/// Fraction of spy scores strictly above each threshold.
pub fn recovery_rate(spy_scores: &[f64], thresholds: &[f64]) -> Result<Vec<RecoveryPoint>> {
    check_scores("spy scores", spy_scores)?;
    let n = spy_scores.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&t| RecoveryPoint {
            threshold: t,
            fraction: spy_scores.iter().filter(|&&s| s > t).count() as f64 / n,
        })
        .collect())
}

/// Nearest-rank (100−K)th percentile of the values.
pub fn budget_threshold(values: &[f64], k_percent: u32) -> Result<f64> {
    check_scores("establishment scores", values)?;
    if k_percent == 0 || k_percent > 100 {
        return Err(Error::Invalid(format!("budget percentage {k_percent} must be in 1..=100")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((100 - k_percent as usize) * n).div_ceil(100).max(1);
    Ok(sorted[rank - 1])
}

/// Fraction of holdout establishments whose score reaches the top-K% cutoff.
pub fn coverage_at_budget(delta: &BTreeMap<String, f64>, holdout: &BTreeSet<String>, k_percent: u32) -> Result<f64> {
    if holdout.is_empty() {
        return Err(Error::Empty("holdout establishments"));
    }
    let values: Vec<f64> = delta.values().copied().collect();
    let tau = budget_threshold(&values, k_percent)?;
    let mut hit = 0usize;
    for key in holdout {
        let d = delta
            .get(key)
            .ok_or_else(|| Error::Invalid(format!("holdout establishment {key} has no score")))?;
        if *d >= tau {
            hit += 1;
        }
    }
    Ok(hit as f64 / holdout.len() as f64)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolMetrics {
    pub auc: f64,
    pub average_precision: f64,
    pub n_negatives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Spies against unlabeled Never-ASW rows.
    pub auc: f64,
    pub average_precision: f64,
    pub recovery: Vec<RecoveryPoint>,
    pub category_means: BTreeMap<String, f64>,
    pub n_pos: usize,
    pub n_unlabeled: usize,
    /// Spies against unlabeled rows of establishments known to be legitimate,
    /// when ground truth is supplied.
    pub true_negative: Option<PoolMetrics>,
}

/// Spy-protocol metrics from scored rows. `illicit` optionally lists
/// establishments known to be illicit (for synthetic data).
pub fn spy_report(scored: &[ScoredObservation], illicit: Option<&BTreeSet<String>>, thresholds: &[f64]) -> Result<MetricReport> {
    let spies: Vec<f64> = scored.iter().filter(|s| s.role == Role::Spy).map(|s| s.score).collect();
    let unlabeled: Vec<&ScoredObservation> = scored
        .iter()
        .filter(|s| s.role == Role::Unlabeled && s.category == LabelCategory::NeverAsw)
        .collect();
    let neg: Vec<f64> = unlabeled.iter().map(|s| s.score).collect();
    if spies.is_empty() {
        return Err(Error::Invalid("scores contain no spy rows; train with spies to evaluate".into()));
    }

    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for s in scored {
        let key = match (s.role, s.category) {
            (Role::TrainPositive, LabelCategory::IllicitActive) => "train_positive_in_sample",
            (Role::TrainPositive, _) => "train_positive_quiet_in_sample",
            (Role::Spy, _) => "spy",
            (_, LabelCategory::IllicitQuiet) => "illicit_quiet",
            _ => "unlabeled",
        };
        groups.entry(key).or_default().push(s.score);
        if let (Some(truth), "unlabeled") = (illicit, key) {
            let k = if truth.contains(&s.placekey) { "hidden_positive" } else { "true_negative" };
            groups.entry(k).or_default().push(s.score);
        }
    }
    let category_means = groups.into_iter().map(|(k, v)| (k.to_string(), mean(&v))).collect();

    let true_negative = match illicit {
        None => None,
        Some(truth) => {
            let tn: Vec<f64> = unlabeled.iter().filter(|s| !truth.contains(&s.placekey)).map(|s| s.score).collect();
            Some(PoolMetrics {
                auc: auc(&spies, &tn)?,
                average_precision: average_precision(&spies, &tn)?,
                n_negatives: tn.len(),
            })
        }
    };
    Ok(MetricReport {
        auc: auc(&spies, &neg)?,
        average_precision: average_precision(&spies, &neg)?,
        recovery: recovery_rate(&spies, thresholds)?,
        category_means,
        n_pos: spies.len(),
        n_unlabeled: neg.len(),
        true_negative,
    })
}

pub fn format_spy_table(r: &MetricReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<34}{:>10}", "Metric", "Value");
    let _ = writeln!(s, "{:<34}{:>10.3}", "AUC (spies vs unlabeled)", r.auc);
    let _ = writeln!(s, "{:<34}{:>10.3}", "Average precision", r.average_precision);
    if let Some(tn) = &r.true_negative {
        let _ = writeln!(s, "{:<34}{:>10.3}", "AUC (spies vs true negatives)", tn.auc);
        let _ = writeln!(s, "{:<34}{:>10.3}", "AP (spies vs true negatives)", tn.average_precision);
    }
    for p in &r.recovery {
        let _ = writeln!(s, "{:<34}{:>9.1}%", format!("Recovery @ {}", p.threshold), 100.0 * p.fraction);
    }
    let _ = writeln!(s, "{:<34}{:>10}", "Spy observations", r.n_pos);
    let _ = writeln!(s, "{:<34}{:>10}", "Unlabeled observations", r.n_unlabeled);
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<34}{:>10}", "Group", "Mean score");
    for (k, v) in &r.category_means {
        let _ = writeln!(s, "{k:<34}{v:>10.3}");
    }
    s
}

// ---------------------------------------------------------------------------
// Business-level cross-validation

pub const COVERAGE_LEVELS: [u32; 4] = [1, 5, 10, 20];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub pu: PuConfig,
    pub coverage_levels: Vec<u32>,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 5,
            pu: PuConfig::default(),
            coverage_levels: COVERAGE_LEVELS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub auc: f64,
    /// Coverage keyed by budget percentage.
    pub coverage: BTreeMap<u32, f64>,
    pub n_holdout: usize,
    pub n_unlabeled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub aggregation: Aggregation,
    pub folds: Vec<FoldResult>,
    pub auc_mean: f64,
    pub auc_sd: f64,
    pub coverage_mean: BTreeMap<u32, f64>,
    pub coverage_sd: BTreeMap<u32, f64>,
}

/// Positive placekeys split into `folds` groups after a seeded shuffle.
pub fn assign_folds(positive_keys: &BTreeSet<String>, folds: usize, root_seed: u64) -> Result<Vec<BTreeSet<String>>> {
    if folds < 2 {
        return Err(Error::Invalid("cross-validation needs at least 2 folds".into()));
    }
    if positive_keys.len() < folds {
        return Err(Error::TooFewPositiveEstablishments {
            needed: folds,
            got: positive_keys.len(),
        });
    }
    let mut keys: Vec<&String> = positive_keys.iter().collect();
    keys.shuffle(&mut seed::derived_rng(root_seed, "cv-folds", 0));
    let mut out = vec![BTreeSet::new(); folds];
    for (i, k) in keys.into_iter().enumerate() {
        out[i % folds].insert(k.clone());
    }
    Ok(out)
}

/// Establishment-level cross-validation. Each fold trains on the active
/// weeks of the remaining positive establishments against Never-ASW weeks,
/// then ranks the held-out establishments (all of their weeks) against the
/// Never-ASW establishments. Training positives are not ranked. One report
/// per requested aggregation, sharing the fold models.
pub fn business_cv(rows: &[FeatureRow], cfg: &CvConfig, aggregations: &[Aggregation]) -> Result<Vec<CvReport>> {
    let positive_keys: BTreeSet<String> = rows
        .iter()
        .filter(|r| r.category == LabelCategory::IllicitActive)
        .map(|r| r.placekey.clone())
        .collect();
    let folds = assign_folds(&positive_keys, cfg.folds, cfg.pu.seed)?;
    let x = pu::feature_matrix(rows);
    let unlabeled: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].category == LabelCategory::NeverAsw).collect();

    let mut per_agg: Vec<Vec<FoldResult>> = vec![Vec::new(); aggregations.len()];
    for (f, holdout) in folds.iter().enumerate() {
        let train_pos: Vec<usize> = (0..rows.len())
            .filter(|&i| rows[i].category == LabelCategory::IllicitActive && !holdout.contains(&rows[i].placekey))
            .collect();
        let fold_cfg = PuConfig {
            seed: seed::derive(cfg.pu.seed, "cv-fold", f as u64),
            ..cfg.pu
        };
        let model = pu::fit_pu_model(&x, &train_pos, &unlabeled, &fold_cfg)?;
        let ranked: Vec<usize> = (0..rows.len())
            .filter(|&i| holdout.contains(&rows[i].placekey) || rows[i].category == LabelCategory::NeverAsw)
            .collect();
        let scores = model.score_matrix(&x.select(&ranked))?;
        let mut weeks: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for (&i, s) in ranked.iter().zip(scores) {
            weeks.entry(rows[i].placekey.as_str()).or_default().push(s);
        }
        for (a, agg) in aggregations.iter().enumerate() {
            let mut delta = BTreeMap::new();
            let (mut hp, mut un) = (Vec::new(), Vec::new());
            for (&k, s) in &weeks {
                let d = agg.apply(s)?;
                if holdout.contains(k) {
                    hp.push(d);
                } else {
                    un.push(d);
                }
                delta.insert(k.to_string(), d);
            }
            let mut coverage = BTreeMap::new();
            for &level in &cfg.coverage_levels {
                coverage.insert(level, coverage_at_budget(&delta, holdout, level)?);
            }
            per_agg[a].push(FoldResult {
                fold: f,
                auc: auc(&hp, &un)?,
                coverage,
                n_holdout: hp.len(),
                n_unlabeled: un.len(),
            });
        }
        log::info!("business cv fold {} of {} done", f + 1, folds.len());
    }

    Ok(aggregations
        .iter()
        .zip(per_agg)
        .map(|(&aggregation, folds)| {
            let aucs: Vec<f64> = folds.iter().map(|f| f.auc).collect();
            let mut coverage_mean = BTreeMap::new();
            let mut coverage_sd = BTreeMap::new();
            for &level in &cfg.coverage_levels {
                let v: Vec<f64> = folds.iter().map(|f| f.coverage[&level]).collect();
                coverage_mean.insert(level, mean(&v));
                coverage_sd.insert(level, sample_sd(&v));
            }
            CvReport {
                aggregation,
                auc_mean: mean(&aucs),
                auc_sd: sample_sd(&aucs),
                folds,
                coverage_mean,
                coverage_sd,
            }
        })
        .collect())
}

pub fn format_cv_table(reports: &[CvReport]) -> String {
    let mut s = String::new();
    let Some(first) = reports.first() else {
        return s;
    };
    let _ = write!(s, "{:<12}{:>16}", "Aggregation", "AUC");
    for level in first.coverage_mean.keys() {
        let _ = write!(s, "{:>18}", format!("Top-{level}%"));
    }
    let _ = writeln!(s);
    for r in reports {
        let _ = write!(s, "{:<12}{:>16}", r.aggregation.as_str(), format!("{:.3} ± {:.3}", r.auc_mean, r.auc_sd));
        for (level, m) in &r.coverage_mean {
            let _ = write!(s, "{:>18}", format!("{:.1}% ± {:.1}", 100.0 * m, 100.0 * r.coverage_sd[level]));
        }
        let _ = writeln!(s);
    }
    s
}

// ---------------------------------------------------------------------------
// Permutation importance

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Importance {
    pub baseline_auc: f64,
    /// Mean AUC drop per column.
    pub drops: Vec<f64>,
}

/// Mean over `repeats` seeded column shuffles of the AUC drop, per column.
/// AUC compares rows flagged in `pos_mask` against the rest.
pub fn permutation_importance<S: Scorer + ?Sized>(
    model: &S,
    x: &FeatureMatrix,
    pos_mask: &[bool],
    repeats: usize,
    root_seed: u64,
) -> Result<Importance> {
    if pos_mask.len() != x.n_rows() {
        return Err(Error::WidthMismatch {
            expected: x.n_rows(),
            got: pos_mask.len(),
        });
    }
    if repeats == 0 {
        return Err(Error::Invalid("repeats must be at least 1".into()));
    }
    let split_auc = |scores: &[f64]| {
        let (mut p, mut n) = (Vec::new(), Vec::new());
        for (&s, &m) in scores.iter().zip(pos_mask) {
            if m {
                p.push(s)
            } else {
                n.push(s)
            }
        }
        auc(&p, &n)
    };
    let baseline_auc = split_auc(&model.score_matrix(x)?)?;
    let mut work = x.clone();
    let mut drops = Vec::with_capacity(x.n_cols());
    for j in 0..x.n_cols() {
        let original = x.column(j);
        let feature_seed = seed::derive(root_seed, "permute", j as u64);
        let mut total = 0.0;
        for r in 0..repeats as u64 {
            let mut col = original.clone();
            col.shuffle(&mut seed::derived_rng(feature_seed, "repeat", r));
            for (i, v) in col.into_iter().enumerate() {
                work.set(i, j, v);
            }
            total += baseline_auc - split_auc(&model.score_matrix(&work)?)?;
        }
        for (i, &v) in original.iter().enumerate() {
            work.set(i, j, v);
        }
        drops.push(total / repeats as f64);
    }
    Ok(Importance { baseline_auc, drops })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub name: String,
    pub drop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub baseline_auc: f64,
    pub features: Vec<ImportanceEntry>,
    pub categories: Vec<ImportanceEntry>,
}

/// Names the drops of a 28-column importance run and totals them by
/// feature category.
pub fn importance_report(imp: &Importance) -> Result<ImportanceReport> {
    if imp.drops.len() != FEATURE_NAMES.len() {
        return Err(Error::WidthMismatch {
            expected: FEATURE_NAMES.len(),
            got: imp.drops.len(),
        });
    }
    let features = FEATURE_NAMES
        .iter()
        .zip(&imp.drops)
        .map(|(n, &d)| ImportanceEntry {
            name: n.to_string(),
            drop: d,
        })
        .collect();
    let categories = FEATURE_CATEGORIES
        .iter()
        .map(|(name, range)| ImportanceEntry {
            name: name.to_string(),
            drop: imp.drops[range.clone()].iter().sum(),
        })
        .collect();
    Ok(ImportanceReport {
        baseline_auc: imp.baseline_auc,
        features,
        categories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{fit_forest, ForestConfig};

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8], &[0.1, 0.2]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5], &[0.5]).unwrap(), 0.5);
        assert_eq!(auc(&[0.9, 0.3], &[0.5, 0.1]).unwrap(), 0.75);
        assert!(matches!(auc(&[], &[0.1]), Err(Error::Empty(_))));
        assert!(auc(&[0.1], &[]).is_err());
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[0.9, 0.8], &[0.1]).unwrap(), 1.0);
        assert_eq!(average_precision(&[0.2], &[0.7]).unwrap(), 0.5);
        let ap = average_precision(&[0.9, 0.4], &[0.6]).unwrap();
        assert!((ap - (0.5 + 2.0 / 3.0 * 0.5)).abs() < 1e-15);
        assert!((ap - 0.8333).abs() < 1e-4);
        // A tied positive sits behind the tied negative.
        assert_eq!(average_precision(&[0.5], &[0.5]).unwrap(), 0.5);
        assert!(average_precision(&[0.5], &[]).is_err());
    }

    #[test]
    fn recovery_examples() {
        let s = [0.6, 0.6, 0.8];
        let r = recovery_rate(&s, &[0.5, 0.7, 0.6]).unwrap();
        assert_eq!(r[0].fraction, 1.0);
        assert_eq!(r[1].fraction, 1.0 / 3.0);
        assert_eq!(r[2].fraction, 1.0 / 3.0);
        assert!(recovery_rate(&[], &[0.5]).is_err());
    }

    fn deltas(n: usize, f: impl Fn(usize) -> f64) -> BTreeMap<String, f64> {
        (1..=n).map(|i| (format!("e{i:03}"), f(i))).collect()
    }

    #[test]
    fn coverage_examples() {
        let d = deltas(100, |i| i as f64 / 100.0);
        let top: BTreeSet<String> = (91..=100).map(|i| format!("e{i:03}")).collect();
        assert_eq!(coverage_at_budget(&d, &top, 10).unwrap(), 1.0);
        // The 99th nearest-rank percentile is the 99th value; both it and the
        // maximum satisfy the inclusive cutoff.
        assert_eq!(coverage_at_budget(&d, &top, 1).unwrap(), 0.2);

        let spread: BTreeSet<String> = (0..10).map(|i| format!("e{:03}", i * 10 + 5)).collect();
        assert_eq!(coverage_at_budget(&d, &spread, 10).unwrap(), 0.1);

        let flat = deltas(50, |i| if i <= 5 { 1.0 } else { 0.3 });
        let best: BTreeSet<String> = (1..=5).map(|i| format!("e{i:03}")).collect();
        assert_eq!(coverage_at_budget(&flat, &best, 1).unwrap(), 1.0);

        assert!(coverage_at_budget(&d, &BTreeSet::new(), 10).is_err());
        assert!(coverage_at_budget(&d, &top, 0).is_err());
    }

    #[test]
    fn budget_threshold_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(budget_threshold(&v, 10).unwrap(), 90.0);
        assert_eq!(budget_threshold(&v, 100).unwrap(), 1.0);
        assert_eq!(budget_threshold(&[3.0, 1.0, 2.0], 50).unwrap(), 2.0);
    }

    #[test]
    fn folds_partition_positives() {
        let keys: BTreeSet<String> = (0..23).map(|i| format!("p{i}")).collect();
        let folds = assign_folds(&keys, 5, 9).unwrap();
        let mut union = BTreeSet::new();
        for f in &folds {
            assert!(f.len() == 4 || f.len() == 5);
            for k in f {
                assert!(union.insert(k.clone()));
            }
        }
        assert_eq!(union, keys);
        assert!(assign_folds(&keys, 30, 9).is_err());
    }

    fn one_feature_data(n: usize) -> (FeatureMatrix, Vec<bool>) {
        let x = FeatureMatrix::new(2, (0..n).flat_map(|i| [i as f64, 7.0]).collect()).unwrap();
        let y = (0..n).map(|i| i >= n / 2).collect();
        (x, y)
    }

    #[test]
    fn permutation_importance_contract() {
        let (x, y) = one_feature_data(200);
        let cfg = ForestConfig {
            n_trees: 15,
            features_per_split: 2,
            seed: 2,
            ..Default::default()
        };
        let forest = fit_forest(&x, &y, &cfg).unwrap();
        let imp = permutation_importance(&forest, &x, &y, 10, 4).unwrap();
        assert_eq!(imp.baseline_auc, 1.0);
        assert_eq!(imp.drops[1], 0.0);
        assert!(imp.drops[0] > 0.4, "{}", imp.drops[0]);
        assert_eq!(imp, permutation_importance(&forest, &x, &y, 10, 4).unwrap());
    }

    #[test]
    fn sd_is_sample_sd() {
        assert_eq!(sample_sd(&[1.0]), 0.0);
        assert!((sample_sd(&[1.0, 3.0]) - 2f64.sqrt()).abs() < 1e-15);
    }
}
