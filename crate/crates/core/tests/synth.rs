use std::collections::{BTreeMap, BTreeSet};

use puscreen::features::{self, idx, FeatureRow, GeoIndex, PartisanTable, FEATURE_NAMES, N_FEATURES};
use puscreen::ingest::{self, LabelCategory};
use puscreen::synth::{self, LatentClass, SynthConfig, SynthData};
use statrs::distribution::{ContinuousCDF, Normal};

fn feature_rows(data: &SynthData) -> Vec<FeatureRow> {
    let (kept, _) = ingest::filter_population(data.visits.clone(), data.config.start_date);
    let (obs, _) = ingest::merge_and_label(kept, &ingest::aggregate_ads(&data.ads).0);
    let geo = GeoIndex::new(data.geo.clone()).unwrap();
    let partisan = PartisanTable::new(data.partisan.clone()).unwrap();
    features::build_feature_table(&obs, &geo, &partisan, None).unwrap().0
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn classes(data: &SynthData) -> (BTreeSet<String>, BTreeSet<String>, BTreeSet<String>) {
    let mut legit = BTreeSet::new();
    let mut labeled = BTreeSet::new();
    let mut hidden = BTreeSet::new();
    for t in &data.truth {
        match (t.latent_class, t.labeled_flag) {
            (LatentClass::Legitimate, _) => legit.insert(t.placekey.clone()),
            (LatentClass::Illicit, true) => labeled.insert(t.placekey.clone()),
            (LatentClass::Illicit, false) => hidden.insert(t.placekey.clone()),
        };
    }
    (legit, labeled, hidden)
}

/// Two-sided rank-sum z statistic with tie correction.
fn rank_sum_z(a: &[f64], b: &[f64]) -> f64 {
    let mut all: Vec<(f64, bool)> = a.iter().map(|&x| (x, true)).chain(b.iter().map(|&x| (x, false))).collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let n = all.len() as f64;
    let (mut ra, mut tie_term, mut i) = (0.0, 0.0, 0);
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        let mid = (i + j) as f64 / 2.0 + 1.0;
        ra += mid * all[i..=j].iter().filter(|e| e.1).count() as f64;
        i = j + 1;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let u = ra - na * (na + 1.0) / 2.0;
    let var = na * nb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var == 0.0 {
        // Every value tied: the samples cannot differ in location.
        return 0.0;
    }
    (u - na * nb / 2.0) / var.sqrt()
}

#[test]
fn default_population_counts_and_signature_gaps() {
    let data = synth::generate(&SynthConfig::default()).unwrap();
    let (legit, labeled, hidden) = classes(&data);
    assert_eq!((legit.len(), labeled.len(), hidden.len()), (1800, 100, 100));
    assert_eq!(data.visits.len(), 2000 * 52);
    assert_eq!(data.active_weeks.len(), 200 * 31);

    let rows = feature_rows(&data);
    let active = |r: &FeatureRow| data.active_weeks.contains(&(r.placekey.clone(), r.week_start));
    let legit_rows: Vec<&FeatureRow> = rows.iter().filter(|r| legit.contains(&r.placekey)).collect();
    let active_rows: Vec<&FeatureRow> = rows.iter().filter(|r| active(r)).collect();
    let gap = |f: &dyn Fn(&FeatureRow) -> f64| {
        mean(active_rows.iter().map(|r| f(r))) - mean(legit_rows.iter().map(|r| f(r)))
    };
    let v = |i: usize| move |r: &FeatureRow| r.values.0[i];
    let evening = gap(&v(idx::EVENING));
    let short = gap(&v(idx::SHORT_VISIT_SHARE));
    let local = gap(&|r: &FeatureRow| r.values.0[idx::DIST_0_1] + r.values.0[idx::DIST_1_2]);

    // Demand stability is a property of an establishment's active weeks.
    let mut totals: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
    for r in &data.visits {
        if legit.contains(&r.placekey) || data.active_weeks.contains(&(r.placekey.clone(), r.week_start)) {
            totals.entry(&r.placekey).or_default().push(r.weekly_total());
        }
    }
    let cv = |keys: &BTreeSet<String>| mean(keys.iter().map(|k| features::consistency_features(&totals[k.as_str()]).cv));
    let illicit: BTreeSet<String> = labeled.union(&hidden).cloned().collect();
    let stability = cv(&legit) - cv(&illicit);

    let cfg = &data.config;
    for (name, got, want) in [
        ("evening", evening, cfg.evening_shift),
        ("short dwell", short, cfg.short_dwell_share),
        ("within 2 miles", local, cfg.local_share),
        ("cv", stability, cfg.stability_gap),
    ] {
        eprintln!("{name}: gap {got:.4}, configured {want}");
        assert!((got - want).abs() <= 0.03, "{name} gap {got:.4}, configured {want}");
    }

    // Observed labels come only from labeled establishments.
    let observed: BTreeSet<&str> = rows
        .iter()
        .filter(|r| r.category != LabelCategory::NeverAsw)
        .map(|r| r.placekey.as_str())
        .collect();
    assert_eq!(observed, labeled.iter().map(String::as_str).collect());
}

#[test]
fn hidden_and_labeled_illicit_share_one_distribution() {
    // Bonferroni over the features keeps the family-wise level at 1%.
    let alpha = 0.01 / N_FEATURES as f64;
    let critical = Normal::new(0.0, 1.0).unwrap().inverse_cdf(1.0 - alpha / 2.0);
    for seed in [42, 43, 44] {
        let data = synth::generate(&SynthConfig {
            seed,
            ..SynthConfig::default()
        })
        .unwrap();
        let (_, labeled, hidden) = classes(&data);
        let rows = feature_rows(&data);
        // One value per establishment: its mean over active weeks.
        let per_est = |keys: &BTreeSet<String>, f: usize| -> Vec<f64> {
            let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
            for r in rows.iter().filter(|r| keys.contains(&r.placekey)) {
                if data.active_weeks.contains(&(r.placekey.clone(), r.week_start)) {
                    let e = acc.entry(&r.placekey).or_default();
                    e.0 += r.values.0[f];
                    e.1 += 1;
                }
            }
            acc.values().map(|(s, n)| s / *n as f64).collect()
        };
        for (f, name) in FEATURE_NAMES.iter().enumerate() {
            let z = rank_sum_z(&per_est(&labeled, f), &per_est(&hidden, f));
            assert!(z.abs() < critical, "seed {seed}, {name}: z = {z:.3} (critical {critical:.3})");
        }
    }
}

#[test]
fn generation_is_deterministic_and_seed_sensitive() {
    let cfg = SynthConfig {
        n_establishments: 100,
        n_weeks: 10,
        n_cities: 3,
        ..SynthConfig::default()
    };
    let a = synth::generate(&cfg).unwrap();
    let b = synth::generate(&cfg).unwrap();
    assert_eq!(a.visits, b.visits);
    assert_eq!(a.ads, b.ads);
    assert_eq!(a.truth, b.truth);
    let c = synth::generate(&SynthConfig { seed: 43, ..cfg }).unwrap();
    assert_ne!(a.visits, c.visits);
}

#[test]
fn written_outputs_read_back_through_ingest() {
    let cfg = SynthConfig {
        n_establishments: 50,
        n_weeks: 6,
        n_distractors: 8,
        n_cities: 2,
        ..SynthConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let data = synth::generate(&cfg).unwrap();
    let paths = data.write(dir.path()).unwrap();
    let (obs, summary) = ingest::run(&paths.visits, &paths.ads, cfg.start_date).unwrap();
    assert_eq!(summary.rows_read, (50 + 8) * 6);
    assert_eq!(summary.establishments_kept, 50);
    assert!(summary.rows_malformed.is_empty());
    assert_eq!(obs.len(), 50 * 6);
    let truth = synth::read_truth(&paths.truth).unwrap();
    assert_eq!(synth::illicit_set(&truth), data.illicit_placekeys());
}
