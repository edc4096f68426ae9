use std::collections::{BTreeMap, BTreeSet};

use chrono::{Duration, NaiveDate};
use proptest::prelude::*;
use puscreen::ingest::{self, AdRecord, LabelCategory, LabelCounts, VisitWeekRecord, HOURS_PER_WEEK, TARGET_NAICS};
use puscreen::synth::{self, SynthConfig};

fn monday(i: i64) -> NaiveDate {
    NaiveDate::from_ymd_opt(2024, 1, 1).unwrap() + Duration::weeks(i)
}

const PHONES: [&str; 4] = ["(205) 555-0101", "1-205-555-0102", "205.555.0103", "+1 205 555 0104"];

fn record(placekey: usize, week: i64, phone: usize) -> VisitWeekRecord {
    VisitWeekRecord {
        placekey: format!("pk-{placekey}"),
        naics_code: TARGET_NAICS.into(),
        location_name: "Lotus Massage".into(),
        phone: PHONES[phone].into(),
        latitude: 33.5,
        longitude: -86.8,
        poi_cbg: "010730001001".into(),
        week_start: monday(week),
        hourly_visits: Some(vec![1; HOURS_PER_WEEK]),
        dwell_buckets: BTreeMap::new(),
        visitor_home_cbgs: BTreeMap::new(),
    }
}

/// Unique (placekey, week) rows plus ad weeks keyed by normalized phone.
fn instance() -> impl Strategy<Value = (Vec<VisitWeekRecord>, Vec<AdRecord>)> {
    let rows = proptest::collection::btree_set((0usize..8, 0i64..6), 1..40).prop_flat_map(|keys| {
        let n = keys.len();
        (Just(keys), proptest::collection::vec(0usize..4, n))
    });
    let ads = proptest::collection::vec((0usize..4, 0i64..6, 1u64..4), 0..10);
    (rows, ads).prop_map(|((keys, phones), ads)| {
        let recs = keys.into_iter().zip(phones).map(|((p, w), ph)| record(p, w, ph)).collect();
        let ads = ads
            .into_iter()
            .map(|(ph, w, c)| AdRecord {
                phone: ingest::normalize_phone(PHONES[ph]).unwrap(),
                week_start: monday(w),
                ad_count: c,
            })
            .collect();
        (recs, ads)
    })
}

proptest! {
    #[test]
    fn categories_partition_rows((recs, ads) in instance()) {
        let n = recs.len();
        let (out, _) = ingest::merge_and_label(recs, &ads);
        let c = LabelCounts::of(&out);
        prop_assert_eq!(c.illicit_active + c.illicit_quiet + c.never_asw, n);
        prop_assert_eq!(out.len(), n);
    }

    #[test]
    fn quiet_placekeys_have_an_active_week((recs, ads) in instance()) {
        let (out, _) = ingest::merge_and_label(recs, &ads);
        let active: BTreeSet<&str> = out
            .iter()
            .filter(|o| o.category == LabelCategory::IllicitActive)
            .map(|o| o.record.placekey.as_str())
            .collect();
        for o in out.iter().filter(|o| o.category == LabelCategory::IllicitQuiet) {
            prop_assert!(active.contains(o.record.placekey.as_str()));
        }
    }

    #[test]
    fn merge_ignores_input_order((recs, ads) in instance(), rot_a in 0usize..40, rot_b in 0usize..10) {
        let (base, _) = ingest::merge_and_label(recs.clone(), &ads);
        let mut r2 = recs;
        r2.reverse();
        let k = rot_a % r2.len();
        r2.rotate_left(k);
        let mut a2 = ads;
        a2.reverse();
        if !a2.is_empty() {
            let k = rot_b % a2.len();
            a2.rotate_left(k);
        }
        let (permuted, _) = ingest::merge_and_label(r2, &a2);
        prop_assert_eq!(base, permuted);
    }
}

#[test]
fn rerun_writes_identical_bytes() {
    let cfg = SynthConfig {
        n_establishments: 60,
        n_weeks: 8,
        n_distractors: 6,
        n_cities: 2,
        ..SynthConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let paths = synth::generate(&cfg).unwrap().write(dir.path()).unwrap();
    let mut outputs = Vec::new();
    for i in 0..2 {
        let (obs, summary) = ingest::run(&paths.visits, &paths.ads, cfg.start_date).unwrap();
        let out = dir.path().join(format!("labeled{i}.jsonl"));
        ingest::write_labeled(&out, &obs).unwrap();
        outputs.push((std::fs::read(&out).unwrap(), serde_json::to_vec(&summary).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    let back = ingest::read_labeled(&dir.path().join("labeled0.jsonl")).unwrap();
    assert_eq!(back.len(), 60 * 8);
}
