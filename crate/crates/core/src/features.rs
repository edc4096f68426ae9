//! The 28 engineered features for one establishment-week.
//!
//! All logarithms are natural. Share and ratio features are 0 whenever their
//! denominator is 0, so every vector is total and finite.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{LabelCategory, LabeledObservation, VisitWeekRecord, DWELL_BUCKETS, HOURS_PER_WEEK};
use crate::io;

pub const N_FEATURES: usize = 28;

/// Bumped whenever the feature list or its order changes.
pub const FEATURE_SCHEMA_VERSION: u32 = 1;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "early_morning",
    "morning_business",
    "afternoon",
    "evening",
    "late_evening",
    "late_night",
    "weekend",
    "friday_sat",
    "hourly_entropy",
    "daily_entropy",
    "peak_hour_ratio",
    "short_visit_share",
    "medium_visit_share",
    "long_visit_share",
    "dist_0_1mi",
    "dist_1_2mi",
    "dist_2_5mi",
    "dist_5_30mi",
    "dist_30_60mi",
    "dist_60plus",
    "cv",
    "trend",
    "burstiness",
    "max_jump",
    "active_ratio",
    "log_cbg_area",
    "partisan_index",
    "log_visits",
];

/// Column positions of selected features.
pub mod idx {
    pub const EVENING: usize = 3;
    pub const LATE_EVENING: usize = 4;
    pub const WEEKEND: usize = 6;
    pub const HOURLY_ENTROPY: usize = 8;
    pub const DAILY_ENTROPY: usize = 9;
    pub const PEAK_HOUR_RATIO: usize = 10;
    pub const SHORT_VISIT_SHARE: usize = 11;
    pub const DIST_0_1: usize = 14;
    pub const DIST_1_2: usize = 15;
    pub const CV: usize = 20;
    pub const ACTIVE_RATIO: usize = 24;
    pub const PARTISAN_INDEX: usize = 26;
    pub const LOG_VISITS: usize = 27;
}

/// Feature groups used to total permutation importance.
pub const FEATURE_CATEGORIES: [(&str, std::ops::Range<usize>); 7] = [
    ("temporal_patterns", 0..8),
    ("visit_distribution", 8..11),
    ("service_duration", 11..14),
    ("market_reach", 14..20),
    ("operational_consistency", 20..25),
    ("location_context", 25..27),
    ("volume_control", 27..28),
];

pub fn feature_names() -> Vec<String> {
    FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; N_FEATURES]);

impl FeatureVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES.iter().position(|n| *n == name).map(|i| self.0[i])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Square meters per square mile.
pub const SQ_METERS_PER_SQ_MILE: f64 = 2_589_988.0;

/// Earth radius used by the distance features, miles.
pub const EARTH_RADIUS_MILES: f64 = 3958.756;

/// Lower edges (miles) of the distance bins after the first; bins are
/// left-closed and right-open.
pub const DISTANCE_EDGES: [f64; 5] = [1.0, 2.0, 5.0, 30.0, 60.0];

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn hour_of_day_totals(hourly: &[u32]) -> [u64; 24] {
    assert_eq!(hourly.len(), HOURS_PER_WEEK, "hourly visits must have 168 entries");
    let mut out = [0u64; 24];
    for (i, &v) in hourly.iter().enumerate() {
        out[i % 24] += u64::from(v);
    }
    out
}

fn day_totals(hourly: &[u32]) -> [u64; 7] {
    let mut out = [0u64; 7];
    for (i, &v) in hourly.iter().enumerate() {
        out[i / 24] += u64::from(v);
    }
    out
}

/// Six 4-hour window shares (early morning, morning business, afternoon,
/// evening, late evening, late night), then weekend and Friday-Saturday
/// shares. Index `24 * day + hour`, day 0 = Monday.
pub fn temporal_shares(hourly: &[u32]) -> [f64; 8] {
    let by_hour = hour_of_day_totals(hourly);
    let by_day = day_totals(hourly);
    let total: u64 = by_day.iter().sum();
    let window = |start: usize| by_hour[start..start + 4].iter().sum::<u64>();
    [
        ratio(window(4), total),
        ratio(window(8), total),
        ratio(window(12), total),
        ratio(window(16), total),
        ratio(window(20), total),
        ratio(window(0), total),
        ratio(by_day[5] + by_day[6], total),
        ratio(by_day[4] + by_day[5], total),
    ]
}

/// Shannon entropy (nats) of a count vector; `0 ln 0 = 0`.
pub fn entropy(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            p * p.ln()
        })
        .sum::<f64>()
}

/// (hourly entropy, daily entropy, peak-hour ratio).
pub fn entropy_features(hourly: &[u32]) -> (f64, f64, f64) {
    let by_hour = hour_of_day_totals(hourly);
    let by_day = day_totals(hourly);
    let total: u64 = by_hour.iter().sum();
    let peak = by_hour.iter().copied().max().unwrap_or(0);
    (entropy(&by_hour), entropy(&by_day), ratio(peak, total))
}

/// (short, medium, long) dwell shares: `<5` minutes, 5 to 60, over 60.
pub fn dwell_shares(buckets: &BTreeMap<String, u64>) -> Result<(f64, f64, f64)> {
    let (mut short, mut medium, mut long) = (0u64, 0u64, 0u64);
    for (label, &n) in buckets {
        match label.as_str() {
            "<5" => short += n,
            "5-10" | "11-20" | "21-60" => medium += n,
            "61-120" | "121-240" | ">240" => long += n,
            other => {
                debug_assert!(!DWELL_BUCKETS.contains(&other));
                return Err(Error::UnknownDwellBucket(other.to_string()));
            }
        }
    }
    let total = short + medium + long;
    Ok((ratio(short, total), ratio(medium, total), ratio(long, total)))
}

/// Great-circle distance in miles on a sphere of radius [`EARTH_RADIUS_MILES`].
pub fn haversine_miles(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (phi1, phi2) = (lat1.to_radians(), lat2.to_radians());
    let dphi = (lat2 - lat1).to_radians();
    let dlambda = (lon2 - lon1).to_radians();
    let a = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_MILES * a.sqrt().min(1.0).asin()
}

pub fn distance_bin(miles: f64) -> usize {
    DISTANCE_EDGES.iter().filter(|&&e| miles >= e).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbgGeo {
    pub cbg_id: String,
    pub centroid_lat: f64,
    pub centroid_lon: f64,
    #[serde(rename = "land_area_m2")]
    pub land_area: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GeoIndex {
    by_id: HashMap<String, CbgGeo>,
}

impl GeoIndex {
    pub fn new(rows: impl IntoIterator<Item = CbgGeo>) -> Result<Self> {
        let mut by_id = HashMap::new();
        for g in rows {
            if !(g.land_area > 0.0) {
                return Err(Error::Invalid(format!("land area of {} must be positive", g.cbg_id)));
            }
            by_id.insert(g.cbg_id.clone(), g);
        }
        Ok(GeoIndex { by_id })
    }

    pub fn get(&self, cbg: &str) -> Option<&CbgGeo> {
        self.by_id.get(cbg)
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::new(io::read_csv::<CbgGeo>(path)?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartisanRow {
    pub county_fips: String,
    pub index: f64,
}

/// County partisan index with a fallback for counties not in the table.
#[derive(Debug, Clone)]
pub struct PartisanTable {
    by_county: HashMap<String, f64>,
    pub default: f64,
}

impl Default for PartisanTable {
    fn default() -> Self {
        PartisanTable {
            by_county: HashMap::new(),
            default: 0.5,
        }
    }
}

impl PartisanTable {
    pub fn new(rows: impl IntoIterator<Item = PartisanRow>) -> Result<Self> {
        let mut by_county = HashMap::new();
        for r in rows {
            if !(0.0..=1.0).contains(&r.index) {
                return Err(Error::Invalid(format!("partisan index of {} outside [0,1]", r.county_fips)));
            }
            by_county.insert(r.county_fips, r.index);
        }
        Ok(PartisanTable {
            by_county,
            ..Default::default()
        })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::new(io::read_csv::<PartisanRow>(path)?)
    }

    /// Index for the county of a 12-digit block group id (its first 5 digits).
    pub fn for_cbg(&self, cbg: &str) -> f64 {
        cbg.get(..5)
            .and_then(|county| self.by_county.get(county))
            .copied()
            .unwrap_or(self.default)
    }
}

/// Visitor-weighted shares over the six distance bins, plus the number of
/// visitors whose home block group could not be resolved (left out of the
/// denominator).
pub fn distance_shares(
    visitor_home_cbgs: &BTreeMap<String, u64>,
    poi_lat: f64,
    poi_lon: f64,
    geo: &GeoIndex,
) -> ([f64; 6], u64) {
    let mut bins = [0u64; 6];
    let mut unresolved = 0;
    for (cbg, &n) in visitor_home_cbgs {
        match geo.get(cbg) {
            Some(g) => bins[distance_bin(haversine_miles(poi_lat, poi_lon, g.centroid_lat, g.centroid_lon))] += n,
            None => unresolved += n,
        }
    }
    let total: u64 = bins.iter().sum();
    (bins.map(|b| ratio(b, total)), unresolved)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Consistency {
    pub cv: f64,
    pub trend: f64,
    pub burstiness: f64,
    pub max_jump: f64,
    pub active_ratio: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn pop_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Stability of an establishment's weekly totals (oldest first). An empty
/// history gives all zeros.
pub fn consistency_features(weekly_totals: &[u64]) -> Consistency {
    let t = weekly_totals.len();
    if t == 0 {
        return Consistency::default();
    }
    let v: Vec<f64> = weekly_totals.iter().map(|&x| x as f64).collect();
    let active_ratio = weekly_totals.iter().filter(|&&x| x > 0).count() as f64 / t as f64;
    let mu = mean(&v);
    if mu == 0.0 {
        return Consistency {
            active_ratio,
            ..Default::default()
        };
    }
    let cv = pop_std(&v) / mu;
    if t == 1 {
        return Consistency {
            cv,
            active_ratio,
            ..Default::default()
        };
    }
    let t_mean = (t - 1) as f64 / 2.0;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &y) in v.iter().enumerate() {
        let dt = i as f64 - t_mean;
        sxy += dt * (y - mu);
        sxx += dt * dt;
    }
    let slope = sxy / sxx;
    let deltas: Vec<f64> = v.windows(2).map(|w| w[1] - w[0]).collect();
    let max_abs = deltas.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    Consistency {
        cv,
        trend: slope / mu,
        burstiness: pop_std(&deltas) / mu,
        max_jump: max_abs / mu,
        active_ratio,
    }
}

/// (log CBG area in square miles, county partisan index, log(1 + weekly visits)).
pub fn context_and_volume(
    record: &VisitWeekRecord,
    geo: &GeoIndex,
    partisan: &PartisanTable,
) -> Result<(f64, f64, f64)> {
    let cbg = geo
        .get(&record.poi_cbg)
        .ok_or_else(|| Error::UnresolvedCbg(record.poi_cbg.clone()))?;
    Ok((
        (cbg.land_area / SQ_METERS_PER_SQ_MILE).ln(),
        partisan.for_cbg(&record.poi_cbg),
        (record.weekly_total() as f64).ln_1p(),
    ))
}

/// Full feature vector for one observation. `training_totals` is the
/// establishment's weekly visit history restricted to training-period weeks.
pub fn extract_features(
    obs: &LabeledObservation,
    training_totals: &[u64],
    geo: &GeoIndex,
    partisan: &PartisanTable,
) -> Result<FeatureVector> {
    let r = &obs.record;
    let zeros = vec![0u32; HOURS_PER_WEEK];
    let hourly = r.hourly_visits.as_deref().unwrap_or(&zeros);
    let temporal = temporal_shares(hourly);
    let (h_hour, h_day, peak) = entropy_features(hourly);
    let (short, medium, long) = dwell_shares(&r.dwell_buckets)?;
    let (dist, _) = distance_shares(&r.visitor_home_cbgs, r.latitude, r.longitude, geo);
    let c = consistency_features(training_totals);
    let (area, partisan_index, log_visits) = context_and_volume(r, geo, partisan)?;

    let mut v = [0.0; N_FEATURES];
    v[..8].copy_from_slice(&temporal);
    v[8..11].copy_from_slice(&[h_hour, h_day, peak]);
    v[11..14].copy_from_slice(&[short, medium, long]);
    v[14..20].copy_from_slice(&dist);
    v[20..25].copy_from_slice(&[c.cv, c.trend, c.burstiness, c.max_jump, c.active_ratio]);
    v[25..].copy_from_slice(&[area, partisan_index, log_visits]);
    Ok(FeatureVector(v))
}

/// One row of the feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub placekey: String,
    pub week_start: NaiveDate,
    pub category: LabelCategory,
    pub values: FeatureVector,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub rows: usize,
    pub unresolved_visitors: u64,
}

/// Weekly totals per placekey from weeks strictly before `train_end` (all
/// weeks when `None`), oldest first.
pub fn training_histories(
    obs: &[LabeledObservation],
    train_end: Option<NaiveDate>,
) -> HashMap<&str, Vec<u64>> {
    let mut weeks: HashMap<&str, Vec<(NaiveDate, u64)>> = HashMap::new();
    for o in obs {
        let entry = weeks.entry(o.record.placekey.as_str()).or_default();
        if train_end.is_none_or(|end| o.record.week_start < end) {
            entry.push((o.record.week_start, o.record.weekly_total()));
        }
    }
    weeks
        .into_iter()
        .map(|(k, mut v)| {
            v.sort_by_key(|(d, _)| *d);
            (k, v.into_iter().map(|(_, t)| t).collect())
        })
        .collect()
}

/// Features for every observation, in input order. Consistency features use
/// only training-period weeks of the same establishment.
pub fn build_feature_table(
    obs: &[LabeledObservation],
    geo: &GeoIndex,
    partisan: &PartisanTable,
    train_end: Option<NaiveDate>,
) -> Result<(Vec<FeatureRow>, FeatureStats)> {
    let histories = training_histories(obs, train_end);
    let rows = obs
        .par_iter()
        .map(|o| {
            let history = &histories[o.record.placekey.as_str()];
            let values = extract_features(o, history, geo, partisan)?;
            Ok(FeatureRow {
                placekey: o.record.placekey.clone(),
                week_start: o.record.week_start,
                category: o.category,
                values,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let unresolved_visitors = obs
        .iter()
        .map(|o| distance_shares(&o.record.visitor_home_cbgs, o.record.latitude, o.record.longitude, geo).1)
        .sum();
    if unresolved_visitors > 0 {
        log::info!("{unresolved_visitors} visitors with unresolved home block groups left out of distance shares");
    }
    Ok((
        rows,
        FeatureStats {
            rows: obs.len(),
            unresolved_visitors,
        },
    ))
}

const ID_COLUMNS: [&str; 3] = ["placekey", "week_start", "category"];

/// Writes the feature matrix as CSV (by extension) or JSON lines, with the
/// canonical feature column names.
pub fn write_feature_table(path: &Path, rows: &[FeatureRow]) -> Result<()> {
    if io::is_csv(path) {
        let mut w = csv::Writer::from_writer(io::create(path)?);
        w.write_record(ID_COLUMNS.iter().chain(FEATURE_NAMES.iter()))?;
        for r in rows {
            let mut rec = vec![r.placekey.clone(), r.week_start.to_string(), r.category.as_str().to_string()];
            rec.extend(r.values.0.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    } else {
        let mut w = io::create(path)?;
        for r in rows {
            let mut m = serde_json::Map::new();
            m.insert("placekey".into(), r.placekey.clone().into());
            m.insert("week_start".into(), r.week_start.to_string().into());
            m.insert("category".into(), r.category.as_str().into());
            for (name, v) in FEATURE_NAMES.iter().zip(r.values.0) {
                m.insert((*name).into(), v.into());
            }
            serde_json::to_writer(&mut w, &m)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn parse_id(placekey: &str, week: &str, category: &str) -> Result<(String, NaiveDate, LabelCategory)> {
    let week_start = week
        .parse()
        .map_err(|e| Error::Parse(format!("week_start {week:?}: {e}")))?;
    let category = category.parse().map_err(Error::Parse)?;
    Ok((placekey.to_string(), week_start, category))
}

pub fn read_feature_table(path: &Path) -> Result<Vec<FeatureRow>> {
    let mismatch = || Error::FeatureSchemaMismatch {
        expected: feature_names(),
    };
    let mut out = Vec::new();
    if io::is_csv(path) {
        let mut rdr = csv::Reader::from_reader(io::open(path)?);
        let headers = rdr.headers()?.clone();
        let expected: Vec<&str> = ID_COLUMNS.iter().chain(FEATURE_NAMES.iter()).copied().collect();
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(mismatch());
        }
        for rec in rdr.records() {
            let rec = rec?;
            let (placekey, week_start, category) = parse_id(&rec[0], &rec[1], &rec[2])?;
            let mut v = [0.0; N_FEATURES];
            for (i, slot) in v.iter_mut().enumerate() {
                *slot = rec[3 + i]
                    .parse()
                    .map_err(|e| Error::Parse(format!("{} for {placekey}: {e}", FEATURE_NAMES[i])))?;
            }
            out.push(FeatureRow {
                placekey,
                week_start,
                category,
                values: FeatureVector(v),
            });
        }
    } else {
        for (n, line) in io::read_lines(path)? {
            let m: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&line)?;
            let s = |k: &str| {
                m.get(k)
                    .and_then(|v| v.as_str())
                    .ok_or_else(|| Error::Parse(format!("{}:{n}: missing {k}", path.display())))
            };
            let (placekey, week_start, category) = parse_id(s("placekey")?, s("week_start")?, s("category")?)?;
            if m.len() != ID_COLUMNS.len() + N_FEATURES {
                return Err(mismatch());
            }
            let mut v = [0.0; N_FEATURES];
            for (i, name) in FEATURE_NAMES.iter().enumerate() {
                v[i] = m.get(*name).and_then(|x| x.as_f64()).ok_or_else(mismatch)?;
            }
            out.push(FeatureRow {
                placekey,
                week_start,
                category,
                values: FeatureVector(v),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::TARGET_NAICS;

    fn hourly_with(f: impl Fn(usize, usize) -> u32) -> Vec<u32> {
        (0..HOURS_PER_WEEK).map(|i| f(i / 24, i % 24)).collect()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn temporal_concentration_and_uniformity() {
        let evening = temporal_shares(&hourly_with(|_, h| u32::from(h == 18)));
        assert_eq!(evening[..6], [0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(evening[6], 2.0 / 7.0);
        assert_eq!(evening[7], 2.0 / 7.0);

        let uniform = temporal_shares(&[1; HOURS_PER_WEEK]);
        for s in &uniform[..6] {
            assert!(close(*s, 4.0 / 24.0, 1e-15));
        }
        assert!(close(uniform.iter().take(6).sum::<f64>(), 1.0, 1e-12));
        assert_eq!(uniform[6], 2.0 / 7.0);

        assert_eq!(temporal_shares(&[0; HOURS_PER_WEEK]), [0.0; 8]);
    }

    #[test]
    fn weekend_and_friday_saturday_use_day_index() {
        // Only Friday (day 4) visits.
        let fri = temporal_shares(&hourly_with(|d, _| u32::from(d == 4)));
        assert_eq!((fri[6], fri[7]), (0.0, 1.0));
        let sun = temporal_shares(&hourly_with(|d, _| u32::from(d == 6)));
        assert_eq!((sun[6], sun[7]), (1.0, 0.0));
    }

    #[test]
    fn entropy_cases() {
        let (hh, hd, peak) = entropy_features(&[1; HOURS_PER_WEEK]);
        assert!(close(hh, 24f64.ln(), 1e-12));
        assert!(close(hd, 7f64.ln(), 1e-12));
        assert!(close(peak, 1.0 / 24.0, 1e-15));

        let (hh, _, peak) = entropy_features(&hourly_with(|_, h| 5 * u32::from(h == 3)));
        assert_eq!(hh, 0.0);
        assert_eq!(peak, 1.0);

        assert!(close(entropy(&[2; 7]), 7f64.ln(), 1e-12));
        assert_eq!(entropy_features(&[0; HOURS_PER_WEEK]), (0.0, 0.0, 0.0));
    }

    fn buckets(pairs: &[(&str, u64)]) -> BTreeMap<String, u64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn dwell_cases() {
        assert_eq!(dwell_shares(&buckets(&[("<5", 10), ("61-120", 10)])).unwrap(), (0.5, 0.0, 0.5));
        assert_eq!(
            dwell_shares(&buckets(&[("5-10", 1), ("11-20", 1), ("21-60", 2)])).unwrap(),
            (0.0, 1.0, 0.0)
        );
        assert_eq!(dwell_shares(&BTreeMap::new()).unwrap(), (0.0, 0.0, 0.0));
        match dwell_shares(&buckets(&[("5-15", 1)])) {
            Err(Error::UnknownDwellBucket(l)) => assert_eq!(l, "5-15"),
            other => panic!("expected unknown bucket error, got {other:?}"),
        }
    }

    #[test]
    fn haversine_closed_forms() {
        assert_eq!(haversine_miles(33.2, -87.5, 33.2, -87.5), 0.0);
        // Equatorial arcs: r times the longitude difference in radians.
        let quarter = EARTH_RADIUS_MILES * std::f64::consts::FRAC_PI_2;
        assert!(close(haversine_miles(0.0, 0.0, 0.0, 90.0), quarter, 1e-6));
        assert!(close(quarter, 6218.3994, 1e-4));
        let degree = EARTH_RADIUS_MILES * std::f64::consts::PI / 180.0;
        assert!(close(haversine_miles(0.0, 0.0, 0.0, 1.0), degree, 1e-6));
        assert!(close(degree, 69.09333, 1e-5));
    }

    fn geo_fixture() -> GeoIndex {
        // Points due north of the origin at the given distances.
        let north = |id: &str, miles: f64| CbgGeo {
            cbg_id: id.into(),
            centroid_lat: (miles / EARTH_RADIUS_MILES).to_degrees(),
            centroid_lon: 0.0,
            land_area: SQ_METERS_PER_SQ_MILE,
        };
        GeoIndex::new([north("home", 0.0), north("near", 1.5), north("far", 100.0), north("edge", 1.0 + 1e-9)]).unwrap()
    }

    #[test]
    fn distance_cases() {
        let geo = geo_fixture();
        let (d, _) = distance_shares(&buckets(&[("home", 7)]), 0.0, 0.0, &geo);
        assert_eq!(d, [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let (d, _) = distance_shares(&buckets(&[("near", 2), ("far", 2)]), 0.0, 0.0, &geo);
        assert_eq!(d, [0.0, 0.5, 0.0, 0.0, 0.0, 0.5]);
        assert_eq!(distance_shares(&BTreeMap::new(), 0.0, 0.0, &geo).0, [0.0; 6]);
        let (d, unresolved) = distance_shares(&buckets(&[("home", 1), ("nowhere", 5)]), 0.0, 0.0, &geo);
        assert_eq!((d[0], unresolved), (1.0, 5));
        assert_eq!(distance_bin(1.0), 1);
        assert_eq!(distance_bin(0.999_999), 0);
        assert_eq!(distance_bin(60.0), 5);
    }

    #[test]
    fn consistency_cases() {
        assert_eq!(
            consistency_features(&[10, 10, 10]),
            Consistency {
                active_ratio: 1.0,
                ..Default::default()
            }
        );
        let c = consistency_features(&[5, 15]);
        assert!(close(c.cv, 0.5, 1e-12));
        assert!(close(c.max_jump, 1.0, 1e-12));
        assert_eq!(c.burstiness, 0.0);
        assert_eq!(c.active_ratio, 1.0);
        assert!(close(consistency_features(&[10, 20, 30]).trend, 0.5, 1e-12));
        assert_eq!(consistency_features(&[0, 5, 3, 0]).active_ratio, 0.5);
        assert_eq!(consistency_features(&[0, 0]), Consistency::default());
        let single = consistency_features(&[4]);
        assert_eq!((single.trend, single.burstiness, single.max_jump), (0.0, 0.0, 0.0));
    }

    fn record(total_hourly: u32) -> VisitWeekRecord {
        VisitWeekRecord {
            placekey: "pk".into(),
            naics_code: TARGET_NAICS.into(),
            location_name: "Spa".into(),
            phone: String::new(),
            latitude: 0.0,
            longitude: 0.0,
            poi_cbg: "010010001001".into(),
            week_start: "2024-01-01".parse().unwrap(),
            hourly_visits: Some(vec![total_hourly; HOURS_PER_WEEK]),
            dwell_buckets: BTreeMap::new(),
            visitor_home_cbgs: BTreeMap::new(),
        }
    }

    fn context_geo(area: f64) -> GeoIndex {
        GeoIndex::new([CbgGeo {
            cbg_id: "010010001001".into(),
            centroid_lat: 0.0,
            centroid_lon: 0.0,
            land_area: area,
        }])
        .unwrap()
    }

    #[test]
    fn context_cases() {
        let geo = context_geo(SQ_METERS_PER_SQ_MILE);
        let partisan = PartisanTable::new([PartisanRow {
            county_fips: "01001".into(),
            index: 0.7,
        }])
        .unwrap();
        let (area, p, lv) = context_and_volume(&record(0), &geo, &partisan).unwrap();
        assert_eq!((area, p, lv), (0.0, 0.7, 0.0));
        let (_, p, lv) = context_and_volume(&record(1), &geo, &PartisanTable::default()).unwrap();
        assert_eq!(p, 0.5);
        assert!(close(lv, 169f64.ln(), 1e-12));
        let mut stray = record(1);
        stray.poi_cbg = "999999999999".into();
        assert!(matches!(
            context_and_volume(&stray, &geo, &partisan),
            Err(Error::UnresolvedCbg(_))
        ));
    }

    #[test]
    fn zero_visit_week_keeps_context() {
        let obs = LabeledObservation {
            record: record(0),
            category: LabelCategory::NeverAsw,
            ad_count: 0,
        };
        let geo = context_geo(4.0 * SQ_METERS_PER_SQ_MILE);
        let v = extract_features(&obs, &[0], &geo, &PartisanTable::default()).unwrap();
        assert!(v.0[..25].iter().all(|&x| x == 0.0));
        assert!(close(v.0[25], 4f64.ln(), 1e-12));
        assert_eq!(v.0[26], 0.5);
        assert_eq!(v.0[27], 0.0);
    }

    #[test]
    fn uniform_week_composes() {
        let obs = LabeledObservation {
            record: record(2),
            category: LabelCategory::NeverAsw,
            ad_count: 0,
        };
        let v = extract_features(&obs, &[336, 336, 336], &context_geo(1.0), &PartisanTable::default()).unwrap();
        assert!(close(v.get("hourly_entropy").unwrap(), 24f64.ln(), 1e-12));
        assert!(close(v.get("daily_entropy").unwrap(), 7f64.ln(), 1e-12));
        assert_eq!(v.get("cv"), Some(0.0));
        assert_eq!(v.get("nonexistent"), None);
    }

    #[test]
    fn feature_file_round_trip_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![FeatureRow {
            placekey: "pk".into(),
            week_start: "2024-01-01".parse().unwrap(),
            category: LabelCategory::IllicitActive,
            values: FeatureVector(std::array::from_fn(|i| (i as f64 + 0.1) / 3.0)),
        }];
        for name in ["f.csv", "f.jsonl"] {
            let p = dir.path().join(name);
            write_feature_table(&p, &rows).unwrap();
            assert_eq!(read_feature_table(&p).unwrap(), rows);
        }
    }
}
