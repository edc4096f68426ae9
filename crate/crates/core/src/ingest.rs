//! Visit and ad record ingestion: parsing, population filters, the
//! phone/week join and week-level labeling.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::Result;
use crate::io;

pub const HOURS_PER_WEEK: usize = 168;

/// Dwell-time bucket labels in minutes, in vendor order.
pub const DWELL_BUCKETS: [&str; 7] = ["<5", "5-10", "11-20", "21-60", "61-120", "121-240", ">240"];

/// Industry code retained by the population filter.
pub const TARGET_NAICS: &str = "812199";

/// Contiguous-US bounding box, degrees: (lat_min, lat_max, lon_min, lon_max).
pub const CONTIGUOUS_US: (f64, f64, f64, f64) = (24.0, 50.0, -125.0, -66.0);

/// One establishment observed over one Monday-to-Sunday week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitWeekRecord {
    pub placekey: String,
    pub naics_code: String,
    pub location_name: String,
    #[serde(rename = "phone_number")]
    pub phone: String,
    pub latitude: f64,
    pub longitude: f64,
    pub poi_cbg: String,
    #[serde(rename = "date_range_start")]
    pub week_start: NaiveDate,
    /// 168 hourly counts, Monday 00:00 first. `None` when the vendor row has
    /// no hourly breakdown.
    #[serde(rename = "visits_by_each_hour")]
    pub hourly_visits: Option<Vec<u32>>,
    #[serde(rename = "bucketed_dwell_times")]
    pub dwell_buckets: BTreeMap<String, u64>,
    pub visitor_home_cbgs: BTreeMap<String, u64>,
}

impl VisitWeekRecord {
    /// Checks the record-level invariants; the error names the first violation.
    pub fn validate(&self) -> std::result::Result<(), &'static str> {
        if self.placekey.is_empty() {
            return Err("empty_placekey");
        }
        if !(-90.0..=90.0).contains(&self.latitude) || !(-180.0..=180.0).contains(&self.longitude) {
            return Err("coordinates_out_of_range");
        }
        if self.week_start.weekday() != Weekday::Mon {
            return Err("week_start_not_monday");
        }
        if let Some(h) = &self.hourly_visits {
            if h.len() != HOURS_PER_WEEK {
                return Err("hourly_visits_length");
            }
        }
        if self.dwell_buckets.keys().any(|k| !DWELL_BUCKETS.contains(&k.as_str())) {
            return Err("unknown_dwell_bucket");
        }
        Ok(())
    }

    pub fn weekly_total(&self) -> u64 {
        self.hourly_visits
            .as_ref()
            .map_or(0, |h| h.iter().map(|&v| u64::from(v)).sum())
    }
}

/// Weekly ad volume for one normalized phone number.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdRecord {
    pub phone: String,
    pub week_start: NaiveDate,
    pub ad_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelCategory {
    IllicitActive,
    IllicitQuiet,
    NeverAsw,
}

impl LabelCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelCategory::IllicitActive => "illicit_active",
            LabelCategory::IllicitQuiet => "illicit_quiet",
            LabelCategory::NeverAsw => "never_asw",
        }
    }
}

impl std::str::FromStr for LabelCategory {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "illicit_active" => Ok(LabelCategory::IllicitActive),
            "illicit_quiet" => Ok(LabelCategory::IllicitQuiet),
            "never_asw" => Ok(LabelCategory::NeverAsw),
            other => Err(format!("unknown label category {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledObservation {
    #[serde(flatten)]
    pub record: VisitWeekRecord,
    pub category: LabelCategory,
    pub ad_count: u64,
}

/// Digits of a phone number with a single leading US country code removed.
///
/// Returns `None` when fewer than ten digits remain.
pub fn normalize_phone(raw: &str) -> Option<String> {
    let digits: String = raw.chars().filter(char::is_ascii_digit).collect();
    let digits = match digits.strip_prefix('1') {
        Some(rest) if digits.len() == 11 => rest.to_string(),
        _ => digits,
    };
    (digits.len() >= 10).then_some(digits)
}

/// The Monday on or before `date`.
pub fn week_monday(date: NaiveDate) -> NaiveDate {
    date - chrono::Duration::days(i64::from(date.weekday().num_days_from_monday()))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterCounts {
    pub naics: usize,
    pub name: usize,
    pub region: usize,
    pub before_start: usize,
    pub discontinuous: usize,
}

pub fn name_matches(name: &str) -> bool {
    let lower = name.to_lowercase();
    lower.contains("massage") || lower.contains("spa")
}

pub fn in_contiguous_us(lat: f64, lon: f64) -> bool {
    let (lat_lo, lat_hi, lon_lo, lon_hi) = CONTIGUOUS_US;
    (lat_lo..=lat_hi).contains(&lat) && (lon_lo..=lon_hi).contains(&lon)
}

/// Applies the population filters in order: industry code, name, region,
/// start date, then continuous operation (a placekey with any week lacking
/// hourly visits is dropped entirely).
pub fn filter_population(
    records: Vec<VisitWeekRecord>,
    start_date: NaiveDate,
) -> (Vec<VisitWeekRecord>, FilterCounts) {
    let mut counts = FilterCounts::default();
    let mut kept = Vec::with_capacity(records.len());
    for r in records {
        if r.naics_code.trim() != TARGET_NAICS {
            counts.naics += 1;
        } else if !name_matches(&r.location_name) {
            counts.name += 1;
        } else if !in_contiguous_us(r.latitude, r.longitude) {
            counts.region += 1;
        } else if r.week_start < start_date {
            counts.before_start += 1;
        } else {
            kept.push(r);
        }
    }
    let broken: HashSet<String> = kept
        .iter()
        .filter(|r| r.hourly_visits.is_none())
        .map(|r| r.placekey.clone())
        .collect();
    let before = kept.len();
    kept.retain(|r| !broken.contains(&r.placekey));
    counts.discontinuous = before - kept.len();
    (kept, counts)
}

/// Sums raw ads into per-(phone, week) volumes; phones are normalized and
/// dates floored to their Monday. Returns the aggregated ads and the number
/// of raw rows dropped for an unusable phone.
pub fn aggregate_ads(raw: &[RawAd]) -> (Vec<AdRecord>, usize) {
    let mut volumes: BTreeMap<(String, NaiveDate), u64> = BTreeMap::new();
    let mut dropped = 0;
    for ad in raw {
        match normalize_phone(&ad.phone) {
            Some(phone) => *volumes.entry((phone, week_monday(ad.date))).or_default() += ad.ad_count,
            None => dropped += 1,
        }
    }
    let ads = volumes
        .into_iter()
        .map(|((phone, week_start), ad_count)| AdRecord {
            phone,
            week_start,
            ad_count,
        })
        .collect();
    (ads, dropped)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub illicit_active: usize,
    pub illicit_quiet: usize,
    pub never_asw: usize,
}

impl LabelCounts {
    pub fn of(obs: &[LabeledObservation]) -> Self {
        let mut c = LabelCounts::default();
        for o in obs {
            match o.category {
                LabelCategory::IllicitActive => c.illicit_active += 1,
                LabelCategory::IllicitQuiet => c.illicit_quiet += 1,
                LabelCategory::NeverAsw => c.never_asw += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.illicit_active + self.illicit_quiet + self.never_asw
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeStats {
    /// Ad-matched phones shared by more than one placekey.
    pub phone_collisions: usize,
}

/// Left-joins POI weeks with weekly ad volumes on (normalized phone, week)
/// and labels every row. Output is sorted by (placekey, week_start) and has
/// exactly one row per input POI row.
pub fn merge_and_label(
    pois: Vec<VisitWeekRecord>,
    ads: &[AdRecord],
) -> (Vec<LabeledObservation>, MergeStats) {
    let mut volumes: HashMap<(&str, NaiveDate), u64> = HashMap::new();
    for ad in ads {
        *volumes.entry((ad.phone.as_str(), ad.week_start)).or_default() += ad.ad_count;
    }
    let advertised_phones: HashSet<&str> = ads.iter().map(|a| a.phone.as_str()).collect();

    let phones: Vec<Option<String>> = pois.iter().map(|r| normalize_phone(&r.phone)).collect();
    let mut placekeys_by_phone: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for (r, p) in pois.iter().zip(&phones) {
        if let Some(p) = p {
            if advertised_phones.contains(p.as_str()) {
                placekeys_by_phone.entry(p).or_default().insert(&r.placekey);
            }
        }
    }
    let mut stats = MergeStats::default();
    for (phone, keys) in &placekeys_by_phone {
        if keys.len() > 1 {
            stats.phone_collisions += 1;
            log::warn!("phone {phone} matches {} placekeys; labeling all", keys.len());
        }
    }

    let counts: Vec<u64> = pois
        .iter()
        .zip(&phones)
        .map(|(r, p)| {
            p.as_deref()
                .and_then(|p| volumes.get(&(p, r.week_start)).copied())
                .unwrap_or(0)
        })
        .collect();
    let illicit: HashSet<String> = pois
        .iter()
        .zip(&counts)
        .filter(|(_, &c)| c >= 1)
        .map(|(r, _)| r.placekey.clone())
        .collect();

    let mut out: Vec<LabeledObservation> = pois
        .into_iter()
        .zip(counts)
        .map(|(record, ad_count)| {
            let category = if ad_count >= 1 {
                LabelCategory::IllicitActive
            } else if illicit.contains(&record.placekey) {
                LabelCategory::IllicitQuiet
            } else {
                LabelCategory::NeverAsw
            };
            LabeledObservation {
                record,
                category,
                ad_count,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        (&a.record.placekey, a.record.week_start).cmp(&(&b.record.placekey, b.record.week_start))
    });
    (out, stats)
}

// ---------------------------------------------------------------------------
// Parsing

/// One raw ad row as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RawAd {
    pub phone: String,
    pub date: NaiveDate,
    pub ad_count: u64,
}

/// Rows read from a file, with malformed rows counted by reason.
#[derive(Debug, Clone)]
pub struct Parsed<T> {
    pub rows: Vec<T>,
    pub read: usize,
    pub malformed: BTreeMap<String, usize>,
}

impl<T> Default for Parsed<T> {
    fn default() -> Self {
        Parsed {
            rows: Vec::new(),
            read: 0,
            malformed: BTreeMap::new(),
        }
    }
}

impl<T> Parsed<T> {
    fn push(&mut self, row: std::result::Result<T, String>) {
        self.read += 1;
        match row {
            Ok(r) => self.rows.push(r),
            Err(reason) => *self.malformed.entry(reason).or_default() += 1,
        }
    }
}

/// Reads rows from CSV (by extension) or JSON lines as JSON objects. CSV cells
/// become JSON strings; nested fields are decoded later.
fn read_objects(path: &Path, mut f: impl FnMut(std::result::Result<Map<String, Value>, String>)) -> Result<()> {
    if io::is_csv(path) {
        let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(io::open(path)?);
        let headers = rdr.headers()?.clone();
        for rec in rdr.records() {
            match rec {
                Ok(rec) => {
                    let obj = headers
                        .iter()
                        .zip(rec.iter())
                        .map(|(h, v)| (h.to_string(), Value::String(v.to_string())))
                        .collect();
                    f(Ok(obj));
                }
                Err(_) => f(Err("csv_syntax".into())),
            }
        }
    } else {
        for (_, line) in io::read_lines(path)? {
            match serde_json::from_str::<Value>(&line) {
                Ok(Value::Object(obj)) => f(Ok(obj)),
                _ => f(Err("json_syntax".into())),
            }
        }
    }
    Ok(())
}

fn field<'a>(obj: &'a Map<String, Value>, names: &[&str]) -> Option<&'a Value> {
    names
        .iter()
        .filter_map(|n| obj.get(*n))
        .find(|v| !v.is_null() && v.as_str() != Some(""))
}

fn text(obj: &Map<String, Value>, names: &[&str]) -> Option<String> {
    field(obj, names).map(|v| match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    })
}

fn number(obj: &Map<String, Value>, names: &[&str]) -> Option<f64> {
    match field(obj, names)? {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn date(obj: &Map<String, Value>, names: &[&str]) -> Option<NaiveDate> {
    let s = text(obj, names)?;
    let head = s.get(..10)?;
    NaiveDate::parse_from_str(head, "%Y-%m-%d").ok()
}

/// A nested JSON field that may arrive encoded as a string (vendor CSVs).
fn nested(obj: &Map<String, Value>, names: &[&str]) -> std::result::Result<Option<Value>, String> {
    match field(obj, names) {
        None => Ok(None),
        Some(Value::String(s)) => serde_json::from_str(s)
            .map(Some)
            .map_err(|_| format!("{}_syntax", names[0])),
        Some(v) => Ok(Some(v.clone())),
    }
}

fn count(v: &Value) -> Option<u64> {
    v.as_u64()
        .or_else(|| v.as_f64().filter(|f| *f >= 0.0 && f.fract() == 0.0).map(|f| f as u64))
}

fn count_map(v: Option<Value>, what: &str) -> std::result::Result<BTreeMap<String, u64>, String> {
    match v {
        None => Ok(BTreeMap::new()),
        Some(Value::Object(m)) => m
            .into_iter()
            .map(|(k, v)| count(&v).map(|c| (k, c)).ok_or_else(|| format!("{what}_count")))
            .collect(),
        Some(_) => Err(format!("{what}_type")),
    }
}

fn visit_from_object(obj: &Map<String, Value>) -> std::result::Result<VisitWeekRecord, String> {
    let placekey = text(obj, &["placekey"]).ok_or("missing_placekey")?;
    let naics_code = text(obj, &["naics_code"]).ok_or("missing_naics_code")?;
    let location_name = text(obj, &["location_name"]).unwrap_or_default();
    let phone = text(obj, &["phone_number", "phone"]).unwrap_or_default();
    let latitude = number(obj, &["latitude"]).ok_or("missing_latitude")?;
    let longitude = number(obj, &["longitude"]).ok_or("missing_longitude")?;
    let poi_cbg = text(obj, &["poi_cbg"]).ok_or("missing_poi_cbg")?;
    let week_start = date(obj, &["date_range_start", "week_start"]).ok_or("bad_week_start")?;
    let hourly_visits = match nested(obj, &["visits_by_each_hour", "hourly_visits"])? {
        None => None,
        Some(Value::Array(a)) => Some(
            a.iter()
                .map(|v| count(v).and_then(|c| u32::try_from(c).ok()))
                .collect::<Option<Vec<u32>>>()
                .ok_or("hourly_visits_count")?,
        ),
        Some(_) => return Err("hourly_visits_type".into()),
    };
    let dwell_buckets = count_map(nested(obj, &["bucketed_dwell_times", "dwell_buckets"])?, "dwell")?;
    let visitor_home_cbgs = count_map(nested(obj, &["visitor_home_cbgs"])?, "visitor_home")?;
    let rec = VisitWeekRecord {
        placekey,
        naics_code,
        location_name,
        phone,
        latitude,
        longitude,
        poi_cbg,
        week_start,
        hourly_visits,
        dwell_buckets,
        visitor_home_cbgs,
    };
    rec.validate()?;
    Ok(rec)
}

fn ad_from_object(obj: &Map<String, Value>) -> std::result::Result<RawAd, String> {
    let phone = text(obj, &["phone", "phone_number"]).unwrap_or_default();
    let date = date(obj, &["week_start", "date", "posted_at"]).ok_or("bad_ad_date")?;
    let ad_count = match field(obj, &["ad_count"]) {
        None => 1,
        Some(v) => count(v)
            .or_else(|| v.as_str().and_then(|s| s.trim().parse().ok()))
            .ok_or("bad_ad_count")?,
    };
    if ad_count == 0 {
        return Err("zero_ad_count".into());
    }
    Ok(RawAd { phone, date, ad_count })
}

/// Reads visit rows (CSV or JSON lines), skipping and counting malformed rows.
pub fn read_visits(path: &Path) -> Result<Parsed<VisitWeekRecord>> {
    let mut parsed = Parsed::default();
    read_objects(path, |obj| parsed.push(obj.and_then(|o| visit_from_object(&o))))?;
    Ok(parsed)
}

/// Reads raw ad rows (CSV or JSON lines). `ad_count` defaults to 1 per row.
pub fn read_ads(path: &Path) -> Result<Parsed<RawAd>> {
    let mut parsed = Parsed::default();
    read_objects(path, |obj| parsed.push(obj.and_then(|o| ad_from_object(&o))))?;
    Ok(parsed)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub rows_read: usize,
    pub rows_malformed: BTreeMap<String, usize>,
    pub rows_dropped: FilterCounts,
    pub rows_kept: usize,
    pub establishments_kept: usize,
    pub ads_read: usize,
    pub ads_malformed: BTreeMap<String, usize>,
    pub ads_dropped_no_phone: usize,
    pub ad_weeks: usize,
    pub phone_collisions: usize,
    pub labels: LabelCounts,
}

/// Full ingest stage: read, filter, aggregate ads, merge and label.
pub fn run(pois: &Path, ads: &Path, start_date: NaiveDate) -> Result<(Vec<LabeledObservation>, IngestSummary)> {
    let visits = read_visits(pois)?;
    let raw_ads = read_ads(ads)?;
    let (kept, dropped) = filter_population(visits.rows, start_date);
    let establishments_kept = kept.iter().map(|r| &r.placekey).collect::<HashSet<_>>().len();
    let rows_kept = kept.len();
    let (ad_weeks, ads_dropped_no_phone) = aggregate_ads(&raw_ads.rows);
    let (labeled, stats) = merge_and_label(kept, &ad_weeks);
    let summary = IngestSummary {
        rows_read: visits.read,
        rows_malformed: visits.malformed,
        rows_dropped: dropped,
        rows_kept,
        establishments_kept,
        ads_read: raw_ads.read,
        ads_malformed: raw_ads.malformed,
        ads_dropped_no_phone,
        ad_weeks: ad_weeks.len(),
        phone_collisions: stats.phone_collisions,
        labels: LabelCounts::of(&labeled),
    };
    Ok((labeled, summary))
}

pub fn write_labeled(path: &Path, obs: &[LabeledObservation]) -> Result<()> {
    io::write_jsonl(path, obs)
}

pub fn read_labeled(path: &Path) -> Result<Vec<LabeledObservation>> {
    let obs: Vec<LabeledObservation> = io::read_jsonl(path)?;
    for o in &obs {
        o.record
            .validate()
            .map_err(|e| crate::Error::Invalid(format!("{} {}: {e}", o.record.placekey, o.record.week_start)))?;
    }
    Ok(obs)
}
