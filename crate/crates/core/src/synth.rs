//! Seeded synthetic population with a planted illicit archetype.
//!
//! Legitimate establishments follow a business-hour visit mix, longer
//! sessions, regionally spread visitors and volatile weekly demand. Illicit
//! establishments shift visits toward the evening, shorten sessions, draw
//! visitors from nearby block groups and keep demand steady. Each illicit
//! establishment is fully active in a fixed number of weeks; in its dormant
//! weeks the visit profile carries only part of the signature. Labeled
//! illicit establishments advertise exactly in their active weeks; hidden
//! ones never advertise.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Gamma, LogNormal, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{distance_bin, haversine_miles, CbgGeo, PartisanRow};
use crate::ingest::{RawAd, VisitWeekRecord, DWELL_BUCKETS, HOURS_PER_WEEK, TARGET_NAICS};
use crate::{io, seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_establishments: usize,
    pub n_weeks: usize,
    pub illicit_fraction: f64,
    /// Share of illicit establishments that advertise; the rest are hidden.
    pub labeled_fraction_of_illicit: f64,
    /// Share of each illicit establishment's weeks without activity or ads.
    pub quiet_week_fraction: f64,
    pub seed: u64,
    pub start_date: NaiveDate,
    /// Added to the 16:00-20:00 visit share of the illicit profile.
    pub evening_shift: f64,
    /// Added to the under-5-minute dwell share.
    pub short_dwell_share: f64,
    /// Added to the share of visitors living within 2 miles.
    pub local_share: f64,
    /// Subtracted from the weekly-demand coefficient of variation.
    pub stability_gap: f64,
    /// Fraction of the signature kept in dormant illicit weeks.
    pub quiet_signal_retention: f64,
    /// Extra establishments that the ingest filters must drop.
    pub n_distractors: usize,
    pub n_cities: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_establishments: 2000,
            n_weeks: 52,
            illicit_fraction: 0.10,
            labeled_fraction_of_illicit: 0.5,
            quiet_week_fraction: 0.4,
            seed: 42,
            start_date: NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date"),
            evening_shift: 0.06,
            short_dwell_share: 0.099,
            local_share: 0.13,
            stability_gap: 0.145,
            quiet_signal_retention: 0.1,
            n_distractors: 0,
            n_cities: 10,
        }
    }
}

/// Legitimate hour-of-day window shares: 0-4, 4-8, 8-12, 12-16, 16-20, 20-24.
const LEGIT_WINDOWS: [f64; 6] = [0.005, 0.025, 0.25, 0.29, 0.35, 0.08];
/// Direction of the illicit window shift per unit of `evening_shift`.
const WINDOW_SHIFT: [f64; 6] = [1.0 / 6.0, 0.0, -1.0, -5.0 / 6.0, 1.0, 2.0 / 3.0];
/// Monday-first day weights.
const LEGIT_DAYS: [f64; 7] = [1.0, 1.0, 1.0, 1.0, 1.1, 1.0, 0.6];
const ILLICIT_DAYS: [f64; 7] = [1.0, 1.0, 1.0, 1.0, 1.15, 1.2, 0.9];

/// Legitimate dwell shares: short (<5), medium (5-60), long (>60).
const LEGIT_DWELL: [f64; 3] = [0.659, 0.125, 0.216];
/// How the extra short share is taken from medium and long sessions.
const DWELL_SHIFT: [f64; 3] = [1.0, -0.159 / 0.242, -0.083 / 0.242];
/// Split of medium and long shares across the vendor buckets.
const MEDIUM_SPLIT: [f64; 3] = [0.15, 0.25, 0.60];
const LONG_SPLIT: [f64; 3] = [0.70, 0.20, 0.10];

/// Legitimate visitor shares per distance bin (<1, 1-2, 2-5, 5-30, 30-60, 60+ mi).
const LEGIT_RINGS: [f64; 6] = [0.18, 0.22, 0.20, 0.28, 0.07, 0.05];
/// Direction of the illicit shift per unit of `local_share`.
const RING_SHIFT: [f64; 6] = [6.0 / 13.0, 7.0 / 13.0, -4.0 / 13.0, -5.0 / 13.0, -2.0 / 13.0, -2.0 / 13.0];

const LEGIT_CV: f64 = 0.45;
const MEAN_WEEKLY_VISITS: f64 = 60.0;
const VISITORS_PER_VISIT: f64 = 0.7;

/// Contiguous-US city centers with a state FIPS code.
const CITIES: [(f64, f64, &str); 12] = [
    (33.52, -86.80, "01"),
    (33.45, -112.07, "04"),
    (34.05, -118.24, "06"),
    (39.74, -104.99, "08"),
    (28.54, -81.38, "12"),
    (33.75, -84.39, "13"),
    (41.88, -87.63, "17"),
    (39.29, -76.61, "24"),
    (42.33, -83.05, "26"),
    (40.71, -74.01, "36"),
    (29.76, -95.37, "48"),
    (47.61, -122.33, "53"),
];

/// Fine-grid half width (cells per side = 2 * HALF + 1) and spacing in miles.
const GRID_HALF: i32 = 12;
const GRID_SPACING_MI: f64 = 0.5;
const OUTER_RINGS_MI: [f64; 3] = [15.0, 45.0, 90.0];
const OUTER_ANGLES: usize = 12;
const SQ_METERS_PER_SQ_MILE: f64 = 2_589_988.0;
const MILES_PER_DEGREE_LAT: f64 = 69.0;

const NAME_PREFIXES: [&str; 12] = [
    "Golden", "Lotus", "Serenity", "Blue Sky", "Harmony", "Jade", "Oasis", "Zen", "Sunrise", "Bamboo", "Pearl", "Willow",
];
const NAME_SUFFIXES: [&str; 6] = ["Massage", "Day Spa", "Foot Spa", "Massage Therapy", "Bodywork Spa", "Spa"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentClass {
    Legitimate,
    Illicit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRow {
    pub placekey: String,
    pub latent_class: LatentClass,
    pub labeled_flag: bool,
}

#[derive(Debug, Clone, Serialize)]
struct AdRow<'a> {
    phone: &'a str,
    date: NaiveDate,
    ad_count: u64,
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub config: SynthConfig,
    pub visits: Vec<VisitWeekRecord>,
    pub ads: Vec<RawAd>,
    pub geo: Vec<CbgGeo>,
    pub partisan: Vec<PartisanRow>,
    pub truth: Vec<TruthRow>,
    /// (placekey, week) pairs in which an illicit establishment is fully
    /// active. Not written to disk.
    pub active_weeks: BTreeSet<(String, NaiveDate)>,
}

/// Profile of one establishment-week before sampling.
#[derive(Debug, Clone, Copy)]
struct Profile {
    windows: [f64; 6],
    days: [f64; 7],
    dwell: [f64; 3],
    rings: [f64; 6],
}

impl Profile {
    fn legit() -> Profile {
        Profile {
            windows: LEGIT_WINDOWS,
            days: LEGIT_DAYS,
            dwell: LEGIT_DWELL,
            rings: LEGIT_RINGS,
        }
    }

    fn illicit(cfg: &SynthConfig) -> Profile {
        let shift = |base: &[f64], dir: &[f64], amount: f64| -> Vec<f64> {
            base.iter().zip(dir).map(|(b, d)| b + amount * d).collect()
        };
        Profile {
            windows: shift(&LEGIT_WINDOWS, &WINDOW_SHIFT, cfg.evening_shift).try_into().expect("6"),
            days: ILLICIT_DAYS,
            dwell: shift(&LEGIT_DWELL, &DWELL_SHIFT, cfg.short_dwell_share).try_into().expect("3"),
            rings: shift(&LEGIT_RINGS, &RING_SHIFT, cfg.local_share).try_into().expect("6"),
        }
    }

    /// Legitimate profile moved a fraction `w` of the way to `target`.
    fn blend(target: &Profile, w: f64) -> Profile {
        fn mix<const N: usize>(a: [f64; N], b: [f64; N], w: f64) -> [f64; N] {
            std::array::from_fn(|i| a[i] + w * (b[i] - a[i]))
        }
        let base = Profile::legit();
        Profile {
            windows: mix(base.windows, target.windows, w),
            days: mix(base.days, target.days, w),
            dwell: mix(base.dwell, target.dwell, w),
            rings: mix(base.rings, target.rings, w),
        }
    }

    fn is_valid(&self) -> bool {
        let ok = |v: &[f64]| v.iter().all(|&x| (0.0..=1.0).contains(&x));
        ok(&self.windows) && ok(&self.dwell) && ok(&self.rings)
    }
}

impl SynthConfig {
    pub fn n_illicit(&self) -> usize {
        (self.illicit_fraction * self.n_establishments as f64).round() as usize
    }

    pub fn n_labeled(&self) -> usize {
        (self.labeled_fraction_of_illicit * self.n_illicit() as f64).round() as usize
    }

    pub fn n_active_weeks(&self) -> usize {
        ((1.0 - self.quiet_week_fraction) * self.n_weeks as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let fractions = [
            ("illicit_fraction", self.illicit_fraction),
            ("labeled_fraction_of_illicit", self.labeled_fraction_of_illicit),
            ("quiet_week_fraction", self.quiet_week_fraction),
            ("quiet_signal_retention", self.quiet_signal_retention),
        ];
        for (name, v) in fractions {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Invalid(format!("{name} = {v} must lie in [0,1]")));
            }
        }
        if self.n_establishments == 0 || self.n_weeks < 2 {
            return Err(Error::Invalid("need at least one establishment and two weeks".into()));
        }
        if self.n_cities == 0 || self.n_cities > CITIES.len() {
            return Err(Error::Invalid(format!("n_cities must be in 1..={}", CITIES.len())));
        }
        if self.n_labeled() > 0 && self.n_active_weeks() == 0 {
            return Err(Error::Invalid("labeled establishments need at least one advertised week".into()));
        }
        if self.stability_gap < 0.0 || self.stability_gap >= LEGIT_CV {
            return Err(Error::Invalid(format!("stability_gap must be in [0, {LEGIT_CV})")));
        }
        if !Profile::illicit(self).is_valid() {
            return Err(Error::Invalid("signature strengths push a share outside [0,1]".into()));
        }
        Ok(())
    }
}

struct City {
    lat: f64,
    lon: f64,
    county: String,
    /// Indices into the geo table.
    cbgs: Vec<usize>,
    /// Fine-grid cell index by (row, col) offset.
    grid_first: usize,
}

fn offset(lat: f64, lon: f64, north_mi: f64, east_mi: f64) -> (f64, f64) {
    let dlat = north_mi / MILES_PER_DEGREE_LAT;
    let dlon = east_mi / (MILES_PER_DEGREE_LAT * lat.to_radians().cos());
    (lat + dlat, lon + dlon)
}

fn build_geography(cfg: &SynthConfig) -> (Vec<City>, Vec<CbgGeo>, Vec<PartisanRow>) {
    let mut rng = seed::derived_rng(cfg.seed, "geography", 0);
    let area_jitter = LogNormal::new(0.0, 0.4).expect("valid");
    let mut geo = Vec::new();
    let mut cities = Vec::new();
    let mut partisan = Vec::new();
    for (c, &(lat, lon, state)) in CITIES.iter().take(cfg.n_cities).enumerate() {
        let county = format!("{state}{:03}", 2 * c + 1);
        let mut cbgs = Vec::new();
        let mut push = |geo: &mut Vec<CbgGeo>, la: f64, lo: f64, area_sq_mi: f64| {
            let n = cbgs.len();
            cbgs.push(geo.len());
            geo.push(CbgGeo {
                cbg_id: format!("{county}{:06}{}", 100 + n / 4, 1 + n % 4),
                centroid_lat: la,
                centroid_lon: lo,
                land_area: area_sq_mi * SQ_METERS_PER_SQ_MILE,
            });
        };
        let grid_first = geo.len();
        for row in -GRID_HALF..=GRID_HALF {
            for col in -GRID_HALF..=GRID_HALF {
                let (la, lo) = offset(lat, lon, row as f64 * GRID_SPACING_MI, col as f64 * GRID_SPACING_MI);
                let area = GRID_SPACING_MI * GRID_SPACING_MI * area_jitter.sample(&mut rng);
                push(&mut geo, la, lo, area);
            }
        }
        for &r in &OUTER_RINGS_MI {
            for a in 0..OUTER_ANGLES {
                let theta = (a as f64 + 0.5) * std::f64::consts::TAU / OUTER_ANGLES as f64;
                let (la, lo) = offset(lat, lon, r * theta.sin(), r * theta.cos());
                push(&mut geo, la, lo, r * 0.2 * area_jitter.sample(&mut rng));
            }
        }
        partisan.push(PartisanRow {
            county_fips: county.clone(),
            index: rng.random_range(0.2..0.8),
        });
        cities.push(City {
            lat,
            lon,
            county,
            cbgs,
            grid_first,
        });
    }
    (cities, geo, partisan)
}

struct Establishment {
    visits: Vec<VisitWeekRecord>,
    ads: Vec<RawAd>,
    active: Vec<NaiveDate>,
}

struct Plan<'a> {
    cfg: &'a SynthConfig,
    cities: &'a [City],
    geo: &'a [CbgGeo],
    illicit_profile: Profile,
}

fn phone_formats(area: u32, exchange: u32, line: u32, rng: &mut ChaCha8Rng) -> String {
    match rng.random_range(0..4) {
        0 => format!("{area}{exchange}{line:04}"),
        1 => format!("{area}-{exchange}-{line:04}"),
        2 => format!("+1{area}{exchange}{line:04}"),
        _ => format!("({area}) {exchange} {line:04}"),
    }
}

fn normalized<const N: usize>(mut v: [f64; N]) -> [f64; N] {
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
    v
}

impl Plan<'_> {
    fn establishment(&self, i: usize, illicit: bool, labeled: bool) -> Establishment {
        let cfg = self.cfg;
        let mut rng = seed::derived_rng(cfg.seed, "establishment", i as u64);
        let city_ix = rng.random_range(0..self.cities.len());
        let city = &self.cities[city_ix];
        let placekey = format!("syn-{i:06}@city{city_ix:02}");
        let name = format!(
            "{} {}",
            NAME_PREFIXES[rng.random_range(0..NAME_PREFIXES.len())],
            NAME_SUFFIXES[rng.random_range(0..NAME_SUFFIXES.len())]
        );
        let (area, exchange, line) = (201 + 37 * city_ix as u32 % 700, 300 + (i / 10_000) as u32, (i % 10_000) as u32);
        let phone = format!("({area}) {exchange}-{line:04}");

        // Location inside the fine grid, away from its edge.
        let north = rng.random_range(-2.0..2.0);
        let east = rng.random_range(-2.0..2.0);
        let (lat, lon) = offset(city.lat, city.lon, north, east);
        let cell = |v: f64| ((v / GRID_SPACING_MI).round() as i32 + GRID_HALF) as usize;
        let side = (2 * GRID_HALF + 1) as usize;
        let poi_cbg = self.geo[city.grid_first + cell(north) * side + cell(east)].cbg_id.clone();

        let mut by_bin: [Vec<&str>; 6] = Default::default();
        for &g in &city.cbgs {
            let c = &self.geo[g];
            by_bin[distance_bin(haversine_miles(lat, lon, c.centroid_lat, c.centroid_lon))].push(&c.cbg_id);
        }
        debug_assert!(by_bin.iter().all(|b| !b.is_empty()), "every distance bin needs a block group");

        // Establishment-level traits.
        let mu = MEAN_WEEKLY_VISITS * LogNormal::new(0.0, 0.5).expect("valid").sample(&mut rng);
        let mu = mu.max(15.0);
        let cv = if illicit { LEGIT_CV - cfg.stability_gap } else { LEGIT_CV };
        let shape = 1.0 / (cv * cv);
        let demand = Gamma::new(shape, 1.0 / shape).expect("valid");
        let hour_jitter: [f64; 24] = {
            let j = LogNormal::new(0.0, 0.15).expect("valid");
            std::array::from_fn(|_| j.sample(&mut rng))
        };
        let share_noise = Normal::new(0.0, 0.02).expect("valid");
        let own_shift = [share_noise.sample(&mut rng), share_noise.sample(&mut rng)];

        let n_weeks = cfg.n_weeks;
        let active: Vec<bool> = if illicit {
            let mut a = vec![false; n_weeks];
            for w in index::sample(&mut rng, n_weeks, cfg.n_active_weeks()) {
                a[w] = true;
            }
            a
        } else {
            vec![false; n_weeks]
        };
        let dormant_profile = Profile::blend(&self.illicit_profile, cfg.quiet_signal_retention);

        let mut visits = Vec::with_capacity(n_weeks);
        let mut ads = Vec::new();
        let mut active_weeks = Vec::new();
        for (w, &is_active) in active.iter().enumerate() {
            let week_start = cfg.start_date + Duration::weeks(w as i64);
            let profile = match (illicit, is_active) {
                (false, _) => Profile::legit(),
                (true, true) => self.illicit_profile,
                (true, false) => dormant_profile,
            };
            let total = Poisson::new(mu * demand.sample(&mut rng))
                .map(|p| p.sample(&mut rng) as u64)
                .unwrap_or(0);

            // Hourly visits.
            let weights: Vec<f64> = (0..HOURS_PER_WEEK)
                .map(|h| {
                    let (day, hour) = (h / 24, h % 24);
                    profile.windows[hour / 4] / 4.0 * hour_jitter[hour] * profile.days[day]
                })
                .collect();
            let hour_dist = WeightedIndex::new(&weights).expect("positive weights");
            let mut hourly = vec![0u32; HOURS_PER_WEEK];
            for _ in 0..total {
                hourly[hour_dist.sample(&mut rng)] += 1;
            }

            // Dwell buckets.
            let mut dwell = profile.dwell;
            dwell[0] = (dwell[0] + own_shift[0]).clamp(0.01, 0.99);
            let dwell = normalized(dwell);
            let bucket_p: [f64; 7] = [
                dwell[0],
                dwell[1] * MEDIUM_SPLIT[0],
                dwell[1] * MEDIUM_SPLIT[1],
                dwell[1] * MEDIUM_SPLIT[2],
                dwell[2] * LONG_SPLIT[0],
                dwell[2] * LONG_SPLIT[1],
                dwell[2] * LONG_SPLIT[2],
            ];
            let bucket_dist = WeightedIndex::new(bucket_p).expect("positive weights");
            let mut bucket_counts = [0u64; 7];
            for _ in 0..total {
                bucket_counts[bucket_dist.sample(&mut rng)] += 1;
            }
            let dwell_buckets: BTreeMap<String, u64> = DWELL_BUCKETS
                .iter()
                .zip(bucket_counts)
                .map(|(b, n)| (b.to_string(), n))
                .collect();

            // Visitor homes.
            let mut rings = profile.rings;
            rings[0] = (rings[0] + own_shift[1]).max(0.01);
            let ring_dist = WeightedIndex::new(normalized(rings)).expect("positive weights");
            let n_visitors = Binomial::new(total, VISITORS_PER_VISIT).expect("valid").sample(&mut rng);
            let mut homes: BTreeMap<String, u64> = BTreeMap::new();
            for _ in 0..n_visitors {
                let bin = &by_bin[ring_dist.sample(&mut rng)];
                *homes.entry(bin[rng.random_range(0..bin.len())].to_string()).or_default() += 1;
            }

            if illicit && is_active {
                active_weeks.push(week_start);
                if labeled {
                    for _ in 0..rng.random_range(1..=3) {
                        ads.push(RawAd {
                            phone: phone_formats(area, exchange, line, &mut rng),
                            date: week_start + Duration::days(rng.random_range(0..7)),
                            ad_count: rng.random_range(1..=5),
                        });
                    }
                }
            }

            visits.push(VisitWeekRecord {
                placekey: placekey.clone(),
                naics_code: TARGET_NAICS.to_string(),
                location_name: name.clone(),
                phone: phone.clone(),
                latitude: lat,
                longitude: lon,
                poi_cbg: poi_cbg.clone(),
                week_start,
                hourly_visits: Some(hourly),
                dwell_buckets,
                visitor_home_cbgs: homes,
            });
        }
        Establishment {
            visits,
            ads,
            active: active_weeks,
        }
    }

    /// An establishment that fails exactly one population filter.
    fn distractor(&self, j: usize) -> Vec<VisitWeekRecord> {
        let mut est = self.establishment(self.cfg.n_establishments + j, false, false);
        let placekey = format!("dis-{j:06}@city00");
        for r in &mut est.visits {
            r.placekey.clone_from(&placekey);
        }
        match j % 4 {
            0 => est.visits.iter_mut().for_each(|r| r.naics_code = "812112".into()),
            1 => est.visits.iter_mut().for_each(|r| r.location_name = "Nail Studio".into()),
            2 => est.visits.iter_mut().for_each(|r| {
                r.latitude = 61.2;
                r.longitude = -149.9;
            }),
            _ => {
                let mid = est.visits.len() / 2;
                est.visits[mid].hourly_visits = None;
            }
        }
        est.visits
    }
}

/// Generates the full synthetic population. Deterministic given the config.
pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let (cities, geo, partisan) = build_geography(cfg);
    let mut rng = seed::derived_rng(cfg.seed, "classes", 0);
    let n = cfg.n_establishments;
    let illicit: Vec<usize> = index::sample(&mut rng, n, cfg.n_illicit()).into_vec();
    let labeled: BTreeSet<usize> = index::sample(&mut rng, illicit.len(), cfg.n_labeled())
        .into_iter()
        .map(|k| illicit[k])
        .collect();
    let illicit: BTreeSet<usize> = illicit.into_iter().collect();

    let plan = Plan {
        cfg,
        cities: &cities,
        geo: &geo,
        illicit_profile: Profile::illicit(cfg),
    };
    let establishments: Vec<Establishment> = (0..n)
        .into_par_iter()
        .map(|i| plan.establishment(i, illicit.contains(&i), labeled.contains(&i)))
        .collect();
    let distractors: Vec<Vec<VisitWeekRecord>> = (0..cfg.n_distractors).into_par_iter().map(|j| plan.distractor(j)).collect();

    let mut data = SynthData {
        config: cfg.clone(),
        visits: Vec::with_capacity(n * cfg.n_weeks),
        ads: Vec::new(),
        geo,
        partisan,
        truth: Vec::with_capacity(n),
        active_weeks: BTreeSet::new(),
    };
    for (i, est) in establishments.into_iter().enumerate() {
        let placekey = est.visits[0].placekey.clone();
        data.truth.push(TruthRow {
            placekey: placekey.clone(),
            latent_class: if illicit.contains(&i) { LatentClass::Illicit } else { LatentClass::Legitimate },
            labeled_flag: labeled.contains(&i),
        });
        data.active_weeks.extend(est.active.into_iter().map(|w| (placekey.clone(), w)));
        data.visits.extend(est.visits);
        data.ads.extend(est.ads);
    }
    for d in distractors {
        data.visits.extend(d);
    }
    debug_assert!(cities.iter().all(|c| !c.county.is_empty()));
    Ok(data)
}

pub struct SynthPaths {
    pub visits: PathBuf,
    pub ads: PathBuf,
    pub geo: PathBuf,
    pub partisan: PathBuf,
    pub truth: PathBuf,
    pub config: PathBuf,
}

impl SynthPaths {
    pub fn in_dir(dir: &Path) -> SynthPaths {
        SynthPaths {
            visits: dir.join("visits.jsonl"),
            ads: dir.join("ads.csv"),
            geo: dir.join("geo.csv"),
            partisan: dir.join("partisan.csv"),
            truth: dir.join("truth.csv"),
            config: dir.join("synth_config.json"),
        }
    }
}

impl SynthData {
    /// Writes the generator outputs in the ingest input formats.
    pub fn write(&self, dir: &Path) -> Result<SynthPaths> {
        let paths = SynthPaths::in_dir(dir);
        io::write_jsonl(&paths.visits, &self.visits)?;
        let ads: Vec<AdRow<'_>> = self
            .ads
            .iter()
            .map(|a| AdRow {
                phone: &a.phone,
                date: a.date,
                ad_count: a.ad_count,
            })
            .collect();
        io::write_csv(&paths.ads, &ads)?;
        io::write_csv(&paths.geo, &self.geo)?;
        io::write_csv(&paths.partisan, &self.partisan)?;
        io::write_csv(&paths.truth, &self.truth)?;
        io::write_json(&paths.config, &self.config)?;
        Ok(paths)
    }

    pub fn illicit_placekeys(&self) -> BTreeSet<String> {
        illicit_set(&self.truth)
    }
}

pub fn read_truth(path: &Path) -> Result<Vec<TruthRow>> {
    io::read_csv(path)
}

pub fn illicit_set(truth: &[TruthRow]) -> BTreeSet<String> {
    truth
        .iter()
        .filter(|t| t.latent_class == LatentClass::Illicit)
        .map(|t| t.placekey.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_establishments: 60,
            n_weeks: 10,
            illicit_fraction: 0.2,
            n_distractors: 4,
            ..Default::default()
        }
    }

    #[test]
    fn counts_follow_config() {
        let cfg = SynthConfig::default();
        assert_eq!((cfg.n_illicit(), cfg.n_labeled(), cfg.n_active_weeks()), (200, 100, 31));
        let data = generate(&small()).unwrap();
        assert_eq!(data.truth.len(), 60);
        assert_eq!(data.visits.len(), 64 * 10);
        let illicit = data.truth.iter().filter(|t| t.latent_class == LatentClass::Illicit).count();
        let labeled = data.truth.iter().filter(|t| t.labeled_flag).count();
        assert_eq!((illicit, labeled), (12, 6));
        assert_eq!(data.active_weeks.len(), 12 * 6);
    }

    #[test]
    fn illicit_archetype_shares() {
        let p = Profile::illicit(&SynthConfig::default());
        // Windows start at midnight; index 4 is 16:00-20:00.
        assert!(p.windows[4] > 0.4, "{:?}", p.windows);
        assert!(p.dwell[0] > 0.6);
        assert!(p.rings[0] + p.rings[1] > 0.5);
        let legit = Profile::legit();
        assert!((p.windows[4] - legit.windows[4] - 0.06).abs() < 1e-12);
        assert!((p.rings[0] + p.rings[1] - legit.rings[0] - legit.rings[1] - 0.13).abs() < 1e-12);
        assert!((p.windows.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn records_are_valid() {
        let data = generate(&small()).unwrap();
        for r in &data.visits {
            assert_eq!(r.validate(), Ok(()), "{}", r.placekey);
        }
        let ids: BTreeSet<&str> = data.geo.iter().map(|g| g.cbg_id.as_str()).collect();
        assert_eq!(ids.len(), data.geo.len());
        assert!(data.geo.iter().all(|g| g.cbg_id.len() == 12));
    }

    #[test]
    fn infeasible_configs_rejected() {
        let bad = [
            SynthConfig {
                illicit_fraction: 1.5,
                ..small()
            },
            SynthConfig {
                quiet_week_fraction: 1.0,
                ..small()
            },
            SynthConfig {
                short_dwell_share: 0.5,
                ..small()
            },
            SynthConfig {
                stability_gap: 0.5,
                ..small()
            },
        ];
        for cfg in bad {
            assert!(generate(&cfg).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn written_files_are_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate(&small()).unwrap().write(a.path()).unwrap();
        generate(&small()).unwrap().write(b.path()).unwrap();
        for name in ["visits.jsonl", "ads.csv", "geo.csv", "partisan.csv", "truth.csv", "synth_config.json"] {
            assert_eq!(
                std::fs::read(a.path().join(name)).unwrap(),
                std::fs::read(b.path().join(name)).unwrap(),
                "{name}"
            );
        }
    }
}
