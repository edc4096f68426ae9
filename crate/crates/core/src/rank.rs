//! Establishment-level risk and budgeted inspection planning.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::pu::ScoredObservation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Mean,
    #[default]
    Max,
    Min,
}

impl Aggregation {
    pub const ALL: [Aggregation; 3] = [Aggregation::Max, Aggregation::Mean, Aggregation::Min];

    pub fn as_str(self) -> &'static str {
        match self {
            Aggregation::Mean => "mean",
            Aggregation::Max => "max",
            Aggregation::Min => "min",
        }
    }

    pub fn apply(self, scores: &[f64]) -> Result<f64> {
        if scores.is_empty() {
            return Err(Error::Empty("week score sequence"));
        }
        Ok(match self {
            Aggregation::Mean => scores.iter().sum::<f64>() / scores.len() as f64,
            Aggregation::Max => scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Aggregation::Min => scores.iter().copied().fold(f64::INFINITY, f64::min),
        })
    }
}

impl std::str::FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "mean" => Ok(Aggregation::Mean),
            "max" => Ok(Aggregation::Max),
            "min" => Ok(Aggregation::Min),
            other => Err(format!("unknown aggregation {other:?} (expected max, mean or min)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstablishmentRisk {
    pub placekey: String,
    pub delta: f64,
    pub weeks_observed: usize,
    pub aggregation: Aggregation,
}

/// Week scores per placekey, in input order.
pub fn group_scores(scored: &[ScoredObservation]) -> BTreeMap<String, Vec<f64>> {
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for s in scored {
        out.entry(s.placekey.clone()).or_default().push(s.score);
    }
    out
}

pub fn aggregate(week_scores: &BTreeMap<String, Vec<f64>>, method: Aggregation) -> Result<Vec<EstablishmentRisk>> {
    week_scores
        .iter()
        .map(|(placekey, scores)| {
            Ok(EstablishmentRisk {
                placekey: placekey.clone(),
                delta: method
                    .apply(scores)
                    .map_err(|_| Error::Invalid(format!("{placekey} has no scored weeks")))?,
                weeks_observed: scores.len(),
                aggregation: method,
            })
        })
        .collect()
}

/// Descending by delta, ties by placekey.
pub fn rank_establishments(mut risks: Vec<EstablishmentRisk>) -> Vec<EstablishmentRisk> {
    risks.sort_by(|a, b| b.delta.total_cmp(&a.delta).then_with(|| a.placekey.cmp(&b.placekey)));
    risks
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RankRow {
    rank: usize,
    placekey: String,
    delta: f64,
    weeks_observed: usize,
    aggregation: Aggregation,
}

pub fn write_ranks(path: &Path, ranked: &[EstablishmentRisk]) -> Result<()> {
    let rows: Vec<RankRow> = ranked
        .iter()
        .enumerate()
        .map(|(i, r)| RankRow {
            rank: i + 1,
            placekey: r.placekey.clone(),
            delta: r.delta,
            weeks_observed: r.weeks_observed,
            aggregation: r.aggregation,
        })
        .collect();
    io::write_csv(path, &rows)
}

pub fn read_ranks(path: &Path) -> Result<Vec<EstablishmentRisk>> {
    let rows: Vec<RankRow> = io::read_csv(path)?;
    rows.into_iter()
        .map(|r| {
            if !(0.0..=1.0).contains(&r.delta) {
                return Err(Error::Invalid(format!("{}: delta {} outside [0,1]", r.placekey, r.delta)));
            }
            Ok(EstablishmentRisk {
                placekey: r.placekey,
                delta: r.delta,
                weeks_observed: r.weeks_observed,
                aggregation: r.aggregation,
            })
        })
        .collect()
}

#[derive(Debug, Deserialize)]
struct CostRow {
    placekey: String,
    cost: f64,
}

/// Reads a `placekey,cost` CSV.
pub fn read_costs(path: &Path) -> Result<BTreeMap<String, f64>> {
    let rows: Vec<CostRow> = io::read_csv(path)?;
    Ok(rows.into_iter().map(|r| (r.placekey, r.cost)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllocationMode {
    #[default]
    Exact,
    Greedy,
}

impl std::str::FromStr for AllocationMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "exact" => Ok(AllocationMode::Exact),
            "greedy" => Ok(AllocationMode::Greedy),
            other => Err(format!("unknown mode {other:?} (expected exact or greedy)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    /// Selected placekeys in lexicographic order.
    pub selected: Vec<String>,
    pub total_cost: f64,
    pub expected_detections: f64,
    pub budget: f64,
    pub mode: AllocationMode,
}

/// Largest table the exact solver will allocate, in cells.
const MAX_DP_CELLS: usize = 1 << 30;

struct Item<'a> {
    placekey: &'a str,
    delta: f64,
    cost: f64,
}

fn items<'a>(risks: &'a [EstablishmentRisk], costs: Option<&BTreeMap<String, f64>>) -> Result<Vec<Item<'a>>> {
    let mut out = Vec::with_capacity(risks.len());
    for r in risks {
        let cost = match costs {
            None => 1.0,
            Some(c) => *c.get(&r.placekey).ok_or_else(|| Error::MissingCost(r.placekey.clone()))?,
        };
        if !(cost > 0.0 && cost.is_finite()) {
            return Err(Error::NonPositiveCost {
                placekey: r.placekey.clone(),
                cost,
            });
        }
        out.push(Item {
            placekey: &r.placekey,
            delta: r.delta,
            cost,
        });
    }
    out.sort_by(|a, b| a.placekey.cmp(b.placekey));
    if out.windows(2).any(|w| w[0].placekey == w[1].placekey) {
        return Err(Error::Invalid("duplicate placekey among candidates".into()));
    }
    Ok(out)
}

/// Chooses establishments maximizing total delta within the budget. Costs
/// default to 1 when `costs` is `None`; a cost file must cover every
/// candidate.
pub fn solve_allocation(
    risks: &[EstablishmentRisk],
    costs: Option<&BTreeMap<String, f64>>,
    budget: f64,
    mode: AllocationMode,
) -> Result<AllocationPlan> {
    if !(budget >= 0.0 && budget.is_finite()) {
        return Err(Error::Invalid(format!("budget {budget} must be a finite non-negative number")));
    }
    let items = items(risks, costs)?;
    let chosen = match mode {
        AllocationMode::Exact => knapsack(&items, budget)?,
        AllocationMode::Greedy => greedy(&items, budget),
    };
    // Objective is summed in placekey order so both modes report comparable values.
    let mut plan = AllocationPlan {
        selected: Vec::new(),
        total_cost: 0.0,
        expected_detections: 0.0,
        budget,
        mode,
    };
    for (item, keep) in items.iter().zip(chosen) {
        if keep {
            plan.selected.push(item.placekey.to_string());
            plan.total_cost += item.cost;
            plan.expected_detections += item.delta;
        }
    }
    Ok(plan)
}

fn knapsack(items: &[Item<'_>], budget: f64) -> Result<Vec<bool>> {
    let mut costs = Vec::with_capacity(items.len());
    for it in items {
        if it.cost.fract() != 0.0 || it.cost > u32::MAX as f64 {
            return Err(Error::NonIntegerCost {
                placekey: it.placekey.to_string(),
                cost: it.cost,
            });
        }
        costs.push(it.cost as usize);
    }
    let total: usize = costs.iter().sum();
    let cap = (budget.floor() as usize).min(total);
    let width = cap + 1;
    if items.len().saturating_mul(width) > MAX_DP_CELLS {
        return Err(Error::Invalid(format!(
            "exact allocation table too large ({} items x capacity {cap}); use greedy mode",
            items.len()
        )));
    }
    // best[w]: highest objective using capacity at most w, accumulated in
    // item order. Rounding is monotone, so optimal substructure survives.
    let mut best = vec![0.0f64; width];
    let mut keep = vec![false; items.len() * width];
    for (i, (it, &c)) in items.iter().zip(&costs).enumerate() {
        if c > cap {
            continue;
        }
        for w in (c..width).rev() {
            let with = best[w - c] + it.delta;
            if with > best[w] {
                best[w] = with;
                keep[i * width + w] = true;
            }
        }
    }
    let mut chosen = vec![false; items.len()];
    let mut w = cap;
    for i in (0..items.len()).rev() {
        if keep[i * width + w] {
            chosen[i] = true;
            w -= costs[i];
        }
    }
    Ok(chosen)
}

fn greedy(items: &[Item<'_>], budget: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&items[a], &items[b]);
        (y.delta / y.cost)
            .total_cmp(&(x.delta / x.cost))
            .then_with(|| x.placekey.cmp(y.placekey))
    });
    let mut chosen = vec![false; items.len()];
    let mut spent = 0.0;
    for i in order {
        if spent + items[i].cost <= budget {
            spent += items[i].cost;
            chosen[i] = true;
        }
    }
    chosen
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub rank: usize,
    pub placekey: String,
    pub delta: f64,
    pub cost: f64,
    pub selected: bool,
}

/// Plan file contents: the ranked candidates with selection flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub plan: AllocationPlan,
    pub ranked: Vec<PlanEntry>,
}

pub fn plan_report(ranked: &[EstablishmentRisk], costs: Option<&BTreeMap<String, f64>>, plan: AllocationPlan) -> PlanReport {
    let selected: std::collections::BTreeSet<&str> = plan.selected.iter().map(String::as_str).collect();
    let ranked = ranked
        .iter()
        .enumerate()
        .map(|(i, r)| PlanEntry {
            rank: i + 1,
            placekey: r.placekey.clone(),
            delta: r.delta,
            cost: costs.and_then(|c| c.get(&r.placekey).copied()).unwrap_or(1.0),
            selected: selected.contains(r.placekey.as_str()),
        })
        .collect();
    PlanReport { plan, ranked }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn risks(pairs: &[(&str, f64)]) -> Vec<EstablishmentRisk> {
        pairs
            .iter()
            .map(|&(k, d)| EstablishmentRisk {
                placekey: k.into(),
                delta: d,
                weeks_observed: 1,
                aggregation: Aggregation::Max,
            })
            .collect()
    }

    #[test]
    fn aggregation_examples() {
        let s = [0.2, 0.9, 0.5];
        assert_eq!(Aggregation::Max.apply(&s).unwrap(), 0.9);
        assert!((Aggregation::Mean.apply(&s).unwrap() - 1.6 / 3.0).abs() < 1e-15);
        assert_eq!(Aggregation::Min.apply(&s).unwrap(), 0.2);
        assert!(Aggregation::Max.apply(&[]).is_err());
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), vec![]);
        assert!(aggregate(&m, Aggregation::Max).is_err());
    }

    #[test]
    fn ranking_order() {
        let keys = |v: Vec<EstablishmentRisk>| v.into_iter().map(|r| r.placekey).collect::<Vec<_>>();
        assert_eq!(keys(rank_establishments(risks(&[("B", 0.1), ("A", 0.9)]))), ["A", "B"]);
        assert_eq!(keys(rank_establishments(risks(&[("B", 0.5), ("A", 0.5)]))), ["A", "B"]);
        assert!(rank_establishments(vec![]).is_empty());
    }

    #[test]
    fn unit_costs_take_top_two() {
        let r = risks(&[("A", 0.9), ("B", 0.5), ("C", 0.7)]);
        for mode in [AllocationMode::Exact, AllocationMode::Greedy] {
            let plan = solve_allocation(&r, None, 2.0, mode).unwrap();
            assert_eq!(plan.selected, ["A", "C"]);
            assert!((plan.expected_detections - 1.6).abs() < 1e-15);
            assert_eq!(plan.total_cost, 2.0);
        }
    }

    #[test]
    fn exact_beats_greedy_on_weighted_instance() {
        let r = risks(&[("A", 0.9), ("B", 0.5), ("C", 0.55)]);
        let costs: BTreeMap<String, f64> = [("A", 3.0), ("B", 2.0), ("C", 2.0)]
            .iter()
            .map(|&(k, c)| (k.to_string(), c))
            .collect();
        let plan = solve_allocation(&r, Some(&costs), 4.0, AllocationMode::Exact).unwrap();
        assert_eq!(plan.selected, ["B", "C"]);
        assert!((plan.expected_detections - 1.05).abs() < 1e-15);
        let greedy = solve_allocation(&r, Some(&costs), 4.0, AllocationMode::Greedy).unwrap();
        assert!(greedy.expected_detections <= plan.expected_detections);
    }

    #[test]
    fn zero_budget_and_errors() {
        let r = risks(&[("A", 0.9)]);
        let plan = solve_allocation(&r, None, 0.0, AllocationMode::Exact).unwrap();
        assert!(plan.selected.is_empty() && plan.total_cost == 0.0);

        let bad: BTreeMap<String, f64> = [("A".to_string(), 0.0)].into();
        assert!(matches!(
            solve_allocation(&r, Some(&bad), 1.0, AllocationMode::Greedy),
            Err(Error::NonPositiveCost { .. })
        ));
        let frac: BTreeMap<String, f64> = [("A".to_string(), 1.5)].into();
        assert!(matches!(
            solve_allocation(&r, Some(&frac), 2.0, AllocationMode::Exact),
            Err(Error::NonIntegerCost { .. })
        ));
        assert!(solve_allocation(&r, Some(&frac), 2.0, AllocationMode::Greedy).is_ok());
        assert!(matches!(
            solve_allocation(&r, Some(&BTreeMap::new()), 2.0, AllocationMode::Greedy),
            Err(Error::MissingCost(_))
        ));
    }

    #[test]
    fn greedy_skips_items_that_do_not_fit() {
        let r = risks(&[("A", 0.9), ("B", 0.2)]);
        let costs: BTreeMap<String, f64> = [("A".to_string(), 5.0), ("B".to_string(), 1.0)].into();
        let plan = solve_allocation(&r, Some(&costs), 2.0, AllocationMode::Greedy).unwrap();
        assert_eq!(plan.selected, ["B"]);
    }

    #[test]
    fn ranks_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ranks.csv");
        let ranked = rank_establishments(risks(&[("A", 0.25), ("B", 0.75)]));
        write_ranks(&path, &ranked).unwrap();
        assert_eq!(read_ranks(&path).unwrap(), ranked);
    }
}
