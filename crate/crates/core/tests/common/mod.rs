//! Brute-force oracles and instance generators shared by integration tests.
#![allow(dead_code)]

use rand::Rng;

/// Pair enumeration: wins count 1, ties 1/2.
pub fn auc_oracle(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &p in pos {
        for &n in neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

/// Mean precision at each positive's position in the ranked list. Within a
/// tie group every negative is placed ahead of every positive, and positives
/// keep input order.
pub fn ap_oracle(pos: &[f64], neg: &[f64]) -> f64 {
    let mut total = 0.0;
    for (i, &p) in pos.iter().enumerate() {
        let above_neg = neg.iter().filter(|&&n| n >= p).count();
        let above_pos = pos.iter().enumerate().filter(|&(j, &q)| q > p || (q == p && j < i)).count();
        let position = above_neg + above_pos + 1;
        total += (above_pos + 1) as f64 / position as f64;
    }
    total / pos.len() as f64
}

/// Scores in [0,1]; about half the instances draw from a coarse grid so
/// ties are common.
pub fn random_scores(rng: &mut impl Rng, n: usize, coarse: bool) -> Vec<f64> {
    (0..n)
        .map(|_| if coarse { f64::from(rng.random_range(0..8u8)) / 8.0 } else { rng.random::<f64>() })
        .collect()
}

/// Best objective over all subsets with total cost within `budget`.
pub fn knapsack_oracle(values: &[f64], costs: &[f64], budget: f64) -> f64 {
    fn go(i: usize, values: &[f64], costs: &[f64], left: f64, acc: f64, best: &mut f64) {
        if i == values.len() {
            *best = best.max(acc);
            return;
        }
        go(i + 1, values, costs, left, acc, best);
        if costs[i] <= left {
            go(i + 1, values, costs, left - costs[i], acc + values[i], best);
        }
    }
    let mut best = 0.0;
    go(0, values, costs, budget, 0.0, &mut best);
    best
}
