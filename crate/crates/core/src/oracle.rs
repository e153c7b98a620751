//! Reference computations that share nothing with the clique-tree
//! recursion: direct enumeration of the multinomial sample space and Monte
//! Carlo sampling.

use num_bigint::BigUint;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use thiserror::Error;

use crate::engine::CellModel;
use crate::scan::{kulldorff_statistic, TieRule};
use crate::windows::WindowFamily;

/// Name of the sampling scheme, recorded in reports.
pub const MC_GENERATOR: &str = "chacha8-stream-per-replicate/sequential-binomial/v1";

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("enumeration needs {count} terms, over the budget of {budget}")]
    BudgetExceeded { count: BigUint, budget: u64 },
    #[error("at least one replicate is required")]
    NoReplicates,
}

/// Cap on the number of sample points enumerated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleBudget {
    pub max_terms: u64,
}

impl Default for OracleBudget {
    fn default() -> Self {
        Self { max_terms: 50_000_000 }
    }
}

fn sample_space_size(cells: usize, total: u32) -> BigUint {
    // C(N + n - 1, n - 1) by the multiplicative formula
    let (n, k) = (total as u64 + cells as u64 - 1, cells as u64 - 1);
    (0..k).fold(BigUint::from(1u32), |acc, i| acc * (n - i) / (i + 1))
}

/// `Σ_x P(x) f(x)` over every `x` with `Σ x = N`. Returns the sum and the
/// number of points visited.
pub fn brute_force_with<F>(model: &CellModel, budget: OracleBudget, f: F) -> Result<(f64, u64), OracleError>
where
    F: Fn(&[u32]) -> f64,
{
    let n = model.len();
    let total = model.total();
    let size = sample_space_size(n, total);
    if size > BigUint::from(budget.max_terms) {
        return Err(OracleError::BudgetExceeded { count: size, budget: budget.max_terms });
    }
    let mut ln_fact = vec![0.0f64; total as usize + 1];
    for k in 1..ln_fact.len() {
        ln_fact[k] = ln_fact[k - 1] + (k as f64).ln();
    }
    let ln_p: Vec<f64> = model.probabilities().iter().map(|p| p.ln()).collect();
    // Odometer over the first n - 1 cells (sum ≤ N); the last cell takes
    // the remainder.
    let mut x = vec![0u32; n];
    x[n - 1] = total;
    // Neumaier-compensated sum
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    let mut visited = 0u64;
    loop {
        visited += 1;
        let value = f(&x);
        if value != 0.0 {
            let mut lp = ln_fact[total as usize];
            for (&c, &l) in x.iter().zip(&ln_p) {
                if c > 0 {
                    lp += c as f64 * l - ln_fact[c as usize];
                }
            }
            let term = lp.exp() * value;
            let t = sum + term;
            carry += if sum.abs() >= term.abs() { (sum - t) + term } else { (term - t) + sum };
            sum = t;
        }
        if n == 1 {
            break;
        }
        if x[n - 1] > 0 {
            x[n - 2] += 1;
            x[n - 1] -= 1;
            continue;
        }
        match (0..n - 1).rev().find(|&i| x[i] > 0) {
            Some(p) if p > 0 => {
                x[n - 1] = x[p] - 1;
                x[p] = 0;
                x[p - 1] += 1;
            }
            _ => break,
        }
    }
    Ok((sum + carry, visited))
}

fn max_statistic(model: &CellModel, windows: &WindowFamily, shares: &[f64], x: &[u32]) -> f64 {
    windows
        .iter()
        .zip(shares)
        .map(|(w, &p)| {
            if p >= 1.0 {
                return 0.0;
            }
            let s = w.iter().map(|&v| x[v]).sum();
            kulldorff_statistic(s, model.total(), p).expect("share in (0,1)")
        })
        .fold(0.0, f64::max)
}

fn shares(model: &CellModel, windows: &WindowFamily) -> Vec<f64> {
    let whole: f64 = model.baselines().iter().sum();
    windows
        .iter()
        .map(|w| if w.len() == model.len() { 1.0 } else { w.iter().map(|&v| model.baselines()[v]).sum::<f64>() / whole })
        .collect()
}

fn is_extreme(max: f64, threshold: f64, tie_rule: TieRule) -> bool {
    match tie_rule {
        TieRule::Extreme => max >= threshold,
        TieRule::NotExtreme => max > threshold,
    }
}

/// `E[∏_Z 1{φ_Z < c}]` by enumeration (`≤ c` under [`TieRule::NotExtreme`]).
pub fn brute_force_expectation(
    model: &CellModel,
    windows: &WindowFamily,
    threshold: f64,
    tie_rule: TieRule,
    budget: OracleBudget,
) -> Result<f64, OracleError> {
    let shares = shares(model, windows);
    let (sum, _) = brute_force_with(model, budget, |x| {
        if is_extreme(max_statistic(model, windows, &shares, x), threshold, tie_rule) {
            0.0
        } else {
            1.0
        }
    })?;
    Ok(sum)
}

/// Monte Carlo estimate of a p-value.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub replicates: u64,
    pub hits: u64,
    pub seed: u64,
}

impl MonteCarloEstimate {
    /// `(estimate − reference) / std_error`; infinite when the standard error
    /// is zero and the two differ.
    pub fn z_score(&self, reference: f64) -> f64 {
        let d = self.estimate - reference;
        if self.std_error > 0.0 {
            d / self.std_error
        } else if d == 0.0 {
            0.0
        } else {
            d.signum() * f64::INFINITY
        }
    }
}

/// One multinomial draw by sequential binomial conditionals.
pub fn sample_multinomial(rng: &mut ChaCha8Rng, total: u32, probabilities: &[f64], out: &mut [u32]) {
    let mut left = total as u64;
    let mut mass = 1.0f64;
    let last = probabilities.len() - 1;
    for (i, &p) in probabilities[..last].iter().enumerate() {
        let draw = if left == 0 {
            0
        } else {
            let q = (p / mass).clamp(0.0, 1.0);
            Binomial::new(left, q).expect("probability in [0,1]").sample(rng)
        };
        out[i] = draw as u32;
        left -= draw;
        mass -= p;
    }
    out[last] = left as u32;
}

/// Fraction of `replicates` draws whose maximum statistic reaches the
/// threshold. Replicate `r` uses stream `r` of the generator seeded with
/// `seed`, so the estimate is independent of the thread count.
pub fn monte_carlo_pvalue(
    model: &CellModel,
    windows: &WindowFamily,
    threshold: f64,
    tie_rule: TieRule,
    replicates: u64,
    seed: u64,
) -> Result<MonteCarloEstimate, OracleError> {
    if replicates == 0 {
        return Err(OracleError::NoReplicates);
    }
    let shares = shares(model, windows);
    let probabilities = model.probabilities();
    let hits: u64 = (0..replicates)
        .into_par_iter()
        .map_init(
            || vec![0u32; model.len()],
            |x, r| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(r);
                sample_multinomial(&mut rng, model.total(), probabilities, x);
                is_extreme(max_statistic(model, windows, &shares, x), threshold, tie_rule) as u64
            },
        )
        .sum();
    let estimate = hits as f64 / replicates as f64;
    let std_error = (estimate * (1.0 - estimate) / replicates as f64).sqrt();
    Ok(MonteCarloEstimate { estimate, std_error, replicates, hits, seed })
}
