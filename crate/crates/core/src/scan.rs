//! Kulldorff's likelihood-ratio scan statistic and exact p-values for its
//! maximum over a window family.

use num_bigint::BigUint;
use num_rational::BigRational;
use serde::Serialize;
use thiserror::Error;

use crate::engine::{self, BoundFactor, CellModel, CostReport, EngineError, Potential, Scalar};
use crate::graph::{Decomposition, EliminationOrdering, GraphError, GraphSummary};
use crate::windows::WindowFamily;

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("expected share {0} is outside (0, 1)")]
    Domain(f64),
    #[error("observed sum {observed} exceeds total {total}")]
    ObservedExceedsTotal { observed: u32, total: u32 },
    #[error("threshold must be a nonnegative number, got {0}")]
    BadThreshold(f64),
    #[error("predicted {predicted} summations exceed the budget of {budget}")]
    Infeasible { predicted: BigUint, budget: BigUint },
    #[error("window group {0} is empty")]
    EmptyGroup(usize),
    #[error("top_k must be at least one")]
    ZeroTopK,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// `φ_N` for a window with `observed_sum` of `total` events and expected
/// share `p`; zero unless the window is in excess.
pub fn kulldorff_statistic(observed_sum: u32, total: u32, p: f64) -> Result<f64, ScanError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(ScanError::Domain(p));
    }
    if observed_sum > total {
        return Err(ScanError::ObservedExceedsTotal { observed: observed_sum, total });
    }
    if total == 0 {
        return Ok(0.0);
    }
    let n = total as f64;
    let hat = observed_sum as f64 / n;
    if hat <= p {
        return Ok(0.0);
    }
    let r = hat / p;
    let s = (1.0 - hat) / (1.0 - p);
    let xlogx = |x: f64| if x == 0.0 { 0.0 } else { x * x.ln() };
    Ok(n * (p * (xlogx(r) - r + 1.0) + (1.0 - p) * (xlogx(s) - s + 1.0)))
}

/// Statistic of one window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowStatistic {
    /// Position in the family.
    pub index: usize,
    pub window: Vec<usize>,
    pub observed_sum: u32,
    pub expected_share: f64,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

fn expected_share(model: &CellModel, window: &[usize]) -> f64 {
    if window.len() == model.len() {
        return 1.0;
    }
    model.mass(window.iter().copied()) / model.mass(0..model.len())
}

/// `φ` for every window, largest first; equal values are ordered by the
/// window's member list.
pub fn scan_all_windows(model: &CellModel, windows: &WindowFamily) -> Vec<WindowStatistic> {
    let mut out: Vec<WindowStatistic> = windows
        .iter()
        .enumerate()
        .map(|(index, w)| {
            let observed_sum = w.iter().map(|&v| model.counts()[v]).sum();
            let p = expected_share(model, w);
            let (value, warning) = if p >= 1.0 {
                (0.0, Some("window covers every cell; statistic is identically zero".to_string()))
            } else {
                let v = kulldorff_statistic(observed_sum, model.total(), p).expect("share in (0,1)");
                (v, None)
            };
            WindowStatistic { index, window: w.to_vec(), observed_sum, expected_share: p, value, warning }
        })
        .collect();
    out.sort_by(|a, b| b.value.total_cmp(&a.value).then_with(|| a.window.cmp(&b.window)));
    out
}

/// How outcomes whose maximum equals the threshold are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieRule {
    /// `max φ = c` counts as extreme.
    #[default]
    Extreme,
    /// `max φ = c` counts as not extreme.
    NotExtreme,
}

/// Arithmetic for the recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arithmetic {
    #[default]
    Float,
    ExactRational,
}

/// Settings shared by the p-value functions.
#[derive(Debug, Clone, Default)]
pub struct PValueOptions {
    pub tie_rule: TieRule,
    pub arithmetic: Arithmetic,
    /// Refuse runs predicted to need more summations than this.
    pub budget: Option<BigUint>,
}

/// Per-window tables `accept[s]`: whether a window sum `s` keeps the
/// window's statistic below the threshold.
#[derive(Debug, Clone)]
pub struct ThresholdPotential {
    windows: Vec<Vec<usize>>,
    assignment: Vec<usize>,
    accept: Vec<Vec<bool>>,
}

impl ThresholdPotential {
    pub fn new(
        model: &CellModel,
        windows: &WindowFamily,
        assignment: &[usize],
        threshold: f64,
        tie_rule: TieRule,
    ) -> Self {
        let total = model.total();
        let accept = windows
            .iter()
            .map(|w| {
                let p = expected_share(model, w);
                (0..=total)
                    .map(|s| {
                        let phi = if p >= 1.0 { 0.0 } else { kulldorff_statistic(s, total, p).expect("share in (0,1)") };
                        match tie_rule {
                            TieRule::Extreme => phi < threshold,
                            TieRule::NotExtreme => phi <= threshold,
                        }
                    })
                    .collect()
            })
            .collect();
        Self { windows: windows.as_slice().to_vec(), assignment: assignment.to_vec(), accept }
    }

    /// Whether `accept` holds for every window.
    pub fn accepts_all(&self) -> bool {
        self.accept.iter().all(|a| a.iter().all(|&b| b))
    }
}

impl Potential for ThresholdPotential {
    fn bind<'a>(&'a self, clique: usize, vertices: &[usize]) -> BoundFactor<'a> {
        let members: Vec<(&'a [bool], Vec<usize>)> = self
            .assignment
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == clique)
            .map(|(j, _)| {
                let pos = self.windows[j]
                    .iter()
                    .map(|v| vertices.iter().position(|u| u == v).expect("window lies inside its clique"))
                    .collect();
                (self.accept[j].as_slice(), pos)
            })
            .collect();
        Box::new(move |values: &[u32]| {
            for (accept, pos) in &members {
                let s: u32 = pos.iter().map(|&p| values[p]).sum();
                if !accept[s as usize] {
                    return 0.0;
                }
            }
            1.0
        })
    }
}

/// An exact p-value with its cost.
#[derive(Debug, Clone)]
pub struct PValue {
    pub threshold: f64,
    pub p_value: f64,
    pub cost: CostReport,
}

fn check_budget(decomposition: &Decomposition, total: u32, budget: Option<&BigUint>) -> Result<(), ScanError> {
    if let Some(budget) = budget {
        let predicted = engine::predicted_summation_count(&decomposition.tree, total);
        if &predicted > budget {
            return Err(ScanError::Infeasible { predicted, budget: budget.clone() });
        }
    }
    Ok(())
}

/// `P(max_Z φ_Z ≥ c | N)`, or `> c` under [`TieRule::NotExtreme`].
pub fn exact_pvalue(
    model: &CellModel,
    windows: &WindowFamily,
    decomposition: &Decomposition,
    threshold: f64,
    options: &PValueOptions,
) -> Result<PValue, ScanError> {
    if threshold.is_nan() || threshold < 0.0 {
        return Err(ScanError::BadThreshold(threshold));
    }
    check_budget(decomposition, model.total(), options.budget.as_ref())?;
    let potential = ThresholdPotential::new(model, windows, &decomposition.assignment, threshold, options.tie_rule);
    let (value, cost) = match options.arithmetic {
        Arithmetic::Float => {
            let e = engine::evaluate_expectation::<f64>(&decomposition.tree, model, &potential)?;
            (e.value, e.cost)
        }
        Arithmetic::ExactRational => {
            let e = engine::evaluate_expectation::<BigRational>(&decomposition.tree, model, &potential)?;
            let complement = <BigRational as num_traits::One>::one() - e.value;
            (Scalar::to_f64(&complement), e.cost)
        }
    };
    let p_value = match options.arithmetic {
        Arithmetic::Float => 1.0 - value,
        Arithmetic::ExactRational => value,
    };
    Ok(PValue { threshold, p_value: p_value.clamp(0.0, 1.0), cost })
}

/// One row of the step-down table.
#[derive(Debug, Clone)]
pub struct StepdownRow {
    pub statistic: WindowStatistic,
    pub p_value: f64,
    pub cost: CostReport,
}

/// Exact p-values of the `top_k` largest statistics, each against its own
/// value as threshold.
pub fn stepdown_pvalues(
    model: &CellModel,
    windows: &WindowFamily,
    decomposition: &Decomposition,
    top_k: usize,
    options: &PValueOptions,
) -> Result<Vec<StepdownRow>, ScanError> {
    if top_k == 0 {
        return Err(ScanError::ZeroTopK);
    }
    let ranked = scan_all_windows(model, windows);
    let mut rows: Vec<StepdownRow> = Vec::with_capacity(top_k.min(ranked.len()));
    for statistic in ranked.into_iter().take(top_k) {
        // Equal statistics share one evaluation.
        let reuse = rows.last().filter(|r| r.statistic.value == statistic.value).map(|r| (r.p_value, r.cost.clone()));
        let (p_value, cost) = match reuse {
            Some(hit) => hit,
            None => {
                let pv = exact_pvalue(model, windows, decomposition, statistic.value, options)?;
                (pv.p_value, pv.cost)
            }
        };
        rows.push(StepdownRow { statistic, p_value, cost });
    }
    Ok(rows)
}

/// Result for one window group.
#[derive(Debug, Clone)]
pub struct GroupResult {
    pub windows: usize,
    pub p_value: f64,
    pub cost: CostReport,
    pub summary: GraphSummary,
}

/// Bonferroni-combined p-value over a partition of the windows.
#[derive(Debug, Clone)]
pub struct GroupedPValue {
    pub threshold: f64,
    pub p_total: f64,
    pub groups: Vec<GroupResult>,
}

/// `min(1, Σ_g p_g)`, each group with its own decomposition. `ordering`
/// overrides minimum degree in every group.
pub fn grouped_pvalue(
    model: &CellModel,
    groups: &[WindowFamily],
    threshold: f64,
    ordering: Option<&EliminationOrdering>,
    options: &PValueOptions,
) -> Result<GroupedPValue, ScanError> {
    if let Some(g) = groups.iter().position(WindowFamily::is_empty) {
        return Err(ScanError::EmptyGroup(g));
    }
    let decompositions = groups
        .iter()
        .map(|g| Decomposition::build(g, model.len(), ordering))
        .collect::<Result<Vec<_>, _>>()?;
    for d in &decompositions {
        check_budget(d, model.total(), options.budget.as_ref())?;
    }
    let mut results = Vec::with_capacity(groups.len());
    for (family, d) in groups.iter().zip(&decompositions) {
        let pv = exact_pvalue(model, family, d, threshold, options)?;
        results.push(GroupResult { windows: family.len(), p_value: pv.p_value, cost: pv.cost, summary: d.summary() });
    }
    let p_total = results.iter().map(|r| r.p_value).sum::<f64>().min(1.0);
    Ok(GroupedPValue { threshold, p_total, groups: results })
}

/// Complete analysis of one family.
#[derive(Debug, Clone)]
pub struct ScanReport {
    pub ranked: Vec<WindowStatistic>,
    pub stepdown: Vec<StepdownRow>,
    pub grouped: Option<GroupedPValue>,
    pub summary: GraphSummary,
    pub predicted: BigUint,
    pub naive: BigUint,
}

/// Ranks the windows, computes step-down p-values for the `top_k` leaders
/// and, when `groups` is given, the grouped p-value at the maximum.
pub fn analyze(
    model: &CellModel,
    windows: &WindowFamily,
    ordering: Option<&EliminationOrdering>,
    top_k: usize,
    groups: Option<&[WindowFamily]>,
    options: &PValueOptions,
) -> Result<ScanReport, ScanError> {
    let decomposition = Decomposition::build(windows, model.len(), ordering)?;
    let ranked = scan_all_windows(model, windows);
    let (stepdown, grouped) = match groups {
        Some(groups) => {
            let max = ranked.first().map_or(0.0, |s| s.value);
            (Vec::new(), Some(grouped_pvalue(model, groups, max, ordering, options)?))
        }
        None => (stepdown_pvalues(model, windows, &decomposition, top_k, options)?, None),
    };
    Ok(ScanReport {
        ranked,
        stepdown,
        grouped,
        summary: decomposition.summary(),
        predicted: engine::predicted_summation_count(&decomposition.tree, model.total()),
        naive: engine::naive_summation_count(model.len(), model.total()),
    })
}
