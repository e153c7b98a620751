use scanstat::engine::{Count, CostReport};
use scanstat::io::IdMap;
use scanstat::scan::{Arithmetic, PValueOptions, ScanReport, TieRule, WindowStatistic};
use scanstat::{CellModel, Decomposition};
use serde_json::{json, Value};

pub const SCHEMA_VERSION: u32 = 1;

/// Integer counts as JSON numbers when they fit in u64, else as strings.
pub fn count(c: &Count) -> Value {
    match u64::try_from(c) {
        Ok(v) => json!(v),
        Err(_) => json!(c.to_string()),
    }
}

pub fn display(p: f64) -> String {
    format!("{p:.8}")
}

fn window_ids(ids: &IdMap, window: &[usize]) -> Vec<String> {
    window.iter().map(|&v| ids.id(v).to_string()).collect()
}

fn statistic(ids: &IdMap, rank: usize, s: &WindowStatistic) -> Value {
    let mut v = json!({
        "rank": rank,
        "window": window_ids(ids, &s.window),
        "observed_sum": s.observed_sum,
        "expected_share": s.expected_share,
        "statistic": s.value,
    });
    if let Some(w) = &s.warning {
        v["warning"] = json!(w);
    }
    v
}

fn cost(c: &CostReport) -> Value {
    json!({
        "predicted_summations": count(&c.predicted),
        "actual_summations": c.actual,
        "naive_summations": count(&c.naive),
        "deg": c.deg,
        "peak_table_entries": c.peak_table_entries,
    })
}

pub struct Context<'a> {
    pub ids: &'a IdMap,
    pub model: &'a CellModel,
    pub options: &'a PValueOptions,
    pub ordering_override: bool,
    pub report: &'a ScanReport,
    pub assignment: Option<&'a [usize]>,
    pub wall_seconds: f64,
}

pub fn analysis(cx: &Context) -> Value {
    let r = cx.report;
    let ranked: Vec<Value> = r.ranked.iter().enumerate().map(|(i, s)| statistic(cx.ids, i + 1, s)).collect();
    let stepdown: Vec<Value> = r
        .stepdown
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut v = statistic(cx.ids, i + 1, &row.statistic);
            v["p_value"] = json!(row.p_value);
            v["p_value_display"] = json!(display(row.p_value));
            v["cost"] = cost(&row.cost);
            v
        })
        .collect();
    let max = r.ranked.first();
    let (p_value, run_cost) = match (&r.grouped, r.stepdown.first()) {
        (Some(g), _) => (Some(g.p_total), None),
        (None, Some(row)) => (Some(row.p_value), Some(&row.cost)),
        (None, None) => (None, None),
    };
    let summary = &r.summary;
    let mut decomposition = json!({
        "vertices": summary.vertices,
        "windows": summary.windows,
        "edges": summary.edges,
        "fill_edges": summary.fill_edges,
        "cliques": summary.cliques,
        "clique_sizes": summary.clique_sizes,
        "deg": summary.deg,
        "ordering": if cx.ordering_override { "override" } else { "minimum-degree" },
        "predicted_summations": count(&r.predicted),
        "naive_summations": count(&r.naive),
    });
    if let Some(c) = run_cost {
        decomposition["actual_summations"] = json!(c.actual);
        decomposition["peak_table_entries"] = json!(c.peak_table_entries);
    }
    let mut out = json!({
        "schema_version": SCHEMA_VERSION,
        "tool": { "name": "scanstat", "version": env!("CARGO_PKG_VERSION") },
        "input": {
            "vertices": cx.model.len(),
            "windows": r.ranked.len(),
            "total": cx.model.total(),
            "tie_rule": match cx.options.tie_rule {
                TieRule::Extreme => "extreme",
                TieRule::NotExtreme => "not-extreme",
            },
            "arithmetic": match cx.options.arithmetic {
                Arithmetic::Float => "float",
                Arithmetic::ExactRational => "exact-rational",
            },
        },
        "max_statistic": max.map(|s| s.value),
        "max_window": max.map(|s| window_ids(cx.ids, &s.window)),
        "p_value": p_value,
        "p_value_display": p_value.map(display),
        "statistics": ranked,
        "stepdown": stepdown,
        "decomposition": decomposition,
        "timing": { "wall_seconds": cx.wall_seconds },
    });
    if let Some(g) = &r.grouped {
        let groups: Vec<Value> = g
            .groups
            .iter()
            .enumerate()
            .map(|(i, res)| {
                json!({
                    "group": i + 1,
                    "windows": res.windows,
                    "p_value": res.p_value,
                    "p_value_display": display(res.p_value),
                    "fill_edges": res.summary.fill_edges,
                    "edges": res.summary.edges,
                    "cliques": res.summary.cliques,
                    "deg": res.summary.deg,
                    "cost": cost(&res.cost),
                })
            })
            .collect();
        out["grouped"] = json!({
            "threshold": g.threshold,
            "p_total": g.p_total,
            "p_total_display": display(g.p_total),
            "assignment": cx.assignment.map(|a| a.iter().map(|x| x + 1).collect::<Vec<_>>()),
            "groups": groups,
        });
    }
    out
}

pub fn plan_entry(d: &Decomposition, predicted: &Count, naive: &Count) -> Value {
    let s = d.summary();
    json!({
        "windows": s.windows,
        "edges": s.edges,
        "fill_edges": s.fill_edges,
        "cliques": s.cliques,
        "clique_sizes": s.clique_sizes,
        "deg": s.deg,
        "predicted_summations": count(predicted),
        "naive_summations": count(naive),
    })
}
