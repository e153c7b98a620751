//! `scanstat`: exact p-values for scan statistics from the command line.

mod inputs;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use scanstat::engine::{self, UnitPotential};
use scanstat::io::{self, IdMap};
use scanstat::oracle::{self, OracleBudget};
use scanstat::scan::{self, Arithmetic, PValueOptions, ScanError, ThresholdPotential, TieRule};
use scanstat::windows::partition_by_assignment;
use scanstat::{CellModel, Decomposition, WindowFamily};
use serde_json::json;

use inputs::{Grouping, WindowSource};

const DEFAULT_BUDGET: f64 = 1e10;

#[derive(Debug, Parser)]
#[command(name = "scanstat", version, about = "Exact p-values for temporal and spatial scan statistics")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Rank windows and compute exact p-values.
    Analyze(AnalyzeArgs),
    /// Report the clique tree and predicted cost without evaluating.
    Plan(PlanArgs),
    /// Compare the exact value against enumeration or simulation.
    Audit(AuditArgs),
    /// Generate or split window families.
    #[command(subcommand)]
    Windows(WindowsCommand),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Ties {
    /// Outcomes equal to the threshold count as extreme.
    Extreme,
    /// Outcomes equal to the threshold count as not extreme.
    NotExtreme,
}

#[derive(Debug, Args)]
struct Common {
    /// CSV with columns id,count[,baseline].
    #[arg(long, value_name = "FILE")]
    counts: PathBuf,
    #[command(flatten)]
    source: WindowSource,
    /// Elimination ordering, one id per line (default: minimum degree).
    #[arg(long, value_name = "FILE")]
    ordering: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Ties::Extreme)]
    ties: Ties,
    /// Evaluate in exact rational arithmetic.
    #[arg(long)]
    exact: bool,
    /// Refuse runs predicted to need more summations than this.
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: f64,
    /// Ignore the budget.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    grouping: Grouping,
    /// Number of leading statistics to test.
    #[arg(long, default_value_t = 1)]
    top_k: usize,
    /// Write the report here instead of stdout.
    #[arg(long, short, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PlanArgs {
    /// Counts file; alternatively give --vertices and --total.
    #[arg(long, value_name = "FILE", conflicts_with_all = ["vertices", "total"])]
    counts: Option<PathBuf>,
    /// Number of cells, with ids 1..=n.
    #[arg(long, requires = "total")]
    vertices: Option<usize>,
    /// Total count N.
    #[arg(long, requires = "vertices")]
    total: Option<u32>,
    #[command(flatten)]
    source: WindowSource,
    #[arg(long, value_name = "FILE")]
    ordering: Option<PathBuf>,
    #[command(flatten)]
    grouping: Grouping,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AuditMode {
    /// Enumerate every outcome.
    Oracle,
    /// Monte Carlo simulation.
    Mc,
}

#[derive(Debug, Args)]
struct AuditArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    mode: AuditMode,
    /// Threshold (default: the observed maximum statistic).
    #[arg(long)]
    threshold: Option<f64>,
    /// Audit the normalisation instead: every factor is one.
    #[arg(long)]
    all_true: bool,
    /// Largest sample space enumerated in oracle mode.
    #[arg(long, default_value_t = OracleBudget::default().max_terms)]
    oracle_budget: u64,
    /// Largest accepted |difference| in oracle mode.
    #[arg(long, default_value_t = 1e-10)]
    tolerance: f64,
    #[arg(long, default_value_t = 100_000)]
    replicates: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Largest accepted |z| in Monte Carlo mode.
    #[arg(long, default_value_t = 4.0)]
    z_limit: f64,
}

#[derive(Debug, Subcommand)]
enum WindowsCommand {
    /// Write a temporal or spatial family as JSON lines.
    Generate(GenerateArgs),
    /// Split a family into groups, one JSON-lines file per group.
    Partition(PartitionArgs),
}

#[derive(Debug, Args)]
struct IdSource {
    /// Take cell ids from a counts file.
    #[arg(long, value_name = "FILE", conflicts_with = "vertices")]
    counts: Option<PathBuf>,
    /// Use ids 1..=n.
    #[arg(long)]
    vertices: Option<usize>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[command(flatten)]
    ids: IdSource,
    #[command(flatten)]
    source: WindowSource,
    #[arg(long, short, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PartitionArgs {
    #[command(flatten)]
    ids: IdSource,
    /// Family to split.
    #[arg(long, value_name = "FILE")]
    windows: PathBuf,
    #[command(flatten)]
    grouping: Grouping,
    /// Directory for group-<g>.jsonl and assignment.txt.
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
}

/// Error with its exit code.
#[derive(Debug)]
pub enum Failure {
    Input(String),
    Infeasible(String),
    Audit(String),
    Internal(String),
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Self {
        Self::Input(message.into())
    }

    fn code(&self) -> u8 {
        match self {
            Self::Input(_) => 2,
            Self::Infeasible(_) => 3,
            Self::Audit(_) => 4,
            Self::Internal(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Input(m) | Self::Infeasible(m) | Self::Audit(m) | Self::Internal(m) => m,
        }
    }
}

impl From<ScanError> for Failure {
    fn from(e: ScanError) -> Self {
        match e {
            ScanError::Infeasible { .. } => Self::Infeasible(format!("{e}; rerun with --force to proceed")),
            ScanError::Engine(engine::EngineError::TotalTooLarge { .. }) => Self::Input(format!("{e}; use --exact")),
            ScanError::Engine(_) => Self::Internal(e.to_string()),
            _ => Self::Input(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Analyze(args) => analyze(args),
        Command::Plan(args) => plan(args),
        Command::Audit(args) => audit(args),
        Command::Windows(WindowsCommand::Generate(args)) => generate(args),
        Command::Windows(WindowsCommand::Partition(args)) => partition(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn emit(value: &serde_json::Value, output: Option<&PathBuf>) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("report serializes") + "\n";
    match output {
        Some(path) => std::fs::write(path, text).map_err(|e| Failure::Internal(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn budget_value(budget: f64) -> Result<scanstat::engine::Count, Failure> {
    if !(budget.is_finite() && budget >= 1.0) {
        return Err(Failure::input(format!("budget must be a finite number ≥ 1, got {budget}")));
    }
    Ok(engine::count_from_f64(budget))
}

struct Loaded {
    ids: IdMap,
    model: CellModel,
    family: WindowFamily,
    ordering: Option<scanstat::EliminationOrdering>,
    options: PValueOptions,
}

fn load(common: &Common) -> Result<Loaded, Failure> {
    let (table, model) = inputs::load_counts(&common.counts)?;
    let ids = table.ids;
    let family = inputs::load_windows(&common.source, &ids)?;
    let ordering = inputs::load_ordering(common.ordering.as_deref(), &ids)?;
    let options = PValueOptions {
        tie_rule: match common.ties {
            Ties::Extreme => TieRule::Extreme,
            Ties::NotExtreme => TieRule::NotExtreme,
        },
        arithmetic: if common.exact { Arithmetic::ExactRational } else { Arithmetic::Float },
        budget: if common.force { None } else { Some(budget_value(common.budget)?) },
    };
    Ok(Loaded { ids, model, family, ordering, options })
}

fn analyze(args: AnalyzeArgs) -> Result<(), Failure> {
    let started = Instant::now();
    let loaded = load(&args.common)?;
    let assignment = inputs::load_assignment(&args.grouping, &loaded.family)?;
    let groups = assignment
        .as_deref()
        .map(|a| partition_by_assignment(&loaded.family, a))
        .transpose()
        .map_err(|e| Failure::input(e.to_string()))?;
    if args.top_k == 0 {
        return Err(Failure::input("--top-k must be at least 1"));
    }
    let result = scan::analyze(
        &loaded.model,
        &loaded.family,
        loaded.ordering.as_ref(),
        args.top_k,
        groups.as_deref(),
        &loaded.options,
    )?;
    let value = report::analysis(&report::Context {
        ids: &loaded.ids,
        model: &loaded.model,
        options: &loaded.options,
        ordering_override: loaded.ordering.is_some(),
        report: &result,
        assignment: assignment.as_deref(),
        wall_seconds: started.elapsed().as_secs_f64(),
    });
    emit(&value, args.output.as_ref())
}

fn plan(args: PlanArgs) -> Result<(), Failure> {
    let (ids, total) = match (&args.counts, args.vertices, args.total) {
        (Some(path), _, _) => {
            let (table, model) = inputs::load_counts(path)?;
            (table.ids, model.total())
        }
        (None, Some(n), Some(total)) if n >= 1 => (IdMap::numbered(n), total),
        _ => return Err(Failure::input("give --counts, or --vertices and --total")),
    };
    let budget = budget_value(args.budget)?;
    let family = inputs::load_windows(&args.source, &ids)?;
    let ordering = inputs::load_ordering(args.ordering.as_deref(), &ids)?;
    let groups = match inputs::load_assignment(&args.grouping, &family)? {
        Some(a) => partition_by_assignment(&family, &a).map_err(|e| Failure::input(e.to_string()))?,
        None => vec![family],
    };
    let mut entries = Vec::new();
    let mut predicted_total = engine::Count::from(0u32);
    for g in &groups {
        let d = Decomposition::build(g, ids.len(), ordering.as_ref()).map_err(|e| Failure::input(e.to_string()))?;
        let predicted = engine::predicted_summation_count(&d.tree, total);
        predicted_total += &predicted;
        entries.push(report::plan_entry(&d, &predicted, &engine::naive_summation_count(ids.len(), total)));
    }
    let value = json!({
        "schema_version": report::SCHEMA_VERSION,
        "vertices": ids.len(),
        "total": total,
        "budget": report::count(&budget),
        "predicted_summations": report::count(&predicted_total),
        "feasible": predicted_total <= budget,
        "groups": entries,
    });
    emit(&value, None)
}

fn audit(args: AuditArgs) -> Result<(), Failure> {
    let loaded = load(&args.common)?;
    let d = Decomposition::build(&loaded.family, loaded.model.len(), loaded.ordering.as_ref())
        .map_err(|e| Failure::input(e.to_string()))?;
    let threshold = match args.threshold {
        Some(c) => c,
        None => scan::scan_all_windows(&loaded.model, &loaded.family).first().map_or(0.0, |s| s.value),
    };
    if let Some(budget) = &loaded.options.budget {
        let predicted = engine::predicted_summation_count(&d.tree, loaded.model.total());
        if &predicted > budget {
            return Err(ScanError::Infeasible { predicted, budget: budget.clone() }.into());
        }
    }
    let tie_rule = loaded.options.tie_rule;
    // The value audited is the expectation of the product of factors; with
    // --all-true every factor is one.
    let engine_value = if args.all_true {
        engine::evaluate_expectation::<f64>(&d.tree, &loaded.model, &UnitPotential).map_err(ScanError::from)?.value
    } else {
        let potential = ThresholdPotential::new(&loaded.model, &loaded.family, &d.assignment, threshold, tie_rule);
        match loaded.options.arithmetic {
            Arithmetic::Float => {
                engine::evaluate_expectation::<f64>(&d.tree, &loaded.model, &potential).map_err(ScanError::from)?.value
            }
            Arithmetic::ExactRational => {
                let e = engine::evaluate_expectation::<engine::Exact>(&d.tree, &loaded.model, &potential)
                    .map_err(ScanError::from)?;
                scanstat::Scalar::to_f64(&e.value)
            }
        }
    };
    let value = match args.mode {
        AuditMode::Oracle => {
            let budget = OracleBudget { max_terms: args.oracle_budget };
            let reference = if args.all_true {
                oracle::brute_force_with(&loaded.model, budget, |_| 1.0).map(|(s, _)| s)
            } else {
                oracle::brute_force_expectation(&loaded.model, &loaded.family, threshold, tie_rule, budget)
            }
            .map_err(|e| Failure::Infeasible(e.to_string()))?;
            let diff = (engine_value - reference).abs();
            let v = json!({
                "schema_version": report::SCHEMA_VERSION,
                "mode": "oracle",
                "threshold": threshold,
                "engine": engine_value,
                "oracle": reference,
                "abs_diff": diff,
                "tolerance": args.tolerance,
                "pass": diff <= args.tolerance,
            });
            if diff > args.tolerance {
                emit(&v, None)?;
                return Err(Failure::Audit(format!("engine and enumeration differ by {diff:e}")));
            }
            v
        }
        AuditMode::Mc => {
            let c = if args.all_true { 0.0 } else { threshold };
            let mc = oracle::monte_carlo_pvalue(&loaded.model, &loaded.family, c, tie_rule, args.replicates, args.seed)
                .map_err(|e| Failure::input(e.to_string()))?;
            let exact = if args.all_true { 1.0 } else { (1.0 - engine_value).clamp(0.0, 1.0) };
            let z = mc.z_score(exact);
            let v = json!({
                "schema_version": report::SCHEMA_VERSION,
                "mode": "mc",
                "threshold": c,
                "exact_p_value": exact,
                "mc_estimate": mc.estimate,
                "mc_std_error": mc.std_error,
                "replicates": mc.replicates,
                "seed": mc.seed,
                "generator": oracle::MC_GENERATOR,
                "z_score": z,
                "z_limit": args.z_limit,
                "pass": z.abs() <= args.z_limit,
            });
            if z.abs() > args.z_limit {
                emit(&v, None)?;
                return Err(Failure::Audit(format!("Monte Carlo estimate is {z:.2} standard errors away")));
            }
            v
        }
    };
    emit(&value, None)
}

fn id_map(source: &IdSource) -> Result<IdMap, Failure> {
    match (&source.counts, source.vertices) {
        (Some(path), _) => Ok(inputs::load_counts(path)?.0.ids),
        (None, Some(n)) if n >= 1 => Ok(IdMap::numbered(n)),
        _ => Err(Failure::input("give --counts or --vertices")),
    }
}

fn generate(args: GenerateArgs) -> Result<(), Failure> {
    let ids = id_map(&args.ids)?;
    let family = inputs::load_windows(&args.source, &ids)?;
    let text = io::write_windows(&family, &ids);
    match &args.output {
        Some(path) => std::fs::write(path, text).map_err(|e| Failure::Internal(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn partition(args: PartitionArgs) -> Result<(), Failure> {
    let ids = id_map(&args.ids)?;
    let family = io::parse_windows(&inputs::read(&args.windows)?, &ids)
        .map_err(|e| Failure::input(format!("{}: {e}", args.windows.display())))?;
    let grouping = if args.grouping.groups.is_none() && args.grouping.assignment.is_none() {
        return Err(Failure::input("give --groups or --assignment"));
    } else {
        &args.grouping
    };
    let assignment = inputs::load_assignment(grouping, &family)?.expect("grouping requested");
    let groups = partition_by_assignment(&family, &assignment).map_err(|e| Failure::input(e.to_string()))?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Failure::Internal(format!("{}: {e}", args.out_dir.display())))?;
    let write = |name: String, text: String| {
        let path = args.out_dir.join(name);
        std::fs::write(&path, text).map_err(|e| Failure::Internal(format!("{}: {e}", path.display())))
    };
    for (g, group) in groups.iter().enumerate() {
        write(format!("group-{}.jsonl", g + 1), io::write_windows(group, &ids))?;
    }
    write("assignment.txt".into(), assignment.iter().map(|g| format!("{}\n", g + 1)).collect())?;
    emit(&json!({ "groups": groups.len(), "sizes": groups.iter().map(WindowFamily::len).collect::<Vec<_>>() }), None)
}
