use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use scanstat::io::{self, CountsTable, IdMap};
use scanstat::windows::{partition_by_assignment, random_assignment, spatial_windows, temporal_windows};
use scanstat::{CellModel, EliminationOrdering, WindowFamily};

use crate::Failure;

#[derive(Debug, Args, Clone)]
#[group(skip)]
pub struct WindowSource {
    /// Explicit windows, one JSON array of ids per line.
    #[arg(long, value_name = "FILE", conflicts_with_all = ["temporal", "spatial"])]
    pub windows: Option<PathBuf>,
    /// All runs of up to L consecutive cells, in file order.
    #[arg(long, value_name = "L", conflicts_with = "spatial")]
    pub temporal: Option<usize>,
    /// Singletons (1) or singletons plus adjacent pairs (2); needs --adjacency.
    #[arg(long, value_name = "SIZE", requires = "adjacency")]
    pub spatial: Option<usize>,
    /// Edge list `id,id` for --spatial.
    #[arg(long, value_name = "FILE")]
    pub adjacency: Option<PathBuf>,
}

#[derive(Debug, Args, Clone, Default)]
#[group(skip)]
pub struct Grouping {
    /// Split the windows into this many balanced random groups.
    #[arg(long, value_name = "G", conflicts_with = "assignment")]
    pub groups: Option<usize>,
    /// Seed for --groups.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// One 1-based group number per window.
    #[arg(long, value_name = "FILE")]
    pub assignment: Option<PathBuf>,
}

pub fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn parse_err(path: &Path, e: io::ParseError) -> Failure {
    Failure::input(format!("{}: {e}", path.display()))
}

pub fn load_counts(path: &Path) -> Result<(CountsTable, CellModel), Failure> {
    let table = io::parse_counts(&read(path)?).map_err(|e| parse_err(path, e))?;
    let model = CellModel::new(table.counts.clone(), table.baselines.clone()).map_err(|e| Failure::input(e.to_string()))?;
    Ok((table, model))
}

pub fn load_windows(source: &WindowSource, ids: &IdMap) -> Result<WindowFamily, Failure> {
    if let Some(path) = &source.windows {
        return io::parse_windows(&read(path)?, ids).map_err(|e| parse_err(path, e));
    }
    if let Some(len) = source.temporal {
        return temporal_windows(ids.len(), len).map_err(|e| Failure::input(e.to_string()));
    }
    if let (Some(size), Some(path)) = (source.spatial, &source.adjacency) {
        let adjacency = io::parse_adjacency(&read(path)?, ids).map_err(|e| parse_err(path, e))?;
        return spatial_windows(&adjacency, size).map_err(|e| Failure::input(e.to_string()));
    }
    Err(Failure::input("give one of --windows, --temporal or --spatial"))
}

pub fn load_ordering(path: Option<&Path>, ids: &IdMap) -> Result<Option<EliminationOrdering>, Failure> {
    path.map(|p| io::parse_ordering(&read(p)?, ids).map_err(|e| parse_err(p, e))).transpose()
}

/// Group assignment (0-based) for `family`, if grouping was requested.
pub fn load_assignment(grouping: &Grouping, family: &WindowFamily) -> Result<Option<Vec<usize>>, Failure> {
    if let Some(path) = &grouping.assignment {
        let assignment = io::parse_assignment(&read(path)?).map_err(|e| parse_err(path, e))?;
        partition_by_assignment(family, &assignment).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        return Ok(Some(assignment));
    }
    match grouping.groups {
        Some(g) => random_assignment(family.len(), g, grouping.seed).map(Some).map_err(|e| Failure::input(e.to_string())),
        None => Ok(None),
    }
}
