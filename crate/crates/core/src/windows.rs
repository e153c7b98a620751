//! Scan-window families.
//!
//! Vertices are 0-based indices into the cell model. A window is a nonempty
//! set of vertices stored with its members sorted ascending.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WindowError {
    #[error("window {index} is empty")]
    EmptyWindow { index: usize },
    #[error("window {index} lists vertex {vertex} more than once")]
    RepeatedVertex { index: usize, vertex: usize },
    #[error("window {index} duplicates window {first}")]
    DuplicateWindow { index: usize, first: usize },
    #[error("window family is empty")]
    EmptyFamily,
    #[error("maximum window length {max_len} is outside 1..={periods}")]
    LengthOutOfRange { max_len: usize, periods: usize },
    #[error("spatial windows support sizes 1 or 2, got {0}")]
    UnsupportedSize(usize),
    #[error("vertex {vertex} is adjacent to itself")]
    SelfAdjacent { vertex: usize },
    #[error("adjacency references vertex {vertex} but only {vertex_count} vertices exist")]
    AdjacencyOutOfRange { vertex: usize, vertex_count: usize },
    #[error("cannot split {windows} windows into {groups} groups")]
    GroupCount { groups: usize, windows: usize },
    #[error("assignment has {got} entries for {expected} windows")]
    AssignmentLength { got: usize, expected: usize },
    #[error("group {group} received no windows")]
    EmptyGroup { group: usize },
}

/// An ordered collection of distinct scan windows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowFamily {
    windows: Vec<Vec<usize>>,
    labels: Option<Vec<String>>,
}

impl WindowFamily {
    /// Builds a family, sorting each window's members. Window order is kept.
    pub fn new(windows: Vec<Vec<usize>>) -> Result<Self, WindowError> {
        if windows.is_empty() {
            return Err(WindowError::EmptyFamily);
        }
        let mut seen = std::collections::HashMap::new();
        let mut canonical = Vec::with_capacity(windows.len());
        for (index, mut w) in windows.into_iter().enumerate() {
            if w.is_empty() {
                return Err(WindowError::EmptyWindow { index });
            }
            w.sort_unstable();
            if let Some(pair) = w.windows(2).find(|p| p[0] == p[1]) {
                return Err(WindowError::RepeatedVertex { index, vertex: pair[0] });
            }
            if let Some(&first) = seen.get(&w) {
                return Err(WindowError::DuplicateWindow { index, first });
            }
            seen.insert(w.clone(), index);
            canonical.push(w);
        }
        Ok(Self { windows: canonical, labels: None })
    }

    /// Attaches display names, one per vertex.
    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        self.labels = Some(labels);
        self
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn get(&self, index: usize) -> &[usize] {
        &self.windows[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> + '_ {
        self.windows.iter().map(Vec::as_slice)
    }

    pub fn as_slice(&self) -> &[Vec<usize>] {
        &self.windows
    }

    /// Largest vertex index referenced plus one.
    pub fn min_vertex_count(&self) -> usize {
        self.windows
            .iter()
            .filter_map(|w| w.last())
            .max()
            .map_or(0, |v| v + 1)
    }

    /// The subfamily made of the given window indices, in that order.
    pub fn subfamily(&self, indices: &[usize]) -> Result<Self, WindowError> {
        let fam = Self::new(indices.iter().map(|&i| self.windows[i].clone()).collect())?;
        Ok(match &self.labels {
            Some(l) => fam.with_labels(l.clone()),
            None => fam,
        })
    }
}

/// Symmetric district adjacency without self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyList {
    neighbors: Vec<BTreeSet<usize>>,
}

impl AdjacencyList {
    pub fn new(vertex_count: usize) -> Self {
        Self { neighbors: vec![BTreeSet::new(); vertex_count] }
    }

    /// Builds the relation from an undirected edge list. Repeated edges are
    /// merged.
    pub fn from_edges(
        vertex_count: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, WindowError> {
        let mut adj = Self::new(vertex_count);
        for (a, b) in edges {
            adj.add(a, b)?;
        }
        Ok(adj)
    }

    pub fn add(&mut self, a: usize, b: usize) -> Result<(), WindowError> {
        let n = self.neighbors.len();
        for v in [a, b] {
            if v >= n {
                return Err(WindowError::AdjacencyOutOfRange { vertex: v, vertex_count: n });
            }
        }
        if a == b {
            return Err(WindowError::SelfAdjacent { vertex: a });
        }
        self.neighbors[a].insert(b);
        self.neighbors[b].insert(a);
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, v: usize) -> &BTreeSet<usize> {
        &self.neighbors[v]
    }

    /// Unordered edges `(a, b)` with `a < b`, ascending.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(a, ns)| ns.range(a + 1..).map(move |&b| (a, b)))
            .collect()
    }
}

/// All runs of consecutive periods of length `1..=max_len`, ordered by length
/// then start.
pub fn temporal_windows(periods: usize, max_len: usize) -> Result<WindowFamily, WindowError> {
    if max_len == 0 || max_len > periods {
        return Err(WindowError::LengthOutOfRange { max_len, periods });
    }
    let windows = (1..=max_len)
        .flat_map(|len| (0..=periods - len).map(move |start| (start..start + len).collect()))
        .collect();
    WindowFamily::new(windows)
}

/// Singletons, plus every adjacent pair when `max_size == 2`.
pub fn spatial_windows(adjacency: &AdjacencyList, max_size: usize) -> Result<WindowFamily, WindowError> {
    if !(1..=2).contains(&max_size) {
        return Err(WindowError::UnsupportedSize(max_size));
    }
    let mut windows: Vec<Vec<usize>> = (0..adjacency.vertex_count()).map(|v| vec![v]).collect();
    if max_size == 2 {
        windows.extend(adjacency.edges().into_iter().map(|(a, b)| vec![a, b]));
    }
    WindowFamily::new(windows)
}

/// Balanced random assignment of `windows` indices to `groups`: shuffles the
/// indices with a seeded generator and deals them round-robin, so group sizes
/// differ by at most one.
pub fn random_assignment(windows: usize, groups: usize, seed: u64) -> Result<Vec<usize>, WindowError> {
    if groups == 0 || groups > windows {
        return Err(WindowError::GroupCount { groups, windows });
    }
    let mut order: Vec<usize> = (0..windows).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; windows];
    for (slot, &w) in order.iter().enumerate() {
        assignment[w] = slot % groups;
    }
    Ok(assignment)
}

/// [`random_assignment`] applied to a family. Each group keeps the family's
/// original window order.
pub fn partition_windows(
    family: &WindowFamily,
    groups: usize,
    seed: u64,
) -> Result<Vec<WindowFamily>, WindowError> {
    partition_by_assignment(family, &random_assignment(family.len(), groups, seed)?)
}

/// Splits the family according to `assignment[window] = group` (0-based).
/// Every group from 0 to the largest id used must receive a window.
pub fn partition_by_assignment(
    family: &WindowFamily,
    assignment: &[usize],
) -> Result<Vec<WindowFamily>, WindowError> {
    if assignment.len() != family.len() {
        return Err(WindowError::AssignmentLength { got: assignment.len(), expected: family.len() });
    }
    let groups = assignment.iter().max().map_or(0, |g| g + 1);
    let mut members = vec![Vec::new(); groups];
    for (w, &g) in assignment.iter().enumerate() {
        members[g].push(w);
    }
    members
        .iter()
        .enumerate()
        .map(|(group, idx)| {
            if idx.is_empty() {
                Err(WindowError::EmptyGroup { group })
            } else {
                family.subfamily(idx)
            }
        })
        .collect()
}
