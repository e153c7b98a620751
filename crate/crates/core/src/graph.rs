//! Window-intersection graph, chordal extension and clique tree.
//!
//! The pipeline is: build the graph whose edges join vertices sharing a
//! window, pick an elimination ordering (minimum degree or caller supplied),
//! relabel vertices so that position in the ordering becomes the label,
//! fill in edges until the ordering is a perfect elimination ordering, keep the
//! maximal elimination cliques, and sort them into a sequence with the running
//! intersection property.
//!
//! Two label spaces appear below. *Original* labels are the 0-based vertex
//! indices of the input. *Working* labels are positions in the elimination
//! ordering. [`ChordalExtension`] and [`CliqueTree`] store working labels and
//! translate on request.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::windows::WindowFamily;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("window {window} contains vertex {vertex} outside 0..{vertex_count}")]
    VertexOutOfRange { window: usize, vertex: usize, vertex_count: usize },
    #[error("elimination ordering is not a permutation of 0..{0}")]
    NotAPermutation(usize),
    #[error("ordering covers {ordering} vertices but the graph has {graph}")]
    OrderingSize { ordering: usize, graph: usize },
    #[error("no cliques to sequence")]
    NoCliques,
    #[error("clique {clique} has no later clique containing its intersection with the rest")]
    NoRunningIntersection { clique: usize },
    #[error("clique {clique} points to parent {parent}, which is not a later clique")]
    BadParent { clique: usize, parent: usize },
    #[error("window {window} is not contained in any clique")]
    WindowNotCovered { window: usize },
    #[error("vertex {0} does not appear in the clique tree")]
    UnknownVertex(usize),
}

/// Simple undirected graph on vertices `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UndirectedGraph {
    adj: Vec<BTreeSet<usize>>,
}

impl UndirectedGraph {
    pub fn new(vertex_count: usize) -> Self {
        Self { adj: vec![BTreeSet::new(); vertex_count] }
    }

    pub fn from_edges(vertex_count: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut g = Self::new(vertex_count);
        for (a, b) in edges {
            g.add_edge(a, b);
        }
        g
    }

    /// Adds `{a, b}`. Returns false for self-loops and existing edges.
    pub fn add_edge(&mut self, a: usize, b: usize) -> bool {
        if a == b || self.adj[a].contains(&b) {
            return false;
        }
        self.adj[a].insert(b);
        self.adj[b].insert(a);
        true
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        a != b && self.adj[a].contains(&b)
    }

    pub fn vertex_count(&self) -> usize {
        self.adj.len()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn neighbors(&self, v: usize) -> &BTreeSet<usize> {
        &self.adj[v]
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(BTreeSet::len).sum::<usize>() / 2
    }

    /// Edges as `(a, b)` with `a < b`, ascending.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adj
            .iter()
            .enumerate()
            .flat_map(|(a, ns)| ns.range(a + 1..).map(move |&b| (a, b)))
            .collect()
    }

    pub fn is_clique(&self, vertices: &[usize]) -> bool {
        vertices
            .iter()
            .enumerate()
            .all(|(i, &a)| vertices[i + 1..].iter().all(|&b| self.has_edge(a, b)))
    }
}

/// Joins every pair of vertices that share a window. Vertices not covered by
/// any window stay isolated.
pub fn build_window_graph(windows: &WindowFamily, vertex_count: usize) -> Result<UndirectedGraph, GraphError> {
    let mut g = UndirectedGraph::new(vertex_count);
    for (window, members) in windows.iter().enumerate() {
        if let Some(&vertex) = members.iter().find(|&&v| v >= vertex_count) {
            return Err(GraphError::VertexOutOfRange { window, vertex, vertex_count });
        }
        for (i, &a) in members.iter().enumerate() {
            for &b in &members[i + 1..] {
                g.add_edge(a, b);
            }
        }
    }
    Ok(g)
}

/// A permutation of the vertices; `order[i]` is eliminated `i`-th.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EliminationOrdering {
    order: Vec<usize>,
    position: Vec<usize>,
}

impl EliminationOrdering {
    pub fn new(order: Vec<usize>) -> Result<Self, GraphError> {
        let n = order.len();
        let mut position = vec![usize::MAX; n];
        for (i, &v) in order.iter().enumerate() {
            if v >= n || position[v] != usize::MAX {
                return Err(GraphError::NotAPermutation(n));
            }
            position[v] = i;
        }
        Ok(Self { order, position })
    }

    pub fn identity(n: usize) -> Self {
        Self { order: (0..n).collect(), position: (0..n).collect() }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Original vertex eliminated at `position`.
    pub fn vertex_at(&self, position: usize) -> usize {
        self.order[position]
    }

    /// Position (working label) of an original vertex.
    pub fn position_of(&self, vertex: usize) -> usize {
        self.position[vertex]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.order
    }
}

/// Greedy minimum-degree ordering: repeatedly remove a vertex of smallest
/// current degree together with its edges. Ties go to the smallest label. No
/// fill is introduced while ordering.
pub fn minimum_degree_ordering(graph: &UndirectedGraph) -> EliminationOrdering {
    let n = graph.vertex_count();
    let mut degree: Vec<usize> = (0..n).map(|v| graph.degree(v)).collect();
    let mut queue: BTreeSet<(usize, usize)> = (0..n).map(|v| (degree[v], v)).collect();
    let mut removed = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while let Some((_, v)) = queue.pop_first() {
        removed[v] = true;
        order.push(v);
        for &u in graph.neighbors(v) {
            if !removed[u] {
                queue.remove(&(degree[u], u));
                degree[u] -= 1;
                queue.insert((degree[u], u));
            }
        }
    }
    EliminationOrdering::new(order).expect("greedy removal visits every vertex once")
}

/// A chordal supergraph of the window graph, in working labels.
#[derive(Debug, Clone)]
pub struct ChordalExtension {
    base: UndirectedGraph,
    ordering: EliminationOrdering,
    filled: UndirectedGraph,
    fill: Vec<(usize, usize)>,
}

impl ChordalExtension {
    /// The input graph, original labels.
    pub fn base(&self) -> &UndirectedGraph {
        &self.base
    }

    pub fn ordering(&self) -> &EliminationOrdering {
        &self.ordering
    }

    /// `E ∪ E_fill` in working labels.
    pub fn graph(&self) -> &UndirectedGraph {
        &self.filled
    }

    /// Added edges in working labels, `(a, b)` with `a < b`, ascending.
    pub fn fill_edges(&self) -> &[(usize, usize)] {
        &self.fill
    }

    /// Added edges in original labels, each pair sorted, list sorted.
    pub fn fill_edges_original(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<_> = self
            .fill
            .iter()
            .map(|&(a, b)| {
                let (x, y) = (self.ordering.vertex_at(a), self.ordering.vertex_at(b));
                (x.min(y), x.max(y))
            })
            .collect();
        out.sort_unstable();
        out
    }
}

/// Relabels by `ordering` and, for each working vertex in turn, joins all of
/// its higher-labelled neighbours pairwise.
pub fn triangularize(graph: &UndirectedGraph, ordering: &EliminationOrdering) -> Result<ChordalExtension, GraphError> {
    let n = graph.vertex_count();
    if ordering.len() != n {
        return Err(GraphError::OrderingSize { ordering: ordering.len(), graph: n });
    }
    let mut filled = UndirectedGraph::from_edges(
        n,
        graph
            .edges()
            .into_iter()
            .map(|(a, b)| (ordering.position_of(a), ordering.position_of(b))),
    );
    let mut fill = Vec::new();
    for i in 0..n {
        let higher: Vec<usize> = filled.neighbors(i).range(i + 1..).copied().collect();
        for (x, &a) in higher.iter().enumerate() {
            for &b in &higher[x + 1..] {
                if filled.add_edge(a, b) {
                    fill.push((a, b));
                }
            }
        }
    }
    fill.sort_unstable();
    Ok(ChordalExtension { base: graph.clone(), ordering: ordering.clone(), filled, fill })
}

/// `V_i = {i} ∪ {j > i : (i, j) ∈ Ẽ}` for every working label `i`, each sorted.
pub fn elimination_cliques(ext: &ChordalExtension) -> Vec<Vec<usize>> {
    (0..ext.filled.vertex_count())
        .map(|i| {
            std::iter::once(i)
                .chain(ext.filled.neighbors(i).range(i + 1..).copied())
                .collect()
        })
        .collect()
}

fn is_subset(small: &[usize], big: &[usize]) -> bool {
    // both sorted
    let mut it = big.iter();
    small.iter().all(|v| it.by_ref().any(|b| b == v))
}

/// Drops each `V_i` contained in an earlier `V_l`.
pub fn maximal_cliques(cliques: &[Vec<usize>]) -> Vec<Vec<usize>> {
    cliques
        .iter()
        .enumerate()
        .filter(|(i, c)| !cliques[..*i].iter().any(|earlier| is_subset(c, earlier)))
        .map(|(_, c)| c.clone())
        .collect()
}

/// Cliques in running-intersection order with their separators, residuals
/// and subtree supports.
///
/// `parent[i]` is `k(i)`. When the chordal graph is disconnected an empty
/// clique is appended as a virtual root and each component's last clique
/// hangs from it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliqueTree {
    cliques: Vec<Vec<usize>>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    separators: Vec<Vec<usize>>,
    residuals: Vec<Vec<usize>>,
    supports: Vec<Vec<usize>>,
    virtual_root: bool,
    labels: Vec<usize>,
    positions: Vec<usize>,
}

fn intersect(a: &[usize], b: &[usize]) -> Vec<usize> {
    a.iter().copied().filter(|v| b.binary_search(v).is_ok()).collect()
}

impl CliqueTree {
    /// Assembles a tree from cliques (working labels) and a parent map. Every
    /// parent must be a later clique. Running intersection is not checked;
    /// see [`verify_rip`].
    pub fn from_parts(cliques: Vec<Vec<usize>>, parent: Vec<Option<usize>>) -> Result<Self, GraphError> {
        let m = cliques.len();
        if m == 0 {
            return Err(GraphError::NoCliques);
        }
        assert_eq!(parent.len(), m, "one parent entry per clique");
        let cliques: Vec<Vec<usize>> = cliques
            .into_iter()
            .map(|mut c| {
                c.sort_unstable();
                c.dedup();
                c
            })
            .collect();
        let mut children = vec![Vec::new(); m];
        for (i, p) in parent.iter().enumerate() {
            if let Some(k) = *p {
                if k <= i || k >= m {
                    return Err(GraphError::BadParent { clique: i, parent: k });
                }
                children[k].push(i);
            }
        }
        let separators: Vec<Vec<usize>> = (0..m)
            .map(|i| parent[i].map_or_else(Vec::new, |k| intersect(&cliques[i], &cliques[k])))
            .collect();
        let residuals: Vec<Vec<usize>> = (0..m)
            .map(|i| cliques[i].iter().copied().filter(|v| separators[i].binary_search(v).is_err()).collect())
            .collect();
        let mut supports: Vec<Vec<usize>> = residuals.clone();
        for i in 0..m {
            let mut t = supports[i].clone();
            for &j in &children[i] {
                t.extend_from_slice(&supports[j]);
            }
            t.sort_unstable();
            supports[i] = t;
        }
        let n = cliques.iter().flatten().max().map_or(0, |v| v + 1);
        let virtual_root = m > 1 && cliques[m - 1].is_empty();
        Ok(Self {
            cliques,
            parent,
            children,
            separators,
            residuals,
            supports,
            virtual_root,
            labels: (0..n).collect(),
            positions: (0..n).collect(),
        })
    }

    /// Records which original vertex each working label stands for.
    pub fn with_ordering(mut self, ordering: &EliminationOrdering) -> Self {
        self.labels = ordering.as_slice().to_vec();
        self.positions = (0..ordering.len()).map(|v| ordering.position_of(v)).collect();
        self
    }

    /// Number of stored cliques, virtual root included.
    pub fn len(&self) -> usize {
        self.cliques.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cliques.is_empty()
    }

    /// Number of maximal cliques of the chordal graph (virtual root excluded).
    pub fn clique_count(&self) -> usize {
        self.cliques.len() - usize::from(self.virtual_root)
    }

    pub fn has_virtual_root(&self) -> bool {
        self.virtual_root
    }

    pub fn clique(&self, i: usize) -> &[usize] {
        &self.cliques[i]
    }

    pub fn cliques(&self) -> &[Vec<usize>] {
        &self.cliques
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parent[i]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn separator(&self, i: usize) -> &[usize] {
        &self.separators[i]
    }

    pub fn residual(&self, i: usize) -> &[usize] {
        &self.residuals[i]
    }

    pub fn support(&self, i: usize) -> &[usize] {
        &self.supports[i]
    }

    /// Root of the tree (the last clique).
    pub fn root(&self) -> usize {
        self.cliques.len() - 1
    }

    pub fn vertex_count(&self) -> usize {
        self.labels.len()
    }

    /// Original vertex behind a working label.
    pub fn original(&self, working: usize) -> usize {
        self.labels[working]
    }

    /// Working label of an original vertex.
    pub fn working(&self, original: usize) -> Option<usize> {
        self.positions.get(original).copied()
    }

    /// A clique in original labels, sorted.
    pub fn clique_original(&self, i: usize) -> Vec<usize> {
        let mut c: Vec<usize> = self.cliques[i].iter().map(|&v| self.labels[v]).collect();
        c.sort_unstable();
        c
    }
}

/// Orders the maximal cliques by comparing largest members, then next
/// largest, and so on (a clique whose members run out first sorts first),
/// then sets `k(i)` to the first later clique holding `B_i ∩ (B_{i+1} ∪ …)`.
///
/// Disconnected input is handled per component; components are concatenated
/// by ascending largest original label and joined under a virtual root.
pub fn perfect_sequence(maximal: &[Vec<usize>], ordering: &EliminationOrdering) -> Result<CliqueTree, GraphError> {
    if maximal.is_empty() {
        return Err(GraphError::NoCliques);
    }
    let n = maximal.iter().flatten().max().map_or(0, |v| v + 1).max(ordering.len());
    let mut uf = UnionFind::new(n);
    for c in maximal {
        for w in c.windows(2) {
            uf.union(w[0], w[1]);
        }
    }
    let mut components: std::collections::BTreeMap<usize, Vec<Vec<usize>>> = Default::default();
    for c in maximal {
        let mut c = c.clone();
        c.sort_unstable();
        components.entry(uf.find(c[0])).or_default().push(c);
    }
    let original = |v: usize| if v < ordering.len() { ordering.vertex_at(v) } else { v };
    let mut comps: Vec<Vec<Vec<usize>>> = components.into_values().collect();
    for comp in &mut comps {
        comp.sort_by(|a, b| a.iter().rev().cmp(b.iter().rev()));
    }
    comps.sort_by_key(|comp| comp.iter().flatten().map(|&v| original(v)).max());

    let multi = comps.len() > 1;
    let total: usize = comps.iter().map(Vec::len).sum();
    let virtual_index = total;
    let mut cliques = Vec::with_capacity(total + usize::from(multi));
    let mut parent = Vec::with_capacity(total + usize::from(multi));
    for comp in comps {
        let base = cliques.len();
        let len = comp.len();
        for i in 0..len {
            if i + 1 == len {
                parent.push(multi.then_some(virtual_index));
                continue;
            }
            let rest: BTreeSet<usize> = comp[i + 1..].iter().flatten().copied().collect();
            let shared: Vec<usize> = comp[i].iter().copied().filter(|v| rest.contains(v)).collect();
            let k = (i + 1..len)
                .find(|&k| is_subset(&shared, &comp[k]))
                .ok_or(GraphError::NoRunningIntersection { clique: base + i })?;
            parent.push(Some(base + k));
        }
        cliques.extend(comp);
    }
    if multi {
        cliques.push(Vec::new());
        parent.push(None);
    }
    Ok(CliqueTree::from_parts(cliques, parent)?.with_ordering(ordering))
}

/// Checks `B_i ∩ (∪_{j>i} B_j) = B_i ∩ B_{k(i)}` with `k(i) > i` for every
/// non-final clique.
pub fn verify_rip(tree: &CliqueTree) -> bool {
    let m = tree.len();
    let mut later: BTreeSet<usize> = BTreeSet::new();
    for i in (0..m).rev() {
        if i + 1 < m {
            let Some(k) = tree.parent(i) else { return false };
            if k <= i {
                return false;
            }
            let shared: Vec<usize> = tree.clique(i).iter().copied().filter(|v| later.contains(v)).collect();
            if shared != tree.separator(i) {
                return false;
            }
        }
        later.extend(tree.clique(i).iter().copied());
    }
    true
}

/// `τ`: maps each window to the smallest-index clique containing it.
pub fn assign_windows(tree: &CliqueTree, windows: &WindowFamily) -> Result<Vec<usize>, GraphError> {
    windows
        .iter()
        .enumerate()
        .map(|(window, members)| {
            let mut working = members
                .iter()
                .map(|&v| tree.working(v).ok_or(GraphError::UnknownVertex(v)))
                .collect::<Result<Vec<_>, _>>()?;
            working.sort_unstable();
            (0..tree.len())
                .find(|&i| is_subset(&working, tree.clique(i)))
                .ok_or(GraphError::WindowNotCovered { window })
        })
        .collect()
}

/// Everything derived from a window family: the window graph, its chordal
/// extension, the clique tree and the window-to-clique assignment.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub extension: ChordalExtension,
    pub tree: CliqueTree,
    pub assignment: Vec<usize>,
}

/// Column values of the graph summary table.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct GraphSummary {
    pub vertices: usize,
    pub windows: usize,
    pub edges: usize,
    pub fill_edges: usize,
    pub cliques: usize,
    pub clique_sizes: Vec<usize>,
    pub deg: usize,
}

impl Decomposition {
    /// Runs the whole construction. `ordering` overrides minimum degree.
    pub fn build(
        windows: &WindowFamily,
        vertex_count: usize,
        ordering: Option<&EliminationOrdering>,
    ) -> Result<Self, GraphError> {
        let graph = build_window_graph(windows, vertex_count)?;
        let ordering = match ordering {
            Some(o) => o.clone(),
            None => minimum_degree_ordering(&graph),
        };
        let extension = triangularize(&graph, &ordering)?;
        let maximal = maximal_cliques(&elimination_cliques(&extension));
        let tree = perfect_sequence(&maximal, &ordering)?;
        let assignment = assign_windows(&tree, windows)?;
        Ok(Self { extension, tree, assignment })
    }

    pub fn summary(&self) -> GraphSummary {
        GraphSummary {
            vertices: self.extension.base().vertex_count(),
            windows: self.assignment.len(),
            edges: self.extension.base().edge_count(),
            fill_edges: self.extension.fill_edges().len(),
            cliques: self.tree.clique_count(),
            clique_sizes: (0..self.tree.clique_count()).map(|i| self.tree.clique(i).len()).collect(),
            deg: crate::engine::predicted_deg(&self.tree),
        }
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut v: usize) -> usize {
        while self.parent[v] != v {
            self.parent[v] = self.parent[self.parent[v]];
            v = self.parent[v];
        }
        v
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}
