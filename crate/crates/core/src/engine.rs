//! Recursive evaluation of `E[∏ χ_i(X_{B_i}) | N]` for multinomial cells.
//!
//! Every clique `i` of a [`CliqueTree`] owns a table `ξ_i(N_i, X_{C_i})`: the
//! conditional expectation of the product of all factors in the subtree of
//! `i`, given the separator values and the total `N_i` falling on the
//! subtree's support `T_i`. Tables are filled in clique order; since every
//! parent index exceeds its children, a parent always finds its children's
//! tables ready, and drops them as soon as it is done.
//!
//! For a table entry the split of `N_i` into the residual cells `X_{R_i}` and
//! the children's totals `N_j` is multinomial with cell probabilities
//! `p_r / P(T_i)` and `P(T_j) / P(T_i)`. The code enumerates these splits
//! directly, which is the same sum as first drawing `(M_i, N_j)` and then
//! `X_{R_i} | M_i`.
//!
//! Only the Poisson/multinomial family is implemented. Other conditionally
//! tractable families (normal, Gamma, binomial, negative binomial) would plug
//! in through alternative weight tables in [`Scalar`].

use std::sync::atomic::{AtomicU64, Ordering};

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rayon::prelude::*;
use thiserror::Error;

use crate::graph::{verify_rip, CliqueTree};
use crate::windows::WindowFamily;

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("cell model needs at least one cell")]
    EmptyModel,
    #[error("{counts} counts but {baselines} baselines")]
    LengthMismatch { counts: usize, baselines: usize },
    #[error("baseline for cell {cell} must be finite and positive, got {value}")]
    BadBaseline { cell: usize, value: f64 },
    #[error("total count overflows")]
    TotalOverflow,
    #[error("clique tree covers {tree} vertices but the model has {model} cells")]
    VertexCountMismatch { tree: usize, model: usize },
    #[error("clique sequence does not have the running intersection property")]
    RipViolation,
    #[error("clique {clique} has zero probability mass on its residual")]
    DegenerateMass { clique: usize },
    #[error("table for child {child} of clique {clique} is missing")]
    MissingChildTable { clique: usize, child: usize },
    #[error("separator of child {child} is not inside clique {clique}")]
    SeparatorNotInClique { clique: usize, child: usize },
    #[error("total {total} exceeds the {limit} supported by this arithmetic")]
    TotalTooLarge { total: u32, limit: u32 },
    #[error("clique {clique} has children; use internal_table")]
    NotALeaf { clique: usize },
    #[error("clique {clique} has no children; use leaf_table")]
    NotInternal { clique: usize },
}

/// Observed counts and baselines for the cells `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellModel {
    counts: Vec<u32>,
    baselines: Vec<f64>,
    probabilities: Vec<f64>,
    total: u32,
}

impl CellModel {
    pub fn new(counts: Vec<u32>, baselines: Vec<f64>) -> Result<Self, EngineError> {
        if counts.is_empty() {
            return Err(EngineError::EmptyModel);
        }
        if counts.len() != baselines.len() {
            return Err(EngineError::LengthMismatch { counts: counts.len(), baselines: baselines.len() });
        }
        if let Some((cell, &value)) = baselines.iter().enumerate().find(|(_, b)| !(b.is_finite() && **b > 0.0)) {
            return Err(EngineError::BadBaseline { cell, value });
        }
        let total = counts
            .iter()
            .try_fold(0u32, |acc, &c| acc.checked_add(c))
            .ok_or(EngineError::TotalOverflow)?;
        let mass: f64 = baselines.iter().sum();
        let probabilities = baselines.iter().map(|b| b / mass).collect();
        Ok(Self { counts, baselines, probabilities, total })
    }

    /// Equal baselines.
    pub fn uniform(counts: Vec<u32>) -> Result<Self, EngineError> {
        let n = counts.len();
        Self::new(counts, vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn baselines(&self) -> &[f64] {
        &self.baselines
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    /// Sum of baselines over `cells`.
    pub fn mass(&self, cells: impl IntoIterator<Item = usize>) -> f64 {
        cells.into_iter().map(|c| self.baselines[c]).sum()
    }
}

/// Arithmetic used for table entries.
pub trait Scalar: Clone + Send + Sync + std::fmt::Debug + 'static {
    fn zero() -> Self;
    fn one() -> Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(&self) -> f64;
    fn is_zero(&self) -> bool;
    fn add_assign(&mut self, other: &Self);
    fn mul(&self, other: &Self) -> Self;

    /// Per-cell weights `w[x]`, `x = 0..=total`, for a cell with probability
    /// `mass / reference`. Together with [`Scalar::prefactors`],
    /// `pref[n] · ∏ w_c[x_c]` is the multinomial probability of `x` when
    /// `Σ x_c = n`. Implementations may rescale both tables by reciprocal
    /// powers of a common constant.
    fn cell_weights(mass: f64, reference: f64, total: usize) -> Vec<Self>;
    fn prefactors(total: usize) -> Vec<Self>;

    /// Largest total the weight tables can represent.
    fn max_total() -> Option<u32> {
        None
    }

    /// `acc[k] += scale · src[k]`.
    fn axpy(acc: &mut [Self], scale: &Self, src: &[Self]) {
        for (a, s) in acc.iter_mut().zip(src) {
            a.add_assign(&scale.mul(s));
        }
    }
}

/// Largest total supported in floating-point mode.
pub const MAX_FLOAT_TOTAL: u32 = 680;

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn is_zero(&self) -> bool {
        *self == 0.0
    }
    fn add_assign(&mut self, other: &Self) {
        *self += other;
    }
    fn mul(&self, other: &Self) -> Self {
        self * other
    }

    // (q·s)^x / x! with s = total keeps every factor within a few orders of
    // e^total of one; the matching prefactor is n! / s^n.
    fn cell_weights(mass: f64, reference: f64, total: usize) -> Vec<Self> {
        let rate = mass / reference * total.max(1) as f64;
        let mut w = Vec::with_capacity(total + 1);
        w.push(1.0);
        for x in 1..=total {
            w.push(w[x - 1] * rate / x as f64);
        }
        w
    }

    fn prefactors(total: usize) -> Vec<Self> {
        let scale = total.max(1) as f64;
        let mut p = Vec::with_capacity(total + 1);
        p.push(1.0);
        for n in 1..=total {
            p.push(p[n - 1] * n as f64 / scale);
        }
        p
    }

    // Weights stay within e^{±N} of one.
    fn max_total() -> Option<u32> {
        Some(MAX_FLOAT_TOTAL)
    }

    fn axpy(acc: &mut [Self], scale: &Self, src: &[Self]) {
        let s = *scale;
        for (a, x) in acc.iter_mut().zip(src) {
            *a += s * x;
        }
    }
}

fn rational(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite value")
}

impl Scalar for BigRational {
    fn zero() -> Self {
        Zero::zero()
    }
    fn one() -> Self {
        One::one()
    }
    fn from_f64(v: f64) -> Self {
        rational(v)
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
    fn is_zero(&self) -> bool {
        Zero::is_zero(self)
    }
    fn add_assign(&mut self, other: &Self) {
        *self += other;
    }
    fn mul(&self, other: &Self) -> Self {
        self * other
    }

    fn cell_weights(mass: f64, reference: f64, total: usize) -> Vec<Self> {
        let q = rational(mass) / rational(reference);
        let mut w: Vec<Self> = Vec::with_capacity(total + 1);
        w.push(One::one());
        for x in 1..=total {
            let next = &w[x - 1] * &q / BigRational::from_integer(x.into());
            w.push(next);
        }
        w
    }

    fn prefactors(total: usize) -> Vec<Self> {
        let mut p: Vec<Self> = Vec::with_capacity(total + 1);
        p.push(One::one());
        for n in 1..=total {
            let next = &p[n - 1] * BigRational::from_integer(n.into());
            p.push(next);
        }
        p
    }
}

/// A bound clique factor: receives `X_{B_i}` in the vertex order given to
/// [`Potential::bind`].
pub type BoundFactor<'a> = Box<dyn Fn(&[u32]) -> f64 + Send + Sync + 'a>;

/// Source of the per-clique factors `χ_i`.
pub trait Potential: Sync {
    /// `vertices` are original vertex indices of clique `clique`, in the order
    /// the returned closure will receive their values.
    fn bind<'a>(&'a self, clique: usize, vertices: &[usize]) -> BoundFactor<'a>;
}

/// `χ ≡ 1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct UnitPotential;

impl Potential for UnitPotential {
    fn bind<'a>(&'a self, _: usize, _: &[usize]) -> BoundFactor<'a> {
        Box::new(|_| 1.0)
    }
}

/// Per-window factors `f(j, X_{Z_j})` grouped into cliques by the window
/// assignment `τ`; each clique's factor is the product over its windows.
pub struct WindowPotential<F> {
    windows: Vec<Vec<usize>>,
    assignment: Vec<usize>,
    factor: F,
}

impl<F> WindowPotential<F>
where
    F: Fn(usize, &[u32]) -> f64 + Sync,
{
    pub fn new(windows: &WindowFamily, assignment: &[usize], factor: F) -> Self {
        assert_eq!(windows.len(), assignment.len(), "one clique per window");
        Self { windows: windows.as_slice().to_vec(), assignment: assignment.to_vec(), factor }
    }
}

impl<F> Potential for WindowPotential<F>
where
    F: Fn(usize, &[u32]) -> f64 + Sync,
{
    fn bind<'a>(&'a self, clique: usize, vertices: &[usize]) -> BoundFactor<'a> {
        let members: Vec<(usize, Vec<usize>)> = self
            .assignment
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == clique)
            .map(|(j, _)| {
                let pos = self.windows[j]
                    .iter()
                    .map(|v| vertices.iter().position(|u| u == v).expect("window lies inside its clique"))
                    .collect();
                (j, pos)
            })
            .collect();
        let widest = members.iter().map(|(_, p)| p.len()).max().unwrap_or(0);
        let factor = &self.factor;
        Box::new(move |values: &[u32]| {
            let mut stack = [0u32; 16];
            let mut heap = Vec::new();
            let buf: &mut [u32] = if widest <= stack.len() {
                &mut stack[..]
            } else {
                heap.resize(widest, 0);
                &mut heap[..]
            };
            let mut product = 1.0;
            for (j, pos) in &members {
                for (slot, &p) in buf.iter_mut().zip(pos) {
                    *slot = values[p];
                }
                product *= factor(*j, &buf[..pos.len()]);
                if product == 0.0 {
                    break;
                }
            }
            product
        })
    }
}

/// Dense index over `{(y_1, …, y_k, n) : Σ y + n ≤ total}` in lexicographic
/// order, `n` varying fastest. All `n` for a fixed `y` form one contiguous
/// block starting at [`SimplexIndex::offset`].
#[derive(Debug, Clone)]
pub struct SimplexIndex {
    dims: usize,
    total: usize,
    // tail[d][r] = C(r + d + 1, d + 1): vectors of d coordinates summing to ≤ r.
    tail: Vec<Vec<usize>>,
}

impl SimplexIndex {
    pub fn new(dims: usize, total: usize) -> Self {
        let tail = (0..=dims + 1)
            .map(|d| (0..=total).map(|r| binomial_usize(r + d + 1, d + 1)).collect())
            .collect();
        Self { dims, total, tail }
    }

    /// Number of entries, `C(total + dims + 1, dims + 1)`.
    pub fn len(&self) -> usize {
        self.tail[self.dims][self.total]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Start of the block for `y` (length `dims`, `Σ y ≤ total`).
    pub fn offset(&self, y: &[u32]) -> usize {
        debug_assert_eq!(y.len(), self.dims);
        let mut rem = self.total;
        let mut off = 0;
        for (t, &v) in y.iter().enumerate() {
            let v = v as usize;
            let free = self.dims - t;
            off += self.tail[free][rem] - if v <= rem { self.tail[free][rem - v] } else { 0 };
            rem -= v;
        }
        off
    }

    /// Index of `(y, n)`.
    pub fn index(&self, y: &[u32], n: usize) -> usize {
        self.offset(y) + n
    }
}

fn binomial_usize(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) as u128 / (i + 1) as u128;
    }
    usize::try_from(r).unwrap_or(usize::MAX)
}

/// Exact summand counts.
pub type Count = BigUint;

/// Exact arithmetic for [`evaluate_expectation`].
pub type Exact = BigRational;

/// Largest count not above `v` (zero for negative or NaN input).
pub fn count_from_f64(v: f64) -> Count {
    num_traits::FromPrimitive::from_f64(v.floor().max(0.0)).unwrap_or_default()
}

/// Exact binomial coefficient.
pub fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut r = BigUint::one();
    for i in 0..k {
        r = r * (n - i) / (i + 1);
    }
    r
}

/// Advances `x` to the next vector (lexicographic, last coordinate fastest)
/// with `Σ x ≤ total`. Returns false after the last one.
fn advance_at_most(x: &mut [u32], sum: &mut u32, total: u32) -> bool {
    let d = x.len();
    if d == 0 {
        return false;
    }
    if *sum < total {
        x[d - 1] += 1;
        *sum += 1;
        return true;
    }
    match x.iter().rposition(|&v| v > 0) {
        Some(p) if p > 0 => {
            *sum = *sum - x[p] + 1;
            x[p] = 0;
            x[p - 1] += 1;
            true
        }
        _ => false,
    }
}

/// Whether [`enumerate_compositions`] yields vectors summing exactly to the
/// total or to at most the total.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompositionMode {
    Exact,
    AtMost,
}

/// Iterator over nonnegative integer vectors of a fixed length.
#[derive(Debug, Clone)]
pub struct Compositions {
    free: Vec<u32>,
    sum: u32,
    total: u32,
    mode: CompositionMode,
    done: bool,
}

impl Iterator for Compositions {
    type Item = Vec<u32>;

    fn next(&mut self) -> Option<Vec<u32>> {
        if self.done {
            return None;
        }
        let mut out = self.free.clone();
        if self.mode == CompositionMode::Exact {
            out.push(self.total - self.sum);
        }
        self.done = !advance_at_most(&mut self.free, &mut self.sum, self.total);
        Some(out)
    }
}

/// All vectors of length `dimension` with sum equal to (or at most) `total`,
/// each once, in lexicographic order. There are `C(total + d − 1, d − 1)`
/// exact and `C(total + d, d)` bounded vectors.
pub fn enumerate_compositions(dimension: usize, total: u32, mode: CompositionMode) -> Compositions {
    assert!(dimension >= 1, "dimension must be positive");
    let free_len = match mode {
        CompositionMode::Exact => dimension - 1,
        CompositionMode::AtMost => dimension,
    };
    Compositions { free: vec![0; free_len], sum: 0, total, mode, done: false }
}

/// `C(N + n − 1, n − 1)`: terms in the direct multinomial sum.
pub fn naive_summation_count(vertex_count: usize, total: u32) -> BigUint {
    assert!(vertex_count >= 1);
    binomial(total as u64 + vertex_count as u64 - 1, vertex_count as u64 - 1)
}

/// Predicted number of summands of [`evaluate_expectation`] for `tree`.
pub fn predicted_summation_count(tree: &CliqueTree, total: u32) -> BigUint {
    let n = total as u64;
    let root = tree.root();
    (0..tree.len())
        .map(|i| {
            let width = (tree.clique(i).len() + tree.children(i).len()) as u64;
            if i == root {
                // width ≥ 1 because the root holds a vertex or children.
                binomial(n + width - 1, width - 1)
            } else {
                binomial(n + width, width)
            }
        })
        .sum()
}

/// Cost exponent: the summand count is `O(N^deg)`.
pub fn predicted_deg(tree: &CliqueTree) -> usize {
    let root = tree.root();
    (0..tree.len())
        .map(|i| {
            let width = tree.clique(i).len() + tree.children(i).len();
            if i == root {
                width.saturating_sub(1)
            } else {
                width
            }
        })
        .max()
        .unwrap_or(0)
}

/// Table of `ln k!` for `k = 0..=max`.
#[derive(Debug, Clone)]
pub struct LogFactorials(Vec<f64>);

impl LogFactorials {
    pub fn new(max: usize) -> Self {
        let mut t = Vec::with_capacity(max + 1);
        t.push(0.0);
        for k in 1..=max {
            t.push(t[k - 1] + (k as f64).ln());
        }
        Self(t)
    }

    pub fn get(&self, k: usize) -> f64 {
        self.0[k]
    }

    pub fn max(&self) -> usize {
        self.0.len() - 1
    }

    /// `ln P(counts)` under `Mult(Σ counts; probabilities)`. A zero
    /// probability on a positive count gives `-∞`.
    pub fn log_multinomial_pmf(&self, counts: &[u32], probabilities: &[f64]) -> f64 {
        debug_assert_eq!(counts.len(), probabilities.len());
        let n: usize = counts.iter().map(|&c| c as usize).sum();
        let mut acc = self.get(n);
        for (&c, &p) in counts.iter().zip(probabilities) {
            if c == 0 {
                continue;
            }
            if p <= 0.0 {
                return f64::NEG_INFINITY;
            }
            acc += c as f64 * p.ln() - self.get(c as usize);
        }
        acc
    }
}

/// `ln P(counts)` under `Mult(Σ counts; probabilities)`.
pub fn log_multinomial_pmf(counts: &[u32], probabilities: &[f64]) -> f64 {
    let n: usize = counts.iter().map(|&c| c as usize).sum();
    LogFactorials::new(n).log_multinomial_pmf(counts, probabilities)
}

/// Summand accounting for one evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    pub predicted: BigUint,
    pub actual: u64,
    pub deg: usize,
    pub naive: BigUint,
    /// Largest number of table entries held at once.
    pub peak_table_entries: usize,
}

/// `ξ_i` for one clique. Non-root tables are laid out by [`SimplexIndex`]
/// over the separator values with `N_i` fastest; the root table holds the
/// single value `ξ_m(N, ∅)`.
#[derive(Debug, Clone)]
pub struct XiTable<S> {
    clique: usize,
    index: Option<SimplexIndex>,
    values: Vec<S>,
}

impl<S: Scalar> XiTable<S> {
    pub fn clique(&self) -> usize {
        self.clique
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    /// `ξ_i(n, separator)`; separator values in sorted working-label order.
    pub fn get(&self, n: usize, separator: &[u32]) -> &S {
        match &self.index {
            Some(ix) => &self.values[ix.index(separator, n)],
            None => &self.values[0],
        }
    }

    /// The root value, for the final table.
    pub fn root_value(&self) -> Option<&S> {
        self.index.is_none().then(|| &self.values[0])
    }
}

struct ChildView<'a, S> {
    index: &'a SimplexIndex,
    // ξ_j premultiplied by the child's split weight for each N_j.
    weighted: Vec<S>,
    positions: Vec<usize>,
}

struct Kernel<'a, S> {
    c_len: usize,
    residual_weights: &'a [Vec<S>],
    children: &'a [ChildView<'a, S>],
    chi: &'a (dyn Fn(&[u32]) -> f64 + Send + Sync),
    root: bool,
    values: Vec<u32>,
    child_key: Vec<u32>,
    offsets: Vec<usize>,
    acc: Vec<S>,
    count: u64,
}

impl<S: Scalar> Kernel<'_, S> {
    /// Fills `acc[k]` with the unnormalised sum over all splits placing `k`
    /// units on the subtree, for the separator values already in `values`.
    fn run(&mut self, cap: usize) {
        self.acc.clear();
        self.acc.resize(cap + 1, S::zero());
        self.residual(0, 0, cap, S::one());
    }

    fn residual(&mut self, r: usize, used: usize, cap: usize, weight: S) {
        let r_len = self.residual_weights.len();
        if r == r_len {
            self.leaf(used, cap, weight);
            return;
        }
        let slot = self.c_len + r;
        if self.root && self.children.is_empty() && r + 1 == r_len {
            let x = cap - used;
            self.values[slot] = x as u32;
            let w = weight.mul(&self.residual_weights[r][x]);
            self.leaf(cap, cap, w);
            return;
        }
        for x in 0..=cap - used {
            self.values[slot] = x as u32;
            let w = weight.mul(&self.residual_weights[r][x]);
            self.residual(r + 1, used + x, cap, w);
        }
    }

    fn leaf(&mut self, used: usize, cap: usize, weight: S) {
        let rem = cap - used;
        let c = self.children.len();
        let terms = match (c, self.root) {
            (0, _) => 1,
            (_, true) => binomial_usize(rem + c - 1, c - 1) as u64,
            (_, false) => binomial_usize(rem + c, c) as u64,
        };
        self.count += terms;
        let chi = (self.chi)(&self.values);
        if chi == 0.0 {
            return;
        }
        let w = weight.mul(&S::from_f64(chi));
        if c == 0 {
            self.acc[used].add_assign(&w);
            return;
        }
        for j in 0..c {
            let view = &self.children[j];
            self.child_key.clear();
            self.child_key.extend(view.positions.iter().map(|&p| self.values[p]));
            self.offsets[j] = view.index.offset(&self.child_key);
        }
        self.split(0, used, cap, w);
    }

    fn split(&mut self, j: usize, used: usize, cap: usize, weight: S) {
        let children = self.children;
        let view = &children[j];
        let base = self.offsets[j];
        let rem = cap - used;
        if j + 1 == children.len() {
            if self.root {
                let term = weight.mul(&view.weighted[base + rem]);
                self.acc[cap].add_assign(&term);
            } else {
                S::axpy(&mut self.acc[used..=cap], &weight, &view.weighted[base..=base + rem]);
            }
            return;
        }
        for n in 0..=rem {
            let t = &view.weighted[base + n];
            if t.is_zero() {
                continue;
            }
            self.split(j + 1, used + n, cap, weight.mul(t));
        }
    }
}

fn check_model(tree: &CliqueTree, model: &CellModel) -> Result<(), EngineError> {
    if tree.vertex_count() != model.len() {
        return Err(EngineError::VertexCountMismatch { tree: tree.vertex_count(), model: model.len() });
    }
    Ok(())
}

/// Computes `ξ_i` from the children's tables (given in the order of
/// `tree.children(i)`). The root table keeps only the `N_i = N` entry.
/// Adds one to `counter` per summand.
pub fn compute_table<S: Scalar>(
    tree: &CliqueTree,
    clique: usize,
    model: &CellModel,
    potential: &dyn Potential,
    child_tables: &[&XiTable<S>],
    counter: &mut u64,
) -> Result<XiTable<S>, EngineError> {
    check_model(tree, model)?;
    if let Some(limit) = S::max_total().filter(|&l| model.total() > l) {
        return Err(EngineError::TotalTooLarge { total: model.total(), limit });
    }
    let total = model.total() as usize;
    let root = clique == tree.root();
    let kids = tree.children(clique);
    for (pos, &child) in kids.iter().enumerate() {
        match child_tables.get(pos) {
            Some(t) if t.clique() == child => {}
            _ => return Err(EngineError::MissingChildTable { clique, child }),
        }
    }

    let separator = tree.separator(clique);
    let residual = tree.residual(clique);
    let local: Vec<usize> = separator.iter().chain(residual).copied().collect();
    let original: Vec<usize> = local.iter().map(|&v| tree.original(v)).collect();
    let mass_of = |cells: &[usize]| model.mass(cells.iter().map(|&v| tree.original(v)));

    let reference = mass_of(tree.support(clique));
    if !residual.is_empty() && mass_of(residual) <= 0.0 {
        return Err(EngineError::DegenerateMass { clique });
    }
    let residual_weights: Vec<Vec<S>> = residual
        .iter()
        .map(|&v| S::cell_weights(model.baselines()[tree.original(v)], reference, total))
        .collect();

    let mut views = Vec::with_capacity(kids.len());
    for (&child, table) in kids.iter().zip(child_tables) {
        let positions = tree
            .separator(child)
            .iter()
            .map(|v| local.iter().position(|u| u == v))
            .collect::<Option<Vec<usize>>>()
            .ok_or(EngineError::SeparatorNotInClique { clique, child })?;
        let index = table.index.as_ref().ok_or(EngineError::MissingChildTable { clique, child })?;
        let split = S::cell_weights(mass_of(tree.support(child)), reference, total);
        let mut weighted = table.values.clone();
        let mut key = vec![0u32; index.dims()];
        let mut sum = 0u32;
        let mut off = 0;
        loop {
            let block = total - sum as usize + 1;
            for (n, w) in weighted[off..off + block].iter_mut().enumerate() {
                *w = w.mul(&split[n]);
            }
            off += block;
            if !advance_at_most(&mut key, &mut sum, total as u32) {
                break;
            }
        }
        views.push(ChildView { index, weighted, positions });
    }

    let chi = potential.bind(clique, &original);
    let prefactors = S::prefactors(total);
    let make_kernel = || Kernel {
        c_len: separator.len(),
        residual_weights: &residual_weights,
        children: &views,
        chi: &*chi,
        root,
        values: vec![0; local.len()],
        child_key: Vec::new(),
        offsets: vec![0; views.len()],
        acc: Vec::new(),
        count: 0,
    };

    if root {
        let mut kernel = make_kernel();
        kernel.run(total);
        *counter += kernel.count;
        let value = prefactors[total].mul(&kernel.acc[total]);
        return Ok(XiTable { clique, index: None, values: vec![value] });
    }

    let index = SimplexIndex::new(separator.len(), total);
    let mut values = vec![S::zero(); index.len()];
    // Carve the output into one block per separator assignment.
    let mut blocks: Vec<(Vec<u32>, &mut [S])> = Vec::new();
    {
        let mut rest: &mut [S] = &mut values;
        let mut key = vec![0u32; separator.len()];
        let mut sum = 0u32;
        loop {
            let len = total - sum as usize + 1;
            let (head, tail) = rest.split_at_mut(len);
            blocks.push((key.clone(), head));
            rest = tail;
            if !advance_at_most(&mut key, &mut sum, total as u32) {
                break;
            }
        }
    }
    let counted = AtomicU64::new(0);
    blocks.into_par_iter().for_each_init(make_kernel, |kernel, (key, out)| {
        kernel.values[..key.len()].copy_from_slice(&key);
        let cap = out.len() - 1;
        let before = kernel.count;
        kernel.run(cap);
        for (n, slot) in out.iter_mut().enumerate() {
            *slot = prefactors[n].mul(&kernel.acc[n]);
        }
        counted.fetch_add(kernel.count - before, Ordering::Relaxed);
    });
    *counter += counted.into_inner();
    Ok(XiTable { clique, index: Some(index), values })
}

/// [`compute_table`] for a clique without children.
pub fn leaf_table<S: Scalar>(
    tree: &CliqueTree,
    clique: usize,
    model: &CellModel,
    potential: &dyn Potential,
    counter: &mut u64,
) -> Result<XiTable<S>, EngineError> {
    if !tree.children(clique).is_empty() {
        return Err(EngineError::NotALeaf { clique });
    }
    compute_table(tree, clique, model, potential, &[], counter)
}

/// [`compute_table`] for a clique with children.
pub fn internal_table<S: Scalar>(
    tree: &CliqueTree,
    clique: usize,
    model: &CellModel,
    potential: &dyn Potential,
    child_tables: &[&XiTable<S>],
    counter: &mut u64,
) -> Result<XiTable<S>, EngineError> {
    if tree.children(clique).is_empty() {
        return Err(EngineError::NotInternal { clique });
    }
    compute_table(tree, clique, model, potential, child_tables, counter)
}

/// Result of a full evaluation.
#[derive(Debug, Clone)]
pub struct Evaluation<S> {
    pub value: S,
    pub cost: CostReport,
}

/// `ξ_m(N, ∅) = E[∏_i χ_i(X_{B_i})]` under `X ~ Mult(N; p)`.
pub fn evaluate_expectation<S: Scalar>(
    tree: &CliqueTree,
    model: &CellModel,
    potential: &dyn Potential,
) -> Result<Evaluation<S>, EngineError> {
    check_model(tree, model)?;
    if !verify_rip(tree) {
        return Err(EngineError::RipViolation);
    }
    let m = tree.len();
    let mut tables: Vec<Option<XiTable<S>>> = (0..m).map(|_| None).collect();
    let mut counter = 0u64;
    let mut live = 0usize;
    let mut peak = 0usize;
    for i in 0..m {
        let mut owned = Vec::with_capacity(tree.children(i).len());
        for &child in tree.children(i) {
            owned.push(tables[child].take().ok_or(EngineError::MissingChildTable { clique: i, child })?);
        }
        let refs: Vec<&XiTable<S>> = owned.iter().collect();
        let table = compute_table(tree, i, model, potential, &refs, &mut counter)?;
        live += table.len();
        peak = peak.max(live);
        live -= owned.iter().map(XiTable::len).sum::<usize>();
        drop(owned);
        tables[i] = Some(table);
    }
    let root = tables[m - 1].take().expect("root table computed last");
    let value = root.root_value().expect("root table holds one value").clone();
    let cost = CostReport {
        predicted: predicted_summation_count(tree, model.total()),
        actual: counter,
        deg: predicted_deg(tree),
        naive: naive_summation_count(model.len(), model.total()),
        peak_table_entries: peak,
    };
    Ok(Evaluation { value, cost })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::graph::{perfect_sequence, Decomposition, EliminationOrdering};

    #[test]
    fn composition_counts_and_order() {
        let v: Vec<_> = enumerate_compositions(2, 2, CompositionMode::Exact).collect();
        assert_eq!(v, vec![vec![0, 2], vec![1, 1], vec![2, 0]]);
        assert_eq!(enumerate_compositions(3, 1, CompositionMode::AtMost).count(), 4);
        assert_eq!(enumerate_compositions(1, 5, CompositionMode::Exact).collect::<Vec<_>>(), vec![vec![5]]);
        assert_eq!(enumerate_compositions(2, 0, CompositionMode::AtMost).count(), 1);
        for d in 1..5 {
            for n in 0..7u32 {
                let exact: Vec<_> = enumerate_compositions(d, n, CompositionMode::Exact).collect();
                assert_eq!(BigUint::from(exact.len()), binomial(n as u64 + d as u64 - 1, d as u64 - 1));
                assert!(exact.iter().all(|x| x.iter().sum::<u32>() == n));
                assert!(exact.windows(2).all(|w| w[0] < w[1]));
                let bounded = enumerate_compositions(d, n, CompositionMode::AtMost).count();
                assert_eq!(BigUint::from(bounded), binomial(n as u64 + d as u64, d as u64));
            }
        }
    }

    #[test]
    fn large_composition_count() {
        // counted without materialising each vector
        let mut x = vec![0u32; 8];
        let mut sum = 0;
        let mut count = 1u64;
        while advance_at_most(&mut x, &mut sum, 28) {
            count += 1;
        }
        assert_eq!(count, 30_260_340);
    }

    #[test]
    fn naive_counts() {
        assert_eq!(naive_summation_count(9, 28), BigUint::from(30_260_340u32));
        assert_eq!(naive_summation_count(2, 1), BigUint::from(2u32));
        assert_eq!(naive_summation_count(3, 2), BigUint::from(6u32));
    }

    #[test]
    fn simplex_index_is_dense_lexicographic() {
        for dims in 0..4 {
            for total in 0..6u32 {
                let ix = SimplexIndex::new(dims, total as usize);
                let mut expected = 0;
                for v in enumerate_compositions(dims + 1, total, CompositionMode::AtMost) {
                    let (y, n) = v.split_at(dims);
                    assert_eq!(ix.index(y, n[0] as usize), expected);
                    expected += 1;
                }
                assert_eq!(ix.len(), expected);
            }
        }
    }

    #[test]
    fn log_pmf_values() {
        approx::assert_relative_eq!(log_multinomial_pmf(&[2, 0], &[0.5, 0.5]), 0.25f64.ln(), epsilon = 1e-15);
        approx::assert_relative_eq!(log_multinomial_pmf(&[1, 1], &[0.5, 0.5]), 0.5f64.ln(), epsilon = 1e-15);
        assert_eq!(log_multinomial_pmf(&[1, 1], &[1.0, 0.0]), f64::NEG_INFINITY);
        assert_eq!(log_multinomial_pmf(&[3, 0], &[1.0, 0.0]), 0.0);
    }

    #[test]
    fn log_pmf_matches_exact_rational() {
        // 62!/(14! 48!) (1/12)^14 (11/12)^48, computed exactly.
        let coeff = binomial(62, 14);
        let num = coeff * BigUint::from(11u32).pow(48);
        let den = BigUint::from(12u32).pow(62);
        let exact = BigRational::new(num.into(), den.into());
        let expected = ToPrimitive::to_f64(&exact).unwrap().ln();
        let got = log_multinomial_pmf(&[14, 48], &[1.0 / 12.0, 11.0 / 12.0]);
        approx::assert_relative_eq!(got, expected, max_relative = 1e-12);
    }

    #[test]
    fn predicted_count_fixture() {
        let d = Decomposition::build(&fixtures::z20_windows(), 9, Some(&fixtures::reference_ordering())).unwrap();
        assert_eq!(predicted_summation_count(&d.tree, 28), BigUint::from(314_621u32));
        assert_eq!(predicted_deg(&d.tree), 5);
    }

    #[test]
    fn single_clique_count_is_naive() {
        let t = perfect_sequence(&[vec![0, 1, 2, 3]], &EliminationOrdering::identity(4)).unwrap();
        assert_eq!(predicted_summation_count(&t, 11), naive_summation_count(4, 11));
    }

    fn single(n: usize) -> CliqueTree {
        perfect_sequence(&[(0..n).collect()], &EliminationOrdering::identity(n)).unwrap()
    }

    #[test]
    fn leaf_with_unit_factor() {
        // Two cliques {0,1} -> {1,2}; the leaf table is identically one.
        let t = perfect_sequence(&[vec![0, 1], vec![1, 2]], &EliminationOrdering::identity(3)).unwrap();
        let model = CellModel::uniform(vec![1, 2, 1]).unwrap();
        let mut count = 0;
        let leaf: XiTable<f64> = leaf_table(&t, 0, &model, &UnitPotential, &mut count).unwrap();
        assert_eq!(leaf.len(), binomial_usize(4 + 1 + 1, 2));
        for v in leaf.values() {
            approx::assert_relative_eq!(*v, 1.0, epsilon = 1e-14);
        }
        assert!(matches!(
            internal_table::<f64>(&t, 0, &model, &UnitPotential, &[], &mut count),
            Err(EngineError::NotInternal { clique: 0 })
        ));
        assert!(matches!(
            internal_table::<f64>(&t, 1, &model, &UnitPotential, &[], &mut count),
            Err(EngineError::MissingChildTable { clique: 1, child: 0 })
        ));
        assert!(matches!(
            leaf_table::<f64>(&t, 1, &model, &UnitPotential, &mut count),
            Err(EngineError::NotALeaf { clique: 1 })
        ));
    }

    struct Closure<F>(F);
    impl<F: Fn(&[u32]) -> f64 + Sync> Potential for Closure<F> {
        fn bind<'a>(&'a self, _: usize, _: &[usize]) -> BoundFactor<'a> {
            Box::new(|v| (self.0)(v))
        }
    }

    #[test]
    fn leaf_degenerate_single_residual() {
        // Tree {0,1} -> {1,2}: leaf residual is {0}; χ = 1{X_0 = 0}.
        let t = perfect_sequence(&[vec![0, 1], vec![1, 2]], &EliminationOrdering::identity(3)).unwrap();
        let model = CellModel::uniform(vec![1, 1, 1]).unwrap();
        let chi = Closure(|v: &[u32]| if v[1] == 0 { 1.0 } else { 0.0 });
        let mut count = 0;
        let leaf: XiTable<f64> = leaf_table(&t, 0, &model, &chi, &mut count).unwrap();
        for sep in 0..=3u32 {
            for n in 0..=(3 - sep as usize) {
                let want = if n == 0 { 1.0 } else { 0.0 };
                assert_eq!(*leaf.get(n, &[sep]), want);
            }
        }
    }

    #[test]
    fn leaf_two_residual_cells() {
        // Tree {0,1,2} -> {2,3}; leaf residual {0,1}, uniform p, N_i = 2,
        // χ = 1{X_0 ≤ 1}: P{(0,2)} + P{(1,1)} = 0.75.
        let t = perfect_sequence(&[vec![0, 1, 2], vec![2, 3]], &EliminationOrdering::identity(4)).unwrap();
        assert_eq!(t.residual(0), &[0, 1]);
        let model = CellModel::uniform(vec![1, 1, 0, 0]).unwrap();
        let chi = Closure(|v: &[u32]| if v[1] <= 1 { 1.0 } else { 0.0 });
        let mut count = 0;
        let leaf: XiTable<f64> = leaf_table(&t, 0, &model, &chi, &mut count).unwrap();
        approx::assert_relative_eq!(*leaf.get(2, &[0]), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn unit_potential_normalises() {
        let d = Decomposition::build(&fixtures::z20_windows(), 9, Some(&fixtures::reference_ordering())).unwrap();
        let model = CellModel::uniform(fixtures::Z20_COUNTS.to_vec()).unwrap();
        let e: Evaluation<f64> = evaluate_expectation(&d.tree, &model, &UnitPotential).unwrap();
        approx::assert_relative_eq!(e.value, 1.0, epsilon = 1e-12);
        assert_eq!(BigUint::from(e.cost.actual), e.cost.predicted);
        assert_eq!(e.cost.actual, 314_621);
    }

    #[test]
    fn single_clique_matches_direct_sum() {
        let t = single(3);
        let model = CellModel::new(vec![2, 1, 2], vec![1.0, 2.0, 0.5]).unwrap();
        let chi = Closure(|v: &[u32]| if v[0] + v[2] < 4 { 1.0 } else { 0.0 });
        let e: Evaluation<f64> = evaluate_expectation(&t, &model, &chi).unwrap();
        let lf = LogFactorials::new(5);
        let direct: f64 = enumerate_compositions(3, 5, CompositionMode::Exact)
            .filter(|x| x[0] + x[2] < 4)
            .map(|x| lf.log_multinomial_pmf(&x, model.probabilities()).exp())
            .sum();
        approx::assert_relative_eq!(e.value, direct, epsilon = 1e-14);
        assert_eq!(e.cost.actual, 21);
    }

    #[test]
    fn rational_mode_is_exact() {
        let d = Decomposition::build(&fixtures::z20_windows(), 9, Some(&fixtures::reference_ordering())).unwrap();
        let model = CellModel::uniform(vec![1, 0, 1, 0, 0, 1, 0, 0, 1]).unwrap();
        let e: Evaluation<BigRational> = evaluate_expectation(&d.tree, &model, &UnitPotential).unwrap();
        assert_eq!(e.value, <BigRational as One>::one());
    }

    #[test]
    fn model_validation() {
        assert_eq!(CellModel::uniform(vec![]), Err(EngineError::EmptyModel));
        assert!(matches!(CellModel::new(vec![1], vec![0.0]), Err(EngineError::BadBaseline { .. })));
        assert!(matches!(CellModel::new(vec![1], vec![1.0, 1.0]), Err(EngineError::LengthMismatch { .. })));
        let m = CellModel::new(vec![1, 3], vec![1.0, 3.0]).unwrap();
        assert_eq!(m.total(), 4);
        approx::assert_relative_eq!(m.probabilities().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        let t = single(3);
        assert!(matches!(
            evaluate_expectation::<f64>(&t, &m, &UnitPotential),
            Err(EngineError::VertexCountMismatch { .. })
        ));
    }

    #[test]
    fn rejects_non_rip_sequence() {
        let t = CliqueTree::from_parts(vec![vec![0, 1], vec![2, 3], vec![1, 2]], vec![Some(1), Some(2), None]).unwrap();
        let m = CellModel::uniform(vec![1; 4]).unwrap();
        assert!(matches!(evaluate_expectation::<f64>(&t, &m, &UnitPotential), Err(EngineError::RipViolation)));
    }
}
