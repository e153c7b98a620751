//! Exact p-values for scan statistics over arbitrary window families.
//!
//! Counts `X_1, …, X_n` on the cells of a region are conditioned on their
//! total and treated as multinomial. A scan over windows `Z_1, …, Z_J` is
//! significant when its maximum statistic is large, so its p-value is
//! `1 − E[∏_j 1{φ_j(X) < c}]`. The expectation factorises over the cliques
//! of a chordal extension of the window graph and is evaluated by summing
//! clique by clique along a clique tree.
//!
//! ```
//! use scanstat::scan::{self, PValueOptions};
//! use scanstat::{fixtures, CellModel, Decomposition};
//!
//! let model = CellModel::uniform(fixtures::Z20_COUNTS.to_vec()).unwrap();
//! let family = fixtures::z20_windows();
//! let d = Decomposition::build(&family, model.len(), None).unwrap();
//! assert_eq!(d.summary().fill_edges, 2);
//! let p = scan::exact_pvalue(&model, &family, &d, 5.167364, &PValueOptions::default()).unwrap();
//! assert!((p.p_value - 0.01371293).abs() < 1e-6);
//! //! ```

pub mod engine;
pub mod fixtures;
pub mod graph;
pub mod io;
pub mod oracle;
pub mod scan;
pub mod windows;

pub use engine::{evaluate_expectation, CellModel, CostReport, Potential, Scalar, UnitPotential, WindowPotential};
pub use graph::{CliqueTree, Decomposition, EliminationOrdering, UndirectedGraph};
pub use windows::WindowFamily;
