//! Hidden Markov models whose emission laws are Gaussian mixtures.
//!
//! The crate covers EM inference for a fixed model, hierarchical merging of
//! mixture components into hidden states, BIC/ICL-type selection of the
//! number of states, and a simulation harness for benchmarking the whole
//! pipeline. It is `no_std` (with `alloc`) unless the `std` feature is on;
//! the `parallel` feature spreads candidate scoring and benchmark replicates
//! over a rayon pool.

#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` rejects NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod bench;
pub mod data;
pub mod em;
pub mod error;
pub mod gaussian;
pub mod hmm;
pub mod math;
pub mod merge;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod seed;
pub mod selection;
pub mod sim;

pub use bench::{run_benchmark, BenchConfig, BenchReport, BenchRow, Method};
pub use data::Dataset;
pub use em::{init_k_components, run_em, EmConfig, EmFit, InitConfig};
pub use error::{Error, Result};
pub use gaussian::{CovStructure, GaussianParams};
pub use hmm::{ChainPosterior, TransitionMatrix};
pub use math::Matrix;
pub use merge::{hierarchical_merge, merge_pair, MergeCriterion, MergeOptions, MergePath, MergeStep};
pub use selection::{count_free_parameters, select_by, select_clusters, Criteria, CriteriaReport, SelectionCriterion};
pub use sim::{benchmark_design, nested_squares_design, simulate, Emitter, SimResult, SimSpec};
pub use metrics::{correct_rate, mse};
pub use pipeline::{fit, fit_from, FitConfig, FitResult};
pub use model::{e_step, m_step, FullPosterior, MixtureHmm, TransitionModel};
