//! Completion of structured matrices from a sparse set of observed entries.
//!
//! An `n × n` matrix with `n = c·2^L` is tensorized by splitting row and
//! column indices into `L` binary tree digits plus a leaf digit. A butterfly
//! network represents it with `L + 2` cores; a QTT network and a plain
//! low-rank factorization serve as baselines. Completion minimizes
//! `½‖P_Ω(T − X)‖²` by alternating least squares or by ADAM, starting from a
//! low-rank fit that is converted into butterfly form.
//!
//! ```
//! use butterfly_completion::{als_butterfly, random_network, AlsConfig, EvalSplit, ObservedEntries};
//!
//! let truth = random_network(2, 4, 2, 7, 1.0)?;
//! let dense = truth.reconstruct_dense()?;
//! let pairs = butterfly_completion::sample_omega(16, 200, 1, None)?;
//! let split = EvalSplit::train_only(ObservedEntries::from_dense(&dense, &pairs)?);
//!
//! let start = random_network(2, 4, 2, 99, 1.0)?;
//! let cfg = AlsConfig { max_iters: 50, tol: 1e-8, ..AlsConfig::default() };
//! let (_net, report) = als_butterfly(start, &split, &cfg)?;
//! assert!(report.final_train_err() < report.initial_train_err);
//! # Ok::<(), butterfly_completion::Error>(())
//! ```

pub mod adam;
pub mod als;
pub mod chain;
pub mod container;
pub mod dense;
pub mod entries;
pub mod error;
pub mod generators;
pub mod index;
pub mod init;
pub mod linalg;
pub mod network;
pub mod oracle;
pub mod report;

pub use adam::{
    adam_butterfly, adam_update, butterfly_gradients, residual_on_omega, AdamConfig, AdamHyper,
    AdamState, GradientSet,
};
pub use als::{
    als_butterfly, als_lowrank, als_qtt, normal_solve, solve_factor, AlsConfig, NormalSystem,
    SolveOutcome,
};
pub use container::{load_model, load_vector, save_model, save_vector, Model};
pub use dense::{DenseMatrix, C64};
pub use entries::{relative_error, relative_error_dense, sample_omega, EvalSplit, ObservedEntries};
pub use error::{Error, Result};
pub use generators::{
    green_helmholtz, kd_reorder, radon_matrix, synthetic_butterfly, synthetic_butterfly_network,
    synthetic_qtt, GeneratorKind, GeneratorSpec,
};
pub use index::MultiIndexMap;
pub use init::{
    generate_initial_guess, lr_to_butterfly, qrcp_truncate, ConversionConfig, InitConfig,
    LowRankPair,
};
pub use network::{ones_network, random_network, ButterflyNetwork, Core, QttNetwork};
pub use oracle::assemble_block_sparse_oracle;
pub use report::{ConvergenceReport, Termination};

/// The guide's chapters, compiled so their snippets run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/indices.md")]
    mod indices {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/als.md")]
    mod als {}
    #[doc = include_str!("../../../book/src/adam.md")]
    mod adam {}
    #[doc = include_str!("../../../book/src/initial-guess.md")]
    mod initial_guess {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/test-matrices.md")]
    mod test_matrices {}
    #[doc = include_str!("../../../book/src/reports.md")]
    mod reports {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
