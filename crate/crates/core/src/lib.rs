//! Synthetic relational tabular data from structural causal models.
//!
//! The pipeline samples Barabási–Albert DAGs ([`graph`]), propagates
//! `n`-dimensional vectors through random one-layer networks ([`scm`]),
//! calibrates noise and categorical codebooks on a noiseless pre-run
//! ([`presample`]), samples and pools rows into tables ([`sampler`]), couples
//! two graphs into a main and an additional table ([`relational`]) and
//! measures how much the additional table helps predict main-table targets
//! ([`eval`]). [`io`] and [`pipeline`] handle files and end-to-end runs.

mod engine;

pub mod config;
pub mod error;
pub mod eval;
pub mod graph;
pub mod io;
pub mod pipeline;
pub mod presample;
pub mod relational;
pub mod sampler;
pub mod scm;
pub mod seed;

pub use config::{load_config, GenerationConfig, GraphParams};
pub use error::{Error, Result};
pub use graph::{DagSpec, NodeSpec, PoolingKind, PoolingSpec, Role, UndirectedGraph};
pub use presample::{Codebook, PrerunStats};
pub use relational::{RelationalDataset, RelationalSchema};
pub use sampler::{Column, ColumnData, ColumnInfo, ColumnKind, ColumnRole, Table};
pub use scm::{Activation, NoiseConfig, PropagationFn, QuantilePair, RootDistribution};
