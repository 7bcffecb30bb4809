//! Batch-by-batch multi-agent policy optimization on small cooperative
//! Markov games that the exact oracle can solve.
//!
//! Layers, bottom up: [`game`] and [`oracle`] (exact values and
//! advantages), [`policy`] and [`rollout`] (tabular policies, trajectories,
//! trace-corrected advantages), [`scheduler`] (dependence scoring, DAGs,
//! batch partitions), [`optimizer`] (batch updates, MAPPO and A2PO special
//! cases, distillation), [`verify`] (numeric bound checks) and [`harness`]
//! (configs, experiments, benchmarks, CSV output).

pub mod batch;
pub mod error;
pub mod game;
pub mod harness;
pub mod optimizer;
pub mod oracle;
pub mod policy;
pub mod rng;
pub mod rollout;
pub mod scheduler;
pub mod verify;

pub use batch::BatchSequence;
pub use error::{Error, Result};
pub use game::{
    build_chain_game, build_dependency_chain_game, build_random_game, ChainGameParams, GameSpec,
    GroundTruthDependence, JointAction, MarkovGame,
};
pub use optimizer::{Mode, OracleMode, RoundReport, SchemeConfig, Trainer};
pub use oracle::{exact_q_advantage, exact_value, expected_return, visitation, JointPolicy};
pub use policy::{ObservationEncoder, PolicySet};
pub use rollout::TrajectoryBatch;
pub use scheduler::{DagScheduler, SchedulerConfig};
pub use verify::BoundReport;
