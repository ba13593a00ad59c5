//! Parameter recovery.
//!
//! Two routes: [`fit_parameters`] runs Adam directly on the ten camera
//! parameters against known world points, and [`MtlNet`] is a small shared
//! trunk with thirteen regression heads trained under baseline MAE or the
//! camera projection loss.

mod adam;
pub mod checkpoint;
mod evaluate;
mod mtl;
mod solver;

pub use adam::Adam;
pub use evaluate::{
    evaluate, EvalOptions, MeanPredictor, Predictor, SolverPredictor, TruthPredictor,
};
pub use mtl::{
    batch_objective, dataset_terms, features_from_observations, mtl_forward, mtl_train,
    record_features, Dense, ForwardCache, HeadScaling, InputNorm, MtlNet, Topology, TrainOptions,
    TrainOutcome, TrainingSample, Trunk,
};
pub use solver::{fit_parameters, world_mae, FitResult, SolverConfig};
