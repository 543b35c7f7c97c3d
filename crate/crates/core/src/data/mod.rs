//! Datasets, normalization, splits, triplet generation and kNN evaluation.

mod benchmark;
mod dataset;
mod knn;
mod split;
pub mod synthetic;
mod triplets;

pub use benchmark::{
    run_benchmark, BenchmarkConfig, BenchmarkReport, GridScore, Method, MethodSummary, TrialRecord,
    TrialTiming, TuningGrid, TuningOutcome,
};
pub use dataset::{
    fit_normalizer, load_csv, read_csv, Dataset, LabelColumn, Normalizer, STD_FLOOR,
};
pub use knn::{accuracy, knn_predict, knn_predict_all};
pub use split::{split_indices, split_with, stratified_split, trial_rng, Split, SplitSpec};
pub use triplets::{generate_triplets, TripletSpec};
