//! Samples, vocabularies, file formats and the synthetic shifted-prior benchmark.

mod generate;
mod io;
mod sim;
mod types;

pub use generate::{
    empirical_priors, generate_benchmark, rephrase, rephrasing_groups, total_variation, Benchmark,
    BenchmarkConfig, RephrasingGroup, DECOY_SCORE,
};
pub use io::{blob_path, load_benchmark, load_split, load_vocab, save_benchmark, save_split, save_vocab};
pub use sim::{sim_scores, SimScores};
pub use types::{BBox, GroundTruthMeta, ObjectFeature, Sample, VocabSpec};
