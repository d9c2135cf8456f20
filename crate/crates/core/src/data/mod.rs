//! Trajectories, corpora and pairwise preference data.

pub mod ethucy;
pub mod features;
pub mod pairs;
pub mod synth;
mod trajectory;

pub use trajectory::{
    dist, flatten, is_test_id, relative, translate, unflatten, Corpus, CorpusMeta, Maneuver, Point, Trajectory,
    DEFAULT_DT, DEFAULT_M, DEFAULT_N, DEFAULT_V_MAX,
};
