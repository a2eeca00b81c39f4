//! Data selection with diversity as the reward.
//!
//! The pipeline: synthesize a handful of items per target domain and take
//! their mean feature as the domain centroid; pseudo-label the corpus with
//! centroid-initialized k-means; train a small probe classifier on the
//! pseudo-labels and a regressor on its predictive entropy; keep the
//! samples with the highest predicted entropy.
//!
//! Modules follow the stages: [`corpus`] (records, feature files, mixtures),
//! [`diversity`] (centroid metrics and slices), [`synthesis`],
//! [`pseudolabel`], [`probe`], [`selection`], [`importance`] (the discrete
//! oracle behind the entropy reward) and [`harness`].

pub mod corpus;
pub mod diversity;
pub mod harness;
pub mod importance;
pub mod probe;
pub mod pseudolabel;
pub mod report;
pub mod selection;
pub mod synthesis;
pub mod vector;

pub use corpus::{Corpus, FeatureKind, FeatureMatrix, MixtureSpec, Sample};
pub use diversity::{CentroidSet, ScoreKind};
pub use harness::{run_pipeline, PipelineConfig};
pub use probe::{MlpParams, TrainConfig};
pub use selection::SelectionPolicy;
