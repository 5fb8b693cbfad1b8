//! Interaction logs in, encoded training data out: parsing, vocabularies,
//! the leave-last-one-out split, cohorts, negative sampling and batching.

pub mod bundle;
mod corpus;
pub(crate) mod dataset;
pub mod movielens;
mod sampling;
mod split;
pub mod synthetic;
pub mod tsv;
mod vocab;

pub use corpus::{Corpus, Interaction, ItemRecord, UserMeta};
pub use dataset::{
    Dataset, ItemField, PrepareOptions, SplitProtocol, UserField, UserRecord, ACTIVITY_FIELD,
};
pub use movielens::parse_movielens;
pub use sampling::{
    positive_examples, sample_negatives, with_negatives, BatchIterator, PositiveIndex,
    TrainingExample,
};
pub use split::{
    activity_bucket, activity_labels, assign_cohorts, simulate_cold_start, temporal_split, Cohort,
    CohortThresholds, ColdSimulation, Event,
};
pub use tsv::parse_tsv_corpus;
pub use vocab::{natural_cmp, Vocabulary, OOV};
