//! Epoched EEG ingestion, stimulus catalogs, splits/folds and the
//! planted-structure synthetic dataset.

pub mod catalog;
pub mod eeg;
pub mod layout;
pub mod synthetic;

pub use catalog::{ClassLabel, ConceptEntry, SplitKind, StimulusCatalog};
pub use eeg::{
    average_repeats, loso_folds, split_indices, split_validation, AveragedTrials, EegTrialArray,
    LosoFold, TrialMetadata, DEFAULT_CHANNELS, DEFAULT_LOSO_VAL_TRIALS, DEFAULT_SAMPLING_RATE_HZ,
    DEFAULT_TIMEPOINTS, DEFAULT_VAL_TRIALS,
};
pub use layout::{
    list_subjects, load_catalog, load_eeg, load_embeddings, save_catalog, save_eeg,
    save_embeddings, Layout,
};
pub use synthetic::{generate_synthetic, LatentDims, SubjectData, SyntheticDataset, SyntheticSpec};
