//! Representational measurements over activation dumps.

mod dump;
mod pca;
mod spatial;
mod stats;
mod tuning;

pub use dump::{ActivationDump, Layer};
pub use pca::{pca3, Pca3};
pub use spatial::{rate_map, silent_fraction, spatial_information, RateMap, SILENT_THRESHOLD};
pub use stats::{mean, median, paired_t_test_greater, spearman, std_error, welch_t_test, TTest};
pub use tuning::{
    corner_pairs, corner_separation, cosine, field_peak_shift, pairwise_cosine_trajectory,
    peak_reward_distance, sample_state_pairs, selectivity_index, split_similarity_profile,
    swap_response_delta, Cosine, PeakShift, RewardDistance,
};
