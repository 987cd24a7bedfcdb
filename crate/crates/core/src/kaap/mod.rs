//! Segment-level Shapley attributions averaged over a k-way partition of the
//! input, with dice-based selection of k and heatmap rendering.

mod attribution;
mod dice;
mod partition;
mod render;
mod shapley;

pub use attribution::{
    attribute_target, explained_generation, kaap_attribution, select_k_by_dice, AttributionMap, AttributionOptions,
    SentimentMarginGame, DEFAULT_K_IMAGE, DEFAULT_K_TEXT,
};
pub use dice::{dice_coefficient, select_k_with, top_quartile_mask, KSelection, DICE_CONVERGENCE, THRESHOLD_QUANTILE};
pub use partition::{partition_features, run_sizes, Modality, SegmentedInput};
pub use render::{
    blue_red, blue_yellow, render_image_heatmap, render_text_heatmap, render_text_html, save_attribution,
};
pub use shapley::{
    shapley_approx, shapley_auto, shapley_exact, spearman_rho, verify_additivity, CoalitionGame, FnGame, EXACT_LIMIT,
};
