//! Measurement tooling: scorer agreement, mosaic composition, compute cost.

mod bench;
mod composition;
mod correlation;
mod cost;

pub use bench::{bench_breakdown, COMPONENTS, BenchOptions, BenchPipeline, ComponentCost, CostReport};
pub use composition::{composition_stats, CompositionReport, CompositionRow};
pub use correlation::{
    fraction_closer, kendall_tau, rank_correlation_report, spearman, Coefficient, PairComparison,
    RankCorrelationReport, ScorerCorrelation,
};
pub use cost::{
    count_macs, count_macs_json, extractor_layers, extractor_macs, feature_scorer_macs, pixel_blur_macs,
    tokenizer_macs, vit_layers, vit_macs, LayerCost,
};
