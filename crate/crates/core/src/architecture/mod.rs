//! Network construction, parameter accounting and reference reconciliation.

mod model;
mod params;
mod reconcile;
mod spec;

pub use model::{Forward, Head, Level, Model, StageShape};
pub use params::{
    closed_form_params, count_params, gap_head_weights, kmax_head_weights, millions, reduction_percent, round2,
    standard_block_weights, storage_size, tdsc_block_weights, ParamReport,
};
pub use reconcile::{
    reconcile, Category, CategoryDiff, GoldenRow, GoldenTable, Reconciliation, Verdict, DEFAULT_GOLDEN,
    KNOWN_DISCREPANCIES,
};
pub use spec::{depth_layout, ArchitectureSpec, Family, DEPTHS, FIRST_CONV_CHANNELS, LEVEL_CHANNELS};
