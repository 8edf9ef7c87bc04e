//! Cross-lingual transfer analysis.
//!
//! The pipeline runs from per-seed performance records to a seed-aggregated
//! [`records::TransferGrid`], from there to self/cross gains and the
//! row-normalized transfer matrix ([`transfer`]), and finally to aggregate
//! diagnostics ([`diagnostics`]) and seed-level stability ([`stability`]).
//! Supporting modules detect the dynamic training interval from learning
//! curves ([`curves`]), implement the downstream evaluation metrics
//! ([`evalmetrics`]), generate synthetic experiments with known answers
//! ([`synth`]) and render heatmaps ([`heatmap`]).

// `!(x > y)` comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod curves;
pub mod diagnostics;
pub mod evalmetrics;
pub mod heatmap;
pub mod matrix;
pub mod records;
pub mod rng;
pub mod stability;
pub mod synth;
pub mod transfer;

use thiserror::Error;

pub use matrix::SquareMatrix;
pub use records::{LanguageId, PerformanceRecord, TransferGrid};
pub use transfer::{Cltm, GainMatrix};

/// Any error raised by the library, tagged by module.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Records(#[from] records::RecordError),
    #[error(transparent)]
    Curves(#[from] curves::CurveError),
    #[error(transparent)]
    Transfer(#[from] transfer::TransferError),
    #[error(transparent)]
    Diagnostics(#[from] diagnostics::DiagnosticsError),
    #[error(transparent)]
    Stability(#[from] stability::StabilityError),
    #[error(transparent)]
    Metrics(#[from] evalmetrics::MetricError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
    #[error(transparent)]
    Heatmap(#[from] heatmap::HeatmapError),
}

impl Error {
    /// Short machine-readable category, e.g. `"records"`.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Records(_) => "records",
            Error::Curves(_) => "curves",
            Error::Transfer(_) => "transfer",
            Error::Diagnostics(_) => "diagnostics",
            Error::Stability(_) => "stability",
            Error::Metrics(_) => "metrics",
            Error::Synth(_) => "synth",
            Error::Heatmap(_) => "heatmap",
        }
    }
}
