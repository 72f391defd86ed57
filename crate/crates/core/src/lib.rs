// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod compose;
pub mod config;
pub mod dwho;
pub mod features;
pub mod frame;
pub mod homography;
pub mod io;
pub mod matchpool;
pub mod metrics;
pub mod raster;
pub mod pipeline;
pub mod synth;
pub mod unfold;
