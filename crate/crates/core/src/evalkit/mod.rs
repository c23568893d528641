//! Evaluation: Y-channel PSNR, the embedding-distance proxy, and benchmark
//! reports over degradation levels.

mod bench;
mod metrics;

pub use bench::{
    benchmark, benchmark_images, level_specs, make_pair, parse_levels, write_report, Bicubic, EvalReport, EvalRow,
    Level, LevelSpecs, SrModel, Upscaler, REPORT_VERSION,
};
pub use metrics::{psnr, psnr_y, psnr_y_border, rgb_to_y, DEFAULT_BORDER};
