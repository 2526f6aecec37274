//! Cross-validated evaluation: fold construction, Pearson statistics,
//! per-gene aggregation, text reports and spot overlays.

pub mod cv;
pub mod overlay;
pub mod report;
pub mod stats;

pub use cv::{
    cross_validate, lopo_split, run_cv, CvError, CvOutcome, EvalReport, Fold, FoldPredictor,
    FoldResult, GeneFoldResult, GeneSummary, NslPredictor, P_THRESHOLD, R_THRESHOLD,
};
pub use overlay::{overlay_file_name, spot_overlay, ColorRamp, OverlayError};
pub use report::{render_comparison, render_report, render_skips, ReportTable, REPORT_HEADER};
pub use stats::{combine_correlations, combine_pvalues, pearson, pearson_pvalue, StatsError};
