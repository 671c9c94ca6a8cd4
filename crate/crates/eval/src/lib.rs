//! Tracking and forecasting evaluation: oriented 3D IoU, CLEAR MOT counts,
//! recall-integrated tracking accuracy and multi-sample forecast metrics.

pub mod assignment;
pub mod clear;
pub mod forecast;
pub mod geometry;
pub mod integrated;
pub mod report;

pub use assignment::{assignment_value, max_weight_assignment};
pub use clear::{clear_metrics, ClearCounts, Sequence, TrackBox};
pub use forecast::{forecast_metrics, ForecastReport, ForecastSums, Trajectory};
pub use geometry::{iou3d, wrap_angle, OrientedBox3D};
pub use integrated::{integrated_metrics, CurvePoint, IntegratedMetrics, SequencePair};
pub use report::{curves_csv, EvalReport, MotReport};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("ground truth has {gt} frames but predictions have {pred}")]
    FrameCount { gt: usize, pred: usize },
    #[error("{0}")]
    Contract(String),
}
