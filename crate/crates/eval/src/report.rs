//! Serializable evaluation reports.

use serde::{Deserialize, Serialize};

use crate::clear::ClearCounts;
use crate::forecast::ForecastReport;
use crate::integrated::{CurvePoint, IntegratedMetrics};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotReport {
    pub samota: f64,
    pub amota: f64,
    pub amotp: f64,
    pub mota: f64,
    pub motp: f64,
    pub ids: usize,
    pub fp: usize,
    pub fn_count: usize,
    pub num_gt: usize,
}

impl MotReport {
    pub fn new(counts: &ClearCounts, integrated: &IntegratedMetrics) -> Self {
        MotReport {
            samota: integrated.samota,
            amota: integrated.amota,
            amotp: integrated.amotp,
            mota: counts.mota(),
            motp: counts.motp(),
            ids: counts.id_switches,
            fp: counts.false_positives,
            fn_count: counts.misses,
            num_gt: counts.num_gt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tracking: MotReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forecasting: Option<ForecastReport>,
}

/// CSV of the recall sweep: `recall,mota,smota,motp`.
pub fn curves_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("recall,mota,smota,motp\n");
    for p in curve {
        out.push_str(&format!("{},{},{},{}\n", p.recall, p.mota, p.smota, p.motp));
    }
    out
}
