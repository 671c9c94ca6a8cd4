//! Best-of-K accuracy and sample-diversity metrics for trajectory forecasts.

use serde::{Deserialize, Serialize};

use crate::EvalError;

/// Ground-plane `(x, z)` positions, one per future step.
pub type Trajectory = Vec<[f64; 2]>;

/// Forecast metrics averaged over agents. ASD and FSD are absent when any
/// agent has a single sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub ade: f64,
    pub fde: f64,
    pub asd: Option<f64>,
    pub fsd: Option<f64>,
    pub agents: usize,
}

/// Running sums, additive across scenes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ForecastSums {
    pub ade: f64,
    pub fde: f64,
    pub asd: f64,
    pub fsd: f64,
    pub agents: usize,
    pub single_sample_agents: usize,
}

impl ForecastSums {
    pub fn merge(&mut self, other: &ForecastSums) {
        self.ade += other.ade;
        self.fde += other.fde;
        self.asd += other.asd;
        self.fsd += other.fsd;
        self.agents += other.agents;
        self.single_sample_agents += other.single_sample_agents;
    }

    pub fn report(&self) -> Option<ForecastReport> {
        if self.agents == 0 {
            return None;
        }
        let n = self.agents as f64;
        let diverse = self.single_sample_agents == 0;
        Some(ForecastReport {
            ade: self.ade / n,
            fde: self.fde / n,
            asd: diverse.then(|| self.asd / n),
            fsd: diverse.then(|| self.fsd / n),
            agents: self.agents,
        })
    }

    /// Adds one agent's sample set against its ground-truth future.
    pub fn add(&mut self, samples: &[Trajectory], gt: &[[f64; 2]]) -> Result<(), EvalError> {
        if samples.is_empty() {
            return Err(EvalError::Contract("agent has no forecast samples".into()));
        }
        if gt.is_empty() {
            return Err(EvalError::Contract("empty ground-truth future".into()));
        }
        if let Some(bad) = samples.iter().find(|s| s.len() != gt.len()) {
            return Err(EvalError::Contract(format!(
                "sample length {} does not match future length {}",
                bad.len(),
                gt.len()
            )));
        }
        let (ade, fde) = best_of_k(samples, gt);
        self.ade += ade;
        self.fde += fde;
        if samples.len() < 2 {
            self.single_sample_agents += 1;
        } else {
            let (asd, fsd) = self_distance(samples);
            self.asd += asd;
            self.fsd += fsd;
        }
        self.agents += 1;
        Ok(())
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn mean_dist(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    a.iter().zip(b).map(|(p, q)| dist(*p, *q)).sum::<f64>() / a.len() as f64
}

/// Minimum over samples of the average and of the final displacement error.
/// The two minima are taken independently.
pub fn best_of_k(samples: &[Trajectory], gt: &[[f64; 2]]) -> (f64, f64) {
    let last = gt.len() - 1;
    samples.iter().fold((f64::INFINITY, f64::INFINITY), |(ade, fde), s| {
        (ade.min(mean_dist(s, gt)), fde.min(dist(s[last], gt[last])))
    })
}

/// Mean over samples of the distance to the nearest other sample, averaged
/// over steps and at the final step. Needs at least two samples.
pub fn self_distance(samples: &[Trajectory]) -> (f64, f64) {
    let k = samples.len();
    let last = samples[0].len() - 1;
    let (mut asd, mut fsd) = (0.0, 0.0);
    for a in 0..k {
        let (mut near_avg, mut near_fin) = (f64::INFINITY, f64::INFINITY);
        for b in (0..k).filter(|&b| b != a) {
            near_avg = near_avg.min(mean_dist(&samples[a], &samples[b]));
            near_fin = near_fin.min(dist(samples[a][last], samples[b][last]));
        }
        asd += near_avg;
        fsd += near_fin;
    }
    (asd / k as f64, fsd / k as f64)
}

/// Forecast metrics over `(samples, ground truth)` pairs, one per agent.
pub fn forecast_metrics(agents: &[(Vec<Trajectory>, Trajectory)]) -> Result<Option<ForecastReport>, EvalError> {
    let mut sums = ForecastSums::default();
    for (samples, gt) in agents {
        sums.add(samples, gt)?;
    }
    Ok(sums.report())
}
