use std::time::Instant;

use asopf_core::datagen::Sample;
use asopf_core::ese::solve_with_labels;
use asopf_core::grid::Grid;
use asopf_core::opf::solve_dcopf;
use serde::Serialize;

use crate::error::{at, CliResult, Stage};

/// Median and 95th percentile wall-times of the full QP and of the reduced system on the same
/// inputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingTable {
    pub samples: usize,
    pub qp_median_us: f64,
    pub qp_p95_us: f64,
    pub ese_median_us: f64,
    pub ese_p95_us: f64,
    /// QP median over ESE median.
    pub ratio: f64,
}

/// Nearest-rank percentile of `q ∈ (0, 1]`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

/// Time `solve_dcopf` and the reduced system built from the stored true labels on every sample.
/// ESE times cover assembly, solve and verification.
pub fn bench_timing(grid: &Grid, samples: &[&Sample]) -> CliResult<TimingTable> {
    let mut qp = Vec::with_capacity(samples.len());
    let mut ese = Vec::with_capacity(samples.len());
    for s in samples {
        let t = Instant::now();
        at(Stage::Bench, solve_dcopf(grid, &s.net_load))?;
        qp.push(micros(t));
        let t = Instant::now();
        at(
            Stage::Bench,
            solve_with_labels(grid, &s.net_load, &s.labels),
        )?;
        ese.push(micros(t));
    }
    let qp_median_us = percentile(&qp, 0.5);
    let ese_median_us = percentile(&ese, 0.5);
    Ok(TimingTable {
        samples: samples.len(),
        qp_median_us,
        qp_p95_us: percentile(&qp, 0.95),
        ese_median_us,
        ese_p95_us: percentile(&ese, 0.95),
        ratio: qp_median_us / ese_median_us,
    })
}

fn micros(t: Instant) -> f64 {
    // Clock granularity must not produce a zero time.
    (t.elapsed().as_secs_f64() * 1e6).max(1e-3)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        assert_eq!(percentile(&[3.0], 0.5), 3.0);
        assert_eq!(percentile(&[3.0], 0.95), 3.0);
        assert_eq!(percentile(&[4.0, 1.0, 3.0, 2.0], 0.5), 2.0);
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.95), 95.0);
        assert!(percentile(&[], 0.5).is_nan());
    }
}
