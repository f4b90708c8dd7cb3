//! Latency and loss against fleet size.

use serde::{Deserialize, Serialize};

use crate::bots::FleetSummary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityRow {
    pub fleet: usize,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub loss: u64,
    pub knee: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityReport {
    pub rows: Vec<CapacityRow>,
    /// First fleet size whose p50 exceeds twice the baseline's.
    pub knee: Option<usize>,
}

/// Rows in ascending fleet size. The baseline is the 2-bot run when present,
/// else the smallest. A single run has no knee.
pub fn capacity_report(results: &[FleetSummary]) -> CapacityReport {
    let mut rows: Vec<CapacityRow> = results
        .iter()
        .map(|r| CapacityRow { fleet: r.bots, p50_ms: r.latency.p50_ms, p95_ms: r.latency.p95_ms, loss: r.lost, knee: false })
        .collect();
    rows.sort_by_key(|r| r.fleet);
    let mut knee = None;
    if rows.len() >= 2 {
        let baseline = rows.iter().find(|r| r.fleet == 2).unwrap_or(&rows[0]).p50_ms;
        if let Some(row) = rows.iter_mut().find(|r| r.p50_ms > 2.0 * baseline) {
            row.knee = true;
            knee = Some(row.fleet);
        }
    }
    CapacityReport { rows, knee }
}

impl CapacityReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fleet,p50_ms,p95_ms,loss,knee\n");
        for r in &self.rows {
            out.push_str(&format!("{},{:.3},{:.3},{},{}\n", r.fleet, r.p50_ms, r.p95_ms, r.loss, r.knee));
        }
        out
    }

    pub fn p50_non_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].p50_ms >= w[0].p50_ms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bots::LatencyStats;

    fn run(bots: usize, p50: f64) -> FleetSummary {
        FleetSummary { bots, latency: LatencyStats { count: 10, mean_ms: p50, p50_ms: p50, p95_ms: p50 * 1.5, max_ms: p50 * 2.0 }, ..FleetSummary::default() }
    }

    #[test]
    fn single_size_has_no_knee() {
        let r = capacity_report(&[run(2, 1.0)]);
        assert_eq!(r.knee, None);
        assert_eq!(r.to_csv(), "fleet,p50_ms,p95_ms,loss,knee\n2,1.000,1.500,0,false\n");
    }

    #[test]
    fn knee_is_first_size_over_twice_baseline() {
        let r = capacity_report(&[run(50, 101.0), run(2, 1.0), run(10, 2.0), run(20, 2.5)]);
        assert_eq!(r.knee, Some(20));
        assert_eq!(r.rows.iter().map(|r| r.fleet).collect::<Vec<_>>(), [2, 10, 20, 50]);
        assert!(r.p50_non_decreasing());
        let flat = capacity_report(&[run(2, 1.0), run(10, 0.9)]);
        assert!(!flat.p50_non_decreasing());
        assert_eq!(flat.knee, None);
    }
}
