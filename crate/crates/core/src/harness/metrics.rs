use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::sim::trajectory::{read_trajectory_csv, TrajectoryRow};
use crate::sim::SimError;

/// Speeds at or below this count as waiting.
pub const WAITING_SPEED: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub vehicle_id: u32,
    pub approach: String,
    pub intention: String,
    pub travel_time: f64,
    pub waiting_time: f64,
    pub average_speed: f64,
    pub distance: f64,
    pub collided: bool,
    /// Still in the network when the run ended; excluded from time means.
    pub censored: bool,
}

/// One record per vehicle in the dump. A vehicle's record covers every step
/// from its first row up to the row where it completed or collided.
pub fn compute_metrics(rows: &[TrajectoryRow], dt: f64) -> Vec<MetricsRecord> {
    let mut by_vehicle: BTreeMap<u32, Vec<&TrajectoryRow>> = BTreeMap::new();
    for r in rows {
        by_vehicle.entry(r.vehicle_id).or_default().push(r);
    }
    by_vehicle
        .into_values()
        .map(|mut rs| {
            rs.sort_by_key(|r| r.step);
            let first = rs[0];
            let mut travel_steps = 0u64;
            let mut waiting_steps = 0u64;
            let mut last = first;
            let mut finished = first.done || first.collided;
            for r in rs.iter().skip(1) {
                if finished {
                    break;
                }
                travel_steps += r.step - last.step;
                if r.speed <= WAITING_SPEED {
                    waiting_steps += r.step - last.step;
                }
                last = r;
                finished = r.done || r.collided;
            }
            let travel_time = travel_steps as f64 * dt;
            let distance = last.s - first.s;
            MetricsRecord {
                vehicle_id: first.vehicle_id,
                approach: first.approach.clone(),
                intention: first.intention.clone(),
                travel_time,
                waiting_time: waiting_steps as f64 * dt,
                average_speed: if travel_time > 0.0 { distance / travel_time } else { 0.0 },
                distance,
                collided: last.collided,
                censored: !finished,
            }
        })
        .collect()
}

/// Parses a trajectory dump and computes its metrics.
pub fn compute_metrics_from_csv<R: Read>(input: R, dt: f64) -> Result<Vec<MetricsRecord>, SimError> {
    Ok(compute_metrics(&read_trajectory_csv(input)?, dt))
}

/// Aggregate over one run. Time means skip censored vehicles; the collision
/// rate counts every vehicle that entered the network.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSummary {
    pub vehicles: usize,
    pub finished: usize,
    pub collided: usize,
    pub censored: usize,
    pub mean_travel_time: f64,
    pub mean_waiting_time: f64,
    pub mean_average_speed: f64,
    pub collision_rate: f64,
}

pub fn summarize(records: &[MetricsRecord]) -> MetricSummary {
    let done: Vec<&MetricsRecord> = records.iter().filter(|r| !r.censored).collect();
    let mean = |f: fn(&MetricsRecord) -> f64| {
        if done.is_empty() {
            0.0
        } else {
            done.iter().map(|r| f(r)).sum::<f64>() / done.len() as f64
        }
    };
    let collided = records.iter().filter(|r| r.collided).count();
    MetricSummary {
        vehicles: records.len(),
        finished: done.len(),
        collided,
        censored: records.len() - done.len(),
        mean_travel_time: mean(|r| r.travel_time),
        mean_waiting_time: mean(|r| r.waiting_time),
        mean_average_speed: mean(|r| r.average_speed),
        collision_rate: if records.is_empty() { 0.0 } else { collided as f64 / records.len() as f64 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(step: u64, s: f64, speed: f64, done: bool, collided: bool) -> TrajectoryRow {
        TrajectoryRow {
            step,
            vehicle_id: 3,
            approach: "N".into(),
            intention: "straight".into(),
            s,
            speed,
            collided,
            done,
        }
    }

    #[test]
    fn steady_traversal() {
        let rows: Vec<_> = (0..=100).map(|k| row(k, 1.2 * k as f64, 12.0, k == 100, false)).collect();
        let m = &compute_metrics(&rows, 0.1)[0];
        assert!((m.travel_time - 10.0).abs() < 1e-9);
        assert_eq!(m.waiting_time, 0.0);
        assert!((m.average_speed - 12.0).abs() < 1e-9);
        assert!(!m.censored && !m.collided);
    }

    #[test]
    fn stopped_vehicle_waits_all_the_time() {
        let rows: Vec<_> = (0..50).map(|k| row(k, 0.0, 0.0, false, false)).collect();
        let m = &compute_metrics(&rows, 0.1)[0];
        assert!(m.censored);
        assert_eq!(m.waiting_time, m.travel_time);
        let s = summarize(std::slice::from_ref(m));
        assert_eq!((s.vehicles, s.finished, s.censored), (1, 0, 1));
    }

    #[test]
    fn collision_ends_the_record() {
        let mut rows: Vec<_> = (0..10).map(|k| row(k, k as f64, 10.0, false, false)).collect();
        rows.push(row(10, 10.0, 10.0, false, true));
        rows.push(row(11, 11.0, 10.0, false, true));
        let m = &compute_metrics(&rows, 0.1)[0];
        assert!(m.collided && !m.censored);
        assert!((m.travel_time - 1.0).abs() < 1e-9);
        assert!((m.distance - 10.0).abs() < 1e-9);
    }

    #[test]
    fn malformed_dump_reports_line() {
        let csv = "step,vehicle_id,approach,intention,s,speed,collided,done\n0,1,N,left,0,0,false,false\n1,1,N,left,abc,0,false,false\n";
        match compute_metrics_from_csv(csv.as_bytes(), 0.1) {
            Err(SimError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}
