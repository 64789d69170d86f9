//! Per-step trajectory dump: one CSV row per active vehicle per step.
//!
//! Columns: `step,vehicle_id,approach,intention,s,speed,collided,done`.
//! Step 0 rows describe vehicles as spawned; a row at step `k` describes the
//! vehicle after the `k`-th world step.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::geometry::{Approach, Intention};
use super::world::WorldState;
use super::SimError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub step: u64,
    pub vehicle_id: u32,
    pub approach: String,
    pub intention: String,
    pub s: f64,
    pub speed: f64,
    pub collided: bool,
    pub done: bool,
}

impl TrajectoryRow {
    pub fn approach(&self) -> Result<Approach, String> {
        self.approach.parse()
    }

    pub fn intention(&self) -> Result<Intention, String> {
        self.intention.parse()
    }
}

/// Collects rows while a world is stepped.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryRecorder {
    rows: Vec<TrajectoryRow>,
    /// Last step recorded per vehicle, so finished vehicles get exactly one
    /// final row.
    last_done: Vec<bool>,
}

impl TrajectoryRecorder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records every vehicle that is active, or that finished during the
    /// most recent step.
    pub fn record(&mut self, world: &WorldState) {
        let step = world.time_step_index();
        for v in world.vehicles() {
            let idx = v.id.0 as usize;
            if self.last_done.len() <= idx {
                self.last_done.resize(idx + 1, false);
            }
            if self.last_done[idx] {
                continue;
            }
            self.rows.push(TrajectoryRow {
                step,
                vehicle_id: v.id.0,
                approach: v.route.approach.short_name().to_string(),
                intention: v.route.intention.name().to_string(),
                s: v.s,
                speed: v.speed,
                collided: v.collided,
                done: v.done,
            });
            self.last_done[idx] = v.done;
        }
    }

    pub fn rows(&self) -> &[TrajectoryRow] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<TrajectoryRow> {
        self.rows
    }
}

pub fn write_trajectory_csv<W: Write>(rows: &[TrajectoryRow], out: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(["step", "vehicle_id", "approach", "intention", "s", "speed", "collided", "done"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a dump; errors carry the 1-based file line number.
pub fn read_trajectory_csv<R: Read>(input: R) -> Result<Vec<TrajectoryRow>, SimError> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for rec in rdr.deserialize::<TrajectoryRow>() {
        match rec {
            Ok(r) => {
                let line = rows.len() + 2;
                r.approach().map_err(|m| SimError::Parse { line, message: m })?;
                r.intention().map_err(|m| SimError::Parse { line, message: m })?;
                rows.push(r);
            }
            Err(e) => {
                let line = e.position().map(|p| p.line() as usize).unwrap_or(rows.len() + 2);
                return Err(SimError::Parse { line, message: e.to_string() });
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::geometry::{IntersectionGeometry, Route};
    use crate::sim::world::WorldConfig;
    use std::collections::BTreeMap;
    use std::sync::Arc;

    #[test]
    fn finished_vehicle_gets_one_final_row() {
        let mut w = WorldState::empty(Arc::new(IntersectionGeometry::default()), WorldConfig::default());
        let route = Route::new(Approach::West, Intention::Straight);
        let len = w.geometry().route_path(route).length();
        let id = w.insert_vehicle(route, len - 2.0, 15.0);
        let mut rec = TrajectoryRecorder::new();
        rec.record(&w);
        for _ in 0..3 {
            let cmds: BTreeMap<_, _> = w.active_vehicles().map(|v| (v.id, 15.0)).collect();
            w.step(&cmds).unwrap();
            rec.record(&w);
        }
        let rows = rec.rows();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.vehicle_id == id.0));
        assert!(rows[2].done);
    }

    #[test]
    fn csv_round_trip_and_line_numbers() {
        let rows = vec![TrajectoryRow {
            step: 0,
            vehicle_id: 3,
            approach: "N".into(),
            intention: "left".into(),
            s: 1.25,
            speed: 0.5,
            collided: false,
            done: false,
        }];
        let mut buf = Vec::new();
        write_trajectory_csv(&rows, &mut buf).unwrap();
        assert_eq!(read_trajectory_csv(&buf[..]).unwrap(), rows);

        let bad = "step,vehicle_id,approach,intention,s,speed,collided,done\n0,1,N,left,0,0,false,false\n1,1,N,left,zz,0,false,false\n";
        match read_trajectory_csv(bad.as_bytes()) {
            Err(SimError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}
