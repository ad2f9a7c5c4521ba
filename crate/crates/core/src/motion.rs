//! Scripted animal trajectories and ground-truth detection events.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point, PositionMap, SensorLayout, Signature};

/// A scripted movement: waypoints with strictly increasing timestamps,
/// interpolated piecewise-linearly. A repeated position with a later
/// timestamp is a pause.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryScript {
    pub id: String,
    /// `[x, y, t]` triples, meters and seconds.
    pub waypoints: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Error)]
pub enum MotionError {
    #[error("script {id}: needs at least 2 waypoints")]
    TooFewWaypoints { id: String },
    #[error("script {id}: waypoint times must be strictly increasing at index {index}")]
    NonIncreasingTime { id: String, index: usize },
    #[error("script {id}: non-finite waypoint at index {index}")]
    NonFinite { id: String, index: usize },
    #[error("script {id}: t={t} outside the script span [{start}, {end}]")]
    OutOfSpan {
        id: String,
        t: f64,
        start: f64,
        end: f64,
    },
    #[error("sample step must be > 0, got {0}")]
    BadSampleStep(f64),
    #[error("retrigger {retrigger} must be >= sample step {step}")]
    BadRetrigger { retrigger: f64, step: f64 },
}

impl TrajectoryScript {
    pub fn validate(&self) -> Result<(), MotionError> {
        if self.waypoints.len() < 2 {
            return Err(MotionError::TooFewWaypoints {
                id: self.id.clone(),
            });
        }
        for (i, w) in self.waypoints.iter().enumerate() {
            if !w.0.is_finite() || !w.1.is_finite() || !w.2.is_finite() {
                return Err(MotionError::NonFinite {
                    id: self.id.clone(),
                    index: i,
                });
            }
            if i > 0 && w.2 <= self.waypoints[i - 1].2 {
                return Err(MotionError::NonIncreasingTime {
                    id: self.id.clone(),
                    index: i,
                });
            }
        }
        Ok(())
    }

    pub fn span(&self) -> (f64, f64) {
        (
            self.waypoints.first().map(|w| w.2).unwrap_or(0.0),
            self.waypoints.last().map(|w| w.2).unwrap_or(0.0),
        )
    }

    /// Position at time `t` by linear interpolation between waypoints.
    pub fn position_at(&self, t: f64) -> Result<Point, MotionError> {
        let (start, end) = self.span();
        if t < start || t > end {
            return Err(MotionError::OutOfSpan {
                id: self.id.clone(),
                t,
                start,
                end,
            });
        }
        let mut prev = self.waypoints[0];
        for w in &self.waypoints[1..] {
            if t <= w.2 {
                let dt = w.2 - prev.2;
                let f = if dt > 0.0 { (t - prev.2) / dt } else { 0.0 };
                return Ok(Point::new(
                    prev.0 + f * (w.0 - prev.0),
                    prev.1 + f * (w.1 - prev.1),
                ));
            }
            prev = *w;
        }
        let last = self.waypoints.last().unwrap();
        Ok(Point::new(last.0, last.1))
    }
}

/// One ground-truth sensing event: which sensors see the animal, the
/// representative coordinate their set resolves to, and the true state.
#[derive(Debug, Clone, Serialize)]
pub struct DetectionEvent {
    pub sensor_ids: Signature,
    pub region_representative: Point,
    pub true_time: f64,
    pub true_position: Point,
}

/// Samples a trajectory against a layout and emits detection events.
///
/// The script is polled every `sample_step` seconds. A sample with a
/// nonempty covering-sensor set emits an event when the set differs from
/// the previous event's, or when `retrigger` seconds have passed since the
/// previous event; identical sets inside the retrigger period are
/// suppressed. `sample_step` doubles as the sensors' polling cadence, so a
/// coarse step models slow-reporting hardware.
pub fn generate_detections(
    script: &TrajectoryScript,
    layout: &SensorLayout,
    map: &PositionMap,
    sample_step: f64,
    retrigger: f64,
) -> Result<Vec<DetectionEvent>, MotionError> {
    if !(sample_step > 0.0) {
        return Err(MotionError::BadSampleStep(sample_step));
    }
    if retrigger < sample_step {
        return Err(MotionError::BadRetrigger {
            retrigger,
            step: sample_step,
        });
    }
    script.validate()?;

    let (start, end) = script.span();
    let mut events = Vec::new();
    let mut last: Option<(Signature, f64)> = None;
    let mut i = 0u64;
    loop {
        let t = start + i as f64 * sample_step;
        if t > end + 1e-9 {
            break;
        }
        let t = t.min(end);
        let p = script.position_at(t)?;
        let sig = layout.covering_sensors(p);
        if !sig.is_empty() {
            let emit = match &last {
                None => true,
                Some((prev_sig, prev_t)) => {
                    *prev_sig != sig || t - prev_t >= retrigger - 1e-9
                }
            };
            if emit {
                let rep = map
                    .resolve(&sig)
                    .expect("nonempty signature must resolve");
                events.push(DetectionEvent {
                    sensor_ids: sig.clone(),
                    region_representative: rep,
                    true_time: t,
                    true_position: p,
                });
                last = Some((sig, t));
            }
        }
        i += 1;
    }
    Ok(events)
}

/// Loads trajectory scripts from a JSON array of `{ "id", "waypoints" }`
/// objects (a bare single object is accepted too).
pub fn load_scripts(json: &str) -> Result<Vec<TrajectoryScript>, serde_json::Error> {
    match serde_json::from_str::<Vec<TrajectoryScript>>(json) {
        Ok(v) => Ok(v),
        Err(_) => serde_json::from_str::<TrajectoryScript>(json).map(|s| vec![s]),
    }
}

/// Writes a detection log as CSV.
pub fn write_detection_csv<W: std::io::Write>(
    rows: &[(String, usize, DetectionEvent)],
    out: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "script_id",
        "event_index",
        "sensor_ids",
        "rep_x",
        "rep_y",
        "true_x",
        "true_y",
        "true_time",
    ])?;
    for (script_id, index, ev) in rows {
        w.write_record([
            script_id.clone(),
            index.to_string(),
            ev.sensor_ids.to_string(),
            format!("{:.4}", ev.region_representative.x),
            format!("{:.4}", ev.region_representative.y),
            format!("{:.4}", ev.true_position.x),
            format!("{:.4}", ev.true_position.y),
            format!("{:.4}", ev.true_time),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{
        build_layout, build_position_map, FieldSpec, LayoutKind, MountHeights, PirSpec,
    };
    use approx::assert_relative_eq;

    fn script(waypoints: Vec<(f64, f64, f64)>) -> TrajectoryScript {
        TrajectoryScript {
            id: "t".into(),
            waypoints,
        }
    }

    #[test]
    fn midpoint_interpolation() {
        let s = script(vec![(0.0, 0.0, 0.0), (10.0, 0.0, 10.0)]);
        let p = s.position_at(5.0).unwrap();
        assert_relative_eq!(p.x, 5.0);
        assert_relative_eq!(p.y, 0.0);
    }

    #[test]
    fn waypoint_time_returns_waypoint() {
        let s = script(vec![(0.0, 0.0, 0.0), (3.0, 4.0, 1.0), (3.0, 9.0, 2.0)]);
        let p = s.position_at(1.0).unwrap();
        assert_eq!((p.x, p.y), (3.0, 4.0));
    }

    #[test]
    fn fractional_interpolation() {
        let s = script(vec![(0.0, 0.0, 0.0), (3.0, 4.0, 1.0)]);
        let p = s.position_at(0.5).unwrap();
        assert_relative_eq!(p.x, 1.5);
        assert_relative_eq!(p.y, 2.0);
    }

    #[test]
    fn out_of_span_errors() {
        let s = script(vec![(0.0, 0.0, 1.0), (1.0, 0.0, 2.0)]);
        assert!(s.position_at(0.5).is_err());
        assert!(s.position_at(2.5).is_err());
    }

    #[test]
    fn rejects_bad_scripts() {
        assert!(script(vec![(0.0, 0.0, 0.0)]).validate().is_err());
        assert!(script(vec![(0.0, 0.0, 1.0), (1.0, 0.0, 1.0)])
            .validate()
            .is_err());
    }

    fn layout_b() -> (SensorLayout, PositionMap) {
        let field = FieldSpec::new(25.0, 25.0).unwrap();
        let pir = PirSpec::new(7.0, 5.0).unwrap();
        let l = build_layout(
            &field,
            &pir,
            LayoutKind::B,
            2.5,
            MountHeights::default(),
            0.0,
        )
        .unwrap();
        let map = build_position_map(&l, 0.25).unwrap();
        (l, map)
    }

    #[test]
    fn trajectory_outside_coverage_yields_no_events() {
        let (l, map) = layout_b();
        let s = script(vec![(2.0, 12.0, 0.0), (20.0, 12.0, 10.0)]); // interior
        let events = generate_detections(&s, &l, &map, 0.1, 5.0).unwrap();
        assert!(events.is_empty());
    }

    #[test]
    fn m2_walk_reproduces_location_table() {
        // Polled at the PIR reporting cadence (5 s) the straight walk with a
        // pause reads 20, 15, 15, 10, 5.
        let (l, map) = layout_b();
        let s = script(vec![
            (20.0, -5.0, 0.0),
            (15.0, -5.0, 5.0),
            (15.0, -5.0, 10.0),
            (10.0, -5.0, 15.0),
            (5.0, -5.0, 20.0),
        ]);
        let events = generate_detections(&s, &l, &map, 5.0, 5.0).unwrap();
        let xs: Vec<f64> = events.iter().map(|e| e.region_representative.x).collect();
        assert_eq!(xs, vec![20.0, 15.0, 15.0, 10.0, 5.0]);
        let ys: Vec<f64> = events.iter().map(|e| e.region_representative.y).collect();
        assert!(ys.windows(2).all(|w| w[0] == w[1]), "y must be constant");
    }

    #[test]
    fn overlap_crossing_emits_multi_sensor_event() {
        let (l, map) = layout_b();
        // Deep in the band adjacent triangles overlap; crossing the midline
        // between sensors at 12.5 and 15 passes through their shared lens.
        let s = script(vec![(13.0, -5.5, 0.0), (14.5, -5.5, 3.0)]);
        let events = generate_detections(&s, &l, &map, 0.1, 5.0).unwrap();
        assert!(
            events.iter().any(|e| e.sensor_ids.len() == 2),
            "expected a two-sensor event, got {:?}",
            events.iter().map(|e| e.sensor_ids.to_string()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn events_match_exact_oracle_and_increase_in_time() {
        let (l, map) = layout_b();
        let s = script(vec![(0.0, -8.0, 0.0), (25.0, -1.0, 30.0)]);
        let events = generate_detections(&s, &l, &map, 0.1, 5.0).unwrap();
        assert!(!events.is_empty());
        let mut prev = f64::NEG_INFINITY;
        for ev in &events {
            assert!(!ev.sensor_ids.is_empty());
            assert_eq!(ev.sensor_ids, l.covering_sensors(ev.true_position));
            assert!(ev.true_time > prev);
            prev = ev.true_time;
        }
    }

    fn dedup<T: PartialEq + Clone>(xs: &[T]) -> Vec<T> {
        let mut out: Vec<T> = Vec::new();
        for x in xs {
            if out.last() != Some(x) {
                out.push(x.clone());
            }
        }
        out
    }

    #[test]
    fn time_scaling_keeps_the_representative_path() {
        let (l, map) = layout_b();
        let s = script(vec![(1.0, -6.0, 0.0), (24.0, -2.0, 20.0)]);
        let slow = script(
            s.waypoints
                .iter()
                .map(|&(x, y, t)| (x, y, 2.0 * t))
                .collect(),
        );
        let fast_events = generate_detections(&s, &l, &map, 0.1, 5.0).unwrap();
        let slow_events = generate_detections(&slow, &l, &map, 0.1, 5.0).unwrap();
        let path = |evs: &[DetectionEvent]| {
            dedup(
                &evs.iter()
                    .map(|e| {
                        (
                            (e.region_representative.x * 1e6).round() as i64,
                            (e.region_representative.y * 1e6).round() as i64,
                        )
                    })
                    .collect::<Vec<_>>(),
            )
        };
        assert_eq!(path(&fast_events), path(&slow_events));
    }

    #[test]
    fn reversed_script_reverses_the_representative_path() {
        let (l, map) = layout_b();
        let s = script(vec![(1.0, -6.0, 0.0), (24.0, -2.0, 20.0)]);
        let end = s.span().1;
        let mut rev: Vec<(f64, f64, f64)> = s
            .waypoints
            .iter()
            .rev()
            .map(|&(x, y, t)| (x, y, end - t))
            .collect();
        rev.sort_by(|a, b| a.2.partial_cmp(&b.2).unwrap());
        let r = script(rev);
        let fwd = generate_detections(&s, &l, &map, 0.1, 5.0).unwrap();
        let bwd = generate_detections(&r, &l, &map, 0.1, 5.0).unwrap();
        let path = |evs: &[DetectionEvent]| {
            dedup(
                &evs.iter()
                    .map(|e| {
                        (
                            (e.region_representative.x * 1e6).round() as i64,
                            (e.region_representative.y * 1e6).round() as i64,
                        )
                    })
                    .collect::<Vec<_>>(),
            )
        };
        let mut back = path(&bwd);
        back.reverse();
        assert_eq!(path(&fwd), back);
    }
}
