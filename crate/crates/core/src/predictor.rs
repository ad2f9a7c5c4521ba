//! Fog-side reading admission, fusion, session tracking, and the two-point
//! location prediction step.
//!
//! Readings carry sensing timestamps. Two thresholds govern admission:
//!
//! - readings less than `time_tolerance` (0.1 s) apart are treated as one
//!   observation of an animal standing in an overlap area and are fused
//!   into a single point (centroid of the member representatives, stamped
//!   with the earliest member time);
//! - a gap larger than `time_threshold` (120 s) starts a new intrusion
//!   session, discarding the previous track.
//!
//! From the second accepted point of a session onward, each point is
//! combined with its predecessor to dead-reckon the animal `latency`
//! seconds ahead: speed from the two timestamps, heading from the
//! displacement, and the predicted position on that ray.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point, PositionMap, SensorLayout, SideLabel, Signature};
use crate::link::ReadingMessage;

/// Displacements below this are treated as standing still: the prediction
/// stays at the current point instead of evaluating a heading from noise.
pub const ZERO_MOTION_EPSILON: f64 = 1e-6;

// ============================================================================
// Configuration and state
// ============================================================================

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictorConfig {
    /// Gap that separates intrusion sessions, seconds.
    pub time_threshold: f64,
    /// Window within which multi-sensor readings fuse, seconds.
    pub time_tolerance: f64,
    /// Detection-to-camera-pointing lead time, seconds.
    pub latency: f64,
    /// Wall time the prediction computation itself takes, seconds.
    pub compute_delay: f64,
    /// How long (sim time) a pending fusion window may stay open waiting
    /// for stragglers before it is flushed.
    pub fusion_holdoff: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            time_threshold: 120.0,
            time_tolerance: 0.1,
            latency: 5.0,
            compute_delay: 0.01,
            fusion_holdoff: 1.0,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<(), PredictError> {
        if !(self.time_tolerance > 0.0) || self.time_threshold <= self.time_tolerance {
            return Err(PredictError::BadConfig(
                "need time_threshold > time_tolerance > 0",
            ));
        }
        if !(self.latency > 0.0) {
            return Err(PredictError::BadConfig("latency must be > 0"));
        }
        Ok(())
    }
}

/// An accepted track point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrackPoint {
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

impl TrackPoint {
    pub fn new(x: f64, y: f64, t: f64) -> Self {
        Self { x, y, t }
    }

    pub fn point(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

/// The two-point extrapolation result.
#[derive(Debug, Clone, Serialize)]
pub struct Prediction {
    pub session_id: u64,
    pub basis: [TrackPoint; 2],
    pub speed: f64,
    /// Heading, radians, atan2 convention.
    pub theta: f64,
    /// Lead distance `latency * speed`, meters.
    pub lead_distance: f64,
    pub predicted: Point,
    pub issued_at: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlertKind {
    PossibleInvasion,
    Confirmed,
}

/// A notification queued for the farmer.
#[derive(Debug, Clone, Serialize)]
pub struct Alert {
    pub kind: AlertKind,
    pub session_id: u64,
    pub position: Point,
    pub side: SideLabel,
    pub species: Option<String>,
    pub emitted_at: f64,
}

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("invalid predictor config: {0}")]
    BadConfig(&'static str),
    #[error("non-positive time delta {0}; clock skew or duplicate timestamps")]
    NonPositiveDelta(f64),
}

// ============================================================================
// Prediction math
// ============================================================================

/// Dead-reckons the position `lead` seconds past `current`.
///
/// Distance, speed and heading come from the two points; the prediction is
/// `current + lead*speed` along the heading. A displacement below
/// [`ZERO_MOTION_EPSILON`] predicts in place with speed and heading zero.
pub fn predict_with_lead(
    previous: TrackPoint,
    current: TrackPoint,
    lead: f64,
) -> Result<(Point, f64, f64, f64), PredictError> {
    let dt = current.t - previous.t;
    if dt <= 0.0 {
        return Err(PredictError::NonPositiveDelta(dt));
    }
    let dx = current.x - previous.x;
    let dy = current.y - previous.y;
    let dist = (dx * dx + dy * dy).sqrt();
    if dist < ZERO_MOTION_EPSILON {
        return Ok((current.point(), 0.0, 0.0, 0.0));
    }
    let speed = dist / dt;
    let theta = dy.atan2(dx);
    let lead_distance = lead * speed;
    let predicted = Point::new(
        current.x + lead_distance * theta.cos(),
        current.y + lead_distance * theta.sin(),
    );
    Ok((predicted, speed, theta, lead_distance))
}

// ============================================================================
// Session machine
// ============================================================================

/// Reading admission outcome, in the order the branches are evaluated.
#[derive(Debug, Clone, PartialEq)]
pub enum Admit {
    /// Stale timestamp, rejected and logged.
    RejectedStale { t: f64, t_prev: f64 },
    /// Buffered into the open fusion window.
    Buffered,
    /// Opened a fresh observation window (gap above the session threshold
    /// resets the track first).
    Opened { new_session: bool },
}

/// Events produced when a pending window closes.
#[derive(Debug, Clone)]
pub enum SessionEvent {
    SessionStarted {
        session_id: u64,
        first: TrackPoint,
    },
    /// A point entered the track. `fused_from` counts the readings merged
    /// into it (1 for a lone reading).
    PointAccepted {
        session_id: u64,
        point: TrackPoint,
        side: SideLabel,
        fused_from: usize,
    },
    Prediction(Prediction),
}

#[derive(Debug, Clone)]
struct PendingReading {
    rep: Point,
    t: f64,
    side: SideLabel,
    signature: Signature,
}

/// Per-field predictor instance: one live session, one pending fusion
/// window, plus the accepted history for evaluation.
pub struct Predictor {
    pub cfg: PredictorConfig,
    map: PositionMap,
    session_id: u64,
    has_session: bool,
    prev: Option<TrackPoint>,
    pending: Vec<PendingReading>,
    /// Sensing timestamp of the first pending member.
    window_open_t: f64,
    /// Monotonically increasing token; a scheduled flush only fires if the
    /// window it was scheduled for is still the open one.
    pub window_token: u64,
    pub history: Vec<TrackPoint>,
    pub stale_rejects: usize,
}

impl Predictor {
    pub fn new(cfg: PredictorConfig, map: PositionMap) -> Result<Self, PredictError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            map,
            session_id: 0,
            has_session: false,
            prev: None,
            pending: Vec::new(),
            window_open_t: 0.0,
            window_token: 0,
            history: Vec::new(),
            stale_rejects: 0,
        })
    }

    pub fn session_id(&self) -> u64 {
        self.session_id
    }

    pub fn has_pending(&self) -> bool {
        !self.pending.is_empty()
    }

    /// Resolves a decoded reading to its representative coordinate.
    pub fn resolve_reading(
        &self,
        layout: &SensorLayout,
        msg: &ReadingMessage,
    ) -> Option<(Point, Signature)> {
        let ids: Vec<u32> = msg
            .sensor_indices()
            .into_iter()
            .filter_map(|i| layout.sensor_by_side_index(msg.side, i))
            .collect();
        if ids.is_empty() {
            return None;
        }
        let sig = Signature::new(ids);
        self.map.resolve(&sig).map(|p| (p, sig))
    }

    /// Admits one resolved reading with sensing time `t`.
    ///
    /// Closing events for a previously open window are returned alongside
    /// the admission outcome, since a reading past the tolerance window is
    /// what usually closes it.
    pub fn admit_reading(
        &mut self,
        rep: Point,
        signature: Signature,
        side: SideLabel,
        t: f64,
    ) -> (Admit, Vec<SessionEvent>) {
        let mut events = Vec::new();

        if let Some(prev) = self.prev {
            if self.pending.is_empty() && t < prev.t - self.cfg.time_tolerance {
                self.stale_rejects += 1;
                return (Admit::RejectedStale { t, t_prev: prev.t }, events);
            }
        }

        if !self.pending.is_empty() {
            if (t - self.window_open_t).abs() < self.cfg.time_tolerance {
                self.pending.push(PendingReading {
                    rep,
                    t,
                    side,
                    signature,
                });
                return (Admit::Buffered, events);
            }
            if t < self.window_open_t {
                self.stale_rejects += 1;
                return (
                    Admit::RejectedStale {
                        t,
                        t_prev: self.window_open_t,
                    },
                    events,
                );
            }
            events.extend(self.close_window());
        }

        // Session boundary is decided on sensing time against the last
        // accepted point.
        let new_session = match self.prev {
            Some(prev) if self.has_session => t - prev.t > self.cfg.time_threshold,
            _ => true,
        };
        self.window_open_t = t;
        self.window_token += 1;
        self.pending.push(PendingReading {
            rep,
            t,
            side,
            signature,
        });
        (Admit::Opened { new_session }, events)
    }

    /// Flushes the pending window if `token` still names it. Used by the
    /// scheduled holdoff event so the final reading of a burst is not
    /// stranded.
    pub fn flush_window(&mut self, token: u64) -> Vec<SessionEvent> {
        if self.pending.is_empty() || token != self.window_token {
            return Vec::new();
        }
        self.close_window()
    }

    /// Force-closes any pending window (end of input).
    pub fn finalize(&mut self) -> Vec<SessionEvent> {
        if self.pending.is_empty() {
            return Vec::new();
        }
        self.close_window()
    }

    fn close_window(&mut self) -> Vec<SessionEvent> {
        let mut members = std::mem::take(&mut self.pending);
        // Canonical order makes the fusion exactly independent of arrival
        // order.
        members.sort_by(|a, b| {
            a.t.partial_cmp(&b.t)
                .unwrap()
                .then_with(|| a.signature.cmp(&b.signature))
        });
        let n = members.len() as f64;
        let x = members.iter().map(|m| m.rep.x).sum::<f64>() / n;
        let y = members.iter().map(|m| m.rep.y).sum::<f64>() / n;
        let t = members
            .iter()
            .map(|m| m.t)
            .fold(f64::INFINITY, f64::min);
        let side = members[0].side;
        let point = TrackPoint::new(x, y, t);

        let mut events = Vec::new();
        let start_new = match self.prev {
            Some(prev) if self.has_session => t - prev.t > self.cfg.time_threshold,
            _ => true,
        };
        if start_new {
            self.session_id += 1;
            self.has_session = true;
            self.history.clear();
            self.prev = None;
            events.push(SessionEvent::SessionStarted {
                session_id: self.session_id,
                first: point,
            });
        }
        events.push(SessionEvent::PointAccepted {
            session_id: self.session_id,
            point,
            side,
            fused_from: members.len(),
        });

        if let Some(prev) = self.prev {
            if let Ok((predicted, speed, theta, lead_distance)) =
                predict_with_lead(prev, point, self.cfg.latency)
            {
                events.push(SessionEvent::Prediction(Prediction {
                    session_id: self.session_id,
                    basis: [prev, point],
                    speed,
                    theta,
                    lead_distance,
                    predicted,
                    // the caller re-stamps with sim time + compute delay
                    issued_at: t,
                }));
            }
        }
        self.prev = Some(point);
        self.history.push(point);
        events
    }
}

// ============================================================================
// CSV logs
// ============================================================================

pub fn write_prediction_csv<W: std::io::Write>(
    predictions: &[Prediction],
    out: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "session_id",
        "t_prev",
        "t_cur",
        "x_cur",
        "y_cur",
        "speed",
        "theta_radians",
        "x_predict",
        "y_predict",
    ])?;
    for p in predictions {
        w.write_record([
            p.session_id.to_string(),
            format!("{:.4}", p.basis[0].t),
            format!("{:.4}", p.basis[1].t),
            format!("{:.4}", p.basis[1].x),
            format!("{:.4}", p.basis[1].y),
            format!("{:.6}", p.speed),
            format!("{:.6}", p.theta),
            format!("{:.4}", p.predicted.x),
            format!("{:.4}", p.predicted.y),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_alert_csv<W: std::io::Write>(alerts: &[Alert], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["kind", "session_id", "emitted_at", "x", "y", "species"])?;
    for a in alerts {
        w.write_record([
            match a.kind {
                AlertKind::PossibleInvasion => "possible-invasion".to_string(),
                AlertKind::Confirmed => "confirmed".to_string(),
            },
            a.session_id.to_string(),
            format!("{:.4}", a.emitted_at),
            format!("{:.4}", a.position.x),
            format!("{:.4}", a.position.y),
            a.species.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
