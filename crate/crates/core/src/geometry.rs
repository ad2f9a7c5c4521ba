//! Virtual coordinate system, sensor layouts, and coverage regions.
//!
//! The field is an axis-aligned rectangle `[0, width] x [0, height]` with
//! four labelled sides walked counterclockwise:
//!
//! - side A: bottom edge, outward normal -y
//! - side B: right edge, outward normal +x
//! - side C: top edge, outward normal +y
//! - side D: left edge, outward normal -x
//!
//! PIR sensors sit on per-side strips. A vertically mounted sensor projects
//! straight down and covers a ground disk of diameter `h` centred on the
//! boundary line; a horizontally mounted sensor projects outward and covers
//! an isosceles triangle with base `h` at distance `d` from its apex.
//!
//! Overlapping shapes partition the monitored band into small sub-regions;
//! each sub-region is represented by a single point (its cell centroid on a
//! uniform grid). A firing sensor set is resolved to that representative, so
//! the rest of the pipeline works with discrete positions.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

// ============================================================================
// Basic types
// ============================================================================

/// A point (or displacement) in the field frame, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: Point) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }

    pub fn add(&self, dx: f64, dy: f64) -> Point {
        Point::new(self.x + dx, self.y + dy)
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.3}, {:.3})", self.x, self.y)
    }
}

/// One of the four field sides.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum SideLabel {
    A,
    B,
    C,
    D,
}

impl SideLabel {
    pub const ALL: [SideLabel; 4] = [SideLabel::A, SideLabel::B, SideLabel::C, SideLabel::D];

    /// Wire code used in the 16-byte frame (ASCII letter).
    pub fn code(self) -> u8 {
        match self {
            SideLabel::A => b'A',
            SideLabel::B => b'B',
            SideLabel::C => b'C',
            SideLabel::D => b'D',
        }
    }

    pub fn from_code(code: u8) -> Option<SideLabel> {
        match code {
            b'A' => Some(SideLabel::A),
            b'B' => Some(SideLabel::B),
            b'C' => Some(SideLabel::C),
            b'D' => Some(SideLabel::D),
            _ => None,
        }
    }
}

impl fmt::Display for SideLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code() as char)
    }
}

/// Geometry of one side: the segment from `start` to `end` plus its outward
/// normal. `along` is the unit vector from start to end, so a point at
/// side-local coordinate `(s, depth)` sits at `start + s*along + depth*outward`.
#[derive(Debug, Clone, Copy)]
pub struct SideFrame {
    pub label: SideLabel,
    pub start: Point,
    pub end: Point,
    pub along: (f64, f64),
    pub outward: (f64, f64),
}

impl SideFrame {
    pub fn length(&self) -> f64 {
        self.start.distance(self.end)
    }

    /// Field-frame position of side-local `(s, depth)`.
    pub fn to_field(&self, s: f64, depth: f64) -> Point {
        Point::new(
            self.start.x + s * self.along.0 + depth * self.outward.0,
            self.start.y + s * self.along.1 + depth * self.outward.1,
        )
    }

    /// Side-local `(s, depth)` of a field-frame point. `depth > 0` is
    /// outside the field.
    pub fn to_local(&self, p: Point) -> (f64, f64) {
        let dx = p.x - self.start.x;
        let dy = p.y - self.start.y;
        (
            dx * self.along.0 + dy * self.along.1,
            dx * self.outward.0 + dy * self.outward.1,
        )
    }
}

/// The monitored rectangle with its labelled sides and corners.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldSpec {
    pub width: f64,
    pub height: f64,
}

impl FieldSpec {
    pub fn new(width: f64, height: f64) -> Result<Self, GeometryError> {
        if !(width > 0.0) || !width.is_finite() {
            return Err(GeometryError::InvalidField("width must be > 0"));
        }
        if !(height > 0.0) || !height.is_finite() {
            return Err(GeometryError::InvalidField("height must be > 0"));
        }
        Ok(Self { width, height })
    }

    /// The four corners in counterclockwise order starting at the origin.
    pub fn corners(&self) -> [(String, Point); 4] {
        [
            ("P1".to_string(), Point::new(0.0, 0.0)),
            ("P2".to_string(), Point::new(self.width, 0.0)),
            ("P3".to_string(), Point::new(self.width, self.height)),
            ("P4".to_string(), Point::new(0.0, self.height)),
        ]
    }

    /// Side frames in label order A, B, C, D.
    pub fn sides(&self) -> [SideFrame; 4] {
        let w = self.width;
        let h = self.height;
        [
            SideFrame {
                label: SideLabel::A,
                start: Point::new(0.0, 0.0),
                end: Point::new(w, 0.0),
                along: (1.0, 0.0),
                outward: (0.0, -1.0),
            },
            SideFrame {
                label: SideLabel::B,
                start: Point::new(w, 0.0),
                end: Point::new(w, h),
                along: (0.0, 1.0),
                outward: (1.0, 0.0),
            },
            SideFrame {
                label: SideLabel::C,
                start: Point::new(w, h),
                end: Point::new(0.0, h),
                along: (-1.0, 0.0),
                outward: (0.0, 1.0),
            },
            SideFrame {
                label: SideLabel::D,
                start: Point::new(0.0, h),
                end: Point::new(0.0, 0.0),
                along: (0.0, -1.0),
                outward: (-1.0, 0.0),
            },
        ]
    }

    pub fn side(&self, label: SideLabel) -> SideFrame {
        self.sides()[label as usize]
    }

    /// Distance from `p` to the rectangle boundary (0 on the boundary,
    /// positive elsewhere, inside or outside).
    pub fn boundary_distance(&self, p: Point) -> f64 {
        let inside_x = p.x >= 0.0 && p.x <= self.width;
        let inside_y = p.y >= 0.0 && p.y <= self.height;
        if inside_x && inside_y {
            let dx = p.x.min(self.width - p.x);
            let dy = p.y.min(self.height - p.y);
            dx.min(dy)
        } else {
            let cx = p.x.clamp(0.0, self.width);
            let cy = p.y.clamp(0.0, self.height);
            p.distance(Point::new(cx, cy))
        }
    }
}

/// PIR sensor characteristics: maximum detection distance `d` and the
/// diameter `h` of the detection cone's base circle.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PirSpec {
    /// Cone height `d`, meters.
    pub max_distance: f64,
    /// Cone base diameter `h`, meters.
    pub base_diameter: f64,
}

impl PirSpec {
    pub fn new(max_distance: f64, base_diameter: f64) -> Result<Self, GeometryError> {
        if !(max_distance > 0.0) {
            return Err(GeometryError::InvalidField("pir max_distance must be > 0"));
        }
        if !(base_diameter > 0.0) {
            return Err(GeometryError::InvalidField("pir base_diameter must be > 0"));
        }
        Ok(Self {
            max_distance,
            base_diameter,
        })
    }

    /// Apex angle of the detection cone, radians. The cone's base and height
    /// fully determine it: `alpha = 2*atan(h / (2*d))`.
    pub fn cone_angle(&self) -> f64 {
        2.0 * (self.base_diameter / (2.0 * self.max_distance)).atan()
    }
}

// ============================================================================
// Sensors and layouts
// ============================================================================

/// Globally unique sensor id within a layout.
pub type SensorId = u32;

/// Sorted set of sensor ids covering a point or region.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Signature(Vec<SensorId>);

impl Signature {
    pub fn new(mut ids: Vec<SensorId>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        Signature(ids)
    }

    pub fn empty() -> Self {
        Signature(Vec::new())
    }

    pub fn single(id: SensorId) -> Self {
        Signature(vec![id])
    }

    pub fn ids(&self) -> &[SensorId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, id: SensorId) -> bool {
        self.0.binary_search(&id).is_ok()
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|id| id.to_string()).collect();
        write!(f, "{{{}}}", parts.join("+"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    /// Mounted above the strip, projecting straight down.
    VerticalDown,
    /// Mounted on the strip, projecting away from the field.
    HorizontalOutward,
}

/// Placement of one sensor on a side strip.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensorPose {
    pub id: SensorId,
    pub side: SideLabel,
    /// Ordinal of this sensor within its side (bit index on the wire).
    pub index_on_side: u32,
    /// Row within the layout (0 or 1).
    pub row: u32,
    /// Plan position in the field frame.
    pub position: Point,
    pub mount_height: f64,
    pub orientation: Orientation,
}

/// Ground-plane projection of one sensor's detection volume.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CoverageShape {
    Disk {
        center: Point,
        radius: f64,
    },
    /// Isosceles triangle: apex at the sensor, axis along `direction`
    /// (unit), base of width `base` at distance `height` from the apex.
    IsoscelesTriangle {
        apex: Point,
        direction: (f64, f64),
        height: f64,
        base: f64,
    },
}

impl CoverageShape {
    /// Exact closed-shape containment test.
    pub fn contains(&self, p: Point) -> bool {
        match self {
            CoverageShape::Disk { center, radius } => center.distance(p) <= *radius,
            CoverageShape::IsoscelesTriangle {
                apex,
                direction,
                height,
                base,
            } => {
                let dx = p.x - apex.x;
                let dy = p.y - apex.y;
                let depth = dx * direction.0 + dy * direction.1;
                if depth < 0.0 || depth > *height {
                    return false;
                }
                let lateral = (dx * (-direction.1) + dy * direction.0).abs();
                lateral <= (base / 2.0) * (depth / height)
            }
        }
    }

    /// Centroid of the full, uncarved shape.
    pub fn centroid(&self) -> Point {
        match self {
            CoverageShape::Disk { center, .. } => *center,
            CoverageShape::IsoscelesTriangle {
                apex,
                direction,
                height,
                ..
            } => {
                // triangle centroid sits 2/3 of the way from apex to base
                let d = 2.0 * height / 3.0;
                Point::new(apex.x + d * direction.0, apex.y + d * direction.1)
            }
        }
    }

    /// Axis-aligned bounding box (min, max).
    pub fn bbox(&self) -> (Point, Point) {
        match self {
            CoverageShape::Disk { center, radius } => (
                Point::new(center.x - radius, center.y - radius),
                Point::new(center.x + radius, center.y + radius),
            ),
            CoverageShape::IsoscelesTriangle {
                apex,
                direction,
                height,
                base,
            } => {
                let tip = Point::new(apex.x + height * direction.0, apex.y + height * direction.1);
                let half = base / 2.0;
                let c1 = Point::new(tip.x - half * direction.1, tip.y + half * direction.0);
                let c2 = Point::new(tip.x + half * direction.1, tip.y - half * direction.0);
                let min_x = apex.x.min(c1.x).min(c2.x);
                let min_y = apex.y.min(c1.y).min(c2.y);
                let max_x = apex.x.max(c1.x).max(c2.x);
                let max_y = apex.y.max(c1.y).max(c2.y);
                (Point::new(min_x, min_y), Point::new(max_x, max_y))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayoutKind {
    A,
    B,
    C,
}

impl LayoutKind {
    pub fn parse(s: &str) -> Option<LayoutKind> {
        match s {
            "A" | "a" => Some(LayoutKind::A),
            "B" | "b" => Some(LayoutKind::B),
            "C" | "c" => Some(LayoutKind::C),
            _ => None,
        }
    }
}

impl fmt::Display for LayoutKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayoutKind::A => write!(f, "A"),
            LayoutKind::B => write!(f, "B"),
            LayoutKind::C => write!(f, "C"),
        }
    }
}

/// Strip mounting heights per row kind.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MountHeights {
    /// Height of the downward-facing strip, meters.
    pub vertical: f64,
    /// Height of the outward-facing strip, meters.
    pub horizontal: f64,
}

impl Default for MountHeights {
    fn default() -> Self {
        Self {
            vertical: 5.0,
            horizontal: 1.5,
        }
    }
}

/// A full perimeter sensor arrangement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensorLayout {
    pub kind: LayoutKind,
    pub field: FieldSpec,
    pub pir: PirSpec,
    pub spacing: f64,
    pub sensors: Vec<(SensorPose, CoverageShape)>,
}

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid field parameter: {0}")]
    InvalidField(&'static str),
    #[error("spacing must be > 0, got {0}")]
    NonPositiveSpacing(f64),
    #[error("spacing {spacing} leaves coverage gaps of {gap:.2} m (allowed {allowed:.2} m)")]
    GapTooLarge { spacing: f64, gap: f64, allowed: f64 },
    #[error("mount height must be >= 0")]
    NegativeMountHeight,
    #[error("side {side} would carry {count} sensors; at most 32 fit the wire format")]
    TooManySensorsPerSide { side: SideLabel, count: usize },
    #[error("side {0} holds no sensors; field too small for this spacing")]
    EmptySide(SideLabel),
    #[error("grid resolution must be in (0, {max}], got {got}")]
    BadResolution { got: f64, max: f64 },
    #[error("band depth must be > 0, got {0}")]
    BadBand(f64),
}

/// Row placement recipe for one layout kind.
struct RowPlan {
    orientation: Orientation,
    /// Along-side offset of the first sensor, as a fraction of spacing.
    phase: f64,
}

fn row_plans(kind: LayoutKind) -> Vec<RowPlan> {
    match kind {
        // Two interlocking rows of downward disks on the boundary line; the
        // second row is shifted by half a spacing so the circles overlap.
        LayoutKind::A => vec![
            RowPlan {
                orientation: Orientation::VerticalDown,
                phase: 0.0,
            },
            RowPlan {
                orientation: Orientation::VerticalDown,
                phase: 0.5,
            },
        ],
        LayoutKind::B => vec![RowPlan {
            orientation: Orientation::HorizontalOutward,
            phase: 0.0,
        }],
        // One vertical and one horizontal row at the same positions.
        LayoutKind::C => vec![
            RowPlan {
                orientation: Orientation::VerticalDown,
                phase: 0.0,
            },
            RowPlan {
                orientation: Orientation::HorizontalOutward,
                phase: 0.0,
            },
        ],
    }
}

/// Builds a perimeter layout of the given kind on every side of the field.
///
/// Sensors are placed fencepost-style at `phase*spacing + i*spacing` along
/// each side, `floor(side_length / spacing)` per row. `max_gap` bounds the
/// tolerated clearance between adjacent same-row shapes; the paper layouts
/// have none, so the default is 0.
pub fn build_layout(
    field: &FieldSpec,
    pir: &PirSpec,
    kind: LayoutKind,
    spacing: f64,
    heights: MountHeights,
    max_gap: f64,
) -> Result<SensorLayout, GeometryError> {
    if !(spacing > 0.0) || !spacing.is_finite() {
        return Err(GeometryError::NonPositiveSpacing(spacing));
    }
    if heights.vertical < 0.0 || heights.horizontal < 0.0 {
        return Err(GeometryError::NegativeMountHeight);
    }
    // Adjacent same-row shapes touch once spacing reaches h (disk diameter,
    // triangle base). Anything wider leaves a permanent corridor.
    let gap = spacing - pir.base_diameter;
    if gap > max_gap {
        return Err(GeometryError::GapTooLarge {
            spacing,
            gap,
            allowed: max_gap,
        });
    }

    let mut sensors = Vec::new();
    let mut next_id: SensorId = 0;
    for frame in field.sides() {
        let len = frame.length();
        let mut index_on_side: u32 = 0;
        for (row, plan) in row_plans(kind).iter().enumerate() {
            let count = (len / spacing).floor() as usize;
            if count == 0 {
                return Err(GeometryError::EmptySide(frame.label));
            }
            for i in 0..count {
                let s = (plan.phase + i as f64) * spacing;
                if s > len {
                    continue;
                }
                let position = frame.to_field(s, 0.0);
                let (mount_height, shape) = match plan.orientation {
                    Orientation::VerticalDown => (
                        heights.vertical,
                        CoverageShape::Disk {
                            center: position,
                            radius: pir.base_diameter / 2.0,
                        },
                    ),
                    Orientation::HorizontalOutward => (
                        heights.horizontal,
                        CoverageShape::IsoscelesTriangle {
                            apex: position,
                            direction: frame.outward,
                            height: pir.max_distance,
                            base: pir.base_diameter,
                        },
                    ),
                };
                sensors.push((
                    SensorPose {
                        id: next_id,
                        side: frame.label,
                        index_on_side,
                        row: row as u32,
                        position,
                        mount_height,
                        orientation: plan.orientation,
                    },
                    shape,
                ));
                next_id += 1;
                index_on_side += 1;
            }
        }
        if index_on_side as usize > 32 {
            return Err(GeometryError::TooManySensorsPerSide {
                side: frame.label,
                count: index_on_side as usize,
            });
        }
    }

    Ok(SensorLayout {
        kind,
        field: field.clone(),
        pir: *pir,
        spacing,
        sensors,
    })
}

impl SensorLayout {
    /// Assembles a layout from explicit sensors; used for synthetic
    /// arrangements in tests and tools.
    pub fn custom(
        field: FieldSpec,
        pir: PirSpec,
        kind: LayoutKind,
        spacing: f64,
        sensors: Vec<(SensorPose, CoverageShape)>,
    ) -> Self {
        Self {
            kind,
            field,
            pir,
            spacing,
            sensors,
        }
    }

    pub fn sensor_count(&self) -> usize {
        self.sensors.len()
    }

    pub fn pose(&self, id: SensorId) -> Option<&SensorPose> {
        self.sensors.get(id as usize).map(|(p, _)| p)
    }

    /// Sensors of one side in `index_on_side` order.
    pub fn side_sensors(&self, side: SideLabel) -> Vec<&SensorPose> {
        let mut v: Vec<&SensorPose> = self
            .sensors
            .iter()
            .map(|(p, _)| p)
            .filter(|p| p.side == side)
            .collect();
        v.sort_by_key(|p| p.index_on_side);
        v
    }

    /// Resolves a per-side bit index back to the global sensor id.
    pub fn sensor_by_side_index(&self, side: SideLabel, index: u32) -> Option<SensorId> {
        self.sensors
            .iter()
            .map(|(p, _)| p)
            .find(|p| p.side == side && p.index_on_side == index)
            .map(|p| p.id)
    }

    /// Exact covering-sensor set at `p` (closed shapes).
    pub fn covering_sensors(&self, p: Point) -> Signature {
        let ids: Vec<SensorId> = self
            .sensors
            .iter()
            .filter(|(_, shape)| shape.contains(p))
            .map(|(pose, _)| pose.id)
            .collect();
        Signature::new(ids)
    }

    /// Outward reach of the coverage, meters past the boundary.
    pub fn outward_extent(&self) -> f64 {
        let mut extent: f64 = 0.0;
        for frame in self.field.sides() {
            for (pose, shape) in &self.sensors {
                if pose.side != frame.label {
                    continue;
                }
                let (min, max) = shape.bbox();
                for corner in [
                    min,
                    max,
                    Point::new(min.x, max.y),
                    Point::new(max.x, min.y),
                ] {
                    let (_, depth) = frame.to_local(corner);
                    extent = extent.max(depth);
                }
            }
        }
        extent
    }

    /// Mirrors the layout across the field's vertical midline `x = width/2`.
    pub fn mirrored(&self) -> SensorLayout {
        let w = self.field.width;
        let flip = |p: Point| Point::new(w - p.x, p.y);
        let sensors = self
            .sensors
            .iter()
            .map(|(pose, shape)| {
                let mut pose = pose.clone();
                pose.position = flip(pose.position);
                let shape = match shape {
                    CoverageShape::Disk { center, radius } => CoverageShape::Disk {
                        center: flip(*center),
                        radius: *radius,
                    },
                    CoverageShape::IsoscelesTriangle {
                        apex,
                        direction,
                        height,
                        base,
                    } => CoverageShape::IsoscelesTriangle {
                        apex: flip(*apex),
                        direction: (-direction.0, direction.1),
                        height: *height,
                        base: *base,
                    },
                };
                (pose, shape)
            })
            .collect();
        SensorLayout {
            kind: self.kind,
            field: self.field.clone(),
            pir: self.pir,
            spacing: self.spacing,
            sensors,
        }
    }
}

// ============================================================================
// Regions and the position map
// ============================================================================

/// A maximal connected run of grid cells sharing one covering-sensor set.
#[derive(Debug, Clone, Serialize)]
pub struct CoverageRegion {
    pub signature: Signature,
    /// Cell centers belonging to the region.
    pub cells: Vec<Point>,
    pub representative: Point,
}

/// Maps firing-sensor sets to representative coordinates.
///
/// Built by rasterizing every coverage shape on a uniform grid, grouping
/// cells by identical signature and 4-connectivity, and taking each region's
/// cell centroid (snapped back to the nearest member cell when the centroid
/// falls outside the region). Signatures that never occur alone get a
/// fallback entry at the sensor's full-shape centroid.
#[derive(Debug, Clone, Serialize)]
pub struct PositionMap {
    pub resolution: f64,
    pub regions: Vec<CoverageRegion>,
    by_signature: BTreeMap<Signature, Point>,
    fallback: BTreeMap<SensorId, Point>,
}

impl PositionMap {
    /// Representative for an exactly realized signature.
    pub fn lookup(&self, signature: &Signature) -> Option<Point> {
        self.by_signature.get(signature).copied()
    }

    /// Total lookup: exact region representative when the signature is
    /// realized, otherwise the mean of the members' single-sensor
    /// representatives.
    pub fn resolve(&self, signature: &Signature) -> Option<Point> {
        if signature.is_empty() {
            return None;
        }
        if let Some(p) = self.by_signature.get(signature) {
            return Some(*p);
        }
        let mut sx = 0.0;
        let mut sy = 0.0;
        let mut n = 0usize;
        for id in signature.ids() {
            let p = self
                .by_signature
                .get(&Signature::single(*id))
                .or_else(|| self.fallback.get(id))?;
            sx += p.x;
            sy += p.y;
            n += 1;
        }
        Some(Point::new(sx / n as f64, sy / n as f64))
    }

    pub fn signatures(&self) -> impl Iterator<Item = (&Signature, &Point)> {
        self.by_signature.iter()
    }
}

struct Grid {
    origin: Point,
    resolution: f64,
    nx: usize,
    ny: usize,
}

impl Grid {
    fn cell_center(&self, ix: usize, iy: usize) -> Point {
        Point::new(
            self.origin.x + (ix as f64 + 0.5) * self.resolution,
            self.origin.y + (iy as f64 + 0.5) * self.resolution,
        )
    }
}

/// Lays a resolution-aligned grid over all coverage shapes.
fn coverage_grid(layout: &SensorLayout, resolution: f64) -> Grid {
    let mut min = Point::new(f64::INFINITY, f64::INFINITY);
    let mut max = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (_, shape) in &layout.sensors {
        let (lo, hi) = shape.bbox();
        min.x = min.x.min(lo.x);
        min.y = min.y.min(lo.y);
        max.x = max.x.max(hi.x);
        max.y = max.y.max(hi.y);
    }
    // Anchor cell edges on multiples of the resolution so congruent regions
    // land on congruent cells.
    let origin = Point::new(
        (min.x / resolution).floor() * resolution - resolution,
        (min.y / resolution).floor() * resolution - resolution,
    );
    let nx = (((max.x - origin.x) / resolution).ceil() as usize) + 2;
    let ny = (((max.y - origin.y) / resolution).ceil() as usize) + 2;
    Grid {
        origin,
        resolution,
        nx,
        ny,
    }
}

/// Rasterizes the layout and extracts coverage regions and representatives.
///
/// `resolution` must be positive and no coarser than a quarter of the PIR
/// base diameter, otherwise overlap slivers disappear from the map.
pub fn build_position_map(
    layout: &SensorLayout,
    resolution: f64,
) -> Result<PositionMap, GeometryError> {
    let max_res = layout.pir.base_diameter / 4.0;
    if !(resolution > 0.0) || resolution > max_res {
        return Err(GeometryError::BadResolution {
            got: resolution,
            max: max_res,
        });
    }

    let grid = coverage_grid(layout, resolution);
    let mut cell_sig: Vec<Option<Signature>> = vec![None; grid.nx * grid.ny];
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            let sig = layout.covering_sensors(grid.cell_center(ix, iy));
            if !sig.is_empty() {
                cell_sig[iy * grid.nx + ix] = Some(sig);
            }
        }
    }

    // Flood-fill connected components of identical signature (4-connectivity).
    let mut visited = vec![false; grid.nx * grid.ny];
    let mut regions: Vec<CoverageRegion> = Vec::new();
    for start in 0..cell_sig.len() {
        if visited[start] || cell_sig[start].is_none() {
            continue;
        }
        let sig = cell_sig[start].clone().unwrap();
        let mut stack = vec![start];
        let mut cells: Vec<(usize, usize)> = Vec::new();
        visited[start] = true;
        while let Some(idx) = stack.pop() {
            let ix = idx % grid.nx;
            let iy = idx / grid.nx;
            cells.push((ix, iy));
            let mut push = |nix: usize, niy: usize| {
                let nidx = niy * grid.nx + nix;
                if !visited[nidx] && cell_sig[nidx].as_ref() == Some(&sig) {
                    visited[nidx] = true;
                    stack.push(nidx);
                }
            };
            if ix > 0 {
                push(ix - 1, iy);
            }
            if ix + 1 < grid.nx {
                push(ix + 1, iy);
            }
            if iy > 0 {
                push(ix, iy - 1);
            }
            if iy + 1 < grid.ny {
                push(ix, iy + 1);
            }
        }
        cells.sort_unstable();
        let centers: Vec<Point> = cells
            .iter()
            .map(|&(ix, iy)| grid.cell_center(ix, iy))
            .collect();
        let n = centers.len() as f64;
        let centroid = Point::new(
            centers.iter().map(|p| p.x).sum::<f64>() / n,
            centers.iter().map(|p| p.y).sum::<f64>() / n,
        );
        // Snap to the nearest member cell when the raw centroid escapes a
        // non-convex region.
        let half = resolution / 2.0;
        let inside = centers
            .iter()
            .any(|c| (c.x - centroid.x).abs() <= half && (c.y - centroid.y).abs() <= half);
        let representative = if inside {
            centroid
        } else {
            *centers
                .iter()
                .min_by(|a, b| {
                    a.distance(centroid)
                        .partial_cmp(&b.distance(centroid))
                        .unwrap()
                })
                .unwrap()
        };
        regions.push(CoverageRegion {
            signature: sig,
            cells: centers,
            representative,
        });
    }

    // Signature -> representative of its largest region (first wins ties,
    // scan order is deterministic).
    let mut by_signature: BTreeMap<Signature, Point> = BTreeMap::new();
    let mut best_size: BTreeMap<Signature, usize> = BTreeMap::new();
    for region in &regions {
        let sz = region.cells.len();
        if best_size
            .get(&region.signature)
            .map(|&b| sz > b)
            .unwrap_or(true)
        {
            best_size.insert(region.signature.clone(), sz);
            by_signature.insert(region.signature.clone(), region.representative);
        }
    }

    let mut fallback = BTreeMap::new();
    for (pose, shape) in &layout.sensors {
        if !by_signature.contains_key(&Signature::single(pose.id)) {
            fallback.insert(pose.id, shape.centroid());
        }
    }

    Ok(PositionMap {
        resolution,
        regions,
        by_signature,
        fallback,
    })
}

/// Fraction of the monitored band covered by no sensor.
///
/// The band is the strip of points within `band` meters of the field
/// boundary, on either side of it, sampled on the grid.
pub fn blind_area_fraction(
    layout: &SensorLayout,
    band: f64,
    resolution: f64,
) -> Result<f64, GeometryError> {
    if !(band > 0.0) {
        return Err(GeometryError::BadBand(band));
    }
    if !(resolution > 0.0) {
        return Err(GeometryError::BadResolution {
            got: resolution,
            max: layout.pir.base_diameter / 4.0,
        });
    }
    let field = &layout.field;
    let origin = Point::new(-band - resolution, -band - resolution);
    let nx = ((field.width + 2.0 * band) / resolution).ceil() as usize + 2;
    let ny = ((field.height + 2.0 * band) / resolution).ceil() as usize + 2;
    let mut band_cells = 0usize;
    let mut blind_cells = 0usize;
    for iy in 0..ny {
        for ix in 0..nx {
            let p = Point::new(
                origin.x + (ix as f64 + 0.5) * resolution,
                origin.y + (iy as f64 + 0.5) * resolution,
            );
            if field.boundary_distance(p) > band {
                continue;
            }
            band_cells += 1;
            if layout.covering_sensors(p).is_empty() {
                blind_cells += 1;
            }
        }
    }
    if band_cells == 0 {
        return Ok(0.0);
    }
    Ok(blind_cells as f64 / band_cells as f64)
}

// ============================================================================
// Exports
// ============================================================================

/// JSON document describing a layout and its position map.
#[derive(Debug, Serialize)]
pub struct LayoutExport<'a> {
    pub kind: LayoutKind,
    pub field: &'a FieldSpec,
    pub pir: &'a PirSpec,
    pub spacing: f64,
    pub sensors: Vec<&'a SensorPose>,
    pub regions: Vec<RegionExport>,
    pub blind_fraction: f64,
    pub blind_band: f64,
}

#[derive(Debug, Serialize)]
pub struct RegionExport {
    pub region_id: usize,
    pub signature: String,
    pub x: f64,
    pub y: f64,
    pub cells: usize,
}

pub fn layout_export<'a>(
    layout: &'a SensorLayout,
    map: &PositionMap,
    blind_band: f64,
    blind_fraction: f64,
) -> LayoutExport<'a> {
    LayoutExport {
        kind: layout.kind,
        field: &layout.field,
        pir: &layout.pir,
        spacing: layout.spacing,
        sensors: layout.sensors.iter().map(|(p, _)| p).collect(),
        regions: map
            .regions
            .iter()
            .enumerate()
            .map(|(i, r)| RegionExport {
                region_id: i,
                signature: r.signature.to_string(),
                x: r.representative.x,
                y: r.representative.y,
                cells: r.cells.len(),
            })
            .collect(),
        blind_fraction,
        blind_band,
    }
}

/// Writes the `(regionId, signature, x, y)` table.
pub fn write_region_csv<W: std::io::Write>(
    map: &PositionMap,
    out: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["region_id", "signature", "x", "y"])?;
    for (i, r) in map.regions.iter().enumerate() {
        w.write_record([
            i.to_string(),
            r.signature.to_string(),
            format!("{:.4}", r.representative.x),
            format!("{:.4}", r.representative.y),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// ============================================================================
// Tests
// ============================================================================

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn field25() -> FieldSpec {
        FieldSpec::new(25.0, 25.0).unwrap()
    }

    fn pir() -> PirSpec {
        PirSpec::new(7.0, 5.0).unwrap()
    }

    fn layout(kind: LayoutKind, spacing: f64) -> SensorLayout {
        build_layout(&field25(), &pir(), kind, spacing, MountHeights::default(), 0.0).unwrap()
    }

    #[test]
    fn cone_angle_from_base_and_height() {
        let a = pir().cone_angle();
        assert_relative_eq!(a, 2.0 * (5.0f64 / 14.0).atan(), epsilon = 1e-12);
        assert_relative_eq!(a.to_degrees(), 39.3076, epsilon = 1e-3);
    }

    #[test]
    fn layout_b_sensor_count_per_side() {
        let l = layout(LayoutKind::B, 2.5);
        for side in SideLabel::ALL {
            assert_eq!(l.side_sensors(side).len(), 10, "side {side}");
        }
    }

    #[test]
    fn layout_a_counts_and_tangency() {
        let l = layout(LayoutKind::A, 5.0);
        for side in SideLabel::ALL {
            let sensors = l.side_sensors(side);
            assert_eq!(sensors.len(), 10); // 5 per row, 2 rows
        }
        // Same-row adjacent disks are exactly tangent: centers 5 m apart,
        // radius 2.5 m.
        let row0: Vec<&SensorPose> = l
            .side_sensors(SideLabel::A)
            .into_iter()
            .filter(|p| p.row == 0)
            .collect();
        assert_eq!(row0.len(), 5);
        for pair in row0.windows(2) {
            assert_relative_eq!(pair[0].position.distance(pair[1].position), 5.0);
        }
    }

    #[test]
    fn layout_c_rows_share_positions() {
        let l = layout(LayoutKind::C, 5.0);
        let side_a = l.side_sensors(SideLabel::A);
        let (row0, row1): (Vec<_>, Vec<_>) = side_a.iter().partition(|p| p.row == 0);
        assert_eq!(row0.len(), row1.len());
        for (v, h) in row0.iter().zip(row1.iter()) {
            assert_eq!(v.position.x, h.position.x);
            assert_eq!(v.position.y, h.position.y);
            assert_eq!(v.orientation, Orientation::VerticalDown);
            assert_eq!(h.orientation, Orientation::HorizontalOutward);
        }
    }

    #[test]
    fn rejects_bad_spacing() {
        let err = build_layout(
            &field25(),
            &pir(),
            LayoutKind::A,
            0.0,
            MountHeights::default(),
            0.0,
        );
        assert!(matches!(err, Err(GeometryError::NonPositiveSpacing(_))));
        let err = build_layout(
            &field25(),
            &pir(),
            LayoutKind::B,
            6.0,
            MountHeights::default(),
            0.0,
        );
        assert!(matches!(err, Err(GeometryError::GapTooLarge { .. })));
        // A wider allowance admits the same spacing.
        assert!(build_layout(
            &field25(),
            &pir(),
            LayoutKind::B,
            6.0,
            MountHeights::default(),
            1.5,
        )
        .is_ok());
    }

    #[test]
    fn covering_sensors_disk_center_and_beyond_cone() {
        let l = layout(LayoutKind::C, 5.0);
        // At a vertical sensor's ground projection the sensor fires.
        let vertical = l
            .sensors
            .iter()
            .find(|(p, _)| p.orientation == Orientation::VerticalDown)
            .unwrap();
        assert!(l
            .covering_sensors(vertical.0.position)
            .contains(vertical.0.id));
        // 8 m outward of a horizontal sensor is past the 7 m cone.
        let horizontal = l
            .sensors
            .iter()
            .find(|(p, _)| p.orientation == Orientation::HorizontalOutward && p.side == SideLabel::A)
            .unwrap();
        let p = horizontal.0.position.add(0.0, -8.0);
        assert!(!l.covering_sensors(p).contains(horizontal.0.id));
    }

    fn two_disk_layout(offset: f64) -> SensorLayout {
        let field = FieldSpec::new(30.0, 30.0).unwrap();
        let mk = |id: u32, x: f64| {
            (
                SensorPose {
                    id,
                    side: SideLabel::A,
                    index_on_side: id,
                    row: 0,
                    position: Point::new(x, 0.0),
                    mount_height: 5.0,
                    orientation: Orientation::VerticalDown,
                },
                CoverageShape::Disk {
                    center: Point::new(x, 0.0),
                    radius: 2.5,
                },
            )
        };
        SensorLayout::custom(
            field,
            pir(),
            LayoutKind::A,
            offset,
            vec![mk(0, 10.0), mk(1, 10.0 + offset)],
        )
    }

    #[test]
    fn tangent_disks_make_two_regions_at_their_centers() {
        let l = two_disk_layout(5.0);
        let map = build_position_map(&l, 0.25).unwrap();
        let r0 = map.lookup(&Signature::single(0)).unwrap();
        let r1 = map.lookup(&Signature::single(1)).unwrap();
        assert_relative_eq!(r0.x, 10.0, epsilon = 1e-9);
        assert_relative_eq!(r0.y, 0.0, epsilon = 1e-9);
        assert_relative_eq!(r1.x, 15.0, epsilon = 1e-9);
        assert!(map.lookup(&Signature::new(vec![0, 1])).is_none());
    }

    #[test]
    fn symmetric_overlap_representative_sits_on_the_axis() {
        let l = two_disk_layout(2.5);
        let map = build_position_map(&l, 0.25).unwrap();
        let overlap = map.lookup(&Signature::new(vec![0, 1])).unwrap();
        // Disks at 10.0 and 12.5 overlap symmetrically about 11.25.
        assert_relative_eq!(overlap.x, 11.25, epsilon = 1e-9);
    }

    #[test]
    fn every_sensor_appears_in_some_signature() {
        for kind in [LayoutKind::A, LayoutKind::B, LayoutKind::C] {
            let spacing = if kind == LayoutKind::B { 2.5 } else { 5.0 };
            let l = layout(kind, spacing);
            let map = build_position_map(&l, 0.25).unwrap();
            for (pose, _) in &l.sensors {
                let appears = map
                    .signatures()
                    .any(|(sig, _)| sig.contains(pose.id));
                assert!(appears, "sensor {} missing from all signatures", pose.id);
            }
        }
    }

    #[test]
    fn regions_partition_covered_cells() {
        let l = layout(LayoutKind::B, 2.5);
        let map = build_position_map(&l, 0.25).unwrap();
        let mut seen = std::collections::HashSet::new();
        for region in &map.regions {
            for cell in &region.cells {
                let key = (
                    (cell.x / 0.25).round() as i64,
                    (cell.y / 0.25).round() as i64,
                );
                assert!(seen.insert(key), "cell {cell} in two regions");
                // Cell signature matches the region signature.
                assert_eq!(l.covering_sensors(*cell), region.signature);
            }
        }
    }

    #[test]
    fn representatives_lie_inside_their_regions() {
        for kind in [LayoutKind::A, LayoutKind::B, LayoutKind::C] {
            let spacing = if kind == LayoutKind::B { 2.5 } else { 5.0 };
            let map = build_position_map(&layout(kind, spacing), 0.25).unwrap();
            for region in &map.regions {
                let near = region.cells.iter().any(|c| {
                    (c.x - region.representative.x).abs() <= 0.125 + 1e-9
                        && (c.y - region.representative.y).abs() <= 0.125 + 1e-9
                });
                assert!(near, "representative escaped its region");
            }
        }
    }

    #[test]
    fn mirrored_layout_mirrors_representatives() {
        let l = layout(LayoutKind::B, 2.5);
        let map = build_position_map(&l, 0.25).unwrap();
        let mirrored = build_position_map(&l.mirrored(), 0.25).unwrap();
        let w = l.field.width;
        for (sig, rep) in map.signatures() {
            let twin = mirrored
                .lookup(sig)
                .unwrap_or_else(|| panic!("signature {sig} lost in mirror"));
            assert!(
                (twin.x - (w - rep.x)).abs() <= 0.25 + 1e-9,
                "x {} vs mirrored {}",
                rep.x,
                twin.x
            );
            assert!((twin.y - rep.y).abs() <= 0.25 + 1e-9);
        }
    }

    #[test]
    fn layout_b_singleton_representatives_sit_at_sensor_x() {
        // Interior side-A sensors of layout B. Carving by the two
        // neighbouring triangles is symmetric, so the representative's x is
        // exactly the sensor's x and y is the same value for all of them.
        let l = layout(LayoutKind::B, 2.5);
        let map = build_position_map(&l, 0.25).unwrap();
        let mut depth = None;
        for x in [5.0, 10.0, 15.0, 20.0] {
            let pose = l
                .side_sensors(SideLabel::A)
                .into_iter()
                .find(|p| p.position.x == x)
                .unwrap();
            let rep = map.lookup(&Signature::single(pose.id)).unwrap();
            assert_eq!(rep.x, x, "singleton representative drifted in x");
            assert!(rep.y < 0.0 && rep.y > -7.0, "rep outside side-A band");
            match depth {
                None => depth = Some(rep.y),
                Some(d) => assert_eq!(rep.y, d, "inconsistent depth across sensors"),
            }
        }
    }

    #[test]
    fn table_walk_signature_sequence_matches_m2() {
        // Straight walk parallel to side A at depth 5, polled every 5 s with
        // a 5 s pause at x = 15, lands on singleton regions whose
        // representatives read 20, 15, 15, 10, 5.
        let l = layout(LayoutKind::B, 2.5);
        let map = build_position_map(&l, 0.25).unwrap();
        let positions = [20.0, 15.0, 15.0, 10.0, 5.0];
        let mut xs = Vec::new();
        for x in positions {
            let sig = l.covering_sensors(Point::new(x, -5.0));
            assert_eq!(sig.len(), 1, "expected a singleton at x={x}");
            xs.push(map.resolve(&sig).unwrap().x);
        }
        assert_eq!(xs, vec![20.0, 15.0, 15.0, 10.0, 5.0]);
    }

    #[test]
    fn blind_fraction_zero_when_band_inside_one_disk() {
        let field = FieldSpec::new(1.0, 1.0).unwrap();
        let sensors = vec![(
            SensorPose {
                id: 0,
                side: SideLabel::A,
                index_on_side: 0,
                row: 0,
                position: Point::new(0.5, 0.5),
                mount_height: 5.0,
                orientation: Orientation::VerticalDown,
            },
            CoverageShape::Disk {
                center: Point::new(0.5, 0.5),
                radius: 2.5,
            },
        )];
        let l = SensorLayout::custom(field, pir(), LayoutKind::A, 1.0, sensors);
        let f = blind_area_fraction(&l, 0.2, 0.05).unwrap();
        assert_eq!(f, 0.0);
    }

    #[test]
    fn blind_fractions_order_c_above_a_near_boundary() {
        let a = blind_area_fraction(&layout(LayoutKind::A, 5.0), 2.5, 0.25).unwrap();
        let c = blind_area_fraction(&layout(LayoutKind::C, 5.0), 2.5, 0.25).unwrap();
        assert!(c > a, "expected blind(C)={c} > blind(A)={a}");
    }

    #[test]
    fn layout_b_blind_near_boundary_is_positive() {
        let b = blind_area_fraction(&layout(LayoutKind::B, 2.5), 1.0, 0.1).unwrap();
        assert!(b > 0.0, "triangles leave blind slivers near the boundary");
    }

    #[test]
    fn resolution_precondition() {
        let l = layout(LayoutKind::B, 2.5);
        assert!(build_position_map(&l, 2.0).is_err()); // > h/4 = 1.25
        assert!(build_position_map(&l, 0.0).is_err());
    }
}
