//! Slot and entrance geometry.
//!
//! Image coordinates have the origin at the top-left corner, x rightward and
//! y downward. A parking slot entrance is the segment between two adjacent
//! junctions; the slot interior extends from the entrance along the slot
//! orientation. All functions here are pure.

use crate::{Error, Result};

/// Displacement from a junction to its orientation ROI center, pixels at 1x scale.
pub const DEFAULT_K1: f64 = 50.0;
/// Displacement from the entrance center to the class ROI center, pixels at 1x scale.
pub const DEFAULT_K2: f64 = 32.0;
/// Default center-distance threshold for duplicate suppression, pixels.
pub const DEFAULT_NMS_DIST: f64 = 16.0;

const UNIT_TOL: f64 = 1e-6;

/// A point in image coordinates (pixels).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }

    pub fn midpoint(&self, other: &Point2) -> Point2 {
        Point2::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }

    /// Point displaced by `t` times the unit vector `dir`.
    pub fn offset(&self, dir: UnitVec2, t: f64) -> Point2 {
        Point2::new(self.x + t * dir.cx, self.y + t * dir.cy)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// A unit direction vector stored as (cos, sin) components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitVec2 {
    pub cx: f64,
    pub cy: f64,
}

impl UnitVec2 {
    /// Normalizes (vx, vy); fails on a near-zero vector.
    pub fn from_components(vx: f64, vy: f64) -> Result<Self> {
        let norm = (vx * vx + vy * vy).sqrt();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::DegenerateOrientation);
        }
        Ok(Self {
            cx: vx / norm,
            cy: vy / norm,
        })
    }

    pub fn from_angle_rad(theta: f64) -> Self {
        Self {
            cx: theta.cos(),
            cy: theta.sin(),
        }
    }

    pub fn is_unit(&self) -> bool {
        (self.cx * self.cx + self.cy * self.cy - 1.0).abs() <= UNIT_TOL
    }

    pub fn dot(&self, other: &UnitVec2) -> f64 {
        self.cx * other.cx + self.cy * other.cy
    }

    /// z component of the 2D cross product, in screen coordinates.
    pub fn cross(&self, other: &UnitVec2) -> f64 {
        self.cx * other.cy - self.cy * other.cx
    }

    pub fn negate(&self) -> UnitVec2 {
        UnitVec2 {
            cx: -self.cx,
            cy: -self.cy,
        }
    }

    /// Rotates by `theta` radians (positive rotates x-axis toward y-axis).
    pub fn rotate_rad(&self, theta: f64) -> UnitVec2 {
        let (s, c) = theta.sin_cos();
        UnitVec2 {
            cx: self.cx * c - self.cy * s,
            cy: self.cx * s + self.cy * c,
        }
    }

    /// Unsigned angle to another unit vector, in degrees.
    pub fn angle_to_deg(&self, other: &UnitVec2) -> f64 {
        self.dot(other).clamp(-1.0, 1.0).acos().to_degrees()
    }
}

/// Parking slot type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotType {
    Perpendicular,
    Parallel,
    Slanted,
}

impl SlotType {
    pub const ALL: [SlotType; 3] = [SlotType::Perpendicular, SlotType::Parallel, SlotType::Slanted];

    /// Index into the one-hot type encoding.
    pub fn index(&self) -> usize {
        match self {
            SlotType::Perpendicular => 0,
            SlotType::Parallel => 1,
            SlotType::Slanted => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<SlotType> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SlotType::Perpendicular => "perpendicular",
            SlotType::Parallel => "parallel",
            SlotType::Slanted => "slanted",
        }
    }

    pub fn from_str(s: &str) -> Option<SlotType> {
        match s {
            "perpendicular" => Some(SlotType::Perpendicular),
            "parallel" => Some(SlotType::Parallel),
            "slanted" => Some(SlotType::Slanted),
            _ => None,
        }
    }
}

/// Slot occupancy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Occupancy {
    Vacant,
    Occupied,
}

impl Occupancy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Occupancy::Vacant => "vacant",
            Occupancy::Occupied => "occupied",
        }
    }

    pub fn from_str(s: &str) -> Option<Occupancy> {
        match s {
            "vacant" => Some(Occupancy::Vacant),
            "occupied" => Some(Occupancy::Occupied),
            _ => None,
        }
    }

    /// 1.0 for occupied, 0.0 for vacant (the regression target convention).
    pub fn as_target(&self) -> f64 {
        match self {
            Occupancy::Vacant => 0.0,
            Occupancy::Occupied => 1.0,
        }
    }
}

/// A parking slot entrance: the region proposal unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotEntrance {
    /// Entrance center.
    pub center: Point2,
    /// Entrance direction (along the guiding line, j1 toward j2).
    pub eo: UnitVec2,
    /// Entrance length, pixels.
    pub length: f64,
    /// Slot orientation (into the slot interior).
    pub so: UnitVec2,
    /// Proposal confidence in [0, 1].
    pub score: f64,
}

impl SlotEntrance {
    pub fn validate(&self) -> Result<()> {
        if !self.center.is_finite() {
            return Err(Error::Msg("non-finite entrance center".into()));
        }
        if !(self.length > 0.0) {
            return Err(Error::ZeroLengthEntrance);
        }
        if !self.eo.is_unit() || !self.so.is_unit() {
            return Err(Error::DegenerateOrientation);
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::Msg(format!("entrance score {} outside [0,1]", self.score)));
        }
        Ok(())
    }

    /// Entrance endpoints (rough junction locations), j1 then j2.
    pub fn endpoints(&self) -> (Point2, Point2) {
        let half = 0.5 * self.length;
        (
            self.center.offset(self.eo, -half),
            self.center.offset(self.eo, half),
        )
    }
}

/// A complete parking slot: the ground-truth and final-output unit.
///
/// Junctions are ordered so that `cross(eo, so) >= 0` in screen coordinates,
/// with `eo` the j1->j2 direction and `so` the mean separating-line
/// orientation; `sep1`/`sep2` attach to `j1`/`j2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParkingSlot {
    pub j1: Point2,
    pub j2: Point2,
    pub sep1: UnitVec2,
    pub sep2: UnitVec2,
    pub slot_type: SlotType,
    pub occupancy: Occupancy,
}

impl ParkingSlot {
    pub fn validate(&self) -> Result<()> {
        if self.j1.distance(&self.j2) <= 0.0 {
            return Err(Error::ZeroLengthEntrance);
        }
        if !self.sep1.is_unit() || !self.sep2.is_unit() {
            return Err(Error::DegenerateOrientation);
        }
        Ok(())
    }
}

/// The five region-of-interest centers designated from one proposal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiSet {
    /// Location ROI centers: the rough junctions.
    pub loc1: Point2,
    pub loc2: Point2,
    /// Orientation ROI centers: junctions displaced along the slot orientation.
    pub ori1: Point2,
    pub ori2: Point2,
    /// Type/occupancy ROI center: entrance center displaced into the slot.
    pub cls: Point2,
}

/// Recovers the entrance representation from a full slot.
///
/// The slot orientation is the normalized mean of the two separating-line
/// orientations; the score of a ground-truth entrance is 1.
pub fn entrance_from_slot(slot: &ParkingSlot) -> Result<SlotEntrance> {
    let length = slot.j1.distance(&slot.j2);
    if length <= 0.0 {
        return Err(Error::ZeroLengthEntrance);
    }
    let eo = UnitVec2::from_components(slot.j2.x - slot.j1.x, slot.j2.y - slot.j1.y)?;
    let so = UnitVec2::from_components(slot.sep1.cx + slot.sep2.cx, slot.sep1.cy + slot.sep2.cy)?;
    Ok(SlotEntrance {
        center: slot.j1.midpoint(&slot.j2),
        eo,
        length,
        so,
        score: 1.0,
    })
}

/// Places the five ROI centers for one proposal.
///
/// Location ROIs sit on the entrance endpoints; orientation ROIs are those
/// endpoints displaced by `k1` along the slot orientation; the class ROI is
/// the entrance center displaced by `k2`. Centers may fall outside the image;
/// feature extraction pads with zeros.
pub fn designate_rois(e: &SlotEntrance, k1: f64, k2: f64) -> RoiSet {
    let (loc1, loc2) = e.endpoints();
    RoiSet {
        loc1,
        loc2,
        ori1: loc1.offset(e.so, k1),
        ori2: loc2.offset(e.so, k1),
        cls: e.center.offset(e.so, k2),
    }
}

/// Greedy duplicate suppression on entrance proposals.
///
/// Proposals are visited in descending score order; any proposal whose center
/// lies within `dist_thresh` of an already-kept center is dropped. The output
/// is sorted by score and the operation is idempotent.
pub fn nms_entrances(props: &[SlotEntrance], dist_thresh: f64) -> Vec<SlotEntrance> {
    let mut order: Vec<usize> = (0..props.len()).collect();
    // Stable tie-break on the original index keeps the result deterministic.
    order.sort_by(|&a, &b| {
        props[b]
            .score
            .partial_cmp(&props[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<SlotEntrance> = Vec::new();
    for &i in &order {
        let p = &props[i];
        let dup = kept
            .iter()
            .any(|k| k.center.distance(&p.center) <= dist_thresh);
        if !dup {
            kept.push(*p);
        }
    }
    kept
}

/// Builds a slot from refined second-stage outputs, enforcing the canonical
/// junction ordering (swap junctions and separating lines when violated).
pub fn assemble_slot(
    j1: Point2,
    j2: Point2,
    sep1: UnitVec2,
    sep2: UnitVec2,
    slot_type: SlotType,
    occupancy: Occupancy,
) -> Result<ParkingSlot> {
    let eo = UnitVec2::from_components(j2.x - j1.x, j2.y - j1.y)
        .map_err(|_| Error::ZeroLengthEntrance)?;
    let so = UnitVec2::from_components(sep1.cx + sep2.cx, sep1.cy + sep2.cy)?;
    let slot = if eo.cross(&so) >= 0.0 {
        ParkingSlot {
            j1,
            j2,
            sep1,
            sep2,
            slot_type,
            occupancy,
        }
    } else {
        ParkingSlot {
            j1: j2,
            j2: j1,
            sep1: sep2,
            sep2: sep1,
            slot_type,
            occupancy,
        }
    };
    Ok(slot)
}
