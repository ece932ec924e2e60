//! Bidirectional translation between geometric ground truth / network outputs
//! and the grid / ROI tensor targets used by the losses.

use crate::diffnet::model::{HIGH_STRIDE, LOW_STRIDE};
use crate::diffnet::Tensor;
use crate::geometry::{
    assemble_slot, entrance_from_slot, Occupancy, ParkingSlot, Point2, RoiSet, SlotEntrance,
    SlotType, UnitVec2,
};
use crate::{Error, Result};

/// Default proposal-possibility threshold.
pub const DEFAULT_TAU_PROP: f64 = 0.5;
/// Default junction-possibility threshold.
pub const DEFAULT_TAU_J: f64 = 0.5;

/// Output grid of the first stage: one cell per stride-32 feature map cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// Grid height in cells.
    pub h: usize,
    /// Grid width in cells.
    pub w: usize,
    /// Cell width in pixels.
    pub cell_w: f64,
    /// Cell height in pixels.
    pub cell_h: f64,
    /// Entrance length normalizer, pixels.
    pub l_max: f64,
}

impl GridSpec {
    /// Grid covering an image at the backbone's stride-32 resolution.
    pub fn for_image(image_w: usize, image_h: usize, l_max: f64) -> Result<Self> {
        if image_w % LOW_STRIDE != 0 || image_h % LOW_STRIDE != 0 {
            return Err(Error::IndivisibleImage {
                w: image_w,
                h: image_h,
                stride: LOW_STRIDE,
            });
        }
        if !(l_max > 0.0) {
            return Err(Error::InvalidConfig("l_max must be positive".into()));
        }
        Ok(Self {
            h: image_h / LOW_STRIDE,
            w: image_w / LOW_STRIDE,
            cell_w: LOW_STRIDE as f64,
            cell_h: LOW_STRIDE as f64,
            l_max,
        })
    }

    pub fn image_w(&self) -> f64 {
        self.w as f64 * self.cell_w
    }

    pub fn image_h(&self) -> f64 {
        self.h as f64 * self.cell_h
    }

    /// Cell (row, col) containing a point.
    pub fn cell_of(&self, p: Point2) -> (usize, usize) {
        (
            (p.y / self.cell_h).floor() as usize,
            (p.x / self.cell_w).floor() as usize,
        )
    }

    /// Center of cell (row, col) in image coordinates.
    pub fn cell_center(&self, row: usize, col: usize) -> Point2 {
        Point2::new(
            (col as f64 + 0.5) * self.cell_w,
            (row as f64 + 0.5) * self.cell_h,
        )
    }
}

/// Per-cell first-stage supervision (or an identically shaped prediction).
///
/// All channels are stored channel-major to match the RPN output layout:
/// `ep`/`el` are [1, h, w], `exy`/`eo`/`so` are [2, h, w] with x before y.
/// Regression channels are meaningful only where `ep` is 1; `ep` doubles as
/// the positive-cell mask.
#[derive(Debug, Clone, PartialEq)]
pub struct RpnTargets {
    pub ep: Tensor,
    pub exy: Tensor,
    pub el: Tensor,
    pub eo: Tensor,
    pub so: Tensor,
}

impl RpnTargets {
    pub fn zeros(grid: &GridSpec) -> Self {
        let (h, w) = (grid.h, grid.w);
        Self {
            ep: Tensor::zeros(&[1, h, w]),
            exy: Tensor::zeros(&[2, h, w]),
            el: Tensor::zeros(&[1, h, w]),
            eo: Tensor::zeros(&[2, h, w]),
            so: Tensor::zeros(&[2, h, w]),
        }
    }

    pub fn grid_dims(&self) -> (usize, usize) {
        let s = self.ep.shape();
        (s[1], s[2])
    }
}

/// Second-stage ROI geometry: window size and the feature-map strides.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiSpec {
    /// Junction/orientation window width, pixels (5 high-res cells).
    pub w_roi: f64,
    /// Window height, pixels.
    pub h_roi: f64,
    pub high_stride: usize,
    pub low_stride: usize,
}

impl Default for RoiSpec {
    fn default() -> Self {
        Self {
            w_roi: (5 * HIGH_STRIDE) as f64,
            h_roi: (5 * HIGH_STRIDE) as f64,
            high_stride: HIGH_STRIDE,
            low_stride: LOW_STRIDE,
        }
    }
}

/// Per-ROI second-stage supervision (or an identically shaped prediction).
///
/// Junction rows are indexed in lockstep with orientation rows: row 2p is the
/// first junction of proposal p, row 2p+1 the second. SCN rows number R/2,
/// one per proposal. `jp` doubles as the junction mask; `i_slot` masks the
/// SCN rows (it is all zeros on predictions and ignored by decoding).
#[derive(Debug, Clone, PartialEq)]
pub struct SdnScnTargets {
    /// Junction possibility, [R].
    pub jp: Tensor,
    /// Relative junction location in sigmoid range, [R, 2].
    pub jxy: Tensor,
    /// Separating-line orientation, [R, 2].
    pub jo: Tensor,
    /// Slot type one-hot (perpendicular, parallel, slanted), [R/2, 3].
    pub st: Tensor,
    /// Occupancy (1 occupied, 0 vacant), [R/2].
    pub socc: Tensor,
    /// SCN supervision mask, [R/2].
    pub i_slot: Tensor,
    /// Number of junction ROIs (2 per proposal).
    pub r: usize,
}

/// Conventional slot depth used for the point-in-slot test: parking bays are
/// deeper than their entrance except parallel slots, which are shallower.
pub fn slot_depth(slot: &ParkingSlot) -> f64 {
    let len = slot.j1.distance(&slot.j2);
    match slot.slot_type {
        SlotType::Parallel => (0.55 * len).max(48.0),
        _ => 1.5 * len,
    }
}

/// Slot quadrilateral: entrance segment plus the two separating lines
/// extended to the conventional depth.
pub fn slot_polygon(slot: &ParkingSlot) -> [Point2; 4] {
    let d = slot_depth(slot);
    [
        slot.j1,
        slot.j2,
        slot.j2.offset(slot.sep2, d),
        slot.j1.offset(slot.sep1, d),
    ]
}

fn point_in_convex_quad(p: Point2, quad: &[Point2; 4]) -> bool {
    let mut pos = false;
    let mut neg = false;
    for i in 0..4 {
        let a = quad[i];
        let b = quad[(i + 1) % 4];
        let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
        if cross > 1e-9 {
            pos = true;
        }
        if cross < -1e-9 {
            neg = true;
        }
    }
    !(pos && neg)
}

/// Encodes ground-truth slots onto the first-stage grid.
///
/// The cell containing each entrance center gets possibility 1, the
/// cell-relative offset shifted into [0, 1], the length normalized by
/// `l_max` (clamped, since the sigmoid output cannot exceed 1), and the two
/// unit orientations. Two centers in one cell is an error.
pub fn encode_rpn(gts: &[ParkingSlot], grid: &GridSpec) -> Result<RpnTargets> {
    let mut t = RpnTargets::zeros(grid);
    let (h, w) = (grid.h, grid.w);
    let plane = h * w;
    for gt in gts {
        let e = entrance_from_slot(gt)?;
        let c = e.center;
        if !(c.x >= 0.0 && c.x < grid.image_w() && c.y >= 0.0 && c.y < grid.image_h()) {
            return Err(Error::CenterOutsideImage {
                x: c.x,
                y: c.y,
                w: grid.image_w() as usize,
                h: grid.image_h() as usize,
            });
        }
        let (row, col) = grid.cell_of(c);
        let idx = row * w + col;
        if t.ep.data()[idx] != 0.0 {
            return Err(Error::CellCollision { row, col });
        }
        let cc = grid.cell_center(row, col);
        t.ep.data_mut()[idx] = 1.0;
        t.exy.data_mut()[idx] = (c.x - cc.x) / grid.cell_w + 0.5;
        t.exy.data_mut()[plane + idx] = (c.y - cc.y) / grid.cell_h + 0.5;
        t.el.data_mut()[idx] = (e.length / grid.l_max).clamp(0.0, 1.0);
        t.eo.data_mut()[idx] = e.eo.cx;
        t.eo.data_mut()[plane + idx] = e.eo.cy;
        t.so.data_mut()[idx] = e.so.cx;
        t.so.data_mut()[plane + idx] = e.so.cy;
    }
    Ok(t)
}

/// Proposals decoded from a first-stage prediction, plus the count of cells
/// dropped for an unnormalizable orientation.
#[derive(Debug, Clone)]
pub struct DecodedProposals {
    pub proposals: Vec<SlotEntrance>,
    pub dropped: usize,
}

/// Decodes an activation-applied first-stage prediction back to entrance
/// proposals. A cell proposes iff its possibility strictly exceeds
/// `tau_prop` (an untrained all-zero network sits exactly on 0.5 and emits
/// nothing). Inverse of [`encode_rpn`] on exact targets.
pub fn decode_rpn(pred: &RpnTargets, grid: &GridSpec, tau_prop: f64) -> DecodedProposals {
    let (h, w) = pred.grid_dims();
    debug_assert_eq!((h, w), (grid.h, grid.w));
    let plane = h * w;
    let mut proposals = Vec::new();
    let mut dropped = 0usize;
    for row in 0..h {
        for col in 0..w {
            let idx = row * w + col;
            let score = pred.ep.data()[idx];
            if !(score > tau_prop) {
                continue;
            }
            let cc = grid.cell_center(row, col);
            let center = Point2::new(
                cc.x + (pred.exy.data()[idx] - 0.5) * grid.cell_w,
                cc.y + (pred.exy.data()[plane + idx] - 0.5) * grid.cell_h,
            );
            let length = pred.el.data()[idx] * grid.l_max;
            let eo = UnitVec2::from_components(pred.eo.data()[idx], pred.eo.data()[plane + idx]);
            let so = UnitVec2::from_components(pred.so.data()[idx], pred.so.data()[plane + idx]);
            match (eo, so) {
                (Ok(eo), Ok(so)) if length > 0.0 => proposals.push(SlotEntrance {
                    center,
                    eo,
                    length,
                    so,
                    score,
                }),
                _ => dropped += 1,
            }
        }
    }
    DecodedProposals { proposals, dropped }
}

/// Encodes second-stage supervision for a batch of designated ROI sets.
///
/// A junction ROI is positive iff a ground-truth junction falls inside its
/// window (and within `match_radius`); the nearest such junction supplies the
/// offset and separating-line targets, ties broken by smaller index. An SCN
/// row is positive iff the class-ROI center lies inside a ground-truth slot
/// polygon. Unmatched rows carry zero masks and zeroed regression targets.
pub fn encode_sdn_scn(
    rois: &[RoiSet],
    gts: &[ParkingSlot],
    spec: &RoiSpec,
    match_radius: f64,
) -> SdnScnTargets {
    let n = rois.len();
    let r = 2 * n;
    let mut jp = Tensor::zeros(&[r]);
    let mut jxy = Tensor::zeros(&[r, 2]);
    let mut jo = Tensor::zeros(&[r, 2]);
    let mut st = Tensor::zeros(&[n, 3]);
    let mut socc = Tensor::zeros(&[n]);
    let mut i_slot = Tensor::zeros(&[n]);

    // Ground-truth junctions with their separating-line orientations.
    let junctions: Vec<(Point2, UnitVec2)> = gts
        .iter()
        .flat_map(|g| [(g.j1, g.sep1), (g.j2, g.sep2)])
        .collect();
    let polygons: Vec<[Point2; 4]> = gts.iter().map(slot_polygon).collect();

    for (p, roi) in rois.iter().enumerate() {
        for (slot_idx, center) in [(2 * p, roi.loc1), (2 * p + 1, roi.loc2)] {
            let mut best: Option<(usize, f64)> = None;
            for (ji, (jpt, _)) in junctions.iter().enumerate() {
                let dx = jpt.x - center.x;
                let dy = jpt.y - center.y;
                if dx.abs() > 0.5 * spec.w_roi || dy.abs() > 0.5 * spec.h_roi {
                    continue;
                }
                let d = (dx * dx + dy * dy).sqrt();
                if d > match_radius {
                    continue;
                }
                if best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((ji, d));
                }
            }
            if let Some((ji, _)) = best {
                let (jpt, sep) = junctions[ji];
                jp.data_mut()[slot_idx] = 1.0;
                jxy.data_mut()[slot_idx * 2] = (jpt.x - center.x) / spec.w_roi + 0.5;
                jxy.data_mut()[slot_idx * 2 + 1] = (jpt.y - center.y) / spec.h_roi + 0.5;
                jo.data_mut()[slot_idx * 2] = sep.cx;
                jo.data_mut()[slot_idx * 2 + 1] = sep.cy;
            }
        }
        if let Some(gi) = polygons
            .iter()
            .position(|quad| point_in_convex_quad(roi.cls, quad))
        {
            i_slot.data_mut()[p] = 1.0;
            st.data_mut()[p * 3 + gts[gi].slot_type.index()] = 1.0;
            socc.data_mut()[p] = gts[gi].occupancy.as_target();
        }
    }
    SdnScnTargets {
        jp,
        jxy,
        jo,
        st,
        socc,
        i_slot,
        r,
    }
}

/// Slots decoded from a second-stage prediction, each tagged with the index
/// of the proposal it refines, plus the count of rejected proposals.
#[derive(Debug, Clone)]
pub struct DecodedSlots {
    pub slots: Vec<(usize, ParkingSlot)>,
    pub dropped: usize,
}

/// Decodes activation-applied second-stage predictions into parking slots.
///
/// Junctions are refined from the ROI centers by the predicted offsets; a
/// proposal survives only when both of its junction possibilities strictly
/// exceed `tau_j`. Inverse of [`encode_sdn_scn`] on exact targets.
pub fn decode_sdn_scn(
    pred: &SdnScnTargets,
    rois: &[RoiSet],
    spec: &RoiSpec,
    tau_j: f64,
) -> DecodedSlots {
    let mut slots = Vec::new();
    let mut dropped = 0usize;
    for (p, roi) in rois.iter().enumerate() {
        let jp1 = pred.jp.data()[2 * p];
        let jp2 = pred.jp.data()[2 * p + 1];
        if !(jp1 > tau_j && jp2 > tau_j) {
            dropped += 1;
            continue;
        }
        let refine = |center: Point2, row: usize| -> Point2 {
            Point2::new(
                center.x + (pred.jxy.data()[row * 2] - 0.5) * spec.w_roi,
                center.y + (pred.jxy.data()[row * 2 + 1] - 0.5) * spec.h_roi,
            )
        };
        let j1 = refine(roi.loc1, 2 * p);
        let j2 = refine(roi.loc2, 2 * p + 1);
        let sep = |row: usize| {
            UnitVec2::from_components(pred.jo.data()[row * 2], pred.jo.data()[row * 2 + 1])
        };
        let (sep1, sep2) = match (sep(2 * p), sep(2 * p + 1)) {
            (Ok(a), Ok(b)) => (a, b),
            _ => {
                dropped += 1;
                continue;
            }
        };
        let st_row = &pred.st.data()[p * 3..p * 3 + 3];
        let mut ti = 0;
        for c in 1..3 {
            if st_row[c] > st_row[ti] {
                ti = c;
            }
        }
        let slot_type = SlotType::from_index(ti).unwrap();
        let occupancy = if pred.socc.data()[p] >= 0.5 {
            Occupancy::Occupied
        } else {
            Occupancy::Vacant
        };
        match assemble_slot(j1, j2, sep1, sep2, slot_type, occupancy) {
            Ok(slot) => slots.push((p, slot)),
            Err(_) => dropped += 1,
        }
    }
    DecodedSlots { slots, dropped }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::designate_rois;

    fn gt_slot(j1: (f64, f64), j2: (f64, f64), sep_deg: f64) -> ParkingSlot {
        let sep = UnitVec2::from_angle_rad(sep_deg.to_radians());
        assemble_slot(
            Point2::new(j1.0, j1.1),
            Point2::new(j2.0, j2.1),
            sep,
            sep,
            SlotType::Perpendicular,
            Occupancy::Vacant,
        )
        .unwrap()
    }

    #[test]
    fn encode_places_offsets_in_responsible_cell() {
        let grid = GridSpec::for_image(256, 256, 400.0).unwrap();
        // Entrance centered at (100, 50): cell col 3 / row 1, center (112, 48).
        let gt = gt_slot((70.0, 50.0), (130.0, 50.0), 90.0);
        let t = encode_rpn(&[gt], &grid).unwrap();
        let idx = 1 * grid.w + 3;
        assert_eq!(t.ep.data()[idx], 1.0);
        assert!((t.exy.data()[idx] - 0.125).abs() < 1e-12);
        assert!((t.exy.data()[grid.h * grid.w + idx] - 0.5625).abs() < 1e-12);
        assert_eq!(t.ep.data().iter().filter(|&&v| v == 1.0).count(), 1);
    }

    #[test]
    fn encode_normalizes_length() {
        let grid = GridSpec::for_image(256, 256, 400.0).unwrap();
        let gt = gt_slot((40.0, 100.0), (160.0, 100.0), 90.0);
        let t = encode_rpn(&[gt], &grid).unwrap();
        let (row, col) = grid.cell_of(Point2::new(100.0, 100.0));
        assert!((t.el.data()[row * grid.w + col] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn encode_center_on_cell_center_is_half() {
        let grid = GridSpec::for_image(256, 256, 400.0).unwrap();
        // Cell (1, 1) center is (48, 48).
        let gt = gt_slot((18.0, 48.0), (78.0, 48.0), 90.0);
        let t = encode_rpn(&[gt], &grid).unwrap();
        let idx = grid.w + 1;
        assert_eq!(t.exy.data()[idx], 0.5);
        assert_eq!(t.exy.data()[grid.h * grid.w + idx], 0.5);
    }

    #[test]
    fn encode_rejects_cell_collision() {
        let grid = GridSpec::for_image(256, 256, 400.0).unwrap();
        let a = gt_slot((70.0, 50.0), (130.0, 50.0), 90.0);
        let b = gt_slot((80.0, 40.0), (125.0, 40.0), 90.0);
        assert!(matches!(
            encode_rpn(&[a, b], &grid),
            Err(Error::CellCollision { .. })
        ));
    }

    #[test]
    fn decode_empty_below_threshold_and_length_boundary() {
        let grid = GridSpec::for_image(128, 128, 400.0).unwrap();
        let mut t = RpnTargets::zeros(&grid);
        // All possibilities at 0.4: below the 0.5 threshold.
        t.ep.data_mut().fill(0.4);
        assert!(decode_rpn(&t, &grid, 0.5).proposals.is_empty());
        // One confident cell with el = 1.0 decodes to length l_max exactly.
        t.ep.data_mut()[0] = 0.9;
        t.exy.data_mut()[0] = 0.5;
        t.exy.data_mut()[grid.h * grid.w] = 0.5;
        t.el.data_mut()[0] = 1.0;
        t.eo.data_mut()[0] = 1.0;
        t.so.data_mut()[grid.h * grid.w] = 1.0;
        let out = decode_rpn(&t, &grid, 0.5);
        assert_eq!(out.proposals.len(), 1);
        assert_eq!(out.proposals[0].length, 400.0);
        assert_eq!(out.dropped, 0);
    }

    #[test]
    fn decode_drops_zero_orientation_with_count() {
        let grid = GridSpec::for_image(128, 128, 400.0).unwrap();
        let mut t = RpnTargets::zeros(&grid);
        t.ep.data_mut()[0] = 0.9;
        t.el.data_mut()[0] = 0.5;
        // eo left at zero: unnormalizable.
        let out = decode_rpn(&t, &grid, 0.5);
        assert!(out.proposals.is_empty());
        assert_eq!(out.dropped, 1);
    }

    #[test]
    fn rpn_round_trip_exact() {
        let grid = GridSpec::for_image(256, 256, 400.0).unwrap();
        let gts = vec![
            gt_slot((70.0, 50.0), (130.0, 50.0), 90.0),
            gt_slot((40.0, 180.0), (40.0, 120.0), 0.0),
        ];
        let t = encode_rpn(&gts, &grid).unwrap();
        let out = decode_rpn(&t, &grid, 0.5);
        assert_eq!(out.proposals.len(), gts.len());
        for gt in &gts {
            let e = entrance_from_slot(gt).unwrap();
            let got = out
                .proposals
                .iter()
                .min_by(|a, b| {
                    a.center
                        .distance(&e.center)
                        .partial_cmp(&b.center.distance(&e.center))
                        .unwrap()
                })
                .unwrap();
            assert!(got.center.distance(&e.center) < 1e-6);
            assert!((got.length - e.length).abs() < 1e-6);
            assert!((got.eo.cx - e.eo.cx).abs() < 1e-6);
            assert!((got.so.cy - e.so.cy).abs() < 1e-6);
        }
    }

    #[test]
    fn sdn_targets_offset_example() {
        // One ROI window centered at (70, 100); ground-truth junction at
        // (66, 92) gives offsets (-4, -8) over an 80 px window.
        let spec = RoiSpec::default();
        let gt = gt_slot((66.0, 92.0), (126.0, 92.0), 90.0);
        let e = SlotEntrance {
            center: Point2::new(100.0, 100.0),
            eo: UnitVec2 { cx: 1.0, cy: 0.0 },
            length: 60.0,
            so: UnitVec2 { cx: 0.0, cy: 1.0 },
            score: 1.0,
        };
        let rois = vec![designate_rois(&e, 50.0, 32.0)];
        let t = encode_sdn_scn(&rois, &[gt], &spec, spec.w_roi);
        assert_eq!(t.r, 2);
        assert_eq!(t.jp.data()[0], 1.0);
        assert!((t.jxy.data()[0] - 0.45).abs() < 1e-12);
        assert!((t.jxy.data()[1] - 0.40).abs() < 1e-12);
    }

    #[test]
    fn sdn_unmatched_roi_masked() {
        let spec = RoiSpec::default();
        let gt = gt_slot((400.0, 400.0), (460.0, 400.0), 90.0);
        let e = SlotEntrance {
            center: Point2::new(100.0, 100.0),
            eo: UnitVec2 { cx: 1.0, cy: 0.0 },
            length: 60.0,
            so: UnitVec2 { cx: 0.0, cy: 1.0 },
            score: 1.0,
        };
        let rois = vec![designate_rois(&e, 50.0, 32.0)];
        let t = encode_sdn_scn(&rois, &[gt], &spec, spec.w_roi);
        assert_eq!(t.jp.data(), &[0.0, 0.0]);
        assert_eq!(t.i_slot.data(), &[0.0]);
        assert!(t.jxy.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scn_one_hot_slanted() {
        let spec = RoiSpec::default();
        let sep = UnitVec2::from_angle_rad(55f64.to_radians());
        let gt = assemble_slot(
            Point2::new(70.0, 100.0),
            Point2::new(130.0, 100.0),
            sep,
            sep,
            SlotType::Slanted,
            Occupancy::Occupied,
        )
        .unwrap();
        let e = entrance_from_slot(&gt).unwrap();
        let rois = vec![designate_rois(&e, 50.0, 32.0)];
        let t = encode_sdn_scn(&rois, &[gt], &spec, spec.w_roi);
        assert_eq!(t.i_slot.data(), &[1.0]);
        assert_eq!(&t.st.data()[0..3], &[0.0, 0.0, 1.0]);
        assert_eq!(t.socc.data(), &[1.0]);
    }

    #[test]
    fn sdn_scn_round_trip_exact() {
        let spec = RoiSpec::default();
        let gts = vec![
            gt_slot((70.0, 100.0), (130.0, 100.0), 90.0),
            gt_slot((200.0, 60.0), (200.0, 120.0), 180.0),
        ];
        let rois: Vec<RoiSet> = gts
            .iter()
            .map(|g| designate_rois(&entrance_from_slot(g).unwrap(), 50.0, 32.0))
            .collect();
        let t = encode_sdn_scn(&rois, &gts, &spec, spec.w_roi);
        let out = decode_sdn_scn(&t, &rois, &spec, 0.5);
        assert_eq!(out.slots.len(), gts.len());
        assert_eq!(out.dropped, 0);
        for (i, gt) in gts.iter().enumerate() {
            let (p, slot) = out.slots[i];
            assert_eq!(p, i);
            assert!(slot.j1.distance(&gt.j1) < 1e-6);
            assert!(slot.j2.distance(&gt.j2) < 1e-6);
            assert_eq!(slot.slot_type, gt.slot_type);
            assert_eq!(slot.occupancy, gt.occupancy);
        }
    }

    #[test]
    fn decode_drops_proposal_below_tau_j() {
        let spec = RoiSpec::default();
        let gt = gt_slot((70.0, 100.0), (130.0, 100.0), 90.0);
        let rois = vec![designate_rois(
            &entrance_from_slot(&gt).unwrap(),
            50.0,
            32.0,
        )];
        let mut t = encode_sdn_scn(&rois, &[gt], &spec, spec.w_roi);
        t.jp.data_mut()[0] = 0.9;
        t.jp.data_mut()[1] = 0.3;
        let out = decode_sdn_scn(&t, &rois, &spec, 0.5);
        assert!(out.slots.is_empty());
        assert_eq!(out.dropped, 1);
    }

    #[test]
    fn decode_type_argmax() {
        let spec = RoiSpec::default();
        let gt = gt_slot((70.0, 100.0), (130.0, 100.0), 90.0);
        let rois = vec![designate_rois(
            &entrance_from_slot(&gt).unwrap(),
            50.0,
            32.0,
        )];
        let mut t = encode_sdn_scn(&rois, &[gt], &spec, spec.w_roi);
        t.st.data_mut().copy_from_slice(&[0.2, 0.5, 0.3]);
        let out = decode_sdn_scn(&t, &rois, &spec, 0.5);
        assert_eq!(out.slots[0].1.slot_type, SlotType::Parallel);
    }
}
