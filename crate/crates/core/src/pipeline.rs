//! End-to-end detection: image -> proposals -> region-specific refinement ->
//! final slots. Also the detection-document wire format shared by the CLI
//! and the evaluation command.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{
    decode_rpn, decode_sdn_scn, GridSpec, RoiSpec, RpnTargets, SdnScnTargets, DEFAULT_TAU_J,
    DEFAULT_TAU_PROP,
};
use crate::diffnet::model::{
    backbone_forward, extract_patch_rows, rpn_head, scn_head, sdn_head, Model,
};
use crate::diffnet::{Tape, Tensor};
use crate::geometry::{
    designate_rois, nms_entrances, Occupancy, ParkingSlot, Point2, RoiSet, SlotType, UnitVec2,
    DEFAULT_K1, DEFAULT_K2, DEFAULT_NMS_DIST,
};
use crate::{Error, Result};

/// Detection-time thresholds and geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectOptions {
    pub tau_prop: f64,
    pub tau_j: f64,
    pub nms_dist: f64,
    pub k1: f64,
    pub k2: f64,
    pub l_max: f64,
}

impl Default for DetectOptions {
    fn default() -> Self {
        Self {
            tau_prop: DEFAULT_TAU_PROP,
            tau_j: DEFAULT_TAU_J,
            nms_dist: DEFAULT_NMS_DIST,
            k1: DEFAULT_K1,
            k2: DEFAULT_K2,
            l_max: 160.0,
        }
    }
}

/// Final detections for one image, with drop counters from both stages.
#[derive(Debug, Clone, Default)]
pub struct Detections {
    /// Slots with the score of the proposal that produced them.
    pub slots: Vec<(ParkingSlot, f64)>,
    pub dropped_rpn: usize,
    pub dropped_sdn: usize,
}

/// Converts interleaved 8-bit RGB into a [3, h, w] tensor scaled to [0, 1].
pub fn image_to_tensor(pixels: &[u8], width: usize, height: usize) -> Tensor {
    let plane = width * height;
    let mut data = vec![0.0f64; 3 * plane];
    for i in 0..plane {
        for c in 0..3 {
            data[c * plane + i] = pixels[i * 3 + c] as f64 / 255.0;
        }
    }
    Tensor::from_vec(&[3, height, width], data)
}

/// Runs the full two-stage detector on one image tensor.
pub fn detect_image(model: &Model, image: &Tensor, opts: &DetectOptions) -> Result<Detections> {
    let shape = image.shape();
    let (h, w) = (shape[1], shape[2]);
    let grid = GridSpec::for_image(w, h, opts.l_max)?;
    let roi_spec = RoiSpec::default();

    let mut tape = Tape::new();
    let pv = model.push_params(&mut tape);
    let img = tape.leaf(image.clone());
    let (high, low) = backbone_forward(&mut tape, img, model, &pv)?;
    let rpn = rpn_head(&mut tape, low, model, &pv);

    let rpn_values = RpnTargets {
        ep: tape.value(rpn.ep).clone(),
        exy: tape.value(rpn.exy).clone(),
        el: tape.value(rpn.el).clone(),
        eo: tape.value(rpn.eo).clone(),
        so: tape.value(rpn.so).clone(),
    };
    let decoded = decode_rpn(&rpn_values, &grid, opts.tau_prop);
    let proposals = nms_entrances(&decoded.proposals, opts.nms_dist);
    if proposals.is_empty() {
        return Ok(Detections {
            slots: Vec::new(),
            dropped_rpn: decoded.dropped,
            dropped_sdn: 0,
        });
    }

    let rois: Vec<RoiSet> = proposals
        .iter()
        .map(|p| designate_rois(p, opts.k1, opts.k2))
        .collect();
    let patches = extract_patch_rows(&mut tape, high, low, &rois);
    let sdn = sdn_head(&mut tape, patches.junctions, patches.orientations, model, &pv);
    let scn = scn_head(&mut tape, patches.classes, model, &pv);

    let pred = SdnScnTargets {
        jp: tape.value(sdn.jp).clone(),
        jxy: tape.value(sdn.jxy).clone(),
        jo: tape.value(sdn.jo).clone(),
        st: tape.value(scn.st).clone(),
        socc: tape.value(scn.socc).clone(),
        i_slot: Tensor::zeros(&[rois.len()]),
        r: rois.len() * 2,
    };
    let decoded_slots = decode_sdn_scn(&pred, &rois, &roi_spec, opts.tau_j);
    let slots = decoded_slots
        .slots
        .into_iter()
        .map(|(p, slot)| (slot, proposals[p].score))
        .collect();
    Ok(Detections {
        slots,
        dropped_rpn: decoded.dropped,
        dropped_sdn: decoded_slots.dropped,
    })
}

// ---- detection documents ----

/// Wire-format version shared with the label schema.
pub const DETECTION_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct DetectionDoc {
    version: u32,
    image: ImageMeta,
    slots: Vec<DetRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ImageMeta {
    w: u32,
    h: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct DetRecord {
    j1: [f64; 2],
    j2: [f64; 2],
    sep1: [f64; 2],
    sep2: [f64; 2],
    #[serde(rename = "type")]
    slot_type: String,
    occupancy: String,
    score: f64,
}

/// Serializes detections: the label schema plus a per-slot score.
pub fn detections_to_json(
    width: usize,
    height: usize,
    slots: &[(ParkingSlot, f64)],
) -> Result<String> {
    let doc = DetectionDoc {
        version: DETECTION_SCHEMA_VERSION,
        image: ImageMeta {
            w: width as u32,
            h: height as u32,
        },
        slots: slots
            .iter()
            .map(|(s, score)| DetRecord {
                j1: [s.j1.x, s.j1.y],
                j2: [s.j2.x, s.j2.y],
                sep1: [s.sep1.cx, s.sep1.cy],
                sep2: [s.sep2.cx, s.sep2.cy],
                slot_type: s.slot_type.as_str().to_string(),
                occupancy: s.occupancy.as_str().to_string(),
                score: *score,
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

pub fn detections_from_json(json: &str) -> Result<Vec<(ParkingSlot, f64)>> {
    let doc: DetectionDoc = serde_json::from_str(json)?;
    if doc.version != DETECTION_SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            found: doc.version,
            expected: DETECTION_SCHEMA_VERSION,
        });
    }
    doc.slots
        .iter()
        .map(|r| {
            let slot = ParkingSlot {
                j1: Point2::new(r.j1[0], r.j1[1]),
                j2: Point2::new(r.j2[0], r.j2[1]),
                sep1: UnitVec2 {
                    cx: r.sep1[0],
                    cy: r.sep1[1],
                },
                sep2: UnitVec2 {
                    cx: r.sep2[0],
                    cy: r.sep2[1],
                },
                slot_type: SlotType::from_str(&r.slot_type).ok_or_else(|| Error::Parse {
                    offset: 0,
                    message: format!("unknown slot type {:?}", r.slot_type),
                })?,
                occupancy: Occupancy::from_str(&r.occupancy).ok_or_else(|| Error::Parse {
                    offset: 0,
                    message: format!("unknown occupancy {:?}", r.occupancy),
                })?,
            };
            Ok((slot, r.score))
        })
        .collect()
}

pub fn write_detections(
    path: &Path,
    width: usize,
    height: usize,
    slots: &[(ParkingSlot, f64)],
) -> Result<()> {
    std::fs::write(path, detections_to_json(width, height, slots)?)?;
    Ok(())
}

/// Draws detections over an RGB buffer: green/red/blue entrance lines for
/// perpendicular/parallel/slanted slots, solid for vacant and dashed for
/// occupied, with a short arrow along the slot orientation.
pub fn draw_overlay(pixels: &mut [u8], width: usize, height: usize, slots: &[(ParkingSlot, f64)]) {
    for (slot, _) in slots {
        let color = match slot.slot_type {
            SlotType::Perpendicular => [40u8, 220, 60],
            SlotType::Parallel => [230, 50, 50],
            SlotType::Slanted => [60, 90, 235],
        };
        let dashed = slot.occupancy == Occupancy::Occupied;
        draw_line(pixels, width, height, slot.j1, slot.j2, color, dashed);
        // Slot-direction arrows from both junctions.
        for (j, sep) in [(slot.j1, slot.sep1), (slot.j2, slot.sep2)] {
            let tip = j.offset(sep, 18.0);
            draw_line(pixels, width, height, j, tip, color, false);
        }
    }
}

fn draw_line(
    pixels: &mut [u8],
    width: usize,
    height: usize,
    a: Point2,
    b: Point2,
    color: [u8; 3],
    dashed: bool,
) {
    let len = a.distance(&b).max(1.0);
    let steps = (len * 2.0) as usize;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        if dashed && ((t * len / 6.0) as usize) % 2 == 1 {
            continue;
        }
        let x = a.x + t * (b.x - a.x);
        let y = a.y + t * (b.y - a.y);
        for dy in -1i32..=0 {
            for dx in -1i32..=0 {
                let xi = x as i32 + dx;
                let yi = y as i32 + dy;
                if xi >= 0 && xi < width as i32 && yi >= 0 && yi < height as i32 {
                    let i = (yi as usize * width + xi as usize) * 3;
                    pixels[i..i + 3].copy_from_slice(&color);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::model::ModelConfig;

    #[test]
    fn zero_model_blank_image_detects_nothing() {
        // All-zero weights put every sigmoid at exactly 0.5, which does not
        // strictly exceed the 0.5 threshold: no proposals at all.
        let mut model = Model::new(ModelConfig::desk(), 1).unwrap();
        for p in model.params.iter_mut() {
            let z = Tensor::zeros(p.value.shape());
            p.value = z;
        }
        let image = Tensor::zeros(&[3, 128, 128]);
        let out = detect_image(&model, &image, &DetectOptions::default()).unwrap();
        assert!(out.slots.is_empty());
        assert_eq!(out.dropped_rpn, 0);
    }

    #[test]
    fn random_model_runs_end_to_end() {
        let model = Model::new(ModelConfig::desk(), 3).unwrap();
        let image = Tensor::from_vec(
            &[3, 64, 64],
            (0..3 * 64 * 64).map(|i| (i % 255) as f64 / 255.0).collect(),
        );
        let out = detect_image(&model, &image, &DetectOptions::default()).unwrap();
        // An untrained model may or may not propose; the call must succeed
        // and every emitted slot must be geometrically valid.
        for (slot, score) in &out.slots {
            slot.validate().unwrap();
            assert!((0.0..=1.0).contains(score));
        }
    }

    #[test]
    fn detection_json_round_trip() {
        let sep = UnitVec2 { cx: 0.0, cy: 1.0 };
        let slot = ParkingSlot {
            j1: Point2::new(10.25, 20.5),
            j2: Point2::new(70.125, 20.0),
            sep1: sep,
            sep2: sep,
            slot_type: SlotType::Slanted,
            occupancy: Occupancy::Occupied,
        };
        let json = detections_to_json(128, 128, &[(slot, 0.875)]).unwrap();
        let back = detections_from_json(&json).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].0, slot);
        assert_eq!(back[0].1, 0.875);
    }
}
