//! The detector network: compact dual-scale backbone, RPN/SDN/SCN heads and
//! the region-specific multi-scale patch extractor.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, VarId};
use super::tensor::Tensor;
use crate::geometry::{Point2, RoiSet};
use crate::{Error, Result};

/// Stride of the high-resolution feature map (pixels per cell).
pub const HIGH_STRIDE: usize = 16;
/// Stride of the low-resolution feature map (pixels per cell).
pub const LOW_STRIDE: usize = 32;
/// Neighborhood half-width for location/orientation patches (5x5).
pub const HIGH_HALF: usize = 2;
/// Neighborhood half-width for the class patch (3x3).
pub const LOW_HALF: usize = 1;
/// RPN output channels: 1 possibility + 2 offset + 2 entrance orientation
/// + 1 length + 2 slot orientation.
pub const RPN_CHANNELS: usize = 8;

/// Backbone layout: five conv/relu/pool stages; the high-resolution tap is
/// the stage whose cumulative downsample is 16, the final stage gives 32.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub stage_channels: Vec<usize>,
    /// 1-based stage index whose pooled output is the high-resolution map.
    pub high_tap: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            stage_channels: vec![16, 32, 64, 96, 128],
            high_tap: 4,
        }
    }
}

impl BackboneConfig {
    /// Lean channel widths for CPU-scale training runs.
    pub fn desk() -> Self {
        Self {
            in_channels: 3,
            stage_channels: vec![6, 12, 18, 24, 32],
            high_tap: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.len() != 5 {
            return Err(Error::InvalidConfig(format!(
                "backbone needs 5 stages for a total downsample of 32, got {}",
                self.stage_channels.len()
            )));
        }
        if self.high_tap != 4 {
            return Err(Error::InvalidConfig(format!(
                "high tap must sit at downsample 16 (stage 4), got stage {}",
                self.high_tap
            )));
        }
        if self.in_channels == 0 || self.stage_channels.iter().any(|&c| c == 0) {
            return Err(Error::InvalidConfig("zero channel count".into()));
        }
        Ok(())
    }

    /// Channels of the high-resolution tap.
    pub fn c_high(&self) -> usize {
        self.stage_channels[self.high_tap - 1]
    }

    /// Channels of the low-resolution tap.
    pub fn c_low(&self) -> usize {
        *self.stage_channels.last().unwrap()
    }
}

/// Complete model hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub sdn_hidden: usize,
    pub scn_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            sdn_hidden: 64,
            scn_hidden: 48,
        }
    }
}

impl ModelConfig {
    pub fn desk() -> Self {
        Self {
            backbone: BackboneConfig::desk(),
            sdn_hidden: 48,
            scn_hidden: 32,
        }
    }
}

/// Named parameter tensor.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// The two feature maps shared by both stages.
#[derive(Debug, Clone)]
pub struct FeatureMaps {
    /// Stride-16 map, [c_high, H/16, W/16].
    pub high: Tensor,
    /// Stride-32 map, [c_low, H/32, W/32].
    pub low: Tensor,
}

/// The five patches extracted for one proposal.
#[derive(Debug, Clone)]
pub struct Patches {
    pub loc1: Tensor,
    pub loc2: Tensor,
    pub ori1: Tensor,
    pub ori2: Tensor,
    pub cls: Tensor,
}

/// Model: configuration plus the flat named-parameter list. Parameter order
/// is fixed by construction and is the checkpoint serialization order.
#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: Vec<Param>,
}

impl Model {
    /// Builds a model with Xavier-uniform initialization everywhere (no
    /// pretraining is available at this scale).
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.backbone.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let push_conv = |name: &str, cout: usize, cin: usize, k: usize, rng: &mut ChaCha12Rng, params: &mut Vec<Param>| {
            let fan_in = cin * k * k;
            let fan_out = cout * k * k;
            params.push(Param {
                name: format!("{name}.weight"),
                value: Tensor::xavier_uniform(&[cout, cin, k, k], fan_in, fan_out, rng),
            });
            params.push(Param {
                name: format!("{name}.bias"),
                value: Tensor::zeros(&[cout]),
            });
        };
        let mut cin = cfg.backbone.in_channels;
        for (i, &cout) in cfg.backbone.stage_channels.iter().enumerate() {
            push_conv(&format!("backbone.stage{}", i + 1), cout, cin, 3, &mut rng, &mut params);
            cin = cout;
        }
        push_conv("rpn", RPN_CHANNELS, cfg.backbone.c_low(), 3, &mut rng, &mut params);

        let push_fc = |name: &str, nout: usize, nin: usize, rng: &mut ChaCha12Rng, params: &mut Vec<Param>| {
            params.push(Param {
                name: format!("{name}.weight"),
                value: Tensor::xavier_uniform(&[nout, nin], nin, nout, rng),
            });
            params.push(Param {
                name: format!("{name}.bias"),
                value: Tensor::zeros(&[nout]),
            });
        };
        let k_high = 2 * HIGH_HALF + 1;
        let sdn_in = cfg.backbone.c_high() * k_high * k_high;
        for (head, nout) in [("jp", 1), ("jxy", 2), ("jo", 2)] {
            push_fc(&format!("sdn.{head}.fc1"), cfg.sdn_hidden, sdn_in, &mut rng, &mut params);
            push_fc(&format!("sdn.{head}.fc2"), nout, cfg.sdn_hidden, &mut rng, &mut params);
        }
        let k_low = 2 * LOW_HALF + 1;
        let scn_in = cfg.backbone.c_low() * k_low * k_low;
        for (head, nout) in [("occ", 1), ("type", 3)] {
            push_fc(&format!("scn.{head}.fc1"), cfg.scn_hidden, scn_in, &mut rng, &mut params);
            push_fc(&format!("scn.{head}.fc2"), nout, cfg.scn_hidden, &mut rng, &mut params);
        }
        Ok(Self { cfg, params })
    }

    pub fn param_index(&self, name: &str) -> usize {
        self.params
            .iter()
            .position(|p| p.name == name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    /// Parameters updated by first-stage training (shared backbone + RPN).
    pub fn stage1_mask(&self) -> Vec<bool> {
        self.params
            .iter()
            .map(|p| p.name.starts_with("backbone.") || p.name.starts_with("rpn."))
            .collect()
    }

    /// Parameters updated by second-stage training (shared backbone + heads).
    pub fn stage2_mask(&self) -> Vec<bool> {
        self.params
            .iter()
            .map(|p| {
                p.name.starts_with("backbone.")
                    || p.name.starts_with("sdn.")
                    || p.name.starts_with("scn.")
            })
            .collect()
    }

    /// Records every parameter as a tape leaf, in parameter order.
    pub fn push_params(&self, tape: &mut Tape) -> ParamVars {
        ParamVars(self.params.iter().map(|p| tape.leaf(p.value.clone())).collect())
    }
}

/// Tape handles for the model parameters, aligned with `Model::params`.
pub struct ParamVars(pub Vec<VarId>);

impl ParamVars {
    fn get(&self, model: &Model, name: &str) -> VarId {
        self.0[model.param_index(name)]
    }
}

/// Runs the backbone on an image tensor [3, H, W]; H and W must be divisible
/// by 32. Returns the stride-16 and stride-32 tap variables.
pub fn backbone_forward(
    tape: &mut Tape,
    image: VarId,
    model: &Model,
    pv: &ParamVars,
) -> Result<(VarId, VarId)> {
    let shape = tape.value(image).shape().to_vec();
    if shape.len() != 3 || shape[0] != model.cfg.backbone.in_channels {
        return Err(Error::ShapeMismatch {
            expected: format!("[{}, H, W]", model.cfg.backbone.in_channels),
            got: format!("{shape:?}"),
        });
    }
    let (h, w) = (shape[1], shape[2]);
    if h % LOW_STRIDE != 0 || w % LOW_STRIDE != 0 {
        return Err(Error::IndivisibleImage {
            w,
            h,
            stride: LOW_STRIDE,
        });
    }
    let mut x = image;
    let mut high = None;
    for i in 1..=model.cfg.backbone.stage_channels.len() {
        let wv = pv.get(model, &format!("backbone.stage{i}.weight"));
        let bv = pv.get(model, &format!("backbone.stage{i}.bias"));
        x = tape.conv2d(x, wv, bv, 1, 1);
        x = tape.relu(x);
        x = tape.maxpool2(x);
        if i == model.cfg.backbone.high_tap {
            high = Some(x);
        }
    }
    Ok((high.unwrap(), x))
}

/// RPN raw prediction channels after their activations, each [c, h, w].
pub struct RpnPrediction {
    pub ep: VarId,
    pub exy: VarId,
    pub eo: VarId,
    pub el: VarId,
    pub so: VarId,
}

/// One 3x3 convolution with eight filters over the low-resolution map,
/// split per quantity: sigmoid on possibility/offset/length, tanh on the
/// two orientations.
pub fn rpn_head(tape: &mut Tape, low: VarId, model: &Model, pv: &ParamVars) -> RpnPrediction {
    let wv = pv.get(model, "rpn.weight");
    let bv = pv.get(model, "rpn.bias");
    let raw = tape.conv2d(low, wv, bv, 1, 1);
    let ep = tape.slice_channels(raw, 0, 1);
    let ep = tape.sigmoid(ep);
    let exy = tape.slice_channels(raw, 1, 3);
    let exy = tape.sigmoid(exy);
    let eo = tape.slice_channels(raw, 3, 5);
    let eo = tape.tanh(eo);
    let el = tape.slice_channels(raw, 5, 6);
    let el = tape.sigmoid(el);
    let so = tape.slice_channels(raw, 6, 8);
    let so = tape.tanh(so);
    RpnPrediction { ep, exy, eo, el, so }
}

/// Map cell containing an image coordinate at the given stride.
pub fn containing_cell(p: Point2, stride: usize) -> (isize, isize) {
    (
        (p.y / stride as f64).floor() as isize,
        (p.x / stride as f64).floor() as isize,
    )
}

/// Flattened patch rows for a batch of proposals: junction rows [2n, .],
/// orientation rows [2n, .] from the high map, class rows [n, .] from the
/// low map. Row order per proposal: loc1/ori1 then loc2/ori2.
pub struct PatchRows {
    pub junctions: VarId,
    pub orientations: VarId,
    pub classes: VarId,
}

pub fn extract_patch_rows(
    tape: &mut Tape,
    high: VarId,
    low: VarId,
    rois: &[RoiSet],
) -> PatchRows {
    let mut j_cells = Vec::with_capacity(rois.len() * 2);
    let mut o_cells = Vec::with_capacity(rois.len() * 2);
    let mut c_cells = Vec::with_capacity(rois.len());
    for r in rois {
        j_cells.push(containing_cell(r.loc1, HIGH_STRIDE));
        j_cells.push(containing_cell(r.loc2, HIGH_STRIDE));
        o_cells.push(containing_cell(r.ori1, HIGH_STRIDE));
        o_cells.push(containing_cell(r.ori2, HIGH_STRIDE));
        c_cells.push(containing_cell(r.cls, LOW_STRIDE));
    }
    PatchRows {
        junctions: tape.gather_patches(high, &j_cells, HIGH_HALF),
        orientations: tape.gather_patches(high, &o_cells, HIGH_HALF),
        classes: tape.gather_patches(low, &c_cells, LOW_HALF),
    }
}

/// Extracts the five patches of one proposal from plain feature maps:
/// four 5x5 x c_high neighborhoods (junctions and separating lines) and one
/// 3x3 x c_low neighborhood (slot center). Out-of-map cells are zeros.
pub fn extract_patches(maps: &FeatureMaps, rois: &RoiSet) -> Patches {
    let gather = |map: &Tensor, p: Point2, stride: usize, half: usize| -> Tensor {
        let s = map.shape();
        let (c, h, w) = (s[0], s[1], s[2]);
        let k = 2 * half + 1;
        let (cy, cx) = containing_cell(p, stride);
        let mut out = Tensor::zeros(&[c, k, k]);
        let data = out.data_mut();
        for ci in 0..c {
            for py in 0..k {
                let iy = cy + py as isize - half as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for px in 0..k {
                    let ix = cx + px as isize - half as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    data[(ci * k + py) * k + px] =
                        map.data()[(ci * h + iy as usize) * w + ix as usize];
                }
            }
        }
        out
    };
    Patches {
        loc1: gather(&maps.high, rois.loc1, HIGH_STRIDE, HIGH_HALF),
        loc2: gather(&maps.high, rois.loc2, HIGH_STRIDE, HIGH_HALF),
        ori1: gather(&maps.high, rois.ori1, HIGH_STRIDE, HIGH_HALF),
        ori2: gather(&maps.high, rois.ori2, HIGH_STRIDE, HIGH_HALF),
        cls: gather(&maps.low, rois.cls, LOW_STRIDE, LOW_HALF),
    }
}

/// SDN outputs per junction/orientation ROI row.
pub struct SdnPrediction {
    /// Junction possibility, [R].
    pub jp: VarId,
    /// Relative junction location, [R, 2], sigmoid range.
    pub jxy: VarId,
    /// Separating-line orientation, [R, 2], tanh range.
    pub jo: VarId,
}

/// Applies the shared per-ROI fully connected stacks: possibility and
/// relative location from junction patches, orientation from separating-line
/// patches. The same weights serve both junctions of a proposal.
pub fn sdn_head(
    tape: &mut Tape,
    junction_rows: VarId,
    orientation_rows: VarId,
    model: &Model,
    pv: &ParamVars,
) -> SdnPrediction {
    let rows = tape.value(junction_rows).shape()[0];
    let fc = |tape: &mut Tape, x: VarId, head: &str| -> VarId {
        let h = tape.linear(
            x,
            pv.get(model, &format!("sdn.{head}.fc1.weight")),
            pv.get(model, &format!("sdn.{head}.fc1.bias")),
        );
        let h = tape.relu(h);
        tape.linear(
            h,
            pv.get(model, &format!("sdn.{head}.fc2.weight")),
            pv.get(model, &format!("sdn.{head}.fc2.bias")),
        )
    };
    let jp = fc(tape, junction_rows, "jp");
    let jp = tape.sigmoid(jp);
    let jp = tape.reshape(jp, &[rows]);
    let jxy = fc(tape, junction_rows, "jxy");
    let jxy = tape.sigmoid(jxy);
    let jo = fc(tape, orientation_rows, "jo");
    let jo = tape.tanh(jo);
    SdnPrediction { jp, jxy, jo }
}

/// SCN outputs per class ROI row.
pub struct ScnPrediction {
    /// Occupancy, [n], sigmoid range.
    pub socc: VarId,
    /// Type distribution, [n, 3], softmax rows.
    pub st: VarId,
}

/// Occupancy (sigmoid scalar) and type (softmax 3-vector) from the class patch.
pub fn scn_head(tape: &mut Tape, class_rows: VarId, model: &Model, pv: &ParamVars) -> ScnPrediction {
    let rows = tape.value(class_rows).shape()[0];
    let fc = |tape: &mut Tape, x: VarId, head: &str| -> VarId {
        let h = tape.linear(
            x,
            pv.get(model, &format!("scn.{head}.fc1.weight")),
            pv.get(model, &format!("scn.{head}.fc1.bias")),
        );
        let h = tape.relu(h);
        tape.linear(
            h,
            pv.get(model, &format!("scn.{head}.fc2.weight")),
            pv.get(model, &format!("scn.{head}.fc2.bias")),
        )
    };
    let socc = fc(tape, class_rows, "occ");
    let socc = tape.sigmoid(socc);
    let socc = tape.reshape(socc, &[rows]);
    let st = fc(tape, class_rows, "type");
    let st = tape.softmax_rows(st);
    ScnPrediction { socc, st }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model() -> Model {
        let cfg = ModelConfig {
            backbone: BackboneConfig {
                in_channels: 3,
                stage_channels: vec![2, 2, 3, 3, 4],
                high_tap: 4,
            },
            sdn_hidden: 6,
            scn_hidden: 5,
        };
        Model::new(cfg, 1).unwrap()
    }

    #[test]
    fn backbone_tap_shapes() {
        let model = tiny_model();
        let mut tape = Tape::new();
        let pv = model.push_params(&mut tape);
        let img = tape.leaf(Tensor::zeros(&[3, 256, 256]));
        let (high, low) = backbone_forward(&mut tape, img, &model, &pv).unwrap();
        assert_eq!(tape.value(high).shape(), &[3, 16, 16]);
        assert_eq!(tape.value(low).shape(), &[4, 8, 8]);
    }

    #[test]
    fn backbone_ps20_resize_shape() {
        let model = tiny_model();
        let mut tape = Tape::new();
        let pv = model.push_params(&mut tape);
        let img = tape.leaf(Tensor::zeros(&[3, 416, 416]));
        let (_, low) = backbone_forward(&mut tape, img, &model, &pv).unwrap();
        assert_eq!(tape.value(low).shape(), &[4, 13, 13]);
    }

    #[test]
    fn backbone_rejects_indivisible() {
        let model = tiny_model();
        let mut tape = Tape::new();
        let pv = model.push_params(&mut tape);
        let img = tape.leaf(Tensor::zeros(&[3, 100, 96]));
        assert!(backbone_forward(&mut tape, img, &model, &pv).is_err());
    }

    #[test]
    fn zero_image_zero_bias_gives_zero_maps() {
        let model = tiny_model();
        // Biases start at zero, so a zero image propagates zeros end to end.
        let mut tape = Tape::new();
        let pv = model.push_params(&mut tape);
        let img = tape.leaf(Tensor::zeros(&[3, 64, 64]));
        let (high, low) = backbone_forward(&mut tape, img, &model, &pv).unwrap();
        assert!(tape.value(high).iter().all(|&v| v == 0.0));
        assert!(tape.value(low).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rpn_head_has_eight_channels_and_ranges() {
        let model = tiny_model();
        let mut tape = Tape::new();
        let pv = model.push_params(&mut tape);
        let img = tape.leaf(Tensor::from_vec(
            &[3, 64, 64],
            (0..3 * 64 * 64).map(|i| ((i % 17) as f64 - 8.0) / 8.0).collect(),
        ));
        let (_, low) = backbone_forward(&mut tape, img, &model, &pv).unwrap();
        let raw_w = tape.value(pv.get(&model, "rpn.weight")).shape().to_vec();
        assert_eq!(raw_w[0], 8);
        let pred = rpn_head(&mut tape, low, &model, &pv);
        assert!(tape.value(pred.ep).iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(tape.value(pred.eo).iter().all(|&v| (-1.0..=1.0).contains(&v)));
        assert!(tape.value(pred.so).iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn patch_centered_in_map() {
        // 16x16 high map; image center of the corresponding 256x256 image is
        // (127.5, 127.5) -> cell (7, 7), so the patch covers rows/cols 5..=9.
        let mut map = Tensor::zeros(&[1, 16, 16]);
        for y in 0..16 {
            for x in 0..16 {
                map.data_mut()[y * 16 + x] = (y * 16 + x) as f64;
            }
        }
        let maps = FeatureMaps {
            high: map,
            low: Tensor::zeros(&[1, 8, 8]),
        };
        let rois = RoiSet {
            loc1: Point2::new(127.5, 127.5),
            loc2: Point2::new(127.5, 127.5),
            ori1: Point2::new(127.5, 127.5),
            ori2: Point2::new(127.5, 127.5),
            cls: Point2::new(127.5, 127.5),
        };
        let patches = extract_patches(&maps, &rois);
        assert_eq!(patches.loc1.shape(), &[1, 5, 5]);
        for py in 0..5
        {
            for px in 0..5 {
                let expect = ((py + 5) * 16 + (px + 5)) as f64;
                assert_eq!(patches.loc1.data()[py * 5 + px], expect);
            }
        }
    }

    #[test]
    fn patch_at_origin_zero_padded() {
        let maps = FeatureMaps {
            high: Tensor::from_vec(&[1, 4, 4], vec![1.0; 16]),
            low: Tensor::zeros(&[1, 2, 2]),
        };
        let rois = RoiSet {
            loc1: Point2::new(0.0, 0.0),
            loc2: Point2::new(0.0, 0.0),
            ori1: Point2::new(0.0, 0.0),
            ori2: Point2::new(0.0, 0.0),
            cls: Point2::new(0.0, 0.0),
        };
        let p = extract_patches(&maps, &rois);
        // Top two rows and left two columns fall outside the map.
        for py in 0..5 {
            for px in 0..5 {
                let v = p.loc1.data()[py * 5 + px];
                if py < 2 || px < 2 {
                    assert_eq!(v, 0.0);
                } else {
                    assert_eq!(v, 1.0);
                }
            }
        }
    }

    #[test]
    fn sdn_weight_sharing_permutes_outputs() {
        let model = tiny_model();
        let c_high = model.cfg.backbone.c_high();
        let len = c_high * 25;
        let row_a: Vec<f64> = (0..len).map(|i| (i as f64) * 0.01 - 0.3).collect();
        let row_b: Vec<f64> = (0..len).map(|i| 0.5 - (i as f64) * 0.02).collect();
        let run = |rows: Vec<f64>| {
            let mut tape = Tape::new();
            let pv = model.push_params(&mut tape);
            let j = tape.leaf(Tensor::from_vec(&[2, len], rows.clone()));
            let o = tape.leaf(Tensor::from_vec(&[2, len], rows));
            let pred = sdn_head(&mut tape, j, o, &model, &pv);
            (
                tape.value(pred.jp).data().to_vec(),
                tape.value(pred.jxy).data().to_vec(),
            )
        };
        let mut ab = row_a.clone();
        ab.extend_from_slice(&row_b);
        let mut ba = row_b.clone();
        ba.extend_from_slice(&row_a);
        let (jp_ab, jxy_ab) = run(ab);
        let (jp_ba, jxy_ba) = run(ba);
        assert_eq!(jp_ab[0], jp_ba[1]);
        assert_eq!(jp_ab[1], jp_ba[0]);
        assert_eq!(&jxy_ab[0..2], &jxy_ba[2..4]);
        assert!(jxy_ab.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn scn_outputs_four_values_and_normalized_types() {
        let model = tiny_model();
        let c_low = model.cfg.backbone.c_low();
        let len = c_low * 9;
        let mut tape = Tape::new();
        let pv = model.push_params(&mut tape);
        let rows = tape.leaf(Tensor::from_vec(
            &[3, len],
            (0..3 * len).map(|i| ((i * 7) % 13) as f64 * 0.1 - 0.6).collect(),
        ));
        let pred = scn_head(&mut tape, rows, &model, &pv);
        assert_eq!(tape.value(pred.socc).shape(), &[3]);
        assert_eq!(tape.value(pred.st).shape(), &[3, 3]);
        for r in 0..3 {
            let s: f64 = tape.value(pred.st).data()[r * 3..(r + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }
}
