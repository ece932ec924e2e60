//! First- and second-stage training losses.
//!
//! Losses are sums over grid cells / ROIs (not means); per-batch aggregation
//! is a plain sum across images, with the learning rate absorbing scale.
//! Regression targets arrive already shifted into the activation ranges, so
//! the prediction-minus-target residual here equals the shifted/normalized
//! residual of the loss definitions.

use serde::{Deserialize, Serialize};

use crate::codec::{GridSpec, RpnTargets, SdnScnTargets};
use crate::diffnet::model::{RpnPrediction, ScnPrediction, SdnPrediction};
use crate::diffnet::{Tape, TapeOp, Tensor, VarId};
use crate::geometry::ParkingSlot;
use crate::{Error, Result};

/// Numerical floor inside the cross-entropy logarithm.
pub const CE_EPS: f64 = 1e-12;

/// All loss weights and imbalance-compensation factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_ep: f64,
    pub w_exy: f64,
    pub w_el: f64,
    pub w_eo: f64,
    pub w_so: f64,
    pub lambda_e: f64,
    pub w_jp: f64,
    pub w_jxy: f64,
    pub w_jo: f64,
    pub w_st: f64,
    pub w_socc: f64,
    pub lambda_st: [f64; 3],
    pub lambda_vac: f64,
}

impl LossWeights {
    /// Weights tuned on the SNU dataset.
    pub fn snu() -> Self {
        Self {
            w_ep: 400.0,
            w_exy: 400.0,
            w_el: 1000.0,
            w_eo: 1000.0,
            w_so: 400.0,
            lambda_e: 0.03,
            w_jp: 1500.0,
            w_jxy: 2000.0,
            w_jo: 6000.0,
            w_st: 0.5,
            w_socc: 100.0,
            lambda_st: [8.33, 1.23, 14.92],
            lambda_vac: 0.74,
        }
    }

    /// Weights tuned on the PS2.0 dataset.
    pub fn ps20() -> Self {
        Self {
            w_ep: 500.0,
            w_exy: 400.0,
            w_el: 1000.0,
            w_eo: 1500.0,
            w_so: 500.0,
            lambda_e: 0.01,
            w_jp: 1000.0,
            w_jxy: 3000.0,
            w_jo: 4000.0,
            w_st: 0.5,
            w_socc: 100.0,
            lambda_st: [1.76, 2.86, 31.65],
            lambda_vac: 0.47,
        }
    }

    /// Weights for the synthetic desk-scale corpus.
    pub fn desk() -> Self {
        Self {
            w_ep: 100.0,
            w_exy: 200.0,
            w_el: 200.0,
            w_eo: 200.0,
            w_so: 100.0,
            lambda_e: 0.15,
            w_jp: 300.0,
            w_jxy: 600.0,
            w_jo: 600.0,
            w_st: 1.0,
            w_socc: 30.0,
            lambda_st: [2.0, 4.0, 4.0],
            lambda_vac: 0.54,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.w_ep,
            self.w_exy,
            self.w_el,
            self.w_eo,
            self.w_so,
            self.lambda_e,
            self.w_jp,
            self.w_jxy,
            self.w_jo,
            self.w_st,
            self.w_socc,
            self.lambda_st[0],
            self.lambda_st[1],
            self.lambda_st[2],
            self.lambda_vac,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidConfig("loss weights must be >= 0".into()));
        }
        Ok(())
    }
}

/// A named weight preset plus its length normalizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub weights: LossWeights,
    pub l_max: f64,
}

/// Named presets: "snu" and "ps20" carry the published hyperparameters,
/// "desk" targets the synthetic corpus.
pub fn preset(name: &str) -> Option<Preset> {
    match name {
        "snu" => Some(Preset {
            weights: LossWeights::snu(),
            l_max: 400.0,
        }),
        "ps20" => Some(Preset {
            weights: LossWeights::ps20(),
            l_max: 291.0,
        }),
        "desk" => Some(Preset {
            weights: LossWeights::desk(),
            l_max: 160.0,
        }),
        _ => None,
    }
}

/// Label statistics used to derive the imbalance-compensation factors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusStats {
    pub positive_cells: usize,
    pub negative_cells: usize,
    pub type_counts: [usize; 3],
    pub occupied: usize,
    pub vacant: usize,
}

impl CorpusStats {
    pub fn from_labels(labels: &[Vec<ParkingSlot>], grid: &GridSpec) -> Self {
        let cells_per_image = grid.h * grid.w;
        let mut s = CorpusStats::default();
        for slots in labels {
            s.positive_cells += slots.len();
            s.negative_cells += cells_per_image - slots.len();
            for slot in slots {
                s.type_counts[slot.slot_type.index()] += 1;
                match slot.occupancy {
                    crate::geometry::Occupancy::Occupied => s.occupied += 1,
                    crate::geometry::Occupancy::Vacant => s.vacant += 1,
                }
            }
        }
        s
    }

    /// Positive-to-negative cell ratio.
    pub fn lambda_e(&self) -> f64 {
        self.positive_cells as f64 / self.negative_cells as f64
    }

    /// Inverse-frequency type compensation: total / per-type count.
    pub fn lambda_st(&self) -> [f64; 3] {
        let total: usize = self.type_counts.iter().sum();
        let mut out = [0.0; 3];
        for (o, &c) in out.iter_mut().zip(&self.type_counts) {
            *o = if c > 0 { total as f64 / c as f64 } else { 0.0 };
        }
        out
    }

    /// Occupied-to-vacant ratio.
    pub fn lambda_vac(&self) -> f64 {
        self.occupied as f64 / self.vacant as f64
    }

    /// Writes the derived factors into a weight set.
    pub fn apply(&self, w: &mut LossWeights) {
        w.lambda_e = self.lambda_e();
        w.lambda_st = self.lambda_st();
        w.lambda_vac = self.lambda_vac();
    }
}

// ---- per-equation tape ops ----

/// Possibility loss over all cells: masked squared error on positives plus
/// `lambda_neg`-weighted squared error on negatives.
pub fn possibility_loss(
    tape: &mut Tape,
    pred: VarId,
    target: &Tensor,
    mask: &Tensor,
    lambda_neg: f64,
) -> VarId {
    let p = tape.value(pred).data();
    let mut acc = 0.0;
    for ((&p, &t), &m) in p.iter().zip(target.data()).zip(mask.data()) {
        let r = p - t;
        acc += (m + lambda_neg * (1.0 - m)) * r * r;
    }
    let target = target.clone();
    let mask = mask.clone();
    tape.push_custom(Tensor::scalar(acc), |out| {
        Box::new(PossibilityLossOp {
            pred: pred.0,
            out,
            target,
            mask,
            lambda_neg,
        })
    })
}

struct PossibilityLossOp {
    pred: usize,
    out: usize,
    target: Tensor,
    mask: Tensor,
    lambda_neg: f64,
}

impl TapeOp for PossibilityLossOp {
    fn out(&self) -> usize {
        self.out
    }
    fn backward(&self, vals: &[Tensor], grads: &mut [Tensor], grad_out: &Tensor) {
        let go = grad_out.item();
        let p = vals[self.pred].data();
        let g = grads[self.pred].data_mut();
        for (i, ((&p, &t), &m)) in p.iter().zip(self.target.data()).zip(self.mask.data()).enumerate()
        {
            g[i] += go * 2.0 * (p - t) * (m + self.lambda_neg * (1.0 - m));
        }
    }
}

/// Masked squared error over channel-major [c, h, w] planes with a per-cell
/// mask of h*w entries. Covers the offset, length and orientation losses of
/// the first stage.
pub fn masked_sse_grid(tape: &mut Tape, pred: VarId, target: &Tensor, mask: &Tensor) -> VarId {
    let p = tape.value(pred).data();
    let plane = mask.len();
    let channels = p.len() / plane;
    let mut acc = 0.0;
    for c in 0..channels {
        let po = &p[c * plane..(c + 1) * plane];
        let to = &target.data()[c * plane..(c + 1) * plane];
        for ((&p, &t), &m) in po.iter().zip(to).zip(mask.data()) {
            let r = p - t;
            acc += m * r * r;
        }
    }
    let target = target.clone();
    let mask = mask.clone();
    tape.push_custom(Tensor::scalar(acc), |out| {
        Box::new(MaskedSseGridOp {
            pred: pred.0,
            out,
            target,
            mask,
            plane,
            channels,
        })
    })
}

struct MaskedSseGridOp {
    pred: usize,
    out: usize,
    target: Tensor,
    mask: Tensor,
    plane: usize,
    channels: usize,
}

impl TapeOp for MaskedSseGridOp {
    fn out(&self) -> usize {
        self.out
    }
    fn backward(&self, vals: &[Tensor], grads: &mut [Tensor], grad_out: &Tensor) {
        let go = grad_out.item();
        let p = vals[self.pred].data();
        let g = grads[self.pred].data_mut();
        for c in 0..self.channels {
            for i in 0..self.plane {
                let idx = c * self.plane + i;
                g[idx] += go * 2.0 * (p[idx] - self.target.data()[idx]) * self.mask.data()[i];
            }
        }
    }
}

/// Unmasked squared error over every element (the junction possibility loss).
pub fn sse(tape: &mut Tape, pred: VarId, target: &Tensor) -> VarId {
    let p = tape.value(pred).data();
    let acc: f64 = p
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum();
    let target = target.clone();
    tape.push_custom(Tensor::scalar(acc), |out| {
        Box::new(SseOp {
            pred: pred.0,
            out,
            target,
        })
    })
}

struct SseOp {
    pred: usize,
    out: usize,
    target: Tensor,
}

impl TapeOp for SseOp {
    fn out(&self) -> usize {
        self.out
    }
    fn backward(&self, vals: &[Tensor], grads: &mut [Tensor], grad_out: &Tensor) {
        let go = grad_out.item();
        let p = vals[self.pred].data();
        let g = grads[self.pred].data_mut();
        for i in 0..p.len() {
            g[i] += go * 2.0 * (p[i] - self.target.data()[i]);
        }
    }
}

/// Masked squared error over row-major [rows, c] data with one mask entry
/// per row. Covers the junction offset and orientation losses.
pub fn masked_sse_rows(tape: &mut Tape, pred: VarId, target: &Tensor, mask: &Tensor) -> VarId {
    let p = tape.value(pred).data();
    let rows = mask.len();
    let channels = p.len() / rows.max(1);
    let mut acc = 0.0;
    for r in 0..rows {
        let m = mask.data()[r];
        if m == 0.0 {
            continue;
        }
        for c in 0..channels {
            let idx = r * channels + c;
            let d = p[idx] - target.data()[idx];
            acc += m * d * d;
        }
    }
    let target = target.clone();
    let mask = mask.clone();
    tape.push_custom(Tensor::scalar(acc), |out| {
        Box::new(MaskedSseRowsOp {
            pred: pred.0,
            out,
            target,
            mask,
            channels,
        })
    })
}

struct MaskedSseRowsOp {
    pred: usize,
    out: usize,
    target: Tensor,
    mask: Tensor,
    channels: usize,
}

impl TapeOp for MaskedSseRowsOp {
    fn out(&self) -> usize {
        self.out
    }
    fn backward(&self, vals: &[Tensor], grads: &mut [Tensor], grad_out: &Tensor) {
        let go = grad_out.item();
        let p = vals[self.pred].data();
        let g = grads[self.pred].data_mut();
        for (r, &m) in self.mask.data().iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for c in 0..self.channels {
                let idx = r * self.channels + c;
                g[idx] += go * 2.0 * m * (p[idx] - self.target.data()[idx]);
            }
        }
    }
}

/// Class-weighted categorical cross-entropy over [rows, 3] predictions with
/// one-hot targets and a per-row mask; predictions are clamped at `CE_EPS`
/// before the logarithm.
pub fn weighted_cross_entropy(
    tape: &mut Tape,
    pred: VarId,
    onehot: &Tensor,
    mask: &Tensor,
    lambda: [f64; 3],
) -> VarId {
    let p = tape.value(pred).data();
    let rows = mask.len();
    let mut acc = 0.0;
    for r in 0..rows {
        let m = mask.data()[r];
        if m == 0.0 {
            continue;
        }
        for c in 0..3 {
            let t = onehot.data()[r * 3 + c];
            if t != 0.0 {
                acc -= m * lambda[c] * t * p[r * 3 + c].max(CE_EPS).ln();
            }
        }
    }
    let onehot = onehot.clone();
    let mask = mask.clone();
    tape.push_custom(Tensor::scalar(acc), |out| {
        Box::new(WeightedCeOp {
            pred: pred.0,
            out,
            onehot,
            mask,
            lambda,
        })
    })
}

struct WeightedCeOp {
    pred: usize,
    out: usize,
    onehot: Tensor,
    mask: Tensor,
    lambda: [f64; 3],
}

impl TapeOp for WeightedCeOp {
    fn out(&self) -> usize {
        self.out
    }
    fn backward(&self, vals: &[Tensor], grads: &mut [Tensor], grad_out: &Tensor) {
        let go = grad_out.item();
        let p = vals[self.pred].data();
        let g = grads[self.pred].data_mut();
        for (r, &m) in self.mask.data().iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for c in 0..3 {
                let idx = r * 3 + c;
                let t = self.onehot.data()[idx];
                if t != 0.0 && p[idx] > CE_EPS {
                    g[idx] -= go * m * self.lambda[c] * t / p[idx];
                }
            }
        }
    }
}

/// Occupancy squared error with the occupied/vacant partition: unit weight on
/// occupied rows and `lambda_vac` on vacant rows; unsupervised rows are zero.
pub fn occupancy_loss(
    tape: &mut Tape,
    pred: VarId,
    target: &Tensor,
    i_occ: &Tensor,
    i_vac: &Tensor,
    lambda_vac: f64,
) -> VarId {
    let p = tape.value(pred).data();
    let mut acc = 0.0;
    for i in 0..p.len() {
        let d = p[i] - target.data()[i];
        acc += (i_occ.data()[i] + lambda_vac * i_vac.data()[i]) * d * d;
    }
    let target = target.clone();
    let i_occ = i_occ.clone();
    let i_vac = i_vac.clone();
    tape.push_custom(Tensor::scalar(acc), |out| {
        Box::new(OccupancyLossOp {
            pred: pred.0,
            out,
            target,
            i_occ,
            i_vac,
            lambda_vac,
        })
    })
}

struct OccupancyLossOp {
    pred: usize,
    out: usize,
    target: Tensor,
    i_occ: Tensor,
    i_vac: Tensor,
    lambda_vac: f64,
}

impl TapeOp for OccupancyLossOp {
    fn out(&self) -> usize {
        self.out
    }
    fn backward(&self, vals: &[Tensor], grads: &mut [Tensor], grad_out: &Tensor) {
        let go = grad_out.item();
        let p = vals[self.pred].data();
        let g = grads[self.pred].data_mut();
        for i in 0..p.len() {
            let wgt = self.i_occ.data()[i] + self.lambda_vac * self.i_vac.data()[i];
            g[i] += go * 2.0 * wgt * (p[i] - self.target.data()[i]);
        }
    }
}

// ---- stage aggregates ----

/// First-stage loss slice: the weighted total (on tape) plus term values.
#[derive(Debug, Clone, Copy)]
pub struct FirstStageLoss {
    pub total: VarId,
    pub value: f64,
    pub ep: f64,
    pub exy: f64,
    pub el: f64,
    pub eo: f64,
    pub so: f64,
}

fn check_shape(tape: &Tape, pred: VarId, target: &Tensor) -> Result<()> {
    if tape.value(pred).shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", target.shape()),
            got: format!("{:?}", tape.value(pred).shape()),
        });
    }
    Ok(())
}

/// The weighted sum of the five first-stage losses.
pub fn loss_first(
    tape: &mut Tape,
    pred: &RpnPrediction,
    targets: &RpnTargets,
    w: &LossWeights,
) -> Result<FirstStageLoss> {
    check_shape(tape, pred.ep, &targets.ep)?;
    check_shape(tape, pred.exy, &targets.exy)?;
    check_shape(tape, pred.el, &targets.el)?;
    check_shape(tape, pred.eo, &targets.eo)?;
    check_shape(tape, pred.so, &targets.so)?;
    let mask = &targets.ep;
    let ep = possibility_loss(tape, pred.ep, &targets.ep, mask, w.lambda_e);
    let mask_plane = Tensor::from_vec(&[mask.len()], mask.data().to_vec());
    let exy = masked_sse_grid(tape, pred.exy, &targets.exy, &mask_plane);
    let el = masked_sse_grid(tape, pred.el, &targets.el, &mask_plane);
    let eo = masked_sse_grid(tape, pred.eo, &targets.eo, &mask_plane);
    let so = masked_sse_grid(tape, pred.so, &targets.so, &mask_plane);
    let (vep, vexy, vel, veo, vso) = (
        tape.value(ep).item(),
        tape.value(exy).item(),
        tape.value(el).item(),
        tape.value(eo).item(),
        tape.value(so).item(),
    );
    let mut total = tape.scale(ep, w.w_ep);
    for (term, wgt) in [(exy, w.w_exy), (el, w.w_el), (eo, w.w_eo), (so, w.w_so)] {
        let scaled = tape.scale(term, wgt);
        total = tape.add(total, scaled);
    }
    Ok(FirstStageLoss {
        total,
        value: tape.value(total).item(),
        ep: vep,
        exy: vexy,
        el: vel,
        eo: veo,
        so: vso,
    })
}

/// SDN loss slice.
#[derive(Debug, Clone, Copy)]
pub struct SdnLoss {
    pub total: VarId,
    pub value: f64,
    pub jp: f64,
    pub jxy: f64,
    pub jo: f64,
}

/// The weighted sum of the three SDN losses. `R` must agree between the
/// prediction and the targets.
pub fn loss_sdn(
    tape: &mut Tape,
    pred: &SdnPrediction,
    targets: &SdnScnTargets,
    w: &LossWeights,
) -> Result<SdnLoss> {
    if tape.value(pred.jp).len() != targets.r {
        return Err(Error::ShapeMismatch {
            expected: format!("R = {}", targets.r),
            got: format!("R = {}", tape.value(pred.jp).len()),
        });
    }
    let jp = sse(tape, pred.jp, &targets.jp);
    let jxy = masked_sse_rows(tape, pred.jxy, &targets.jxy, &targets.jp);
    let jo = masked_sse_rows(tape, pred.jo, &targets.jo, &targets.jp);
    let (vjp, vjxy, vjo) = (
        tape.value(jp).item(),
        tape.value(jxy).item(),
        tape.value(jo).item(),
    );
    let mut total = tape.scale(jp, w.w_jp);
    for (term, wgt) in [(jxy, w.w_jxy), (jo, w.w_jo)] {
        let scaled = tape.scale(term, wgt);
        total = tape.add(total, scaled);
    }
    Ok(SdnLoss {
        total,
        value: tape.value(total).item(),
        jp: vjp,
        jxy: vjxy,
        jo: vjo,
    })
}

/// SCN loss slice.
#[derive(Debug, Clone, Copy)]
pub struct ScnLoss {
    pub total: VarId,
    pub value: f64,
    pub st: f64,
    pub socc: f64,
}

/// The weighted sum of the type and occupancy losses over the R/2 SCN rows.
pub fn loss_scn(
    tape: &mut Tape,
    pred: &ScnPrediction,
    targets: &SdnScnTargets,
    w: &LossWeights,
) -> Result<ScnLoss> {
    let rows = targets.r / 2;
    if tape.value(pred.socc).len() != rows {
        return Err(Error::ShapeMismatch {
            expected: format!("R/2 = {rows}"),
            got: format!("{}", tape.value(pred.socc).len()),
        });
    }
    let st = weighted_cross_entropy(tape, pred.st, &targets.st, &targets.i_slot, w.lambda_st);
    let occ_mask: Vec<f64> = targets
        .i_slot
        .data()
        .iter()
        .zip(targets.socc.data())
        .map(|(&m, &t)| m * t)
        .collect();
    let vac_mask: Vec<f64> = targets
        .i_slot
        .data()
        .iter()
        .zip(targets.socc.data())
        .map(|(&m, &t)| m * (1.0 - t))
        .collect();
    let i_occ = Tensor::from_vec(&[rows], occ_mask);
    let i_vac = Tensor::from_vec(&[rows], vac_mask);
    let socc = occupancy_loss(tape, pred.socc, &targets.socc, &i_occ, &i_vac, w.lambda_vac);
    let (vst, vsocc) = (tape.value(st).item(), tape.value(socc).item());
    let st_scaled = tape.scale(st, w.w_st);
    let socc_scaled = tape.scale(socc, w.w_socc);
    let total = tape.add(st_scaled, socc_scaled);
    Ok(ScnLoss {
        total,
        value: tape.value(total).item(),
        st: vst,
        socc: vsocc,
    })
}

/// Second-stage total: the plain sum of the SDN and SCN slices.
#[derive(Debug, Clone, Copy)]
pub struct SecondStageLoss {
    pub total: VarId,
    pub value: f64,
}

pub fn loss_second(tape: &mut Tape, sdn: &SdnLoss, scn: &ScnLoss) -> SecondStageLoss {
    let total = tape.add(sdn.total, scn.total);
    SecondStageLoss {
        total,
        value: tape.value(total).item(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::Tape;

    fn grid_2x2() -> GridSpec {
        GridSpec::for_image(64, 64, 400.0).unwrap()
    }

    /// Builds an RpnPrediction whose tensors equal the given targets.
    fn pred_from_targets(tape: &mut Tape, t: &RpnTargets) -> RpnPrediction {
        RpnPrediction {
            ep: tape.leaf(t.ep.clone()),
            exy: tape.leaf(t.exy.clone()),
            eo: tape.leaf(t.eo.clone()),
            el: tape.leaf(t.el.clone()),
            so: tape.leaf(t.so.clone()),
        }
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let grid = grid_2x2();
        let mut t = RpnTargets::zeros(&grid);
        t.ep.data_mut()[0] = 1.0;
        t.exy.data_mut()[0] = 0.25;
        t.el.data_mut()[0] = 0.3;
        t.eo.data_mut()[0] = 1.0;
        t.so.data_mut()[grid.h * grid.w] = 1.0;
        let mut tape = Tape::new();
        let pred = pred_from_targets(&mut tape, &t);
        let l = loss_first(&mut tape, &pred, &t, &LossWeights::snu()).unwrap();
        assert_eq!(l.value, 0.0);
        assert_eq!(l.ep, 0.0);
        assert_eq!(l.exy, 0.0);
    }

    #[test]
    fn negative_cell_possibility_example() {
        // Single negative cell, prediction 0.5, lambda_e 0.03 -> 0.0075.
        let one = GridSpec {
            h: 1,
            w: 1,
            cell_w: 32.0,
            cell_h: 32.0,
            l_max: 400.0,
        };
        let t = RpnTargets::zeros(&one);
        let mut tape = Tape::new();
        let mut pred = pred_from_targets(&mut tape, &t);
        pred.ep = tape.leaf(Tensor::from_vec(&[1, 1, 1], vec![0.5]));
        let w = LossWeights::snu();
        let l = loss_first(&mut tape, &pred, &t, &w).unwrap();
        assert!((l.ep - 0.0075).abs() < 1e-15);
        assert!((l.value - 400.0 * 0.0075).abs() < 1e-12);
    }

    #[test]
    fn weighted_sum_matches_hand_computation() {
        let grid = grid_2x2();
        let mut t = RpnTargets::zeros(&grid);
        t.ep.data_mut()[1] = 1.0;
        t.exy.data_mut()[1] = 0.4;
        t.exy.data_mut()[grid.h * grid.w + 1] = 0.6;
        t.el.data_mut()[1] = 0.25;
        t.eo.data_mut()[1] = 1.0;
        t.so.data_mut()[grid.h * grid.w + 1] = -1.0;
        let mut tape = Tape::new();
        let mut pred = pred_from_targets(&mut tape, &t);
        // Perturb each channel at the positive cell.
        let bump = |t: &Tensor, idx: usize, d: f64| {
            let mut v = t.data().to_vec();
            v[idx] += d;
            Tensor::from_vec(t.shape(), v)
        };
        pred.ep = tape.leaf(bump(&t.ep, 1, -0.2));
        pred.exy = tape.leaf(bump(&t.exy, 1, 0.1));
        pred.el = tape.leaf(bump(&t.el, 1, 0.05));
        pred.eo = tape.leaf(bump(&t.eo, grid.h * grid.w + 1, 0.3));
        pred.so = tape.leaf(bump(&t.so, 1, -0.4));
        let w = LossWeights::snu();
        let l = loss_first(&mut tape, &pred, &t, &w).unwrap();
        let expect_ep = 0.2f64.powi(2);
        let expect_exy = 0.1f64.powi(2);
        let expect_el = 0.05f64.powi(2);
        let expect_eo = 0.3f64.powi(2);
        let expect_so = 0.4f64.powi(2);
        let expect = 400.0 * expect_ep
            + 400.0 * expect_exy
            + 1000.0 * expect_el
            + 1000.0 * expect_eo
            + 400.0 * expect_so;
        assert!((l.value - expect).abs() < 1e-9);
    }

    fn sdn_scn_targets_one_roi() -> SdnScnTargets {
        SdnScnTargets {
            jp: Tensor::from_vec(&[2], vec![1.0, 0.0]),
            jxy: Tensor::from_vec(&[2, 2], vec![0.45, 0.40, 0.0, 0.0]),
            jo: Tensor::from_vec(&[2, 2], vec![0.0, 1.0, 0.0, 0.0]),
            st: Tensor::from_vec(&[1, 3], vec![0.0, 0.0, 1.0]),
            socc: Tensor::from_vec(&[1], vec![0.0]),
            i_slot: Tensor::from_vec(&[1], vec![1.0]),
            r: 2,
        }
    }

    #[test]
    fn junction_possibility_example() {
        let t = sdn_scn_targets_one_roi();
        let mut tape = Tape::new();
        let pred = SdnPrediction {
            jp: tape.leaf(Tensor::from_vec(&[2], vec![0.6, 0.0])),
            jxy: tape.leaf(t.jxy.clone()),
            jo: tape.leaf(t.jo.clone()),
        };
        let l = loss_sdn(&mut tape, &pred, &t, &LossWeights::snu()).unwrap();
        assert!((l.jp - 0.16).abs() < 1e-15);
        // Masked rows contribute nothing regardless of prediction values.
        let mut tape = Tape::new();
        let pred = SdnPrediction {
            jp: tape.leaf(t.jp.clone()),
            jxy: tape.leaf(Tensor::from_vec(&[2, 2], vec![0.45, 0.40, 0.9, 0.9])),
            jo: tape.leaf(Tensor::from_vec(&[2, 2], vec![0.0, 1.0, -0.7, 0.2])),
        };
        let l = loss_sdn(&mut tape, &pred, &t, &LossWeights::snu()).unwrap();
        assert_eq!(l.jxy, 0.0);
        assert_eq!(l.jo, 0.0);
    }

    #[test]
    fn sdn_r_mismatch_rejected() {
        let t = sdn_scn_targets_one_roi();
        let mut tape = Tape::new();
        let pred = SdnPrediction {
            jp: tape.leaf(Tensor::zeros(&[4])),
            jxy: tape.leaf(Tensor::zeros(&[4, 2])),
            jo: tape.leaf(Tensor::zeros(&[4, 2])),
        };
        assert!(loss_sdn(&mut tape, &pred, &t, &LossWeights::snu()).is_err());
    }

    #[test]
    fn type_cross_entropy_example() {
        let t = sdn_scn_targets_one_roi();
        let mut tape = Tape::new();
        let pred = ScnPrediction {
            socc: tape.leaf(t.socc.clone()),
            st: tape.leaf(Tensor::from_vec(&[1, 3], vec![0.1, 0.1, 0.8])),
        };
        let l = loss_scn(&mut tape, &pred, &t, &LossWeights::snu()).unwrap();
        let expect = -14.92 * 0.8f64.ln();
        assert!((l.st - expect).abs() < 1e-12);
        assert!((l.st - 3.3293).abs() < 1e-4);
    }

    #[test]
    fn occupancy_vacant_example() {
        let t = sdn_scn_targets_one_roi();
        let mut tape = Tape::new();
        let pred = ScnPrediction {
            socc: tape.leaf(Tensor::from_vec(&[1], vec![0.2])),
            st: tape.leaf(t.st.clone()),
        };
        let l = loss_scn(&mut tape, &pred, &t, &LossWeights::snu()).unwrap();
        assert!((l.socc - 0.0296).abs() < 1e-15);
    }

    #[test]
    fn unsupervised_scn_row_contributes_zero() {
        let mut t = sdn_scn_targets_one_roi();
        t.i_slot.data_mut()[0] = 0.0;
        let mut tape = Tape::new();
        let pred = ScnPrediction {
            socc: tape.leaf(Tensor::from_vec(&[1], vec![0.9])),
            st: tape.leaf(Tensor::from_vec(&[1, 3], vec![0.5, 0.25, 0.25])),
        };
        let l = loss_scn(&mut tape, &pred, &t, &LossWeights::snu()).unwrap();
        assert_eq!(l.st, 0.0);
        assert_eq!(l.socc, 0.0);
        assert_eq!(l.value, 0.0);
    }

    #[test]
    fn second_stage_total_is_sum() {
        let t = sdn_scn_targets_one_roi();
        let mut tape = Tape::new();
        let sdn_pred = SdnPrediction {
            jp: tape.leaf(Tensor::from_vec(&[2], vec![0.7, 0.2])),
            jxy: tape.leaf(Tensor::from_vec(&[2, 2], vec![0.5, 0.5, 0.5, 0.5])),
            jo: tape.leaf(Tensor::from_vec(&[2, 2], vec![0.6, 0.6, 0.0, 0.0])),
        };
        let scn_pred = ScnPrediction {
            socc: tape.leaf(Tensor::from_vec(&[1], vec![0.4])),
            st: tape.leaf(Tensor::from_vec(&[1, 3], vec![0.3, 0.3, 0.4])),
        };
        let w = LossWeights::snu();
        let sdn = loss_sdn(&mut tape, &sdn_pred, &t, &w).unwrap();
        let scn = loss_scn(&mut tape, &scn_pred, &t, &w).unwrap();
        let second = loss_second(&mut tape, &sdn, &scn);
        assert_eq!(second.value, sdn.value + scn.value);
    }

    #[test]
    fn weight_scaling_scales_term_and_gradient() {
        let grid = grid_2x2();
        let mut t = RpnTargets::zeros(&grid);
        t.ep.data_mut()[0] = 1.0;
        let run = |w_ep: f64| -> (f64, Vec<f64>) {
            let mut tape = Tape::new();
            let mut pred = pred_from_targets(&mut tape, &t);
            pred.ep = tape.leaf(Tensor::from_vec(&[1, 2, 2], vec![0.3, 0.6, 0.1, 0.2]));
            let mut w = LossWeights::snu();
            w.w_ep = w_ep;
            let l = loss_first(&mut tape, &pred, &t, &w).unwrap();
            let grads = tape.backward(l.total);
            (l.value, grads[pred.ep.0].data().to_vec())
        };
        let (v1, g1) = run(100.0);
        let (v3, g3) = run(300.0);
        assert!((v3 - 3.0 * v1).abs() < 1e-9);
        for (a, b) in g1.iter().zip(&g3) {
            assert!((b - 3.0 * a).abs() < 1e-9);
        }
    }

    #[test]
    fn corpus_stats_ratio_definitions() {
        use crate::geometry::{assemble_slot, Occupancy, Point2, SlotType, UnitVec2};
        let grid = GridSpec::for_image(128, 128, 400.0).unwrap(); // 16 cells
        let up = UnitVec2 { cx: 0.0, cy: 1.0 };
        let mk = |x: f64, ty: SlotType, occ: Occupancy| {
            assemble_slot(
                Point2::new(x, 10.0),
                Point2::new(x + 50.0, 10.0),
                up,
                up,
                ty,
                occ,
            )
            .unwrap()
        };
        let labels = vec![
            vec![
                mk(0.0, SlotType::Perpendicular, Occupancy::Vacant),
                mk(60.0, SlotType::Parallel, Occupancy::Occupied),
            ],
            vec![mk(0.0, SlotType::Perpendicular, Occupancy::Vacant)],
        ];
        let s = CorpusStats::from_labels(&labels, &grid);
        assert_eq!(s.positive_cells, 3);
        assert_eq!(s.negative_cells, 2 * 16 - 3);
        assert!((s.lambda_e() - 3.0 / 29.0).abs() < 1e-15);
        assert_eq!(s.type_counts, [2, 1, 0]);
        assert_eq!(s.lambda_st(), [1.5, 3.0, 0.0]);
        assert!((s.lambda_vac() - 0.5).abs() < 1e-15);
    }
}
