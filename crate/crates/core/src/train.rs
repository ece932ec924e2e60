//! Adam optimization with the alternating two-stage schedule.
//!
//! Epochs 1..=alternate_epochs train the first stage (odd epochs) and the
//! second stage (even epochs) in turn; the remaining epochs train both
//! jointly. The shared backbone receives gradients from whichever stage is
//! active. During second-stage and joint epochs the SDN/SCN see ground-truth
//! entrances perturbed by small noise instead of live RPN output, so the
//! heads always train on well-posed targets.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{encode_rpn, encode_sdn_scn, GridSpec, RoiSpec, RpnTargets};
use crate::diffnet::model::{
    backbone_forward, extract_patch_rows, rpn_head, scn_head, sdn_head, Model,
};
use crate::diffnet::{save_checkpoint, Tape, Tensor};
use crate::evalx::{match_slots, EvalReport, MatchCriteria, ReportAccumulator};
use crate::geometry::{designate_rois, entrance_from_slot, ParkingSlot, Point2, RoiSet, SlotEntrance};
use crate::losses::{loss_first, loss_scn, loss_sdn, loss_second, LossWeights};
use crate::pipeline::{detect_image, image_to_tensor, DetectOptions};
use crate::synth::Corpus;
use crate::{Error, Result};

/// Full training configuration. Adam defaults follow the published settings
/// (lr 1e-4, betas 0.9/0.999, eps 1e-8, 80 epochs, batch 32, 60 alternating
/// epochs); the desk preset trades batch size and learning rate for CPU
/// wall-clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub alternate_epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub weights: LossWeights,
    pub l_max: f64,
    /// Number of trailing corpus samples held out for per-epoch evaluation.
    pub holdout: usize,
    pub tau_prop: f64,
    pub tau_j: f64,
    pub nms_dist: f64,
    pub k1: f64,
    pub k2: f64,
    /// Proposal perturbation for second-stage training: center pixels.
    pub center_noise: f64,
    /// Proposal perturbation: orientation degrees.
    pub angle_noise_deg: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 80,
            batch_size: 32,
            alternate_epochs: 60,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 1,
            weights: LossWeights::snu(),
            l_max: 400.0,
            holdout: 100,
            tau_prop: 0.5,
            tau_j: 0.5,
            nms_dist: 16.0,
            k1: 50.0,
            k2: 32.0,
            center_noise: 4.0,
            angle_noise_deg: 3.0,
        }
    }
}

impl TrainConfig {
    /// Config bundle for a named preset ("snu", "ps20", "desk").
    pub fn for_preset(name: &str) -> Result<Self> {
        let preset = crate::losses::preset(name)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown preset {name:?}")))?;
        let mut cfg = TrainConfig {
            weights: preset.weights,
            l_max: preset.l_max,
            ..TrainConfig::default()
        };
        if name == "desk" {
            cfg.batch_size = 8;
            cfg.lr = 2e-3;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alternate_epochs > self.epochs {
            return Err(Error::InvalidConfig(
                "alternate_epochs must not exceed epochs".into(),
            ));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be positive".into()));
        }
        self.weights.validate()?;
        Ok(())
    }

    pub fn detect_options(&self) -> DetectOptions {
        DetectOptions {
            tau_prop: self.tau_prop,
            tau_j: self.tau_j,
            nms_dist: self.nms_dist,
            k1: self.k1,
            k2: self.k2,
            l_max: self.l_max,
        }
    }
}

/// Per-parameter Adam accumulators. Each parameter keeps its own step count
/// because the alternating schedule updates disjoint subsets.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: Vec<u64>,
}

impl AdamState {
    pub fn new(model: &Model) -> Self {
        Self {
            m: model.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: model.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            t: vec![0; model.params.len()],
        }
    }
}

/// One bias-corrected Adam update over the masked parameter subset.
/// Parameters whose gradient contains a non-finite value are skipped (their
/// moments and step count stay untouched); the skip count is returned.
pub fn adam_step(
    model: &mut Model,
    grads: &[Tensor],
    mask: &[bool],
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> usize {
    let mut skipped = 0usize;
    for i in 0..model.params.len() {
        if !mask[i] {
            continue;
        }
        let g = &grads[i];
        if !g.all_finite() {
            skipped += 1;
            continue;
        }
        state.t[i] += 1;
        let t = state.t[i] as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let p = model.params[i].value.data_mut();
        for k in 0..p.len() {
            let gk = g.data()[k];
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p[k] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    skipped
}

/// Which parameters an epoch trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    First,
    Second,
    Joint,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::First => "first",
            Stage::Second => "second",
            Stage::Joint => "joint",
        }
    }
}

/// Alternating schedule: odd epochs train stage one, even epochs stage two,
/// and every epoch past `alternate_epochs` trains both jointly.
pub fn epoch_stage(epoch: usize, alternate_epochs: usize) -> Stage {
    if epoch <= alternate_epochs {
        if epoch % 2 == 1 {
            Stage::First
        } else {
            Stage::Second
        }
    } else {
        Stage::Joint
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub stage: String,
    pub loss_first: Option<f64>,
    pub loss_second: Option<f64>,
    pub eval_recall: Option<f64>,
    pub eval_precision: Option<f64>,
    pub skipped_params: usize,
}

/// Training result paths and the in-memory metrics history.
#[derive(Debug)]
pub struct TrainOutcome {
    pub metrics: Vec<EpochMetrics>,
    pub checkpoint_path: std::path::PathBuf,
    pub metrics_path: std::path::PathBuf,
    pub corrupted_samples: usize,
}

struct LoadedSample {
    pixels: Vec<u8>,
    width: usize,
    height: usize,
    slots: Vec<ParkingSlot>,
    rpn_targets: RpnTargets,
}

fn load_samples(
    corpus: &Corpus,
    grid: &GridSpec,
) -> Result<(Vec<LoadedSample>, usize)> {
    let results: Vec<Result<LoadedSample>> = (0..corpus.len() as u64)
        .into_par_iter()
        .map(|i| -> Result<LoadedSample> {
            let s = corpus.read(i)?;
            let rpn_targets = encode_rpn(&s.slots, grid)?;
            Ok(LoadedSample {
                pixels: s.pixels,
                width: s.width,
                height: s.height,
                slots: s.slots,
                rpn_targets,
            })
        })
        .collect();
    let mut samples = Vec::new();
    let mut corrupted = 0usize;
    for r in results {
        match r {
            Ok(s) => samples.push(s),
            Err(e) => {
                eprintln!("skipping corrupted sample: {e}");
                corrupted += 1;
            }
        }
    }
    if samples.is_empty() {
        return Err(Error::InvalidConfig("corpus contains no readable samples".into()));
    }
    Ok((samples, corrupted))
}

/// Deterministic per-(epoch, sample) proposal perturbation.
fn perturbed_proposals(
    slots: &[ParkingSlot],
    seed: u64,
    epoch: usize,
    sample: usize,
    center_noise: f64,
    angle_noise_deg: f64,
) -> Vec<SlotEntrance> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x5045_5254_5552_4221);
    rng.set_stream(((epoch as u64) << 32) | sample as u64);
    slots
        .iter()
        .filter_map(|s| entrance_from_slot(s).ok())
        .map(|mut e| {
            e.center = Point2::new(
                e.center.x + rng.gen_range(-center_noise..=center_noise),
                e.center.y + rng.gen_range(-center_noise..=center_noise),
            );
            let a = angle_noise_deg.to_radians();
            e.eo = e.eo.rotate_rad(rng.gen_range(-a..=a));
            e.so = e.so.rotate_rad(rng.gen_range(-a..=a));
            e
        })
        .collect()
}

struct StepResult {
    grads: Vec<Tensor>,
    loss_first: f64,
    loss_second: f64,
}

fn image_step(
    model: &Model,
    sample: &LoadedSample,
    stage: Stage,
    cfg: &TrainConfig,
    epoch: usize,
    sample_idx: usize,
) -> Result<StepResult> {
    let mut tape = Tape::new();
    let pv = model.push_params(&mut tape);
    let n_params = model.params.len();
    let image = tape.leaf(image_to_tensor(&sample.pixels, sample.width, sample.height));
    let (high, low) = backbone_forward(&mut tape, image, model, &pv)?;

    let mut first_value = 0.0;
    let mut second_value = 0.0;
    let mut roots = Vec::new();

    if stage == Stage::First || stage == Stage::Joint {
        let pred = rpn_head(&mut tape, low, model, &pv);
        let first = loss_first(&mut tape, &pred, &sample.rpn_targets, &cfg.weights)?;
        first_value = first.value;
        roots.push(first.total);
    }
    if stage == Stage::Second || stage == Stage::Joint {
        let proposals = perturbed_proposals(
            &sample.slots,
            cfg.seed,
            epoch,
            sample_idx,
            cfg.center_noise,
            cfg.angle_noise_deg,
        );
        if !proposals.is_empty() {
            let rois: Vec<RoiSet> = proposals
                .iter()
                .map(|p| designate_rois(p, cfg.k1, cfg.k2))
                .collect();
            let roi_spec = RoiSpec::default();
            let targets = encode_sdn_scn(&rois, &sample.slots, &roi_spec, roi_spec.w_roi);
            let patches = extract_patch_rows(&mut tape, high, low, &rois);
            let sdn_pred = sdn_head(&mut tape, patches.junctions, patches.orientations, model, &pv);
            let scn_pred = scn_head(&mut tape, patches.classes, model, &pv);
            let sdn = loss_sdn(&mut tape, &sdn_pred, &targets, &cfg.weights)?;
            let scn = loss_scn(&mut tape, &scn_pred, &targets, &cfg.weights)?;
            let second = loss_second(&mut tape, &sdn, &scn);
            second_value = second.value;
            roots.push(second.total);
        }
    }

    let root = match roots.len() {
        0 => {
            return Ok(StepResult {
                grads: model.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
                loss_first: 0.0,
                loss_second: 0.0,
            })
        }
        1 => roots[0],
        _ => tape.add(roots[0], roots[1]),
    };
    let mut grads = tape.backward(root);
    grads.truncate(n_params);
    Ok(StepResult {
        grads,
        loss_first: first_value,
        loss_second: second_value,
    })
}

/// Evaluates the current model on held-out samples under the loose criteria.
fn holdout_eval(
    model: &Model,
    samples: &[LoadedSample],
    opts: &DetectOptions,
) -> Result<EvalReport> {
    let outcomes: Vec<_> = samples
        .par_iter()
        .map(|s| -> Result<_> {
            let image = image_to_tensor(&s.pixels, s.width, s.height);
            let det = detect_image(model, &image, opts)?;
            Ok(match_slots(&det.slots, &s.slots, &MatchCriteria::loose()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut acc = ReportAccumulator::new();
    for o in &outcomes {
        acc.add(o);
    }
    Ok(acc.report(MatchCriteria::loose()))
}

/// Trains a model over a corpus directory, writing `checkpoint.bin` (each
/// epoch, atomically) and `metrics.jsonl` (one line per epoch) to `out_dir`.
pub fn train(
    model: &mut Model,
    corpus: &Corpus,
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let first = corpus.read(0)?;
    let grid = GridSpec::for_image(first.width, first.height, cfg.l_max)?;
    let (all, corrupted) = load_samples(corpus, &grid)?;
    if all.iter().any(|s| (s.width, s.height) != (first.width, first.height)) {
        return Err(Error::InvalidConfig("corpus images must share one size".into()));
    }
    let holdout = cfg.holdout.min(all.len().saturating_sub(1));
    let (train_set, eval_set) = all.split_at(all.len() - holdout);

    let mut state = AdamState::new(model);
    let checkpoint_path = out_dir.join("checkpoint.bin");
    let metrics_path = out_dir.join("metrics.jsonl");
    let mut metrics_file = fs::File::create(&metrics_path)?;
    let mut metrics = Vec::new();
    let opts = cfg.detect_options();

    for epoch in 1..=cfg.epochs {
        let stage = epoch_stage(epoch, cfg.alternate_epochs);
        let mask = match stage {
            Stage::First => model.stage1_mask(),
            Stage::Second => model.stage2_mask(),
            Stage::Joint => vec![true; model.params.len()],
        };

        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut shuffle_rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ 0x5348_5546_464c_4521);
        shuffle_rng.set_stream(epoch as u64);
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut epoch_first = 0.0;
        let mut epoch_second = 0.0;
        let mut skipped = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<StepResult> = batch
                .par_iter()
                .map(|&i| image_step(model, &train_set[i], stage, cfg, epoch, i))
                .collect::<Result<Vec<_>>>()?;
            // Sum per-image gradients in batch order: deterministic under any
            // thread count.
            let mut grads: Vec<Tensor> = model
                .params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect();
            for r in &results {
                for (g, rg) in grads.iter_mut().zip(&r.grads) {
                    for (a, b) in g.data_mut().iter_mut().zip(rg.data()) {
                        *a += b;
                    }
                }
                epoch_first += r.loss_first;
                epoch_second += r.loss_second;
            }
            skipped += adam_step(model, &grads, &mask, &mut state, cfg);
        }

        let n = train_set.len() as f64;
        let eval = if eval_set.is_empty() {
            None
        } else {
            Some(holdout_eval(model, eval_set, &opts)?)
        };
        let line = EpochMetrics {
            epoch,
            stage: stage.as_str().to_string(),
            loss_first: match stage {
                Stage::Second => None,
                _ => Some(epoch_first / n),
            },
            loss_second: match stage {
                Stage::First => None,
                _ => Some(epoch_second / n),
            },
            eval_recall: eval.as_ref().and_then(|e| e.recall),
            eval_precision: eval.as_ref().and_then(|e| e.precision),
            skipped_params: skipped,
        };
        let json = serde_json::to_string(&line)?;
        writeln!(metrics_file, "{json}")?;
        metrics_file.flush()?;
        metrics.push(line);
        save_checkpoint(model, &checkpoint_path)?;
    }

    Ok(TrainOutcome {
        metrics,
        checkpoint_path,
        metrics_path,
        corrupted_samples: corrupted,
    })
}
