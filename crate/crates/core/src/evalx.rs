//! Detection matching and evaluation metrics.
//!
//! A detection is a true positive when both of its junctions fall within M
//! pixels of an unmatched ground-truth slot's junctions and both
//! separating-line orientations agree within N degrees. Matching is greedy in
//! descending score order; the junction correspondence for a pair is the one
//! minimizing the larger of the two distances. Entrance-orientation error is
//! not part of the TP decision; the separating lines are what the second
//! stage predicts.

use serde::{Deserialize, Serialize};

use crate::geometry::ParkingSlot;

/// True-positive thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchCriteria {
    /// Junction distance threshold, pixels.
    pub m: f64,
    /// Orientation threshold, degrees.
    pub n: f64,
    pub label: CriteriaLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriteriaLabel {
    Loose,
    Tight,
    Custom,
}

impl MatchCriteria {
    /// 12 pixels, 10 degrees.
    pub fn loose() -> Self {
        Self {
            m: 12.0,
            n: 10.0,
            label: CriteriaLabel::Loose,
        }
    }

    /// 6 pixels, 5 degrees.
    pub fn tight() -> Self {
        Self {
            m: 6.0,
            n: 5.0,
            label: CriteriaLabel::Tight,
        }
    }

    pub fn custom(m: f64, n: f64) -> Self {
        Self {
            m,
            n,
            label: CriteriaLabel::Custom,
        }
    }
}

/// Errors of one detection/ground-truth pair under the distance-minimizing
/// junction correspondence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairErrors {
    /// Larger of the two junction distances, pixels.
    pub loc_max: f64,
    /// Mean of the two junction distances, pixels.
    pub loc_mean: f64,
    /// Larger of the two separating-line angular errors, degrees.
    pub ang_max: f64,
    /// Mean of the two separating-line angular errors, degrees.
    pub ang_mean: f64,
    /// Whether the detection's types match.
    pub type_correct: bool,
    pub occupancy_correct: bool,
}

/// Positioning/orientation errors between a detection and a ground truth.
/// The correspondence (direct or swapped) minimizes the larger junction
/// distance; the separating lines follow the chosen correspondence.
pub fn pair_errors(det: &ParkingSlot, gt: &ParkingSlot) -> PairErrors {
    let direct = (det.j1.distance(&gt.j1), det.j2.distance(&gt.j2));
    let swapped = (det.j1.distance(&gt.j2), det.j2.distance(&gt.j1));
    let (d1, d2, a1, a2) = if direct.0.max(direct.1) <= swapped.0.max(swapped.1) {
        (
            direct.0,
            direct.1,
            det.sep1.angle_to_deg(&gt.sep1),
            det.sep2.angle_to_deg(&gt.sep2),
        )
    } else {
        (
            swapped.0,
            swapped.1,
            det.sep1.angle_to_deg(&gt.sep2),
            det.sep2.angle_to_deg(&gt.sep1),
        )
    };
    PairErrors {
        loc_max: d1.max(d2),
        loc_mean: 0.5 * (d1 + d2),
        ang_max: a1.max(a2),
        ang_mean: 0.5 * (a1 + a2),
        type_correct: det.slot_type == gt.slot_type,
        occupancy_correct: det.occupancy == gt.occupancy,
    }
}

/// Whether a pair satisfies the criteria.
pub fn pair_eligible(det: &ParkingSlot, gt: &ParkingSlot, c: &MatchCriteria) -> bool {
    let e = pair_errors(det, gt);
    e.loc_max <= c.m && e.ang_max <= c.n
}

/// Result of matching one image's detections against its ground truth.
#[derive(Debug, Clone, Default)]
pub struct MatchOutcome {
    /// (detection index, ground-truth index, errors) per true positive.
    pub pairs: Vec<(usize, usize, PairErrors)>,
    /// Per-detection TP flag (false = false positive).
    pub tp_flags: Vec<bool>,
    pub gt_count: usize,
}

/// Greedy score-descending matching with per-ground-truth uniqueness. Among
/// the eligible unmatched ground truths, a detection takes the one with the
/// smallest larger-junction distance (ties: lower index).
pub fn match_slots(
    dets: &[(ParkingSlot, f64)],
    gts: &[ParkingSlot],
    c: &MatchCriteria,
) -> MatchOutcome {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .1
            .partial_cmp(&dets[a].1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut gt_taken = vec![false; gts.len()];
    let mut tp_flags = vec![false; dets.len()];
    let mut pairs = Vec::new();
    for &di in &order {
        let det = &dets[di].0;
        let mut best: Option<(usize, PairErrors)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if gt_taken[gi] {
                continue;
            }
            let e = pair_errors(det, gt);
            if e.loc_max <= c.m && e.ang_max <= c.n {
                if best.as_ref().map_or(true, |(_, be)| e.loc_max < be.loc_max) {
                    best = Some((gi, e));
                }
            }
        }
        if let Some((gi, e)) = best {
            gt_taken[gi] = true;
            tp_flags[di] = true;
            pairs.push((di, gi, e));
        }
    }
    MatchOutcome {
        pairs,
        tp_flags,
        gt_count: gts.len(),
    }
}

/// Aggregate evaluation statistics. Ratios are absent (None) when their
/// denominator is zero; the raw counts always remain valid. Error statistics
/// cover true positives only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub criteria: MatchCriteria,
    pub tp: usize,
    pub fp: usize,
    pub gt: usize,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub loc_err_mean: Option<f64>,
    pub loc_err_std: Option<f64>,
    pub ori_err_mean: Option<f64>,
    pub ori_err_std: Option<f64>,
    pub type_rate: Option<f64>,
    pub occupancy_rate: Option<f64>,
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}

/// Accumulates matching outcomes (possibly across many images) into a report.
#[derive(Debug, Default, Clone)]
pub struct ReportAccumulator {
    tp: usize,
    fp: usize,
    gt: usize,
    loc_errors: Vec<f64>,
    ori_errors: Vec<f64>,
    type_correct: usize,
    occupancy_correct: usize,
}

impl ReportAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, outcome: &MatchOutcome) {
        self.gt += outcome.gt_count;
        self.tp += outcome.pairs.len();
        self.fp += outcome.tp_flags.iter().filter(|&&f| !f).count();
        for (_, _, e) in &outcome.pairs {
            self.loc_errors.push(e.loc_mean);
            self.ori_errors.push(e.ang_mean);
            if e.type_correct {
                self.type_correct += 1;
            }
            if e.occupancy_correct {
                self.occupancy_correct += 1;
            }
        }
    }

    pub fn report(&self, criteria: MatchCriteria) -> EvalReport {
        let (loc_mean, loc_std) = mean_std(&self.loc_errors);
        let (ori_mean, ori_std) = mean_std(&self.ori_errors);
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                None
            } else {
                Some(num as f64 / den as f64)
            }
        };
        EvalReport {
            criteria,
            tp: self.tp,
            fp: self.fp,
            gt: self.gt,
            recall: ratio(self.tp, self.gt),
            precision: ratio(self.tp, self.tp + self.fp),
            loc_err_mean: loc_mean,
            loc_err_std: loc_std,
            ori_err_mean: ori_mean,
            ori_err_std: ori_std,
            type_rate: ratio(self.type_correct, self.tp),
            occupancy_rate: ratio(self.occupancy_correct, self.tp),
        }
    }
}

/// Single-shot report for one instance.
pub fn compute_report(
    outcome: &MatchOutcome,
    criteria: MatchCriteria,
) -> EvalReport {
    let mut acc = ReportAccumulator::new();
    acc.add(outcome);
    acc.report(criteria)
}

fn fmt_opt(v: Option<f64>, unit: &str) -> String {
    match v {
        Some(v) => format!("{v:.4}{unit}"),
        None => "n/a".to_string(),
    }
}

fn fmt_pct(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{:.2}%", 100.0 * v),
        None => "n/a".to_string(),
    }
}

/// Renders loose/tight reports side by side as an aligned text table.
pub fn format_report_table(loose: &EvalReport, tight: &EvalReport) -> String {
    let rows: Vec<(&str, String, String)> = vec![
        (
            "criteria",
            format!("{} px, {} deg", loose.criteria.m, loose.criteria.n),
            format!("{} px, {} deg", tight.criteria.m, tight.criteria.n),
        ),
        ("ground truth", loose.gt.to_string(), tight.gt.to_string()),
        ("true positives", loose.tp.to_string(), tight.tp.to_string()),
        ("false positives", loose.fp.to_string(), tight.fp.to_string()),
        ("recall", fmt_pct(loose.recall), fmt_pct(tight.recall)),
        ("precision", fmt_pct(loose.precision), fmt_pct(tight.precision)),
        (
            "location error mean",
            fmt_opt(loose.loc_err_mean, " px"),
            fmt_opt(tight.loc_err_mean, " px"),
        ),
        (
            "location error std",
            fmt_opt(loose.loc_err_std, " px"),
            fmt_opt(tight.loc_err_std, " px"),
        ),
        (
            "orientation error mean",
            fmt_opt(loose.ori_err_mean, " deg"),
            fmt_opt(tight.ori_err_mean, " deg"),
        ),
        (
            "orientation error std",
            fmt_opt(loose.ori_err_std, " deg"),
            fmt_opt(tight.ori_err_std, " deg"),
        ),
        ("type rate", fmt_pct(loose.type_rate), fmt_pct(tight.type_rate)),
        (
            "occupancy rate",
            fmt_pct(loose.occupancy_rate),
            fmt_pct(tight.occupancy_rate),
        ),
    ];
    let w0 = rows.iter().map(|r| r.0.len()).max().unwrap().max(6);
    let w1 = rows.iter().map(|r| r.1.len()).max().unwrap().max(5);
    let w2 = rows.iter().map(|r| r.2.len()).max().unwrap().max(5);
    let mut out = String::new();
    out.push_str(&format!(
        "{:w0$}  {:>w1$}  {:>w2$}\n",
        "metric", "loose", "tight"
    ));
    out.push_str(&format!("{}\n", "-".repeat(w0 + w1 + w2 + 4)));
    for (name, l, t) in rows {
        out.push_str(&format!("{name:w0$}  {l:>w1$}  {t:>w2$}\n"));
    }
    out
}

/// Exhaustive maximum-cardinality matching over the same eligibility test.
/// Exponential in the number of detections; intended for small oracle
/// instances in tests and the acceptance suite.
pub fn brute_force_max_matching(
    dets: &[(ParkingSlot, f64)],
    gts: &[ParkingSlot],
    c: &MatchCriteria,
) -> usize {
    fn recurse(
        di: usize,
        dets: &[(ParkingSlot, f64)],
        gts: &[ParkingSlot],
        c: &MatchCriteria,
        taken: &mut Vec<bool>,
    ) -> usize {
        if di == dets.len() {
            return 0;
        }
        // Option 1: leave this detection unmatched.
        let mut best = recurse(di + 1, dets, gts, c, taken);
        for gi in 0..gts.len() {
            if taken[gi] || !pair_eligible(&dets[di].0, &gts[gi], c) {
                continue;
            }
            taken[gi] = true;
            best = best.max(1 + recurse(di + 1, dets, gts, c, taken));
            taken[gi] = false;
        }
        best
    }
    let mut taken = vec![false; gts.len()];
    recurse(0, dets, gts, c, &mut taken)
}
