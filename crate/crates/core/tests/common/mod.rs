//! Shared test support: central finite-difference gradient checking.

use slotdet::diffnet::{Tape, TapeOp, Tensor, VarId};

/// Finite-difference step (64-bit).
pub const FD_STEP: f64 = 1e-5;
/// Relative-error bound for primitive ops.
pub const PRIMITIVE_TOL: f64 = 1e-6;
/// Relative-error bound for losses and head+loss compositions.
pub const COMPOSITE_TOL: f64 = 1e-4;

/// Reduces a tensor to a scalar with fixed pseudo-random weights, so the
/// check is sensitive to every output coordinate (a plain sum lets sign
/// errors cancel).
pub fn weighted_sum(tape: &mut Tape, x: VarId) -> VarId {
    let n = tape.value(x).len();
    let weights = probe_weights(n);
    let acc: f64 = tape
        .value(x)
        .data()
        .iter()
        .zip(&weights)
        .map(|(a, b)| a * b)
        .sum();
    tape.push_custom(Tensor::scalar(acc), |out| {
        Box::new(WeightedSumOp {
            x: x.index(),
            out,
            weights,
        })
    })
}

fn probe_weights(n: usize) -> Vec<f64> {
    // Deterministic, irrational-looking, bounded away from zero.
    (0..n)
        .map(|i| 0.5 + ((i as f64 * 0.7390851332151607).sin() * 0.45))
        .collect()
}

struct WeightedSumOp {
    x: usize,
    out: usize,
    weights: Vec<f64>,
}

impl TapeOp for WeightedSumOp {
    fn out(&self) -> usize {
        self.out
    }
    fn backward(&self, _vals: &[Tensor], grads: &mut [Tensor], grad_out: &Tensor) {
        let go = grad_out.data()[0];
        for (g, w) in grads[self.x].data_mut().iter_mut().zip(&self.weights) {
            *g += go * w;
        }
    }
}

/// Checks analytic gradients of a scalar-valued graph against central finite
/// differences over every input tensor. At most `max_coords` coordinates per
/// tensor are probed (evenly strided, deterministic). Returns the largest
/// relative error observed.
pub fn check_gradients<F>(inputs: &[Tensor], build: F, max_coords: usize) -> f64
where
    F: Fn(&mut Tape, &[VarId]) -> VarId,
{
    let mut tape = Tape::new();
    let ids: Vec<VarId> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = build(&mut tape, &ids);
    assert_eq!(tape.value(root).len(), 1, "gradient check root must be scalar");
    let grads = tape.backward(root);

    let eval = |perturbed: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<VarId> = perturbed.iter().map(|t| tape.leaf(t.clone())).collect();
        let root = build(&mut tape, &ids);
        tape.value(root).item()
    };

    let mut max_rel: f64 = 0.0;
    let mut scratch: Vec<Tensor> = inputs.to_vec();
    for (i, t) in inputs.iter().enumerate() {
        let n = t.len();
        if n == 0 {
            continue;
        }
        let stride = (n + max_coords - 1) / max_coords;
        let mut k = 0;
        while k < n {
            let orig = t.data()[k];
            scratch[i].data_mut()[k] = orig + FD_STEP;
            let plus = eval(&scratch);
            scratch[i].data_mut()[k] = orig - FD_STEP;
            let minus = eval(&scratch);
            scratch[i].data_mut()[k] = orig;
            let fd = (plus - minus) / (2.0 * FD_STEP);
            let analytic = grads[ids[i].index()].data()[k];
            let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-3);
            if rel > max_rel {
                max_rel = rel;
            }
            k += stride.max(1);
        }
    }
    max_rel
}

/// Uniform random tensor in [lo, hi).
pub fn rand_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut impl rand::Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect())
}
