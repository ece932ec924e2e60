//! Reverse-mode differentiation tape.
//!
//! Each differentiable value is a [`VarId`] indexing into the tape. Ops are
//! recorded in creation order; [`Tape::backward`] replays them in reverse,
//! accumulating exact analytic gradients. Inputs of an op always precede its
//! output on the tape, which lets backward split the gradient buffer without
//! aliasing.

use super::kernels;
use super::tensor::Tensor;

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(pub(crate) usize);

impl VarId {
    /// Position on the tape; indexes the gradient list from `backward`.
    pub fn index(&self) -> usize {
        self.0
    }
}

/// One recorded operation: knows its output index and how to push gradients
/// back to its inputs (all of which live below the output on the tape).
pub trait TapeOp {
    fn out(&self) -> usize;
    /// `grads_lower` covers tape indices `0..out()`; `grad_out` is the
    /// gradient flowing into this op's output.
    fn backward(&self, vals: &[Tensor], grads_lower: &mut [Tensor], grad_out: &Tensor);
}

/// Gradient tape: forward values plus the reverse pass program.
#[derive(Default)]
pub struct Tape {
    vals: Vec<Tensor>,
    ops: Vec<Box<dyn TapeOp>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records an input value (parameter or constant).
    pub fn leaf(&mut self, t: Tensor) -> VarId {
        self.vals.push(t);
        VarId(self.vals.len() - 1)
    }

    pub fn value(&self, id: VarId) -> &Tensor {
        &self.vals[id.0]
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    /// Records a custom op with its already-computed output value.
    /// The closure receives the output's tape index and builds the op.
    pub fn push_custom<F>(&mut self, out: Tensor, make_op: F) -> VarId
    where
        F: FnOnce(usize) -> Box<dyn TapeOp>,
    {
        self.vals.push(out);
        let out_idx = self.vals.len() - 1;
        self.ops.push(make_op(out_idx));
        VarId(out_idx)
    }

    /// Runs the reverse pass from a scalar root; returns one gradient tensor
    /// per tape variable (zeros where the root does not depend on it).
    pub fn backward(&self, root: VarId) -> Vec<Tensor> {
        let mut grads: Vec<Tensor> = self
            .vals
            .iter()
            .map(|v| Tensor::zeros(v.shape()))
            .collect();
        assert_eq!(self.vals[root.0].len(), 1, "backward root must be scalar");
        grads[root.0].data_mut()[0] = 1.0;
        for op in self.ops.iter().rev() {
            let out = op.out();
            let (lower, rest) = grads.split_at_mut(out);
            op.backward(&self.vals, lower, &rest[0]);
        }
        grads
    }

    // ---- primitive differentiable ops ----

    /// 2-D cross-correlation of x [cin,h,w] with weight [cout,cin,k,k] and bias [cout].
    pub fn conv2d(&mut self, x: VarId, w: VarId, b: VarId, stride: usize, pad: usize) -> VarId {
        let (xs, ws) = (self.vals[x.0].shape(), self.vals[w.0].shape());
        assert_eq!(xs.len(), 3, "conv2d input must be [c,h,w]");
        assert_eq!(ws.len(), 4, "conv2d weight must be [cout,cin,k,k]");
        assert_eq!(xs[0], ws[1], "conv2d channel mismatch");
        assert_eq!(ws[2], ws[3], "conv2d kernels are square");
        let (cin, h, win) = (xs[0], xs[1], xs[2]);
        let (cout, k) = (ws[0], ws[2]);
        let oh = kernels::conv_out_dim(h, k, stride, pad);
        let ow = kernels::conv_out_dim(win, k, stride, pad);
        let mut out = Tensor::zeros(&[cout, oh, ow]);
        kernels::conv2d_forward(
            self.vals[x.0].data(),
            (cin, h, win),
            self.vals[w.0].data(),
            self.vals[b.0].data(),
            cout,
            k,
            stride,
            pad,
            out.data_mut(),
        );
        self.push_custom(out, |out_idx| {
            Box::new(Conv2dOp {
                x: x.0,
                w: w.0,
                b: b.0,
                out: out_idx,
                dims: (cin, h, win),
                cout,
                k,
                stride,
                pad,
            })
        })
    }

    /// Fully connected layer: x [rows,nin] (or [nin]), weight [nout,nin], bias [nout].
    pub fn linear(&mut self, x: VarId, w: VarId, b: VarId) -> VarId {
        let xs = self.vals[x.0].shape().to_vec();
        let ws = self.vals[w.0].shape();
        let (rows, nin) = match xs.len() {
            1 => (1, xs[0]),
            2 => (xs[0], xs[1]),
            _ => panic!("linear input must be 1-D or 2-D"),
        };
        assert_eq!(ws[1], nin, "linear weight/input mismatch");
        let nout = ws[0];
        let out_shape = if xs.len() == 1 {
            vec![nout]
        } else {
            vec![rows, nout]
        };
        let mut out = Tensor::zeros(&out_shape);
        kernels::linear_forward(
            self.vals[x.0].data(),
            (rows, nin),
            self.vals[w.0].data(),
            self.vals[b.0].data(),
            nout,
            out.data_mut(),
        );
        self.push_custom(out, |out_idx| {
            Box::new(LinearOp {
                x: x.0,
                w: w.0,
                b: b.0,
                out: out_idx,
                rows,
                nin,
                nout,
            })
        })
    }

    pub fn relu(&mut self, x: VarId) -> VarId {
        let mut out = Tensor::zeros(self.vals[x.0].shape());
        kernels::relu_slice(self.vals[x.0].data(), out.data_mut());
        self.push_custom(out, |out_idx| Box::new(ReluOp { x: x.0, out: out_idx }))
    }

    pub fn sigmoid(&mut self, x: VarId) -> VarId {
        let mut out = Tensor::zeros(self.vals[x.0].shape());
        kernels::sigmoid_slice(self.vals[x.0].data(), out.data_mut());
        self.push_custom(out, |out_idx| Box::new(SigmoidOp { x: x.0, out: out_idx }))
    }

    pub fn tanh(&mut self, x: VarId) -> VarId {
        let mut out = Tensor::zeros(self.vals[x.0].shape());
        kernels::tanh_slice(self.vals[x.0].data(), out.data_mut());
        self.push_custom(out, |out_idx| Box::new(TanhOp { x: x.0, out: out_idx }))
    }

    /// Row-wise softmax over the last axis of an [rows, k] (or [k]) tensor.
    pub fn softmax_rows(&mut self, x: VarId) -> VarId {
        let xs = self.vals[x.0].shape().to_vec();
        let (rows, k) = match xs.len() {
            1 => (1, xs[0]),
            2 => (xs[0], xs[1]),
            _ => panic!("softmax_rows input must be 1-D or 2-D"),
        };
        let mut out = Tensor::zeros(&xs);
        kernels::softmax_rows(self.vals[x.0].data(), rows, k, out.data_mut());
        self.push_custom(out, |out_idx| {
            Box::new(SoftmaxOp {
                x: x.0,
                out: out_idx,
                rows,
                k,
            })
        })
    }

    /// 2x2 stride-2 max pooling of [c,h,w] (h and w even).
    pub fn maxpool2(&mut self, x: VarId) -> VarId {
        let xs = self.vals[x.0].shape();
        assert_eq!(xs.len(), 3, "maxpool2 input must be [c,h,w]");
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        assert!(h % 2 == 0 && w % 2 == 0, "maxpool2 needs even spatial dims");
        let mut out = Tensor::zeros(&[c, h / 2, w / 2]);
        let mut argmax = vec![0usize; out.len()];
        kernels::maxpool2_forward(self.vals[x.0].data(), (c, h, w), out.data_mut(), &mut argmax);
        self.push_custom(out, |out_idx| {
            Box::new(MaxPoolOp {
                x: x.0,
                out: out_idx,
                argmax,
            })
        })
    }

    /// Channel slice [lo, hi) of a [c,h,w] tensor.
    pub fn slice_channels(&mut self, x: VarId, lo: usize, hi: usize) -> VarId {
        let xs = self.vals[x.0].shape();
        assert_eq!(xs.len(), 3);
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        assert!(lo < hi && hi <= c);
        let plane = h * w;
        let data = self.vals[x.0].data()[lo * plane..hi * plane].to_vec();
        let out = Tensor::from_vec(&[hi - lo, h, w], data);
        self.push_custom(out, |out_idx| {
            Box::new(SliceChannelsOp {
                x: x.0,
                out: out_idx,
                offset: lo * plane,
            })
        })
    }

    /// View under a new shape with the same element count.
    pub fn reshape(&mut self, x: VarId, shape: &[usize]) -> VarId {
        let out = self.vals[x.0].reshaped(shape);
        self.push_custom(out, |out_idx| Box::new(ReshapeOp { x: x.0, out: out_idx }))
    }

    /// Gathers a (2*half+1)^2 cell neighborhood around each center cell of a
    /// [c,h,w] map, zero-padded outside the map. Output is [n, c*k*k] with
    /// row layout [c][py][px]; gradients route back only to in-bounds cells.
    pub fn gather_patches(&mut self, map: VarId, cells: &[(isize, isize)], half: usize) -> VarId {
        let xs = self.vals[map.0].shape();
        assert_eq!(xs.len(), 3);
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let k = 2 * half + 1;
        let mut out = Tensor::zeros(&[cells.len(), c * k * k]);
        gather_forward(self.vals[map.0].data(), (c, h, w), cells, half, out.data_mut());
        let cells = cells.to_vec();
        self.push_custom(out, |out_idx| {
            Box::new(GatherPatchesOp {
                map: map.0,
                out: out_idx,
                cells,
                half,
                dims: (c, h, w),
            })
        })
    }

    /// Elementwise sum of two same-shaped tensors.
    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        assert_eq!(self.vals[a.0].shape(), self.vals[b.0].shape());
        let data = self.vals[a.0]
            .data()
            .iter()
            .zip(self.vals[b.0].data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::from_vec(self.vals[a.0].shape(), data);
        self.push_custom(out, |out_idx| {
            Box::new(AddOp {
                a: a.0,
                b: b.0,
                out: out_idx,
            })
        })
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, x: VarId, factor: f64) -> VarId {
        let data = self.vals[x.0].data().iter().map(|v| v * factor).collect();
        let out = Tensor::from_vec(self.vals[x.0].shape(), data);
        self.push_custom(out, |out_idx| {
            Box::new(ScaleOp {
                x: x.0,
                out: out_idx,
                factor,
            })
        })
    }
}

fn gather_forward(
    map: &[f64],
    (c, h, w): (usize, usize, usize),
    cells: &[(isize, isize)],
    half: usize,
    out: &mut [f64],
) {
    let k = 2 * half + 1;
    let row_len = c * k * k;
    for (n, &(cy, cx)) in cells.iter().enumerate() {
        let row = &mut out[n * row_len..(n + 1) * row_len];
        for ci in 0..c {
            for py in 0..k {
                let iy = cy + py as isize - half as isize;
                for px in 0..k {
                    let ix = cx + px as isize - half as isize;
                    let v = if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                        map[(ci * h + iy as usize) * w + ix as usize]
                    } else {
                        0.0
                    };
                    row[(ci * k + py) * k + px] = v;
                }
            }
        }
    }
}

struct Conv2dOp {
    x: usize,
    w: usize,
    b: usize,
    out: usize,
    dims: (usize, usize, usize),
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl TapeOp for Conv2dOp {
    fn out(&self) -> usize {
        self.out
    }
    fn backward(&self, vals: &[Tensor], grads: &mut [Tensor], grad_out: &Tensor) {
        // Split the gradient buffer so x, w, b can be borrowed mutably at once.
        let mut gx = std::mem::replace(&mut grads[self.x], Tensor::zeros(&[]));
        let mut gw = std::mem::replace(&mut grads[self.w], Tensor::zeros(&[]));
        let mut gb = std::mem::replace(&mut grads[self.b], Tensor::zeros(&[]));
        kernels::conv2d_backward(
            vals[self.x].data(),
            self.dims,
            vals[self.w].data(),
            self.cout,
            self.k,
            self.stride,
            self.pad,
            grad_out.data(),
            gx.data_mut(),
            gw.data_mut(),
            gb.data_mut(),
        );
        grads[self.x] = gx;
        grads[self.w] = gw;
        grads[self.b] = gb;
    }
}

struct LinearOp {
    x: usize,
    w: usize,
    b: usize,
    out: usize,
    rows: usize,
    nin: usize,
    nout: usize,
}

impl TapeOp for LinearOp {
    fn out(&self) -> usize {
        self.out
    }
    fn backward(&self, vals: &[Tensor], grads: &mut [Tensor], grad_out: &Tensor) {
        let mut gx = std::mem::replace(&mut grads[self.x], Tensor::zeros(&[]));
        let mut gw = std::mem::replace(&mut grads[self.w], Tensor::zeros(&[]));
        let mut gb = std::mem::replace(&mut grads[self.b], Tensor::zeros(&[]));
        kernels::linear_backward(
            vals[self.x].data(),
            (self.rows, self.nin),
            vals[self.w].data(),
            self.nout,
            grad_out.data(),
            gx.data_mut(),
            gw.data_mut(),
            gb.data_mut(),
        );
        grads[self.x] = gx;
        grads[self.w] = gw;
        grads[self.b] = gb;
    }
}

struct ReluOp {
    x: usize,
    out: usize,
}

impl TapeOp for ReluOp {
    fn out(&self) -> usize {
        self.out
    }
    fn backward(&self, vals: &[Tensor], grads: &mut [Tensor], grad_out: &Tensor) {
        let gx = grads[self.x].data_mut();
        for ((g, &go), &x) in gx.iter_mut().zip(grad_out.data()).zip(vals[self.x].data()) {
            if x > 0.0 {
                *g += go;
            }
        }
    }
}

struct SigmoidOp {
    x: usize,
    out: usize,
}

impl TapeOp for SigmoidOp {
    fn out(&self) -> usize {
        self.out
    }
    fn backward(&self, vals: &[Tensor], grads: &mut [Tensor], grad_out: &Tensor) {
        let y = vals[self.out].data();
        let gx = grads[self.x].data_mut();
        for ((g, &go), &y) in gx.iter_mut().zip(grad_out.data()).zip(y) {
            *g += go * y * (1.0 - y);
        }
    }
}

struct TanhOp {
    x: usize,
    out: usize,
}

impl TapeOp for TanhOp {
    fn out(&self) -> usize {
        self.out
    }
    fn backward(&self, vals: &[Tensor], grads: &mut [Tensor], grad_out: &Tensor) {
        let y = vals[self.out].data();
        let gx = grads[self.x].data_mut();
        for ((g, &go), &y) in gx.iter_mut().zip(grad_out.data()).zip(y) {
            *g += go * (1.0 - y * y);
        }
    }
}

struct SoftmaxOp {
    x: usize,
    out: usize,
    rows: usize,
    k: usize,
}

impl TapeOp for SoftmaxOp {
    fn out(&self) -> usize {
        self.out
    }
    fn backward(&self, vals: &[Tensor], grads: &mut [Tensor], grad_out: &Tensor) {
        let y = vals[self.out].data();
        let gx = grads[self.x].data_mut();
        for r in 0..self.rows {
            let yr = &y[r * self.k..(r + 1) * self.k];
            let gor = &grad_out.data()[r * self.k..(r + 1) * self.k];
            let dot: f64 = yr.iter().zip(gor).map(|(a, b)| a * b).sum();
            for i in 0..self.k {
                gx[r * self.k + i] += yr[i] * (gor[i] - dot);
            }
        }
    }
}

struct MaxPoolOp {
    x: usize,
    out: usize,
    argmax: Vec<usize>,
}

impl TapeOp for MaxPoolOp {
    fn out(&self) -> usize {
        self.out
    }
    fn backward(&self, _vals: &[Tensor], grads: &mut [Tensor], grad_out: &Tensor) {
        let gx = grads[self.x].data_mut();
        for (&src, &go) in self.argmax.iter().zip(grad_out.data()) {
            gx[src] += go;
        }
    }
}

struct SliceChannelsOp {
    x: usize,
    out: usize,
    offset: usize,
}

impl TapeOp for SliceChannelsOp {
    fn out(&self) -> usize {
        self.out
    }
    fn backward(&self, _vals: &[Tensor], grads: &mut [Tensor], grad_out: &Tensor) {
        let gx = grads[self.x].data_mut();
        for (g, &go) in gx[self.offset..self.offset + grad_out.len()]
            .iter_mut()
            .zip(grad_out.data())
        {
            *g += go;
        }
    }
}

struct ReshapeOp {
    x: usize,
    out: usize,
}

impl TapeOp for ReshapeOp {
    fn out(&self) -> usize {
        self.out
    }
    fn backward(&self, _vals: &[Tensor], grads: &mut [Tensor], grad_out: &Tensor) {
        for (g, &go) in grads[self.x].data_mut().iter_mut().zip(grad_out.data()) {
            *g += go;
        }
    }
}

struct GatherPatchesOp {
    map: usize,
    out: usize,
    cells: Vec<(isize, isize)>,
    half: usize,
    dims: (usize, usize, usize),
}

impl TapeOp for GatherPatchesOp {
    fn out(&self) -> usize {
        self.out
    }
    fn backward(&self, _vals: &[Tensor], grads: &mut [Tensor], grad_out: &Tensor) {
        let (c, h, w) = self.dims;
        let k = 2 * self.half + 1;
        let row_len = c * k * k;
        let gmap = grads[self.map].data_mut();
        for (n, &(cy, cx)) in self.cells.iter().enumerate() {
            let row = &grad_out.data()[n * row_len..(n + 1) * row_len];
            for ci in 0..c {
                for py in 0..k {
                    let iy = cy + py as isize - self.half as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for px in 0..k {
                        let ix = cx + px as isize - self.half as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        gmap[(ci * h + iy as usize) * w + ix as usize] +=
                            row[(ci * k + py) * k + px];
                    }
                }
            }
        }
    }
}

struct AddOp {
    a: usize,
    b: usize,
    out: usize,
}

impl TapeOp for AddOp {
    fn out(&self) -> usize {
        self.out
    }
    fn backward(&self, _vals: &[Tensor], grads: &mut [Tensor], grad_out: &Tensor) {
        for (g, &go) in grads[self.a].data_mut().iter_mut().zip(grad_out.data()) {
            *g += go;
        }
        for (g, &go) in grads[self.b].data_mut().iter_mut().zip(grad_out.data()) {
            *g += go;
        }
    }
}

struct ScaleOp {
    x: usize,
    out: usize,
    factor: f64,
}

impl TapeOp for ScaleOp {
    fn out(&self) -> usize {
        self.out
    }
    fn backward(&self, _vals: &[Tensor], grads: &mut [Tensor], grad_out: &Tensor) {
        for (g, &go) in grads[self.x].data_mut().iter_mut().zip(grad_out.data()) {
            *g += go * self.factor;
        }
    }
}

/// Sum of all elements, as a scalar var. Used by tests to reduce outputs.
impl Tape {
    pub fn sum(&mut self, x: VarId) -> VarId {
        let s: f64 = self.vals[x.0].data().iter().sum();
        self.push_custom(Tensor::scalar(s), |out_idx| {
            Box::new(SumOp { x: x.0, out: out_idx })
        })
    }
}

struct SumOp {
    x: usize,
    out: usize,
}

impl TapeOp for SumOp {
    fn out(&self) -> usize {
        self.out
    }
    fn backward(&self, _vals: &[Tensor], grads: &mut [Tensor], grad_out: &Tensor) {
        let go = grad_out.data()[0];
        for g in grads[self.x].data_mut() {
            *g += go;
        }
    }
}
