//! Raw forward/backward compute kernels shared by the tape ops and the
//! no-grad inference path. Layout is channel-major: [C][H][W] contiguous.

/// Output spatial size of a convolution.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// Cross-correlation forward: out[co][y][x] = b[co] + sum w[co][ci][ky][kx] * in[ci][..].
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward(
    input: &[f64],
    (cin, h, w): (usize, usize, usize),
    weight: &[f64],
    bias: &[f64],
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    out: &mut [f64],
) {
    let oh = conv_out_dim(h, k, stride, pad);
    let ow = conv_out_dim(w, k, stride, pad);
    debug_assert_eq!(out.len(), cout * oh * ow);
    for co in 0..cout {
        let out_c = &mut out[co * oh * ow..(co + 1) * oh * ow];
        out_c.fill(bias[co]);
        for ci in 0..cin {
            let in_c = &input[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = weight[((co * cin + ci) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let in_row = &in_c[iy as usize * w..(iy as usize + 1) * w];
                        let out_row = &mut out_c[oy * ow..(oy + 1) * ow];
                        if stride == 1 {
                            // x range where ix = ox + kx - pad stays in bounds
                            let x0 = pad.saturating_sub(kx);
                            let x1 = ow.min(w + pad - kx);
                            let shift = kx as isize - pad as isize;
                            for ox in x0..x1 {
                                out_row[ox] += wv * in_row[(ox as isize + shift) as usize];
                            }
                        } else {
                            for (ox, o) in out_row.iter_mut().enumerate() {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix >= 0 && ix < w as isize {
                                    *o += wv * in_row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of the convolution w.r.t. input, weight and bias.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    input: &[f64],
    (cin, h, w): (usize, usize, usize),
    weight: &[f64],
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    grad_out: &[f64],
    grad_in: &mut [f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) {
    let oh = conv_out_dim(h, k, stride, pad);
    let ow = conv_out_dim(w, k, stride, pad);
    for co in 0..cout {
        let go_c = &grad_out[co * oh * ow..(co + 1) * oh * ow];
        let gb: f64 = go_c.iter().sum();
        grad_b[co] += gb;
        for ci in 0..cin {
            let in_c = &input[ci * h * w..(ci + 1) * h * w];
            let gi_c = &mut grad_in[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let widx = ((co * cin + ci) * k + ky) * k + kx;
                    let wv = weight[widx];
                    let mut gw = 0.0;
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let in_row = &in_c[iy as usize * w..(iy as usize + 1) * w];
                        let gi_row = &mut gi_c[iy as usize * w..(iy as usize + 1) * w];
                        let go_row = &go_c[oy * ow..(oy + 1) * ow];
                        if stride == 1 {
                            let x0 = pad.saturating_sub(kx);
                            let x1 = ow.min(w + pad - kx);
                            let shift = kx as isize - pad as isize;
                            for ox in x0..x1 {
                                let ix = (ox as isize + shift) as usize;
                                let g = go_row[ox];
                                gw += g * in_row[ix];
                                gi_row[ix] += wv * g;
                            }
                        } else {
                            for (ox, &g) in go_row.iter().enumerate() {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix >= 0 && ix < w as isize {
                                    gw += g * in_row[ix as usize];
                                    gi_row[ix as usize] += wv * g;
                                }
                            }
                        }
                    }
                    grad_w[widx] += gw;
                }
            }
        }
    }
}

/// Linear layer forward: out[r][o] = b[o] + sum_i w[o][i] * x[r][i].
pub fn linear_forward(
    x: &[f64],
    (rows, nin): (usize, usize),
    weight: &[f64],
    bias: &[f64],
    nout: usize,
    out: &mut [f64],
) {
    for r in 0..rows {
        let xr = &x[r * nin..(r + 1) * nin];
        let or = &mut out[r * nout..(r + 1) * nout];
        for o in 0..nout {
            let wr = &weight[o * nin..(o + 1) * nin];
            let mut acc = bias[o];
            for i in 0..nin {
                acc += wr[i] * xr[i];
            }
            or[o] = acc;
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn linear_backward(
    x: &[f64],
    (rows, nin): (usize, usize),
    weight: &[f64],
    nout: usize,
    grad_out: &[f64],
    grad_x: &mut [f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) {
    for r in 0..rows {
        let xr = &x[r * nin..(r + 1) * nin];
        let gxr = &mut grad_x[r * nin..(r + 1) * nin];
        let gor = &grad_out[r * nout..(r + 1) * nout];
        for o in 0..nout {
            let g = gor[o];
            if g == 0.0 {
                continue;
            }
            grad_b[o] += g;
            let wr = &weight[o * nin..(o + 1) * nin];
            let gwr = &mut grad_w[o * nin..(o + 1) * nin];
            for i in 0..nin {
                gwr[i] += g * xr[i];
                gxr[i] += g * wr[i];
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn sigmoid_slice(x: &[f64], out: &mut [f64]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o = sigmoid(v);
    }
}

pub fn tanh_slice(x: &[f64], out: &mut [f64]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v.tanh();
    }
}

pub fn relu_slice(x: &[f64], out: &mut [f64]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v.max(0.0);
    }
}

/// Row-wise softmax over the last axis of an [rows, k] array.
pub fn softmax_rows(x: &[f64], rows: usize, k: usize, out: &mut [f64]) {
    for r in 0..rows {
        let xr = &x[r * k..(r + 1) * k];
        let or = &mut out[r * k..(r + 1) * k];
        let m = xr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, &v) in or.iter_mut().zip(xr) {
            *o = (v - m).exp();
            sum += *o;
        }
        for o in or.iter_mut() {
            *o /= sum;
        }
    }
}

/// 2x2 stride-2 max pooling; records the flat input index of each maximum.
pub fn maxpool2_forward(
    input: &[f64],
    (c, h, w): (usize, usize, usize),
    out: &mut [f64],
    argmax: &mut [usize],
) {
    let oh = h / 2;
    let ow = w / 2;
    for ci in 0..c {
        let in_c = &input[ci * h * w..(ci + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let base = (2 * oy) * w + 2 * ox;
                let candidates = [base, base + 1, base + w, base + w + 1];
                let mut best = candidates[0];
                for &idx in &candidates[1..] {
                    if in_c[idx] > in_c[best] {
                        best = idx;
                    }
                }
                let o = (ci * oh + oy) * ow + ox;
                out[o] = in_c[best];
                argmax[o] = ci * h * w + best;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_kernel() {
        // 1x1 kernel with weight 1 reproduces the input.
        let input = [1.0, -2.0, 3.0, 0.5];
        let mut out = [0.0; 4];
        conv2d_forward(&input, (1, 2, 2), &[1.0], &[0.0], 1, 1, 1, 0, &mut out);
        assert_eq!(out, input);
    }

    #[test]
    fn conv_zero_kernel_annihilates() {
        let input = [1.0, -2.0, 3.0, 0.5];
        let mut out = [9.0; 4];
        conv2d_forward(&input, (1, 2, 2), &[0.0; 9], &[0.0], 1, 3, 1, 1, &mut out);
        assert!(out.iter().all(|&v| v == 0.0));
        let mut gi = [0.0; 4];
        let mut gw = [0.0; 9];
        let mut gb = [0.0; 1];
        conv2d_backward(
            &input,
            (1, 2, 2),
            &[0.0; 9],
            1,
            3,
            1,
            1,
            &[1.0; 4],
            &mut gi,
            &mut gw,
            &mut gb,
        );
        assert!(gi.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn maxpool_picks_maximum() {
        let input = [1.0, 5.0, 2.0, 3.0];
        let mut out = [0.0; 1];
        let mut arg = [0usize; 1];
        maxpool2_forward(&input, (1, 2, 2), &mut out, &mut arg);
        assert_eq!(out[0], 5.0);
        assert_eq!(arg[0], 1);
    }

    #[test]
    fn softmax_rows_normalize() {
        let x = [0.3, -1.0, 2.0, 0.0, 0.0, 0.0];
        let mut out = [0.0; 6];
        softmax_rows(&x, 2, 3, &mut out);
        for r in 0..2 {
            let s: f64 = out[r * 3..(r + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }
}
