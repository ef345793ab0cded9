//! Raw array kernels for the structured ops (convolutions, linear, softmax).
//!
//! Direct implementations over row-major slices. The inner loops run along
//! the contiguous width axis; correctness is pinned by the finite-difference
//! suite rather than by cleverness here.

/// Output spatial size of a convolution along one axis.
pub fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output spatial size of a transposed convolution along one axis.
pub fn conv_transpose_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let grown = (input - 1) * stride + kernel;
    if grown < 2 * pad {
        return None;
    }
    Some(grown - 2 * pad)
}

/// Valid output-index range `[o0, o1)` such that `0 <= o*stride + k - pad < limit`.
#[inline]
fn valid_range(limit: usize, out_len: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let o0 = if pad > k { (pad - k + stride - 1) / stride } else { 0 };
    let o1 = if limit + pad > k {
        ((limit + pad - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (o0, o1.max(o0))
}

/// out[co,oy,ox] = b[co] + sum_{ci,ky,kx} w[co,ci,ky,kx] * x[ci, oy*s+ky-p, ox*s+kx-p]
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    wgt: &[f64],
    cout: usize,
    kh: usize,
    kw: usize,
    bias: &[f64],
    stride: usize,
    pad: usize,
    out: &mut [f64],
    oh: usize,
    ow: usize,
) {
    for co in 0..cout {
        let out_c = &mut out[co * oh * ow..(co + 1) * oh * ow];
        out_c.fill(bias[co]);
        for ci in 0..cin {
            let x_c = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = wgt[((co * cin + ci) * kh + ky) * kw + kx];
                    let (ox0, ox1) = valid_range(w, ow, kx, stride, pad);
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let xrow = &x_c[iy as usize * w..iy as usize * w + w];
                        let orow = &mut out_c[oy * ow..oy * ow + ow];
                        let mut ix = ox0 * stride + kx - pad;
                        for o in orow[ox0..ox1].iter_mut() {
                            *o += wv * xrow[ix];
                            ix += stride;
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates conv2d input/weight/bias gradients from `dy`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    wgt: &[f64],
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    dy: &[f64],
    oh: usize,
    ow: usize,
    dx: &mut [f64],
    dw: &mut [f64],
    db: &mut [f64],
) {
    for co in 0..cout {
        let dy_c = &dy[co * oh * ow..(co + 1) * oh * ow];
        db[co] += dy_c.iter().sum::<f64>();
        for ci in 0..cin {
            let x_c = &x[ci * h * w..(ci + 1) * h * w];
            let dx_c = &mut dx[ci * h * w..(ci + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let widx = ((co * cin + ci) * kh + ky) * kw + kx;
                    let wv = wgt[widx];
                    let mut wg = 0.0;
                    let (ox0, ox1) = valid_range(w, ow, kx, stride, pad);
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = iy as usize * w;
                        let dyrow = &dy_c[oy * ow..oy * ow + ow];
                        let mut ix = ox0 * stride + kx - pad;
                        for &g in dyrow[ox0..ox1].iter() {
                            wg += g * x_c[base + ix];
                            dx_c[base + ix] += wv * g;
                            ix += stride;
                        }
                    }
                    dw[widx] += wg;
                }
            }
        }
    }
}

/// out[co, iy*s+ky-p, ix*s+kx-p] += w[ci,co,ky,kx] * x[ci,iy,ix], plus bias.
#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    wgt: &[f64],
    cout: usize,
    kh: usize,
    kw: usize,
    bias: &[f64],
    stride: usize,
    pad: usize,
    out: &mut [f64],
    oh: usize,
    ow: usize,
) {
    for co in 0..cout {
        out[co * oh * ow..(co + 1) * oh * ow].fill(bias[co]);
    }
    for ci in 0..cin {
        let x_c = &x[ci * h * w..(ci + 1) * h * w];
        for co in 0..cout {
            let out_c = &mut out[co * oh * ow..(co + 1) * oh * ow];
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = wgt[((ci * cout + co) * kh + ky) * kw + kx];
                    let (ix0, ix1) = valid_range(ow, w, kx, stride, pad);
                    for iy in 0..h {
                        let oy = (iy * stride + ky) as isize - pad as isize;
                        if oy < 0 || oy >= oh as isize {
                            continue;
                        }
                        let xrow = &x_c[iy * w..iy * w + w];
                        let orow = &mut out_c[oy as usize * ow..oy as usize * ow + ow];
                        let mut ox = ix0 * stride + kx - pad;
                        for &xv in xrow[ix0..ix1].iter() {
                            orow[ox] += wv * xv;
                            ox += stride;
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates transposed-conv input/weight/bias gradients from `dy`.
#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d_backward(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    wgt: &[f64],
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    dy: &[f64],
    oh: usize,
    ow: usize,
    dx: &mut [f64],
    dw: &mut [f64],
    db: &mut [f64],
) {
    for co in 0..cout {
        db[co] += dy[co * oh * ow..(co + 1) * oh * ow].iter().sum::<f64>();
    }
    for ci in 0..cin {
        let x_c = &x[ci * h * w..(ci + 1) * h * w];
        let dx_c = &mut dx[ci * h * w..(ci + 1) * h * w];
        for co in 0..cout {
            let dy_c = &dy[co * oh * ow..(co + 1) * oh * ow];
            for ky in 0..kh {
                for kx in 0..kw {
                    let widx = ((ci * cout + co) * kh + ky) * kw + kx;
                    let wv = wgt[widx];
                    let mut wg = 0.0;
                    let (ix0, ix1) = valid_range(ow, w, kx, stride, pad);
                    for iy in 0..h {
                        let oy = (iy * stride + ky) as isize - pad as isize;
                        if oy < 0 || oy >= oh as isize {
                            continue;
                        }
                        let obase = oy as usize * ow;
                        let mut ox = ix0 * stride + kx - pad;
                        for ix in ix0..ix1 {
                            let g = dy_c[obase + ox];
                            wg += g * x_c[iy * w + ix];
                            dx_c[iy * w + ix] += wv * g;
                            ox += stride;
                        }
                    }
                    dw[widx] += wg;
                }
            }
        }
    }
}

/// y[o] = b[o] + sum_i w[o,i] * x[i]
pub fn linear(x: &[f64], wgt: &[f64], bias: &[f64], out_dim: usize, in_dim: usize, out: &mut [f64]) {
    for o in 0..out_dim {
        let row = &wgt[o * in_dim..(o + 1) * in_dim];
        let mut acc = bias[o];
        for (wv, xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        out[o] = acc;
    }
}

#[allow(clippy::too_many_arguments)]
pub fn linear_backward(
    x: &[f64],
    wgt: &[f64],
    out_dim: usize,
    in_dim: usize,
    dy: &[f64],
    dx: &mut [f64],
    dw: &mut [f64],
    db: &mut [f64],
) {
    for o in 0..out_dim {
        let g = dy[o];
        db[o] += g;
        let row = &wgt[o * in_dim..(o + 1) * in_dim];
        let drow = &mut dw[o * in_dim..(o + 1) * in_dim];
        for i in 0..in_dim {
            drow[i] += g * x[i];
            dx[i] += g * row[i];
        }
    }
}

/// Per-pixel softmax over the channel axis of a (C,H,W) tensor.
pub fn softmax_channels(x: &[f64], c: usize, hw: usize, out: &mut [f64]) {
    for p in 0..hw {
        let mut maxv = f64::NEG_INFINITY;
        for ch in 0..c {
            maxv = maxv.max(x[ch * hw + p]);
        }
        let mut denom = 0.0;
        for ch in 0..c {
            let e = (x[ch * hw + p] - maxv).exp();
            out[ch * hw + p] = e;
            denom += e;
        }
        for ch in 0..c {
            out[ch * hw + p] /= denom;
        }
    }
}

/// dx[c] += y[c] * (dy[c] - sum_k dy[k] * y[k]), per pixel.
pub fn softmax_channels_backward(y: &[f64], c: usize, hw: usize, dy: &[f64], dx: &mut [f64]) {
    for p in 0..hw {
        let mut dot = 0.0;
        for ch in 0..c {
            dot += dy[ch * hw + p] * y[ch * hw + p];
        }
        for ch in 0..c {
            dx[ch * hw + p] += y[ch * hw + p] * (dy[ch * hw + p] - dot);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_out_sizes() {
        assert_eq!(conv_out_size(32, 3, 2, 1), Some(16));
        assert_eq!(conv_out_size(16, 3, 2, 1), Some(8));
        assert_eq!(conv_out_size(2, 3, 1, 0), None);
        assert_eq!(conv_transpose_out_size(8, 2, 2, 0), Some(16));
    }

    #[test]
    fn identity_1x1_conv_doubles_ones() {
        // 1x1 conv, weight 2, bias 0 on a 2x2 image of ones -> twos.
        let x = vec![1.0; 4];
        let wgt = vec![2.0];
        let mut out = vec![0.0; 4];
        conv2d(&x, 1, 2, 2, &wgt, 1, 1, 1, &[0.0], 1, 0, &mut out, 2, 2);
        assert_eq!(out, vec![2.0; 4]);
    }

    #[test]
    fn conv_transpose_doubles_resolution() {
        let x = vec![1.0, 2.0, 3.0, 4.0]; // (1,2,2)
        let wgt = vec![1.0; 4]; // (1,1,2,2)
        let mut out = vec![0.0; 16];
        conv_transpose2d(&x, 1, 2, 2, &wgt, 1, 2, 2, &[0.0], 2, 0, &mut out, 4, 4);
        // stride 2, kernel 2: each input pixel fills its own 2x2 block
        assert_eq!(out[0], 1.0);
        assert_eq!(out[1], 1.0);
        assert_eq!(out[2], 2.0);
        assert_eq!(out[15], 4.0);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = vec![0.0, 1.0, 2.0, -1.0, 0.5, 0.0]; // (3,1,2)
        let mut y = vec![0.0; 6];
        softmax_channels(&x, 3, 2, &mut y);
        for p in 0..2 {
            let s: f64 = (0..3).map(|c| y[c * 2 + p]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
