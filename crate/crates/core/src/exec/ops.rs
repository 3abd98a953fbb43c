//! Naive reference kernels. Convolutions use zero padding `kernel / 2`.

use super::tensor::TensorValue;

pub const BN_EPS: f64 = 1e-5;

pub fn out_size(size: usize, kernel: usize, stride: usize) -> usize {
    let pad = kernel / 2;
    (size + 2 * pad - kernel) / stride + 1
}

pub struct ConvGeom {
    pub kernel: usize,
    pub groups: usize,
    pub out_ch: usize,
    pub stride: usize,
}

/// Visits every (weight index, input index, output index) triple of a
/// grouped convolution.
fn conv_for_each(
    x_shape: (usize, usize, usize),
    g: &ConvGeom,
    mut f: impl FnMut(usize, usize, usize),
) -> (usize, usize, usize) {
    let (c_in, h, w) = x_shape;
    let k = g.kernel;
    let pad = k / 2;
    let (oh, ow) = (out_size(h, k, g.stride), out_size(w, k, g.stride));
    let cin_g = c_in / g.groups;
    let cout_g = g.out_ch / g.groups;
    for oc in 0..g.out_ch {
        let grp = oc / cout_g;
        for icg in 0..cin_g {
            let ic = grp * cin_g + icg;
            for ky in 0..k {
                for kx in 0..k {
                    let wi = ((oc * cin_g + icg) * k + ky) * k + kx;
                    for oy in 0..oh {
                        let iy = (oy * g.stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * g.stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let xi = (ic * h + iy as usize) * w + ix as usize;
                            let yi = (oc * oh + oy) * ow + ox;
                            f(wi, xi, yi);
                        }
                    }
                }
            }
        }
    }
    (g.out_ch, oh, ow)
}

pub fn conv2d(x: &TensorValue, weight: &[f64], g: &ConvGeom) -> TensorValue {
    let (oh, ow) = (
        out_size(x.height(), g.kernel, g.stride),
        out_size(x.width(), g.kernel, g.stride),
    );
    let mut y = TensorValue::zeros(g.out_ch, oh, ow);
    conv_for_each(x.shape, g, |wi, xi, yi| {
        y.data[yi] += weight[wi] * x.data[xi];
    });
    y
}

/// Returns `(grad_input, grad_weight)`.
pub fn conv2d_backward(
    x: &TensorValue,
    weight: &[f64],
    g: &ConvGeom,
    gy: &TensorValue,
) -> (TensorValue, Vec<f64>) {
    let mut gx = TensorValue::zeros(x.channels(), x.height(), x.width());
    let mut gw = vec![0.0; weight.len()];
    conv_for_each(x.shape, g, |wi, xi, yi| {
        gw[wi] += gy.data[yi] * x.data[xi];
        gx.data[xi] += gy.data[yi] * weight[wi];
    });
    (gx, gw)
}

pub fn relu(x: &TensorValue) -> TensorValue {
    TensorValue {
        shape: x.shape,
        data: x.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

pub fn relu_backward(x: &TensorValue, gy: &TensorValue) -> TensorValue {
    TensorValue {
        shape: x.shape,
        data: x
            .data
            .iter()
            .zip(&gy.data)
            .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
            .collect(),
    }
}

/// Per-channel affine normalization with the given statistics.
pub fn batch_norm(
    x: &TensorValue,
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    var: &[f64],
) -> TensorValue {
    let plane = x.plane();
    let mut y = x.clone();
    for c in 0..x.channels() {
        let scale = gamma[c] / (var[c] + BN_EPS).sqrt();
        for v in &mut y.data[c * plane..(c + 1) * plane] {
            *v = scale * (*v - mean[c]) + beta[c];
        }
    }
    y
}

/// Backward through [`batch_norm`] with fixed statistics. Returns
/// `(grad_input, grad_gamma, grad_beta)`.
pub fn batch_norm_backward(
    x: &TensorValue,
    gamma: &[f64],
    mean: &[f64],
    var: &[f64],
    gy: &TensorValue,
) -> (TensorValue, Vec<f64>, Vec<f64>) {
    let plane = x.plane();
    let ch = x.channels();
    let mut gx = gy.clone();
    let mut gg = vec![0.0; ch];
    let mut gb = vec![0.0; ch];
    for c in 0..ch {
        let inv = 1.0 / (var[c] + BN_EPS).sqrt();
        for i in c * plane..(c + 1) * plane {
            gg[c] += gy.data[i] * (x.data[i] - mean[c]) * inv;
            gb[c] += gy.data[i];
            gx.data[i] = gy.data[i] * gamma[c] * inv;
        }
    }
    (gx, gg, gb)
}

/// Per-channel mean and biased variance over every sample and position.
pub fn batch_statistics(xs: &[TensorValue]) -> (Vec<f64>, Vec<f64>) {
    let ch = xs[0].channels();
    let plane = xs[0].plane();
    let count = (xs.len() * plane) as f64;
    let mut mean = vec![0.0; ch];
    let mut var = vec![0.0; ch];
    for c in 0..ch {
        let s: f64 = xs
            .iter()
            .flat_map(|x| &x.data[c * plane..(c + 1) * plane])
            .sum();
        mean[c] = s / count;
        let sq: f64 = xs
            .iter()
            .flat_map(|x| &x.data[c * plane..(c + 1) * plane])
            .map(|v| (v - mean[c]).powi(2))
            .sum();
        var[c] = sq / count;
    }
    (mean, var)
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    /// Divides by 9 regardless of padding.
    Avg,
}

fn pool_window(
    x: &TensorValue,
    stride: usize,
    mut f: impl FnMut(usize, &mut dyn Iterator<Item = usize>),
) -> (usize, usize) {
    let (ch, h, w) = x.shape;
    let (oh, ow) = (out_size(h, 3, stride), out_size(w, 3, stride));
    for c in 0..ch {
        for oy in 0..oh {
            for ox in 0..ow {
                let y0 = (oy * stride) as isize - 1;
                let x0 = (ox * stride) as isize - 1;
                let mut it = (0..3)
                    .flat_map(move |dy| (0..3).map(move |dx| (y0 + dy, x0 + dx)))
                    .filter(|&(yy, xx)| yy >= 0 && xx >= 0 && yy < h as isize && xx < w as isize)
                    .map(|(yy, xx)| (c * h + yy as usize) * w + xx as usize);
                f((c * oh + oy) * ow + ox, &mut it);
            }
        }
    }
    (oh, ow)
}

pub fn pool3x3(x: &TensorValue, stride: usize, kind: PoolKind) -> TensorValue {
    let (oh, ow) = (
        out_size(x.height(), 3, stride),
        out_size(x.width(), 3, stride),
    );
    let mut y = TensorValue::zeros(x.channels(), oh, ow);
    pool_window(x, stride, |yi, window| {
        y.data[yi] = match kind {
            PoolKind::Max => window.map(|i| x.data[i]).fold(f64::NEG_INFINITY, f64::max),
            PoolKind::Avg => window.map(|i| x.data[i]).sum::<f64>() / 9.0,
        };
    });
    y
}

pub fn pool3x3_backward(
    x: &TensorValue,
    stride: usize,
    kind: PoolKind,
    gy: &TensorValue,
) -> TensorValue {
    let mut gx = TensorValue::zeros(x.channels(), x.height(), x.width());
    pool_window(x, stride, |yi, window| match kind {
        PoolKind::Max => {
            // first maximal element in window order receives the gradient
            let mut best: Option<usize> = None;
            for i in window {
                if best.is_none_or(|b| x.data[i] > x.data[b]) {
                    best = Some(i);
                }
            }
            if let Some(b) = best {
                gx.data[b] += gy.data[yi];
            }
        }
        PoolKind::Avg => {
            for i in window {
                gx.data[i] += gy.data[yi] / 9.0;
            }
        }
    });
    gx
}

pub fn global_avg_pool(x: &TensorValue) -> TensorValue {
    let plane = x.plane();
    TensorValue {
        shape: (x.channels(), 1, 1),
        data: x
            .data
            .chunks(plane)
            .map(|c| c.iter().sum::<f64>() / plane as f64)
            .collect(),
    }
}

pub fn global_avg_pool_backward(x: &TensorValue, gy: &TensorValue) -> TensorValue {
    let plane = x.plane();
    TensorValue {
        shape: x.shape,
        data: (0..x.data.len())
            .map(|i| gy.data[i / plane] / plane as f64)
            .collect(),
    }
}

/// `y = W x + b` with `W` laid out `[out][in]`.
pub fn linear(x: &TensorValue, weight: &[f64], bias: &[f64]) -> TensorValue {
    let n_in = x.data.len();
    TensorValue {
        shape: (bias.len(), 1, 1),
        data: bias
            .iter()
            .enumerate()
            .map(|(o, b)| {
                b + weight[o * n_in..(o + 1) * n_in]
                    .iter()
                    .zip(&x.data)
                    .map(|(w, v)| w * v)
                    .sum::<f64>()
            })
            .collect(),
    }
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn linear_backward(
    x: &TensorValue,
    weight: &[f64],
    gy: &TensorValue,
) -> (TensorValue, Vec<f64>, Vec<f64>) {
    let n_in = x.data.len();
    let mut gx = TensorValue::zeros(x.channels(), x.height(), x.width());
    let mut gw = vec![0.0; weight.len()];
    for (o, &g) in gy.data.iter().enumerate() {
        for i in 0..n_in {
            gw[o * n_in + i] = g * x.data[i];
            gx.data[i] += g * weight[o * n_in + i];
        }
    }
    (gx, gw, gy.data.clone())
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: (usize, usize, usize), f: impl Fn(usize) -> f64) -> TensorValue {
        TensorValue::new(shape, (0..shape.0 * shape.1 * shape.2).map(f).collect()).unwrap()
    }

    #[test]
    fn identity_kernel_conv() {
        let x = t((1, 3, 3), |i| i as f64);
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        let g = ConvGeom {
            kernel: 3,
            groups: 1,
            out_ch: 1,
            stride: 1,
        };
        assert_eq!(conv2d(&x, &w, &g), x);
    }

    #[test]
    fn strided_conv_shape() {
        let x = t((2, 7, 7), |i| i as f64 * 0.01);
        let g = ConvGeom {
            kernel: 3,
            groups: 2,
            out_ch: 2,
            stride: 2,
        };
        let y = conv2d(&x, &[0.1; 18], &g);
        assert_eq!(y.shape, (2, 4, 4));
    }

    #[test]
    fn conv_backward_matches_finite_difference() {
        let x = t((2, 4, 4), |i| ((i * 7) % 11) as f64 / 11.0 - 0.4);
        let w: Vec<f64> = (0..36)
            .map(|i| ((i * 5) % 13) as f64 / 13.0 - 0.5)
            .collect();
        let g = ConvGeom {
            kernel: 3,
            groups: 1,
            out_ch: 2,
            stride: 2,
        };
        let gy = t((2, 2, 2), |i| 0.3 + i as f64 * 0.1);
        let loss = |w: &[f64], x: &TensorValue| conv2d(x, w, &g).dot(&gy);
        let (gx, gw) = conv2d_backward(&x, &w, &g, &gy);
        let eps = 1e-6;
        for i in 0..w.len() {
            let mut wp = w.clone();
            wp[i] += eps;
            let mut wm = w.clone();
            wm[i] -= eps;
            let fd = (loss(&wp, &x) - loss(&wm, &x)) / (2.0 * eps);
            assert!((fd - gw[i]).abs() < 1e-8);
        }
        for i in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[i] += eps;
            let mut xm = x.clone();
            xm.data[i] -= eps;
            let fd = (loss(&w, &xp) - loss(&w, &xm)) / (2.0 * eps);
            assert!((fd - gx.data[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn pools() {
        let x = t((1, 2, 2), |i| i as f64);
        let m = pool3x3(&x, 1, PoolKind::Max);
        assert_eq!(m.data, vec![3.0; 4]);
        let a = pool3x3(&x, 2, PoolKind::Avg);
        assert_eq!(a.shape, (1, 1, 1));
        assert!((a.data[0] - 6.0 / 9.0).abs() < 1e-12);
        let gx = pool3x3_backward(&x, 1, PoolKind::Max, &t((1, 2, 2), |_| 1.0));
        assert_eq!(gx.data, vec![0.0, 0.0, 0.0, 4.0]);
    }

    #[test]
    fn batch_norm_with_unit_stats_is_affine() {
        let x = t((2, 1, 2), |i| i as f64);
        let y = batch_norm(
            &x,
            &[2.0, 1.0],
            &[0.5, 0.0],
            &[0.0, 0.0],
            &[1.0 - BN_EPS, 1.0 - BN_EPS],
        );
        assert!((y.data[1] - 2.5).abs() < 1e-12);
        assert!((y.data[3] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn batch_stats() {
        let a = t((1, 1, 2), |i| i as f64);
        let b = t((1, 1, 2), |i| i as f64 + 2.0);
        let (m, v) = batch_statistics(&[a, b]);
        assert_eq!(m, vec![1.5]);
        assert!((v[0] - 1.25).abs() < 1e-12);
    }

    #[test]
    fn linear_layer() {
        let x = t((2, 1, 1), |i| i as f64 + 1.0);
        let y = linear(&x, &[1.0, 2.0, 3.0, 4.0], &[0.5, -0.5]);
        assert_eq!(y.data, vec![5.5, 10.5]);
    }
}
