#![allow(clippy::needless_range_loop)]

//! Plain sequential reference, written without the interpreter's kernels.

use randwire_core::exec::{BatchNormParams, TensorValue, WeightStore};
use randwire_core::NetworkIR;

type Img = Vec<Vec<Vec<f64>>>;

fn to_img(t: &TensorValue) -> Img {
    let (c, h, w) = t.shape;
    (0..c)
        .map(|ci| {
            (0..h)
                .map(|y| (0..w).map(|x| t.data[(ci * h + y) * w + x]).collect())
                .collect()
        })
        .collect()
}

fn conv(x: &Img, k: &[f64], out_ch: usize, ksize: usize, stride: usize, depthwise: bool) -> Img {
    let (c, h, w) = (x.len(), x[0].len(), x[0][0].len());
    let pad = ksize as isize / 2;
    let oh = (h + 2 * pad as usize - ksize) / stride + 1;
    let ow = (w + 2 * pad as usize - ksize) / stride + 1;
    let mut y = vec![vec![vec![0.0; ow]; oh]; out_ch];
    for o in 0..out_ch {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                let ins: Vec<usize> = if depthwise { vec![o] } else { (0..c).collect() };
                for (j, &i) in ins.iter().enumerate() {
                    for ky in 0..ksize {
                        for kx in 0..ksize {
                            let iy = (oy * stride + ky) as isize - pad;
                            let ix = (ox * stride + kx) as isize - pad;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            let per_out = ins.len() * ksize * ksize;
                            let wi = o * per_out + (j * ksize + ky) * ksize + kx;
                            acc += k[wi] * x[i][iy as usize][ix as usize];
                        }
                    }
                }
                y[o][oy][ox] = acc;
            }
        }
    }
    y
}

fn relu(x: &Img) -> Img {
    x.iter()
        .map(|p| {
            p.iter()
                .map(|r| r.iter().map(|v| v.max(0.0)).collect())
                .collect()
        })
        .collect()
}

fn bn(x: &Img, p: &BatchNormParams) -> Img {
    x.iter()
        .enumerate()
        .map(|(c, plane)| {
            let s = p.gamma[c] / (p.running_var[c] + 1e-5).sqrt();
            plane
                .iter()
                .map(|r| {
                    r.iter()
                        .map(|v| s * (v - p.running_mean[c]) + p.beta[c])
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn scale(x: &Img, s: f64) -> Img {
    x.iter()
        .map(|p| {
            p.iter()
                .map(|r| r.iter().map(|v| v * s).collect())
                .collect()
        })
        .collect()
}

pub fn sequential_reference(ir: &NetworkIR, w: &WeightStore, x: &TensorValue) -> Vec<f64> {
    let wt = |id| &w.nodes[&id];
    let s0 = wt(ir.stem[0]);
    let mut h = bn(
        &conv(
            &to_img(x),
            s0.conv.as_ref().unwrap(),
            ir.base_channels.div_ceil(2),
            3,
            2,
            false,
        ),
        s0.bn.as_ref().unwrap(),
    );
    let s1 = wt(ir.stem[1]);
    h = bn(
        &conv(
            &relu(&h),
            s1.conv.as_ref().unwrap(),
            ir.base_channels,
            3,
            2,
            false,
        ),
        s1.bn.as_ref().unwrap(),
    );
    for stage in &ir.stages {
        for (i, &id) in stage.internal.iter().enumerate() {
            let nw = wt(id);
            let a = scale(&h, 1.0 / (1.0 + (-nw.aggregation[0]).exp()));
            let c_in = a.len();
            let d = conv(
                &relu(&a),
                nw.depthwise.as_ref().unwrap(),
                c_in,
                3,
                if i == 0 { 2 } else { 1 },
                true,
            );
            h = bn(
                &conv(&d, nw.conv.as_ref().unwrap(), stage.channels, 1, 1, false),
                nw.bn.as_ref().unwrap(),
            );
        }
    }
    let hw = wt(ir.head.node);
    let z = bn(
        &conv(
            &relu(&h),
            hw.conv.as_ref().unwrap(),
            ir.head.hidden,
            1,
            1,
            false,
        ),
        hw.bn.as_ref().unwrap(),
    );
    let pooled: Vec<f64> = z
        .iter()
        .map(|p| p.iter().flatten().sum::<f64>() / (p.len() * p[0].len()) as f64)
        .collect();
    let (fw, fb) = (hw.fc_weight.as_ref().unwrap(), hw.fc_bias.as_ref().unwrap());
    (0..ir.class_count)
        .map(|o| {
            fb[o]
                + (0..pooled.len())
                    .map(|i| fw[o * pooled.len() + i] * pooled[i])
                    .sum::<f64>()
        })
        .collect()
}
