//! Independent reference implementations used as test oracles. Plain nested
//! loops over `Vec<Vec<f64>>`, sharing nothing with the library's kernels.
#![allow(dead_code, clippy::needless_range_loop)]

use bahe::nn::{Block, Linear, Mlp, Tensor2};

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &Tensor2) -> Mat {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn linear(x: &Mat, l: &Linear) -> Mat {
    let (n_in, n_out) = (l.w.rows(), l.w.cols());
    x.iter()
        .map(|row| {
            (0..n_out)
                .map(|j| {
                    let mut s = l.b.get(0, j);
                    for i in 0..n_in {
                        s += row[i] * l.w.get(i, j);
                    }
                    s
                })
                .collect()
        })
        .collect()
}

fn layer_norm(x: &Mat, gamma: &Tensor2, beta: &Tensor2) -> Mat {
    x.iter()
        .map(|row| {
            let d = row.len() as f64;
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            row.iter()
                .enumerate()
                .map(|(c, v)| gamma.get(0, c) * (v - mean) / (var + 1e-5).sqrt() + beta.get(0, c))
                .collect()
        })
        .collect()
}

fn gelu(u: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * u * (1.0 + (c * (u + 0.044715 * u * u * u)).tanh())
}

/// Pre-norm block: `h = x + Wo·softmax(QKᵀ/√dh)V`, `y = h + FFN(LN h)`.
pub fn block(b: &Block, x: &Mat, heads: usize, causal: bool) -> Mat {
    let t = x.len();
    let d = x[0].len();
    let dh = d / heads;
    let z = layer_norm(x, &b.ln1.gamma, &b.ln1.beta);
    let (q, k, v) = (linear(&z, &b.wq), linear(&z, &b.wk), linear(&z, &b.wv));
    let mut ctx = vec![vec![0.0; d]; t];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..t {
            let visible = if causal { i + 1 } else { t };
            let scores: Vec<f64> = (0..visible)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for (j, e) in exps.iter().enumerate() {
                for c in cols.clone() {
                    ctx[i][c] += e / z * v[j][c];
                }
            }
        }
    }
    let attn = linear(&ctx, &b.wo);
    let hmat: Mat = x.iter().zip(&attn).map(|(a, b)| a.iter().zip(b).map(|(p, q)| p + q).collect()).collect();
    let z2 = layer_norm(&hmat, &b.ln2.gamma, &b.ln2.beta);
    let u: Mat = linear(&z2, &b.ff1).into_iter().map(|r| r.into_iter().map(gelu).collect()).collect();
    let f = linear(&u, &b.ff2);
    hmat.iter().zip(&f).map(|(a, b)| a.iter().zip(b).map(|(p, q)| p + q).collect()).collect()
}

/// ReLU hidden layers, sigmoid output when `prob`.
pub fn mlp(m: &Mlp, input: &[f64]) -> Vec<f64> {
    let mut x = vec![input.to_vec()];
    let last = m.layers.len() - 1;
    for (i, l) in m.layers.iter().enumerate() {
        x = linear(&x, l);
        for v in x[0].iter_mut() {
            if i < last {
                *v = v.max(0.0);
            } else if m.spec.probability_head {
                *v = 1.0 / (1.0 + (-*v).exp());
            }
        }
    }
    x.remove(0)
}

/// Fraction of (positive, negative) pairs ordered correctly, ties one half.
pub fn auc_pairs(scores: &[f64], labels: &[u8]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            den += 1.0;
            if si > sj {
                num += 1.0;
            } else if si == sj {
                num += 0.5;
            }
        }
    }
    num / den
}

pub fn bce_scalar(preds: &[f64], labels: &[u8]) -> f64 {
    let eps = 1e-7;
    let mut total = 0.0;
    for i in 0..preds.len() {
        let p = preds[i].max(eps).min(1.0 - eps);
        let y = labels[i] as f64;
        total += -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
    }
    total / preds.len() as f64
}

pub fn max_rel_diff(a: &Mat, b: &Mat) -> f64 {
    let mut worst: f64 = 0.0;
    for (ra, rb) in a.iter().zip(b) {
        for (x, y) in ra.iter().zip(rb) {
            worst = worst.max((x - y).abs() / y.abs().max(1.0));
        }
    }
    worst
}
