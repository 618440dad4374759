//! Independent loop implementations used as test oracles. Nothing here goes
//! through the tape; every quantity is spelled out index by index.
#![allow(dead_code)]

use sarl_core::Tensor;

pub type Mat = Vec<Vec<f64>>;

pub fn mat(t: &Tensor) -> Mat {
    let (r, c) = t.dims2().unwrap();
    (0..r).map(|i| (0..c).map(|j| t.get2(i, j)).collect()).collect()
}

pub fn max_diff(a: &Mat, b: &Tensor) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, row) in a.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            worst = worst.max((v - b.get2(i, j)).abs());
        }
    }
    worst
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (m, k, n) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; n]; m];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i][p] * b[p][j];
            }
            out[i][j] = s;
        }
    }
    out
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn row_times(x: &[f64], w: &Mat) -> Vec<f64> {
    (0..w[0].len()).map(|j| (0..x.len()).map(|i| x[i] * w[i][j]).sum()).collect()
}

/// Multi-head attention with an explicit loop over query/key pairs.
pub fn self_attention(f: &Mat, wq: &Mat, wk: &Mat, wv: &Mat, heads: usize) -> Mat {
    let p = f.len();
    let dv = f[0].len();
    let d = dv / heads;
    let q: Mat = f.iter().map(|r| row_times(r, wq)).collect();
    let k: Mat = f.iter().map(|r| row_times(r, wk)).collect();
    let v: Mat = f.iter().map(|r| row_times(r, wv)).collect();
    let mut out = vec![vec![0.0; dv]; p];
    for h in 0..heads {
        let cols = h * d..(h + 1) * d;
        for i in 0..p {
            let mut logits = vec![0.0; p];
            for j in 0..p {
                logits[j] = dot(&q[i][cols.clone()], &k[j][cols.clone()]) / (d as f64).sqrt();
            }
            let alpha = softmax(&logits);
            for j in 0..p {
                for c in cols.clone() {
                    out[i][c] += alpha[j] * v[j][c];
                }
            }
        }
    }
    out
}

/// `a_pc` computed pair by pair.
pub fn bilinear_mass(f: &Mat, fs: &Mat, u: &Mat, v: &Mat, p_b: &Mat, b: &[f64], w: &Mat) -> Mat {
    let mut out = vec![vec![0.0; fs.len()]; f.len()];
    for (pi, fp) in f.iter().enumerate() {
        for (ci, fc) in fs.iter().enumerate() {
            let x = row_times(fp, u);
            let y = row_times(fc, v);
            let h: Vec<f64> = x.iter().zip(&y).map(|(a, b)| (a * b).tanh()).collect();
            let mut a = 0.0;
            for e in 0..b.len() {
                let mut g = b[e];
                for k in 0..h.len() {
                    g += h[k] * p_b[k][e];
                }
                a += g * w[e][0];
            }
            out[pi][ci] = a;
        }
    }
    out
}

/// One fused row per class.
pub fn fuse(f_g: &[f64], labels: &Mat, weight: &Mat, bias: &[f64]) -> Mat {
    labels
        .iter()
        .map(|l| {
            let joined: Vec<f64> = f_g.iter().chain(l).cloned().collect();
            (0..bias.len())
                .map(|j| bias[j] + (0..joined.len()).map(|i| joined[i] * weight[i][j]).sum::<f64>())
                .collect()
        })
        .collect()
}

pub fn cosine_cost(f: &Mat, fs: &Mat) -> Mat {
    let n = |x: &[f64]| dot(x, x).sqrt().max(1e-8);
    f.iter()
        .map(|a| fs.iter().map(|b| (1.0 - dot(a, b) / (n(a) * n(b))).clamp(0.0, 2.0)).collect())
        .collect()
}

pub fn theta(m: &Mat, y: &[f64]) -> Vec<f64> {
    let s: f64 = y.iter().sum();
    let logits: Vec<f64> = m.iter().map(|row| dot(row, y) / s).collect();
    softmax(&logits)
}

pub fn beta(y: &[f64]) -> Vec<f64> {
    softmax(y)
}

/// `Σ_p Σ_c (θ_p·softmax_c(a)_pc + β_c·softmax_p(a)_pc)·CO_pc`.
pub fn ct_loss(a: &Mat, theta: &[f64], beta: &[f64], co: &Mat) -> f64 {
    let (p, c) = (a.len(), a[0].len());
    let rows: Mat = a.iter().map(|r| softmax(r)).collect();
    let cols: Vec<Vec<f64>> = (0..c).map(|j| softmax(&a.iter().map(|r| r[j]).collect::<Vec<_>>())).collect();
    let mut total = 0.0;
    for i in 0..p {
        for j in 0..c {
            total += theta[i] * rows[i][j] * co[i][j];
            total += beta[j] * cols[j][i] * co[i][j];
        }
    }
    total
}

/// Per-class softmax over patches of `F^R W + b`, then the weighted sum.
pub fn aggregate(f_r: &Mat, weight: &Mat, bias: &[f64]) -> Vec<f64> {
    let scores: Mat = f_r
        .iter()
        .map(|r| row_times(r, weight).iter().zip(bias).map(|(s, b)| s + b).collect())
        .collect();
    (0..bias.len())
        .map(|c| {
            let col: Vec<f64> = scores.iter().map(|r| r[c]).collect();
            softmax(&col).iter().zip(&col).map(|(w, s)| w * s).sum()
        })
        .collect()
}

/// Direct 3×3 stride-2 pad-1 convolution over an `h × w × cin` image.
/// `weight` rows follow `(ky, kx, channel)` order.
pub fn conv(x: &[f64], h: usize, w: usize, cin: usize, weight: &Mat, bias: &[f64]) -> (Vec<f64>, usize, usize) {
    let (ho, wo) = ((h + 2 - 3) / 2 + 1, (w + 2 - 3) / 2 + 1);
    let cout = bias.len();
    let mut out = vec![0.0; ho * wo * cout];
    for oy in 0..ho {
        for ox in 0..wo {
            for co in 0..cout {
                let mut s = bias[co];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let iy = (oy * 2 + ky) as isize - 1;
                        let ix = (ox * 2 + kx) as isize - 1;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        for ci in 0..cin {
                            let xv = x[(iy as usize * w + ix as usize) * cin + ci];
                            s += xv * weight[(ky * 3 + kx) * cin + ci][co];
                        }
                    }
                }
                out[(oy * wo + ox) * cout + co] = s;
            }
        }
    }
    (out, ho, wo)
}

/// `-(y ln p + (1-y) ln(1-p))`, averaged over classes.
pub fn bce(p: &[f64], y: &[f64]) -> f64 {
    let n = p.len() as f64;
    p.iter().zip(y).map(|(p, y)| -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())).sum::<f64>() / n
}

/// AP by explicit rank computation: the rank of sample `i` is one plus the
/// number of samples ordered before it (higher score, or equal score and
/// lower index). Precisions are summed in rank order.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> f64 {
    let n = scores.len();
    let rank = |i: usize| {
        1 + (0..n).filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i)).count()
    };
    let mut pos: Vec<usize> = (0..n).filter(|&i| labels[i] == 1).map(rank).collect();
    pos.sort_unstable();
    let mut sum = 0.0;
    for (hits, r) in pos.iter().enumerate() {
        sum += (hits + 1) as f64 / *r as f64;
    }
    sum / pos.len() as f64
}
