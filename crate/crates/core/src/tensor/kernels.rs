//! Loop kernels behind the tape primitives. All buffers are row-major.

use super::Tensor;
use crate::error::{Error, Result};

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let (ca, ra) = a.split_at(a.len() - a.len() % 4);
    let (cb, rb) = b.split_at(ca.len());
    for (x, y) in ca.chunks_exact(4).zip(cb.chunks_exact(4)) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `c[m,n] = a[m,k] · b[k,n]`
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip != 0.0 {
                axpy(aip, &b[p * n..(p + 1) * n], crow);
            }
        }
    }
    c
}

/// `c[m,n] = a[m,k] · b[n,k]ᵀ`
pub(crate) fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] = dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
    c
}

/// `c[m,n] = a[k,m]ᵀ · b[k,n]`
pub(crate) fn matmul_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let api = a[p * m + i];
            if api != 0.0 {
                axpy(api, brow, &mut c[i * n..(i + 1) * n]);
            }
        }
    }
    c
}

/// Column block `[h·dh, (h+1)·dh)` of an `[n, d]` matrix, transposed to `[dh, n]`.
fn head_transposed(x: &[f64], n: usize, d: usize, h: usize, dh: usize) -> Vec<f64> {
    let mut out = vec![0.0; dh * n];
    for j in 0..n {
        for c in 0..dh {
            out[c * n + j] = x[j * d + h * dh + c];
        }
    }
    out
}

fn softmax_in_place(scores: &mut [f64]) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    let inv = 1.0 / sum;
    for s in scores.iter_mut() {
        *s *= inv;
    }
    max + sum.ln()
}

/// Scores of query row `qi` against every key: `scale · qi · Kᵀ`.
fn row_scores(qi: &[f64], kt: &[f64], n: usize, scale: f64, scores: &mut [f64]) {
    scores.fill(0.0);
    for (c, &q) in qi.iter().enumerate() {
        axpy(q * scale, &kt[c * n..(c + 1) * n], scores);
    }
}

pub(crate) struct AttentionForward {
    pub out: Vec<f64>,
    /// Log-sum-exp of every score row, `[heads, n]`.
    pub lse: Vec<f64>,
}

/// Multi-head scaled dot-product attention over `[n, d]` projections.
/// Probabilities are not stored; the backward pass recomputes them from `lse`.
pub(crate) fn attention_forward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    n: usize,
    d: usize,
    heads: usize,
) -> AttentionForward {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; n * d];
    let mut lse = vec![0.0; heads * n];
    let mut p = vec![0.0; n];
    let mut qi = vec![0.0; dh];
    for h in 0..heads {
        let kt = head_transposed(k, n, d, h, dh);
        let vt = head_transposed(v, n, d, h, dh);
        for i in 0..n {
            qi.copy_from_slice(&q[i * d + h * dh..i * d + (h + 1) * dh]);
            row_scores(&qi, &kt, n, scale, &mut p);
            lse[h * n + i] = softmax_in_place(&mut p);
            for c in 0..dh {
                out[i * d + h * dh + c] = dot(&p, &vt[c * n..(c + 1) * n]);
            }
        }
    }
    AttentionForward { out, lse }
}

pub(crate) struct AttentionGrads {
    pub dq: Vec<f64>,
    pub dk: Vec<f64>,
    pub dv: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    out: &[f64],
    lse: &[f64],
    dout: &[f64],
    n: usize,
    d: usize,
    heads: usize,
) -> AttentionGrads {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = vec![0.0; n * d];
    let mut dk = vec![0.0; n * d];
    let mut dv = vec![0.0; n * d];
    let mut p = vec![0.0; n];
    let mut dp = vec![0.0; n];
    let mut qi = vec![0.0; dh];
    let mut doi = vec![0.0; dh];
    for h in 0..heads {
        let kt = head_transposed(k, n, d, h, dh);
        let vt = head_transposed(v, n, d, h, dh);
        let mut dkt = vec![0.0; dh * n];
        let mut dvt = vec![0.0; dh * n];
        for i in 0..n {
            let cols = i * d + h * dh..i * d + (h + 1) * dh;
            qi.copy_from_slice(&q[cols.clone()]);
            doi.copy_from_slice(&dout[cols.clone()]);
            row_scores(&qi, &kt, n, scale, &mut p);
            let l = lse[h * n + i];
            for s in p.iter_mut() {
                *s = (*s - l).exp();
            }
            let delta = dot(&doi, &out[cols.clone()]);
            dp.fill(0.0);
            for c in 0..dh {
                axpy(doi[c], &vt[c * n..(c + 1) * n], &mut dp);
                axpy(doi[c], &p, &mut dvt[c * n..(c + 1) * n]);
            }
            for (g, &pj) in dp.iter_mut().zip(&p) {
                *g = pj * (*g - delta);
            }
            for c in 0..dh {
                dq[i * d + h * dh + c] = scale * dot(&dp, &kt[c * n..(c + 1) * n]);
                axpy(scale * qi[c], &dp, &mut dkt[c * n..(c + 1) * n]);
            }
        }
        for j in 0..n {
            for c in 0..dh {
                dk[j * d + h * dh + c] = dkt[c * n + j];
                dv[j * d + h * dh + c] = dvt[c * n + j];
            }
        }
    }
    AttentionGrads { dq, dk, dv }
}

/// Attention probability matrices `[heads, n, n]` for inspection.
pub fn attention_probabilities(q: &Tensor, k: &Tensor, heads: usize) -> Result<Tensor> {
    if q.shape().len() != 2 || q.shape() != k.shape() {
        return Err(Error::shape(
            "attention_probabilities",
            format!("q {:?} vs k {:?}", q.shape(), k.shape()),
        ));
    }
    let (n, d) = (q.rows(), q.cols());
    if heads == 0 || d % heads != 0 {
        return Err(Error::shape(
            "attention_probabilities",
            format!("d={d} not divisible by {heads} heads"),
        ));
    }
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut probs = vec![0.0; heads * n * n];
    for h in 0..heads {
        let kt = head_transposed(k.data(), n, d, h, dh);
        for i in 0..n {
            let row = &mut probs[(h * n + i) * n..(h * n + i + 1) * n];
            row_scores(&q.data()[i * d + h * dh..i * d + (h + 1) * dh], &kt, n, scale, row);
            softmax_in_place(row);
        }
    }
    Tensor::new(vec![heads, n, n], probs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transposed_products_agree_with_plain_matmul() {
        let a: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect(); // 3x4
        let c = matmul(&a, &b, 2, 3, 4);
        // bᵀ as 4x3
        let mut bt = vec![0.0; 12];
        for p in 0..3 {
            for j in 0..4 {
                bt[j * 3 + p] = b[p * 4 + j];
            }
        }
        let c_nt = matmul_nt(&a, &bt, 2, 3, 4);
        let mut at = vec![0.0; 6];
        for i in 0..2 {
            for p in 0..3 {
                at[p * 2 + i] = a[i * 3 + p];
            }
        }
        let c_tn = matmul_tn(&at, &b, 3, 2, 4);
        for ((x, y), z) in c.iter().zip(&c_nt).zip(&c_tn) {
            assert!((x - y).abs() < 1e-12 && (x - z).abs() < 1e-12);
        }
    }

    #[test]
    fn dot_handles_tails() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
        assert_eq!(dot(&a, &a), 140.0);
    }
}
