use super::Tensor;
use crate::error::{shape_err, Result};

/// Multi-head scaled dot-product attention over `[B, N, C]` inputs.
///
/// Heads split `C` into contiguous blocks of `C / heads` channels; each head
/// computes `softmax(Q K^T / sqrt(C / heads)) V` and the results are
/// concatenated back along channels.
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> Result<Tensor> {
    let &[b, n, c] = q.shape() else {
        return Err(shape_err(format!("attention expects [B, N, C], got {:?}", q.shape())));
    };
    if k.shape() != q.shape() || v.shape() != q.shape() {
        return Err(shape_err(format!(
            "q/k/v shapes differ: {:?} {:?} {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    if heads == 0 || c % heads != 0 {
        return Err(shape_err(format!("{c} channels not divisible by {heads} heads")));
    }
    let mut out = Tensor::zeros(&[b, n, c]);
    let stride = n * c;
    for bi in 0..b {
        let r = bi * stride..(bi + 1) * stride;
        let (o, _) = attention_raw(&q.data()[r.clone()], &k.data()[r.clone()], &v.data()[r.clone()], n, c, heads, false);
        out.data_mut()[r].copy_from_slice(&o);
    }
    Ok(out)
}

fn head_slice(x: &[f64], n: usize, c: usize, head: usize, d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * d);
    for t in 0..n {
        out.extend_from_slice(&x[t * c + head * d..t * c + (head + 1) * d]);
    }
    out
}

/// Single-sample attention over `[N, C]` slices. Returns the output and,
/// if `keep_probs`, the `[heads, N, N]` attention weights for backward.
pub fn attention_raw(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    n: usize,
    c: usize,
    heads: usize,
    keep_probs: bool,
) -> (Vec<f64>, Vec<f64>) {
    let d = c / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = vec![0.0; n * c];
    let mut probs = if keep_probs { vec![0.0; heads * n * n] } else { Vec::new() };
    let mut row = vec![0.0; n];
    for h in 0..heads {
        let qh = head_slice(q, n, c, h, d);
        let kh = head_slice(k, n, c, h, d);
        let vh = head_slice(v, n, c, h, d);
        for i in 0..n {
            let qi = &qh[i * d..(i + 1) * d];
            let mut mx = f64::NEG_INFINITY;
            for (j, r) in row.iter_mut().enumerate() {
                let s = qi.iter().zip(&kh[j * d..(j + 1) * d]).map(|(a, b)| a * b).sum::<f64>() * scale;
                *r = s;
                mx = mx.max(s);
            }
            let mut z = 0.0;
            for r in row.iter_mut() {
                *r = (*r - mx).exp();
                z += *r;
            }
            let inv = 1.0 / z;
            let o = &mut out[i * c + h * d..i * c + (h + 1) * d];
            for (j, r) in row.iter_mut().enumerate() {
                *r *= inv;
                let p = *r;
                for (ov, vv) in o.iter_mut().zip(&vh[j * d..(j + 1) * d]) {
                    *ov += p * vv;
                }
            }
            if keep_probs {
                probs[(h * n + i) * n..(h * n + i + 1) * n].copy_from_slice(&row);
            }
        }
    }
    (out, probs)
}

/// Gradients of [`attention_raw`] w.r.t. `q`, `k`, `v`.
pub fn attention_raw_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    probs: &[f64],
    dout: &[f64],
    n: usize,
    c: usize,
    heads: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = c / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let mut dq = vec![0.0; n * c];
    let mut dk = vec![0.0; n * c];
    let mut dv = vec![0.0; n * c];
    let mut ds = vec![0.0; n];
    for h in 0..heads {
        let qh = head_slice(q, n, c, h, d);
        let kh = head_slice(k, n, c, h, d);
        let vh = head_slice(v, n, c, h, d);
        let doh = head_slice(dout, n, c, h, d);
        let mut dqh = vec![0.0; n * d];
        let mut dkh = vec![0.0; n * d];
        let mut dvh = vec![0.0; n * d];
        for i in 0..n {
            let p = &probs[(h * n + i) * n..(h * n + i + 1) * n];
            let doi = &doh[i * d..(i + 1) * d];
            // dP_ij = dO_i . V_j; dS = P * (dP - sum_j P dP)
            let mut dot = 0.0;
            for j in 0..n {
                let dp = doi.iter().zip(&vh[j * d..(j + 1) * d]).map(|(a, b)| a * b).sum::<f64>();
                ds[j] = dp;
                dot += p[j] * dp;
                for (dvv, g) in dvh[j * d..(j + 1) * d].iter_mut().zip(doi) {
                    *dvv += p[j] * g;
                }
            }
            let qi = &qh[i * d..(i + 1) * d];
            let dqi = &mut dqh[i * d..(i + 1) * d];
            for j in 0..n {
                let g = p[j] * (ds[j] - dot) * scale;
                if g == 0.0 {
                    continue;
                }
                for ((dqv, kv), (dkv, qv)) in dqi
                    .iter_mut()
                    .zip(&kh[j * d..(j + 1) * d])
                    .zip(dkh[j * d..(j + 1) * d].iter_mut().zip(qi))
                {
                    *dqv += g * kv;
                    *dkv += g * qv;
                }
            }
        }
        for t in 0..n {
            dq[t * c + h * d..t * c + (h + 1) * d].copy_from_slice(&dqh[t * d..(t + 1) * d]);
            dk[t * c + h * d..t * c + (h + 1) * d].copy_from_slice(&dkh[t * d..(t + 1) * d]);
            dv[t * c + h * d..t * c + (h + 1) * d].copy_from_slice(&dvh[t * d..(t + 1) * d]);
        }
    }
    (dq, dk, dv)
}
