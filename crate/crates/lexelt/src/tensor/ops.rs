//! Forward and backward kernels for the graph operators.
//!
//! All kernels are plain f64 loops with a fixed iteration order, so results
//! are bit-reproducible. Backward kernels return one gradient per input, in
//! input order.

use crate::error::{Error, Result};

use super::Tensor;

/// Resolved 2-D broadcast between two operands.
pub(crate) struct Bcast {
    pub rows: usize,
    pub cols: usize,
    ra: usize,
    ca: usize,
    rb: usize,
    cb: usize,
}

impl Bcast {
    pub(crate) fn resolve(op: &str, a: &Tensor, b: &Tensor) -> Result<Bcast> {
        let (ra, ca) = a.dims2();
        let (rb, cb) = b.dims2();
        let ok = |x: usize, y: usize| x == y || x == 1 || y == 1;
        if !ok(ra, rb) || !ok(ca, cb) {
            return Err(Error::ShapeMismatch {
                op: op.to_string(),
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        Ok(Bcast {
            rows: ra.max(rb),
            cols: ca.max(cb),
            ra,
            ca,
            rb,
            cb,
        })
    }

    #[inline]
    fn idx_a(&self, r: usize, c: usize) -> usize {
        (if self.ra == 1 { 0 } else { r }) * self.ca + if self.ca == 1 { 0 } else { c }
    }

    #[inline]
    fn idx_b(&self, r: usize, c: usize) -> usize {
        (if self.rb == 1 { 0 } else { r }) * self.cb + if self.cb == 1 { 0 } else { c }
    }
}

fn bin_forward(op: &str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        return Tensor::new(a.shape().to_vec(), data);
    }
    let p = Bcast::resolve(op, a, b)?;
    let mut out = Tensor::zeros(&[p.rows, p.cols]);
    for r in 0..p.rows {
        for c in 0..p.cols {
            out.data_mut()[r * p.cols + c] = f(a.data()[p.idx_a(r, c)], b.data()[p.idx_b(r, c)]);
        }
    }
    Ok(out)
}

/// Accumulates per-element contributions of a broadcast binary op's gradient
/// back onto the operand shapes.
fn bin_backward(
    a: &Tensor,
    b: &Tensor,
    dy: &Tensor,
    da_term: impl Fn(f64, f64) -> f64,
    db_term: impl Fn(f64, f64) -> f64,
) -> (Tensor, Tensor) {
    let mut da = Tensor::zeros(a.shape());
    let mut db = Tensor::zeros(b.shape());
    if a.shape() == b.shape() {
        for i in 0..dy.numel() {
            let g = dy.data()[i];
            da.data_mut()[i] += da_term(a.data()[i], b.data()[i]) * g;
            db.data_mut()[i] += db_term(a.data()[i], b.data()[i]) * g;
        }
        return (da, db);
    }
    let p = Bcast::resolve("backward", a, b).expect("forward already resolved");
    for r in 0..p.rows {
        for c in 0..p.cols {
            let g = dy.data()[r * p.cols + c];
            let ia = p.idx_a(r, c);
            let ib = p.idx_b(r, c);
            let av = a.data()[ia];
            let bv = b.data()[ib];
            da.data_mut()[ia] += da_term(av, bv) * g;
            db.data_mut()[ib] += db_term(av, bv) * g;
        }
    }
    (da, db)
}

pub(crate) fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    bin_forward("add", a, b, |x, y| x + y)
}

pub(crate) fn add_backward(a: &Tensor, b: &Tensor, dy: &Tensor) -> (Tensor, Tensor) {
    bin_backward(a, b, dy, |_, _| 1.0, |_, _| 1.0)
}

pub(crate) fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    bin_forward("mul", a, b, |x, y| x * y)
}

pub(crate) fn mul_backward(a: &Tensor, b: &Tensor, dy: &Tensor) -> (Tensor, Tensor) {
    bin_backward(a, b, dy, |_, y| y, |x, _| x)
}

pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2();
    let (k2, n) = b.dims2();
    if k != k2 {
        return Err(Error::ShapeMismatch {
            op: "matmul".into(),
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = Tensor::zeros(&[m, n]);
    let av = a.data();
    let bv = b.data();
    let ov = out.data_mut();
    for i in 0..m {
        for p in 0..k {
            let x = av[i * k + p];
            if x == 0.0 {
                continue;
            }
            let brow = &bv[p * n..(p + 1) * n];
            let orow = &mut ov[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += x * brow[j];
            }
        }
    }
    Ok(out)
}

pub(crate) fn matmul_backward(a: &Tensor, b: &Tensor, dy: &Tensor) -> (Tensor, Tensor) {
    let da = matmul(dy, &b.transposed()).expect("shapes fixed by forward");
    let db = matmul(&a.transposed(), dy).expect("shapes fixed by forward");
    // Reshape to the operands' original ranks.
    let da = Tensor::new(a.shape().to_vec(), da.data().to_vec()).unwrap();
    let db = Tensor::new(b.shape().to_vec(), db.data().to_vec()).unwrap();
    (da, db)
}

pub(crate) fn concat(axis: usize, parts: &[&Tensor]) -> Result<Tensor> {
    debug_assert!(axis < 2);
    let dims: Vec<(usize, usize)> = parts.iter().map(|t| t.dims2()).collect();
    let (r0, c0) = dims[0];
    if axis == 0 {
        if dims.iter().any(|&(_, c)| c != c0) {
            return Err(Error::ShapeMismatch {
                op: "concat[axis=0]".into(),
                lhs: parts[0].shape().to_vec(),
                rhs: parts.iter().find(|t| t.dims2().1 != c0).unwrap().shape().to_vec(),
            });
        }
        let rows: usize = dims.iter().map(|&(r, _)| r).sum();
        let mut data = Vec::with_capacity(rows * c0);
        for t in parts {
            data.extend_from_slice(t.data());
        }
        Tensor::new(vec![rows, c0], data)
    } else {
        if dims.iter().any(|&(r, _)| r != r0) {
            return Err(Error::ShapeMismatch {
                op: "concat[axis=1]".into(),
                lhs: parts[0].shape().to_vec(),
                rhs: parts.iter().find(|t| t.dims2().0 != r0).unwrap().shape().to_vec(),
            });
        }
        let cols: usize = dims.iter().map(|&(_, c)| c).sum();
        let mut out = Tensor::zeros(&[r0, cols]);
        let mut at = 0;
        for (t, &(_, c)) in parts.iter().zip(&dims) {
            for r in 0..r0 {
                out.data_mut()[r * cols + at..r * cols + at + c]
                    .copy_from_slice(&t.data()[r * c..(r + 1) * c]);
            }
            at += c;
        }
        Ok(out)
    }
}

pub(crate) fn concat_backward(axis: usize, parts: &[&Tensor], dy: &Tensor) -> Vec<Tensor> {
    let mut grads = Vec::with_capacity(parts.len());
    if axis == 0 {
        let mut row = 0;
        for t in parts {
            let (r, c) = t.dims2();
            let mut g = Tensor::zeros(t.shape());
            g.data_mut()
                .copy_from_slice(&dy.data()[row * c..(row + r) * c]);
            grads.push(g);
            row += r;
        }
    } else {
        let (rows, cols) = dy.dims2();
        let mut at = 0;
        for t in parts {
            let (_, c) = t.dims2();
            let mut g = Tensor::zeros(t.shape());
            for r in 0..rows {
                g.data_mut()[r * c..(r + 1) * c]
                    .copy_from_slice(&dy.data()[r * cols + at..r * cols + at + c]);
            }
            grads.push(g);
            at += c;
        }
    }
    grads
}

pub(crate) fn map_unary(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = x.data().iter().map(|v| f(*v)).collect();
    Tensor::new(x.shape().to_vec(), data).unwrap()
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax over the last axis.
pub(crate) fn row_softmax(x: &Tensor) -> Tensor {
    let (rows, cols) = x.dims2();
    let mut out = Tensor::zeros(&[rows, cols]);
    for r in 0..rows {
        let row = x.row_slice(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut den = 0.0;
        for c in 0..cols {
            let e = (row[c] - m).exp();
            out.data_mut()[r * cols + c] = e;
            den += e;
        }
        for c in 0..cols {
            out.data_mut()[r * cols + c] /= den;
        }
    }
    out
}

pub(crate) fn row_softmax_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let (rows, cols) = y.dims2();
    let mut dx = Tensor::zeros(y.shape());
    for r in 0..rows {
        let mut dot = 0.0;
        for c in 0..cols {
            dot += dy.data()[r * cols + c] * y.data()[r * cols + c];
        }
        for c in 0..cols {
            let i = r * cols + c;
            dx.data_mut()[i] = y.data()[i] * (dy.data()[i] - dot);
        }
    }
    dx
}

/// Overflow-safe log-sum-exp over the last axis; an `r×c` input becomes
/// `r×1`, a vector becomes a single value.
pub(crate) fn logsumexp(x: &Tensor) -> Tensor {
    let (rows, cols) = x.dims2();
    let mut out = if x.shape().len() == 1 {
        Tensor::zeros(&[1])
    } else {
        Tensor::zeros(&[rows, 1])
    };
    for r in 0..rows {
        let row = x.row_slice(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
        out.data_mut()[r] = m + s.ln();
    }
    out
}

pub(crate) fn logsumexp_backward(x: &Tensor, y: &Tensor, dy: &Tensor) -> Tensor {
    let (rows, cols) = x.dims2();
    let mut dx = Tensor::zeros(x.shape());
    for r in 0..rows {
        let g = dy.data()[r];
        for c in 0..cols {
            let i = r * cols + c;
            dx.data_mut()[i] = (x.data()[i] - y.data()[r]).exp() * g;
        }
    }
    dx
}

pub(crate) fn gather(table: &Tensor, indices: &[usize]) -> Result<Tensor> {
    let (rows, cols) = table.dims2();
    let mut out = Tensor::zeros(&[indices.len(), cols]);
    for (r, &i) in indices.iter().enumerate() {
        if i >= rows {
            return Err(Error::IndexOutOfRange {
                what: "gather row",
                index: i,
                size: rows,
            });
        }
        out.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(table.row_slice(i));
    }
    Ok(out)
}

pub(crate) fn gather_backward(table: &Tensor, indices: &[usize], dy: &Tensor) -> Tensor {
    let (_, cols) = table.dims2();
    let mut dt = Tensor::zeros(table.shape());
    for (r, &i) in indices.iter().enumerate() {
        for c in 0..cols {
            dt.data_mut()[i * cols + c] += dy.data()[r * cols + c];
        }
    }
    dt
}

/// Same-length 1-D convolution over time with the given dilation.
///
/// `x` is `T×D`, `w` is `(width·D)×F` with taps ordered tap-major, `b` is a
/// length-`F` bias. Positions outside the sequence read as zero.
pub(crate) fn conv1d(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    width: usize,
    dilation: usize,
) -> Result<Tensor> {
    let (t_len, d) = x.dims2();
    let (wr, f) = w.dims2();
    if wr != width * d || b.numel() != f {
        return Err(Error::ShapeMismatch {
            op: format!("conv1d[width={width}]"),
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    let ctr = width / 2;
    let mut out = Tensor::zeros(&[t_len, f]);
    for t in 0..t_len {
        let orow = &mut out.data_mut()[t * f..(t + 1) * f];
        orow.copy_from_slice(&b.data()[..f]);
        for k in 0..width {
            let s = t as isize + (k as isize - ctr as isize) * dilation as isize;
            if s < 0 || s as usize >= t_len {
                continue;
            }
            let xrow = x.row_slice(s as usize);
            for (dd, &xv) in xrow.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let wrow = &w.data()[(k * d + dd) * f..(k * d + dd + 1) * f];
                for j in 0..f {
                    orow[j] += xv * wrow[j];
                }
            }
        }
    }
    Ok(out)
}

pub(crate) fn conv1d_backward(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    width: usize,
    dilation: usize,
    dy: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (t_len, d) = x.dims2();
    let (_, f) = w.dims2();
    let ctr = width / 2;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(b.shape());
    for t in 0..t_len {
        let grow = &dy.data()[t * f..(t + 1) * f];
        for j in 0..f {
            db.data_mut()[j] += grow[j];
        }
        for k in 0..width {
            let s = t as isize + (k as isize - ctr as isize) * dilation as isize;
            if s < 0 || s as usize >= t_len {
                continue;
            }
            let s = s as usize;
            for dd in 0..d {
                let wi = (k * d + dd) * f;
                let xv = x.data()[s * d + dd];
                let mut acc = 0.0;
                for j in 0..f {
                    acc += w.data()[wi + j] * grow[j];
                    dw.data_mut()[wi + j] += xv * grow[j];
                }
                dx.data_mut()[s * d + dd] += acc;
            }
        }
    }
    (dx, dw, db)
}

/// Column-wise max over rows: `T×F` → `1×F`.
pub(crate) fn max_over_time(x: &Tensor) -> Tensor {
    let (rows, cols) = x.dims2();
    let mut out = Tensor::zeros(&[1, cols]);
    for c in 0..cols {
        let mut best = f64::NEG_INFINITY;
        for r in 0..rows {
            let v = x.data()[r * cols + c];
            if v > best {
                best = v;
            }
        }
        out.data_mut()[c] = best;
    }
    out
}

pub(crate) fn max_over_time_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let (rows, cols) = x.dims2();
    let mut dx = Tensor::zeros(x.shape());
    for c in 0..cols {
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0;
        for r in 0..rows {
            let v = x.data()[r * cols + c];
            if v > best {
                best = v;
                arg = r;
            }
        }
        dx.data_mut()[arg * cols + c] += dy.data()[c];
    }
    dx
}

/// Per-row layer normalization with learned gain and bias.
pub(crate) fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let (rows, cols) = x.dims2();
    if gain.numel() != cols || bias.numel() != cols {
        return Err(Error::ShapeMismatch {
            op: "layer_norm".into(),
            lhs: x.shape().to_vec(),
            rhs: gain.shape().to_vec(),
        });
    }
    let mut out = Tensor::zeros(x.shape());
    for r in 0..rows {
        let row = x.row_slice(r);
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let s = (var + eps).sqrt();
        for c in 0..cols {
            out.data_mut()[r * cols + c] = gain.data()[c] * (row[c] - mean) / s + bias.data()[c];
        }
    }
    Ok(out)
}

pub(crate) fn layer_norm_backward(
    x: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
    eps: f64,
    dy: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (rows, cols) = x.dims2();
    let n = cols as f64;
    let mut dx = Tensor::zeros(x.shape());
    let mut dgain = Tensor::zeros(gain.shape());
    let mut dbias = Tensor::zeros(bias.shape());
    for r in 0..rows {
        let row = x.row_slice(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let s = (var + eps).sqrt();
        let xhat: Vec<f64> = row.iter().map(|v| (v - mean) / s).collect();
        let g: Vec<f64> = (0..cols).map(|c| dy.data()[r * cols + c]).collect();
        let gh: Vec<f64> = (0..cols).map(|c| g[c] * gain.data()[c]).collect();
        let m1 = gh.iter().sum::<f64>() / n;
        let m2 = gh.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n;
        for c in 0..cols {
            dgain.data_mut()[c] += g[c] * xhat[c];
            dbias.data_mut()[c] += g[c];
            dx.data_mut()[r * cols + c] = (gh[c] - m1 - xhat[c] * m2) / s;
        }
    }
    (dx, dgain, dbias)
}

/// Key order that depends only on the multiset of (logit, value-row) pairs,
/// so attention reductions are invariant to input permutation.
fn attend_order(logits_row: &[f64], values: &Tensor) -> Vec<usize> {
    let (_, dv) = values.dims2();
    let mut order: Vec<usize> = (0..logits_row.len()).collect();
    order.sort_by(|&a, &b| {
        logits_row[a]
            .partial_cmp(&logits_row[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| {
                for d in 0..dv {
                    let va = values.data()[a * dv + d];
                    let vb = values.data()[b * dv + d];
                    match va.partial_cmp(&vb) {
                        Some(std::cmp::Ordering::Equal) | None => continue,
                        Some(o) => return o,
                    }
                }
                std::cmp::Ordering::Equal
            })
    });
    order
}

/// Softmax-weighted sum of value rows: `softmax(logits) · values`.
///
/// Reductions run in ascending key order (small exponents first), which also
/// makes the result independent of how the keys were ordered on input.
pub(crate) fn attend(logits: &Tensor, values: &Tensor) -> Result<Tensor> {
    let (tq, tk) = logits.dims2();
    let (tv, dv) = values.dims2();
    if tk != tv {
        return Err(Error::ShapeMismatch {
            op: "attend".into(),
            lhs: logits.shape().to_vec(),
            rhs: values.shape().to_vec(),
        });
    }
    let mut out = Tensor::zeros(&[tq, dv]);
    let mut num = vec![0.0; dv];
    for t in 0..tq {
        let lrow = logits.row_slice(t);
        let order = attend_order(lrow, values);
        let m = lrow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut den = 0.0;
        num.iter_mut().for_each(|v| *v = 0.0);
        for &j in &order {
            let e = (lrow[j] - m).exp();
            den += e;
            for d in 0..dv {
                num[d] += e * values.data()[j * dv + d];
            }
        }
        for d in 0..dv {
            out.data_mut()[t * dv + d] = num[d] / den;
        }
    }
    Ok(out)
}

pub(crate) fn attend_backward(logits: &Tensor, values: &Tensor, dy: &Tensor) -> (Tensor, Tensor) {
    let (tq, tk) = logits.dims2();
    let (_, dv) = values.dims2();
    let mut dl = Tensor::zeros(logits.shape());
    let mut dval = Tensor::zeros(values.shape());
    for t in 0..tq {
        let lrow = logits.row_slice(t);
        let m = lrow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = lrow.iter().map(|v| (v - m).exp()).collect();
        let den: f64 = exps.iter().sum();
        let grow = &dy.data()[t * dv..(t + 1) * dv];
        // r_j = v_j · g_t, s = sum_j a_j r_j
        let mut s = 0.0;
        let mut r = vec![0.0; tk];
        for j in 0..tk {
            let a = exps[j] / den;
            let mut dot = 0.0;
            for d in 0..dv {
                dot += values.data()[j * dv + d] * grow[d];
            }
            r[j] = dot;
            s += a * dot;
            for d in 0..dv {
                dval.data_mut()[j * dv + d] += a * grow[d];
            }
        }
        for j in 0..tk {
            let a = exps[j] / den;
            dl.data_mut()[t * tk + j] = a * (r[j] - s);
        }
    }
    (dl, dval)
}

pub(crate) fn sum_all(x: &Tensor) -> Tensor {
    Tensor::scalar(x.data().iter().sum())
}
