//! Operation set: elementwise arithmetic, matrix products, convolutions,
//! reductions, shape surgery, and the fused statistical ops needed by the
//! model losses. Every op computes its forward value eagerly and records a
//! backward rule on the graph.

use crate::error::{Error, Result};

use super::{require_same_shape, Graph, Tensor, EPS_NUM, EXP_ARG_MAX};

#[derive(Clone, Copy)]
enum Pairing {
    Same,
    LeftScalar,
    RightScalar,
}

fn pairing(ctx: &str, a: &Tensor, b: &Tensor) -> Result<Pairing> {
    if a.shape() == b.shape() {
        Ok(Pairing::Same)
    } else if a.is_scalar() {
        Ok(Pairing::LeftScalar)
    } else if b.is_scalar() {
        Ok(Pairing::RightScalar)
    } else {
        Err(Error::Dimension(format!(
            "{ctx}: shapes {:?} and {:?} are not broadcast-compatible \
             (only equal shapes or scalar-with-tensor are supported)",
            a.shape(),
            b.shape()
        )))
    }
}

/// Division denominators are kept away from zero by this floor.
fn guard_denominator(d: f64) -> f64 {
    if d.abs() >= EPS_NUM {
        d
    } else if d < 0.0 {
        -EPS_NUM
    } else {
        EPS_NUM
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        let out_row = &mut out[i * p..(i + 1) * p];
        for t in 0..k {
            let av = a[i * k + t];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[t * p..(t + 1) * p];
            for j in 0..p {
                out_row[j] += av * b_row[j];
            }
        }
    }
    out
}

/// out[i][j] = sum_t a[i][t] * b[j][t]  (A · Bᵀ with A: m×k, B: p×k)
fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..p {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for t in 0..k {
                acc += a_row[t] * b_row[t];
            }
            out[i * p + j] = acc;
        }
    }
    out
}

/// out[t][j] = sum_i a[i][t] * b[i][j]  (Aᵀ · B with A: m×k, B: m×p)
fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * p];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * p..(i + 1) * p];
        for t in 0..k {
            let av = a_row[t];
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[t * p..(t + 1) * p];
            for j in 0..p {
                out_row[j] += av * b_row[j];
            }
        }
    }
    out
}

struct ConvDims {
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    h_out: usize,
    w_out: usize,
}

fn conv_output_extent(extent: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = extent + 2 * pad;
    if padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Unfold image patches into a (C·kh·kw) × (N·H'·W') matrix.
fn im2col(src: &[f64], d: &ConvDims, stride: usize, pad: usize) -> Vec<f64> {
    let r = d.c_in * d.kh * d.kw;
    let s = d.n * d.h_out * d.w_out;
    let mut cols = vec![0.0; r * s];
    for n in 0..d.n {
        for c in 0..d.c_in {
            let src_plane = &src[(n * d.c_in + c) * d.h * d.w..];
            for ki in 0..d.kh {
                for kj in 0..d.kw {
                    let row = (c * d.kh + ki) * d.kw + kj;
                    let cols_row = &mut cols[row * s..(row + 1) * s];
                    for oh in 0..d.h_out {
                        let ih = (oh * stride + ki) as isize - pad as isize;
                        if ih < 0 || ih >= d.h as isize {
                            continue;
                        }
                        let src_row = &src_plane[ih as usize * d.w..(ih as usize + 1) * d.w];
                        let base = (n * d.h_out + oh) * d.w_out;
                        for ow in 0..d.w_out {
                            let iw = (ow * stride + kj) as isize - pad as isize;
                            if iw < 0 || iw >= d.w as isize {
                                continue;
                            }
                            cols_row[base + ow] = src_row[iw as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Exact adjoint of [`im2col`]: scatter-add a column matrix back into image
/// space.
fn col2im(cols: &[f64], d: &ConvDims, stride: usize, pad: usize) -> Vec<f64> {
    let s = d.n * d.h_out * d.w_out;
    let mut dest = vec![0.0; d.n * d.c_in * d.h * d.w];
    for n in 0..d.n {
        for c in 0..d.c_in {
            let dest_plane = &mut dest[(n * d.c_in + c) * d.h * d.w..(n * d.c_in + c + 1) * d.h * d.w];
            for ki in 0..d.kh {
                for kj in 0..d.kw {
                    let row = (c * d.kh + ki) * d.kw + kj;
                    let cols_row = &cols[row * s..(row + 1) * s];
                    for oh in 0..d.h_out {
                        let ih = (oh * stride + ki) as isize - pad as isize;
                        if ih < 0 || ih >= d.h as isize {
                            continue;
                        }
                        let base = (n * d.h_out + oh) * d.w_out;
                        let dest_row = &mut dest_plane[ih as usize * d.w..(ih as usize + 1) * d.w];
                        for ow in 0..d.w_out {
                            let iw = (ow * stride + kj) as isize - pad as isize;
                            if iw < 0 || iw >= d.w as isize {
                                continue;
                            }
                            dest_row[iw as usize] += cols_row[base + ow];
                        }
                    }
                }
            }
        }
    }
    dest
}

/// Reorder N×C×H'×W' values into a C × (N·H'·W') matrix.
fn nchw_to_mat(src: &[f64], n: usize, c: usize, hw: usize) -> Vec<f64> {
    let s = n * hw;
    let mut mat = vec![0.0; c * s];
    for ni in 0..n {
        for ci in 0..c {
            let src_plane = &src[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
            let dst = &mut mat[ci * s + ni * hw..ci * s + (ni + 1) * hw];
            dst.copy_from_slice(src_plane);
        }
    }
    mat
}

/// Inverse of [`nchw_to_mat`].
fn mat_to_nchw(mat: &[f64], n: usize, c: usize, hw: usize) -> Vec<f64> {
    let s = n * hw;
    let mut out = vec![0.0; n * c * hw];
    for ni in 0..n {
        for ci in 0..c {
            let src = &mat[ci * s + ni * hw..ci * s + (ni + 1) * hw];
            out[(ni * c + ci) * hw..(ni * c + ci + 1) * hw].copy_from_slice(src);
        }
    }
    out
}

impl Graph {
    fn binary<FA, FB>(
        &self,
        ctx: &'static str,
        a: &Tensor,
        b: &Tensor,
        fwd: impl Fn(f64, f64) -> f64,
        dfa: FA,
        dfb: FB,
    ) -> Result<Tensor>
    where
        FA: Fn(f64, f64) -> f64 + 'static,
        FB: Fn(f64, f64) -> f64 + 'static,
    {
        let kind = pairing(ctx, a, b)?;
        let (shape, out_values): (Vec<usize>, Vec<f64>) = match kind {
            Pairing::Same => (
                a.shape().to_vec(),
                a.values()
                    .iter()
                    .zip(b.values())
                    .map(|(&x, &y)| fwd(x, y))
                    .collect(),
            ),
            Pairing::LeftScalar => {
                let x = a.values()[0];
                (
                    b.shape().to_vec(),
                    b.values().iter().map(|&y| fwd(x, y)).collect(),
                )
            }
            Pairing::RightScalar => {
                let y = b.values()[0];
                (
                    a.shape().to_vec(),
                    a.values().iter().map(|&x| fwd(x, y)).collect(),
                )
            }
        };
        let out = Tensor::from_parts(shape, out_values);
        let (ac, bc, oc) = (a.clone(), b.clone(), out.clone());
        self.record(
            out.id(),
            Box::new(move || {
                let Some(g) = oc.grad_for_backward() else {
                    return;
                };
                let av = ac.values();
                let bv = bc.values();
                {
                    let mut ga = ac.grad_mut();
                    match kind {
                        Pairing::Same | Pairing::RightScalar => {
                            let y0 = if matches!(kind, Pairing::RightScalar) {
                                Some(bv[0])
                            } else {
                                None
                            };
                            for i in 0..g.len() {
                                let y = y0.unwrap_or_else(|| bv[i]);
                                ga[i] += g[i] * dfa(av[i], y);
                            }
                        }
                        Pairing::LeftScalar => {
                            let x = av[0];
                            let mut acc = 0.0;
                            for i in 0..g.len() {
                                acc += g[i] * dfa(x, bv[i]);
                            }
                            ga[0] += acc;
                        }
                    }
                }
                {
                    let mut gb = bc.grad_mut();
                    match kind {
                        Pairing::Same | Pairing::LeftScalar => {
                            let x0 = if matches!(kind, Pairing::LeftScalar) {
                                Some(av[0])
                            } else {
                                None
                            };
                            for i in 0..g.len() {
                                let x = x0.unwrap_or_else(|| av[i]);
                                gb[i] += g[i] * dfb(x, bv[i]);
                            }
                        }
                        Pairing::RightScalar => {
                            let y = bv[0];
                            let mut acc = 0.0;
                            for i in 0..g.len() {
                                acc += g[i] * dfb(av[i], y);
                            }
                            gb[0] += acc;
                        }
                    }
                }
            }),
        );
        Ok(out)
    }

    fn unary<D>(&self, a: &Tensor, fwd: impl Fn(f64) -> f64, dfdx: D) -> Tensor
    where
        D: Fn(f64, f64) -> f64 + 'static,
    {
        let out_values: Vec<f64> = a.values().iter().map(|&x| fwd(x)).collect();
        let out = Tensor::from_parts(a.shape().to_vec(), out_values);
        let (ac, oc) = (a.clone(), out.clone());
        self.record(
            out.id(),
            Box::new(move || {
                let Some(g) = oc.grad_for_backward() else {
                    return;
                };
                let av = ac.values();
                let ov = oc.values();
                let mut ga = ac.grad_mut();
                for i in 0..g.len() {
                    ga[i] += g[i] * dfdx(av[i], ov[i]);
                }
            }),
        );
        out
    }

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary("add", a, b, |x, y| x + y, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary("sub", a, b, |x, y| x - y, |_, _| 1.0, |_, _| -1.0)
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary("mul", a, b, |x, y| x * y, |_, y| y, |x, _| x)
    }

    /// Elementwise division; the denominator is floored in magnitude at
    /// [`EPS_NUM`] so the result stays finite.
    pub fn div(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(
            "div",
            a,
            b,
            |x, y| x / guard_denominator(y),
            |_, y| 1.0 / guard_denominator(y),
            |x, y| {
                let d = guard_denominator(y);
                -x / (d * d)
            },
        )
    }

    pub fn neg(&self, a: &Tensor) -> Tensor {
        self.unary(a, |x| -x, |_, _| -1.0)
    }

    pub fn exp(&self, a: &Tensor) -> Tensor {
        self.unary(
            a,
            |x| x.min(EXP_ARG_MAX).exp(),
            |x, y| if x < EXP_ARG_MAX { y } else { 0.0 },
        )
    }

    /// Natural log with the argument floored at [`EPS_NUM`]; near-zero inputs
    /// give `ln(EPS_NUM)` rather than −∞.
    pub fn log(&self, a: &Tensor) -> Tensor {
        self.unary(
            a,
            |x| x.max(EPS_NUM).ln(),
            |x, _| if x > EPS_NUM { 1.0 / x } else { 0.0 },
        )
    }

    /// Square root with the argument floored at [`EPS_NUM`].
    pub fn sqrt(&self, a: &Tensor) -> Tensor {
        self.unary(
            a,
            |x| x.max(EPS_NUM).sqrt(),
            |x, y| if x > EPS_NUM { 0.5 / y } else { 0.0 },
        )
    }

    pub fn tanh(&self, a: &Tensor) -> Tensor {
        self.unary(a, |x| x.tanh(), |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&self, a: &Tensor) -> Tensor {
        self.unary(
            a,
            |x| {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            },
            |_, y| y * (1.0 - y),
        )
    }

    pub fn leaky_relu(&self, a: &Tensor, slope: f64) -> Tensor {
        self.unary(
            a,
            move |x| if x > 0.0 { x } else { slope * x },
            move |x, _| if x > 0.0 { 1.0 } else { slope },
        )
    }

    /// Clamp into [eps, 1−eps]; gradient passes only through the interior.
    pub fn clamp01(&self, a: &Tensor, eps: f64) -> Tensor {
        let hi = 1.0 - eps;
        self.unary(
            a,
            move |x| x.clamp(eps, hi),
            move |x, _| if x > eps && x < hi { 1.0 } else { 0.0 },
        )
    }

    /// `mul_by * a + add_const`, elementwise with compile-time constants.
    pub fn affine(&self, a: &Tensor, mul_by: f64, add_const: f64) -> Result<Tensor> {
        if !mul_by.is_finite() || !add_const.is_finite() {
            return Err(Error::Contract("affine constants must be finite".into()));
        }
        Ok(self.unary(a, move |x| mul_by * x + add_const, move |_, _| mul_by))
    }

    /// Matrix product of an M×K by a K×P tensor.
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension(format!(
                "matmul: incompatible shapes {sa:?} and {sb:?}"
            )));
        }
        let (m, k, p) = (sa[0], sa[1], sb[1]);
        let out_values = matmul_raw(a.values(), b.values(), m, k, p);
        let out = Tensor::from_parts(vec![m, p], out_values);
        let (ac, bc, oc) = (a.clone(), b.clone(), out.clone());
        self.record(
            out.id(),
            Box::new(move || {
                let Some(g) = oc.grad_for_backward() else {
                    return;
                };
                let da = matmul_nt(&g, bc.values(), m, p, k);
                let db = matmul_tn(ac.values(), &g, m, k, p);
                {
                    let mut ga = ac.grad_mut();
                    for (gi, di) in ga.iter_mut().zip(&da) {
                        *gi += di;
                    }
                }
                {
                    let mut gb = bc.grad_mut();
                    for (gi, di) in gb.iter_mut().zip(&db) {
                        *gi += di;
                    }
                }
            }),
        );
        Ok(out)
    }

    pub fn transpose(&self, a: &Tensor) -> Result<Tensor> {
        let s = a.shape();
        if s.len() != 2 {
            return Err(Error::Dimension(format!(
                "transpose expects a matrix, got shape {s:?}"
            )));
        }
        let (m, n) = (s[0], s[1]);
        let av = a.values();
        let mut out_values = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out_values[j * m + i] = av[i * n + j];
            }
        }
        let out = Tensor::from_parts(vec![n, m], out_values);
        let (ac, oc) = (a.clone(), out.clone());
        self.record(
            out.id(),
            Box::new(move || {
                let Some(g) = oc.grad_for_backward() else {
                    return;
                };
                let mut ga = ac.grad_mut();
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] += g[j * m + i];
                    }
                }
            }),
        );
        Ok(out)
    }

    pub fn reshape(&self, a: &Tensor, shape: &[usize]) -> Result<Tensor> {
        let count: usize = shape.iter().product();
        if count != a.len() {
            return Err(Error::Dimension(format!(
                "reshape: {:?} ({} scalars) cannot become {:?} ({} scalars)",
                a.shape(),
                a.len(),
                shape,
                count
            )));
        }
        let out = Tensor::from_parts(shape.to_vec(), a.values().to_vec());
        let (ac, oc) = (a.clone(), out.clone());
        self.record(
            out.id(),
            Box::new(move || {
                let Some(g) = oc.grad_for_backward() else {
                    return;
                };
                let mut ga = ac.grad_mut();
                for (gi, di) in ga.iter_mut().zip(g.iter()) {
                    *gi += di;
                }
            }),
        );
        Ok(out)
    }

    /// Concatenate two matrices with equal row counts along the column axis.
    pub fn concat_cols(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(Error::Dimension(format!(
                "concat_cols: incompatible shapes {sa:?} and {sb:?}"
            )));
        }
        let (n, ca, cb) = (sa[0], sa[1], sb[1]);
        let mut out_values = vec![0.0; n * (ca + cb)];
        for i in 0..n {
            out_values[i * (ca + cb)..i * (ca + cb) + ca]
                .copy_from_slice(&a.values()[i * ca..(i + 1) * ca]);
            out_values[i * (ca + cb) + ca..(i + 1) * (ca + cb)]
                .copy_from_slice(&b.values()[i * cb..(i + 1) * cb]);
        }
        let out = Tensor::from_parts(vec![n, ca + cb], out_values);
        let (ac, bc, oc) = (a.clone(), b.clone(), out.clone());
        self.record(
            out.id(),
            Box::new(move || {
                let Some(g) = oc.grad_for_backward() else {
                    return;
                };
                {
                    let mut ga = ac.grad_mut();
                    for i in 0..n {
                        for j in 0..ca {
                            ga[i * ca + j] += g[i * (ca + cb) + j];
                        }
                    }
                }
                {
                    let mut gb = bc.grad_mut();
                    for i in 0..n {
                        for j in 0..cb {
                            gb[i * cb + j] += g[i * (ca + cb) + ca + j];
                        }
                    }
                }
            }),
        );
        Ok(out)
    }

    /// Take columns [start, start+len) of a matrix.
    pub fn slice_cols(&self, a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        let s = a.shape();
        if s.len() != 2 {
            return Err(Error::Dimension(format!(
                "slice_cols expects a matrix, got shape {s:?}"
            )));
        }
        let (n, c) = (s[0], s[1]);
        if len == 0 || start + len > c {
            return Err(Error::Dimension(format!(
                "slice_cols: columns [{start}, {}) out of range for width {c}",
                start + len
            )));
        }
        let av = a.values();
        let mut out_values = vec![0.0; n * len];
        for i in 0..n {
            out_values[i * len..(i + 1) * len]
                .copy_from_slice(&av[i * c + start..i * c + start + len]);
        }
        let out = Tensor::from_parts(vec![n, len], out_values);
        let (ac, oc) = (a.clone(), out.clone());
        self.record(
            out.id(),
            Box::new(move || {
                let Some(g) = oc.grad_for_backward() else {
                    return;
                };
                let mut ga = ac.grad_mut();
                for i in 0..n {
                    for j in 0..len {
                        ga[i * c + start + j] += g[i * len + j];
                    }
                }
            }),
        );
        Ok(out)
    }

    /// Take rows [start, start+len) along the leading axis.
    pub fn slice_batch(&self, x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        let s = x.shape();
        if s.is_empty() {
            return Err(Error::Dimension(
                "slice_batch expects rank >= 1".to_string(),
            ));
        }
        if len == 0 || start + len > s[0] {
            return Err(Error::Dimension(format!(
                "slice_batch: rows [{start}, {}) out of range for leading dim {}",
                start + len,
                s[0]
            )));
        }
        let stride: usize = s[1..].iter().product();
        let mut shape = s.to_vec();
        shape[0] = len;
        let out_values = x.values()[start * stride..(start + len) * stride].to_vec();
        let out = Tensor::from_parts(shape, out_values);
        let (xc, oc) = (x.clone(), out.clone());
        self.record(
            out.id(),
            Box::new(move || {
                let Some(g) = oc.grad_for_backward() else {
                    return;
                };
                let mut gx = xc.grad_mut();
                for (gi, di) in gx[start * stride..(start + len) * stride]
                    .iter_mut()
                    .zip(g.iter())
                {
                    *gi += di;
                }
            }),
        );
        Ok(out)
    }

    /// Repeat a length-C vector as N identical matrix rows.
    pub fn broadcast_row(&self, v: &Tensor, n: usize) -> Result<Tensor> {
        let s = v.shape();
        if s.len() != 1 || n == 0 {
            return Err(Error::Dimension(format!(
                "broadcast_row expects a vector and n >= 1, got shape {s:?}, n = {n}"
            )));
        }
        let c = s[0];
        let mut out_values = vec![0.0; n * c];
        for i in 0..n {
            out_values[i * c..(i + 1) * c].copy_from_slice(v.values());
        }
        let out = Tensor::from_parts(vec![n, c], out_values);
        let (vc, oc) = (v.clone(), out.clone());
        self.record(
            out.id(),
            Box::new(move || {
                let Some(g) = oc.grad_for_backward() else {
                    return;
                };
                let mut gv = vc.grad_mut();
                for i in 0..n {
                    for j in 0..c {
                        gv[j] += g[i * c + j];
                    }
                }
            }),
        );
        Ok(out)
    }

    /// Broadcast a length-C vector over the channel axis of an N×C×H×W
    /// tensor (per-channel bias).
    pub fn broadcast_channel(&self, v: &Tensor, n: usize, h: usize, w: usize) -> Result<Tensor> {
        let s = v.shape();
        if s.len() != 1 || n == 0 || h == 0 || w == 0 {
            return Err(Error::Dimension(format!(
                "broadcast_channel expects a vector and positive dims, got {s:?}, ({n},{h},{w})"
            )));
        }
        let c = s[0];
        let hw = h * w;
        let mut out_values = vec![0.0; n * c * hw];
        for ni in 0..n {
            for ci in 0..c {
                let val = v.values()[ci];
                for x in &mut out_values[(ni * c + ci) * hw..(ni * c + ci + 1) * hw] {
                    *x = val;
                }
            }
        }
        let out = Tensor::from_parts(vec![n, c, h, w], out_values);
        let (vc, oc) = (v.clone(), out.clone());
        self.record(
            out.id(),
            Box::new(move || {
                let Some(g) = oc.grad_for_backward() else {
                    return;
                };
                let mut gv = vc.grad_mut();
                for ni in 0..n {
                    for ci in 0..c {
                        let mut acc = 0.0;
                        for &x in &g[(ni * c + ci) * hw..(ni * c + ci + 1) * hw] {
                            acc += x;
                        }
                        gv[ci] += acc;
                    }
                }
            }),
        );
        Ok(out)
    }

    fn reduce(&self, a: &Tensor, axes: &[usize], mean: bool) -> Result<Tensor> {
        let shape = a.shape().to_vec();
        let ndim = shape.len();
        let mut mask = vec![false; ndim];
        for &ax in axes {
            if ax >= ndim {
                return Err(Error::Dimension(format!(
                    "reduce: axis {ax} out of range for shape {shape:?}"
                )));
            }
            if mask[ax] {
                return Err(Error::Dimension(format!("reduce: duplicate axis {ax}")));
            }
            mask[ax] = true;
        }
        let out_shape: Vec<usize> = shape
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| !m)
            .map(|(&d, _)| d)
            .collect();
        let count: usize = shape
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|(&d, _)| d)
            .product();
        let scale = if mean { 1.0 / count as f64 } else { 1.0 };

        // Stride of each input dim within the output index (0 when reduced).
        let mut out_stride = vec![0usize; ndim];
        {
            let mut acc = 1usize;
            for d in (0..ndim).rev() {
                if !mask[d] {
                    out_stride[d] = acc;
                    acc *= shape[d];
                }
            }
        }
        let mut in_stride = vec![0usize; ndim];
        {
            let mut acc = 1usize;
            for d in (0..ndim).rev() {
                in_stride[d] = acc;
                acc *= shape[d];
            }
        }
        let out_len: usize = out_shape.iter().product();
        let map_index = move |mut idx: usize, in_stride: &[usize], out_stride: &[usize]| {
            let mut out_idx = 0usize;
            for d in 0..in_stride.len() {
                let coord = idx / in_stride[d];
                idx %= in_stride[d];
                out_idx += coord * out_stride[d];
            }
            out_idx
        };

        let av = a.values();
        let mut out_values = vec![0.0; out_len];
        if out_len == 1 {
            let mut acc = 0.0;
            for &x in av {
                acc += x;
            }
            out_values[0] = acc * scale;
        } else {
            for (i, &x) in av.iter().enumerate() {
                out_values[map_index(i, &in_stride, &out_stride)] += x;
            }
            if mean {
                for x in &mut out_values {
                    *x *= scale;
                }
            }
        }
        let out = Tensor::from_parts(out_shape, out_values);
        let (ac, oc) = (a.clone(), out.clone());
        self.record(
            out.id(),
            Box::new(move || {
                let Some(g) = oc.grad_for_backward() else {
                    return;
                };
                let mut ga = ac.grad_mut();
                if g.len() == 1 {
                    let gv = g[0] * scale;
                    for x in ga.iter_mut() {
                        *x += gv;
                    }
                } else {
                    for i in 0..ga.len() {
                        ga[i] += g[map_index(i, &in_stride, &out_stride)] * scale;
                    }
                }
            }),
        );
        Ok(out)
    }

    pub fn reduce_sum(&self, a: &Tensor, axes: &[usize]) -> Result<Tensor> {
        self.reduce(a, axes, false)
    }

    pub fn reduce_mean(&self, a: &Tensor, axes: &[usize]) -> Result<Tensor> {
        self.reduce(a, axes, true)
    }

    /// Sum of every element, as a scalar.
    pub fn sum_all(&self, a: &Tensor) -> Result<Tensor> {
        let axes: Vec<usize> = (0..a.shape().len()).collect();
        self.reduce(a, &axes, false)
    }

    /// Mean of every element, as a scalar.
    pub fn mean_all(&self, a: &Tensor) -> Result<Tensor> {
        let axes: Vec<usize> = (0..a.shape().len()).collect();
        self.reduce(a, &axes, true)
    }

    /// 2-D cross-correlation (no kernel flip). Input N×C_in×H×W, kernel
    /// C_out×C_in×kh×kw.
    pub fn conv2d(&self, x: &Tensor, kernel: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
        let (sx, sk) = (x.shape(), kernel.shape());
        if sx.len() != 4 || sk.len() != 4 {
            return Err(Error::Dimension(format!(
                "conv2d expects 4-d input and kernel, got {sx:?} and {sk:?}"
            )));
        }
        if sx[1] != sk[1] {
            return Err(Error::Dimension(format!(
                "conv2d: input channels {} do not match kernel channels {} ({sx:?} vs {sk:?})",
                sx[1], sk[1]
            )));
        }
        if stride == 0 {
            return Err(Error::Config("conv2d: stride must be positive".into()));
        }
        let (n, c_in, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let (c_out, kh, kw) = (sk[0], sk[2], sk[3]);
        let (h_out, w_out) = match (
            conv_output_extent(h, kh, stride, pad),
            conv_output_extent(w, kw, stride, pad),
        ) {
            (Some(a), Some(b)) if a > 0 && b > 0 => (a, b),
            _ => {
                return Err(Error::Config(format!(
                    "conv2d: non-positive output size for input {h}x{w}, kernel {kh}x{kw}, \
                     stride {stride}, pad {pad}"
                )))
            }
        };
        let dims = ConvDims {
            n,
            c_in,
            h,
            w,
            kh,
            kw,
            h_out,
            w_out,
        };
        let r = c_in * kh * kw;
        let s = n * h_out * w_out;
        let cols = im2col(x.values(), &dims, stride, pad);
        let out_mat = matmul_raw(kernel.values(), &cols, c_out, r, s);
        let out_values = mat_to_nchw(&out_mat, n, c_out, h_out * w_out);
        let out = Tensor::from_parts(vec![n, c_out, h_out, w_out], out_values);
        let (xc, kc, oc) = (x.clone(), kernel.clone(), out.clone());
        self.record(
            out.id(),
            Box::new(move || {
                let Some(g) = oc.grad_for_backward() else {
                    return;
                };
                let g_mat = nchw_to_mat(&g, n, c_out, h_out * w_out);
                let cols = im2col(xc.values(), &dims, stride, pad);
                let dk = matmul_nt(&g_mat, &cols, c_out, s, r);
                let d_cols = matmul_tn(kc.values(), &g_mat, c_out, r, s);
                let dx = col2im(&d_cols, &dims, stride, pad);
                {
                    let mut gk = kc.grad_mut();
                    for (gi, di) in gk.iter_mut().zip(&dk) {
                        *gi += di;
                    }
                }
                {
                    let mut gx = xc.grad_mut();
                    for (gi, di) in gx.iter_mut().zip(&dx) {
                        *gi += di;
                    }
                }
            }),
        );
        Ok(out)
    }

    /// Transposed convolution: the exact adjoint of [`Graph::conv2d`] with the
    /// same stride/padding. Input N×C_in×H×W, kernel C_in×C_out×kh×kw, output
    /// N×C_out×H_out×W_out with H_out = (H−1)·stride − 2·pad + kh.
    pub fn conv2d_transpose(
        &self,
        x: &Tensor,
        kernel: &Tensor,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor> {
        let (sx, sk) = (x.shape(), kernel.shape());
        if sx.len() != 4 || sk.len() != 4 {
            return Err(Error::Dimension(format!(
                "conv2d_transpose expects 4-d input and kernel, got {sx:?} and {sk:?}"
            )));
        }
        if sx[1] != sk[0] {
            return Err(Error::Dimension(format!(
                "conv2d_transpose: input channels {} do not match kernel \
                 leading dimension {} ({sx:?} vs {sk:?})",
                sx[1], sk[0]
            )));
        }
        if stride == 0 {
            return Err(Error::Config(
                "conv2d_transpose: stride must be positive".into(),
            ));
        }
        let (n, c_in, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let (c_out, kh, kw) = (sk[1], sk[2], sk[3]);
        let h_out = ((h - 1) * stride + kh) as isize - 2 * pad as isize;
        let w_out = ((w - 1) * stride + kw) as isize - 2 * pad as isize;
        if h_out < 1 || w_out < 1 {
            return Err(Error::Config(format!(
                "conv2d_transpose: non-positive output size for input {h}x{w}, \
                 kernel {kh}x{kw}, stride {stride}, pad {pad}"
            )));
        }
        let (h_out, w_out) = (h_out as usize, w_out as usize);
        // The adjoint view: the output plays the conv input role and x plays
        // the conv output role.
        let dims = ConvDims {
            n,
            c_in: c_out,
            h: h_out,
            w: w_out,
            kh,
            kw,
            h_out: h,
            w_out: w,
        };
        let r = c_out * kh * kw;
        let s = n * h * w;
        let x_mat = nchw_to_mat(x.values(), n, c_in, h * w);
        let d_cols = matmul_tn(kernel.values(), &x_mat, c_in, r, s);
        let out_values = col2im(&d_cols, &dims, stride, pad);
        let out = Tensor::from_parts(vec![n, c_out, h_out, w_out], out_values);
        let (xc, kc, oc) = (x.clone(), kernel.clone(), out.clone());
        self.record(
            out.id(),
            Box::new(move || {
                let Some(g) = oc.grad_for_backward() else {
                    return;
                };
                let g_cols = im2col(&g, &dims, stride, pad);
                // dx = conv2d(g, kernel) restricted to x's grid.
                let dx_mat = matmul_raw(kc.values(), &g_cols, c_in, r, s);
                let dx = mat_to_nchw(&dx_mat, n, c_in, h * w);
                let dk = matmul_nt(&nchw_to_mat(xc.values(), n, c_in, h * w), &g_cols, c_in, s, r);
                {
                    let mut gx = xc.grad_mut();
                    for (gi, di) in gx.iter_mut().zip(&dx) {
                        *gi += di;
                    }
                }
                {
                    let mut gk = kc.grad_mut();
                    for (gi, di) in gk.iter_mut().zip(&dk) {
                        *gi += di;
                    }
                }
            }),
        );
        Ok(out)
    }

    /// Per-channel 2-D correlation with a fixed (non-learned) kernel, shared
    /// across channels. Used for Gaussian windows and mean pooling.
    pub fn depthwise_conv2d_fixed(
        &self,
        x: &Tensor,
        kernel: &[f64],
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor> {
        let sx = x.shape();
        if sx.len() != 4 {
            return Err(Error::Dimension(format!(
                "depthwise_conv2d_fixed expects 4-d input, got {sx:?}"
            )));
        }
        if kernel.len() != kh * kw {
            return Err(Error::Dimension(format!(
                "depthwise_conv2d_fixed: kernel has {} values, expected {}",
                kernel.len(),
                kh * kw
            )));
        }
        if stride == 0 {
            return Err(Error::Config(
                "depthwise_conv2d_fixed: stride must be positive".into(),
            ));
        }
        let (n, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let (h_out, w_out) = match (
            conv_output_extent(h, kh, stride, pad),
            conv_output_extent(w, kw, stride, pad),
        ) {
            (Some(a), Some(b)) if a > 0 && b > 0 => (a, b),
            _ => {
                return Err(Error::Config(format!(
                    "depthwise_conv2d_fixed: non-positive output size for input {h}x{w}, \
                     kernel {kh}x{kw}, stride {stride}, pad {pad}"
                )))
            }
        };
        let av = x.values();
        let mut out_values = vec![0.0; n * c * h_out * w_out];
        for plane in 0..n * c {
            let src = &av[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out_values[plane * h_out * w_out..(plane + 1) * h_out * w_out];
            for oh in 0..h_out {
                for ow in 0..w_out {
                    let mut acc = 0.0;
                    for ki in 0..kh {
                        let ih = (oh * stride + ki) as isize - pad as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        for kj in 0..kw {
                            let iw = (ow * stride + kj) as isize - pad as isize;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            acc += src[ih as usize * w + iw as usize] * kernel[ki * kw + kj];
                        }
                    }
                    dst[oh * w_out + ow] = acc;
                }
            }
        }
        let out = Tensor::from_parts(vec![n, c, h_out, w_out], out_values);
        let (xc, oc) = (x.clone(), out.clone());
        let kernel = kernel.to_vec();
        self.record(
            out.id(),
            Box::new(move || {
                let Some(g) = oc.grad_for_backward() else {
                    return;
                };
                let mut gx = xc.grad_mut();
                for plane in 0..n * c {
                    let gsrc = &g[plane * h_out * w_out..(plane + 1) * h_out * w_out];
                    let gdst = &mut gx[plane * h * w..(plane + 1) * h * w];
                    for oh in 0..h_out {
                        for ow in 0..w_out {
                            let gv = gsrc[oh * w_out + ow];
                            if gv == 0.0 {
                                continue;
                            }
                            for ki in 0..kh {
                                let ih = (oh * stride + ki) as isize - pad as isize;
                                if ih < 0 || ih >= h as isize {
                                    continue;
                                }
                                for kj in 0..kw {
                                    let iw = (ow * stride + kj) as isize - pad as isize;
                                    if iw < 0 || iw >= w as isize {
                                        continue;
                                    }
                                    gdst[ih as usize * w + iw as usize] += gv * kernel[ki * kw + kj];
                                }
                            }
                        }
                    }
                }
            }),
        );
        Ok(out)
    }

    /// Row-wise softmax of an N×C matrix, stabilized by subtracting each
    /// row's maximum before exponentiation.
    pub fn softmax_rows(&self, a: &Tensor) -> Result<Tensor> {
        let s = a.shape();
        if s.len() != 2 {
            return Err(Error::Dimension(format!(
                "softmax_rows expects a matrix, got shape {s:?}"
            )));
        }
        let (n, c) = (s[0], s[1]);
        let av = a.values();
        let mut out_values = vec![0.0; n * c];
        for i in 0..n {
            let row = &av[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..c {
                let e = (row[j] - max).exp();
                out_values[i * c + j] = e;
                sum += e;
            }
            for j in 0..c {
                out_values[i * c + j] /= sum;
            }
        }
        let out = Tensor::from_parts(vec![n, c], out_values);
        let (ac, oc) = (a.clone(), out.clone());
        self.record(
            out.id(),
            Box::new(move || {
                let Some(g) = oc.grad_for_backward() else {
                    return;
                };
                let y = oc.values();
                let mut ga = ac.grad_mut();
                for i in 0..n {
                    let (ys, gs) = (&y[i * c..(i + 1) * c], &g[i * c..(i + 1) * c]);
                    let mut dot = 0.0;
                    for j in 0..c {
                        dot += ys[j] * gs[j];
                    }
                    for j in 0..c {
                        ga[i * c + j] += ys[j] * (gs[j] - dot);
                    }
                }
            }),
        );
        Ok(out)
    }

    /// Pairwise Euclidean distances between the rows of an N×D matrix.
    /// The forward value is exact (zero diagonal); the backward rule guards
    /// the derivative denominator with [`EPS_NUM`] so coincident rows get a
    /// zero (rather than undefined) gradient.
    pub fn pairwise_distances(&self, m: &Tensor) -> Result<Tensor> {
        let s = m.shape();
        if s.len() != 2 {
            return Err(Error::Dimension(format!(
                "pairwise_distances expects a matrix, got shape {s:?}"
            )));
        }
        let (n, d) = (s[0], s[1]);
        if n < 2 {
            return Err(Error::Contract(format!(
                "pairwise_distances requires at least 2 rows, got {n}"
            )));
        }
        let mv = m.values();
        let mut out_values = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let mut acc = 0.0;
                for k in 0..d {
                    let diff = mv[i * d + k] - mv[j * d + k];
                    acc += diff * diff;
                }
                let dist = acc.sqrt();
                out_values[i * n + j] = dist;
                out_values[j * n + i] = dist;
            }
        }
        let out = Tensor::from_parts(vec![n, n], out_values);
        let (mc, oc) = (m.clone(), out.clone());
        self.record(
            out.id(),
            Box::new(move || {
                let Some(g) = oc.grad_for_backward() else {
                    return;
                };
                let mv = mc.values();
                let dist = oc.values();
                let mut gm = mc.grad_mut();
                for i in 0..n {
                    for j in (i + 1)..n {
                        let gv = g[i * n + j] + g[j * n + i];
                        if gv == 0.0 {
                            continue;
                        }
                        let dij = dist[i * n + j];
                        let inv = gv / (dij * dij + EPS_NUM).sqrt();
                        for k in 0..d {
                            let diff = (mv[i * d + k] - mv[j * d + k]) * inv;
                            gm[i * d + k] += diff;
                            gm[j * d + k] -= diff;
                        }
                    }
                }
            }),
        );
        Ok(out)
    }

    /// Double-center a square matrix: subtract row and column means and add
    /// back the grand mean, so every row and column of the result sums to
    /// zero. The operation is its own adjoint.
    pub fn double_center(&self, raw: &Tensor) -> Result<Tensor> {
        let s = raw.shape();
        if s.len() != 2 || s[0] != s[1] {
            return Err(Error::Dimension(format!(
                "double_center expects a square matrix, got shape {s:?}"
            )));
        }
        let n = s[0];
        let center = move |v: &[f64]| -> Vec<f64> {
            let mut row_means = vec![0.0; n];
            let mut col_means = vec![0.0; n];
            let mut grand = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let x = v[i * n + j];
                    row_means[i] += x;
                    col_means[j] += x;
                    grand += x;
                }
            }
            for m in row_means.iter_mut().chain(col_means.iter_mut()) {
                *m /= n as f64;
            }
            grand /= (n * n) as f64;
            let mut out = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    out[i * n + j] = v[i * n + j] - row_means[i] - col_means[j] + grand;
                }
            }
            out
        };
        let out = Tensor::from_parts(vec![n, n], center(raw.values()));
        let (rc, oc) = (raw.clone(), out.clone());
        self.record(
            out.id(),
            Box::new(move || {
                let Some(g) = oc.grad_for_backward() else {
                    return;
                };
                let centered_grad = center(&g);
                let mut gr = rc.grad_mut();
                for (gi, di) in gr.iter_mut().zip(&centered_grad) {
                    *gi += di;
                }
            }),
        );
        Ok(out)
    }

    /// Inner product of two same-shape tensors, as a scalar.
    pub fn dot_all(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        require_same_shape("dot_all", a, b)?;
        let prod = self.mul(a, b)?;
        self.sum_all(&prod)
    }
}
