//! 2-D convolution and transposed convolution.
//!
//! The differentiable ops lower to im2col plus row-major multiply-accumulate
//! loops. [`reference`] holds plain cross-correlation loops that sum in the
//! same order, so both paths agree bit-for-bit.

use super::{Backward, Float, Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy)]
struct Geom {
    channels: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geom {
    fn rows(&self) -> usize {
        self.channels * self.k * self.k
    }
    fn cols(&self) -> usize {
        self.oh * self.ow
    }
}

/// Output side of a strided, padded convolution.
pub fn conv_out_size(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Output side of a transposed convolution.
pub fn conv_transpose_out_size(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || input == 0 {
        return None;
    }
    let full = (input - 1) * stride + k;
    if full <= 2 * pad {
        return None;
    }
    Some(full - 2 * pad)
}

/// Unfold one sample `[channels, h, w]` into `[channels*k*k, oh*ow]`.
fn im2col<T: Float>(x: &[T], g: &Geom, col: &mut [T]) {
    let cols = g.cols();
    for c in 0..g.channels {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for kh in 0..g.k {
            for kw in 0..g.k {
                let row = (c * g.k + kh) * g.k + kw;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + kh) as isize - g.pad as isize;
                    let out = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kw) as isize - g.pad as isize;
                        *o = if ix < 0 || ix >= g.w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Scatter-add the inverse of [`im2col`] into `x`.
fn col2im<T: Float>(col: &[T], g: &Geom, x: &mut [T]) {
    let cols = g.cols();
    for c in 0..g.channels {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for kh in 0..g.k {
            for kw in 0..g.k {
                let row = (c * g.k + kh) * g.k + kw;
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + kh) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kw) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

#[inline]
fn axpy<T: Float>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Dot product with eight fixed partial sums, combined in a fixed order.
#[inline]
fn dot<T: Float>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += xa[i] * xb[i];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

fn check_rank4<T: Float>(t: &Tensor<T>, what: &str) -> Result<[usize; 4]> {
    match t.shape() {
        [a, b, c, d] => Ok([*a, *b, *c, *d]),
        s => Err(TensorError::Shape(format!("{what} must be rank 4, got {s:?}"))),
    }
}

fn check_bias<T: Float>(b: &Tensor<T>, channels: usize) -> Result<()> {
    if b.shape() != [channels] {
        return Err(TensorError::Shape(format!(
            "bias shape {:?} does not match {channels} output channels",
            b.shape()
        )));
    }
    Ok(())
}

struct ConvPlan {
    n: usize,
    cin: usize,
    cout: usize,
    geom: Geom,
}

fn plan_conv2d<T: Float>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, stride: usize, pad: usize) -> Result<ConvPlan> {
    let [n, cin, h, wd] = check_rank4(x, "conv2d input")?;
    let [cout, wcin, kh, kw] = check_rank4(w, "conv2d weight")?;
    if wcin != cin {
        return Err(TensorError::Shape(format!(
            "conv2d weight expects {wcin} input channels, input has {cin}"
        )));
    }
    if kh != kw {
        return Err(TensorError::Shape(format!("conv2d kernel must be square, got {kh}x{kw}")));
    }
    check_bias(b, cout)?;
    if stride == 0 {
        return Err(TensorError::Shape("conv2d stride must be >= 1".into()));
    }
    let (Some(oh), Some(ow)) = (conv_out_size(h, kh, stride, pad), conv_out_size(wd, kw, stride, pad)) else {
        return Err(TensorError::Shape(format!(
            "conv2d output would be empty for {h}x{wd} input, kernel {kh}, stride {stride}, pad {pad}"
        )));
    };
    Ok(ConvPlan { n, cin, cout, geom: Geom { channels: cin, h, w: wd, k: kh, stride, pad, oh, ow } })
}

fn plan_conv_transpose2d<T: Float>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, stride: usize, pad: usize) -> Result<ConvPlan> {
    let [n, cin, h, wd] = check_rank4(x, "conv_transpose2d input")?;
    let [wcin, cout, kh, kw] = check_rank4(w, "conv_transpose2d weight")?;
    if wcin != cin {
        return Err(TensorError::Shape(format!(
            "conv_transpose2d weight expects {wcin} input channels, input has {cin}"
        )));
    }
    if kh != kw {
        return Err(TensorError::Shape(format!("conv_transpose2d kernel must be square, got {kh}x{kw}")));
    }
    check_bias(b, cout)?;
    let (Some(oh), Some(ow)) = (
        conv_transpose_out_size(h, kh, stride, pad),
        conv_transpose_out_size(wd, kw, stride, pad),
    ) else {
        return Err(TensorError::Shape(format!(
            "conv_transpose2d output would be empty for {h}x{wd} input, kernel {kh}, stride {stride}, pad {pad}"
        )));
    };
    // The "image" side of the unfold is the output; the column grid is the input.
    Ok(ConvPlan { n, cin, cout, geom: Geom { channels: cout, h: oh, w: ow, k: kh, stride, pad, oh: h, ow: wd } })
}

fn conv2d_forward<T: Float>(x: &[T], w: &[T], b: &[T], p: &ConvPlan) -> Vec<T> {
    let g = &p.geom;
    let (rows, cols) = (g.rows(), g.cols());
    let in_len = p.cin * g.h * g.w;
    let mut out = vec![T::zero(); p.n * p.cout * cols];
    let mut col = vec![T::zero(); rows * cols];
    for s in 0..p.n {
        im2col(&x[s * in_len..(s + 1) * in_len], g, &mut col);
        let o = &mut out[s * p.cout * cols..(s + 1) * p.cout * cols];
        for co in 0..p.cout {
            let orow = &mut o[co * cols..(co + 1) * cols];
            orow.fill(b[co]);
            let wrow = &w[co * rows..(co + 1) * rows];
            for r in 0..rows {
                axpy(wrow[r], &col[r * cols..(r + 1) * cols], orow);
            }
        }
    }
    out
}

fn conv_transpose2d_forward<T: Float>(x: &[T], w: &[T], b: &[T], p: &ConvPlan) -> Vec<T> {
    let g = &p.geom;
    let (rows, cols) = (g.rows(), g.cols());
    let in_len = p.cin * cols;
    let out_len = p.cout * g.h * g.w;
    let mut out = vec![T::zero(); p.n * out_len];
    let mut col = vec![T::zero(); rows * cols];
    for s in 0..p.n {
        let xs = &x[s * in_len..(s + 1) * in_len];
        col.fill(T::zero());
        for ci in 0..p.cin {
            let xrow = &xs[ci * cols..(ci + 1) * cols];
            let wrow = &w[ci * rows..(ci + 1) * rows];
            for r in 0..rows {
                axpy(wrow[r], xrow, &mut col[r * cols..(r + 1) * cols]);
            }
        }
        let o = &mut out[s * out_len..(s + 1) * out_len];
        for co in 0..p.cout {
            o[co * g.h * g.w..(co + 1) * g.h * g.w].fill(b[co]);
        }
        col2im(&col, g, o);
    }
    out
}

struct Conv2dBackward {
    plan: ConvPlan,
}

impl<T: Float> Backward<T> for Conv2dBackward {
    fn backward(&self, gout: &[T], parents: &[Tensor<T>], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let p = &self.plan;
        let g = &p.geom;
        let (rows, cols) = (g.rows(), g.cols());
        let in_len = p.cin * g.h * g.w;
        let x = parents[0].data();
        let w = parents[1].data();
        let mut dx = needs[0].then(|| vec![T::zero(); x.len()]);
        let mut dw = needs[1].then(|| vec![T::zero(); w.len()]);
        let mut db = needs[2].then(|| vec![T::zero(); p.cout]);
        let mut col = vec![T::zero(); rows * cols];
        let mut dcol = vec![T::zero(); rows * cols];
        for s in 0..p.n {
            let go = &gout[s * p.cout * cols..(s + 1) * p.cout * cols];
            if let Some(db) = db.as_mut() {
                for co in 0..p.cout {
                    db[co] += go[co * cols..(co + 1) * cols].iter().copied().sum::<T>();
                }
            }
            if let Some(dw) = dw.as_mut() {
                im2col(&x[s * in_len..(s + 1) * in_len], g, &mut col);
                for co in 0..p.cout {
                    let grow = &go[co * cols..(co + 1) * cols];
                    for r in 0..rows {
                        dw[co * rows + r] += dot(grow, &col[r * cols..(r + 1) * cols]);
                    }
                }
            }
            if let Some(dx) = dx.as_mut() {
                dcol.fill(T::zero());
                for co in 0..p.cout {
                    let grow = &go[co * cols..(co + 1) * cols];
                    let wrow = &w[co * rows..(co + 1) * rows];
                    for r in 0..rows {
                        axpy(wrow[r], grow, &mut dcol[r * cols..(r + 1) * cols]);
                    }
                }
                col2im(&dcol, g, &mut dx[s * in_len..(s + 1) * in_len]);
            }
        }
        vec![dx, dw, db]
    }
}

struct ConvTranspose2dBackward {
    plan: ConvPlan,
}

impl<T: Float> Backward<T> for ConvTranspose2dBackward {
    fn backward(&self, gout: &[T], parents: &[Tensor<T>], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let p = &self.plan;
        let g = &p.geom;
        let (rows, cols) = (g.rows(), g.cols());
        let in_len = p.cin * cols;
        let out_len = p.cout * g.h * g.w;
        let x = parents[0].data();
        let w = parents[1].data();
        let mut dx = needs[0].then(|| vec![T::zero(); x.len()]);
        let mut dw = needs[1].then(|| vec![T::zero(); w.len()]);
        let mut db = needs[2].then(|| vec![T::zero(); p.cout]);
        let mut gcol = vec![T::zero(); rows * cols];
        for s in 0..p.n {
            let go = &gout[s * out_len..(s + 1) * out_len];
            if let Some(db) = db.as_mut() {
                let plane = g.h * g.w;
                for co in 0..p.cout {
                    db[co] += go[co * plane..(co + 1) * plane].iter().copied().sum::<T>();
                }
            }
            if dx.is_none() && dw.is_none() {
                continue;
            }
            im2col(go, g, &mut gcol);
            let xs = &x[s * in_len..(s + 1) * in_len];
            for ci in 0..p.cin {
                let wrow = &w[ci * rows..(ci + 1) * rows];
                if let Some(dx) = dx.as_mut() {
                    let drow = &mut dx[s * in_len + ci * cols..s * in_len + (ci + 1) * cols];
                    for r in 0..rows {
                        axpy(wrow[r], &gcol[r * cols..(r + 1) * cols], drow);
                    }
                }
                if let Some(dw) = dw.as_mut() {
                    let xrow = &xs[ci * cols..(ci + 1) * cols];
                    for r in 0..rows {
                        dw[ci * rows + r] += dot(xrow, &gcol[r * cols..(r + 1) * cols]);
                    }
                }
            }
        }
        vec![dx, dw, db]
    }
}

impl<T: Float> Tensor<T> {
    /// Cross-correlation of an `N×Cin×H×W` input with a `Cout×Cin×K×K`
    /// kernel, zero padding, output side `(H + 2·pad − K)/stride + 1`.
    pub fn conv2d(&self, w: &Tensor<T>, b: &Tensor<T>, stride: usize, pad: usize) -> Result<Tensor<T>> {
        let plan = plan_conv2d(self, w, b, stride, pad)?;
        let out = conv2d_forward(&self.data(), &w.data(), &b.data(), &plan);
        let shape = vec![plan.n, plan.cout, plan.geom.oh, plan.geom.ow];
        Ok(Tensor::from_op(
            shape,
            out,
            vec![self.clone(), w.clone(), b.clone()],
            Box::new(Conv2dBackward { plan }),
        ))
    }

    /// Transposed convolution with a `Cin×Cout×K×K` kernel, output side
    /// `(H − 1)·stride − 2·pad + K`.
    pub fn conv_transpose2d(&self, w: &Tensor<T>, b: &Tensor<T>, stride: usize, pad: usize) -> Result<Tensor<T>> {
        let plan = plan_conv_transpose2d(self, w, b, stride, pad)?;
        let out = conv_transpose2d_forward(&self.data(), &w.data(), &b.data(), &plan);
        let shape = vec![plan.n, plan.cout, plan.geom.h, plan.geom.w];
        Ok(Tensor::from_op(
            shape,
            out,
            vec![self.clone(), w.clone(), b.clone()],
            Box::new(ConvTranspose2dBackward { plan }),
        ))
    }
}

/// Direct loop implementations, used to cross-check the fast path.
pub mod reference {
    use super::*;

    pub fn conv2d<T: Float>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, stride: usize, pad: usize) -> Result<Vec<T>> {
        let p = plan_conv2d(x, w, b, stride, pad)?;
        let g = p.geom;
        let (xd, wd, bd) = (x.data(), w.data(), b.data());
        let mut out = Vec::with_capacity(p.n * p.cout * g.oh * g.ow);
        for s in 0..p.n {
            for co in 0..p.cout {
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        let mut acc = bd[co];
                        for ci in 0..p.cin {
                            for kh in 0..g.k {
                                for kw in 0..g.k {
                                    let iy = (oy * g.stride + kh) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kw) as isize - g.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                        continue;
                                    }
                                    let xv = xd[((s * p.cin + ci) * g.h + iy as usize) * g.w + ix as usize];
                                    let wv = wd[((co * p.cin + ci) * g.k + kh) * g.k + kw];
                                    acc += wv * xv;
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn conv_transpose2d<T: Float>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, stride: usize, pad: usize) -> Result<Vec<T>> {
        let p = plan_conv_transpose2d(x, w, b, stride, pad)?;
        let g = p.geom;
        let (h, wd_in) = (g.oh, g.ow);
        let (xd, wd, bd) = (x.data(), w.data(), b.data());
        let mut out = vec![T::zero(); p.n * p.cout * g.h * g.w];
        for s in 0..p.n {
            for co in 0..p.cout {
                for v in &mut out[(s * p.cout + co) * g.h * g.w..(s * p.cout + co + 1) * g.h * g.w] {
                    *v = bd[co];
                }
                for kh in 0..g.k {
                    for kw in 0..g.k {
                        for iy in 0..h {
                            for ix in 0..wd_in {
                                let oy = (iy * g.stride + kh) as isize - g.pad as isize;
                                let ox = (ix * g.stride + kw) as isize - g.pad as isize;
                                if oy < 0 || ox < 0 || oy >= g.h as isize || ox >= g.w as isize {
                                    continue;
                                }
                                let mut acc = T::zero();
                                for ci in 0..p.cin {
                                    let xv = xd[((s * p.cin + ci) * h + iy) * wd_in + ix];
                                    let wv = wd[((ci * p.cout + co) * g.k + kh) * g.k + kw];
                                    acc += wv * xv;
                                }
                                out[((s * p.cout + co) * g.h + oy as usize) * g.w + ox as usize] += acc;
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}
