//! Multi-channel 2-D convolution lowered to GEMM through an im2col buffer.
//!
//! The operator is a true convolution (the kernel is flipped relative to
//! cross-correlation):
//!
//! ```text
//! out[f, i, j] = bias[f] + sum_{a,u,v} K[f, a, u, v] * x[a, i + (k-1-u) - p, j + (k-1-v) - p]
//! ```
//!
//! where `p` is the zero padding. With `same` padding (`p = (k-1)/2`) an impulse
//! at position `q` produces an unflipped copy of the kernel centred on `q`.

use super::real::Real;
use super::tensor::{Shape4, Tensor4};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Padding {
    /// Zero padding that preserves spatial dims; requires odd kernels.
    Same,
    /// No padding; output shrinks by `kernel - 1` per axis.
    Valid,
}

/// Geometry of one convolution call, validated once.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeometry {
    pub fn new(input: Shape4, kernel: Shape4, padding: Padding) -> Result<Self> {
        if kernel.c() != input.c() {
            return Err(Error::shape(format!(
                "kernel {kernel} expects {} input channels but input {input} has {}",
                kernel.c(),
                input.c()
            )));
        }
        let (kh, kw) = (kernel.h(), kernel.w());
        if kh == 0 || kw == 0 {
            return Err(Error::shape(format!("kernel {kernel} has an empty window")));
        }
        let (pad_h, pad_w) = match padding {
            Padding::Same => {
                if kh % 2 == 0 || kw % 2 == 0 {
                    return Err(Error::config(format!(
                        "same padding needs odd kernel dims, got {kh}x{kw}"
                    )));
                }
                ((kh - 1) / 2, (kw - 1) / 2)
            }
            Padding::Valid => {
                if kh > input.h() || kw > input.w() {
                    return Err(Error::shape(format!(
                        "kernel {kernel} larger than input {input} under valid padding"
                    )));
                }
                (0, 0)
            }
        };
        Ok(ConvGeometry {
            n: input.n(),
            cin: input.c(),
            h: input.h(),
            w: input.w(),
            cout: kernel.n(),
            kh,
            kw,
            pad_h,
            pad_w,
            oh: input.h() + 2 * pad_h + 1 - kh,
            ow: input.w() + 2 * pad_w + 1 - kw,
        })
    }

    pub fn out_shape(&self) -> Shape4 {
        Shape4::new(self.n, self.cout, self.oh, self.ow)
    }

    fn col_rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Offset from an output index to the input index read through kernel tap `u`.
    #[inline]
    fn offset(k: usize, u: usize, pad: usize) -> isize {
        (k - 1 - u) as isize - pad as isize
    }

    /// Output indices `lo..hi` whose source index `o + off` lies inside `0..len`.
    #[inline]
    fn span(off: isize, len: usize, out_len: usize) -> (usize, usize) {
        let lo = (-off).max(0) as usize;
        let hi = (len as isize - off).clamp(0, out_len as isize) as usize;
        (lo.min(hi), hi)
    }

    /// Fills `cols` (rows = (a, u, v), cols = (i, j)) for one input sample.
    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let ncol = self.col_cols();
        for a in 0..self.cin {
            let plane = &x[a * self.h * self.w..(a + 1) * self.h * self.w];
            for u in 0..self.kh {
                let oi = Self::offset(self.kh, u, self.pad_h);
                let (ilo, ihi) = Self::span(oi, self.h, self.oh);
                for v in 0..self.kw {
                    let oj = Self::offset(self.kw, v, self.pad_w);
                    let (jlo, jhi) = Self::span(oj, self.w, self.ow);
                    let row = (a * self.kh + u) * self.kw + v;
                    let dst = &mut cols[row * ncol..(row + 1) * ncol];
                    for i in 0..self.oh {
                        let out_row = &mut dst[i * self.ow..(i + 1) * self.ow];
                        if i < ilo || i >= ihi {
                            out_row.fill(T::zero());
                            continue;
                        }
                        let si = (i as isize + oi) as usize;
                        let src = &plane[si * self.w..(si + 1) * self.w];
                        out_row[..jlo].fill(T::zero());
                        let s0 = (jlo as isize + oj) as usize;
                        out_row[jlo..jhi].copy_from_slice(&src[s0..s0 + (jhi - jlo)]);
                        out_row[jhi..].fill(T::zero());
                    }
                }
            }
        }
    }

    /// Scatter-adds `cols` back into an input-shaped gradient for one sample.
    fn col2im<T: Real>(&self, cols: &[T], dx: &mut [T]) {
        let ncol = self.col_cols();
        for a in 0..self.cin {
            let plane = &mut dx[a * self.h * self.w..(a + 1) * self.h * self.w];
            for u in 0..self.kh {
                let oi = Self::offset(self.kh, u, self.pad_h);
                let (ilo, ihi) = Self::span(oi, self.h, self.oh);
                for v in 0..self.kw {
                    let oj = Self::offset(self.kw, v, self.pad_w);
                    let (jlo, jhi) = Self::span(oj, self.w, self.ow);
                    let row = (a * self.kh + u) * self.kw + v;
                    let src = &cols[row * ncol..(row + 1) * ncol];
                    for i in ilo..ihi {
                        let si = (i as isize + oi) as usize;
                        let s0 = (jlo as isize + oj) as usize;
                        let dst = &mut plane[si * self.w + s0..si * self.w + s0 + (jhi - jlo)];
                        for (d, &g) in dst.iter_mut().zip(&src[i * self.ow + jlo..i * self.ow + jhi]) {
                            *d += g;
                        }
                    }
                }
            }
        }
    }

    /// `out += K * x` for one sample by shifted row updates.
    fn direct_forward<T: Real>(&self, kernel: &[T], x: &[T], out: &mut [T]) {
        let (hw, ohw) = (self.h * self.w, self.oh * self.ow);
        for f in 0..self.cout {
            let o = &mut out[f * ohw..(f + 1) * ohw];
            for a in 0..self.cin {
                let plane = &x[a * hw..(a + 1) * hw];
                for u in 0..self.kh {
                    let oi = Self::offset(self.kh, u, self.pad_h);
                    let (ilo, ihi) = Self::span(oi, self.h, self.oh);
                    for v in 0..self.kw {
                        let oj = Self::offset(self.kw, v, self.pad_w);
                        let (jlo, jhi) = Self::span(oj, self.w, self.ow);
                        let kv = kernel[((f * self.cin + a) * self.kh + u) * self.kw + v];
                        let s0 = (jlo as isize + oj) as usize;
                        for i in ilo..ihi {
                            let si = (i as isize + oi) as usize;
                            let src = &plane[si * self.w + s0..si * self.w + s0 + (jhi - jlo)];
                            let dst = &mut o[i * self.ow + jlo..i * self.ow + jhi];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d += kv * s;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Geometry of the adjoint convolution that maps `dout` back to input
    /// space: channels swapped, padding `k - 1 - p`.
    fn transposed(&self) -> ConvGeometry {
        ConvGeometry {
            n: self.n,
            cin: self.cout,
            h: self.oh,
            w: self.ow,
            cout: self.cin,
            kh: self.kh,
            kw: self.kw,
            pad_h: self.kh - 1 - self.pad_h,
            pad_w: self.kw - 1 - self.pad_w,
            oh: self.h,
            ow: self.w,
        }
    }

    /// Kernel of [`ConvGeometry::transposed`]: channels swapped, taps reversed.
    fn transposed_kernel<T: Real>(&self, kernel: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); kernel.len()];
        for f in 0..self.cout {
            for a in 0..self.cin {
                for u in 0..self.kh {
                    for v in 0..self.kw {
                        out[((a * self.cout + f) * self.kh + (self.kh - 1 - u)) * self.kw + (self.kw - 1 - v)] =
                            kernel[((f * self.cin + a) * self.kh + u) * self.kw + v];
                    }
                }
            }
        }
        out
    }

    /// Nonzero entries `(a, p, q, value)` of one input sample, or `None`
    /// when the sample is too dense for the scatter paths to pay off.
    fn sparse_entries<T: Real>(&self, x: &[T], limit: usize) -> Option<Vec<(usize, usize, usize, T)>> {
        let mut out = Vec::new();
        for (idx, &v) in x.iter().enumerate() {
            if v != T::zero() {
                if out.len() == limit {
                    return None;
                }
                let (a, r) = (idx / (self.h * self.w), idx % (self.h * self.w));
                out.push((a, r / self.w, r % self.w, v));
            }
        }
        Some(out)
    }

    /// Output position fed by input `(p, q)` through tap `(u, v)`.
    #[inline]
    fn scatter_target(&self, p: usize, q: usize, u: usize, v: usize) -> Option<usize> {
        let i = p as isize - Self::offset(self.kh, u, self.pad_h);
        let j = q as isize - Self::offset(self.kw, v, self.pad_w);
        (i >= 0 && j >= 0 && (i as usize) < self.oh && (j as usize) < self.ow)
            .then(|| i as usize * self.ow + j as usize)
    }

    /// `out += K * x` for a sparse sample.
    fn sparse_forward<T: Real>(&self, kernel: &[T], entries: &[(usize, usize, usize, T)], out: &mut [T]) {
        let ohw = self.oh * self.ow;
        for &(a, p, q, val) in entries {
            for f in 0..self.cout {
                for u in 0..self.kh {
                    for v in 0..self.kw {
                        if let Some(o) = self.scatter_target(p, q, u, v) {
                            let kv = kernel[((f * self.cin + a) * self.kh + u) * self.kw + v];
                            out[f * ohw + o] += kv * val;
                        }
                    }
                }
            }
        }
    }

    /// `dK += dout (x) x` for a sparse sample.
    fn sparse_kernel_grad<T: Real>(&self, dout: &[T], entries: &[(usize, usize, usize, T)], dk: &mut [T]) {
        let ohw = self.oh * self.ow;
        for &(a, p, q, val) in entries {
            for f in 0..self.cout {
                for u in 0..self.kh {
                    for v in 0..self.kw {
                        if let Some(o) = self.scatter_target(p, q, u, v) {
                            dk[((f * self.cin + a) * self.kh + u) * self.kw + v] += dout[f * ohw + o] * val;
                        }
                    }
                }
            }
        }
    }
}

/// Inputs with at most one nonzero in this many entries take the scatter paths.
const SPARSE_DENSITY_DIVISOR: usize = 8;
/// Output-channel counts up to this use shifted row updates instead of GEMM.
const DIRECT_MAX_OUT_CHANNELS: usize = 4;

/// How a convolution is evaluated. All strategies compute the same sum.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(not(test), allow(dead_code))] // forced strategies are only chosen by tests
pub(crate) enum Strategy {
    /// Pick per sample from the shapes and the input sparsity.
    Auto,
    Gemm,
    Direct,
    Sparse,
}

fn check_bias<T>(bias: Option<&[T]>, cout: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.len() != cout {
            return Err(Error::shape(format!(
                "bias has {} entries for {cout} output channels",
                b.len()
            )));
        }
    }
    Ok(())
}

/// Forward convolution. `bias` holds one value per output channel.
pub fn conv2d<T: Real>(
    input: &Tensor4<T>,
    kernel: &Tensor4<T>,
    bias: Option<&[T]>,
    padding: Padding,
) -> Result<Tensor4<T>> {
    conv2d_with(input, kernel, bias, padding, Strategy::Auto)
}

fn sparse_limit(strategy: Strategy, len: usize) -> Option<usize> {
    match strategy {
        Strategy::Auto => Some(len / SPARSE_DENSITY_DIVISOR),
        Strategy::Sparse => Some(usize::MAX),
        Strategy::Gemm | Strategy::Direct => None,
    }
}

pub(crate) fn conv2d_with<T: Real>(
    input: &Tensor4<T>,
    kernel: &Tensor4<T>,
    bias: Option<&[T]>,
    padding: Padding,
    strategy: Strategy,
) -> Result<Tensor4<T>> {
    let g = ConvGeometry::new(input.shape(), kernel.shape(), padding)?;
    check_bias(bias, g.cout)?;
    let mut out = Tensor4::zeros(g.out_shape());
    let (rows, ncol) = (g.col_rows(), g.col_cols());
    let mut cols = Vec::new();
    let in_per = input.shape().sample();
    let out_per = g.cout * ncol;
    for s in 0..g.n {
        let x = &input.data()[s * in_per..(s + 1) * in_per];
        let o = &mut out.data_mut()[s * out_per..(s + 1) * out_per];
        if let Some(b) = bias {
            for (f, chunk) in o.chunks_mut(ncol).enumerate() {
                chunk.fill(b[f]);
            }
        }
        if let Some(entries) = sparse_limit(strategy, x.len()).and_then(|l| g.sparse_entries(x, l)) {
            g.sparse_forward(kernel.data(), &entries, o);
            continue;
        }
        let direct = match strategy {
            Strategy::Direct => true,
            Strategy::Auto => g.cout <= DIRECT_MAX_OUT_CHANNELS,
            _ => false,
        };
        if direct {
            g.direct_forward(kernel.data(), x, o);
            continue;
        }
        cols.resize(rows * ncol, T::zero());
        g.im2col(x, &mut cols);
        T::gemm(
            g.cout,
            rows,
            ncol,
            T::one(),
            kernel.data(),
            rows as isize,
            1,
            &cols,
            ncol as isize,
            1,
            T::one(),
            o,
            ncol as isize,
            1,
        );
    }
    Ok(out)
}

/// Adjoints of [`conv2d`].
pub struct ConvGrads<T> {
    pub input: Option<Tensor4<T>>,
    pub kernel: Option<Tensor4<T>>,
    pub bias: Option<Vec<T>>,
}

/// Reverse pass of [`conv2d`] given the upstream gradient `dout`.
pub fn conv2d_backward<T: Real>(
    input: &Tensor4<T>,
    kernel: &Tensor4<T>,
    dout: &Tensor4<T>,
    padding: Padding,
    want_input: bool,
    want_kernel: bool,
    want_bias: bool,
) -> Result<ConvGrads<T>> {
    conv2d_backward_with(
        input,
        kernel,
        dout,
        padding,
        [want_input, want_kernel, want_bias],
        Strategy::Auto,
    )
}

pub(crate) fn conv2d_backward_with<T: Real>(
    input: &Tensor4<T>,
    kernel: &Tensor4<T>,
    dout: &Tensor4<T>,
    padding: Padding,
    [want_input, want_kernel, want_bias]: [bool; 3],
    strategy: Strategy,
) -> Result<ConvGrads<T>> {
    let g = ConvGeometry::new(input.shape(), kernel.shape(), padding)?;
    if dout.shape() != g.out_shape() {
        return Err(Error::shape(format!(
            "upstream gradient {} does not match convolution output {}",
            dout.shape(),
            g.out_shape()
        )));
    }
    let (rows, ncol) = (g.col_rows(), g.col_cols());
    let in_per = input.shape().sample();
    let out_per = g.cout * ncol;

    let mut dx = want_input.then(|| Tensor4::zeros(input.shape()));
    let mut dk = want_kernel.then(|| Tensor4::zeros(kernel.shape()));
    let mut db = want_bias.then(|| vec![T::zero(); g.cout]);
    let mut cols = Vec::new();
    let mut tcols = Vec::new();
    let direct = match strategy {
        Strategy::Direct => true,
        Strategy::Auto => g.cout <= DIRECT_MAX_OUT_CHANNELS,
        _ => false,
    };
    let adjoint = (direct && want_input).then(|| (g.transposed(), g.transposed_kernel(kernel.data())));

    for s in 0..g.n {
        let d = &dout.data()[s * out_per..(s + 1) * out_per];
        if let Some(db) = db.as_mut() {
            for (f, chunk) in d.chunks(ncol).enumerate() {
                db[f] += chunk.iter().copied().sum::<T>();
            }
        }
        if let Some(dk) = dk.as_mut() {
            let x = &input.data()[s * in_per..(s + 1) * in_per];
            if let Some(entries) = sparse_limit(strategy, x.len()).and_then(|l| g.sparse_entries(x, l)) {
                g.sparse_kernel_grad(d, &entries, dk.data_mut());
            } else {
                cols.resize(rows * ncol, T::zero());
                g.im2col(x, &mut cols);
                // dK (cout x rows) += dOut (cout x ncol) * cols^T (ncol x rows)
                T::gemm(
                    g.cout,
                    ncol,
                    rows,
                    T::one(),
                    d,
                    ncol as isize,
                    1,
                    &cols,
                    1,
                    ncol as isize,
                    T::one(),
                    dk.data_mut(),
                    rows as isize,
                    1,
                );
            }
        }
        if let Some(dx) = dx.as_mut() {
            let dxs = &mut dx.data_mut()[s * in_per..(s + 1) * in_per];
            if let Some((gt, kt)) = &adjoint {
                // dx = conv(dout, flipped kernel) with full-minus-p padding.
                let trows = gt.col_rows();
                tcols.resize(trows * in_per / g.cin, T::zero());
                gt.im2col(d, &mut tcols);
                T::gemm(
                    g.cin,
                    trows,
                    g.h * g.w,
                    T::one(),
                    kt,
                    trows as isize,
                    1,
                    &tcols,
                    (g.h * g.w) as isize,
                    1,
                    T::zero(),
                    dxs,
                    (g.h * g.w) as isize,
                    1,
                );
                continue;
            }
            cols.resize(rows * ncol, T::zero());
            // dcols (rows x ncol) = K^T (rows x cout) * dOut (cout x ncol)
            T::gemm(
                rows,
                g.cout,
                ncol,
                T::one(),
                kernel.data(),
                1,
                rows as isize,
                d,
                ncol as isize,
                1,
                T::zero(),
                &mut cols,
                ncol as isize,
                1,
            );
            g.col2im(&cols, dxs);
        }
    }
    Ok(ConvGrads {
        input: dx,
        kernel: dk,
        bias: db,
    })
}

/// Forward-only strided max pooling over each channel.
pub fn maxpool2d<T: Real>(
    input: &Tensor4<T>,
    window: (usize, usize),
    stride: (usize, usize),
) -> Result<Tensor4<T>> {
    let s = input.shape();
    let (wh, ww) = window;
    let (sh, sw) = stride;
    if wh == 0 || ww == 0 || sh == 0 || sw == 0 {
        return Err(Error::config("pooling window and stride must be positive"));
    }
    if wh > s.h() || ww > s.w() {
        return Err(Error::shape(format!(
            "pooling window {wh}x{ww} exceeds input {s}"
        )));
    }
    let oh = (s.h() - wh) / sh + 1;
    let ow = (s.w() - ww) / sw + 1;
    Ok(Tensor4::from_fn(
        Shape4::new(s.n(), s.c(), oh, ow),
        |[n, c, i, j]| {
            let mut best = T::neg_infinity();
            for u in 0..wh {
                for v in 0..ww {
                    best = best.max(input.get([n, c, i * sh + u, j * sw + v]));
                }
            }
            best
        },
    ))
}
