//! Strided 2-D convolution and transposed convolution via im2col + GEMM.
//!
//! Both directions share one im2col/col2im pair: transposed-conv forward is
//! the scatter adjoint of convolution's gather, so `col2im(cols, ..)` and
//! `im2col(x, ..)` satisfy `<col2im(C), X> == <C, im2col(X)>` exactly. That
//! identity is property-tested below and is what makes the hand-written
//! backward passes line up with finite differences.

use crate::elem::Elem;
use ndarray::{Array1, Array2, Array4, ArrayView4};

/// Asymmetric zero padding. "Same" padding for stride-2/kernel-5 stages puts
/// the extra pixel at bottom/right so spatial dims halve (or double) exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pad {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

/// Per-axis padding that makes `out = ceil(in / stride)` for a conv, and the
/// matching transposed conv produce `out = in * stride`. Extra goes after.
fn same_pad_axis(size: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = size.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(size);
    (total / 2, total - total / 2)
}

/// "Same" padding for an H x W image.
pub fn same_pad(h: usize, w: usize, kernel: usize, stride: usize) -> Pad {
    let (top, bottom) = same_pad_axis(h, kernel, stride);
    let (left, right) = same_pad_axis(w, kernel, stride);
    Pad { top, bottom, left, right }
}

/// Gather image patches into a `[C*K*K, B*OH*OW]` matrix.
/// Position (oy, ox) reads `x[b, c, oy*s + ky - pad.top, ox*s + kx - pad.left]`.
pub fn im2col<F: Elem>(
    x: ArrayView4<F>,
    kernel: usize,
    stride: usize,
    pad: Pad,
    out_h: usize,
    out_w: usize,
) -> Array2<F> {
    let (b_n, c_n, h, w) = x.dim();
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let cols_w = b_n * out_h * out_w;
    let mut cols = Array2::<F>::zeros((c_n * kernel * kernel, cols_w));
    let cs = cols.as_slice_mut().expect("standard layout");

    for c in 0..c_n {
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (c * kernel + ky) * kernel + kx;
                let row_base = row * cols_w;
                for b in 0..b_n {
                    let x_base = (b * c_n + c) * h * w;
                    for oy in 0..out_h {
                        let iy = (oy * stride + ky) as isize - pad.top as isize;
                        let col_base = row_base + (b * out_h + oy) * out_w;
                        if iy < 0 || iy >= h as isize {
                            continue; // zeros already in place
                        }
                        let x_row = x_base + iy as usize * w;
                        for ox in 0..out_w {
                            let ix = (ox * stride + kx) as isize - pad.left as isize;
                            if ix >= 0 && ix < w as isize {
                                cs[col_base + ox] = xs[x_row + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add adjoint of [`im2col`]: accumulate a `[C*K*K, B*OH*OW]` matrix
/// back into an image of shape `[B, C, H, W]`.
pub fn col2im<F: Elem>(
    cols: &Array2<F>,
    b_n: usize,
    c_n: usize,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    pad: Pad,
    out_h: usize,
    out_w: usize,
) -> Array4<F> {
    let cols_w = b_n * out_h * out_w;
    debug_assert_eq!(cols.dim(), (c_n * kernel * kernel, cols_w));
    let cs = cols.as_slice().expect("standard layout");
    let mut img = Array4::<F>::zeros((b_n, c_n, h, w));
    let im = img.as_slice_mut().expect("standard layout");

    for c in 0..c_n {
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (c * kernel + ky) * kernel + kx;
                let row_base = row * cols_w;
                for b in 0..b_n {
                    let x_base = (b * c_n + c) * h * w;
                    for oy in 0..out_h {
                        let iy = (oy * stride + ky) as isize - pad.top as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let col_base = row_base + (b * out_h + oy) * out_w;
                        let x_row = x_base + iy as usize * w;
                        for ox in 0..out_w {
                            let ix = (ox * stride + kx) as isize - pad.left as isize;
                            if ix >= 0 && ix < w as isize {
                                let t = &mut im[x_row + ix as usize];
                                *t = *t + cs[col_base + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    img
}

/// `[OC, B*OH*OW]` GEMM output laid back out as `[B, OC, OH, OW]`, adding bias.
fn assemble_output<F: Elem>(
    y2: &Array2<F>,
    bias: &Array1<F>,
    b_n: usize,
    oc: usize,
    oh: usize,
    ow: usize,
) -> Array4<F> {
    let mut y = Array4::<F>::zeros((b_n, oc, oh, ow));
    let src = y2.as_slice().expect("standard layout");
    let dst = y.as_slice_mut().expect("standard layout");
    let plane = oh * ow;
    for o in 0..oc {
        let bval = bias[o];
        for b in 0..b_n {
            let s = (o * b_n + b) * plane;
            let d = (b * oc + o) * plane;
            for i in 0..plane {
                dst[d + i] = src[s + i] + bval;
            }
        }
    }
    y
}

/// `[B, OC, OH, OW]` gradient re-laid as `[OC, B*OH*OW]` for GEMM.
fn flatten_grad<F: Elem>(dy: ArrayView4<F>) -> Array2<F> {
    let (b_n, oc, oh, ow) = dy.dim();
    let dy = dy.as_standard_layout();
    let src = dy.as_slice().expect("standard layout");
    let mut g = Array2::<F>::zeros((oc, b_n * oh * ow));
    let dst = g.as_slice_mut().expect("standard layout");
    let plane = oh * ow;
    for b in 0..b_n {
        for o in 0..oc {
            let s = (b * oc + o) * plane;
            let d = (o * b_n + b) * plane;
            dst[d..d + plane].copy_from_slice(&src[s..s + plane]);
        }
    }
    g
}

/// Stride-2 "same" convolution layer. Weight layout `[OC, IC, K, K]`.
#[derive(Debug, Clone)]
pub struct Conv2d<F: Elem> {
    pub w: Array4<F>,
    pub b: Array1<F>,
    pub stride: usize,
}

/// Cached forward inputs needed by backward.
pub struct ConvCache<F: Elem> {
    x: Array4<F>,
    pad: Pad,
    out_hw: (usize, usize),
}

impl<F: Elem> Conv2d<F> {
    pub fn new(oc: usize, ic: usize, kernel: usize, stride: usize) -> Self {
        Conv2d { w: Array4::zeros((oc, ic, kernel, kernel)), b: Array1::zeros(oc), stride }
    }

    pub fn kernel(&self) -> usize {
        self.w.dim().3
    }

    pub fn out_channels(&self) -> usize {
        self.w.dim().0
    }

    pub fn in_channels(&self) -> usize {
        self.w.dim().1
    }

    pub fn forward(&self, x: &Array4<F>) -> Array4<F> {
        let (b_n, c_n, h, w) = x.dim();
        assert_eq!(c_n, self.in_channels(), "conv input channels");
        let k = self.kernel();
        let pad = same_pad(h, w, k, self.stride);
        let (oh, ow) = (h.div_ceil(self.stride), w.div_ceil(self.stride));
        let cols = im2col(x.view(), k, self.stride, pad, oh, ow);
        let oc = self.out_channels();
        let wmat = self.w.view().into_shape_with_order((oc, c_n * k * k)).expect("contiguous");
        let y2 = wmat.dot(&cols);
        assemble_output(&y2, &self.b, b_n, oc, oh, ow)
    }

    pub fn forward_cached(&self, x: &Array4<F>) -> (Array4<F>, ConvCache<F>) {
        let (_, _, h, w) = x.dim();
        let k = self.kernel();
        let pad = same_pad(h, w, k, self.stride);
        let out_hw = (h.div_ceil(self.stride), w.div_ceil(self.stride));
        let y = self.forward(x);
        (y, ConvCache { x: x.clone(), pad, out_hw })
    }

    /// Returns (dx, dw, db).
    pub fn backward(&self, cache: &ConvCache<F>, dy: &Array4<F>) -> (Array4<F>, Array4<F>, Array1<F>) {
        let (b_n, c_n, h, w) = cache.x.dim();
        let k = self.kernel();
        let oc = self.out_channels();
        let (oh, ow) = cache.out_hw;
        let dy2 = flatten_grad(dy.view());

        let mut db = Array1::<F>::zeros(oc);
        for (o, row) in dy2.outer_iter().enumerate() {
            db[o] = row.sum();
        }

        let cols = im2col(cache.x.view(), k, self.stride, cache.pad, oh, ow);
        let dwmat = crate::nn::c_order(dy2.dot(&cols.t()));
        let dw = dwmat.into_shape_with_order((oc, c_n, k, k)).expect("contiguous");

        let wmat = self.w.view().into_shape_with_order((oc, c_n * k * k)).expect("contiguous");
        let dcols = wmat.t().dot(&dy2);
        let dx = col2im(&dcols, b_n, c_n, h, w, k, self.stride, cache.pad, oh, ow);
        (dx, dw, db)
    }
}

/// Stride-2 transposed convolution ("deconv"). Weight layout `[IC, OC, K, K]`.
/// Output spatial size is `in * stride` with the same-pad convention above.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<F: Elem> {
    pub w: Array4<F>,
    pub b: Array1<F>,
    pub stride: usize,
}

pub struct DeconvCache<F: Elem> {
    x: Array4<F>,
    pad: Pad,
    out_hw: (usize, usize),
}

impl<F: Elem> ConvTranspose2d<F> {
    pub fn new(ic: usize, oc: usize, kernel: usize, stride: usize) -> Self {
        ConvTranspose2d { w: Array4::zeros((ic, oc, kernel, kernel)), b: Array1::zeros(oc), stride }
    }

    pub fn kernel(&self) -> usize {
        self.w.dim().3
    }

    pub fn in_channels(&self) -> usize {
        self.w.dim().0
    }

    pub fn out_channels(&self) -> usize {
        self.w.dim().1
    }

    fn geometry(&self, h: usize, w: usize) -> (Pad, usize, usize) {
        let k = self.kernel();
        let (oh, ow) = (h * self.stride, w * self.stride);
        let pad = same_pad(oh, ow, k, self.stride);
        (pad, oh, ow)
    }

    pub fn forward(&self, x: &Array4<F>) -> Array4<F> {
        let (b_n, c_n, h, w) = x.dim();
        assert_eq!(c_n, self.in_channels(), "deconv input channels");
        let k = self.kernel();
        let oc = self.out_channels();
        let (pad, oh, ow) = self.geometry(h, w);

        let x2 = flatten_grad(x.view()); // [IC, B*H*W]
        let wmat = self.w.view().into_shape_with_order((c_n, oc * k * k)).expect("contiguous");
        let cols = wmat.t().dot(&x2); // [OC*K*K, B*H*W]
        let mut y = col2im(&cols, b_n, oc, oh, ow, k, self.stride, pad, h, w);
        for o in 0..oc {
            let bval = self.b[o];
            y.index_axis_mut(ndarray::Axis(1), o).mapv_inplace(|v| v + bval);
        }
        y
    }

    pub fn forward_cached(&self, x: &Array4<F>) -> (Array4<F>, DeconvCache<F>) {
        let (_, _, h, w) = x.dim();
        let (pad, oh, ow) = self.geometry(h, w);
        let y = self.forward(x);
        (y, DeconvCache { x: x.clone(), pad, out_hw: (oh, ow) })
    }

    /// Returns (dx, dw, db).
    pub fn backward(
        &self,
        cache: &DeconvCache<F>,
        dy: &Array4<F>,
    ) -> (Array4<F>, Array4<F>, Array1<F>) {
        let (b_n, ic, h, w) = cache.x.dim();
        let k = self.kernel();
        let oc = self.out_channels();
        let (oh, ow) = cache.out_hw;

        let mut db = Array1::<F>::zeros(oc);
        for o in 0..oc {
            db[o] = dy.index_axis(ndarray::Axis(1), o).sum();
        }

        // Gather dy patches at the deconv *input* grid: the adjoint of the
        // forward scatter.
        let dcols = im2col(dy.view(), k, self.stride, cache.pad, h, w); // [OC*K*K, B*H*W]
        let wmat = self.w.view().into_shape_with_order((ic, oc * k * k)).expect("contiguous");
        let dx2 = wmat.dot(&dcols); // [IC, B*H*W]

        let mut dx = Array4::<F>::zeros((b_n, ic, h, w));
        {
            let src = dx2.as_slice().expect("standard layout");
            let dst = dx.as_slice_mut().expect("standard layout");
            let plane = h * w;
            for c in 0..ic {
                for b in 0..b_n {
                    let s = (c * b_n + b) * plane;
                    let d = (b * ic + c) * plane;
                    dst[d..d + plane].copy_from_slice(&src[s..s + plane]);
                }
            }
        }

        let x2 = flatten_grad(cache.x.view());
        let dwmat = crate::nn::c_order(x2.dot(&dcols.t())); // [IC, OC*K*K]
        let dw = dwmat.into_shape_with_order((ic, oc, k, k)).expect("contiguous");
        let _ = (oh, ow);
        (dx, dw, db)
    }
}
