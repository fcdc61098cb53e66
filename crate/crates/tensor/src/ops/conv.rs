//! 2-D convolution and its transpose on NHWC tensors, via im2col + GEMM.
//!
//! Padding is always `kernel / 2` on every side, so a stride-1 convolution
//! with an odd kernel preserves the spatial size and a stride-2 one halves it
//! (rounding up).

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::ops::basic::column_sums;
use crate::scalar::{gemm, Scalar};
use crate::tensor::Tensor;

/// Shape bookkeeping for a convolution from `(in_h, in_w, in_c)` to
/// `(out_h, out_w, out_c)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn pad(&self) -> usize {
        self.kernel / 2
    }

    pub fn out_h(&self) -> usize {
        conv_out_len(self.in_h, self.kernel, self.stride)
    }

    pub fn out_w(&self) -> usize {
        conv_out_len(self.in_w, self.kernel, self.stride)
    }

    fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.in_c
    }

    fn positions(&self) -> usize {
        self.batch * self.out_h() * self.out_w()
    }
}

/// Output length of a padded convolution along one axis.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize) -> usize {
    let pad = kernel / 2;
    if len + 2 * pad < kernel {
        return 0;
    }
    (len + 2 * pad - kernel) / stride + 1
}

fn im2col<S: Scalar>(x: &[S], g: &ConvGeometry) -> Vec<S> {
    let (oh, ow, k, c, s, p) = (g.out_h(), g.out_w(), g.kernel, g.in_c, g.stride, g.pad() as isize);
    let patch = g.patch_len();
    let mut cols = vec![S::zero(); g.positions() * patch];
    let mut row = 0;
    for b in 0..g.batch {
        let img = &x[b * g.in_h * g.in_w * c..(b + 1) * g.in_h * g.in_w * c];
        for oy in 0..oh {
            for ox in 0..ow {
                let dst = &mut cols[row * patch..(row + 1) * patch];
                for ky in 0..k {
                    let iy = (oy * s) as isize + ky as isize - p;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * s) as isize + kx as isize - p;
                        if ix < 0 || ix >= g.in_w as isize {
                            continue;
                        }
                        let src = (iy as usize * g.in_w + ix as usize) * c;
                        let off = (ky * k + kx) * c;
                        dst[off..off + c].copy_from_slice(&img[src..src + c]);
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

fn col2im<S: Scalar>(cols: &[S], g: &ConvGeometry) -> Vec<S> {
    let (oh, ow, k, c, s, p) = (g.out_h(), g.out_w(), g.kernel, g.in_c, g.stride, g.pad() as isize);
    let patch = g.patch_len();
    let mut x = vec![S::zero(); g.batch * g.in_h * g.in_w * c];
    let mut row = 0;
    for b in 0..g.batch {
        let img = &mut x[b * g.in_h * g.in_w * c..(b + 1) * g.in_h * g.in_w * c];
        for oy in 0..oh {
            for ox in 0..ow {
                let src = &cols[row * patch..(row + 1) * patch];
                for ky in 0..k {
                    let iy = (oy * s) as isize + ky as isize - p;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * s) as isize + kx as isize - p;
                        if ix < 0 || ix >= g.in_w as isize {
                            continue;
                        }
                        let dst = (iy as usize * g.in_w + ix as usize) * c;
                        let off = (ky * k + kx) * c;
                        for (d, &v) in img[dst..dst + c].iter_mut().zip(&src[off..off + c]) {
                            *d += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
    x
}

fn add_bias_rows<S: Scalar>(out: &mut [S], bias: &[S]) {
    for row in out.chunks_exact_mut(bias.len()) {
        for (o, &b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

impl<S: Scalar> Graph<S> {
    /// Convolution of `x: [b, h, w, cin]` with `w: [k, k, cin, cout]` plus a
    /// per-channel bias `[cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Var, stride: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[0] != ws[1] || ws[2] != xs[3] || stride == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: xs,
                rhs: ws,
            });
        }
        if self.shape(bias) != [ws[3]] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d bias",
                lhs: ws,
                rhs: self.shape(bias).to_vec(),
            });
        }
        let geom = ConvGeometry {
            batch: xs[0],
            in_h: xs[1],
            in_w: xs[2],
            in_c: xs[3],
            out_c: ws[3],
            kernel: ws[0],
            stride,
        };
        if geom.out_h() == 0 || geom.out_w() == 0 {
            return Err(TensorError::Invalid {
                op: "conv2d",
                msg: format!("input {xs:?} too small for kernel {}", geom.kernel),
            });
        }
        let cols = im2col(self.value(x).data(), &geom);
        let (n, kk, cout) = (geom.positions(), geom.patch_len(), geom.out_c);
        let mut out = vec![S::zero(); n * cout];
        gemm(n, kk, cout, &cols, false, self.value(w).data(), false, &mut out, false);
        add_bias_rows(&mut out, self.value(bias).data());
        let value = Tensor::from_vec(&[geom.batch, geom.out_h(), geom.out_w(), cout], out).expect("conv out");
        let keep_cols = self.any_requires_grad(&[w]);
        let cols = if keep_cols { cols } else { Vec::new() };
        Ok(self.push_op(value, &[x, w, bias], move |args| {
            let g = args.grad.data();
            let gx = args.needs[0].then(|| {
                let mut dcols = vec![S::zero(); n * kk];
                gemm(n, cout, kk, g, false, args.inputs[1].data(), true, &mut dcols, false);
                Tensor::from_vec(args.inputs[0].shape(), col2im(&dcols, &geom)).expect("gx")
            });
            let gw = args.needs[1].then(|| {
                let mut gw = vec![S::zero(); kk * cout];
                gemm(kk, n, cout, &cols, true, g, false, &mut gw, false);
                Tensor::from_vec(args.inputs[1].shape(), gw).expect("gw")
            });
            let gb = args.needs[2].then(|| column_sums(g, cout));
            vec![gx, gw, gb]
        }))
    }

    /// Transposed convolution: the adjoint of a `conv2d` that maps
    /// `[b, out_h, out_w, cout]` to `x`'s shape. `w` has shape
    /// `[k, k, cout, cin]` where `cin` is `x`'s channel count.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Var,
        stride: usize,
        out_hw: (usize, usize),
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[0] != ws[1] || ws[3] != xs[3] || stride == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "conv_transpose2d",
                lhs: xs,
                rhs: ws,
            });
        }
        if self.shape(bias) != [ws[2]] {
            return Err(TensorError::ShapeMismatch {
                op: "conv_transpose2d bias",
                lhs: ws,
                rhs: self.shape(bias).to_vec(),
            });
        }
        // Geometry of the adjoint (forward) convolution.
        let geom = ConvGeometry {
            batch: xs[0],
            in_h: out_hw.0,
            in_w: out_hw.1,
            in_c: ws[2],
            out_c: ws[3],
            kernel: ws[0],
            stride,
        };
        if geom.out_h() != xs[1] || geom.out_w() != xs[2] {
            return Err(TensorError::Invalid {
                op: "conv_transpose2d",
                msg: format!(
                    "output {out_hw:?} with kernel {} stride {stride} does not map back to {}x{}",
                    geom.kernel, xs[1], xs[2]
                ),
            });
        }
        let (n, kk, cin) = (geom.positions(), geom.patch_len(), geom.out_c);
        let mut cols = vec![S::zero(); n * kk];
        gemm(
            n,
            cin,
            kk,
            self.value(x).data(),
            false,
            self.value(w).data(),
            true,
            &mut cols,
            false,
        );
        let mut out = col2im(&cols, &geom);
        add_bias_rows(&mut out, self.value(bias).data());
        let value = Tensor::from_vec(&[geom.batch, geom.in_h, geom.in_w, geom.in_c], out).expect("tconv out");
        Ok(self.push_op(value, &[x, w, bias], move |args| {
            let g = args.grad.data();
            let dcols = (args.needs[0] || args.needs[1]).then(|| im2col(g, &geom));
            let gx = args.needs[0].then(|| {
                let mut gx = vec![S::zero(); n * cin];
                let dcols = dcols.as_ref().expect("cols");
                gemm(n, kk, cin, dcols, false, args.inputs[1].data(), false, &mut gx, false);
                Tensor::from_vec(args.inputs[0].shape(), gx).expect("gx")
            });
            let gw = args.needs[1].then(|| {
                let mut gw = vec![S::zero(); kk * cin];
                let dcols = dcols.as_ref().expect("cols");
                gemm(kk, n, cin, dcols, true, args.inputs[0].data(), false, &mut gw, false);
                Tensor::from_vec(args.inputs[1].shape(), gw).expect("gw")
            });
            let gb = args.needs[2].then(|| column_sums(g, geom.in_c));
            vec![gx, gw, gb]
        }))
    }
}
