//! Elementwise arithmetic, reductions, reshapes, dense layers and activations.

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::scalar::{gemm, Scalar};
use crate::tensor::Tensor;

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        });
    }
    Ok(())
}

impl<S: Scalar> Graph<S> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.shape(a), self.shape(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push_op(value, &[a, b], |args| {
            vec![Some(args.grad.clone()), Some(args.grad.clone())]
        }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.shape(a), self.shape(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push_op(value, &[a, b], |args| {
            vec![Some(args.grad.clone()), Some(args.grad.map(|g| -g))]
        }))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.shape(a), self.shape(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push_op(value, &[a, b], |args| {
            let ga = args.needs[0].then(|| args.grad.zip_map(args.inputs[1], |g, y| g * y));
            let gb = args.needs[1].then(|| args.grad.zip_map(args.inputs[0], |g, x| g * x));
            vec![ga, gb]
        }))
    }

    pub fn scale(&mut self, a: Var, factor: S) -> Var {
        let value = self.value(a).map(|x| x * factor);
        self.push_op(value, &[a], move |args| vec![Some(args.grad.map(|g| g * factor))])
    }

    pub fn add_scalar(&mut self, a: Var, offset: S) -> Var {
        let value = self.value(a).map(|x| x + offset);
        self.push_op(value, &[a], |args| vec![Some(args.grad.clone())])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        self.push_op(value, &[a], |args| {
            let two = S::lit(2.0);
            vec![Some(args.grad.zip_map(args.inputs[0], |g, x| two * g * x))]
        })
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push_op(value, &[a], |args| {
            let g = args.grad.item();
            vec![Some(Tensor::full(args.inputs[0].shape(), g))]
        })
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let n = S::from_usize(self.value(a).numel()).expect("count");
        let value = Tensor::scalar(self.value(a).sum() / n);
        self.push_op(value, &[a], move |args| {
            let g = args.grad.item() / n;
            vec![Some(Tensor::full(args.inputs[0].shape(), g))]
        })
    }

    /// Sums each row (first axis) down to a vector of length `rows`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let rows = t.rows();
        let data: Vec<S> = (0..rows).map(|r| t.row(r).iter().copied().sum()).collect();
        let value = Tensor::from_vec(&[rows], data).expect("row sums");
        self.push_op(value, &[a], |args| {
            let x = args.inputs[0];
            let len = x.row_len();
            let mut out = Vec::with_capacity(x.numel());
            for &g in args.grad.data() {
                out.extend(std::iter::repeat_n(g, len));
            }
            vec![Some(Tensor::from_vec(x.shape(), out).expect("shape"))]
        })
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        Ok(self.push_op(value, &[a], |args| {
            vec![Some(
                args.grad.clone().reshape(args.inputs[0].shape()).expect("reshape back"),
            )]
        }))
    }

    /// Swaps axes 1 and 2 of a 4-axis tensor `[a, b, c, d] -> [a, c, b, d]`.
    pub fn swap_axes12(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 4 {
            return Err(TensorError::Invalid {
                op: "swap_axes12",
                msg: format!("expected 4 axes, got {shape:?}"),
            });
        }
        let value = swap12(self.value(a), &shape);
        Ok(self.push_op(value, &[a], move |args| {
            let swapped = [shape[0], shape[2], shape[1], shape[3]];
            vec![Some(swap12(args.grad, &swapped))]
        }))
    }

    /// `x @ w + b` for `x: [n, in]`, `w: [in, out]`, `b: [out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || self.shape(b) != [ws[1]] {
            return Err(TensorError::ShapeMismatch {
                op: "dense",
                lhs: xs,
                rhs: ws,
            });
        }
        let (n, k, m) = (xs[0], xs[1], ws[1]);
        let mut out = vec![S::zero(); n * m];
        let bias = self.value(b).data();
        for row in out.chunks_exact_mut(m) {
            row.copy_from_slice(bias);
        }
        gemm(
            n,
            k,
            m,
            self.value(x).data(),
            false,
            self.value(w).data(),
            false,
            &mut out,
            true,
        );
        let value = Tensor::from_vec(&[n, m], out).expect("dense output");
        Ok(self.push_op(value, &[x, w, b], move |args| {
            let g = args.grad.data();
            let gx = args.needs[0].then(|| {
                let mut gx = vec![S::zero(); n * k];
                gemm(n, m, k, g, false, args.inputs[1].data(), true, &mut gx, false);
                Tensor::from_vec(&[n, k], gx).expect("gx")
            });
            let gw = args.needs[1].then(|| {
                let mut gw = vec![S::zero(); k * m];
                gemm(k, n, m, args.inputs[0].data(), true, g, false, &mut gw, false);
                Tensor::from_vec(&[k, m], gw).expect("gw")
            });
            let gb = args.needs[2].then(|| column_sums(g, m));
            vec![gx, gw, gb]
        }))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(S::zero()));
        self.push_op(value, &[a], |args| {
            vec![Some(args.grad.zip_map(args.inputs[0], |g, x| {
                if x > S::zero() {
                    g
                } else {
                    S::zero()
                }
            }))]
        })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| S::one() / (S::one() + (-x).exp()));
        self.push_op(value, &[a], |args| {
            vec![Some(args.grad.zip_map(args.output, |g, y| g * y * (S::one() - y)))]
        })
    }

    /// Parametric ReLU with one slope per channel (last axis).
    pub fn prelu(&mut self, x: Var, alpha: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let c = *xs.last().unwrap_or(&0);
        if self.shape(alpha) != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "prelu",
                lhs: xs,
                rhs: self.shape(alpha).to_vec(),
            });
        }
        let a = self.value(alpha).data().to_vec();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_exact_mut(c) {
            for (v, &s) in row.iter_mut().zip(&a) {
                if *v <= S::zero() {
                    *v *= s;
                }
            }
        }
        let value = Tensor::from_vec(&xs, out).expect("prelu");
        Ok(self.push_op(value, &[x, alpha], move |args| {
            let xv = args.inputs[0].data();
            let av = args.inputs[1].data();
            let g = args.grad.data();
            let mut gx = args.needs[0].then(|| vec![S::zero(); xv.len()]);
            let mut ga = vec![S::zero(); c];
            for (i, (&xi, &gi)) in xv.iter().zip(g).enumerate() {
                let ch = i % c;
                if xi > S::zero() {
                    if let Some(gx) = gx.as_mut() {
                        gx[i] = gi;
                    }
                } else {
                    if let Some(gx) = gx.as_mut() {
                        gx[i] = gi * av[ch];
                    }
                    ga[ch] += gi * xi;
                }
            }
            vec![
                gx.map(|d| Tensor::from_vec(args.inputs[0].shape(), d).expect("gx")),
                args.needs[1].then(|| Tensor::from_vec(&[c], ga).expect("ga")),
            ]
        }))
    }

    /// Row-wise softmax over the last axis of a `[n, l]` tensor.
    pub fn softmax(&mut self, logits: Var) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[1] == 0 {
            return Err(TensorError::Invalid {
                op: "softmax",
                msg: format!("expected [n, l] with l > 0, got {shape:?}"),
            });
        }
        let l = shape[1];
        let mut out = self.value(logits).data().to_vec();
        for row in out.chunks_exact_mut(l) {
            softmax_in_place(row);
        }
        let value = Tensor::from_vec(&shape, out).expect("softmax");
        Ok(self.push_op(value, &[logits], move |args| {
            let p = args.output.data();
            let g = args.grad.data();
            let mut gx = vec![S::zero(); p.len()];
            for ((gx_row, p_row), g_row) in gx.chunks_exact_mut(l).zip(p.chunks_exact(l)).zip(g.chunks_exact(l)) {
                let dot: S = p_row.iter().zip(g_row).map(|(&a, &b)| a * b).sum();
                for ((o, &pi), &gi) in gx_row.iter_mut().zip(p_row).zip(g_row) {
                    *o = pi * (gi - dot);
                }
            }
            vec![Some(Tensor::from_vec(&shape, gx).expect("softmax grad"))]
        }))
    }
}

/// Numerically stable in-place softmax.
pub fn softmax_in_place<S: Scalar>(row: &mut [S]) {
    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
    let mut total = S::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

pub(crate) fn column_sums<S: Scalar>(data: &[S], cols: usize) -> Tensor<S> {
    let mut sums = vec![S::zero(); cols];
    for row in data.chunks_exact(cols) {
        for (s, &v) in sums.iter_mut().zip(row) {
            *s += v;
        }
    }
    Tensor::from_vec(&[cols], sums).expect("column sums")
}

fn swap12<S: Scalar>(t: &Tensor<S>, shape: &[usize]) -> Tensor<S> {
    let (a, b, c, d) = (shape[0], shape[1], shape[2], shape[3]);
    let src = t.data();
    let mut out = Vec::with_capacity(src.len());
    for i in 0..a {
        for k in 0..c {
            for j in 0..b {
                let start = ((i * b + j) * c + k) * d;
                out.extend_from_slice(&src[start..start + d]);
            }
        }
    }
    Tensor::from_vec(&[a, c, b, d], out).expect("swap12")
}
