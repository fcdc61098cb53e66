//! Normalization transforms: generalized divisive normalization (and its
//! inverse) over the channel axis, and per-sample layer normalization.

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::ops::basic::column_sums;
use crate::scalar::{gemm, Scalar};
use crate::tensor::Tensor;

impl<S: Scalar> Graph<S> {
    /// GDN over the last axis: `y_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2)`.
    ///
    /// With `inverse` set this is IGDN, `y_i = x_i * sqrt(...)`. `beta` is
    /// `[c]` and `gamma` is `[c, c]`; both must already be positive (callers
    /// reparameterize).
    pub fn gdn(&mut self, x: Var, beta: Var, gamma: Var, inverse: bool) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let c = *xs.last().unwrap_or(&0);
        if self.shape(beta) != [c] || self.shape(gamma) != [c, c] {
            return Err(TensorError::ShapeMismatch {
                op: "gdn",
                lhs: xs,
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let xv = self.value(x).data();
        let rows = xv.len() / c.max(1);
        let sq: Vec<S> = xv.iter().map(|&v| v * v).collect();
        // norm[r, i] = beta_i + sum_j sq[r, j] * gamma[i, j]
        let mut norm = vec![S::zero(); xv.len()];
        for row in norm.chunks_exact_mut(c) {
            row.copy_from_slice(self.value(beta).data());
        }
        gemm(rows, c, c, &sq, false, self.value(gamma).data(), true, &mut norm, true);
        // exponent p: -1/2 for GDN, +1/2 for IGDN
        let half = S::lit(0.5);
        let scale: Vec<S> = norm
            .iter()
            .map(|&n| if inverse { n.sqrt() } else { S::one() / n.sqrt() })
            .collect();
        let out: Vec<S> = xv.iter().zip(&scale).map(|(&a, &s)| a * s).collect();
        let value = Tensor::from_vec(&xs, out).expect("gdn");
        let keep = self.any_requires_grad(&[x, beta, gamma]);
        let (sq, norm, scale) = if keep { (sq, norm, scale) } else { Default::default() };
        Ok(self.push_op(value, &[x, beta, gamma], move |args| {
            let p = if inverse { half } else { -half };
            let x = args.inputs[0].data();
            let gamma = args.inputs[2].data();
            let g = args.grad.data();
            // t = g * x * norm^(p - 1) = g * x * scale / norm
            let t: Vec<S> = (0..x.len()).map(|i| g[i] * x[i] * scale[i] / norm[i]).collect();
            let gx = args.needs[0].then(|| {
                let mut tg = vec![S::zero(); x.len()];
                gemm(rows, c, c, &t, false, gamma, false, &mut tg, false);
                let two_p = p + p;
                let d: Vec<S> = (0..x.len()).map(|i| g[i] * scale[i] + two_p * x[i] * tg[i]).collect();
                Tensor::from_vec(args.inputs[0].shape(), d).expect("gx")
            });
            let gb = args.needs[1].then(|| column_sums(&t, c).map(|v| v * p));
            let gg = args.needs[2].then(|| {
                let mut gg = vec![S::zero(); c * c];
                gemm(c, rows, c, &t, true, &sq, false, &mut gg, false);
                for v in gg.iter_mut() {
                    *v *= p;
                }
                Tensor::from_vec(&[c, c], gg).expect("gg")
            });
            vec![gx, gb, gg]
        }))
    }

    /// Layer normalization of each row of `x: [n, d]` with elementwise gain
    /// and bias of shape `[d]`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: S) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 || self.shape(gain) != [xs[1]] || self.shape(bias) != [xs[1]] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: xs,
                rhs: self.shape(gain).to_vec(),
            });
        }
        let d = xs[1];
        let dn = S::from_usize(d).expect("width");
        let xv = self.value(x).data();
        let gv = self.value(gain).data();
        let bv = self.value(bias).data();
        let mut xhat = vec![S::zero(); xv.len()];
        let mut rstd = Vec::with_capacity(xs[0]);
        let mut out = vec![S::zero(); xv.len()];
        for (r, row) in xv.chunks_exact(d).enumerate() {
            let mean = row.iter().copied().sum::<S>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / dn;
            let rs = S::one() / (var + eps).sqrt();
            rstd.push(rs);
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gv[j] + bv[j];
            }
        }
        let value = Tensor::from_vec(&xs, out).expect("layer norm");
        Ok(self.push_op(value, &[x, gain, bias], move |args| {
            let g = args.grad.data();
            let gain = args.inputs[1].data();
            let gx = args.needs[0].then(|| {
                let mut gx = vec![S::zero(); g.len()];
                for r in 0..rstd.len() {
                    let base = r * d;
                    let mut mean_dh = S::zero();
                    let mut mean_dh_h = S::zero();
                    for j in 0..d {
                        let dh = g[base + j] * gain[j];
                        mean_dh += dh;
                        mean_dh_h += dh * xhat[base + j];
                    }
                    mean_dh /= dn;
                    mean_dh_h /= dn;
                    for j in 0..d {
                        let dh = g[base + j] * gain[j];
                        gx[base + j] = rstd[r] * (dh - mean_dh - xhat[base + j] * mean_dh_h);
                    }
                }
                Tensor::from_vec(args.inputs[0].shape(), gx).expect("gx")
            });
            let ggain = args.needs[1].then(|| {
                let prod: Vec<S> = g.iter().zip(&xhat).map(|(&a, &b)| a * b).collect();
                column_sums(&prod, d)
            });
            let gbias = args.needs[2].then(|| column_sums(g, d));
            vec![gx, ggain, gbias]
        }))
    }
}
