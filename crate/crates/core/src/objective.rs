//! Training losses.
//!
//! Per image, `d(u, u^) = MSE + alpha * (1 - SSIM)`. The legitimate pair
//! minimizes the batch mean of `d` plus a leakage term over the `M`
//! eavesdropper beliefs `q_i`:
//!
//! ```text
//! ALC:      + (1/M) sum_i w_i H(p_uniform, q_i)
//! non-ALC:  - (1/M) sum_i w_i H(onehot(s_i), q_i)
//! ```
//!
//! and each eavesdropper minimizes `H(onehot(s_i), q_i)`. Cross-entropy is
//! target-first: `H(t, q) = -sum_l t_l ln max(q_l, 1e-9)`.
//!
//! Every function exists in two forms: a plain evaluation over
//! [`ImageBatch`]/[`AdversaryBelief`] values and a differentiable graph
//! operation (`*_op`) that shares the same arithmetic.

use jscc_tensor::{Graph, Scalar, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::adversary::AdversaryBelief;
use crate::codec::ImageBatch;
use crate::error::{Error, Result};

pub const CE_LOG_EPS: f64 = 1e-9;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Leakage weight shared by all eavesdroppers.
    pub w: f64,
    /// Optional per-eavesdropper override of `w`.
    pub w_per_eve: Option<Vec<f64>>,
    /// SSIM weight in the distortion.
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w: 5.0,
            w_per_eve: None,
            alpha: 0.1,
        }
    }
}

impl LossWeights {
    pub fn new(w: f64, alpha: f64) -> Self {
        Self {
            w,
            w_per_eve: None,
            alpha,
        }
    }

    pub fn validate(&self, eavesdroppers: usize) -> Result<()> {
        let bad = |v: f64| !(v.is_finite() && v >= 0.0);
        if bad(self.w) {
            return Err(Error::config("loss.w", "must be finite and non-negative"));
        }
        if bad(self.alpha) {
            return Err(Error::config("loss.alpha", "must be finite and non-negative"));
        }
        if let Some(ws) = &self.w_per_eve {
            if ws.len() != eavesdroppers {
                return Err(Error::config(
                    "loss.w_per_eve",
                    format!("{} weights for {eavesdroppers} eavesdroppers", ws.len()),
                ));
            }
            if ws.iter().any(|&v| bad(v)) {
                return Err(Error::config("loss.w_per_eve", "must be finite and non-negative"));
            }
        }
        Ok(())
    }

    /// Weight of eavesdropper `i` (0-based).
    pub fn weight(&self, i: usize) -> f64 {
        self.w_per_eve.as_ref().map_or(self.w, |ws| ws[i])
    }
}

fn check_same<S: Scalar>(u: &ImageBatch<S>, v: &ImageBatch<S>) -> Result<()> {
    if u.pixels.shape() != v.pixels.shape() {
        return Err(Error::Shape(format!(
            "image batches differ: {:?} vs {:?}",
            u.pixels.shape(),
            v.pixels.shape()
        )));
    }
    Ok(())
}

/// Mean squared error per image over all `n` pixels.
pub fn mse<S: Scalar>(u: &ImageBatch<S>, v: &ImageBatch<S>) -> Result<Vec<f64>> {
    check_same(u, v)?;
    let n = u.shape().numel();
    Ok(u.pixels
        .data()
        .chunks_exact(n)
        .zip(v.pixels.data().chunks_exact(n))
        .map(|(a, b)| {
            let s: f64 = a
                .iter()
                .zip(b)
                .map(|(&x, &y)| {
                    let d = x.to_f64_lossy() - y.to_f64_lossy();
                    d * d
                })
                .sum();
            s / n as f64
        })
        .collect())
}

/// Windowed SSIM per image, averaged over window positions and channels.
pub fn ssim<S: Scalar>(i: &ImageBatch<S>, k: &ImageBatch<S>) -> Result<Vec<f64>> {
    check_same(i, k)?;
    let shape = i.shape();
    let window = SsimWindow::new(shape.height, shape.width);
    let n = shape.numel();
    let to64 = |t: &Tensor<S>| t.data().iter().map(|v| v.to_f64_lossy()).collect::<Vec<_>>();
    let (a, b) = (to64(&i.pixels), to64(&k.pixels));
    Ok(a.chunks_exact(n)
        .zip(b.chunks_exact(n))
        .map(|(x, y)| window.image(x, y, shape.channels, None).0)
        .collect())
}

/// `MSE + alpha * (1 - SSIM)` per image.
pub fn distortion<S: Scalar>(u: &ImageBatch<S>, v: &ImageBatch<S>, alpha: f64) -> Result<Vec<f64>> {
    let m = mse(u, v)?;
    let s = ssim(u, v)?;
    Ok(m.iter().zip(&s).map(|(m, s)| m + alpha * (1.0 - s)).collect())
}

/// `-sum_l target_l ln max(prediction_l, 1e-9)`.
pub fn cross_entropy<S: Scalar>(target: &[S], prediction: &AdversaryBelief<S>) -> Result<f64> {
    if target.len() != prediction.num_classes() {
        return Err(Error::Shape(format!(
            "target has {} classes, prediction {}",
            target.len(),
            prediction.num_classes()
        )));
    }
    Ok(ce_row(target, prediction.probs()))
}

/// [`cross_entropy`] over raw slices.
pub fn ce_row<S: Scalar>(target: &[S], probs: &[S]) -> f64 {
    -target
        .iter()
        .zip(probs)
        .map(|(&t, &p)| t.to_f64_lossy() * p.to_f64_lossy().max(CE_LOG_EPS).ln())
        .sum::<f64>()
}

fn one_hot<S: Scalar>(classes: usize, index: usize) -> Vec<S> {
    let mut v = vec![S::zero(); classes];
    v[index] = S::one();
    v
}

fn check_roster<S>(beliefs: &[Vec<AdversaryBelief<S>>], batch: usize, weights: &LossWeights) -> Result<()> {
    if beliefs.is_empty() {
        return Err(Error::InvalidArgument(
            "the leakage term needs at least one eavesdropper".into(),
        ));
    }
    if let Some(ws) = &weights.w_per_eve {
        if ws.len() != beliefs.len() {
            return Err(Error::InvalidArgument(format!(
                "{} weights for {} eavesdroppers",
                ws.len(),
                beliefs.len()
            )));
        }
    }
    if beliefs.iter().any(|b| b.len() != batch) {
        return Err(Error::InvalidArgument(
            "every eavesdropper needs one belief per image".into(),
        ));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Non-ALC objective: mean distortion minus the weighted true-label CE.
/// `beliefs[i][j]` and `truths[i][j]` belong to eavesdropper `i`, image `j`.
pub fn legit_loss<S: Scalar>(
    u: &ImageBatch<S>,
    v: &ImageBatch<S>,
    beliefs: &[Vec<AdversaryBelief<S>>],
    truths: &[Vec<usize>],
    weights: &LossWeights,
) -> Result<f64> {
    let d = mean(&distortion(u, v, weights.alpha)?);
    check_roster(beliefs, u.batch(), weights)?;
    if truths.len() != beliefs.len() || truths.iter().zip(beliefs).any(|(t, b)| t.len() != b.len()) {
        return Err(Error::InvalidArgument("truths must match the beliefs roster".into()));
    }
    let m = beliefs.len() as f64;
    let mut leak = 0.0;
    for (i, (bs, ts)) in beliefs.iter().zip(truths).enumerate() {
        let ce: Vec<f64> = bs
            .iter()
            .zip(ts)
            .map(|(b, &t)| {
                if t >= b.num_classes() {
                    return Err(Error::InvalidArgument(format!("label {t} out of range")));
                }
                Ok(ce_row(&one_hot::<S>(b.num_classes(), t), b.probs()))
            })
            .collect::<Result<_>>()?;
        leak += weights.weight(i) * mean(&ce);
    }
    Ok(d - leak / m)
}

/// ALC objective: mean distortion plus the weighted CE against the uniform
/// belief.
pub fn legit_loss_alc<S: Scalar>(
    u: &ImageBatch<S>,
    v: &ImageBatch<S>,
    beliefs: &[Vec<AdversaryBelief<S>>],
    weights: &LossWeights,
) -> Result<f64> {
    let d = mean(&distortion(u, v, weights.alpha)?);
    Ok(d + alc_leakage(beliefs, u.batch(), weights)?)
}

/// The ALC leakage term alone; its floor `(1/M) sum_i w_i ln L_i` is reached
/// only at uniform beliefs.
pub fn alc_leakage<S: Scalar>(beliefs: &[Vec<AdversaryBelief<S>>], batch: usize, weights: &LossWeights) -> Result<f64> {
    check_roster(beliefs, batch, weights)?;
    let m = beliefs.len() as f64;
    let mut leak = 0.0;
    for (i, bs) in beliefs.iter().enumerate() {
        let ce: Vec<f64> = bs
            .iter()
            .map(|b| {
                let l = b.num_classes();
                ce_row(&vec![S::one() / S::lit(l as f64); l], b.probs())
            })
            .collect();
        leak += weights.weight(i) * mean(&ce);
    }
    Ok(leak / m)
}

/// Mean over the batch of `c_{s_j} H(onehot(s_j), q_j)`, with optional
/// per-class weights `c`.
pub fn adversary_loss<S: Scalar>(
    beliefs: &[AdversaryBelief<S>],
    truths: &[usize],
    class_weights: Option<&[f64]>,
) -> Result<f64> {
    if beliefs.len() != truths.len() || beliefs.is_empty() {
        return Err(Error::InvalidArgument("one truth per belief, at least one pair".into()));
    }
    let mut total = 0.0;
    for (b, &t) in beliefs.iter().zip(truths) {
        let l = b.num_classes();
        if t >= l {
            return Err(Error::InvalidArgument(format!("label {t} out of range for L = {l}")));
        }
        let c = match class_weights {
            Some(w) if w.len() != l => {
                return Err(Error::InvalidArgument(format!("{} class weights for L = {l}", w.len())))
            }
            Some(w) => w[t],
            None => 1.0,
        };
        total += c * ce_row(&one_hot::<S>(l, t), b.probs());
    }
    Ok(total / beliefs.len() as f64)
}

/// Separable SSIM window for an `h x w` plane. Planes smaller than the
/// Gaussian window use one uniform window over the whole plane.
/// Gradients with respect to both images of a pair.
type PairGrad = (Vec<f64>, Vec<f64>);

#[derive(Clone, Debug)]
struct SsimWindow {
    h: usize,
    w: usize,
    rows: Vec<f64>,
    cols: Vec<f64>,
}

fn gaussian(len: usize, sigma: f64) -> Vec<f64> {
    let c = (len / 2) as f64;
    let g: Vec<f64> = (0..len)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

impl SsimWindow {
    fn new(h: usize, w: usize) -> Self {
        if h < SSIM_WINDOW || w < SSIM_WINDOW {
            Self {
                h,
                w,
                rows: vec![1.0 / h as f64; h],
                cols: vec![1.0 / w as f64; w],
            }
        } else {
            let g = gaussian(SSIM_WINDOW, SSIM_SIGMA);
            Self {
                h,
                w,
                rows: g.clone(),
                cols: g,
            }
        }
    }

    fn out_h(&self) -> usize {
        self.h - self.rows.len() + 1
    }

    fn out_w(&self) -> usize {
        self.w - self.cols.len() + 1
    }

    /// Valid-mode filtering of channel `ch` of an interleaved `h x w x c`
    /// plane, after mapping each pixel through `f`.
    fn filter(&self, c: usize, ch: usize, f: impl Fn(usize) -> f64) -> Vec<f64> {
        let (oh, ow) = (self.out_h(), self.out_w());
        let mut tmp = vec![0.0; self.h * ow];
        for y in 0..self.h {
            for x in 0..ow {
                let mut s = 0.0;
                for (j, &kw) in self.cols.iter().enumerate() {
                    s += kw * f((y * self.w + x + j) * c + ch);
                }
                tmp[y * ow + x] = s;
            }
        }
        let mut out = vec![0.0; oh * ow];
        for y in 0..oh {
            for (i, &kh) in self.rows.iter().enumerate() {
                let src = &tmp[(y + i) * ow..(y + i + 1) * ow];
                for (o, &t) in out[y * ow..(y + 1) * ow].iter_mut().zip(src) {
                    *o += kh * t;
                }
            }
        }
        out
    }

    /// Adjoint of [`Self::filter`], returning a single-channel `h x w` plane.
    fn filter_adjoint(&self, g: &[f64]) -> Vec<f64> {
        let (oh, ow) = (self.out_h(), self.out_w());
        let mut tmp = vec![0.0; self.h * ow];
        for y in 0..oh {
            for (i, &kh) in self.rows.iter().enumerate() {
                let dst = &mut tmp[(y + i) * ow..(y + i + 1) * ow];
                for (d, &v) in dst.iter_mut().zip(&g[y * ow..(y + 1) * ow]) {
                    *d += kh * v;
                }
            }
        }
        let mut out = vec![0.0; self.h * self.w];
        for y in 0..self.h {
            for x in 0..ow {
                let t = tmp[y * ow + x];
                for (j, &kw) in self.cols.iter().enumerate() {
                    out[y * self.w + x + j] += kw * t;
                }
            }
        }
        out
    }

    /// SSIM of one interleaved image pair; with `upstream = Some(g)` also
    /// returns `g * dSSIM/da` and `g * dSSIM/db`.
    fn image(&self, a: &[f64], b: &[f64], c: usize, upstream: Option<f64>) -> (f64, Option<PairGrad>) {
        let positions = self.out_h() * self.out_w();
        let norm = 1.0 / (positions * c) as f64;
        let mut total = 0.0;
        let mut grads = upstream.map(|_| (vec![0.0; a.len()], vec![0.0; b.len()]));
        for ch in 0..c {
            let m1 = self.filter(c, ch, |i| a[i]);
            let m2 = self.filter(c, ch, |i| b[i]);
            let e11 = self.filter(c, ch, |i| a[i] * a[i]);
            let e22 = self.filter(c, ch, |i| b[i] * b[i]);
            let e12 = self.filter(c, ch, |i| a[i] * b[i]);
            let mut sum = 0.0;
            let mut dm1 = vec![0.0; positions];
            let mut dm2 = vec![0.0; positions];
            let mut d11 = vec![0.0; positions];
            let mut d12 = vec![0.0; positions];
            for p in 0..positions {
                let (x, y) = (m1[p], m2[p]);
                let a1 = (2.0 * x) * y + SSIM_C1;
                let a2 = 2.0 * (e12[p] - x * y) + SSIM_C2;
                let b1 = x * x + y * y + SSIM_C1;
                let b2 = (e11[p] - x * x) + (e22[p] - y * y) + SSIM_C2;
                let den = b1 * b2;
                let s = (a1 * a2) / den;
                sum += s;
                if let Some(g) = upstream {
                    let g = g * norm;
                    dm1[p] = g * (2.0 * y * (a2 - a1) - s * 2.0 * x * (b2 - b1)) / den;
                    dm2[p] = g * (2.0 * x * (a2 - a1) - s * 2.0 * y * (b2 - b1)) / den;
                    d11[p] = -g * s / b2;
                    d12[p] = g * 2.0 * a1 / den;
                }
            }
            total += sum;
            if let Some((da, db)) = grads.as_mut() {
                // de22 equals de11 pointwise.
                let fm1 = self.filter_adjoint(&dm1);
                let fm2 = self.filter_adjoint(&dm2);
                let f11 = self.filter_adjoint(&d11);
                let f12 = self.filter_adjoint(&d12);
                for q in 0..self.h * self.w {
                    let i = q * c + ch;
                    da[i] = fm1[q] + 2.0 * a[i] * f11[q] + b[i] * f12[q];
                    db[i] = fm2[q] + 2.0 * b[i] * f11[q] + a[i] * f12[q];
                }
            }
        }
        (total * norm, grads)
    }
}

fn image_dims(shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [b, h, w, c] => Ok((b, h, w, c)),
        ref s => Err(Error::Shape(format!("images must be [b, h, w, c], got {s:?}"))),
    }
}

/// Differentiable per-image MSE, `[b]`.
pub fn mse_op<S: Scalar>(g: &mut Graph<S>, u: Var, v: Var) -> Result<Var> {
    let (b, h, w, c) = image_dims(g.shape(u))?;
    let d = g.sub(u, v)?;
    let sq = g.square(d);
    let flat = g.reshape(sq, &[b, h * w * c])?;
    let sums = g.sum_rows(flat);
    Ok(g.scale(sums, S::lit(1.0 / (h * w * c) as f64)))
}

/// Differentiable per-image SSIM, `[b]`.
pub fn ssim_op<S: Scalar>(g: &mut Graph<S>, u: Var, v: Var) -> Result<Var> {
    let (b, h, w, c) = image_dims(g.shape(u))?;
    if g.shape(u) != g.shape(v) {
        return Err(Error::Shape(format!("{:?} vs {:?}", g.shape(u), g.shape(v))));
    }
    let window = SsimWindow::new(h, w);
    let n = h * w * c;
    let to64 = |t: &Tensor<S>| t.data().iter().map(|x| x.to_f64_lossy()).collect::<Vec<_>>();
    let (a, bb) = (to64(g.value(u)), to64(g.value(v)));
    let values: Vec<S> = a
        .chunks_exact(n)
        .zip(bb.chunks_exact(n))
        .map(|(x, y)| S::lit(window.image(x, y, c, None).0))
        .collect();
    let value = Tensor::from_vec(&[b], values)?;
    Ok(g.push_op(value, &[u, v], move |args| {
        let a = to64(args.inputs[0]);
        let bb = to64(args.inputs[1]);
        let mut ga = Vec::with_capacity(a.len());
        let mut gb = Vec::with_capacity(bb.len());
        for ((x, y), &up) in a.chunks_exact(n).zip(bb.chunks_exact(n)).zip(args.grad.data()) {
            let (_, d) = window.image(x, y, c, Some(up.to_f64_lossy()));
            let (da, db) = d.expect("requested gradients");
            ga.extend(da.into_iter().map(S::lit));
            gb.extend(db.into_iter().map(S::lit));
        }
        let shape = args.inputs[0].shape();
        vec![
            args.needs[0].then(|| Tensor::from_vec(shape, ga).expect("ssim grad")),
            args.needs[1].then(|| Tensor::from_vec(shape, gb).expect("ssim grad")),
        ]
    }))
}

/// Differentiable per-image distortion, `[b]`.
pub fn distortion_op<S: Scalar>(g: &mut Graph<S>, u: Var, v: Var, alpha: f64) -> Result<Var> {
    let m = mse_op(g, u, v)?;
    let s = ssim_op(g, u, v)?;
    let neg = g.scale(s, S::lit(-alpha));
    let shifted = g.add_scalar(neg, S::lit(alpha));
    Ok(g.add(m, shifted)?)
}

/// Differentiable row-wise CE `-c_j sum_l t_jl ln max(q_jl, 1e-9)`, `[b]`.
/// Clamped entries pass no gradient.
/// `targets` is `[b, L]`; `row_weights` (length `b`) defaults to 1.
pub fn cross_entropy_op<S: Scalar>(
    g: &mut Graph<S>,
    probs: Var,
    targets: Tensor<S>,
    row_weights: Option<Vec<S>>,
) -> Result<Var> {
    let shape = g.shape(probs).to_vec();
    if shape.len() != 2 || targets.shape() != shape.as_slice() {
        return Err(Error::Shape(format!(
            "CE over {shape:?} with targets {:?}",
            targets.shape()
        )));
    }
    let (b, l) = (shape[0], shape[1]);
    let weights = row_weights.unwrap_or_else(|| vec![S::one(); b]);
    if weights.len() != b {
        return Err(Error::Shape(format!("{} row weights for {b} rows", weights.len())));
    }
    let eps = S::lit(CE_LOG_EPS);
    let p = g.value(probs).data();
    let values: Vec<S> = (0..b)
        .map(|r| {
            let s: S = (0..l)
                .map(|j| targets.data()[r * l + j] * p[r * l + j].max(eps).ln())
                .sum();
            -weights[r] * s
        })
        .collect();
    let value = Tensor::from_vec(&[b], values)?;
    Ok(g.push_op(value, &[probs], move |args| {
        let p = args.inputs[0].data();
        let t = targets.data();
        let mut out = vec![S::zero(); p.len()];
        for r in 0..b {
            let up = args.grad.data()[r] * weights[r];
            for j in 0..l {
                let i = r * l + j;
                if p[i] > eps {
                    out[i] = -up * t[i] / p[i];
                }
            }
        }
        vec![Some(Tensor::from_vec(&[b, l], out).expect("ce grad"))]
    }))
}

/// `[b, L]` one-hot targets.
pub fn one_hot_targets<S: Scalar>(labels: &[usize], classes: usize) -> Result<Tensor<S>> {
    let mut data = vec![S::zero(); labels.len() * classes];
    for (r, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::InvalidArgument(format!(
                "label {l} out of range for L = {classes}"
            )));
        }
        data[r * classes + l] = S::one();
    }
    Ok(Tensor::from_vec(&[labels.len(), classes], data)?)
}

/// `[b, L]` uniform targets.
pub fn uniform_targets<S: Scalar>(batch: usize, classes: usize) -> Tensor<S> {
    Tensor::full(&[batch, classes], S::one() / S::lit(classes as f64))
}

/// One eavesdropper's contribution to the legitimate objective.
pub struct LeakageInput {
    pub probs: Var,
    pub labels: Vec<usize>,
    pub weight: f64,
}

/// Differentiable legitimate objective (scalar). With `alc` the leakage term
/// pulls every belief toward uniform; without it the true-label CE is pushed
/// up.
pub fn legit_loss_op<S: Scalar>(
    g: &mut Graph<S>,
    u: Var,
    v: Var,
    eves: &[LeakageInput],
    alpha: f64,
    alc: bool,
) -> Result<Var> {
    let d = distortion_op(g, u, v, alpha)?;
    let mut loss = g.mean(d);
    if eves.is_empty() {
        return Ok(loss);
    }
    let m = eves.len() as f64;
    for eve in eves {
        let shape = g.shape(eve.probs).to_vec();
        let targets = if alc {
            uniform_targets(shape[0], shape[1])
        } else {
            one_hot_targets(&eve.labels, shape[1])?
        };
        let ce = cross_entropy_op(g, eve.probs, targets, None)?;
        let ce = g.mean(ce);
        let sign = if alc { 1.0 } else { -1.0 };
        let term = g.scale(ce, S::lit(sign * eve.weight / m));
        loss = g.add(loss, term)?;
    }
    Ok(loss)
}

/// Differentiable class-weighted adversary objective (scalar).
pub fn adversary_loss_op<S: Scalar>(
    g: &mut Graph<S>,
    probs: Var,
    labels: &[usize],
    class_weights: Option<&[f64]>,
) -> Result<Var> {
    let classes = g.shape(probs)[1];
    let targets = one_hot_targets(labels, classes)?;
    let rows = match class_weights {
        Some(w) if w.len() != classes => {
            return Err(Error::InvalidArgument(format!(
                "{} class weights for L = {classes}",
                w.len()
            )))
        }
        Some(w) => Some(labels.iter().map(|&l| S::lit(w[l])).collect()),
        None => None,
    };
    let ce = cross_entropy_op(g, probs, targets, rows)?;
    Ok(g.mean(ce))
}
