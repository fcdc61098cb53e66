//! The legitimate encoder (image -> power-normalized complex codeword) and
//! decoder (noisy channel output -> image).
//!
//! Encoder: `[conv -> GDN -> PReLU] x L`, the last convolution emitting
//! `filters x n_T` channels. Channel group `a` (channels `a*f .. (a+1)*f`) is
//! flattened in `(row, column, channel)` order into `2k` reals for antenna
//! `a`; even positions are real parts and odd positions imaginary parts. Each
//! antenna vector is then scaled to energy `k * P`.
//!
//! Decoder: layer normalization over the `2k` received reals, reshape to the
//! encoder's latent grid, then mirrored `[transposed conv -> IGDN -> PReLU]`
//! blocks with a final sigmoid instead of IGDN/PReLU.

use jscc_tensor::ops::conv_out_len;
use jscc_tensor::{Graph, Scalar, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ComplexSignal;
use crate::error::{Error, Result};
use crate::params::{glorot, ParamSet};

/// Pixel value used for normalization and PSNR.
pub const PIXEL_MAX: f64 = 255.0;
/// Lower bound added to the reparameterized GDN offset.
pub const GDN_BETA_MIN: f64 = 1e-6;
/// Guard inside the power-normalization square root.
pub const POWER_EPS: f64 = 1e-12;
const LAYER_NORM_EPS: f64 = 1e-5;
const PRELU_INIT: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub const CIFAR: ImageShape = ImageShape {
        height: 32,
        width: 32,
        channels: 3,
    };

    /// Source bandwidth `n = H * W * C`.
    pub fn numel(&self) -> usize {
        self.height * self.width * self.channels
    }
}

/// A batch of images `[batch, H, W, C]` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBatch<S> {
    pub pixels: Tensor<S>,
    pub pixel_max: f64,
}

impl<S: Scalar> ImageBatch<S> {
    pub fn new(pixels: Tensor<S>) -> Result<Self> {
        if pixels.shape().len() != 4 {
            return Err(Error::Shape(format!(
                "images must be [b, h, w, c], got {:?}",
                pixels.shape()
            )));
        }
        if pixels.data().iter().any(|&v| !(v >= S::zero() && v <= S::one())) {
            return Err(Error::InvalidArgument("pixel values must lie in [0, 1]".into()));
        }
        Ok(Self {
            pixels,
            pixel_max: PIXEL_MAX,
        })
    }

    /// Normalizes 8-bit pixels by the maximum pixel value.
    pub fn from_u8(shape: ImageShape, batch: usize, raw: &[u8]) -> Result<Self> {
        if raw.len() != batch * shape.numel() {
            return Err(Error::Shape(format!(
                "{} bytes for {batch} images of {shape:?}",
                raw.len()
            )));
        }
        let max = S::lit(PIXEL_MAX);
        let data = raw.iter().map(|&p| S::lit(p as f64) / max).collect();
        Ok(Self {
            pixels: Tensor::from_vec(&[batch, shape.height, shape.width, shape.channels], data)?,
            pixel_max: PIXEL_MAX,
        })
    }

    /// Presentation step: back to `[0, pixel_max]` and rounded to 8 bits.
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels
            .data()
            .iter()
            .map(|&v| (v.to_f64_lossy() * self.pixel_max).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn batch(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn shape(&self) -> ImageShape {
        let s = self.pixels.shape();
        ImageShape {
            height: s[1],
            width: s[2],
            channels: s[3],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayerSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvLayerSpec {
    pub const fn new(filters: usize, kernel: usize, stride: usize) -> Self {
        Self {
            filters,
            kernel,
            stride,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecConfig {
    pub image: ImageShape,
    /// Number of transmit antennas `n_T`.
    pub antennas: usize,
    /// Channel uses per source dimension, `k / n`.
    pub bandwidth_ratio: f64,
    /// Average transmit power `P`.
    pub power: f64,
    /// Encoder stack; the last entry's `filters` is per antenna.
    pub conv_stack: Vec<ConvLayerSpec>,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            image: ImageShape::CIFAR,
            antennas: 4,
            bandwidth_ratio: 1.0 / 3.0,
            power: 1.0,
            conv_stack: vec![
                ConvLayerSpec::new(16, 5, 2),
                ConvLayerSpec::new(32, 5, 2),
                ConvLayerSpec::new(32, 5, 1),
                ConvLayerSpec::new(32, 5, 1),
                ConvLayerSpec::new(32, 5, 1),
            ],
        }
    }
}

/// Resolved shapes of one layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerPlan {
    pub in_hw: (usize, usize),
    pub out_hw: (usize, usize),
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Derived dimensions of a validated [`CodecConfig`].
#[derive(Clone, Debug, PartialEq)]
pub struct CodecPlan {
    /// Complex channel uses per antenna.
    pub k: usize,
    pub encoder: Vec<LayerPlan>,
    pub decoder: Vec<LayerPlan>,
    /// Latent grid per antenna `(h, w, c)` with `h * w * c = 2k`.
    pub latent: (usize, usize, usize),
}

impl CodecConfig {
    /// `k = round(ratio * n)`.
    pub fn k(&self) -> usize {
        (self.bandwidth_ratio * self.image.numel() as f64).round() as usize
    }

    pub fn plan(&self) -> Result<CodecPlan> {
        let key = |k: &str| format!("codec.{k}");
        if self.conv_stack.is_empty() {
            return Err(Error::config(key("conv_stack"), "encoder needs at least one layer"));
        }
        if self.antennas == 0 {
            return Err(Error::config(key("antennas"), "need at least one antenna"));
        }
        if !(self.power > 0.0) {
            return Err(Error::config(key("power"), "power must be positive"));
        }
        if !(self.bandwidth_ratio > 0.0) {
            return Err(Error::config(key("bandwidth_ratio"), "ratio must be positive"));
        }
        if self.image.numel() == 0 {
            return Err(Error::config(key("image"), "empty image shape"));
        }
        let k = self.k();
        let last = self.conv_stack.len() - 1;
        let mut encoder = Vec::with_capacity(self.conv_stack.len());
        let (mut h, mut w, mut c) = (self.image.height, self.image.width, self.image.channels);
        for (i, layer) in self.conv_stack.iter().enumerate() {
            if layer.filters == 0 || layer.stride == 0 || layer.kernel % 2 == 0 {
                return Err(Error::config(
                    format!("codec.conv_stack[{i}]"),
                    "filters and stride must be positive and the kernel odd",
                ));
            }
            let (oh, ow) = (
                conv_out_len(h, layer.kernel, layer.stride),
                conv_out_len(w, layer.kernel, layer.stride),
            );
            if oh == 0 || ow == 0 || h.div_ceil(layer.stride) != oh {
                return Err(Error::config(
                    format!("codec.conv_stack[{i}]"),
                    format!(
                        "a {h}x{w} input is incompatible with kernel {} stride {}",
                        layer.kernel, layer.stride
                    ),
                ));
            }
            let out_c = if i == last {
                layer.filters * self.antennas
            } else {
                layer.filters
            };
            encoder.push(LayerPlan {
                in_hw: (h, w),
                out_hw: (oh, ow),
                in_c: c,
                out_c,
                kernel: layer.kernel,
                stride: layer.stride,
            });
            (h, w, c) = (oh, ow, out_c);
        }
        let per_antenna = self.conv_stack[last].filters;
        if h * w * per_antenna != 2 * k {
            return Err(Error::config(
                key("conv_stack"),
                format!(
                    "latent {h}x{w}x{per_antenna} = {} reals per antenna, but k/n = {} needs 2k = {}",
                    h * w * per_antenna,
                    self.bandwidth_ratio,
                    2 * k
                ),
            ));
        }
        let decoder = encoder
            .iter()
            .rev()
            .enumerate()
            .map(|(j, e)| LayerPlan {
                in_hw: e.out_hw,
                out_hw: e.in_hw,
                in_c: if j == 0 { per_antenna } else { e.out_c },
                out_c: e.in_c,
                kernel: e.kernel,
                stride: e.stride,
            })
            .collect();
        Ok(CodecPlan {
            k,
            encoder,
            decoder,
            latent: (h, w, per_antenna),
        })
    }
}

/// `x_i = sqrt(kP) x~_i / sqrt(x~_i^H x~_i + eps)` for one antenna row of
/// `2k` interleaved reals.
pub fn power_normalize_row<S: Scalar>(row: &[S], power: f64, out: &mut [S]) {
    let k = row.len() / 2;
    let target = S::lit((k as f64 * power).sqrt());
    let energy: S = row.iter().map(|&v| v * v).sum();
    let scale = target / (energy + S::lit(POWER_EPS)).sqrt();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = v * scale;
    }
}

/// Power normalization of a signal, per batch element and antenna.
pub fn power_normalize<S: Scalar>(x: &ComplexSignal<S>, power: f64) -> ComplexSignal<S> {
    let mut out = x.clone();
    for (src, dst) in x.data.chunks_exact(2 * x.k).zip(out.data.chunks_exact_mut(2 * x.k)) {
        power_normalize_row(src, power, dst);
    }
    out
}

/// Differentiable power normalization over the last axis (`2k` reals).
pub fn power_normalize_op<S: Scalar>(g: &mut Graph<S>, x: Var, power: f64) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let two_k = *shape.last().unwrap_or(&0);
    if two_k == 0 || !two_k.is_multiple_of(2) {
        return Err(Error::Shape(format!("power normalization over {shape:?}")));
    }
    let src = g.value(x).data();
    let mut out = vec![S::zero(); src.len()];
    for (s, d) in src.chunks_exact(two_k).zip(out.chunks_exact_mut(two_k)) {
        power_normalize_row(s, power, d);
    }
    let value = Tensor::from_vec(&shape, out)?;
    let target = S::lit((two_k as f64 / 2.0 * power).sqrt());
    Ok(g.push_op(value, &[x], move |args| {
        // d/dx [c x / r] = (c / r) (g - x (x.g) / r^2),  r^2 = |x|^2 + eps
        let x = args.inputs[0].data();
        let gr = args.grad.data();
        let mut gx = vec![S::zero(); x.len()];
        for ((xs, gs), ds) in x
            .chunks_exact(two_k)
            .zip(gr.chunks_exact(two_k))
            .zip(gx.chunks_exact_mut(two_k))
        {
            let r2: S = xs.iter().map(|&v| v * v).sum::<S>() + S::lit(POWER_EPS);
            let dot: S = xs.iter().zip(gs).map(|(&a, &b)| a * b).sum();
            let c = target / r2.sqrt();
            for ((d, &xv), &gv) in ds.iter_mut().zip(xs).zip(gs) {
                *d = c * (gv - xv * dot / r2);
            }
        }
        vec![Some(Tensor::from_vec(args.inputs[0].shape(), gx).expect("power grad"))]
    }))
}

/// Encoder and decoder parameters together with their resolved plan.
#[derive(Clone, Debug, PartialEq)]
pub struct Codec<S> {
    pub config: CodecConfig,
    pub plan: CodecPlan,
    pub encoder: ParamSet<S>,
    pub decoder: ParamSet<S>,
}

const ENC_PER_LAYER: usize = 5;

fn push_gdn<S: Scalar>(params: &mut ParamSet<S>, prefix: &str, c: usize) {
    let beta_r = S::lit((1.0 - GDN_BETA_MIN).sqrt());
    params.push(format!("{prefix}.gdn_beta"), Tensor::full(&[c], beta_r));
    let mut gamma = Tensor::full(&[c, c], S::lit(0.01));
    for i in 0..c {
        gamma.data_mut()[i * c + i] = S::lit(0.1f64.sqrt());
    }
    params.push(format!("{prefix}.gdn_gamma"), gamma);
    params.push(format!("{prefix}.prelu"), Tensor::full(&[c], S::lit(PRELU_INIT)));
}

impl<S: Scalar> Codec<S> {
    pub fn new<R: Rng + ?Sized>(config: CodecConfig, rng: &mut R) -> Result<Self> {
        let plan = config.plan()?;
        let mut encoder = ParamSet::default();
        for (i, l) in plan.encoder.iter().enumerate() {
            let prefix = format!("enc.{i}");
            let kk = l.kernel * l.kernel;
            encoder.push(
                format!("{prefix}.weight"),
                glorot(&[l.kernel, l.kernel, l.in_c, l.out_c], kk * l.in_c, kk * l.out_c, rng),
            );
            encoder.push(format!("{prefix}.bias"), Tensor::zeros(&[l.out_c]));
            push_gdn(&mut encoder, &prefix, l.out_c);
        }
        let mut decoder = ParamSet::default();
        let two_k = 2 * plan.k;
        decoder.push("dec.ln.gain", Tensor::ones(&[two_k]));
        decoder.push("dec.ln.bias", Tensor::zeros(&[two_k]));
        let last = plan.decoder.len() - 1;
        for (j, l) in plan.decoder.iter().enumerate() {
            let prefix = format!("dec.{j}");
            let kk = l.kernel * l.kernel;
            decoder.push(
                format!("{prefix}.weight"),
                glorot(&[l.kernel, l.kernel, l.out_c, l.in_c], kk * l.in_c, kk * l.out_c, rng),
            );
            decoder.push(format!("{prefix}.bias"), Tensor::zeros(&[l.out_c]));
            if j != last {
                push_gdn(&mut decoder, &prefix, l.out_c);
            }
        }
        Ok(Self {
            config,
            plan,
            encoder,
            decoder,
        })
    }

    pub fn k(&self) -> usize {
        self.plan.k
    }

    pub fn antennas(&self) -> usize {
        self.config.antennas
    }

    /// Differentiable encoder: `u: [b, H, W, C] -> [b, n_T, 2k]`.
    pub fn encode_op(&self, g: &mut Graph<S>, vars: &[Var], u: Var) -> Result<Var> {
        let shape = g.shape(u).to_vec();
        let img = self.config.image;
        if shape.len() != 4 || shape[1..] != [img.height, img.width, img.channels] {
            return Err(Error::Shape(format!(
                "encoder expects [b, {}, {}, {}], got {shape:?}",
                img.height, img.width, img.channels
            )));
        }
        let batch = shape[0];
        let mut h = u;
        for (i, l) in self.plan.encoder.iter().enumerate() {
            let p = &vars[i * ENC_PER_LAYER..(i + 1) * ENC_PER_LAYER];
            h = g.conv2d(h, p[0], p[1], l.stride)?;
            h = gdn_block(g, h, p[2], p[3], false)?;
            h = g.prelu(h, p[4])?;
        }
        let (lh, lw, c) = self.plan.latent;
        let a = self.config.antennas;
        let grouped = g.reshape(h, &[batch, lh * lw, a, c])?;
        let per_antenna = g.swap_axes12(grouped)?;
        let flat = g.reshape(per_antenna, &[batch, a, 2 * self.plan.k])?;
        power_normalize_op(g, flat, self.config.power)
    }

    /// Differentiable decoder: `y: [b, 2k] -> [b, H, W, C]` in `[0, 1]`.
    pub fn decode_op(&self, g: &mut Graph<S>, vars: &[Var], y: Var) -> Result<Var> {
        let shape = g.shape(y).to_vec();
        let two_k = 2 * self.plan.k;
        if shape.len() != 2 || shape[1] != two_k {
            return Err(Error::Shape(format!("decoder expects [b, {two_k}], got {shape:?}")));
        }
        let batch = shape[0];
        let mut h = g.layer_norm(y, vars[0], vars[1], S::lit(LAYER_NORM_EPS))?;
        let (lh, lw, c) = self.plan.latent;
        h = g.reshape(h, &[batch, lh, lw, c])?;
        let last = self.plan.decoder.len() - 1;
        let mut i = 2;
        for (j, l) in self.plan.decoder.iter().enumerate() {
            h = g.conv_transpose2d(h, vars[i], vars[i + 1], l.stride, l.out_hw)?;
            i += 2;
            if j != last {
                h = gdn_block(g, h, vars[i], vars[i + 1], true)?;
                h = g.prelu(h, vars[i + 2])?;
                i += 3;
            }
        }
        Ok(g.sigmoid(h))
    }

    /// Forward-only encode.
    pub fn encode(&self, u: &ImageBatch<S>) -> Result<ComplexSignal<S>> {
        let mut g = Graph::new();
        let vars = self.encoder.register(&mut g, false);
        let uv = g.constant(u.pixels.clone());
        let x = self.encode_op(&mut g, &vars, uv)?;
        ComplexSignal::from_tensor(g.value(x))
    }

    /// Forward-only decode of a single-antenna channel output.
    pub fn decode(&self, y: &ComplexSignal<S>) -> Result<ImageBatch<S>> {
        if y.antennas != 1 || y.k != self.plan.k {
            return Err(Error::Shape(format!(
                "decoder expects k = {} single-stream symbols, got k = {} x {}",
                self.plan.k, y.k, y.antennas
            )));
        }
        let mut g = Graph::new();
        let vars = self.decoder.register(&mut g, false);
        let yv = g.constant(Tensor::from_vec(&[y.batch, 2 * y.k], y.data.clone())?);
        let u = self.decode_op(&mut g, &vars, yv)?;
        Ok(ImageBatch {
            pixels: g.value(u).clone(),
            pixel_max: PIXEL_MAX,
        })
    }

    pub fn describe(&self) -> ArchitectureSummary {
        describe(&self.config).expect("validated config")
    }
}

/// GDN (or IGDN) with `beta = beta_r^2 + beta_min`, `gamma = gamma_r^2`.
fn gdn_block<S: Scalar>(g: &mut Graph<S>, x: Var, beta_r: Var, gamma_r: Var, inverse: bool) -> Result<Var> {
    let b2 = g.square(beta_r);
    let beta = g.add_scalar(b2, S::lit(GDN_BETA_MIN));
    let gamma = g.square(gamma_r);
    Ok(g.gdn(x, beta, gamma, inverse)?)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerSummary {
    pub name: String,
    pub input: Vec<usize>,
    pub output: Vec<usize>,
    pub params: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArchitectureSummary {
    pub layers: Vec<LayerSummary>,
    pub k: usize,
    /// Real values emitted by the encoder per image (`2k * n_T`).
    pub encoder_output_reals: usize,
    pub encoder_params: usize,
    pub decoder_params: usize,
}

/// Layer-by-layer shapes and parameter counts.
pub fn describe(cfg: &CodecConfig) -> Result<ArchitectureSummary> {
    let plan = cfg.plan()?;
    let gdn = |c: usize| c + c * c + c;
    let mut layers = Vec::new();
    let mut encoder_params = 0;
    for (i, l) in plan.encoder.iter().enumerate() {
        let params = l.kernel * l.kernel * l.in_c * l.out_c + l.out_c + gdn(l.out_c);
        encoder_params += params;
        layers.push(LayerSummary {
            name: format!("enc.{i} conv{}x{}/{} + GDN + PReLU", l.kernel, l.kernel, l.stride),
            input: vec![l.in_hw.0, l.in_hw.1, l.in_c],
            output: vec![l.out_hw.0, l.out_hw.1, l.out_c],
            params,
        });
    }
    let (lh, lw, c) = plan.latent;
    layers.push(LayerSummary {
        name: "power normalization".into(),
        input: vec![lh, lw, c * cfg.antennas],
        output: vec![cfg.antennas, plan.k, 2],
        params: 0,
    });
    let two_k = 2 * plan.k;
    let mut decoder_params = 2 * two_k;
    layers.push(LayerSummary {
        name: "dec layer norm".into(),
        input: vec![two_k],
        output: vec![lh, lw, c],
        params: 2 * two_k,
    });
    let last = plan.decoder.len() - 1;
    for (j, l) in plan.decoder.iter().enumerate() {
        let tail = if j == last { 0 } else { gdn(l.out_c) };
        let params = l.kernel * l.kernel * l.in_c * l.out_c + l.out_c + tail;
        decoder_params += params;
        layers.push(LayerSummary {
            name: if j == last {
                format!("dec.{j} tconv{}x{}/{} + sigmoid", l.kernel, l.kernel, l.stride)
            } else {
                format!("dec.{j} tconv{}x{}/{} + IGDN + PReLU", l.kernel, l.kernel, l.stride)
            },
            input: vec![l.in_hw.0, l.in_hw.1, l.in_c],
            output: vec![l.out_hw.0, l.out_hw.1, l.out_c],
            params,
        });
    }
    Ok(ArchitectureSummary {
        layers,
        k: plan.k,
        encoder_output_reals: 2 * plan.k * cfg.antennas,
        encoder_params,
        decoder_params,
    })
}
