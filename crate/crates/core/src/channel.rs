//! Legitimate and wiretap channel simulation: AWGN, Rayleigh and Nakagami-m
//! block fading with multi-antenna superposition at a single receive antenna.
//!
//! A transmission of `k` complex symbols from `n_T` antennas produces
//!
//! ```text
//! y = sum_i h_i * x_i + nu,    nu ~ CN(0, sigma^2 I_k)
//! ```
//!
//! with one gain `h_i` per antenna and per image (constant over the `k`
//! symbols). For AWGN every `h_i = 1`. Gains and noise are sampled outside
//! the gradient tape; gradients flow to `x` only.

use jscc_tensor::{Graph, Scalar, Tensor, Var};
use num_complex::Complex;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Awgn,
    Rayleigh,
    Nakagami,
}

impl ChannelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ChannelKind::Awgn => "awgn",
            ChannelKind::Rayleigh => "rayleigh",
            ChannelKind::Nakagami => "nakagami",
        }
    }
}

impl std::fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ChannelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "awgn" => Ok(ChannelKind::Awgn),
            "rayleigh" => Ok(ChannelKind::Rayleigh),
            "nakagami" => Ok(ChannelKind::Nakagami),
            other => Err(Error::InvalidArgument(format!("unknown channel kind `{other}`"))),
        }
    }
}

fn default_power() -> f64 {
    1.0
}

fn default_shape() -> f64 {
    3.0
}

fn default_fading_std() -> f64 {
    1.0
}

/// One link of the wiretap system.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub kind: ChannelKind,
    pub snr_db: f64,
    /// Standard deviation of the fading gain (ignored for AWGN).
    #[serde(default = "default_fading_std")]
    pub fading_std: f64,
    /// Nakagami shape parameter `m` (ignored otherwise).
    #[serde(default = "default_shape")]
    pub shape: f64,
    /// Average transmit power `P`.
    #[serde(default = "default_power")]
    pub power: f64,
}

impl ChannelSpec {
    pub fn awgn(snr_db: f64) -> Self {
        Self {
            kind: ChannelKind::Awgn,
            snr_db,
            fading_std: 1.0,
            shape: 3.0,
            power: 1.0,
        }
    }

    pub fn rayleigh(snr_db: f64, fading_std: f64) -> Self {
        Self {
            kind: ChannelKind::Rayleigh,
            ..Self::awgn(snr_db)
        }
        .with_fading_std(fading_std)
    }

    pub fn nakagami(snr_db: f64, fading_std: f64, m: f64) -> Self {
        Self {
            kind: ChannelKind::Nakagami,
            shape: m,
            ..Self::awgn(snr_db)
        }
        .with_fading_std(fading_std)
    }

    pub fn with_fading_std(mut self, fading_std: f64) -> Self {
        self.fading_std = fading_std;
        self
    }

    pub fn with_snr_db(mut self, snr_db: f64) -> Self {
        self.snr_db = snr_db;
        self
    }

    pub fn with_kind(mut self, kind: ChannelKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.snr_db.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "snr_db must be finite, got {}",
                self.snr_db
            )));
        }
        if !(self.power > 0.0 && self.power.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "power must be positive, got {}",
                self.power
            )));
        }
        if self.kind != ChannelKind::Awgn && !(self.fading_std > 0.0 && self.fading_std.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "fading_std must be positive, got {}",
                self.fading_std
            )));
        }
        if self.kind == ChannelKind::Nakagami && !(self.shape > 1.0 && self.shape.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "Nakagami shape m must exceed 1, got {}",
                self.shape
            )));
        }
        let var = self.noise_variance()?;
        if var <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "snr_db {} leaves no noise power",
                self.snr_db
            )));
        }
        Ok(())
    }

    pub fn noise_variance(&self) -> Result<f64> {
        noise_variance_from_snr(self.snr_db, self.power)
    }

    /// Draws gains and noise for `batch` transmissions of `k` symbols from
    /// `antennas` antennas. Gains are drawn first, then noise.
    pub fn sample_realization<S: Scalar, R: Rng + ?Sized>(
        &self,
        batch: usize,
        antennas: usize,
        k: usize,
        rng: &mut R,
    ) -> Result<ChannelRealization<S>> {
        self.validate()?;
        let gains: Vec<Complex<S>> = match self.kind {
            ChannelKind::Awgn => vec![Complex::new(S::one(), S::zero()); batch * antennas],
            _ => sample_fading(self, batch * antennas, rng)?
                .into_iter()
                .map(|h| Complex::new(S::lit(h.re), S::lit(h.im)))
                .collect(),
        };
        let sigma = (self.noise_variance()? / 2.0).sqrt();
        let noise = (0..batch * 2 * k)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                S::lit(sigma * z)
            })
            .collect();
        Ok(ChannelRealization {
            batch,
            antennas,
            k,
            gains,
            noise,
        })
    }
}

/// `sigma^2 = P / 10^(snr_db / 10)`.
pub fn noise_variance_from_snr(snr_db: f64, power: f64) -> Result<f64> {
    if !(power > 0.0) || !power.is_finite() {
        return Err(Error::InvalidArgument(format!("power must be positive, got {power}")));
    }
    if !snr_db.is_finite() {
        return Err(Error::InvalidArgument(format!("snr_db must be finite, got {snr_db}")));
    }
    Ok(power / 10f64.powf(snr_db / 10.0))
}

/// Fading gains with `E|h|^2 = fading_std^2`.
///
/// Rayleigh draws `h ~ CN(0, fading_std^2)`. Nakagami draws
/// `|h|^2 ~ Gamma(m, fading_std^2 / m)` with a uniform phase.
pub fn sample_fading<R: Rng + ?Sized>(spec: &ChannelSpec, count: usize, rng: &mut R) -> Result<Vec<Complex<f64>>> {
    let var = spec.fading_std * spec.fading_std;
    match spec.kind {
        ChannelKind::Awgn => Err(Error::InvalidArgument("AWGN channels have no fading".into())),
        ChannelKind::Rayleigh => {
            let s = (var / 2.0).sqrt();
            Ok((0..count)
                .map(|_| {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    Complex::new(s * re, s * im)
                })
                .collect())
        }
        ChannelKind::Nakagami => {
            let gamma = Gamma::new(spec.shape, var / spec.shape)
                .map_err(|e| Error::InvalidArgument(format!("Nakagami parameters: {e}")))?;
            Ok((0..count)
                .map(|_| {
                    let power = gamma.sample(rng);
                    let phase = rng.random::<f64>() * std::f64::consts::TAU;
                    Complex::from_polar(power.sqrt(), phase)
                })
                .collect())
        }
    }
}

/// Complex symbols laid out as interleaved real pairs,
/// `[batch][antenna][symbol][re, im]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSignal<S> {
    pub batch: usize,
    pub k: usize,
    pub antennas: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> ComplexSignal<S> {
    pub fn zeros(batch: usize, k: usize, antennas: usize) -> Self {
        Self {
            batch,
            k,
            antennas,
            data: vec![S::zero(); batch * antennas * k * 2],
        }
    }

    pub fn from_interleaved(batch: usize, k: usize, antennas: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != batch * antennas * k * 2 {
            return Err(Error::Shape(format!(
                "{} reals cannot hold {batch}x{k}x{antennas} complex symbols",
                data.len()
            )));
        }
        Ok(Self {
            batch,
            k,
            antennas,
            data,
        })
    }

    /// From a `[batch, antennas, 2k]` or `[batch, 2k]` tensor.
    pub fn from_tensor(t: &Tensor<S>) -> Result<Self> {
        match *t.shape() {
            [b, a, two_k] if two_k % 2 == 0 => Self::from_interleaved(b, two_k / 2, a, t.data().to_vec()),
            [b, two_k] if two_k % 2 == 0 => Self::from_interleaved(b, two_k / 2, 1, t.data().to_vec()),
            ref s => Err(Error::Shape(format!("not a complex signal tensor: {s:?}"))),
        }
    }

    /// `[batch, antennas, 2k]` tensor view (copy).
    pub fn to_tensor(&self) -> Tensor<S> {
        Tensor::from_vec(&[self.batch, self.antennas, 2 * self.k], self.data.clone()).expect("signal shape")
    }

    pub fn get(&self, b: usize, symbol: usize, antenna: usize) -> Complex<S> {
        let i = ((b * self.antennas + antenna) * self.k + symbol) * 2;
        Complex::new(self.data[i], self.data[i + 1])
    }

    pub fn set(&mut self, b: usize, symbol: usize, antenna: usize, v: Complex<S>) {
        let i = ((b * self.antennas + antenna) * self.k + symbol) * 2;
        self.data[i] = v.re;
        self.data[i + 1] = v.im;
    }

    /// `||x_i||^2` for each (batch element, antenna), row-major.
    pub fn antenna_energies(&self) -> Vec<S> {
        self.data
            .chunks_exact(2 * self.k)
            .map(|row| row.iter().map(|&v| v * v).sum())
            .collect()
    }
}

/// Sampled channel state for one batch: gains `[batch][antenna]` and
/// interleaved noise `[batch][2k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization<S> {
    pub batch: usize,
    pub antennas: usize,
    pub k: usize,
    pub gains: Vec<Complex<S>>,
    pub noise: Vec<S>,
}

impl<S: Scalar> ChannelRealization<S> {
    /// Fixed gains and noise, for deterministic tests.
    pub fn injected(batch: usize, antennas: usize, k: usize, gains: Vec<Complex<S>>, noise: Vec<S>) -> Result<Self> {
        if gains.len() != batch * antennas || noise.len() != batch * 2 * k {
            return Err(Error::Shape(format!(
                "injected realization needs {} gains and {} noise reals",
                batch * antennas,
                batch * 2 * k
            )));
        }
        Ok(Self {
            batch,
            antennas,
            k,
            gains,
            noise,
        })
    }

    fn check(&self, batch: usize, antennas: usize, k: usize) -> Result<()> {
        if (self.batch, self.antennas, self.k) != (batch, antennas, k) {
            return Err(Error::Shape(format!(
                "realization for {}x{}x{} applied to signal {batch}x{antennas}x{k}",
                self.batch, self.antennas, self.k
            )));
        }
        Ok(())
    }
}

/// `y_b = sum_a h_{b,a} x_{b,a} + nu_b` on interleaved buffers.
fn superpose<S: Scalar>(x: &[S], r: &ChannelRealization<S>) -> Vec<S> {
    let two_k = 2 * r.k;
    let mut y = r.noise.clone();
    for b in 0..r.batch {
        let out = &mut y[b * two_k..(b + 1) * two_k];
        for a in 0..r.antennas {
            let h = r.gains[b * r.antennas + a];
            let xa = &x[(b * r.antennas + a) * two_k..(b * r.antennas + a + 1) * two_k];
            for (o, p) in out.chunks_exact_mut(2).zip(xa.chunks_exact(2)) {
                o[0] += h.re * p[0] - h.im * p[1];
                o[1] += h.re * p[1] + h.im * p[0];
            }
        }
    }
    y
}

/// Adjoint of [`superpose`] with respect to `x`: `conj(h) * g`.
fn superpose_grad<S: Scalar>(g: &[S], r: &ChannelRealization<S>) -> Vec<S> {
    let two_k = 2 * r.k;
    let mut gx = vec![S::zero(); r.batch * r.antennas * two_k];
    for b in 0..r.batch {
        let gb = &g[b * two_k..(b + 1) * two_k];
        for a in 0..r.antennas {
            let h = r.gains[b * r.antennas + a];
            let dst = &mut gx[(b * r.antennas + a) * two_k..(b * r.antennas + a + 1) * two_k];
            for (d, q) in dst.chunks_exact_mut(2).zip(gb.chunks_exact(2)) {
                d[0] = h.re * q[0] + h.im * q[1];
                d[1] = h.re * q[1] - h.im * q[0];
            }
        }
    }
    gx
}

fn check_finite<S: Scalar>(data: &[S]) -> Result<()> {
    if data.iter().any(|v| v.is_nan()) {
        return Err(Error::Numerical("NaN in channel input".into()));
    }
    Ok(())
}

/// Passes `x` through the channel described by `spec`, sampling a fresh
/// realization from `rng`.
pub fn apply_channel<S: Scalar, R: Rng + ?Sized>(
    x: &ComplexSignal<S>,
    spec: &ChannelSpec,
    rng: &mut R,
) -> Result<ComplexSignal<S>> {
    let r = spec.sample_realization(x.batch, x.antennas, x.k, rng)?;
    apply_realization(x, &r)
}

/// Deterministic channel application with given gains and noise.
pub fn apply_realization<S: Scalar>(x: &ComplexSignal<S>, r: &ChannelRealization<S>) -> Result<ComplexSignal<S>> {
    r.check(x.batch, x.antennas, x.k)?;
    check_finite(&x.data)?;
    ComplexSignal::from_interleaved(x.batch, x.k, 1, superpose(&x.data, r))
}

/// Differentiable channel layer: `x: [batch, antennas, 2k] -> [batch, 2k]`.
pub fn transmit<S: Scalar>(g: &mut Graph<S>, x: Var, r: ChannelRealization<S>) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let [batch, antennas, two_k] = shape[..] else {
        return Err(Error::Shape(format!(
            "channel input must be [batch, antennas, 2k], got {shape:?}"
        )));
    };
    if two_k % 2 != 0 {
        return Err(Error::Shape(format!("odd real count {two_k} in channel input")));
    }
    r.check(batch, antennas, two_k / 2)?;
    check_finite(g.value(x).data())?;
    let y = superpose(g.value(x).data(), &r);
    let value = Tensor::from_vec(&[batch, two_k], y)?;
    Ok(g.push_op(value, &[x], move |args| {
        vec![Some(
            Tensor::from_vec(args.inputs[0].shape(), superpose_grad(args.grad.data(), &r)).expect("channel grad"),
        )]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use jscc_tensor::gradcheck::check_gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn noise_variance_examples() {
        assert_eq!(noise_variance_from_snr(0.0, 1.0).unwrap(), 1.0);
        assert!((noise_variance_from_snr(20.0, 1.0).unwrap() - 0.01).abs() < 1e-15);
        assert!((noise_variance_from_snr(15.0, 1.0).unwrap() - 0.0316228).abs() < 1e-7);
        assert!(noise_variance_from_snr(10.0, 0.0).is_err());
        assert!(noise_variance_from_snr(10.0, -1.0).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(ChannelSpec::rayleigh(10.0, 0.0).validate().is_err());
        assert!(ChannelSpec::nakagami(10.0, 1.0, 1.0).validate().is_err());
        assert!(ChannelSpec::awgn(f64::NAN).validate().is_err());
        assert!(ChannelSpec::awgn(4000.0).validate().is_err());
        // fading_std is ignored for AWGN
        assert!(ChannelSpec::awgn(10.0).with_fading_std(0.0).validate().is_ok());
    }

    #[test]
    fn awgn_has_no_fading() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_fading(&ChannelSpec::awgn(10.0), 4, &mut rng).is_err());
    }

    fn moments(h: &[Complex<f64>]) -> (f64, f64) {
        let n = h.len() as f64;
        let p: Vec<f64> = h.iter().map(|v| v.norm_sqr()).collect();
        let mean = p.iter().sum::<f64>() / n;
        let var = p.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn rayleigh_second_moment() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = sample_fading(&ChannelSpec::rayleigh(0.0, 1.0), 1_000_000, &mut rng).unwrap();
        let (mean, _) = moments(&h);
        assert!((mean - 1.0).abs() < 0.005, "{mean}");
    }

    #[test]
    fn nakagami_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let h = sample_fading(&ChannelSpec::nakagami(0.0, 1.0, 3.0), 1_000_000, &mut rng).unwrap();
        let (mean, var) = moments(&h);
        assert!((mean - 1.0).abs() < 0.005, "{mean}");
        // Gamma(m, d^2/m) variance: m (d^2/m)^2 = d^4 / m
        assert!((var - 1.0 / 3.0).abs() < 0.02 / 3.0, "{var}");
    }

    #[test]
    fn zero_input_yields_pure_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = ComplexSignal::<f64>::zeros(1000, 1000, 1);
        for spec in [
            ChannelSpec::awgn(10.0),
            ChannelSpec::rayleigh(10.0, 1.0),
            ChannelSpec::nakagami(10.0, 1.0, 3.0),
        ] {
            let y = apply_channel(&x, &spec, &mut rng).unwrap();
            let e: f64 = y.data.iter().map(|v| v * v).sum::<f64>() / (1000.0 * 1000.0);
            assert!((e - 0.1).abs() < 0.002, "{spec:?}: {e}");
        }
    }

    #[test]
    fn identity_channel() {
        let mut x = ComplexSignal::<f64>::zeros(1, 4, 1);
        for j in 0..4 {
            x.set(0, j, 0, Complex::new(j as f64, -(j as f64) * 0.5));
        }
        let spec = ChannelSpec::rayleigh(300.0, 1.0);
        let var = spec.noise_variance().unwrap();
        let r = ChannelRealization::injected(1, 1, 4, vec![Complex::new(1.0, 0.0)], vec![0.0; 8]).unwrap();
        let y = apply_realization(&x, &r).unwrap();
        assert!(var < 1e-29);
        assert_eq!(y.data, x.data);
    }

    #[test]
    fn two_antenna_superposition() {
        // h = (1, i), x_1 = x_2 = (1, 0, ...) -> y[0] = 1 + i
        let mut x = ComplexSignal::<f64>::zeros(1, 3, 2);
        x.set(0, 0, 0, Complex::new(1.0, 0.0));
        x.set(0, 0, 1, Complex::new(1.0, 0.0));
        let r = ChannelRealization::injected(
            1,
            2,
            3,
            vec![Complex::new(1.0, 0.0), Complex::new(0.0, 1.0)],
            vec![0.0; 6],
        )
        .unwrap();
        let y = apply_realization(&x, &r).unwrap();
        assert_eq!(y.get(0, 0, 0), Complex::new(1.0, 1.0));
        assert_eq!(y.get(0, 1, 0), Complex::new(0.0, 0.0));
    }

    #[test]
    fn rejects_nan_and_shape_mismatch() {
        let mut x = ComplexSignal::<f32>::zeros(1, 2, 1);
        x.data[0] = f32::NAN;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(apply_channel(&x, &ChannelSpec::awgn(10.0), &mut rng).is_err());
        let ok = ComplexSignal::<f32>::zeros(1, 2, 1);
        let r = ChannelSpec::awgn(10.0)
            .sample_realization::<f32, _>(2, 1, 2, &mut rng)
            .unwrap();
        assert!(apply_realization(&ok, &r).is_err());
    }

    #[test]
    fn deterministic_under_seed() {
        let x = ComplexSignal::<f32>::from_interleaved(2, 3, 2, (0..24).map(|i| i as f32 * 0.1).collect()).unwrap();
        let spec = ChannelSpec::nakagami(5.0, 0.7, 3.0);
        let a = apply_channel(&x, &spec, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        let b = apply_channel(&x, &spec, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gradient_is_conjugate_gain_scaled() {
        let gains = vec![Complex::new(0.3, -1.2), Complex::new(-0.7, 0.4)];
        let r = ChannelRealization::injected(1, 2, 2, gains, vec![0.05, -0.02, 0.01, 0.03]).unwrap();
        let x = Tensor::from_vec(&[1, 2, 4], vec![0.5, -0.1, 0.2, 0.9, -0.4, 0.3, 0.8, -0.6]).unwrap();
        let res = check_gradients(
            &[x],
            |g, v| {
                let y = transmit(g, v[0], r.clone()).unwrap();
                let w = g.constant(Tensor::from_vec(&[1, 4], vec![0.3, -0.8, 1.1, 0.5]).unwrap());
                let p = g.mul(y, w).unwrap();
                let q = g.square(p);
                g.sum(q)
            },
            1e-6,
            1e-6,
        );
        assert!(res.max_rel_error < 1e-4, "{res:?}");
    }
}
