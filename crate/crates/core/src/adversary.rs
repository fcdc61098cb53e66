//! Eavesdropper classifiers: `2k` wiretapped reals -> dense(128) + ReLU ->
//! dense(L) + softmax, plus the colluding and pessimistic decision rules.

use jscc_tensor::ops::softmax_in_place;
use jscc_tensor::{Graph, Scalar, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelSpec, ComplexSignal};
use crate::error::{Error, Result};
use crate::params::{glorot, ParamSet};

pub const HIDDEN_UNITS: usize = 128;
/// Tolerance of the simplex check on beliefs.
pub const SIMPLEX_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EavesdropperSpec {
    /// 1-based position in the roster.
    pub id: usize,
    pub channel: ChannelSpec,
    pub secret_id: String,
    pub num_classes: usize,
}

impl EavesdropperSpec {
    pub fn validate(&self) -> Result<()> {
        let key = |k: &str| format!("roster[{}].{k}", self.id);
        if self.num_classes < 2 {
            return Err(Error::config(
                key("num_classes"),
                "an eavesdropper needs at least two classes",
            ));
        }
        self.channel
            .validate()
            .map_err(|e| Error::config(key("channel"), e.to_string()))
    }
}

/// A probability vector on the `L`-simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct AdversaryBelief<S> {
    probs: Vec<S>,
}

impl<S: Scalar> AdversaryBelief<S> {
    pub fn new(probs: Vec<S>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidArgument("a belief needs at least two classes".into()));
        }
        let total: f64 = probs.iter().map(|p| p.to_f64_lossy()).sum();
        if probs.iter().any(|&p| !(p >= S::zero())) || (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidArgument(format!(
                "not a probability vector (sum {total})"
            )));
        }
        Ok(Self { probs })
    }

    pub fn uniform(classes: usize) -> Self {
        Self {
            probs: vec![S::one() / S::lit(classes as f64); classes],
        }
    }

    pub fn one_hot(classes: usize, index: usize) -> Self {
        let mut probs = vec![S::zero(); classes];
        probs[index] = S::one();
        Self { probs }
    }

    pub fn probs(&self) -> &[S] {
        &self.probs
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }
}

/// Splits a `[batch, L]` probability tensor into beliefs.
pub fn beliefs_from_tensor<S: Scalar>(probs: &Tensor<S>) -> Result<Vec<AdversaryBelief<S>>> {
    if probs.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "beliefs must be [batch, L], got {:?}",
            probs.shape()
        )));
    }
    (0..probs.rows())
        .map(|r| AdversaryBelief::new(probs.row(r).to_vec()))
        .collect()
}

/// One eavesdropper's network parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Adversary<S> {
    pub input_len: usize,
    pub num_classes: usize,
    pub params: ParamSet<S>,
}

impl<S: Scalar> Adversary<S> {
    /// `input_len` is the number of received reals, `2k`.
    pub fn new<R: Rng + ?Sized>(input_len: usize, num_classes: usize, rng: &mut R) -> Result<Self> {
        if num_classes < 2 || input_len == 0 {
            return Err(Error::InvalidArgument(format!(
                "adversary needs L >= 2 and a non-empty input, got L = {num_classes}, input {input_len}"
            )));
        }
        let mut params = ParamSet::default();
        params.push(
            "dense1.weight",
            glorot(&[input_len, HIDDEN_UNITS], input_len, HIDDEN_UNITS, rng),
        );
        params.push("dense1.bias", Tensor::zeros(&[HIDDEN_UNITS]));
        params.push(
            "dense2.weight",
            glorot(&[HIDDEN_UNITS, num_classes], HIDDEN_UNITS, num_classes, rng),
        );
        params.push("dense2.bias", Tensor::zeros(&[num_classes]));
        Ok(Self {
            input_len,
            num_classes,
            params,
        })
    }

    /// `z: [batch, 2k] -> [batch, L]` probabilities.
    pub fn forward_op(&self, g: &mut Graph<S>, vars: &[Var], z: Var) -> Result<Var> {
        let shape = g.shape(z);
        if shape.len() != 2 || shape[1] != self.input_len {
            return Err(Error::Shape(format!(
                "adversary expects [b, {}], got {shape:?}",
                self.input_len
            )));
        }
        let h = g.dense(z, vars[0], vars[1])?;
        let h = g.relu(h);
        let logits = g.dense(h, vars[2], vars[3])?;
        Ok(g.softmax(logits)?)
    }

    /// Forward pass without a tape, returning `[batch, L]` probabilities.
    pub fn predict_tensor(&self, z: &Tensor<S>) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let vars = self.params.register(&mut g, false);
        let zv = g.constant(z.clone());
        let p = self.forward_op(&mut g, &vars, zv)?;
        Ok(g.value(p).clone())
    }
}

/// Beliefs of one eavesdropper over a batch of wiretapped outputs.
pub fn adversary_predict<S: Scalar>(
    z: &ComplexSignal<S>,
    adversary: &Adversary<S>,
    num_classes: usize,
) -> Result<Vec<AdversaryBelief<S>>> {
    if num_classes != adversary.num_classes {
        return Err(Error::InvalidArgument(format!(
            "requested L = {num_classes} but the adversary has {} outputs",
            adversary.num_classes
        )));
    }
    if z.antennas != 1 {
        return Err(Error::Shape("adversaries observe a single received stream".into()));
    }
    let t = Tensor::from_vec(&[z.batch, 2 * z.k], z.data.clone())?;
    beliefs_from_tensor(&adversary.predict_tensor(&t)?)
}

/// Argmax with ties resolved to the lowest index.
pub fn argmax<S: Scalar>(probs: &[S]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

pub fn adversary_guess<S: Scalar>(belief: &AdversaryBelief<S>) -> usize {
    argmax(&belief.probs)
}

/// Mean of the probability vectors, renormalized.
pub fn collude_combine<S: Scalar>(beliefs: &[AdversaryBelief<S>]) -> Result<AdversaryBelief<S>> {
    let first = beliefs
        .first()
        .ok_or_else(|| Error::InvalidArgument("collusion needs at least one belief".into()))?;
    let classes = first.num_classes();
    if beliefs.iter().any(|b| b.num_classes() != classes) {
        return Err(Error::InvalidArgument(
            "colluding beliefs must share the class count".into(),
        ));
    }
    let mut sum = vec![S::zero(); classes];
    for b in beliefs {
        for (s, &p) in sum.iter_mut().zip(&b.probs) {
            *s += p;
        }
    }
    let total: S = sum.iter().copied().sum();
    for s in &mut sum {
        *s /= total;
    }
    Ok(AdversaryBelief { probs: sum })
}

/// True iff any eavesdropper's guess equals `truth`.
pub fn pessimistic_hit<S: Scalar>(beliefs: &[AdversaryBelief<S>], truth: usize) -> bool {
    beliefs.iter().any(|b| adversary_guess(b) == truth)
}

/// Row-wise collusion of `[batch, L]` probability tensors.
pub fn collude_rows<S: Scalar>(probs: &[Tensor<S>]) -> Result<Tensor<S>> {
    let first = probs
        .first()
        .ok_or_else(|| Error::InvalidArgument("collusion needs at least one belief".into()))?;
    if probs.iter().any(|p| p.shape() != first.shape()) {
        return Err(Error::InvalidArgument(
            "colluding beliefs must share the class count".into(),
        ));
    }
    let mut out = first.clone();
    for p in &probs[1..] {
        out.add_assign(p);
    }
    let l = out.row_len();
    for row in out.data_mut().chunks_exact_mut(l) {
        let total: S = row.iter().copied().sum();
        for v in row {
            *v /= total;
        }
    }
    Ok(out)
}

/// Reference softmax for tests and tape-free callers.
pub fn softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn belief(p: &[f64]) -> AdversaryBelief<f64> {
        AdversaryBelief::new(p.to_vec()).unwrap()
    }

    #[test]
    fn predict_shapes_and_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let adv = Adversary::<f64>::new(2048, 10, &mut rng).unwrap();
        let z =
            ComplexSignal::from_interleaved(4, 1024, 1, (0..4 * 2048).map(|_| rng.random_range(-2.0..2.0)).collect())
                .unwrap();
        let b = adversary_predict(&z, &adv, 10).unwrap();
        assert_eq!(b.len(), 4);
        for row in &b {
            assert_eq!(row.num_classes(), 10);
            assert!((row.probs().iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        assert!(adversary_predict(&z, &adv, 4).is_err());
    }

    #[test]
    fn zero_final_layer_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut adv = Adversary::<f64>::new(8, 5, &mut rng).unwrap();
        let mut named: Vec<(String, Tensor<f64>)> = adv
            .params
            .names()
            .iter()
            .cloned()
            .zip(adv.params.tensors().iter().cloned())
            .collect();
        named[2].1 = Tensor::zeros(&[HIDDEN_UNITS, 5]);
        adv.params.load(named).unwrap();
        let z = ComplexSignal::from_interleaved(2, 4, 1, (0..16).map(|i| i as f64).collect()).unwrap();
        for b in adversary_predict(&z, &adv, 5).unwrap() {
            for &p in b.probs() {
                assert!((p - 0.2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn guess_examples() {
        assert_eq!(adversary_guess(&belief(&[0.1, 0.7, 0.2])), 1);
        assert_eq!(adversary_guess(&AdversaryBelief::<f64>::uniform(10)), 0);
        assert_eq!(adversary_guess(&AdversaryBelief::<f64>::one_hot(10, 7)), 7);
    }

    #[test]
    fn collusion_examples() {
        let b = belief(&[0.3, 0.5, 0.2]);
        let same = collude_combine(&[b.clone(), b.clone(), b.clone()]).unwrap();
        for (x, y) in same.probs().iter().zip(b.probs()) {
            assert!((x - y).abs() < 1e-15);
        }
        let c = collude_combine(&[belief(&[0.8, 0.2]), belief(&[0.6, 0.4])]).unwrap();
        assert!((c.probs()[0] - 0.7).abs() < 1e-12 && (c.probs()[1] - 0.3).abs() < 1e-12);
        let hot: Vec<_> = (0..6).map(|_| AdversaryBelief::<f64>::one_hot(4, 2)).collect();
        assert_eq!(collude_combine(&hot).unwrap(), AdversaryBelief::one_hot(4, 2));
        assert!(collude_combine::<f64>(&[]).is_err());
        assert!(collude_combine(&[belief(&[0.5, 0.5]), AdversaryBelief::uniform(3)]).is_err());
    }

    #[test]
    fn pessimistic_examples() {
        let truth = 3;
        let mut roster: Vec<_> = (0..5).map(|_| AdversaryBelief::<f64>::one_hot(4, 0)).collect();
        assert!(!pessimistic_hit(&roster, truth));
        roster.push(AdversaryBelief::one_hot(4, 3));
        assert!(pessimistic_hit(&roster, truth));
        let single = [belief(&[0.2, 0.8])];
        assert_eq!(pessimistic_hit(&single, 1), adversary_guess(&single[0]) == 1);
    }

    #[test]
    fn rejects_invalid_beliefs() {
        assert!(AdversaryBelief::new(vec![0.5, 0.6]).is_err());
        assert!(AdversaryBelief::new(vec![1.2, -0.2]).is_err());
        assert!(AdversaryBelief::new(vec![1.0]).is_err());
    }

    fn simplex(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01f64..1.0, len).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn collusion_is_permutation_invariant(rows in prop::collection::vec(simplex(5), 1..7), seed in 0u64..1000) {
            let beliefs: Vec<_> = rows.iter().map(|r| belief(r)).collect();
            let mut shuffled = beliefs.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
            let a = collude_combine(&beliefs).unwrap();
            let b = collude_combine(&shuffled).unwrap();
            for (x, y) in a.probs().iter().zip(b.probs()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            prop_assert!((a.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn softmax_rows_are_on_the_simplex(logits in prop::collection::vec(-50.0f64..50.0, 2..12)) {
            let p = softmax(&logits);
            prop_assert!(AdversaryBelief::new(p).is_ok());
        }
    }
}
