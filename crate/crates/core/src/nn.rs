//! Dense layers, activations and the 61→10→4 classifier.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Class, Error, Result};

/// Layer widths of the deployed network: input, hidden, output.
pub const STANDARD_SHAPE: [usize; 3] = [61, 10, 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Relu,
    Softmax,
}

impl Activation {
    pub fn apply(self, z: &[f64]) -> Vec<f64> {
        match self {
            Activation::Sigmoid => sigmoid(z),
            Activation::Relu => relu(z),
            Activation::Softmax => softmax(z),
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Sigmoid => 0,
            Activation::Relu => 1,
            Activation::Softmax => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Sigmoid),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Softmax),
            _ => None,
        }
    }
}

/// Hidden/output activation pairing of the two-layer network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "sigmoid-sigmoid")]
    SigmoidSigmoid,
    #[serde(rename = "relu-sigmoid")]
    ReluSigmoid,
    #[serde(rename = "relu-softmax")]
    ReluSoftmax,
    #[serde(rename = "sigmoid-softmax")]
    SigmoidSoftmax,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::SigmoidSigmoid,
        Variant::ReluSigmoid,
        Variant::ReluSoftmax,
        Variant::SigmoidSoftmax,
    ];

    pub fn activations(self) -> [Activation; 2] {
        use Activation::*;
        match self {
            Variant::SigmoidSigmoid => [Sigmoid, Sigmoid],
            Variant::ReluSigmoid => [Relu, Sigmoid],
            Variant::ReluSoftmax => [Relu, Softmax],
            Variant::SigmoidSoftmax => [Sigmoid, Softmax],
        }
    }

    pub fn from_activations(hidden: Activation, output: Activation) -> Option<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.activations() == [hidden, output])
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::SigmoidSigmoid => "sigmoid-sigmoid",
            Variant::ReluSigmoid => "relu-sigmoid",
            Variant::ReluSoftmax => "relu-softmax",
            Variant::SigmoidSoftmax => "sigmoid-softmax",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                format!(
                    "unknown variant `{s}`; expected one of: sigmoid-sigmoid, relu-sigmoid, relu-softmax, sigmoid-softmax"
                )
            })
    }
}

#[inline]
pub fn sigmoid_scalar(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&v| sigmoid_scalar(v)).collect()
}

pub fn relu(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&v| v.max(0.0)).collect()
}

/// Two-pass softmax (sum of exponentials, then normalize) with the maximum
/// subtracted first.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for &v in z {
        sum += (v - max).exp();
    }
    z.iter().map(|&v| (v - max).exp() / sum).collect()
}

/// Fully connected layer. `weights` is row-major with shape
/// `(fan_in, fan_out)`, so `weights[i * fan_out + j]` connects input `i` to
/// output `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(
        fan_in: usize,
        fan_out: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        let layer = DenseLayer {
            fan_in,
            fan_out,
            weights,
            bias,
            activation,
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn zeros(fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        DenseLayer {
            fan_in,
            fan_out,
            weights: vec![0.0; fan_in * fan_out],
            bias: vec![0.0; fan_out],
            activation,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(
        fan_in: usize,
        fan_out: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut layer = DenseLayer::zeros(fan_in, fan_out, activation);
        for w in &mut layer.weights {
            *w = rng.random_range(-limit..=limit);
        }
        layer
    }

    pub fn validate(&self) -> Result<()> {
        if self.fan_in == 0 || self.fan_out == 0 {
            return Err(Error::shape("non-empty layer", format!("{}x{}", self.fan_in, self.fan_out)));
        }
        if self.weights.len() != self.fan_in * self.fan_out {
            return Err(Error::shape(
                format!("{} weights", self.fan_in * self.fan_out),
                self.weights.len(),
            ));
        }
        if self.bias.len() != self.fan_out {
            return Err(Error::shape(format!("{} biases", self.fan_out), self.bias.len()));
        }
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::Config("layer parameters must be finite".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// `2 · fan_in · fan_out + fan_out`: a multiply and an add per weight,
    /// plus one bias add per output.
    pub fn flops(&self) -> usize {
        2 * self.fan_in * self.fan_out + self.fan_out
    }

    /// Pre-activation `input · W + b`.
    pub fn affine(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.fan_in {
            return Err(Error::shape(format!("input of length {}", self.fan_in), input.len()));
        }
        let mut z = self.bias.clone();
        for (x, row) in input.iter().zip(self.weights.chunks_exact(self.fan_out)) {
            for (zj, w) in z.iter_mut().zip(row) {
                *zj += x * w;
            }
        }
        Ok(z)
    }
}

pub fn layer_forward(input: &[f64], layer: &DenseLayer) -> Result<Vec<f64>> {
    Ok(layer.activation.apply(&layer.affine(input)?))
}

/// Stack of dense layers. The deployed model is two layers of shape
/// [`STANDARD_SHAPE`]; other shapes exist for distillation students and
/// test fixtures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseModel {
    layers: Vec<DenseLayer>,
}

impl DenseModel {
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("at least one layer", 0));
        }
        for l in &layers {
            l.validate()?;
        }
        for pair in layers.windows(2) {
            if pair[0].fan_out != pair[1].fan_in {
                return Err(Error::shape(
                    format!("layer input of {}", pair[0].fan_out),
                    pair[1].fan_in,
                ));
            }
        }
        if layers[..layers.len() - 1]
            .iter()
            .any(|l| l.activation == Activation::Softmax)
        {
            return Err(Error::Config("softmax is only supported on the output layer".into()));
        }
        Ok(DenseModel { layers })
    }

    /// Initialized model with widths `shape` (input first).
    pub fn glorot<R: Rng + ?Sized>(variant: Variant, shape: [usize; 3], rng: &mut R) -> Self {
        let [h, o] = variant.activations();
        DenseModel {
            layers: vec![
                DenseLayer::glorot(shape[0], shape[1], h, rng),
                DenseLayer::glorot(shape[1], shape[2], o, rng),
            ],
        }
    }

    pub fn zeros(variant: Variant, shape: [usize; 3]) -> Self {
        let [h, o] = variant.activations();
        DenseModel {
            layers: vec![
                DenseLayer::zeros(shape[0], shape[1], h),
                DenseLayer::zeros(shape[1], shape[2], o),
            ],
        }
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_len(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out
    }

    /// Widths from input to output.
    pub fn shape(&self) -> Vec<usize> {
        std::iter::once(self.input_len())
            .chain(self.layers.iter().map(|l| l.fan_out))
            .collect()
    }

    pub fn variant(&self) -> Option<Variant> {
        match self.layers.as_slice() {
            [a, b] => Variant::from_activations(a.activation, b.activation),
            _ => None,
        }
    }

    pub fn is_standard(&self) -> bool {
        self.shape() == STANDARD_SHAPE && self.variant().is_some()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    pub fn flops(&self) -> usize {
        self.layers.iter().map(DenseLayer::flops).sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut a = layer_forward(input, &self.layers[0])?;
        for l in &self.layers[1..] {
            a = layer_forward(&a, l)?;
        }
        Ok(a)
    }
}

pub fn model_forward(model: &DenseModel, beat: &[f64]) -> Result<Vec<f64>> {
    model.forward(beat)
}

/// Index of the largest output; ties go to the lowest index.
pub fn argmax(outputs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in outputs.iter().enumerate().skip(1) {
        if v > outputs[best] {
            best = i;
        }
    }
    best
}

/// Reads a 4-way output vector as a class in `[N, S, V, F]` order.
pub fn class_of(outputs: &[f64]) -> Result<Class> {
    if outputs.len() != Class::COUNT {
        return Err(Error::shape("4 outputs", outputs.len()));
    }
    Ok(Class::from_index(argmax(outputs)).expect("index below 4"))
}

pub fn predict(model: &DenseModel, beat: &[f64]) -> Result<Class> {
    class_of(&model.forward(beat)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(&[0.0]), vec![0.5]);
        assert_relative_eq!(sigmoid(&[3f64.ln()])[0], 0.75, max_relative = 1e-15);
        let s = sigmoid(&[-1000.0, 1000.0]);
        assert!(s[0] >= 0.0 && s[0] < 1e-300 && s[0].is_finite());
        assert_eq!(s[1], 1.0);
        assert!(sigmoid(&[-700.0])[0] > 0.0);
    }

    #[test]
    fn relu_values() {
        assert_eq!(relu(&[-3.0]), vec![0.0]);
        assert_eq!(relu(&[5.0]), vec![5.0]);
        assert_eq!(relu(&[-1.0, 0.0, 2.0]), vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_values() {
        assert_eq!(softmax(&[1.3; 4]), vec![0.25; 4]);
        let s = softmax(&[2f64.ln(), 0.0]);
        assert_relative_eq!(s[0], 2.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(s[1], 1.0 / 3.0, max_relative = 1e-15);
        let s = softmax(&[1000.0, 0.0]);
        assert_eq!(s, vec![1.0, (-1000f64).exp()]);
    }

    #[test]
    fn layer_cases() {
        let l = DenseLayer::zeros(3, 2, Activation::Sigmoid);
        assert_eq!(layer_forward(&[0.0; 3], &l).unwrap(), vec![0.5, 0.5]);
        let id = DenseLayer::new(1, 1, vec![1.0], vec![0.0], Activation::Relu).unwrap();
        assert_eq!(layer_forward(&[7.0], &id).unwrap(), vec![7.0]);
        // [1, 2] · [[1, -1], [0.5, 2]] + [0.25, -4] = [2.25, -1]
        let l = DenseLayer::new(2, 2, vec![1.0, -1.0, 0.5, 2.0], vec![0.25, -4.0], Activation::Relu)
            .unwrap();
        assert_eq!(layer_forward(&[1.0, 2.0], &l).unwrap(), vec![2.25, 0.0]);
        assert!(matches!(layer_forward(&[1.0], &l), Err(Error::Shape { .. })));
        assert!(DenseLayer::new(2, 2, vec![1.0], vec![0.0, 0.0], Activation::Relu).is_err());
        assert!(DenseLayer::new(1, 1, vec![f64::NAN], vec![0.0], Activation::Relu).is_err());
    }

    #[test]
    fn standard_model_counts() {
        let m = DenseModel::zeros(Variant::SigmoidSigmoid, STANDARD_SHAPE);
        assert_eq!(m.param_count(), 664);
        assert_eq!(m.layers()[0].param_count(), 620);
        assert_eq!(m.layers()[1].param_count(), 44);
        assert_eq!(m.flops(), 1314);
        assert_eq!(m.layers()[0].flops(), 1230);
        assert_eq!(m.layers()[1].flops(), 84);
        assert!(m.is_standard());
    }

    #[test]
    fn zero_model_closed_form() {
        let mut m = DenseModel::zeros(Variant::SigmoidSigmoid, STANDARD_SHAPE);
        let out = m.forward(&[0.0; 61]).unwrap();
        assert_eq!(out, vec![0.5; 4]);
        // Layer 1 stays at 0.5; give layer 2 a bias and unit weights.
        let l2 = &mut m.layers_mut()[1];
        l2.bias = vec![-1.0, 0.0, 1.0, 2.0];
        l2.weights = vec![1.0; 40];
        let out = m.forward(&[0.0; 61]).unwrap();
        for (o, b) in out.iter().zip([-1.0, 0.0, 1.0, 2.0]) {
            assert_relative_eq!(*o, sigmoid_scalar(b + 10.0 * 0.5), max_relative = 1e-15);
        }
    }

    #[test]
    fn model_validation() {
        let mut rng = rand::rng();
        let a = DenseLayer::glorot(3, 2, Activation::Softmax, &mut rng);
        let b = DenseLayer::glorot(2, 4, Activation::Sigmoid, &mut rng);
        assert!(DenseModel::from_layers(vec![a.clone(), b.clone()]).is_err());
        let c = DenseLayer::glorot(3, 4, Activation::Sigmoid, &mut rng);
        assert!(DenseModel::from_layers(vec![c, b]).is_err());
        assert!(DenseModel::from_layers(vec![]).is_err());
    }

    /// Weights `0.3·sin(7i + 3j + 1)`, biases `0.1·cos(j)`, input
    /// `|sin(0.5k)|`.
    fn fixture(variant: Variant) -> DenseModel {
        let [h, o] = variant.activations();
        let mk = |fan_in: usize, fan_out: usize, act, off: f64| {
            let w = (0..fan_in * fan_out)
                .map(|k| {
                    let (i, j) = (k / fan_out, k % fan_out);
                    0.3 * ((7 * i + 3 * j) as f64 + 1.0 + off).sin()
                })
                .collect();
            let b = (0..fan_out).map(|j| 0.1 * (j as f64 + off).cos()).collect();
            DenseLayer::new(fan_in, fan_out, w, b, act).unwrap()
        };
        DenseModel::from_layers(vec![mk(61, 10, h, 0.0), mk(10, 4, o, 0.5)]).unwrap()
    }

    fn fixture_beat() -> Vec<f64> {
        (0..61).map(|k| (0.5 * k as f64).sin().abs()).collect()
    }

    #[test]
    fn fixture_matches_high_precision_oracle() {
        // 50-digit mpmath evaluation of the same fixture.
        let expected: [(Variant, [f64; 4]); 4] = include!("../tests/data/forward_oracle.in");
        for (variant, want) in expected {
            let got = fixture(variant).forward(&fixture_beat()).unwrap();
            for (g, w) in got.iter().zip(want) {
                assert!((g - w).abs() < 1e-6, "{variant}: {g} vs {w}");
            }
        }
    }

    #[test]
    fn predict_readout() {
        assert_eq!(class_of(&[0.9, 0.1, 0.2, 0.3]).unwrap(), Class::N);
        assert_eq!(class_of(&[0.5, 0.5, 0.1, 0.1]).unwrap(), Class::N);
        assert_eq!(class_of(&[0.1, 0.2, 0.8, 0.3]).unwrap(), Class::V);
        assert_eq!(class_of(&[0.1, 0.2, 0.3, 0.3]).unwrap(), Class::V);
        assert!(class_of(&[1.0]).is_err());
        let m = fixture(Variant::ReluSoftmax);
        let out = m.forward(&fixture_beat()).unwrap();
        assert_eq!(predict(&m, &fixture_beat()).unwrap().index(), argmax(&out));
    }

    #[test]
    fn variant_names() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        let err = "tanh-sigmoid".parse::<Variant>().unwrap_err();
        assert!(err.contains("relu-softmax"));
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_equivariant(
            z in proptest::collection::vec(-50.0f64..50.0, 1..8),
            shift in 0usize..8,
        ) {
            let s = softmax(&z);
            prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let mut rot = z.clone();
            rot.rotate_left(shift % z.len());
            let mut s_rot = s.clone();
            s_rot.rotate_left(shift % z.len());
            for (a, b) in softmax(&rot).iter().zip(&s_rot) {
                prop_assert!((a - b).abs() < 1e-15);
            }
        }

        #[test]
        fn sigmoid_and_relu_ranges(z in proptest::collection::vec(-30.0f64..30.0, 1..16)) {
            prop_assert!(sigmoid(&z).iter().all(|&v| v > 0.0 && v < 1.0));
            let r = relu(&z);
            prop_assert!(r.iter().all(|&v| v >= 0.0));
            prop_assert_eq!(relu(&r), r);
        }

        #[test]
        fn sigmoid_outputs_need_not_sum_to_one(beat in proptest::collection::vec(0.0f64..2.0, 61)) {
            let out = fixture(Variant::SigmoidSigmoid).forward(&beat).unwrap();
            prop_assert!(out.iter().all(|&v| v > 0.0 && v < 1.0));
            let soft = fixture(Variant::ReluSoftmax).forward(&beat).unwrap();
            prop_assert!((soft.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn argmax_invariant_under_monotone_map(out in proptest::collection::vec(-5.0f64..5.0, 4)) {
            let mapped: Vec<f64> = out.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(class_of(&out).unwrap(), class_of(&mapped).unwrap());
        }
    }
}
