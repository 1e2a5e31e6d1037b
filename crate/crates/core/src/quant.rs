//! Post-training int8 quantization with one global scale, inference with
//! temporary dequantization, and FLOP/SRAM accounting.
//!
//! The affine map is `x = s·(x_q + z)` with `x_q ∈ [−127, 127]`. Symmetric
//! mode pins `z = 0` so that zero survives exactly.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::nn::{Activation, DenseLayer, DenseModel, Variant};
use crate::{Error, Result};

pub const Q_MIN: i32 = -127;
pub const Q_MAX: i32 = 127;

/// Bytes of SRAM available on the target.
pub const SRAM_BUDGET_BYTES: usize = 2048;
/// Signal samples held by the streaming buffer.
pub const BUFFER_SAMPLES: usize = 150;
/// Bytes per buffered sample (one 32-bit real).
pub const SAMPLE_BYTES: usize = 4;
/// Overhead charged for the one temporarily dequantized parameter, as
/// tabulated for the reference device.
pub const TEMP_DEQUANT_REPORTED_BYTES: usize = 3;
/// Size of one 32-bit real, the working set actually needed.
pub const TEMP_DEQUANT_ACTUAL_BYTES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantMode {
    Symmetric,
    Asymmetric,
}

impl QuantMode {
    pub(crate) fn code(self) -> u8 {
        match self {
            QuantMode::Symmetric => 0,
            QuantMode::Asymmetric => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(QuantMode::Symmetric),
            1 => Some(QuantMode::Asymmetric),
            _ => None,
        }
    }
}

impl fmt::Display for QuantMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QuantMode::Symmetric => "symmetric",
            QuantMode::Asymmetric => "asymmetric",
        })
    }
}

impl std::str::FromStr for QuantMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "symmetric" | "sym" => Ok(QuantMode::Symmetric),
            "asymmetric" | "asym" => Ok(QuantMode::Asymmetric),
            _ => Err(Error::Config(format!(
                "unknown quantization mode {s:?}; expected symmetric or asymmetric"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scale: f64,
    pub zero_point: i32,
    pub alpha: f64,
    pub beta: f64,
    pub mode: QuantMode,
}

impl QuantParams {
    /// Parameters for the clip range `[α, β]`.
    pub fn from_range(alpha: f64, beta: f64, mode: QuantMode) -> Result<Self> {
        let (alpha, beta) = match mode {
            QuantMode::Symmetric => {
                let m = alpha.abs().max(beta.abs());
                (-m, m)
            }
            QuantMode::Asymmetric => (alpha, beta),
        };
        if !(alpha.is_finite() && beta.is_finite()) || beta <= alpha {
            return Err(Error::DegenerateRange);
        }
        let scale = (beta - alpha) / f64::from(Q_MAX - Q_MIN);
        let zero_point = match mode {
            QuantMode::Symmetric => 0,
            QuantMode::Asymmetric => (alpha / scale - f64::from(Q_MIN)).round() as i32,
        };
        Ok(QuantParams {
            scale,
            zero_point,
            alpha,
            beta,
            mode,
        })
    }

    /// Symmetric parameters for `max |param| = beta`.
    pub fn symmetric(beta: f64) -> Result<Self> {
        Self::from_range(-beta, beta, QuantMode::Symmetric)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Format(format!("invalid scale {}", self.scale)));
        }
        if self.mode == QuantMode::Symmetric && self.zero_point != 0 {
            return Err(Error::Format("symmetric mode requires zero point 0".into()));
        }
        Ok(())
    }
}

/// Global clip range over every parameter of `model`.
pub fn compute_qparams(model: &DenseModel, mode: QuantMode) -> Result<QuantParams> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in model.params() {
        if !p.is_finite() {
            return Err(Error::Config(format!("non-finite parameter {p}")));
        }
        lo = lo.min(p);
        hi = hi.max(p);
    }
    if lo == hi && (mode == QuantMode::Asymmetric || lo == 0.0) {
        return Err(Error::DegenerateRange);
    }
    QuantParams::from_range(lo, hi, mode)
}

/// `clamp(round(x/s) − z, −127, 127)`, rounding half away from zero.
pub fn quantize(x: f64, q: &QuantParams) -> i8 {
    let v = (x / q.scale).round() - f64::from(q.zero_point);
    v.clamp(f64::from(Q_MIN), f64::from(Q_MAX)) as i8
}

/// `s·(x_q + z)`.
pub fn dequantize(x_q: i8, q: &QuantParams) -> f64 {
    q.scale * (f64::from(x_q) + f64::from(q.zero_point))
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantLayer {
    pub(crate) fan_in: usize,
    pub(crate) fan_out: usize,
    pub(crate) weights: Vec<i8>,
    pub(crate) bias: Vec<i8>,
    pub(crate) activation: Activation,
}

impl QuantLayer {
    pub fn new(
        fan_in: usize,
        fan_out: usize,
        weights: Vec<i8>,
        bias: Vec<i8>,
        activation: Activation,
    ) -> Result<Self> {
        if weights.len() != fan_in * fan_out {
            return Err(Error::shape(format!("{} weights", fan_in * fan_out), weights.len()));
        }
        if bias.len() != fan_out {
            return Err(Error::shape(format!("{fan_out} biases"), bias.len()));
        }
        if weights.iter().chain(&bias).any(|&v| i32::from(v) < Q_MIN) {
            return Err(Error::Format("int8 value -128 is outside [-127, 127]".into()));
        }
        Ok(QuantLayer {
            fan_in,
            fan_out,
            weights,
            bias,
            activation,
        })
    }

    pub fn fan_in(&self) -> usize {
        self.fan_in
    }

    pub fn fan_out(&self) -> usize {
        self.fan_out
    }

    /// Row-major `w[i * fan_out + j]`.
    pub fn weights(&self) -> &[i8] {
        &self.weights
    }

    pub fn bias(&self) -> &[i8] {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Int8 parameters with a single global [`QuantParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    layers: Vec<QuantLayer>,
    qparams: QuantParams,
}

impl QuantizedModel {
    pub fn from_parts(layers: Vec<QuantLayer>, qparams: QuantParams) -> Result<Self> {
        qparams.validate()?;
        // Reuse the float model's structural checks.
        let shadow: Vec<DenseLayer> = layers
            .iter()
            .map(|l| DenseLayer::zeros(l.fan_in, l.fan_out, l.activation))
            .collect();
        DenseModel::from_layers(shadow)?;
        Ok(QuantizedModel { layers, qparams })
    }

    pub fn layers(&self) -> &[QuantLayer] {
        &self.layers
    }

    pub fn qparams(&self) -> &QuantParams {
        &self.qparams
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(QuantLayer::param_count).sum()
    }

    pub fn shape(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].fan_in];
        s.extend(self.layers.iter().map(|l| l.fan_out));
        s
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn variant(&self) -> Option<Variant> {
        match self.layers.as_slice() {
            [a, b] => Variant::from_activations(a.activation, b.activation),
            _ => None,
        }
    }

    pub fn params(&self) -> impl Iterator<Item = i8> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_len() {
            return Err(Error::shape(format!("input of length {}", self.input_len()), x.len()));
        }
        Ok(())
    }
}

pub fn quantize_model(model: &DenseModel, mode: QuantMode) -> Result<QuantizedModel> {
    let q = compute_qparams(model, mode)?;
    quantize_model_with(model, q)
}

/// Quantizes with caller-supplied parameters.
pub fn quantize_model_with(model: &DenseModel, q: QuantParams) -> Result<QuantizedModel> {
    let layers = model
        .layers()
        .iter()
        .map(|l| QuantLayer {
            fan_in: l.fan_in,
            fan_out: l.fan_out,
            weights: l.weights.iter().map(|&w| quantize(w, &q)).collect(),
            bias: l.bias.iter().map(|&b| quantize(b, &q)).collect(),
            activation: l.activation,
        })
        .collect();
    QuantizedModel::from_parts(layers, q)
}

/// Float model whose parameters are `dequantize(x_q)`.
pub fn dequantize_model(qmodel: &QuantizedModel) -> Result<DenseModel> {
    let q = qmodel.qparams;
    let layers = qmodel
        .layers
        .iter()
        .map(|l| {
            DenseLayer::new(
                l.fan_in,
                l.fan_out,
                l.weights.iter().map(|&w| dequantize(w, &q)).collect(),
                l.bias.iter().map(|&b| dequantize(b, &q)).collect(),
                l.activation,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    DenseModel::from_layers(layers)
}

/// Forward pass that rescales one product at a time: each matmul term is
/// `s·(x_i·w_q + z)` and each bias enters as `s·(b_q + z)`. Accumulates in
/// f64.
pub fn forward_temporary_dequantized(qmodel: &QuantizedModel, beat: &[f64]) -> Result<Vec<f64>> {
    qmodel.check_input(beat)?;
    let (s, z) = (qmodel.qparams.scale, f64::from(qmodel.qparams.zero_point));
    let mut x = beat.to_vec();
    for l in &qmodel.layers {
        let mut acc = vec![0.0f64; l.fan_out];
        for (i, xi) in x.iter().enumerate() {
            let row = &l.weights[i * l.fan_out..(i + 1) * l.fan_out];
            for (a, &w) in acc.iter_mut().zip(row) {
                *a += s * (xi * f64::from(w) + z);
            }
        }
        for (a, &b) in acc.iter_mut().zip(&l.bias) {
            *a += s * (f64::from(b) + z);
        }
        x = l.activation.apply(&acc);
    }
    Ok(x)
}

/// As [`forward_temporary_dequantized`] with every intermediate in 32-bit
/// reals, emulating the microcontroller arithmetic.
pub fn forward_temporary_dequantized_f32(qmodel: &QuantizedModel, beat: &[f64]) -> Result<Vec<f64>> {
    qmodel.check_input(beat)?;
    let (s, z) = (qmodel.qparams.scale as f32, qmodel.qparams.zero_point as f32);
    let mut x: Vec<f32> = beat.iter().map(|&v| v as f32).collect();
    for l in &qmodel.layers {
        let mut acc = vec![0.0f32; l.fan_out];
        for (i, xi) in x.iter().enumerate() {
            let row = &l.weights[i * l.fan_out..(i + 1) * l.fan_out];
            for (a, &w) in acc.iter_mut().zip(row) {
                *a += s * (xi * f32::from(w) + z);
            }
        }
        for (a, &b) in acc.iter_mut().zip(&l.bias) {
            *a += s * (f32::from(b) + z);
        }
        x = activate_f32(l.activation, &acc);
    }
    Ok(x.into_iter().map(f64::from).collect())
}

fn activate_f32(act: Activation, z: &[f32]) -> Vec<f32> {
    match act {
        Activation::Sigmoid => z
            .iter()
            .map(|&v| {
                if v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                }
            })
            .collect(),
        Activation::Relu => z.iter().map(|&v| v.max(0.0)).collect(),
        Activation::Softmax => {
            let m = z.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let e: Vec<f32> = z.iter().map(|&v| (v - m).exp()).collect();
            let sum: f32 = e.iter().sum();
            e.into_iter().map(|v| v / sum).collect()
        }
    }
}

/// Forward pass that treats the stored integers as the parameters, with no
/// rescaling.
pub fn forward_quantized_only(qmodel: &QuantizedModel, beat: &[f64]) -> Result<Vec<f64>> {
    qmodel.check_input(beat)?;
    let mut x = beat.to_vec();
    for l in &qmodel.layers {
        let mut acc: Vec<f64> = l.bias.iter().map(|&b| f64::from(b)).collect();
        for (i, xi) in x.iter().enumerate() {
            let row = &l.weights[i * l.fan_out..(i + 1) * l.fan_out];
            for (a, &w) in acc.iter_mut().zip(row) {
                *a += xi * f64::from(w);
            }
        }
        x = l.activation.apply(&acc);
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub fan_in: usize,
    pub fan_out: usize,
    pub params: usize,
    pub flops: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub layers: Vec<LayerCost>,
    pub total_params: usize,
    pub total_flops: usize,
}

/// Per-layer work for a dense stack with widths `shape` (input first).
pub fn flops_report(shape: &[usize]) -> Result<FlopsReport> {
    if shape.len() < 2 || shape.contains(&0) {
        return Err(Error::Config(format!("invalid layer shape {shape:?}")));
    }
    let layers: Vec<LayerCost> = shape
        .windows(2)
        .map(|w| LayerCost {
            fan_in: w[0],
            fan_out: w[1],
            params: w[0] * w[1] + w[1],
            flops: 2 * w[0] * w[1] + w[1],
        })
        .collect();
    Ok(FlopsReport {
        total_params: layers.iter().map(|l| l.params).sum(),
        total_flops: layers.iter().map(|l| l.flops).sum(),
        layers,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub layer_params: Vec<usize>,
    /// One byte per int8 parameter.
    pub param_bytes: usize,
    pub temp_dequant_bytes: usize,
    /// `param_bytes + temp_dequant_bytes`.
    pub model_bytes: usize,
    pub buffer_bytes: usize,
    pub total_bytes: usize,
    pub budget_bytes: usize,
    pub over_budget: bool,
    /// Size of the real value that is actually live during temporary
    /// dequantization.
    pub actual_temp_dequant_bytes: usize,
}

impl MemoryReport {
    /// Accounting for a quantized dense stack with widths `shape`.
    pub fn for_shape(shape: &[usize]) -> Result<Self> {
        let flops = flops_report(shape)?;
        let layer_params: Vec<usize> = flops.layers.iter().map(|l| l.params).collect();
        let param_bytes = flops.total_params;
        let model_bytes = param_bytes + TEMP_DEQUANT_REPORTED_BYTES;
        let buffer_bytes = BUFFER_SAMPLES * SAMPLE_BYTES;
        let total_bytes = model_bytes + buffer_bytes;
        Ok(MemoryReport {
            layer_params,
            param_bytes,
            temp_dequant_bytes: TEMP_DEQUANT_REPORTED_BYTES,
            model_bytes,
            buffer_bytes,
            total_bytes,
            budget_bytes: SRAM_BUDGET_BYTES,
            over_budget: total_bytes > SRAM_BUDGET_BYTES,
            actual_temp_dequant_bytes: TEMP_DEQUANT_ACTUAL_BYTES,
        })
    }
}

pub fn memory_report(qmodel: &QuantizedModel) -> MemoryReport {
    MemoryReport::for_shape(&qmodel.shape()).expect("validated shape")
}

/// Combined cost report, printable as text tables or JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub flops: FlopsReport,
    pub memory: MemoryReport,
}

impl CostReport {
    pub fn for_model(qmodel: &QuantizedModel) -> Self {
        let shape = qmodel.shape();
        CostReport {
            flops: flops_report(&shape).expect("validated shape"),
            memory: memory_report(qmodel),
        }
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<8}{:>10}{:>12}{:>10}", "layer", "shape", "parameters", "flops");
        for (i, l) in self.flops.layers.iter().enumerate() {
            let shape = format!("{}x{}", l.fan_in, l.fan_out);
            let _ = writeln!(s, "{:<8}{:>10}{:>12}{:>10}", i + 1, shape, l.params, l.flops);
        }
        let _ = writeln!(
            s,
            "{:<8}{:>10}{:>12}{:>10}",
            "total", "", self.flops.total_params, self.flops.total_flops
        );
        let _ = writeln!(s);
        let m = &self.memory;
        let _ = writeln!(s, "{:<34}{:>8}", "component", "bytes");
        let _ = writeln!(s, "{:<34}{:>8}", "model parameters (int8)", m.param_bytes);
        let _ = writeln!(s, "{:<34}{:>8}", "temporary dequantization", m.temp_dequant_bytes);
        let _ = writeln!(s, "{:<34}{:>8}", "model total", m.model_bytes);
        let _ = writeln!(
            s,
            "{:<34}{:>8}",
            format!("signal buffer ({BUFFER_SAMPLES} x {SAMPLE_BYTES})"),
            m.buffer_bytes
        );
        let _ = writeln!(s, "{:<34}{:>8}", "total", m.total_bytes);
        let _ = writeln!(s, "{:<34}{:>8}", "budget", m.budget_bytes);
        let _ = writeln!(
            s,
            "status: {} (live dequantized value occupies {} bytes)",
            if m.over_budget { "OVER BUDGET" } else { "within budget" },
            m.actual_temp_dequant_bytes
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::BEAT_LEN;
    use crate::nn::STANDARD_SHAPE;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const BETA: f64 = 64.74442;

    fn table8() -> QuantParams {
        QuantParams::symmetric(BETA).unwrap()
    }

    #[test]
    fn published_scale_and_round_trips() {
        let q = table8();
        assert_abs_diff_eq!(q.scale, 129.48884 / 254.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.scale, 0.509799, epsilon = 1e-6);
        assert_eq!(q.zero_point, 0);
        for (x, xq, back) in [
            (-56.74, -111, -56.59),
            (-1.58, -3, -1.53),
            (14.58, 29, 14.78),
            (-17.0, -33, -16.82),
        ] {
            assert_eq!(quantize(x, &q), xq);
            assert_abs_diff_eq!(dequantize(xq, &q), back, epsilon = 0.01);
        }
        assert_eq!(quantize(0.0, &q), 0);
        assert_eq!(dequantize(0, &q), 0.0);
        assert_eq!(quantize(BETA, &q), 127);
        assert_eq!(quantize(-1e9, &q), -127);
    }

    #[test]
    fn qparams_from_models() {
        let mut m = DenseModel::zeros(Variant::SigmoidSigmoid, STANDARD_SHAPE);
        assert!(matches!(
            compute_qparams(&m, QuantMode::Symmetric),
            Err(Error::DegenerateRange)
        ));
        m.layers_mut()[0].weights[3] = -1.0;
        m.layers_mut()[1].bias[2] = 0.5;
        let q = compute_qparams(&m, QuantMode::Symmetric).unwrap();
        assert_abs_diff_eq!(q.scale, 2.0 / 254.0, epsilon = 1e-16);
        assert_eq!((q.alpha, q.beta), (-1.0, 1.0));

        let q = QuantParams::from_range(0.0, 10.0, QuantMode::Asymmetric).unwrap();
        assert_abs_diff_eq!(q.scale, 10.0 / 254.0, epsilon = 1e-16);
        assert_eq!(q.zero_point, 127);
        assert_eq!(quantize(0.0, &q), -127);
        assert_eq!(quantize(10.0, &q), 127);
        assert_abs_diff_eq!(dequantize(-127, &q), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(dequantize(127, &q), 10.0, epsilon = 1e-12);
    }

    fn random_model(variant: Variant, rng: &mut ChaCha8Rng) -> DenseModel {
        let mut m = DenseModel::glorot(variant, STANDARD_SHAPE, rng);
        for p in m.params_mut() {
            *p = rng.random_range(-3.0..3.0);
        }
        m
    }

    #[test]
    fn model_round_trip_and_zero_preservation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m = random_model(Variant::SigmoidSigmoid, &mut rng);
        m.layers_mut()[0].weights[0] = 0.0;
        let qm = quantize_model(&m, QuantMode::Symmetric).unwrap();
        assert_eq!(qm.param_count(), 664);
        assert_eq!(qm.layers()[0].weights()[0], 0);
        assert_eq!(qm.variant(), Some(Variant::SigmoidSigmoid));
        let s = qm.qparams().scale;
        let back = dequantize_model(&qm).unwrap();
        for (a, b) in m.params().zip(back.params()) {
            assert!((a - b).abs() <= s / 2.0 + 1e-12);
        }
    }

    #[test]
    fn temporary_dequantization_matches_dequantized_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for variant in Variant::ALL {
            for _ in 0..20 {
                let m = random_model(variant, &mut rng);
                let qm = quantize_model(&m, QuantMode::Symmetric).unwrap();
                let deq = dequantize_model(&qm).unwrap();
                let beat: Vec<f64> = (0..BEAT_LEN).map(|_| rng.random_range(0.0..1.0)).collect();
                let a = forward_temporary_dequantized(&qm, &beat).unwrap();
                let b = deq.forward(&beat).unwrap();
                let c = forward_temporary_dequantized_f32(&qm, &beat).unwrap();
                for ((x, y), w) in a.iter().zip(&b).zip(&c) {
                    assert_abs_diff_eq!(x, y, epsilon = 1e-9);
                    assert_abs_diff_eq!(x, w, epsilon = 1e-4);
                }
            }
        }
        let qm = quantize_model(&random_model(Variant::ReluSigmoid, &mut rng), QuantMode::Symmetric)
            .unwrap();
        assert!(forward_temporary_dequantized(&qm, &[0.0; 3]).is_err());
        assert!(forward_quantized_only(&qm, &[0.0; 60]).is_err());
    }

    #[test]
    fn all_zero_quantized_model() {
        let q = table8();
        let layers = vec![
            QuantLayer::new(61, 10, vec![0; 610], vec![0; 10], Activation::Sigmoid).unwrap(),
            QuantLayer::new(10, 4, vec![0; 40], vec![0; 4], Activation::Sigmoid).unwrap(),
        ];
        let qm = QuantizedModel::from_parts(layers, q).unwrap();
        let beat = vec![0.7; 61];
        assert_eq!(forward_temporary_dequantized(&qm, &beat).unwrap(), vec![0.5; 4]);
        let zero = DenseModel::zeros(Variant::SigmoidSigmoid, STANDARD_SHAPE);
        assert_eq!(forward_quantized_only(&qm, &beat).unwrap(), zero.forward(&beat).unwrap());
    }

    #[test]
    fn quantized_only_uses_raw_integers() {
        let layers = vec![
            QuantLayer::new(2, 1, vec![3, -2], vec![5], Activation::Relu).unwrap(),
            QuantLayer::new(1, 4, vec![1, 2, -1, 0], vec![0, 0, 100, 1], Activation::Relu).unwrap(),
        ];
        let qm = QuantizedModel::from_parts(layers, table8()).unwrap();
        let mut beat = vec![0.0; 2];
        beat[0] = 0.5;
        beat[1] = 0.25;
        // 0.5·3 − 0.25·2 + 5 = 6
        assert_eq!(forward_quantized_only(&qm, &beat).unwrap(), vec![6.0, 12.0, 94.0, 1.0]);
        assert!(QuantLayer::new(1, 1, vec![-128], vec![0], Activation::Relu).is_err());
    }

    #[test]
    fn published_costs() {
        let f = flops_report(&STANDARD_SHAPE).unwrap();
        assert_eq!(f.layers.iter().map(|l| l.flops).collect::<Vec<_>>(), vec![1230, 84]);
        assert_eq!(f.layers.iter().map(|l| l.params).collect::<Vec<_>>(), vec![620, 44]);
        assert_eq!((f.total_params, f.total_flops), (664, 1314));
        let m = MemoryReport::for_shape(&STANDARD_SHAPE).unwrap();
        assert_eq!(
            (m.param_bytes, m.model_bytes, m.buffer_bytes, m.total_bytes),
            (664, 667, 600, 1267)
        );
        assert!(!m.over_budget);
        assert_eq!(m.actual_temp_dequant_bytes, 4);
        let big = MemoryReport::for_shape(&[61, 20, 20, 4]).unwrap();
        assert_eq!(big.total_bytes, 1240 + 420 + 84 + 3 + 600);
        assert!(big.over_budget);
        assert!(flops_report(&[61]).is_err());
    }

    #[test]
    fn report_table_lists_totals() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let qm = quantize_model(&random_model(Variant::SigmoidSigmoid, &mut rng), QuantMode::Symmetric)
            .unwrap();
        let t = CostReport::for_model(&qm).to_table();
        for needle in ["1230", "84", "1314", "664", "667", "600", "1267", "within budget"] {
            assert!(t.contains(needle), "{needle} missing from\n{t}");
        }
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("Symmetric".parse::<QuantMode>().unwrap(), QuantMode::Symmetric);
        assert_eq!("asym".parse::<QuantMode>().unwrap(), QuantMode::Asymmetric);
        assert!("int4".parse::<QuantMode>().is_err());
        for m in [QuantMode::Symmetric, QuantMode::Asymmetric] {
            assert_eq!(QuantMode::from_code(m.code()), Some(m));
        }
    }

    proptest! {
        #[test]
        fn round_trip_bound(x in -BETA..BETA) {
            let q = table8();
            prop_assert!((x - dequantize(quantize(x, &q), &q)).abs() <= q.scale / 2.0 + 1e-12);
        }

        #[test]
        fn monotone(a in -100.0f64..100.0, b in -100.0f64..100.0) {
            let q = table8();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(quantize(lo, &q) <= quantize(hi, &q));
        }

        #[test]
        fn asymmetric_round_trip(lo in -50.0f64..0.0, width in 0.1f64..100.0, t in 0.0f64..1.0) {
            let q = QuantParams::from_range(lo, lo + width, QuantMode::Asymmetric).unwrap();
            let x = lo + t * width;
            // The integer zero point shifts the grid by at most s/2.
            prop_assert!((x - dequantize(quantize(x, &q), &q)).abs() <= q.scale + 1e-9);
        }
    }
}
