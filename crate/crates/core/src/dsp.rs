//! Pan-Tompkins preprocessing chain.
//!
//! Every stage is causal and length-preserving, so an R-peak annotation index
//! into the raw signal addresses the same position in the preprocessed stream.
//! The batch functions are thin loops over the streaming stages in
//! [`PreprocessChain`], which keeps training-data preparation and live
//! detection numerically identical.

use std::collections::VecDeque;
use std::f64::consts::PI;

use num_complex::Complex64;

use crate::{Error, Result};

/// Window length of the moving-window integrator, in samples.
pub const MWI_WINDOW: usize = 15;

/// Minimum input length accepted by [`derivative`].
pub const DERIVATIVE_MIN_LEN: usize = 5;

/// Pass band of the preprocessing bandpass filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    pub low_cut_hz: f64,
    pub high_cut_hz: f64,
    pub sampling_rate_hz: f64,
}

impl FilterSpec {
    /// The 5-15 Hz QRS band at the given sampling rate.
    pub fn pan_tompkins(sampling_rate_hz: f64) -> Self {
        FilterSpec {
            low_cut_hz: 5.0,
            high_cut_hz: 15.0,
            sampling_rate_hz,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.low_cut_hz > 0.0
            && self.low_cut_hz < self.high_cut_hz
            && self.high_cut_hz < self.sampling_rate_hz / 2.0
            && self.sampling_rate_hz.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "filter band must satisfy 0 < low < high < fs/2, got low={} high={} fs={}",
                self.low_cut_hz, self.high_cut_hz, self.sampling_rate_hz
            )))
        }
    }
}

/// One second-order section in transposed direct form II.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    /// Denominator coefficients a1, a2 (a0 is normalized to 1).
    pub a: [f64; 2],
    s1: f64,
    s2: f64,
}

impl Biquad {
    pub fn new(b: [f64; 3], a: [f64; 2]) -> Self {
        Biquad { b, a, s1: 0.0, s2: 0.0 }
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.s1;
        self.s1 = self.b[1] * x - self.a[0] * y + self.s2;
        self.s2 = self.b[2] * x - self.a[1] * y;
        y
    }

    pub fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Sets the state as if `x` had been applied forever; returns the
    /// steady-state output.
    fn settle(&mut self, x: f64) -> f64 {
        let y = self.dc_gain() * x;
        self.s2 = self.b[2] * x - self.a[1] * y;
        self.s1 = self.b[1] * x - self.a[0] * y + self.s2;
        y
    }

    pub fn response(&self, z_inv: Complex64) -> Complex64 {
        let num = self.b[0] + z_inv * (self.b[1] + z_inv * self.b[2]);
        let den = 1.0 + z_inv * (self.a[0] + z_inv * self.a[1]);
        num / den
    }
}

/// Second-order Butterworth band-pass (fourth-order overall), designed with
/// the bilinear transform and realized as two cascaded biquads.
#[derive(Debug, Clone, PartialEq)]
pub struct Bandpass {
    sections: [Biquad; 2],
    sampling_rate_hz: f64,
    primed: bool,
}

impl Bandpass {
    pub fn new(spec: &FilterSpec) -> Result<Self> {
        spec.validate()?;
        let fs = spec.sampling_rate_hz;
        let c = 2.0 * fs;
        let warp = |f: f64| c * (PI * f / fs).tan();
        let (w1, w2) = (warp(spec.low_cut_hz), warp(spec.high_cut_hz));
        let w0 = (w1 * w2).sqrt();
        let bw = w2 - w1;

        // Upper-half-plane pole of the order-2 lowpass prototype; its mirror
        // image yields the conjugate poles of each section.
        let proto = Complex64::from_polar(1.0, 0.75 * PI);
        let disc = (proto * proto * bw * bw - 4.0 * w0 * w0).sqrt();
        let analog = [(proto * bw + disc) / 2.0, (proto * bw - disc) / 2.0];

        let center = Complex64::from_polar(1.0, -2.0 * (w0 / c).atan());
        let sections = analog.map(|s| {
            let z = (c + s) / (c - s);
            let a = [-2.0 * z.re, z.norm_sqr()];
            let mut sec = Biquad::new([1.0, 0.0, -1.0], a);
            let g = 1.0 / sec.response(center).norm();
            sec.b = [g, 0.0, -g];
            sec
        });
        Ok(Bandpass {
            sections,
            sampling_rate_hz: fs,
            primed: false,
        })
    }

    pub fn sections(&self) -> &[Biquad; 2] {
        &self.sections
    }

    /// Filters one sample. The first sample primes the state at steady state
    /// so a DC offset does not produce a start-up transient.
    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        if !self.primed {
            self.primed = true;
            let mut u = x;
            for sec in &mut self.sections {
                u = sec.settle(u);
            }
        }
        self.sections.iter_mut().fold(x, |u, sec| sec.process(u))
    }

    /// Complex frequency response at `freq_hz`.
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq_hz / self.sampling_rate_hz);
        self.sections
            .iter()
            .map(|s| s.response(z_inv))
            .product()
    }

    /// Group delay in samples at `freq_hz`, by central difference of the
    /// unwrapped phase.
    pub fn group_delay(&self, freq_hz: f64) -> f64 {
        let h = 1e-3;
        let step = (self.response(freq_hz + h) / self.response(freq_hz - h)).arg();
        let dw = 2.0 * PI * 2.0 * h / self.sampling_rate_hz;
        -step / dw
    }
}

/// Five-point derivative `(2x[n] + x[n-1] - x[n-3] - 2x[n-4]) / 8`.
///
/// History before the first sample is clamped to the first sample.
#[derive(Debug, Clone, Default)]
pub struct Derivative {
    // x[n-1], x[n-2], x[n-3], x[n-4]
    history: Option<[f64; 4]>,
}

impl Derivative {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let h = self.history.get_or_insert([x; 4]);
        let y = (2.0 * x + h[0] - h[2] - 2.0 * h[3]) / 8.0;
        *h = [x, h[0], h[1], h[2]];
        y
    }
}

/// Trailing moving-window mean; the first outputs average the available
/// prefix.
#[derive(Debug, Clone)]
pub struct MovingWindowIntegrator {
    window: usize,
    values: VecDeque<f64>,
}

impl MovingWindowIntegrator {
    pub fn new(window: usize) -> Result<Self> {
        if window < 1 {
            return Err(Error::Config("integration window must be at least 1".into()));
        }
        Ok(MovingWindowIntegrator {
            window,
            values: VecDeque::with_capacity(window),
        })
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        if self.values.len() == self.window {
            self.values.pop_front();
        }
        self.values.push_back(x);
        // Summed from scratch each time so the batch and streaming paths
        // cannot drift apart.
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Streaming bandpass → derivative → square → integration.
#[derive(Debug, Clone)]
pub struct PreprocessChain {
    bandpass: Bandpass,
    derivative: Derivative,
    integrator: MovingWindowIntegrator,
}

impl PreprocessChain {
    pub fn new(spec: &FilterSpec) -> Result<Self> {
        Ok(PreprocessChain {
            bandpass: Bandpass::new(spec)?,
            derivative: Derivative::new(),
            integrator: MovingWindowIntegrator::new(MWI_WINDOW)?,
        })
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let d = self.derivative.process(self.bandpass.process(x));
        self.integrator.process(d * d)
    }

    pub fn bandpass(&self) -> &Bandpass {
        &self.bandpass
    }
}

/// Lag, in samples, between the centre of a QRS-like pulse and the peak of
/// its energy hump at the chain output.
///
/// Measured by running the chain on a Gaussian pulse with a 10 ms standard
/// deviation. Detectors subtract it to report R peaks on the input time axis.
pub fn chain_delay(spec: &FilterSpec) -> Result<usize> {
    let fs = spec.sampling_rate_hz;
    let center = (0.5 * fs).round() as usize;
    let sigma = 0.010 * fs;
    let pulse: Vec<f64> = (0..2 * center + 1)
        .map(|i| {
            let t = (i as f64 - center as f64) / sigma;
            (-0.5 * t * t).exp()
        })
        .collect();
    let y = preprocess(&pulse, spec)?;
    let peak = y
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(center);
    Ok(peak.saturating_sub(center))
}

pub fn bandpass(samples: &[f64], spec: &FilterSpec) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("bandpass".into()));
    }
    let mut bp = Bandpass::new(spec)?;
    Ok(samples.iter().map(|&x| bp.process(x)).collect())
}

pub fn derivative(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.len() < DERIVATIVE_MIN_LEN {
        return Err(Error::InputTooShort {
            needed: DERIVATIVE_MIN_LEN,
            got: samples.len(),
        });
    }
    let mut d = Derivative::new();
    Ok(samples.iter().map(|&x| d.process(x)).collect())
}

pub fn square(samples: &[f64]) -> Vec<f64> {
    samples.iter().map(|x| x * x).collect()
}

pub fn moving_window_integration(samples: &[f64], window: usize) -> Result<Vec<f64>> {
    let mut mwi = MovingWindowIntegrator::new(window)?;
    Ok(samples.iter().map(|&x| mwi.process(x)).collect())
}

/// Full preprocessing chain over a whole recording.
pub fn preprocess(samples: &[f64], spec: &FilterSpec) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("preprocess".into()));
    }
    if samples.len() < DERIVATIVE_MIN_LEN {
        return Err(Error::InputTooShort {
            needed: DERIVATIVE_MIN_LEN,
            got: samples.len(),
        });
    }
    let mut chain = PreprocessChain::new(spec)?;
    Ok(samples.iter().map(|&x| chain.process(x)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const FS: f64 = 360.0;

    fn sine(freq: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / FS).sin())
            .collect()
    }

    /// Amplitude at `freq` by projecting the second half of `y` (a whole
    /// number of cycles) onto a complex exponential.
    fn steady_amplitude(y: &[f64], freq: f64) -> f64 {
        let tail = &y[y.len() / 2..];
        let start = y.len() / 2;
        let acc: Complex64 = tail
            .iter()
            .enumerate()
            .map(|(i, v)| v * Complex64::from_polar(1.0, -2.0 * PI * freq * (start + i) as f64 / FS))
            .sum();
        2.0 * acc.norm() / tail.len() as f64
    }

    /// Closed-form magnitude of the analog prototype, mapped through the
    /// bilinear frequency warp.
    fn butterworth_magnitude(spec: &FilterSpec, f: f64) -> f64 {
        let c = 2.0 * spec.sampling_rate_hz;
        let warp = |f: f64| c * (PI * f / spec.sampling_rate_hz).tan();
        let (w1, w2, w) = (warp(spec.low_cut_hz), warp(spec.high_cut_hz), warp(f));
        let x = (w * w - w1 * w2) / (w * (w2 - w1));
        1.0 / (1.0 + x.powi(4)).sqrt()
    }

    #[test]
    fn spec_validation() {
        assert!(FilterSpec::pan_tompkins(FS).validate().is_ok());
        let bad = FilterSpec { low_cut_hz: 15.0, high_cut_hz: 5.0, sampling_rate_hz: FS };
        assert!(matches!(bandpass(&[1.0], &bad), Err(Error::Config(_))));
        let nyq = FilterSpec { low_cut_hz: 5.0, high_cut_hz: 200.0, sampling_rate_hz: FS };
        assert!(nyq.validate().is_err());
    }

    #[test]
    fn response_matches_analog_prototype() {
        let spec = FilterSpec::pan_tompkins(FS);
        let bp = Bandpass::new(&spec).unwrap();
        for f in [0.5, 2.0, 5.0, 8.66, 10.0, 15.0, 30.0, 60.0, 120.0] {
            assert_relative_eq!(
                bp.response(f).norm(),
                butterworth_magnitude(&spec, f),
                max_relative = 1e-9
            );
        }
        // Band edges sit at -3 dB.
        assert_relative_eq!(bp.response(5.0).norm(), 0.5f64.sqrt(), max_relative = 1e-9);
        assert_relative_eq!(bp.response(15.0).norm(), 0.5f64.sqrt(), max_relative = 1e-9);
    }

    #[test]
    fn dc_is_rejected() {
        let y = bandpass(&vec![1.0; 2000], &FilterSpec::pan_tompkins(FS)).unwrap();
        assert_eq!(y.len(), 2000);
        assert!(y[1000..].iter().all(|v| v.abs() < 1e-9));
        // Without steady-state priming the transient still decays.
        let mut bp = Bandpass::new(&FilterSpec::pan_tompkins(FS)).unwrap();
        bp.primed = true;
        let y: Vec<f64> = (0..3000).map(|_| bp.process(1.0)).collect();
        assert!(y[0].abs() > 1e-3);
        assert!(y[2500..].iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn passband_and_stopband_sinusoids() {
        let spec = FilterSpec::pan_tompkins(FS);
        let pass = steady_amplitude(&bandpass(&sine(10.0, 3600), &spec).unwrap(), 10.0);
        let stop = steady_amplitude(&bandpass(&sine(60.0, 3600), &spec).unwrap(), 60.0);
        assert!(pass >= 0.7, "10 Hz gain {pass}");
        assert!(stop <= 0.2, "60 Hz gain {stop}");
        assert_relative_eq!(pass, butterworth_magnitude(&spec, 10.0), max_relative = 1e-3);
        assert_relative_eq!(stop, butterworth_magnitude(&spec, 60.0), max_relative = 1e-3);
    }

    #[test]
    fn derivative_cases() {
        assert!(derivative(&[0.0; 5]).unwrap().iter().all(|&v| v == 0.0));
        assert!(matches!(
            derivative(&[1.0; 4]),
            Err(Error::InputTooShort { needed: 5, got: 4 })
        ));
        let ramp: Vec<f64> = (0..20).map(|i| 3.0 * i as f64).collect();
        let d = derivative(&ramp).unwrap();
        assert!(d[4..].iter().all(|&v| (v - 1.25 * 3.0).abs() < 1e-12));

        // Hand-applied stencil with clamped history.
        let tri = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 4.0, 3.0, 2.0, 1.0, 0.0];
        let expected = [0.0, 0.25, 0.625, 1.0, 1.25, 1.25, 0.75, 0.0, -0.75, -1.25, -1.25];
        assert_eq!(derivative(&tri).unwrap(), expected);
        // The sign flips two samples (the stencil delay) after the apex.
        let flip = (1..expected.len())
            .find(|&i| expected[i - 1] > 0.0 && expected[i] <= 0.0)
            .unwrap();
        assert_eq!(flip, 5 + 2);
    }

    #[test]
    fn square_cases() {
        assert_eq!(square(&[-2.0, 0.0, 3.0]), vec![4.0, 0.0, 9.0]);
        assert_eq!(square(&[0.0; 3]), vec![0.0; 3]);
    }

    #[test]
    fn integration_cases() {
        let x = [1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(moving_window_integration(&x, 1).unwrap(), x.to_vec());
        let y = moving_window_integration(&x, 3).unwrap();
        let expected = [1.0, 1.0, 1.0, 2.0 / 3.0, 1.0 / 3.0, 0.0, 0.0];
        for (a, b) in y.iter().zip(expected) {
            assert_relative_eq!(*a, b, max_relative = 1e-15);
        }
        assert!(moving_window_integration(&x, 0).is_err());
        let c = moving_window_integration(&[2.5; 40], 15).unwrap();
        assert!(c.iter().all(|&v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn preprocess_zero_and_pulse() {
        let spec = FilterSpec::pan_tompkins(FS);
        assert!(preprocess(&[0.0; 500], &spec).unwrap().iter().all(|&v| v == 0.0));

        let center = 400usize;
        let pulse: Vec<f64> = (0..1000)
            .map(|i| {
                let t = (i as f64 - center as f64) / (0.01 * FS);
                (-0.5 * t * t).exp()
            })
            .collect();
        let y = preprocess(&pulse, &spec).unwrap();
        assert_eq!(y.len(), pulse.len());
        assert!(y.iter().all(|&v| v >= 0.0));
        let argmax = y
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        // The causal filter and the trailing integrator put the hump 17
        // samples (47 ms) after the pulse centre.
        assert_eq!(argmax - center, 17);
        assert_eq!(chain_delay(&spec).unwrap(), 17);
    }

    #[test]
    fn scaling_is_quadratic() {
        let spec = FilterSpec::pan_tompkins(FS);
        let x: Vec<f64> = (0..720)
            .map(|i| (i as f64 * 0.37).sin() + 0.3 * (i as f64 * 0.05).cos())
            .collect();
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let (y, y2) = (preprocess(&x, &spec).unwrap(), preprocess(&x2, &spec).unwrap());
        for (a, b) in y.iter().zip(&y2) {
            assert!((b - 4.0 * a).abs() <= 1e-9 * b.abs().max(1e-300));
        }
    }

    #[test]
    fn streaming_matches_batch() {
        let spec = FilterSpec::pan_tompkins(FS);
        let x: Vec<f64> = (0..500).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        let batch = preprocess(&x, &spec).unwrap();
        let mut chain = PreprocessChain::new(&spec).unwrap();
        let stream: Vec<f64> = x.iter().map(|&v| chain.process(v)).collect();
        assert_eq!(batch, stream);
    }
}
