//! Synthetic ECG built from Gaussian waves, with known R-peak positions and
//! class labels. Used for tests, benches and the offline demo corpus.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dsp::FilterSpec;
use crate::ingest::{self, Annotation, AnnotationLabel, BeatSet, Signal, MITBIH_RATE_HZ};
use crate::{Class, Error, Result};

/// One Gaussian component: amplitude in mV, centre relative to the R peak
/// and standard deviation, both in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wave {
    pub amplitude: f64,
    pub offset_s: f64,
    pub width_s: f64,
}

const fn wave(amplitude: f64, offset_s: f64, width_s: f64) -> Wave {
    Wave {
        amplitude,
        offset_s,
        width_s,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Morphology {
    pub waves: Vec<Wave>,
    /// RR interval preceding this beat, relative to the nominal one.
    pub prematurity: f64,
}

impl Morphology {
    pub fn for_class(class: Class) -> Self {
        match class {
            Class::N => Morphology {
                waves: vec![
                    wave(0.15, -0.16, 0.025),
                    wave(-0.10, -0.025, 0.008),
                    wave(1.00, 0.0, 0.010),
                    wave(-0.25, 0.025, 0.008),
                    wave(0.30, 0.25, 0.040),
                ],
                prematurity: 1.0,
            },
            Class::S => Morphology {
                waves: vec![
                    wave(-0.08, -0.12, 0.020),
                    wave(0.85, 0.0, 0.008),
                    wave(-0.35, 0.018, 0.006),
                    wave(0.25, 0.23, 0.040),
                ],
                prematurity: 0.7,
            },
            Class::V => Morphology {
                waves: vec![
                    wave(1.60, 0.0, 0.030),
                    wave(-0.60, 0.055, 0.020),
                    wave(-0.40, 0.30, 0.050),
                ],
                prematurity: 0.8,
            },
            Class::F => Morphology {
                waves: vec![
                    wave(0.08, -0.15, 0.025),
                    wave(1.20, 0.0, 0.018),
                    wave(-0.35, 0.040, 0.014),
                    wave(0.10, 0.27, 0.045),
                ],
                prematurity: 0.9,
            },
        }
    }

    /// A lone R wave.
    pub fn pulse() -> Self {
        Morphology {
            waves: vec![wave(1.0, 0.0, 0.010)],
            prematurity: 1.0,
        }
    }

    fn value(&self, t: f64, gain: f64) -> f64 {
        self.waves
            .iter()
            .map(|w| {
                let u = (t - w.offset_s) / w.width_s;
                gain * w.amplitude * (-0.5 * u * u).exp()
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordConfig {
    pub sampling_rate_hz: f64,
    pub n_beats: usize,
    pub heart_rate_bpm: f64,
    /// Relative standard deviation of the RR interval.
    pub rr_jitter: f64,
    /// Relative standard deviation of each beat's amplitude.
    pub amplitude_jitter: f64,
    /// Additive white noise relative to the clean signal power; `None` for a
    /// clean record.
    pub snr_db: Option<f64>,
    /// Peak amplitude of a 0.3 Hz baseline drift, in mV.
    pub baseline_wander_mv: f64,
    /// Time before the first R peak.
    pub lead_in_s: f64,
    /// Relative class frequencies in `[N, S, V, F]` order.
    pub class_weights: [f64; 4],
    /// Replaces the class morphologies with identical lone pulses.
    pub pulses_only: bool,
    pub seed: u64,
}

impl Default for RecordConfig {
    fn default() -> Self {
        RecordConfig {
            sampling_rate_hz: MITBIH_RATE_HZ,
            n_beats: 10,
            heart_rate_bpm: 75.0,
            rr_jitter: 0.03,
            amplitude_jitter: 0.05,
            snr_db: Some(30.0),
            baseline_wander_mv: 0.1,
            lead_in_s: 0.5,
            class_weights: [1.0, 0.0, 0.0, 0.0],
            pulses_only: false,
            seed: 0,
        }
    }
}

impl RecordConfig {
    /// Identical pulses at a fixed rate, the detector's reference input.
    pub fn pulse_train(n_beats: usize, heart_rate_bpm: f64, snr_db: Option<f64>, seed: u64) -> Self {
        RecordConfig {
            n_beats,
            heart_rate_bpm,
            rr_jitter: 0.0,
            amplitude_jitter: 0.0,
            snr_db,
            baseline_wander_mv: 0.0,
            pulses_only: true,
            seed,
            ..RecordConfig::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.sampling_rate_hz > 0.0 && self.heart_rate_bpm > 0.0) {
            return Err(Error::Config("sampling and heart rates must be positive".into()));
        }
        if self.class_weights.iter().any(|w| *w < 0.0) || self.class_weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("class weights must be non-negative with a positive sum".into()));
        }
        if self.rr_jitter < 0.0 || self.amplitude_jitter < 0.0 || self.lead_in_s < 0.0 {
            return Err(Error::Config("jitter and lead-in must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthRecord {
    pub signal: Signal,
    pub annotations: Vec<Annotation>,
}

impl SynthRecord {
    pub fn r_indices(&self) -> Vec<usize> {
        self.annotations.iter().map(|a| a.sample_index).collect()
    }

    /// Annotation lines in the `sample_index,symbol` format.
    pub fn annotations_csv(&self) -> String {
        let mut s = String::new();
        for a in &self.annotations {
            let sym = match a.label {
                AnnotationLabel::Beat(c) => c.as_char(),
                AnnotationLabel::Other => 'Q',
            };
            s.push_str(&format!("{},{sym}\n", a.sample_index));
        }
        s
    }

    /// Signal lines in the `index,value` format.
    pub fn signal_csv(&self) -> String {
        let mut s = String::with_capacity(self.signal.len() * 16);
        for (i, v) in self.signal.samples.iter().enumerate() {
            s.push_str(&format!("{i},{v}\n"));
        }
        s
    }
}

fn pick_class(weights: &[f64; 4], rng: &mut ChaCha8Rng) -> Class {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random_range(0.0..total);
    for (c, w) in Class::ALL.iter().zip(weights) {
        if u < *w {
            return *c;
        }
        u -= w;
    }
    Class::ALL[weights.iter().rposition(|w| *w > 0.0).expect("positive weight")]
}

pub fn record(config: &RecordConfig) -> Result<SynthRecord> {
    config.validate()?;
    let fs = config.sampling_rate_hz;
    let rr = 60.0 / config.heart_rate_bpm;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let mut beats = Vec::with_capacity(config.n_beats);
    let mut t = config.lead_in_s;
    for k in 0..config.n_beats {
        let class = pick_class(&config.class_weights, &mut rng);
        let morph = if config.pulses_only {
            Morphology::pulse()
        } else {
            Morphology::for_class(class)
        };
        if k > 0 {
            let jitter = 1.0 + config.rr_jitter * unit.sample(&mut rng);
            t += rr * morph.prematurity * jitter.max(0.5);
        }
        let gain = 1.0 + config.amplitude_jitter * unit.sample(&mut rng);
        beats.push((t, class, morph, gain));
    }
    let len = ((t + rr.max(1.0)) * fs).ceil() as usize;
    let mut clean = vec![0.0; len];
    for (t0, _, morph, gain) in &beats {
        // Waves are negligible beyond ±0.5 s of the R peak.
        let lo = ((t0 - 0.5) * fs).floor().max(0.0) as usize;
        let hi = (((t0 + 0.6) * fs).ceil() as usize).min(len);
        for (i, v) in clean.iter_mut().enumerate().take(hi).skip(lo) {
            *v += morph.value(i as f64 / fs - t0, *gain);
        }
    }
    if config.baseline_wander_mv != 0.0 {
        for (i, v) in clean.iter_mut().enumerate() {
            *v += config.baseline_wander_mv * (2.0 * std::f64::consts::PI * 0.3 * i as f64 / fs).sin();
        }
    }
    if let Some(snr) = config.snr_db {
        let mean = clean.iter().sum::<f64>() / len as f64;
        let power = clean.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len as f64;
        let sigma = (power / 10f64.powf(snr / 10.0)).sqrt();
        if sigma > 0.0 {
            let noise = Normal::new(0.0, sigma).expect("finite sigma");
            for v in &mut clean {
                *v += noise.sample(&mut rng);
            }
        }
    }
    let annotations = beats
        .iter()
        .map(|(t0, class, _, _)| Annotation {
            sample_index: (t0 * fs).round() as usize,
            label: AnnotationLabel::Beat(*class),
        })
        .collect();
    Ok(SynthRecord {
        signal: Signal::new(clean, fs)?,
        annotations,
    })
}

/// Preprocessed beats with `per_class` examples of every class.
pub fn beat_corpus(per_class: usize, seed: u64) -> Result<BeatSet> {
    let spec = FilterSpec::pan_tompkins(MITBIH_RATE_HZ);
    let mut out = BeatSet::default();
    for class in Class::ALL {
        let mut weights = [0.0; 4];
        weights[class.index()] = 1.0;
        let config = RecordConfig {
            n_beats: per_class,
            class_weights: weights,
            seed: seed.wrapping_mul(31).wrapping_add(class.index() as u64),
            ..RecordConfig::default()
        };
        let rec = record(&config)?;
        let ex = ingest::extract_beats_with(&rec.signal, &rec.annotations, &spec)?;
        if ex.beats.len() != per_class {
            return Err(Error::Config(format!(
                "synthetic record lost {} beats at its edges",
                per_class - ex.beats.len()
            )));
        }
        out.extend(ex.beats);
    }
    Ok(out)
}

/// A mixed-class record with roughly the given class proportions.
pub fn mixed_record(n_beats: usize, class_weights: [f64; 4], seed: u64) -> Result<SynthRecord> {
    record(&RecordConfig {
        n_beats,
        class_weights,
        seed,
        ..RecordConfig::default()
    })
}
