//! Streaming R-peak detection on the integrated signal with adaptive
//! signal/noise levels, a 200 ms refractory period and a 150-sample buffer.
//!
//! Each crossing region of the threshold yields one candidate at its
//! maximum. A candidate is held for one refractory period; a larger
//! candidate arriving in that time replaces it. Held candidates are then
//! reported, shifted back by the preprocessing delay so that `r_index`
//! addresses the same position an annotation would.

use std::collections::VecDeque;

use thiserror::Error;

use crate::dsp::{self, FilterSpec, PreprocessChain};
use crate::ingest::{BEAT_LEN, HALF_WINDOW};
use crate::Result;

/// Samples held by the stream buffer.
pub const BUFFER_CAPACITY: usize = 150;
pub const REFRACTORY_S: f64 = 0.2;
pub const WARMUP_S: f64 = 2.0;
/// Fraction of the signal/noise gap added to the noise level.
pub const THRESHOLD_FRACTION: f64 = 0.25;
/// Weight of a new peak in the running level estimates.
pub const LEVEL_RATE: f64 = 0.125;

/// Bounded buffer of preprocessed samples with absolute indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamBuffer {
    samples: VecDeque<f64>,
    capacity: usize,
    /// Absolute index of the next sample to be pushed.
    head: usize,
    high_water: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum WindowError {
    #[error("window not fully buffered yet")]
    NotReady,
    #[error("window at sample {0} has left the stream buffer")]
    Overflow(usize),
}

impl StreamBuffer {
    pub fn new(capacity: usize) -> Self {
        StreamBuffer {
            samples: VecDeque::with_capacity(capacity),
            capacity,
            head: 0,
            high_water: 0,
        }
    }

    pub fn push(&mut self, v: f64) {
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(v);
        self.head += 1;
        self.high_water = self.high_water.max(self.samples.len());
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Absolute index one past the newest sample.
    pub fn head(&self) -> usize {
        self.head
    }

    /// Absolute index of the oldest retained sample.
    pub fn tail(&self) -> usize {
        self.head - self.samples.len()
    }

    /// Largest number of samples ever held.
    pub fn high_water_mark(&self) -> usize {
        self.high_water
    }

    pub fn get(&self, index: usize) -> Option<f64> {
        let off = index.checked_sub(self.tail())?;
        self.samples.get(off).copied()
    }

    /// The 61 samples `[r_index − 30, r_index + 30]`.
    pub fn window(&self, r_index: usize) -> Result<Vec<f64>, WindowError> {
        if r_index + HALF_WINDOW >= self.head {
            return Err(WindowError::NotReady);
        }
        let start = r_index
            .checked_sub(HALF_WINDOW)
            .ok_or(WindowError::Overflow(r_index))?;
        if start < self.tail() {
            return Err(WindowError::Overflow(r_index));
        }
        let off = start - self.tail();
        Ok(self.samples.range(off..off + BEAT_LEN).copied().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorState {
    pub signal_level: f64,
    pub noise_level: f64,
    pub threshold: f64,
    /// Integrated-signal index of the last reported peak.
    pub last_peak_index: Option<usize>,
    pub refractory_samples: usize,
}

impl DetectorState {
    fn retune(&mut self) {
        self.threshold = self.noise_level + THRESHOLD_FRACTION * (self.signal_level - self.noise_level);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Detection {
    /// R-peak position in the input stream.
    pub r_index: usize,
    /// Position of the integrated-signal maximum.
    pub peak_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    index: usize,
    value: f64,
}

#[derive(Debug, Clone)]
pub struct QrsDetector {
    chain: PreprocessChain,
    buffer: StreamBuffer,
    state: DetectorState,
    delay: usize,
    warmup: usize,
    seen: usize,
    sum: f64,
    region: Option<Candidate>,
    held: Option<Candidate>,
    prev: [f64; 2],
}

impl QrsDetector {
    pub fn new(spec: &FilterSpec) -> Result<Self> {
        let delay = dsp::chain_delay(spec)?;
        let fs = spec.sampling_rate_hz;
        Ok(QrsDetector {
            chain: PreprocessChain::new(spec)?,
            buffer: StreamBuffer::new(BUFFER_CAPACITY),
            state: DetectorState {
                signal_level: 0.0,
                noise_level: 0.0,
                threshold: 0.0,
                last_peak_index: None,
                refractory_samples: (REFRACTORY_S * fs).round() as usize,
            },
            delay,
            warmup: (WARMUP_S * fs).round() as usize,
            seen: 0,
            sum: 0.0,
            region: None,
            held: None,
            prev: [0.0; 2],
        })
    }

    pub fn state(&self) -> &DetectorState {
        &self.state
    }

    pub fn buffer(&self) -> &StreamBuffer {
        &self.buffer
    }

    /// Samples between a pulse and its integrated-signal maximum.
    pub fn delay(&self) -> usize {
        self.delay
    }

    /// Preprocessed window for a reported beat.
    pub fn emit_window(&self, r_index: usize) -> Result<Vec<f64>, WindowError> {
        self.buffer.window(r_index)
    }

    pub fn push_sample(&mut self, raw: f64) -> Option<Detection> {
        let v = self.chain.process(raw);
        let n = self.buffer.head();
        self.buffer.push(v);
        self.seen += 1;

        if self.seen <= self.warmup {
            self.sum += v;
            self.state.signal_level = self.state.signal_level.max(v);
            self.state.noise_level = self.sum / self.seen as f64;
            self.state.retune();
        }

        let threshold = self.state.threshold;
        match self.region {
            Some(mut r) => {
                if v > r.value {
                    r.index = n;
                    r.value = v;
                }
                let expired = n - r.index > self.state.refractory_samples;
                if v < threshold || expired {
                    self.close_region(r);
                    self.region = (expired && v > threshold).then_some(Candidate { index: n, value: v });
                } else {
                    self.region = Some(r);
                }
            }
            None if v > threshold => self.region = Some(Candidate { index: n, value: v }),
            None => {
                let [p2, p1] = self.prev;
                if n >= 2 && p1 > p2 && p1 >= v {
                    self.noise_peak(p1);
                }
            }
        }
        self.prev = [self.prev[1], v];

        let held = self.held?;
        let refractory = self.state.refractory_samples;
        // An open region may still replace the held candidate.
        let contested = self.region.is_some_and(|r| r.index < held.index + refractory);
        if n < held.index + refractory || contested {
            return None;
        }
        self.held = None;
        self.state.last_peak_index = Some(held.index);
        if self.seen > self.warmup {
            self.state.signal_level = LEVEL_RATE * held.value + (1.0 - LEVEL_RATE) * self.state.signal_level;
            self.state.retune();
        }
        Some(Detection {
            r_index: held.index.saturating_sub(self.delay),
            peak_index: held.index,
        })
    }

    fn close_region(&mut self, peak: Candidate) {
        if let Some(last) = self.state.last_peak_index {
            if peak.index.saturating_sub(last) < self.state.refractory_samples {
                return;
            }
        }
        match self.held {
            Some(h) if peak.index.saturating_sub(h.index) < self.state.refractory_samples => {
                if peak.value > h.value {
                    self.held = Some(peak);
                }
            }
            _ => self.held = Some(peak),
        }
    }

    fn noise_peak(&mut self, p: f64) {
        if self.seen > self.warmup {
            self.state.noise_level = LEVEL_RATE * p + (1.0 - LEVEL_RATE) * self.state.noise_level;
            self.state.retune();
        }
    }
}

/// Runs a fresh detector over a whole signal.
pub fn detect(samples: &[f64], spec: &FilterSpec) -> Result<Vec<Detection>> {
    let mut det = QrsDetector::new(spec)?;
    Ok(samples.iter().filter_map(|&x| det.push_sample(x)).collect())
}

/// A detected beat and its window, or a beat whose window was lost.
#[derive(Debug, Clone, PartialEq)]
pub enum StreamEvent {
    Beat { r_index: usize, window: Vec<f64> },
    Lost { r_index: usize },
}

/// Detector plus a queue of beats waiting for their full window.
#[derive(Debug, Clone)]
pub struct BeatStream {
    detector: QrsDetector,
    pending: VecDeque<usize>,
    max_pending: usize,
}

impl BeatStream {
    pub fn new(spec: &FilterSpec) -> Result<Self> {
        Ok(BeatStream {
            detector: QrsDetector::new(spec)?,
            pending: VecDeque::new(),
            max_pending: 0,
        })
    }

    pub fn detector(&self) -> &QrsDetector {
        &self.detector
    }

    /// Most beats ever queued at once.
    pub fn max_pending(&self) -> usize {
        self.max_pending
    }

    pub fn push(&mut self, raw: f64) -> Vec<StreamEvent> {
        if let Some(d) = self.detector.push_sample(raw) {
            self.pending.push_back(d.r_index);
            self.max_pending = self.max_pending.max(self.pending.len());
        }
        let mut out = Vec::new();
        while let Some(&r) = self.pending.front() {
            match self.detector.emit_window(r) {
                Ok(window) => out.push(StreamEvent::Beat { r_index: r, window }),
                Err(WindowError::Overflow(_)) => out.push(StreamEvent::Lost { r_index: r }),
                Err(WindowError::NotReady) => break,
            }
            self.pending.pop_front();
        }
        out
    }
}

/// Matching of detections against reference peaks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionScore {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// Largest |detected − reference| among matches.
    pub max_error: usize,
}

impl DetectionScore {
    pub fn precision(&self) -> f64 {
        ratio(self.true_positives, self.true_positives + self.false_positives)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.true_positives, self.true_positives + self.false_negatives)
    }

    pub fn f1(&self) -> f64 {
        ratio(
            2 * self.true_positives,
            2 * self.true_positives + self.false_positives + self.false_negatives,
        )
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// One-to-one matching in time order; a detection matches the earliest
/// unmatched reference within `tolerance` samples.
pub fn score_detections(reference: &[usize], detected: &[usize], tolerance: usize) -> DetectionScore {
    let mut refs = reference.to_vec();
    refs.sort_unstable();
    let mut dets = detected.to_vec();
    dets.sort_unstable();
    let (mut i, mut tp, mut max_error) = (0, 0, 0);
    for d in &dets {
        while i < refs.len() && refs[i] + tolerance < *d {
            i += 1;
        }
        if i < refs.len() && refs[i].abs_diff(*d) <= tolerance {
            max_error = max_error.max(refs[i].abs_diff(*d));
            tp += 1;
            i += 1;
        }
    }
    DetectionScore {
        true_positives: tp,
        false_positives: dets.len() - tp,
        false_negatives: refs.len() - tp,
        max_error,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::MITBIH_RATE_HZ;
    use crate::synth::{self, RecordConfig};

    fn spec() -> FilterSpec {
        FilterSpec::pan_tompkins(MITBIH_RATE_HZ)
    }

    #[test]
    fn zero_stream_never_detects() {
        let mut det = QrsDetector::new(&spec()).unwrap();
        for _ in 0..5000 {
            assert!(det.push_sample(0.0).is_none());
        }
        assert_eq!(det.buffer().len(), BUFFER_CAPACITY);
    }

    #[test]
    fn pulse_train_at_75_bpm() {
        let rec = synth::record(&RecordConfig::pulse_train(10, 75.0, None, 0)).unwrap();
        let truth = rec.r_indices();
        let found: Vec<usize> = detect(&rec.signal.samples, &spec())
            .unwrap()
            .iter()
            .map(|d| d.r_index)
            .collect();
        assert!(found.len() >= 9, "{found:?}");
        for r in &found {
            assert!(truth.iter().any(|t| t.abs_diff(*r) <= 18), "{r} vs {truth:?}");
        }
        let score = score_detections(&truth, &found, 18);
        assert_eq!(score.false_positives, 0);
        assert!(score.max_error <= 2, "{score:?}");
    }

    #[test]
    fn refractory_suppresses_close_pulse() {
        let fs = MITBIH_RATE_HZ;
        let mut x = vec![0.0; 2000];
        let pulse = |c: usize, x: &mut Vec<f64>| {
            for (i, v) in x.iter_mut().enumerate() {
                let u = (i as f64 - c as f64) / (0.01 * fs);
                *v += (-0.5 * u * u).exp();
            }
        };
        for c in [200, 500, 800, 1100] {
            pulse(c, &mut x);
        }
        pulse(1140, &mut x);
        let det = detect(&x, &spec()).unwrap();
        let r: Vec<usize> = det.iter().map(|d| d.r_index).collect();
        assert_eq!(r.len(), 4, "{r:?}");
        assert!(r[3].abs_diff(1100) <= 18 || r[3].abs_diff(1140) <= 18);
        assert!(r.windows(2).all(|w| w[1] - w[0] >= 72));
    }

    #[test]
    fn levels_stay_ordered_after_warmup() {
        let rec = synth::record(&RecordConfig::pulse_train(30, 70.0, Some(20.0), 5)).unwrap();
        let mut det = QrsDetector::new(&spec()).unwrap();
        for (i, &x) in rec.signal.samples.iter().enumerate() {
            det.push_sample(x);
            let s = det.state();
            if i >= 720 {
                assert!(s.signal_level >= s.noise_level && s.noise_level >= 0.0);
            }
            assert!(det.buffer().len() <= BUFFER_CAPACITY);
        }
        assert_eq!(det.buffer().high_water_mark(), BUFFER_CAPACITY);
    }

    #[test]
    fn p_wave_gives_way_to_qrs() {
        let rec = synth::record(&RecordConfig {
            n_beats: 10,
            snr_db: None,
            baseline_wander_mv: 0.0,
            ..RecordConfig::default()
        })
        .unwrap();
        let found: Vec<usize> = detect(&rec.signal.samples, &spec())
            .unwrap()
            .iter()
            .map(|d| d.r_index)
            .collect();
        let score = score_detections(&rec.r_indices(), &found, 18);
        assert_eq!((score.true_positives, score.false_positives), (10, 0), "{found:?}");
    }

    #[test]
    fn buffer_windows() {
        let mut b = StreamBuffer::new(BUFFER_CAPACITY);
        for i in 0..61 {
            b.push(i as f64);
        }
        assert_eq!(b.window(30).unwrap(), (0..61).map(f64::from).collect::<Vec<_>>());
        assert_eq!(b.window(31), Err(WindowError::NotReady));
        assert_eq!(b.window(10), Err(WindowError::Overflow(10)));
        for i in 61..400 {
            b.push(i as f64);
        }
        assert_eq!((b.tail(), b.head(), b.len()), (250, 400, 150));
        assert_eq!(b.get(250), Some(250.0));
        assert_eq!(b.get(249), None);
        assert_eq!(b.window(279), Err(WindowError::Overflow(279)));
        assert_eq!(b.window(280).unwrap()[0], 250.0);
    }

    #[test]
    fn beat_stream_emits_full_windows() {
        let rec = synth::record(&RecordConfig::pulse_train(12, 75.0, None, 2)).unwrap();
        let mut stream = BeatStream::new(&spec()).unwrap();
        let pre = dsp::preprocess(&rec.signal.samples, &spec()).unwrap();
        let mut beats = 0;
        for &x in &rec.signal.samples {
            for ev in stream.push(x) {
                match ev {
                    StreamEvent::Beat { r_index, window } => {
                        assert_eq!(window, pre[r_index - 30..=r_index + 30].to_vec());
                        beats += 1;
                    }
                    StreamEvent::Lost { r_index } => panic!("lost beat at {r_index}"),
                }
            }
        }
        assert!(beats >= 11);
        assert_eq!(stream.max_pending(), 1);
    }

    #[test]
    fn scoring() {
        let s = score_detections(&[100, 400, 700], &[95, 420, 430, 1000], 18);
        assert_eq!((s.true_positives, s.false_positives, s.false_negatives), (1, 3, 2));
        let s = score_detections(&[100, 400], &[101, 399], 18);
        assert_eq!(s.f1(), 1.0);
        assert_eq!(s.max_error, 1);
        assert_eq!(score_detections(&[], &[], 5).f1(), 0.0);
    }
}
