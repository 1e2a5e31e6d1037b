//! Signal and annotation CSV parsing, beat windowing and the train/test split.
//!
//! Signals are `index,value` lines, annotations `sample_index,symbol` lines.
//! Blank lines and lines starting with `#` are ignored; CRLF is accepted.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{self, FilterSpec};
use crate::{Class, Error, Result};

/// Samples in one beat window.
pub const BEAT_LEN: usize = 61;
/// Samples on each side of the R peak.
pub const HALF_WINDOW: usize = 30;

/// MIT-BIH sampling rate.
pub const MITBIH_RATE_HZ: f64 = 360.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub samples: Vec<f64>,
    pub sampling_rate_hz: f64,
}

impl Signal {
    pub fn new(samples: Vec<f64>, sampling_rate_hz: f64) -> Result<Self> {
        if !(sampling_rate_hz > 0.0 && sampling_rate_hz.is_finite()) {
            return Err(Error::Config(format!(
                "sampling rate must be positive, got {sampling_rate_hz}"
            )));
        }
        Ok(Signal {
            samples,
            sampling_rate_hz,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Annotation label after AAMI grouping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnotationLabel {
    Beat(Class),
    /// Paced, unclassifiable or non-beat symbols; excluded downstream.
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Annotation {
    pub sample_index: usize,
    pub label: AnnotationLabel,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Annotations {
    pub items: Vec<Annotation>,
    /// Symbols mapped to [`AnnotationLabel::Other`], with their counts.
    pub skipped_symbols: BTreeMap<String, usize>,
}

/// A preprocessed 61-sample window centred on an R peak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Beat {
    window: Vec<f64>,
    pub label: Class,
}

impl Beat {
    pub fn new(window: Vec<f64>, label: Class) -> Result<Self> {
        check_window(&window)?;
        Ok(Beat { window, label })
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }
}

pub(crate) fn check_window(window: &[f64]) -> Result<()> {
    if window.len() != BEAT_LEN {
        return Err(Error::shape(format!("{BEAT_LEN} samples"), window.len()));
    }
    if let Some(v) = window.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Config(format!(
            "beat window values must be finite and non-negative, found {v}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BeatSet {
    pub beats: Vec<Beat>,
}

impl BeatSet {
    pub fn new(beats: Vec<Beat>) -> Self {
        BeatSet { beats }
    }

    pub fn len(&self) -> usize {
        self.beats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beats.is_empty()
    }

    /// Per-class counts in `[N, S, V, F]` order.
    pub fn counts(&self) -> [usize; 4] {
        let mut c = [0; 4];
        for b in &self.beats {
            c[b.label.index()] += 1;
        }
        c
    }

    pub fn extend(&mut self, other: BeatSet) {
        self.beats.extend(other.beats);
    }

    pub fn labels(&self) -> Vec<Class> {
        self.beats.iter().map(|b| b.label).collect()
    }
}

/// Output of [`extract_beats`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Extraction {
    pub beats: BeatSet,
    /// Beat annotations whose window left the signal.
    pub skipped_out_of_bounds: usize,
    /// Annotations with the `Other` label.
    pub skipped_other: usize,
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn split_pair<'a>(path: &Path, line_no: usize, line: &'a str) -> Result<(&'a str, &'a str)> {
    let mut parts = line.split(',').map(str::trim);
    match (parts.next(), parts.next(), parts.next()) {
        (Some(a), Some(b), None) => Ok((a, b)),
        _ => Err(Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: format!("expected two comma-separated fields, got `{line}`"),
        }),
    }
}

fn parse_index(path: &Path, line_no: usize, field: &str) -> Result<usize> {
    field.parse::<usize>().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line: line_no,
        message: format!("invalid sample index `{field}`"),
    })
}

/// Parses signal CSV text. `path` is only used for error messages.
pub fn parse_signal(text: &str, path: &Path, sampling_rate_hz: f64) -> Result<Signal> {
    let mut samples = Vec::new();
    let mut last: Option<usize> = None;
    for (line_no, line) in data_lines(text) {
        let (idx, val) = split_pair(path, line_no, line)?;
        let idx = parse_index(path, line_no, idx)?;
        if last.is_some_and(|l| idx <= l) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("sample index {idx} is not increasing"),
            });
        }
        last = Some(idx);
        let v = val
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("invalid sample value `{val}`"),
            })?;
        samples.push(v);
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput(path.display().to_string()));
    }
    Signal::new(samples, sampling_rate_hz)
}

pub fn load_signal(path: impl AsRef<Path>, sampling_rate_hz: f64) -> Result<Signal> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_signal(&text, path, sampling_rate_hz)
}

/// Parses annotation CSV text, applying the AAMI class grouping.
pub fn parse_annotations(text: &str, path: &Path) -> Result<Annotations> {
    let mut out = Annotations::default();
    for (line_no, line) in data_lines(text) {
        let (idx, sym) = split_pair(path, line_no, line)?;
        let sample_index = parse_index(path, line_no, idx)?;
        if sym.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: "missing annotation symbol".into(),
            });
        }
        let label = match Class::from_mitbih_symbol(sym) {
            Some(c) => AnnotationLabel::Beat(c),
            None => {
                *out.skipped_symbols.entry(sym.to_string()).or_default() += 1;
                AnnotationLabel::Other
            }
        };
        out.items.push(Annotation {
            sample_index,
            label,
        });
    }
    Ok(out)
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Annotations> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, path)
}

/// Cuts beats out of an already preprocessed stream.
pub fn window_beats(preprocessed: &[f64], annotations: &[Annotation]) -> Result<Extraction> {
    let mut out = Extraction::default();
    for ann in annotations {
        let AnnotationLabel::Beat(label) = ann.label else {
            out.skipped_other += 1;
            continue;
        };
        let idx = ann.sample_index;
        if idx < HALF_WINDOW || idx + HALF_WINDOW >= preprocessed.len() {
            out.skipped_out_of_bounds += 1;
            continue;
        }
        let window = preprocessed[idx - HALF_WINDOW..=idx + HALF_WINDOW].to_vec();
        out.beats.beats.push(Beat::new(window, label)?);
    }
    Ok(out)
}

/// Preprocesses the whole signal once, then windows every beat annotation.
pub fn extract_beats(signal: &Signal, annotations: &[Annotation]) -> Result<Extraction> {
    extract_beats_with(signal, annotations, &FilterSpec::pan_tompkins(signal.sampling_rate_hz))
}

pub fn extract_beats_with(
    signal: &Signal,
    annotations: &[Annotation],
    spec: &FilterSpec,
) -> Result<Extraction> {
    let pre = dsp::preprocess(&signal.samples, spec)?;
    window_beats(&pre, annotations)
}

/// Stratified random split. Each class contributes `round(n · fraction)`
/// beats to the training side; input order is kept within each side.
pub fn split(beats: &BeatSet, train_fraction: f64, seed: u64) -> Result<(BeatSet, BeatSet)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut by_class: [Vec<usize>; 4] = Default::default();
    for (i, b) in beats.beats.iter().enumerate() {
        by_class[b.label.index()].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; beats.len()];
    for (class, idx) in Class::ALL.iter().zip(by_class.iter_mut()) {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            log::warn!(
                "class {class} has {} beat(s); keeping all of them in the training set",
                idx.len()
            );
            idx.iter().for_each(|&i| in_train[i] = true);
            continue;
        }
        idx.shuffle(&mut rng);
        let n_train = (idx.len() as f64 * train_fraction).round() as usize;
        idx[..n_train].iter().for_each(|&i| in_train[i] = true);
    }
    let (mut train, mut test) = (BeatSet::default(), BeatSet::default());
    for (b, t) in beats.beats.iter().zip(in_train) {
        if t {
            train.beats.push(b.clone());
        } else {
            test.beats.push(b.clone());
        }
    }
    Ok((train, test))
}
