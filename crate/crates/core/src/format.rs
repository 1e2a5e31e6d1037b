//! On-disk formats: beat CSV files, float and quantized model binaries, and
//! JSON mirrors of both.
//!
//! Binary layouts are little-endian and end with a CRC-32 of every preceding
//! byte.
//!
//! Float model:
//!
//! ```text
//! "TEGM" | version u16 | variant u8 | layers u16
//! per layer: fan_in u32 | fan_out u32 | activation u8
//! per layer: weights f64 × fan_in·fan_out (row-major) | biases f64 × fan_out
//! crc32 u32
//! ```
//!
//! Quantized model:
//!
//! ```text
//! "TEGQ" | version u16 | mode u8 | scale f64 | zero_point i32 | alpha f64 | beta f64 | layers u16
//! per layer: fan_in u32 | fan_out u32 | activation u8
//! per layer: weights i8 × fan_in·fan_out | biases i8 × fan_out
//! crc32 u32
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ingest::{Beat, BeatSet, BEAT_LEN};
use crate::nn::{Activation, DenseLayer, DenseModel, Variant};
use crate::quant::{QuantLayer, QuantMode, QuantParams, QuantizedModel};
use crate::{Class, Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"TEGM";
pub const QUANT_MAGIC: &[u8; 4] = b"TEGQ";
pub const FORMAT_VERSION: u16 = 1;
/// Variant byte for layer stacks that are not one of the four variants.
pub const CUSTOM_VARIANT: u8 = 0xFF;

fn variant_code(v: Option<Variant>) -> u8 {
    v.and_then(|v| Variant::ALL.iter().position(|&x| x == v))
        .map_or(CUSTOM_VARIANT, |i| i as u8)
}

fn variant_from_code(code: u8) -> Result<Option<Variant>> {
    if code == CUSTOM_VARIANT {
        return Ok(None);
    }
    Variant::ALL
        .get(usize::from(code))
        .copied()
        .map(Some)
        .ok_or_else(|| Error::Format(format!("unknown variant tag {code}")))
}

fn seal(mut bytes: Vec<u8>) -> Vec<u8> {
    let crc = crc32fast::hash(&bytes);
    bytes.extend_from_slice(&crc.to_le_bytes());
    bytes
}

/// Verifies magic, version and checksum; returns the payload after the
/// version field.
fn unseal<'a>(bytes: &'a [u8], magic: &[u8; 4]) -> Result<&'a [u8]> {
    if bytes.len() < 10 || &bytes[..4] != magic {
        return Err(Error::Format(format!(
            "missing {} header",
            String::from_utf8_lossy(magic)
        )));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let version = u16::from_le_bytes([body[4], body[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    Ok(&body[6..])
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Format("truncated model file".into()));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        self.array().map(u16::from_le_bytes)
    }

    fn u32(&mut self) -> Result<usize> {
        self.array().map(|b| u32::from_le_bytes(b) as usize)
    }

    fn i32(&mut self) -> Result<i32> {
        self.array().map(i32::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64> {
        self.array().map(f64::from_le_bytes)
    }

    fn finish(&self) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(Error::Format(format!("{} trailing bytes", self.buf.len())))
        }
    }
}

fn read_headers(r: &mut Reader<'_>) -> Result<Vec<(usize, usize, Activation)>> {
    let n = r.u16()?;
    (0..n)
        .map(|_| {
            let fan_in = r.u32()?;
            let fan_out = r.u32()?;
            let code = r.u8()?;
            let act = Activation::from_code(code)
                .ok_or_else(|| Error::Format(format!("unknown activation code {code}")))?;
            Ok((fan_in, fan_out, act))
        })
        .collect()
}

fn write_header(out: &mut Vec<u8>, layers: usize) {
    out.extend_from_slice(&(layers as u16).to_le_bytes());
}

fn write_layer_header(out: &mut Vec<u8>, fan_in: usize, fan_out: usize, act: Activation) {
    out.extend_from_slice(&(fan_in as u32).to_le_bytes());
    out.extend_from_slice(&(fan_out as u32).to_le_bytes());
    out.push(act.code());
}

fn check_variant(tag: Option<Variant>, actual: Option<Variant>) -> Result<()> {
    if tag.is_some() && tag != actual {
        return Err(Error::Format("variant tag does not match layer activations".into()));
    }
    Ok(())
}

pub fn encode_model(model: &DenseModel) -> Vec<u8> {
    let mut out = MODEL_MAGIC.to_vec();
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(variant_code(model.variant()));
    write_header(&mut out, model.layers().len());
    for l in model.layers() {
        write_layer_header(&mut out, l.fan_in, l.fan_out, l.activation);
    }
    for p in model.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    seal(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<DenseModel> {
    let mut r = Reader {
        buf: unseal(bytes, MODEL_MAGIC)?,
    };
    let tag = variant_from_code(r.u8()?)?;
    let headers = read_headers(&mut r)?;
    let mut layers = Vec::with_capacity(headers.len());
    for (fan_in, fan_out, act) in headers {
        let weights = (0..fan_in * fan_out).map(|_| r.f64()).collect::<Result<_>>()?;
        let bias = (0..fan_out).map(|_| r.f64()).collect::<Result<_>>()?;
        layers.push(DenseLayer::new(fan_in, fan_out, weights, bias, act)?);
    }
    r.finish()?;
    let model = DenseModel::from_layers(layers)?;
    check_variant(tag, model.variant())?;
    Ok(model)
}

pub fn encode_quantized(qmodel: &QuantizedModel) -> Vec<u8> {
    let q = qmodel.qparams();
    let mut out = QUANT_MAGIC.to_vec();
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(q.mode.code());
    out.extend_from_slice(&q.scale.to_le_bytes());
    out.extend_from_slice(&q.zero_point.to_le_bytes());
    out.extend_from_slice(&q.alpha.to_le_bytes());
    out.extend_from_slice(&q.beta.to_le_bytes());
    write_header(&mut out, qmodel.layers().len());
    for l in qmodel.layers() {
        write_layer_header(&mut out, l.fan_in(), l.fan_out(), l.activation());
    }
    out.extend(qmodel.params().map(|v| v as u8));
    seal(out)
}

pub fn decode_quantized(bytes: &[u8]) -> Result<QuantizedModel> {
    let mut r = Reader {
        buf: unseal(bytes, QUANT_MAGIC)?,
    };
    let code = r.u8()?;
    let mode = QuantMode::from_code(code)
        .ok_or_else(|| Error::Format(format!("unknown quantization mode {code}")))?;
    let scale = r.f64()?;
    let zero_point = r.i32()?;
    let alpha = r.f64()?;
    let beta = r.f64()?;
    let headers = read_headers(&mut r)?;
    let as_i8 = |b: &[u8]| b.iter().map(|&v| v as i8).collect::<Vec<_>>();
    let mut layers = Vec::with_capacity(headers.len());
    for (fan_in, fan_out, act) in headers {
        let weights = as_i8(r.take(fan_in * fan_out)?);
        let bias = as_i8(r.take(fan_out)?);
        layers.push(QuantLayer::new(fan_in, fan_out, weights, bias, act)?);
    }
    r.finish()?;
    let q = QuantParams {
        scale,
        zero_point,
        alpha,
        beta,
        mode,
    };
    QuantizedModel::from_parts(layers, q)
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerJson<T> {
    fan_in: usize,
    fan_out: usize,
    activation: Activation,
    weights: Vec<T>,
    bias: Vec<T>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelJson {
    format: String,
    version: u16,
    variant: Option<Variant>,
    layers: Vec<LayerJson<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct QuantJson {
    format: String,
    version: u16,
    variant: Option<Variant>,
    qparams: QuantParams,
    layers: Vec<LayerJson<i8>>,
}

fn json_err(e: serde_json::Error) -> Error {
    Error::Format(format!("invalid model JSON: {e}"))
}

pub fn model_to_json(model: &DenseModel) -> String {
    let doc = ModelJson {
        format: "tinyecg-model".into(),
        version: FORMAT_VERSION,
        variant: model.variant(),
        layers: model
            .layers()
            .iter()
            .map(|l| LayerJson {
                fan_in: l.fan_in,
                fan_out: l.fan_out,
                activation: l.activation,
                weights: l.weights.clone(),
                bias: l.bias.clone(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("model serializes")
}

pub fn model_from_json(text: &str) -> Result<DenseModel> {
    let doc: ModelJson = serde_json::from_str(text).map_err(json_err)?;
    let layers = doc
        .layers
        .into_iter()
        .map(|l| DenseLayer::new(l.fan_in, l.fan_out, l.weights, l.bias, l.activation))
        .collect::<Result<_>>()?;
    let model = DenseModel::from_layers(layers)?;
    check_variant(doc.variant, model.variant())?;
    Ok(model)
}

pub fn quantized_to_json(qmodel: &QuantizedModel) -> String {
    let doc = QuantJson {
        format: "tinyecg-quantized".into(),
        version: FORMAT_VERSION,
        variant: qmodel.variant(),
        qparams: *qmodel.qparams(),
        layers: qmodel
            .layers()
            .iter()
            .map(|l| LayerJson {
                fan_in: l.fan_in(),
                fan_out: l.fan_out(),
                activation: l.activation(),
                weights: l.weights().to_vec(),
                bias: l.bias().to_vec(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("model serializes")
}

pub fn quantized_from_json(text: &str) -> Result<QuantizedModel> {
    let doc: QuantJson = serde_json::from_str(text).map_err(json_err)?;
    let layers = doc
        .layers
        .into_iter()
        .map(|l| QuantLayer::new(l.fan_in, l.fan_out, l.weights, l.bias, l.activation))
        .collect::<Result<_>>()?;
    QuantizedModel::from_parts(layers, doc.qparams)
}

/// A model file of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelFile {
    Float(DenseModel),
    Quantized(QuantizedModel),
}

/// Decodes binary or JSON, float or quantized, by inspecting the content.
pub fn decode_any(bytes: &[u8]) -> Result<ModelFile> {
    if bytes.starts_with(MODEL_MAGIC) {
        return decode_model(bytes).map(ModelFile::Float);
    }
    if bytes.starts_with(QUANT_MAGIC) {
        return decode_quantized(bytes).map(ModelFile::Quantized);
    }
    let text = std::str::from_utf8(bytes)
        .map_err(|_| Error::Format("not a model file".into()))?;
    let value: serde_json::Value = serde_json::from_str(text).map_err(json_err)?;
    match value.get("format").and_then(|f| f.as_str()) {
        Some("tinyecg-model") => model_from_json(text).map(ModelFile::Float),
        Some("tinyecg-quantized") => quantized_from_json(text).map(ModelFile::Quantized),
        _ => Err(Error::Format("unrecognized model JSON".into())),
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn is_json_path(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// Writes binary, or the JSON mirror when the extension is `.json`.
pub fn save_model(path: impl AsRef<Path>, model: &DenseModel) -> Result<()> {
    let path = path.as_ref();
    if is_json_path(path) {
        write_bytes(path, model_to_json(model).as_bytes())
    } else {
        write_bytes(path, &encode_model(model))
    }
}

pub fn save_quantized(path: impl AsRef<Path>, qmodel: &QuantizedModel) -> Result<()> {
    let path = path.as_ref();
    if is_json_path(path) {
        write_bytes(path, quantized_to_json(qmodel).as_bytes())
    } else {
        write_bytes(path, &encode_quantized(qmodel))
    }
}

pub fn load_model_file(path: impl AsRef<Path>) -> Result<ModelFile> {
    decode_any(&read_bytes(path.as_ref())?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<DenseModel> {
    match load_model_file(path)? {
        ModelFile::Float(m) => Ok(m),
        ModelFile::Quantized(_) => Err(Error::Format("expected a float model, found a quantized one".into())),
    }
}

pub fn load_quantized(path: impl AsRef<Path>) -> Result<QuantizedModel> {
    match load_model_file(path)? {
        ModelFile::Quantized(m) => Ok(m),
        ModelFile::Float(_) => Err(Error::Format("expected a quantized model, found a float one".into())),
    }
}

/// Beat windows as read from a beat file; labels may be missing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BeatFile {
    pub windows: Vec<Vec<f64>>,
    pub labels: Vec<Option<Class>>,
}

impl BeatFile {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Fails with [`Error::Unlabeled`] if any beat lacks a label.
    pub fn into_beat_set(self) -> Result<BeatSet> {
        self.windows
            .into_iter()
            .zip(self.labels)
            .map(|(w, l)| Beat::new(w, l.ok_or(Error::Unlabeled)?))
            .collect::<Result<Vec<_>>>()
            .map(BeatSet::new)
    }
}

fn beat_header() -> String {
    let mut s = String::from("label");
    for i in 0..BEAT_LEN {
        let _ = write!(s, ",v{i}");
    }
    s
}

/// CSV with header `label,v0,…,v60`, one beat per row.
pub fn beats_to_csv(beats: &BeatSet) -> String {
    let mut s = beat_header();
    s.push('\n');
    for b in &beats.beats {
        s.push(b.label.as_char());
        for v in b.window() {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

/// Parses a beat file. A label of `?` or an empty label marks an unlabeled
/// beat. Lines starting with `#` are ignored.
pub fn parse_beats(text: &str, path: &Path) -> Result<BeatFile> {
    let mut out = BeatFile::default();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r').trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("label") {
            continue;
        }
        let mut fields = line.split(',');
        let label = match fields.next().unwrap_or("").trim() {
            "" | "?" => None,
            s => Some(s.parse::<Class>().map_err(|e| parse_err(line_no, e.to_string()))?),
        };
        let window: Vec<f64> = fields
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(line_no, format!("invalid value {f:?}")))
            })
            .collect::<Result<_>>()?;
        crate::ingest::check_window(&window).map_err(|e| parse_err(line_no, e.to_string()))?;
        out.windows.push(window);
        out.labels.push(label);
    }
    if out.is_empty() {
        return Err(Error::EmptyInput(format!("{} contains no beats", path.display())));
    }
    Ok(out)
}

pub fn read_beats(path: impl AsRef<Path>) -> Result<BeatFile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_beats(&text, path)
}

/// Reads a beat file whose beats must all be labeled.
pub fn load_beats(path: impl AsRef<Path>) -> Result<BeatSet> {
    read_beats(path)?.into_beat_set()
}

pub fn save_beats(path: impl AsRef<Path>, beats: &BeatSet) -> Result<()> {
    write_bytes(path.as_ref(), beats_to_csv(beats).as_bytes())
}
