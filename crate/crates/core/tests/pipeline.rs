use std::fs;

use tinyecg::dsp::FilterSpec;
use tinyecg::format::{self, ModelFile};
use tinyecg::ingest::{self, BeatSet, MITBIH_RATE_HZ};
use tinyecg::metrics;
use tinyecg::nn::{self, Variant};
use tinyecg::par::Execution;
use tinyecg::qrs::{BeatStream, StreamEvent};
use tinyecg::quant::{self, CostReport, QuantMode};
use tinyecg::synth::{self, RecordConfig};
use tinyecg::train::{self, BatchMode, TrainConfig};
use tinyecg::Class;

fn quick_config(variant: Variant) -> TrainConfig {
    TrainConfig {
        epochs: 400,
        learning_rate: 0.01,
        batch_size: 64,
        batch_mode: BatchMode::FullPass,
        variant,
        ..TrainConfig::default()
    }
}

#[test]
fn csv_export_to_three_inference_modes() {
    let dir = tempfile::tempdir().unwrap();
    let rec = synth::mixed_record(400, [0.6, 0.15, 0.15, 0.1], 21).unwrap();
    let sig_path = dir.path().join("r1.signal.csv");
    let ann_path = dir.path().join("r1.ann.csv");
    fs::write(&sig_path, rec.signal_csv()).unwrap();
    fs::write(&ann_path, rec.annotations_csv()).unwrap();

    let signal = ingest::load_signal(&sig_path, MITBIH_RATE_HZ).unwrap();
    let ann = ingest::load_annotations(&ann_path).unwrap();
    let ex = ingest::extract_beats(&signal, &ann.items).unwrap();
    assert_eq!(ex.beats.len() + ex.skipped_out_of_bounds, rec.annotations.len());
    let (train_set, test_set) = ingest::split(&ex.beats, 0.67, 0).unwrap();
    assert_eq!(train_set.len() + test_set.len(), ex.beats.len());

    let (model, trace) = train::fit(&train_set, &test_set, &quick_config(Variant::SigmoidSigmoid)).unwrap();
    assert!(trace.train_accuracy > 0.9, "train accuracy {}", trace.train_accuracy);
    assert!(trace.test_accuracy > 0.9, "test accuracy {}", trace.test_accuracy);

    let qm = quant::quantize_model(&model, QuantMode::Symmetric).unwrap();
    let exec = Execution::default();
    let default = train::evaluate_model(&model, &test_set, exec).unwrap();
    let temp = metrics::evaluate(&test_set, exec, |w| {
        nn::class_of(&quant::forward_temporary_dequantized(&qm, w)?)
    })
    .unwrap();
    let raw = metrics::evaluate(&test_set, exec, |w| nn::class_of(&quant::forward_quantized_only(&qm, w)?)).unwrap();
    assert_eq!(default.total, temp.total);
    assert_eq!(temp.total, raw.total);
    assert!(temp.accuracy > 0.85, "temporary-dequantized accuracy {}", temp.accuracy);

    let cost = CostReport::for_model(&qm);
    assert_eq!(cost.memory.total_bytes, 1267);
    assert_eq!(cost.flops.total_flops, 1314);
}

#[test]
fn asymmetric_scheme_degrades_temporary_dequantization() {
    let corpus = synth::beat_corpus(80, 4).unwrap();
    let (model, _) = train::fit(&corpus, &BeatSet::default(), &quick_config(Variant::SigmoidSoftmax)).unwrap();
    let exec = Execution::default();
    let acc = |mode| {
        let qm = quant::quantize_model(&model, mode).unwrap();
        metrics::evaluate(&corpus, exec, |w| nn::class_of(&quant::forward_temporary_dequantized(&qm, w)?))
            .unwrap()
            .accuracy
    };
    let sym = acc(QuantMode::Symmetric);
    let asym = acc(QuantMode::Asymmetric);
    assert!(asym < sym, "asymmetric {asym} vs symmetric {sym}");
}

#[test]
fn model_files_round_trip_in_both_encodings() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth::beat_corpus(20, 1).unwrap();
    let config = TrainConfig {
        epochs: 20,
        ..quick_config(Variant::ReluSoftmax)
    };
    let (model, _) = train::fit(&corpus, &BeatSet::default(), &config).unwrap();
    let qm = quant::quantize_model(&model, QuantMode::Symmetric).unwrap();
    for ext in ["bin", "json"] {
        let mp = dir.path().join(format!("model.{ext}"));
        let qp = dir.path().join(format!("model.q.{ext}"));
        format::save_model(&mp, &model).unwrap();
        format::save_quantized(&qp, &qm).unwrap();
        assert_eq!(format::load_model(&mp).unwrap(), model);
        assert_eq!(format::load_quantized(&qp).unwrap(), qm);
        assert!(matches!(format::load_model_file(&qp).unwrap(), ModelFile::Quantized(_)));
    }
    let bp = dir.path().join("beats.csv");
    format::save_beats(&bp, &corpus).unwrap();
    assert_eq!(format::load_beats(&bp).unwrap(), corpus);
}

#[test]
fn corrupted_model_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let model = nn::DenseModel::zeros(Variant::SigmoidSigmoid, nn::STANDARD_SHAPE);
    let path = dir.path().join("m.bin");
    format::save_model(&path, &model).unwrap();
    let mut bytes = fs::read(&path).unwrap();
    bytes[20] ^= 0x40;
    fs::write(&path, bytes).unwrap();
    assert!(matches!(format::load_model(&path), Err(tinyecg::Error::Checksum { .. })));
}

#[test]
fn streamed_normal_record_is_classified() {
    let corpus = synth::beat_corpus(250, 2).unwrap();
    let (model, _) = train::fit(&corpus, &BeatSet::default(), &quick_config(Variant::SigmoidSigmoid)).unwrap();
    let qm = quant::quantize_model(&model, QuantMode::Symmetric).unwrap();
    let rec = synth::record(&RecordConfig {
        snr_db: None,
        baseline_wander_mv: 0.0,
        seed: 8,
        ..RecordConfig::default()
    })
    .unwrap();

    let mut stream = BeatStream::new(&FilterSpec::pan_tompkins(MITBIH_RATE_HZ)).unwrap();
    let mut labels = Vec::new();
    for &x in &rec.signal.samples {
        for ev in stream.push(x) {
            match ev {
                StreamEvent::Beat { window, .. } => {
                    labels.push(nn::class_of(&quant::forward_temporary_dequantized(&qm, &window).unwrap()).unwrap())
                }
                StreamEvent::Lost { r_index } => panic!("lost beat at {r_index}"),
            }
        }
    }
    assert_eq!(labels.len(), 10);
    assert!(labels.iter().filter(|c| **c == Class::N).count() >= 9, "{labels:?}");
}
