use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Write};

use log::{info, warn};
use serde_json::json;

use tinyecg::dsp::FilterSpec;
use tinyecg::format::{self, ModelFile};
use tinyecg::ingest::{self, BeatSet};
use tinyecg::metrics::{self, EvalReport};
use tinyecg::nn::{self, DenseModel};
use tinyecg::par::Execution;
use tinyecg::qrs::{BeatStream, StreamEvent};
use tinyecg::quant::{self, CostReport, QuantMode, QuantizedModel};
use tinyecg::synth::{self, RecordConfig};
use tinyecg::train::{self, DistillConfig};
use tinyecg::{Class, Error};

use crate::{
    CliError, CompressArgs, EvalArgs, InferenceMode, IngestArgs, Method, QuantizeArgs, ReportArgs, StreamArgs,
    SynthArgs, TrainArgs,
};

type Result<T> = std::result::Result<T, CliError>;

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

/// `Samples | N | S | V | F | Total` rows.
fn split_table(rows: &[(&str, [usize; 4])]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<10}{:>8}{:>8}{:>8}{:>8}{:>9}", "Samples", "N", "S", "V", "F", "Total");
    for (name, c) in rows {
        let total: usize = c.iter().sum();
        let _ = writeln!(s, "{name:<10}{:>8}{:>8}{:>8}{:>8}{total:>9}", c[0], c[1], c[2], c[3]);
    }
    s
}

pub fn ingest(args: &IngestArgs, json: bool) -> Result<()> {
    if args.signals.len() != args.annotations.len() {
        return Err(CliError::Usage(format!(
            "{} --signal files but {} --annotations files",
            args.signals.len(),
            args.annotations.len()
        )));
    }
    let mut all = BeatSet::default();
    let (mut out_of_bounds, mut other) = (0, 0);
    for (sig_path, ann_path) in args.signals.iter().zip(&args.annotations) {
        let signal = ingest::load_signal(sig_path, args.sampling_rate)?;
        let ann = ingest::load_annotations(ann_path)?;
        if ann.items.is_empty() {
            warn!("{}: no annotations", ann_path.display());
        }
        let ex = ingest::extract_beats(&signal, &ann.items)?;
        info!(
            "{}: {} beats, {} near the edges, {} non-beat annotations",
            sig_path.display(),
            ex.beats.len(),
            ex.skipped_out_of_bounds,
            ex.skipped_other
        );
        out_of_bounds += ex.skipped_out_of_bounds;
        other += ex.skipped_other;
        all.extend(ex.beats);
    }
    format::save_beats(&args.out, &all)?;

    let (train, test) = if all.len() >= 2 {
        let (tr, te) = ingest::split(&all, args.train_fraction, args.seed)?;
        if let Some(p) = &args.train_out {
            format::save_beats(p, &tr)?;
        }
        if let Some(p) = &args.test_out {
            format::save_beats(p, &te)?;
        }
        (tr, te)
    } else {
        if all.is_empty() {
            warn!("no beats extracted");
        }
        (all.clone(), BeatSet::default())
    };
    if json {
        return print_json(&json!({
            "training": train.counts(),
            "testing": test.counts(),
            "total": all.counts(),
            "skipped_out_of_bounds": out_of_bounds,
            "skipped_other": other,
        }));
    }
    print!(
        "{}",
        split_table(&[
            ("Training", train.counts()),
            ("Testing", test.counts()),
            ("Total", all.counts()),
        ])
    );
    if out_of_bounds + other > 0 {
        println!("skipped: {out_of_bounds} beats too close to a record edge, {other} non-beat annotations");
    }
    Ok(())
}

pub fn train(args: &TrainArgs, json: bool) -> Result<()> {
    let config = args.optim.config();
    let train_set = format::load_beats(&args.beats)?;
    let test_set = match &args.test {
        Some(p) => format::load_beats(p)?,
        None => BeatSet::default(),
    };
    info!("training {} on {} beats", config.variant, train_set.len());
    let (model, trace) = train::fit(&train_set, &test_set, &config)?;
    format::save_model(&args.out, &model)?;
    if let Some(p) = &args.trace {
        trace.write_csv(p)?;
    }
    let final_loss = trace.loss.last().copied().unwrap_or(f64::NAN);
    if json {
        return print_json(&json!({
            "variant": config.variant.name(),
            "epochs": config.epochs,
            "final_loss": final_loss,
            "train_accuracy": trace.train_accuracy,
            "train_macro_f1": trace.train_macro_f1,
            "test_accuracy": (!test_set.is_empty()).then_some(trace.test_accuracy),
            "test_macro_f1": (!test_set.is_empty()).then_some(trace.test_macro_f1),
        }));
    }
    println!("variant        {}", config.variant);
    println!("epochs         {}", config.epochs);
    println!("final loss     {final_loss:.6}");
    println!("train accuracy {:.6}  macro-F1 {:.6}", trace.train_accuracy, trace.train_macro_f1);
    if !test_set.is_empty() {
        println!("test accuracy  {:.6}  macro-F1 {:.6}", trace.test_accuracy, trace.test_macro_f1);
    }
    Ok(())
}

fn qparams_line(qm: &QuantizedModel) -> String {
    let q = qm.qparams();
    format!(
        "mode {} scale {:.6} zero-point {} range [{:.5}, {:.5}]",
        q.mode, q.scale, q.zero_point, q.alpha, q.beta
    )
}

fn print_cost(qm: &QuantizedModel, json: bool) -> Result<CostReport> {
    let cost = CostReport::for_model(qm);
    if json {
        print_json(&json!({ "qparams": qm.qparams(), "cost": cost }))?;
    } else {
        println!("{}", qparams_line(qm));
        if qm.qparams().zero_point != 0 {
            println!("note: nonzero zero-point, temporary dequantization adds s*z to every product");
        }
        println!();
        print!("{}", cost.to_table());
    }
    Ok(cost)
}

fn budget_check(cost: &CostReport) -> Result<()> {
    if cost.memory.over_budget {
        return Err(CliError::OverBudget {
            total: cost.memory.total_bytes,
            budget: cost.memory.budget_bytes,
        });
    }
    Ok(())
}

pub fn quantize(args: &QuantizeArgs, json: bool) -> Result<()> {
    let model = format::load_model(&args.model)?;
    let qm = quant::quantize_model(&model, args.mode.into())?;
    let cost = print_cost(&qm, json)?;
    budget_check(&cost)?;
    format::save_quantized(&args.out, &qm)?;
    Ok(())
}

/// Both representations of whatever model file was given.
struct Loaded {
    float: DenseModel,
    quantized: QuantizedModel,
}

fn load_any(path: &std::path::Path) -> Result<Loaded> {
    Ok(match format::load_model_file(path)? {
        ModelFile::Float(float) => {
            let quantized = quant::quantize_model(&float, QuantMode::Symmetric)?;
            Loaded { float, quantized }
        }
        ModelFile::Quantized(quantized) => {
            info!("quantized model given; default mode uses its dequantized weights");
            let float = quant::dequantize_model(&quantized)?;
            Loaded { float, quantized }
        }
    })
}

fn eval_mode(m: &Loaded, beats: &BeatSet, mode: InferenceMode) -> tinyecg::Result<EvalReport> {
    let exec = Execution::default();
    match mode {
        InferenceMode::Default => train::evaluate_model(&m.float, beats, exec),
        InferenceMode::Quantized => metrics::evaluate(beats, exec, |w| {
            nn::class_of(&quant::forward_quantized_only(&m.quantized, w)?)
        }),
        InferenceMode::TemporaryDequantized => metrics::evaluate(beats, exec, |w| {
            nn::class_of(&quant::forward_temporary_dequantized(&m.quantized, w)?)
        }),
    }
}

pub fn eval(args: &EvalArgs, json: bool) -> Result<()> {
    let model = load_any(&args.model)?;
    let beats = format::read_beats(&args.beats)?.into_beat_set()?;
    if beats.is_empty() {
        return Err(Error::EmptyInput(args.beats.display().to_string()).into());
    }
    let report = eval_mode(&model, &beats, args.inference_mode)?;
    if let Some(p) = &args.csv {
        fs::write(p, report.to_csv()).map_err(|e| Error::io(p, e))?;
    }
    if json {
        return print_json(&report);
    }
    print!("{}", report.to_table());
    Ok(())
}

pub fn stream(args: &StreamArgs) -> Result<()> {
    let model = match format::load_model_file(&args.model)? {
        ModelFile::Quantized(q) => q,
        ModelFile::Float(m) => {
            info!("float model given; quantizing symmetrically");
            quant::quantize_model(&m, QuantMode::Symmetric)?
        }
    };
    let signal = ingest::load_signal(&args.signal, args.sampling_rate)?;
    let mut beats = BeatStream::new(&FilterSpec::pan_tompkins(args.sampling_rate))?;
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let write_err = |e| Error::io("<stdout>", e);
    writeln!(out, "sample_index,label").map_err(write_err)?;
    let (mut n_beats, mut n_lost) = (0usize, 0usize);
    for &x in &signal.samples {
        for ev in beats.push(x) {
            match ev {
                StreamEvent::Beat { r_index, window } => {
                    let label = nn::class_of(&quant::forward_temporary_dequantized(&model, &window)?)?;
                    writeln!(out, "{r_index},{label}").map_err(write_err)?;
                    if label != Class::N {
                        writeln!(out, "ALERT,{r_index},{label}").map_err(write_err)?;
                    }
                    n_beats += 1;
                }
                StreamEvent::Lost { r_index } => {
                    warn!("beat at {r_index} left the buffer before its window was complete");
                    n_lost += 1;
                }
            }
        }
    }
    out.flush().map_err(write_err)?;
    info!(
        "{n_beats} beats classified, {n_lost} lost, buffer high-water mark {}",
        beats.detector().buffer().high_water_mark()
    );
    Ok(())
}

pub fn report(args: &ReportArgs, json: bool) -> Result<()> {
    let model = load_any(&args.model)?;
    let modes = [
        ("default", InferenceMode::Default),
        ("temporary-dequantized", InferenceMode::TemporaryDequantized),
        ("quantized", InferenceMode::Quantized),
    ];
    let scores = match &args.beats {
        Some(p) => {
            let beats = format::load_beats(p)?;
            modes
                .iter()
                .map(|(name, m)| eval_mode(&model, &beats, *m).map(|r| (*name, r)))
                .collect::<tinyecg::Result<Vec<_>>>()?
        }
        None => Vec::new(),
    };
    let cost = CostReport::for_model(&model.quantized);
    if json {
        let modes: serde_json::Map<String, serde_json::Value> = scores
            .iter()
            .map(|(n, r)| (n.to_string(), serde_json::to_value(r).expect("report serializes")))
            .collect();
        return print_json(&json!({ "qparams": model.quantized.qparams(), "cost": cost, "modes": modes }));
    }
    println!("{}", qparams_line(&model.quantized));
    println!();
    print!("{}", cost.to_table());
    if !scores.is_empty() {
        println!();
        println!("{:<24}{:>10}{:>10}{:>13}", "mode", "accuracy", "macro F1", "weighted F1");
        for (name, r) in &scores {
            println!(
                "{name:<24}{:>10.4}{:>10.4}{:>13.4}",
                r.accuracy, r.macro_avg.f1, r.weighted_avg.f1
            );
        }
    }
    budget_check(&cost)
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let weights: [f64; 4] = args
        .weights
        .as_slice()
        .try_into()
        .map_err(|_| CliError::Usage("--weights takes four values".into()))?;
    let base = if args.pulses {
        RecordConfig::pulse_train(args.beats, args.bpm, Some(args.snr), args.seed)
    } else {
        RecordConfig {
            n_beats: args.beats,
            heart_rate_bpm: args.bpm,
            snr_db: Some(args.snr),
            class_weights: weights,
            seed: args.seed,
            ..RecordConfig::default()
        }
    };
    let config = if args.clean {
        RecordConfig {
            snr_db: None,
            baseline_wander_mv: 0.0,
            ..base
        }
    } else {
        base
    };
    let rec = synth::record(&config)?;
    fs::write(&args.signal_out, rec.signal_csv()).map_err(|e| Error::io(&args.signal_out, e))?;
    fs::write(&args.annotations_out, rec.annotations_csv()).map_err(|e| Error::io(&args.annotations_out, e))?;
    info!("{} samples, {} beats", rec.signal.len(), rec.annotations.len());
    Ok(())
}

pub fn compress(args: &CompressArgs, json: bool) -> Result<()> {
    let config = args.optim.config();
    let beats = format::load_beats(&args.beats)?;
    let base = args.model.as_ref().map(format::load_model).transpose()?;
    let model = match (args.method, base) {
        (Method::Prune, Some(base)) => train::prune_and_retrain(&base, &beats, &config)?,
        (Method::Distill, Some(teacher)) => {
            let cfg = DistillConfig {
                hidden: args.hidden,
                ..DistillConfig::default()
            };
            train::distill_with(&teacher, &beats, &config, cfg)?
        }
        (Method::WeightsOnly, _) => train::fit_weights_only(&beats, &BeatSet::default(), &config)?.0,
        (_, None) => return Err(CliError::Usage("--model is required for prune and distill".into())),
    };
    format::save_model(&args.out, &model)?;
    let zeros = model.params().filter(|p| *p == 0.0).count();
    let accuracy = train::evaluate_model(&model, &beats, config.execution)?.accuracy;
    if json {
        return print_json(&json!({
            "shape": model.shape(),
            "parameters": model.param_count(),
            "zero_parameters": zeros,
            "train_accuracy": accuracy,
        }));
    }
    let shape: Vec<String> = model.shape().iter().map(ToString::to_string).collect();
    println!("shape          {}", shape.join("-"));
    println!("parameters     {}", model.param_count());
    println!("zero entries   {zeros}");
    println!("train accuracy {accuracy:.6}");
    Ok(())
}
