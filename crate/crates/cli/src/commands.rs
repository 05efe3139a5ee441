//! One function per subcommand. Each stage reads the previous stage's files
//! and writes its own, so every step can be inspected on its own.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use hydroleak::detect::{Classification, Detector, LatencyReport, ThreadedDetector};
use hydroleak::metrics::{self, ConfusionMatrix3, MetricsReport};
use hydroleak::nn::{init_network, load_model, save_model};
use hydroleak::signal::{
    build_dataset, default_peak_params, detect_peaks, read_split_csv, segment_cycles,
    write_split_csv,
};
use hydroleak::sim::{extension_summary, simulate_class};
use hydroleak::train::{evaluate, train_with};
use hydroleak::{CycleSegment, Dataset, Error, LeakClass, Network, NormStats, Real, Trace};
use serde::{Deserialize, Serialize};

use crate::settings::{Precision, Settings};

pub const DATASET_META: &str = "dataset.json";
pub const MODEL_FILE: &str = "model.json";

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let file = File::open(path).map_err(|e| {
        Error::Incompatible(format!("missing upstream artifact {}: {e}", path.display()))
    })?;
    Ok(BufReader::new(file))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(
            Error::Incompatible(format!("missing upstream artifact {}", path.display())).into(),
        );
    }
    Ok(())
}

/// Seed of the trace for repetition `rep` of `class`.
pub fn trace_seed(seed: u64, class: LeakClass, rep: usize) -> u64 {
    seed.wrapping_mul(1000)
        .wrapping_add(100 * class.index() as u64)
        .wrapping_add(rep as u64)
}

pub fn trace_file_name(class: LeakClass, rep: usize) -> String {
    format!("trace_{}_{rep:03}.csv", class.name())
}

pub fn simulate(settings: &Settings, classes: &[LeakClass], out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let mut summary = create(&out.join("summary.csv"))?;
    writeln!(
        summary,
        "class,repeat,samples,strokes,mean_extension_p1,mean_extension_speed"
    )?;
    println!("class  repeat  strokes  mean_p1[Pa]     mean_speed[m/s]");
    for &class in classes {
        for rep in 0..settings.repeats {
            let config = hydroleak::SimConfig {
                seed: trace_seed(settings.seed, class, rep),
                ..settings.sim.clone()
            };
            let trace = simulate_class(&settings.actuator, &settings.leak, &config, class)?;
            trace.write_csv(create(&out.join(trace_file_name(class, rep)))?)?;
            let s = extension_summary(&trace)?;
            let strokes = trace.valve_transitions();
            writeln!(
                summary,
                "{},{rep},{},{strokes},{:.12e},{:.12e}",
                class.name(),
                trace.len(),
                s.mean_p1,
                s.mean_speed
            )?;
            println!(
                "{:<6} {rep:>6}  {strokes:>7}  {:.6e}    {:.6e}",
                class.name(),
                s.mean_p1,
                s.mean_speed
            );
        }
    }
    summary.flush()?;
    Ok(())
}

/// Trace files in `dir`, sorted by name.
pub fn trace_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| {
        Error::Incompatible(format!(
            "cannot read trace directory {}: {e}",
            dir.display()
        ))
    })?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("trace_") && name.ends_with(".csv") {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(
            Error::Incompatible(format!("no trace_*.csv files in {}", dir.display())).into(),
        );
    }
    Ok(files)
}

pub fn read_trace(path: &Path) -> Result<Trace> {
    Trace::read_csv(open(path)?).with_context(|| format!("reading {}", path.display()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub seq_len: usize,
    pub norm: NormStats,
    pub train: usize,
    pub test: usize,
    pub traces: Vec<String>,
}

pub fn dataset(settings: &Settings, input: &Path, out: &Path) -> Result<()> {
    let files = trace_files(input)?;
    ensure_dir(out)?;
    let traces = files
        .iter()
        .map(|p| read_trace(p))
        .collect::<Result<Vec<_>>>()?;
    let ds = build_dataset(&traces, &settings.signal, settings.seed)?;
    write_split_csv(&ds.train, ds.seq_len, create(&out.join("train.csv"))?)?;
    write_split_csv(&ds.test, ds.seq_len, create(&out.join("test.csv"))?)?;

    let names: Vec<String> = files
        .iter()
        .map(|p| {
            p.file_name()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned()
        })
        .collect();
    let meta = DatasetMeta {
        seed: ds.seed,
        seq_len: ds.seq_len,
        norm: ds.norm,
        train: ds.train.len(),
        test: ds.test.len(),
        traces: names.clone(),
    };
    let mut w = create(&out.join(DATASET_META))?;
    serde_json::to_writer_pretty(&mut w, &meta)?;
    writeln!(w)?;
    w.flush()?;

    // Peaks on the left-chamber pressure, thresholds from the training strokes.
    let train_refs: HashSet<(usize, usize)> = ds
        .train
        .iter()
        .filter_map(|s| s.source.as_ref())
        .map(|r| (r.trace, r.start_index))
        .collect();
    let train_refs = &train_refs;
    let min_len = settings.signal.min_cycle_samples;
    let segments: Vec<Vec<CycleSegment>> =
        traces.iter().map(|t| segment_cycles(t, min_len)).collect();
    let train_segments: Vec<CycleSegment> = segments
        .iter()
        .enumerate()
        .flat_map(|(i, segs)| {
            segs.iter()
                .filter(move |s| train_refs.contains(&(i, s.start_index)))
        })
        .cloned()
        .collect();
    let (min_prominence, min_distance) = default_peak_params(&train_segments);
    let mut peaks = create(&out.join("peaks.csv"))?;
    writeln!(peaks, "trace,index,t,p1,prominence")?;
    for (name, trace) in names.iter().zip(&traces) {
        for p in detect_peaks(&trace.p1, min_prominence, min_distance) {
            writeln!(
                peaks,
                "{name},{},{:.12e},{:.12e},{:.12e}",
                p.index, trace.sample_times[p.index], p.value, p.prominence
            )?;
        }
    }
    peaks.flush()?;

    let strokes: usize = segments.iter().map(Vec::len).sum();
    println!(
        "strokes={strokes} train={} test={} seq_len={} norm_mean={:.6e} norm_std={:.6e}",
        ds.train.len(),
        ds.test.len(),
        ds.seq_len,
        ds.norm.mean,
        ds.norm.std
    );
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<(Dataset, DatasetMeta)> {
    let meta: DatasetMeta = serde_json::from_reader(open(&dir.join(DATASET_META))?)
        .map_err(|e| Error::Parse(format!("{}: {e}", dir.join(DATASET_META).display())))?;
    let read = |name: &str| -> Result<Vec<hydroleak::SequenceSample>> {
        let (samples, len) = read_split_csv(open(&dir.join(name))?)?;
        if len != meta.seq_len {
            return Err(Error::Incompatible(format!(
                "{name} has sequence length {len}, {DATASET_META} says {}",
                meta.seq_len
            ))
            .into());
        }
        Ok(samples)
    };
    let ds = Dataset {
        train: read("train.csv")?,
        test: read("test.csv")?,
        norm: meta.norm,
        seed: meta.seed,
        seq_len: meta.seq_len,
    };
    Ok((ds, meta))
}

pub fn train(settings: &Settings, data: &Path, out: &Path) -> Result<()> {
    for name in [DATASET_META, "train.csv", "test.csv"] {
        require_file(&data.join(name))?;
    }
    ensure_dir(out)?;
    let (ds, _) = load_dataset(data)?;
    if ds.seq_len != settings.signal.seq_len {
        return Err(Error::Incompatible(format!(
            "dataset sequence length {} differs from configured signal.seq_len {}",
            ds.seq_len, settings.signal.seq_len
        ))
        .into());
    }
    match settings.precision {
        Precision::F32 => train_as::<f32>(settings, &ds, out),
        Precision::F64 => train_as::<f64>(settings, &ds, out),
    }
}

fn train_as<F: Real>(settings: &Settings, ds: &Dataset, out: &Path) -> Result<()> {
    let net = init_network::<F>(&settings.model, settings.seed)?;
    println!("parameters={} precision={}", net.parameter_count(), F::NAME);
    let total = settings.train.epochs;
    let started = Instant::now();
    let (net, history) = train_with(ds, net, &settings.train, |e| {
        if e.epoch == 1 || e.epoch % 10 == 0 || e.epoch == total {
            println!(
                "epoch {}/{total} train_loss={:.4} train_acc={:.4} val_loss={:.4} val_acc={:.4} elapsed={:.0}s",
                e.epoch,
                e.train_loss,
                e.train_accuracy,
                e.val_loss,
                e.val_accuracy,
                started.elapsed().as_secs_f64()
            );
        }
    })?;
    save_model(&net, out.join(MODEL_FILE))?;
    history.write_csv(create(&out.join("history.csv"))?)?;
    Ok(())
}

fn check_compatible<F: Real>(net: &Network<F>, meta: &DatasetMeta) -> Result<()> {
    if net.seq_len != Some(meta.seq_len) {
        return Err(Error::Incompatible(format!(
            "model expects sequence length {:?}, dataset has {}",
            net.seq_len, meta.seq_len
        ))
        .into());
    }
    if net.norm != Some(meta.norm) {
        return Err(Error::Incompatible(
            "model normalisation differs from the dataset's; they come from different runs".into(),
        )
        .into());
    }
    Ok(())
}

pub fn eval(settings: &Settings, model: &Path, data: &Path, out: &Path) -> Result<()> {
    require_file(model)?;
    for name in [DATASET_META, "test.csv"] {
        require_file(&data.join(name))?;
    }
    ensure_dir(out)?;
    match settings.precision {
        Precision::F32 => eval_as::<f32>(model, data, out),
        Precision::F64 => eval_as::<f64>(model, data, out),
    }
}

#[derive(Serialize)]
struct EvalReport<'a> {
    samples: usize,
    loss: f64,
    #[serde(flatten)]
    metrics: &'a MetricsReport,
}

fn eval_as<F: Real>(model: &Path, data: &Path, out: &Path) -> Result<()> {
    let net: Network<F> = load_model(model)?;
    let (ds, meta) = load_dataset(data)?;
    check_compatible(&net, &meta)?;
    let ev = evaluate(&net, &ds.test)?;
    let cm = metrics::confusion(&ev.labels, &ev.predictions)?;
    let report = MetricsReport::from_confusion(&cm)?;
    write_metrics(
        out,
        &cm,
        &EvalReport {
            samples: ds.test.len(),
            loss: ev.loss,
            metrics: &report,
        },
    )?;

    let mut preds = create(&out.join("predictions.csv"))?;
    writeln!(preds, "index,label,predicted,p_none,p_low,p_high")?;
    for (i, ((label, pred), p)) in ev
        .labels
        .iter()
        .zip(&ev.predictions)
        .zip(&ev.scores)
        .enumerate()
    {
        writeln!(
            preds,
            "{i},{label},{pred},{:.9e},{:.9e},{:.9e}",
            p[0], p[1], p[2]
        )?;
    }
    preds.flush()?;
    for class in LeakClass::ALL {
        match metrics::pr_curve(&ev.scores, &ev.labels, class.index()) {
            Ok(curve) => metrics::write_pr_csv(
                &curve,
                create(&out.join(format!("pr_{}.csv", class.name())))?,
            )?,
            Err(Error::UndefinedRecall(_)) => {
                println!("pr_{}: class absent from test split, skipped", class.name())
            }
            Err(e) => return Err(e.into()),
        }
    }
    print_report(&report);
    println!("loss={:.6}", ev.loss);
    Ok(())
}

fn write_metrics<T: Serialize>(out: &Path, cm: &ConfusionMatrix3, report: &T) -> Result<()> {
    let mut w = create(&out.join("metrics.json"))?;
    serde_json::to_writer_pretty(&mut w, report)?;
    writeln!(w)?;
    w.flush()?;
    let mut c = create(&out.join("confusion.csv"))?;
    writeln!(
        c,
        "# rows: true none/low/high, columns: predicted none/low/high"
    )?;
    for row in cm.counts {
        writeln!(c, "{},{},{}", row[0], row[1], row[2])?;
    }
    c.flush()?;
    Ok(())
}

fn print_report(report: &MetricsReport) {
    println!("accuracy={:.6}", report.accuracy);
    for (class, m) in LeakClass::ALL.iter().zip(&report.per_class) {
        println!(
            "class={} precision={:.6} recall={:.6} f1={:.6}",
            class.name(),
            m.precision,
            m.recall,
            m.f1
        );
    }
}

/// Metrics straight from a stored confusion matrix.
pub fn eval_confusion(path: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Incompatible(format!("cannot read {}: {e}", path.display())))?;
    let cm = ConfusionMatrix3::parse_csv(&text)?;
    let report = MetricsReport::from_confusion(&cm)?;
    ensure_dir(out)?;
    write_metrics(out, &cm, &report)?;
    print_report(&report);
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Pace {
    /// Feed samples as fast as possible.
    Native,
    /// Feed samples at the trace's own timestamps.
    Realtime,
}

#[derive(Serialize)]
struct LatencySummary<'a> {
    report: &'a LatencyReport,
    budget_ms: f64,
    within_budget: bool,
    threaded: bool,
}

pub fn detect(
    settings: &Settings,
    model: &Path,
    input: &Path,
    out: &Path,
    pace: Pace,
    threaded: bool,
) -> Result<()> {
    require_file(model)?;
    require_file(input)?;
    ensure_dir(out)?;
    match settings.precision {
        Precision::F32 => detect_as::<f32>(settings, model, input, out, pace, threaded),
        Precision::F64 => detect_as::<f64>(settings, model, input, out, pace, threaded),
    }
}

fn detect_as<F: Real>(
    settings: &Settings,
    model: &Path,
    input: &Path,
    out: &Path,
    pace: Pace,
    threaded: bool,
) -> Result<()> {
    let net: Network<F> = load_model(model)?;
    let trace = read_trace(input)?;
    let config = hydroleak::detect::DetectorConfig {
        min_cycle_samples: settings.detect.min_cycle_samples,
        max_cycle_samples: settings.detect.max_cycle_samples,
    };

    let mut jsonl = create(&out.join("detections.jsonl"))?;
    let mut csv = create(&out.join("detections.csv"))?;
    writeln!(csv, "cycle,class,p_none,p_low,p_high")?;
    let mut emit = |c: &Classification| -> Result<()> {
        writeln!(jsonl, "{}", c.to_json_line())?;
        writeln!(
            csv,
            "{},{},{:.9e},{:.9e},{:.9e}",
            c.cycle_index,
            c.predicted.name(),
            c.probs[0],
            c.probs[1],
            c.probs[2]
        )?;
        Ok(())
    };

    let start = Instant::now();
    let t0 = trace.sample_times.first().copied().unwrap_or(0.0);
    let wait = |t: f64| {
        if pace == Pace::Realtime {
            let due = Duration::from_secs_f64((t - t0).max(0.0));
            if let Some(left) = due.checked_sub(start.elapsed()) {
                std::thread::sleep(left);
            }
        }
    };

    let all = if threaded {
        let mut det = ThreadedDetector::new::<F>(net, config)?;
        for i in 0..trace.len() {
            wait(trace.sample_times[i]);
            det.push_sample(trace.sample_times[i], trace.p1[i], trace.u[i])?;
            for c in det.poll()? {
                emit(&c)?;
            }
        }
        let (rest, all) = det.finish()?;
        for c in &rest {
            emit(c)?;
        }
        all
    } else {
        let mut det = Detector::new(net, config)?;
        for i in 0..trace.len() {
            wait(trace.sample_times[i]);
            if let Some(c) = det.push_sample(trace.sample_times[i], trace.p1[i], trace.u[i])? {
                emit(&c)?;
            }
        }
        det.classifications().to_vec()
    };
    jsonl.flush()?;
    csv.flush()?;

    let report = LatencyReport::from_classifications(&all)?;
    let within_budget = report.mean * 1e3 < settings.budget_ms;
    let mut w = create(&out.join("latency.json"))?;
    serde_json::to_writer_pretty(
        &mut w,
        &LatencySummary {
            report: &report,
            budget_ms: settings.budget_ms,
            within_budget,
            threaded,
        },
    )?;
    writeln!(w)?;
    w.flush()?;

    let mut counts = [0usize; 3];
    for c in &all {
        counts[c.predicted.index()] += 1;
    }
    println!(
        "cycles={} none={} low={} high={} mean_us={:.1} p95_us={:.1} max_us={:.1} preprocess_mean_us={:.1} budget_ms={} within_budget={}",
        report.count,
        counts[0],
        counts[1],
        counts[2],
        report.mean * 1e6,
        report.p95 * 1e6,
        report.max * 1e6,
        report.preprocess_mean * 1e6,
        settings.budget_ms,
        within_budget
    );
    Ok(())
}
