//! Trace preprocessing: stroke segmentation, peak detection, resampling,
//! normalisation and the stratified train/test split.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::FlatConfig;
use crate::error::{Error, Result};
use crate::sim::{LeakClass, Trace};

pub const DEFAULT_MIN_CYCLE_SAMPLES: usize = 50;
pub const DEFAULT_SEQ_LEN: usize = 200;
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Extend,
    Retract,
}

impl Direction {
    fn from_sign(u: i8) -> Self {
        if u > 0 {
            Direction::Extend
        } else {
            Direction::Retract
        }
    }
}

/// Cap-side pressure of one stroke.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleSegment {
    pub samples: Vec<f64>,
    pub direction: Direction,
    /// First sample, inclusive, in the parent trace.
    pub start_index: usize,
    /// One past the last sample in the parent trace.
    pub end_index: usize,
    pub label: LeakClass,
}

/// Maximal runs of constant valve command as `start..end` index ranges.
pub fn valve_runs(u: &[i8]) -> Vec<std::ops::Range<usize>> {
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=u.len() {
        if i == u.len() || u[i] != u[start] {
            runs.push(start..i);
            start = i;
        }
    }
    runs
}

/// One segment per maximal run of constant `u`; runs shorter than
/// `min_cycle_samples` are dropped.
pub fn segment_cycles(trace: &Trace, min_cycle_samples: usize) -> Vec<CycleSegment> {
    valve_runs(&trace.u)
        .into_iter()
        .filter(|r| r.len() >= min_cycle_samples.max(1))
        .map(|r| CycleSegment {
            samples: trace.p1[r.clone()].to_vec(),
            direction: Direction::from_sign(trace.u[r.start]),
            start_index: r.start,
            end_index: r.end,
            label: trace.label,
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub index: usize,
    pub value: f64,
    pub prominence: f64,
}

fn prominence(signal: &[f64], i: usize) -> f64 {
    let height = signal[i];
    let mut left_min = height;
    for &s in signal[..i].iter().rev() {
        if s > height {
            break;
        }
        left_min = left_min.min(s);
    }
    let mut right_min = height;
    for &s in &signal[i + 1..] {
        if s > height {
            break;
        }
        right_min = right_min.min(s);
    }
    height - left_min.max(right_min)
}

/// Strict local maxima with at least `min_prominence`, thinned greedily
/// (tallest first) so that kept peaks are at least `min_distance` samples
/// apart. Output is sorted by index.
pub fn detect_peaks(signal: &[f64], min_prominence: f64, min_distance: usize) -> Vec<Peak> {
    let min_distance = min_distance.max(1);
    let mut candidates: Vec<Peak> = (1..signal.len().saturating_sub(1))
        .filter(|&i| signal[i] > signal[i - 1] && signal[i] > signal[i + 1])
        .map(|i| Peak {
            index: i,
            value: signal[i],
            prominence: prominence(signal, i),
        })
        .filter(|p| p.prominence >= min_prominence)
        .collect();

    // Stable sort keeps the lower index first among equal heights.
    candidates.sort_by(|a, b| b.value.total_cmp(&a.value));
    let mut kept: Vec<Peak> = Vec::with_capacity(candidates.len());
    for peak in candidates {
        if kept
            .iter()
            .all(|k| k.index.abs_diff(peak.index) >= min_distance)
        {
            kept.push(peak);
        }
    }
    kept.sort_by_key(|p| p.index);
    kept
}

/// Default peak thresholds for a training set: 5% of its pressure range,
/// 10 samples apart.
pub fn default_peak_params(train_segments: &[CycleSegment]) -> (f64, usize) {
    let (lo, hi) = train_segments
        .iter()
        .flat_map(|s| s.samples.iter().copied())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    let range = if hi > lo { hi - lo } else { 0.0 };
    (0.05 * range, 10)
}

/// Z-score statistics, fitted on training data only.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0 && std.is_finite() && mean.is_finite()) {
            return Err(Error::Degenerate(format!(
                "normalisation std must be positive, got {std}"
            )));
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, value: f64) -> f64 {
        (value - self.mean) / self.std
    }

    pub fn apply_all(&self, values: &mut [f64]) {
        for v in values {
            *v = self.apply(*v);
        }
    }
}

/// Population mean and standard deviation of every sample in `segments`.
pub fn fit_norm(segments: &[CycleSegment]) -> Result<NormStats> {
    fit_norm_values(segments.iter().map(|s| s.samples.as_slice()))
}

fn fit_norm_values<'a>(chunks: impl Iterator<Item = &'a [f64]> + Clone) -> Result<NormStats> {
    let n: usize = chunks.clone().map(<[f64]>::len).sum();
    if n < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 samples, got {n}"
        )));
    }
    let mean = chunks.clone().flatten().sum::<f64>() / n as f64;
    let var = chunks.flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if !(var > 0.0) {
        return Err(Error::Degenerate("training data is constant".into()));
    }
    NormStats::new(mean, var.sqrt())
}

/// Linear interpolation onto `len` evenly spaced points from the first to the
/// last input sample. Endpoints are reproduced exactly.
pub fn resample(values: &[f64], len: usize) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(Error::TooShort {
            len: values.len(),
            min: 2,
        });
    }
    if len < 2 {
        return Err(Error::Config(format!(
            "resample length must be >= 2, got {len}"
        )));
    }
    if values.len() == len {
        return Ok(values.to_vec());
    }
    let last = values.len() - 1;
    let scale = last as f64 / (len - 1) as f64;
    let mut out = Vec::with_capacity(len);
    for k in 0..len {
        if k == len - 1 {
            out.push(values[last]);
            continue;
        }
        let pos = k as f64 * scale;
        let i = (pos.floor() as usize).min(last - 1);
        let frac = pos - i as f64;
        out.push(values[i] + frac * (values[i + 1] - values[i]));
    }
    Ok(out)
}

/// Where a sample came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRef {
    pub trace: usize,
    pub start_index: usize,
    pub end_index: usize,
}

/// Fixed-length normalised model input with its one-hot label.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSample {
    pub values: Vec<f64>,
    pub onehot: [f64; 3],
    pub source: Option<SegmentRef>,
}

impl SequenceSample {
    pub fn new(values: Vec<f64>, label: LeakClass) -> Self {
        let mut onehot = [0.0; 3];
        onehot[label.index()] = 1.0;
        Self {
            values,
            onehot,
            source: None,
        }
    }

    pub fn label(&self) -> LeakClass {
        let idx = self.onehot.iter().position(|&v| v == 1.0).unwrap_or(0);
        LeakClass::from_index(idx).expect("one-hot index below 3")
    }
}

/// Preprocessing knobs shared by offline dataset building and online detection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalConfig {
    pub seq_len: usize,
    pub min_cycle_samples: usize,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            seq_len: DEFAULT_SEQ_LEN,
            min_cycle_samples: DEFAULT_MIN_CYCLE_SAMPLES,
        }
    }
}

impl SignalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seq_len < 2 {
            return Err(Error::Config(format!(
                "seq_len must be >= 2, got {}",
                self.seq_len
            )));
        }
        if self.min_cycle_samples < 2 {
            return Err(Error::Config(format!(
                "min_cycle_samples must be >= 2, got {}",
                self.min_cycle_samples
            )));
        }
        Ok(())
    }

    pub fn override_from(&mut self, cfg: &mut FlatConfig) -> Result<()> {
        cfg.take_into("signal.seq_len", &mut self.seq_len)?;
        cfg.take_into("signal.min_cycle_samples", &mut self.min_cycle_samples)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<SequenceSample>,
    pub test: Vec<SequenceSample>,
    pub norm: NormStats,
    pub seed: u64,
    pub seq_len: usize,
}

/// Segments every trace, resamples each stroke to `config.seq_len`, splits
/// each class 80/20 after a seeded shuffle and z-scores everything with
/// statistics of the training strokes' raw samples.
pub fn build_dataset(traces: &[Trace], config: &SignalConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let mut by_class: [Vec<(usize, CycleSegment)>; 3] = Default::default();
    for (ti, trace) in traces.iter().enumerate() {
        for seg in segment_cycles(trace, config.min_cycle_samples) {
            by_class[seg.label.index()].push((ti, seg));
        }
    }
    for class in LeakClass::ALL {
        if by_class[class.index()].len() < 2 {
            return Err(Error::MissingClass(class));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_segs = Vec::new();
    let mut test_segs = Vec::new();
    for group in by_class.iter_mut() {
        group.shuffle(&mut rng);
        let n_train =
            ((group.len() as f64 * TRAIN_FRACTION).round() as usize).clamp(1, group.len() - 1);
        let test_part = group.split_off(n_train);
        train_segs.append(group);
        test_segs.extend(test_part);
    }

    let norm = fit_norm_values(train_segs.iter().map(|(_, s)| s.samples.as_slice()))?;
    let to_sample = |(ti, seg): &(usize, CycleSegment)| -> Result<SequenceSample> {
        let mut values = resample(&seg.samples, config.seq_len)?;
        norm.apply_all(&mut values);
        let mut sample = SequenceSample::new(values, seg.label);
        sample.source = Some(SegmentRef {
            trace: *ti,
            start_index: seg.start_index,
            end_index: seg.end_index,
        });
        Ok(sample)
    };
    Ok(Dataset {
        train: train_segs.iter().map(to_sample).collect::<Result<_>>()?,
        test: test_segs.iter().map(to_sample).collect::<Result<_>>()?,
        norm,
        seed,
        seq_len: config.seq_len,
    })
}

/// Writes one split as CSV: `v0,...,v{L-1},label`.
pub fn write_split_csv<W: Write>(
    samples: &[SequenceSample],
    seq_len: usize,
    mut out: W,
) -> Result<()> {
    let header: Vec<String> = (0..seq_len).map(|i| format!("v{i}")).collect();
    writeln!(out, "{},label", header.join(","))?;
    for s in samples {
        if s.values.len() != seq_len {
            return Err(Error::Dimension(format!(
                "sample has {} values, expected {seq_len}",
                s.values.len()
            )));
        }
        for v in &s.values {
            write!(out, "{v:.12e},")?;
        }
        writeln!(out, "{}", s.label().index())?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a split written by [`write_split_csv`]; returns samples and L.
pub fn read_split_csv<R: std::io::BufRead>(input: R) -> Result<(Vec<SequenceSample>, usize)> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty dataset file".into()))??;
    let cols: Vec<&str> = header.trim().split(',').collect();
    let seq_len = cols.len().saturating_sub(1);
    let header_ok = cols.last() == Some(&"label")
        && seq_len >= 2
        && cols[..seq_len]
            .iter()
            .enumerate()
            .all(|(i, c)| *c == format!("v{i}"));
    if !header_ok {
        return Err(Error::Parse(
            "dataset header must be `v0,...,v{L-1},label`".into(),
        ));
    }
    let mut samples = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != seq_len + 1 {
            return Err(Error::Parse(format!(
                "line {}: expected {} fields",
                i + 2,
                seq_len + 1
            )));
        }
        let values = fields[..seq_len]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", i + 2)))
            })
            .collect::<Result<Vec<_>>>()?;
        let label: usize = fields[seq_len]
            .parse()
            .map_err(|e| Error::Parse(format!("line {}: {e}", i + 2)))?;
        samples.push(SequenceSample::new(values, LeakClass::from_index(label)?));
    }
    Ok((samples, seq_len))
}
