//! Online per-stroke classification.
//!
//! Samples arrive one at a time. A stroke ends when the valve command changes
//! sign; the finished stroke is resampled, normalised with the statistics
//! stored in the model and classified. Latency is wall time from the moment
//! the sign change is seen to the moment the classification is returned, so
//! it covers preprocessing and the forward pass but not sample ingestion.

use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Network, Real};
use crate::signal::{resample, NormStats, DEFAULT_MIN_CYCLE_SAMPLES};
use crate::sim::LeakClass;
use crate::train::argmax;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub min_cycle_samples: usize,
    pub max_cycle_samples: usize,
}

impl DetectorConfig {
    /// Default bounds for sequence length `seq_len`: 50 and `10 * seq_len`.
    pub fn for_seq_len(seq_len: usize) -> Self {
        Self {
            min_cycle_samples: DEFAULT_MIN_CYCLE_SAMPLES,
            max_cycle_samples: 10 * seq_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_cycle_samples < 2 {
            return Err(Error::Config("min_cycle_samples must be at least 2".into()));
        }
        if self.max_cycle_samples < self.min_cycle_samples {
            return Err(Error::Config(format!(
                "max_cycle_samples ({}) below min_cycle_samples ({})",
                self.max_cycle_samples, self.min_cycle_samples
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    pub cycle_index: u64,
    pub predicted: LeakClass,
    pub probs: [f64; 3],
    /// Cycle-completion detection to emit.
    pub inference_latency: Duration,
    /// Resampling and normalisation only.
    pub preprocess_latency: Duration,
    /// Forward pass only.
    pub model_latency: Duration,
}

impl Classification {
    /// One JSON object per line; latencies in microseconds.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({
            "cycle": self.cycle_index,
            "class": self.predicted.name(),
            "probs": self.probs,
            "latency_us": micros(self.inference_latency),
            "preprocess_us": micros(self.preprocess_latency),
            "model_us": micros(self.model_latency),
        })
        .to_string()
    }
}

fn micros(d: Duration) -> f64 {
    d.as_secs_f64() * 1e6
}

/// Summary of per-cycle latencies, in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub latencies: Vec<f64>,
    pub count: usize,
    pub mean: f64,
    pub p95: f64,
    pub max: f64,
    pub preprocess_mean: f64,
    pub model_mean: f64,
}

impl LatencyReport {
    pub fn from_classifications(items: &[Classification]) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::EmptyReport);
        }
        let latencies: Vec<f64> = items
            .iter()
            .map(|c| c.inference_latency.as_secs_f64())
            .collect();
        let n = latencies.len() as f64;
        let mut sorted = latencies.clone();
        sorted.sort_by(f64::total_cmp);
        // Nearest-rank percentile.
        let rank = ((0.95 * n).ceil() as usize).clamp(1, sorted.len());
        let mean_of = |f: fn(&Classification) -> Duration| {
            items.iter().map(|c| f(c).as_secs_f64()).sum::<f64>() / n
        };
        Ok(Self {
            count: latencies.len(),
            mean: latencies.iter().sum::<f64>() / n,
            p95: sorted[rank - 1],
            max: sorted[sorted.len() - 1],
            preprocess_mean: mean_of(|c| c.preprocess_latency),
            model_mean: mean_of(|c| c.model_latency),
            latencies,
        })
    }
}

/// Stroke segmentation state shared by the synchronous and threaded
/// detectors.
#[derive(Debug)]
struct CycleTracker {
    config: DetectorConfig,
    buffer: Vec<f64>,
    sign: Option<i8>,
    last_t: Option<f64>,
    next_index: u64,
    // Set after an overflow: samples are dropped until the next transition.
    overflowed: bool,
}

struct CompletedCycle {
    index: u64,
    samples: Vec<f64>,
    detected_at: Instant,
}

impl CycleTracker {
    fn new(config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            buffer: Vec::with_capacity(config.max_cycle_samples),
            sign: None,
            last_t: None,
            next_index: 0,
            overflowed: false,
        })
    }

    fn push(&mut self, t: f64, p1: f64, u: i8) -> Result<Option<CompletedCycle>> {
        if !t.is_finite() || !p1.is_finite() {
            return Err(Error::Parse(format!("non-finite sample at t={t}")));
        }
        if u != 1 && u != -1 {
            return Err(Error::Parse(format!(
                "valve command must be +1 or -1, got {u}"
            )));
        }
        if let Some(prev) = self.last_t {
            if t <= prev {
                return Err(Error::Ordering { t, prev });
            }
        }
        self.last_t = Some(t);

        let mut completed = None;
        if self.sign.is_some_and(|s| s != u) {
            let detected_at = Instant::now();
            if !self.overflowed && self.buffer.len() >= self.config.min_cycle_samples {
                let samples = std::mem::replace(
                    &mut self.buffer,
                    Vec::with_capacity(self.config.max_cycle_samples),
                );
                completed = Some(CompletedCycle {
                    index: self.next_index,
                    samples,
                    detected_at,
                });
                self.next_index += 1;
            }
            self.buffer.clear();
            self.overflowed = false;
        }
        self.sign = Some(u);
        if self.overflowed {
            return Ok(completed);
        }
        if self.buffer.len() == self.config.max_cycle_samples {
            self.buffer.clear();
            self.overflowed = true;
            return Err(Error::StuckCycle {
                max: self.config.max_cycle_samples,
            });
        }
        self.buffer.push(p1);
        Ok(completed)
    }
}

/// Per-model inference context: the network plus its preprocessing.
#[derive(Debug)]
struct Classifier<F> {
    net: Arc<Network<F>>,
    norm: NormStats,
    seq_len: usize,
}

impl<F: Real> Classifier<F> {
    fn new(net: Arc<Network<F>>) -> Result<Self> {
        net.validate()?;
        let norm = net
            .norm
            .ok_or_else(|| Error::Incompatible("model has no normalisation statistics".into()))?;
        let seq_len = net
            .seq_len
            .ok_or_else(|| Error::Incompatible("model has no sequence length".into()))?;
        if net.lstm1.input_dim() != 1 {
            return Err(Error::Incompatible(format!(
                "detector feeds one channel, model expects {}",
                net.lstm1.input_dim()
            )));
        }
        Ok(Self { net, norm, seq_len })
    }

    fn classify(&self, cycle: CompletedCycle) -> Result<Classification> {
        let start = cycle.detected_at;
        let mut values = resample(&cycle.samples, self.seq_len)?;
        self.norm.apply_all(&mut values);
        let input = Array3::from_shape_fn((1, self.seq_len, 1), |(_, t, _)| F::lit(values[t]));
        let preprocessed = Instant::now();
        let out = self.net.predict(input.view())?;
        let probs = [0, 1, 2].map(|k| out[[0, k]].to_f64().unwrap_or(f64::NAN));
        let predicted = LeakClass::from_index(argmax(&probs))?;
        let done = Instant::now();
        // Clock granularity can report zero for very fast paths; a latency of
        // zero would mean nothing was measured, so floor at one nanosecond.
        let floor = |d: Duration| d.max(Duration::from_nanos(1));
        Ok(Classification {
            cycle_index: cycle.index,
            predicted,
            probs,
            inference_latency: floor(done - start),
            preprocess_latency: floor(preprocessed - start),
            model_latency: floor(done - preprocessed),
        })
    }
}

/// Synchronous detector: inference runs inside [`Detector::push_sample`].
#[derive(Debug)]
pub struct Detector<F> {
    tracker: CycleTracker,
    classifier: Classifier<F>,
    emitted: Vec<Classification>,
}

impl<F: Real> Detector<F> {
    /// The network must carry normalisation statistics and a sequence
    /// length, as every trained or loaded model does.
    pub fn new(net: impl Into<Arc<Network<F>>>, config: DetectorConfig) -> Result<Self> {
        Ok(Self {
            tracker: CycleTracker::new(config)?,
            classifier: Classifier::new(net.into())?,
            emitted: Vec::new(),
        })
    }

    pub fn with_defaults(net: impl Into<Arc<Network<F>>>) -> Result<Self> {
        let net = net.into();
        let seq_len = net.seq_len.unwrap_or(crate::signal::DEFAULT_SEQ_LEN);
        Self::new(net, DetectorConfig::for_seq_len(seq_len))
    }

    pub fn config(&self) -> DetectorConfig {
        self.tracker.config
    }

    /// Samples currently buffered for the open stroke.
    pub fn buffered(&self) -> usize {
        self.tracker.buffer.len()
    }

    pub fn push_sample(&mut self, t: f64, p1: f64, u: i8) -> Result<Option<Classification>> {
        match self.tracker.push(t, p1, u)? {
            Some(cycle) => {
                let c = self.classifier.classify(cycle)?;
                self.emitted.push(c.clone());
                Ok(Some(c))
            }
            None => Ok(None),
        }
    }

    pub fn classifications(&self) -> &[Classification] {
        &self.emitted
    }

    pub fn latency_report(&self) -> Result<LatencyReport> {
        LatencyReport::from_classifications(&self.emitted)
    }
}

/// Hand-off detector: segmentation stays on the caller's thread, inference
/// runs on one worker thread so results come back in stroke order. Pushing a
/// sample never waits for inference.
pub struct ThreadedDetector {
    tracker: CycleTracker,
    jobs: Option<Sender<CompletedCycle>>,
    results: Receiver<Result<Classification>>,
    worker: Option<JoinHandle<()>>,
    emitted: Vec<Classification>,
}

impl ThreadedDetector {
    pub fn new<F: Real>(net: impl Into<Arc<Network<F>>>, config: DetectorConfig) -> Result<Self> {
        let classifier = Classifier::new(net.into())?;
        let tracker = CycleTracker::new(config)?;
        let (job_tx, job_rx) = mpsc::channel::<CompletedCycle>();
        let (res_tx, res_rx) = mpsc::channel();
        let worker = std::thread::spawn(move || {
            for cycle in job_rx {
                if res_tx.send(classifier.classify(cycle)).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            tracker,
            jobs: Some(job_tx),
            results: res_rx,
            worker: Some(worker),
            emitted: Vec::new(),
        })
    }

    /// Queues a finished stroke for classification; returns whether one was
    /// queued.
    pub fn push_sample(&mut self, t: f64, p1: f64, u: i8) -> Result<bool> {
        match self.tracker.push(t, p1, u)? {
            Some(cycle) => {
                self.jobs
                    .as_ref()
                    .expect("sender lives until finish")
                    .send(cycle)
                    .map_err(|_| Error::Incompatible("inference worker stopped".into()))?;
                Ok(true)
            }
            None => Ok(false),
        }
    }

    /// Classifications completed so far, without blocking.
    pub fn poll(&mut self) -> Result<Vec<Classification>> {
        let mut out = Vec::new();
        while let Ok(r) = self.results.try_recv() {
            out.push(r?);
        }
        self.emitted.extend(out.iter().cloned());
        Ok(out)
    }

    /// Waits for every queued stroke, stops the worker and returns the
    /// classifications not yet polled plus the report over all of them.
    pub fn finish(mut self) -> Result<(Vec<Classification>, Vec<Classification>)> {
        drop(self.jobs.take());
        let mut rest = Vec::new();
        for r in self.results.iter() {
            rest.push(r?);
        }
        if let Some(w) = self.worker.take() {
            w.join()
                .map_err(|_| Error::Incompatible("inference worker panicked".into()))?;
        }
        self.emitted.extend(rest.iter().cloned());
        Ok((rest, std::mem::take(&mut self.emitted)))
    }
}

impl Drop for ThreadedDetector {
    fn drop(&mut self) {
        drop(self.jobs.take());
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}
