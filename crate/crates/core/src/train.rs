//! Epoch loop and offline evaluation.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::FlatConfig;
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, batch_cross_entropy, batch_from_samples, network_backward, network_forward,
    AdamState, Network, Real,
};
use crate::signal::{Dataset, SequenceSample};

const EVAL_BATCH: usize = 64;
// Keeps the dropout stream independent of the shuffle stream.
const DROPOUT_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 3e-4,
            batch_size: 32,
            seed: 0,
            shuffle_each_epoch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        Ok(())
    }

    pub fn override_from(&mut self, cfg: &mut FlatConfig) -> Result<()> {
        cfg.take_into("train.epochs", &mut self.epochs)?;
        cfg.take_into("train.lr", &mut self.lr)?;
        cfg.take_into("train.batch_size", &mut self.batch_size)?;
        cfg.take_into("train.shuffle_each_epoch", &mut self.shuffle_each_epoch)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochStats>,
}

impl History {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }

    /// CSV with header `epoch,train_loss,train_acc,val_loss,val_acc`;
    /// epochs are numbered from 1.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "epoch,train_loss,train_acc,val_loss,val_acc")?;
        for e in &self.epochs {
            writeln!(
                out,
                "{},{:.12e},{:.12e},{:.12e},{:.12e}",
                e.epoch, e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy
            )?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Inference-mode results over a sample set.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
    pub scores: Vec<[f64; 3]>,
}

/// Index of the largest probability; ties go to the lowest class index.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (k, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = k;
        }
    }
    best
}

pub fn evaluate<F: Real>(net: &Network<F>, samples: &[SequenceSample]) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Degenerate("nothing to evaluate".into()));
    }
    let mut loss_sum = 0.0;
    let mut predictions = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    let mut scores = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let refs: Vec<&SequenceSample> = chunk.iter().collect();
        let (x, y) = batch_from_samples::<F>(&refs)?;
        let probs = net.predict(x.view())?;
        let batch_loss = batch_cross_entropy(probs.view(), y.view())?;
        loss_sum += batch_loss.to_f64().unwrap_or(f64::NAN) * chunk.len() as f64;
        for (row, sample) in probs.rows().into_iter().zip(chunk) {
            let p = [
                row[0].to_f64().unwrap_or(f64::NAN),
                row[1].to_f64().unwrap_or(f64::NAN),
                row[2].to_f64().unwrap_or(f64::NAN),
            ];
            predictions.push(argmax(&p));
            labels.push(sample.label().index());
            scores.push(p);
        }
    }
    let correct = predictions
        .iter()
        .zip(&labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(Evaluation {
        loss: loss_sum / samples.len() as f64,
        accuracy: correct as f64 / samples.len() as f64,
        predictions,
        labels,
        scores,
    })
}

/// [`train_with`] without a progress callback.
pub fn train<F: Real>(
    dataset: &Dataset,
    net: Network<F>,
    config: &TrainConfig,
) -> Result<(Network<F>, History)> {
    train_with(dataset, net, config, |_| {})
}

/// Mini-batch Adam training. Each epoch shuffles the training split
/// (seeded) and runs forward/backward/update per batch. Training loss and
/// accuracy are averaged over the epoch's batches as they are seen (dropout
/// active); the test split is evaluated in inference mode after the epoch.
/// `on_epoch` sees every recorded epoch.
pub fn train_with<F: Real>(
    dataset: &Dataset,
    mut net: Network<F>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(Network<F>, History)> {
    config.validate()?;
    if dataset.train.is_empty() || dataset.test.is_empty() {
        return Err(Error::Degenerate(
            "training and test splits must both be non-empty".into(),
        ));
    }
    net.validate()?;
    net.seq_len = Some(dataset.seq_len);
    net.norm = Some(dataset.norm);

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed ^ DROPOUT_STREAM);
    let mut adam = AdamState::for_network(&net, config.lr);
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    let mut history = History::default();

    for epoch in 1..=config.epochs {
        let last_good = epoch.checked_sub(1).filter(|&e| e > 0);
        let diverged = |what| Error::TrainingDiverged {
            what,
            epoch,
            last_good,
        };
        if config.shuffle_each_epoch {
            order.shuffle(&mut shuffle_rng);
        }
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for idx in order.chunks(config.batch_size) {
            let refs: Vec<&SequenceSample> = idx.iter().map(|&i| &dataset.train[i]).collect();
            let (x, y) = batch_from_samples::<F>(&refs)?;
            let (probs, cache) = network_forward(&net, x.view(), true, &mut dropout_rng)?;
            let loss = batch_cross_entropy(probs.view(), y.view())?;
            if !loss.is_finite() {
                return Err(diverged("loss"));
            }
            loss_sum += loss.to_f64().unwrap_or(f64::NAN) * idx.len() as f64;
            for (row, sample) in probs.rows().into_iter().zip(&refs) {
                let p: Vec<f64> = row.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
                correct += usize::from(argmax(&p) == sample.label().index());
            }
            let grads = network_backward(&net, cache.as_ref(), probs.view(), y.view())?;
            adam_step(&mut net, &grads, &mut adam).map_err(|e| match e {
                Error::TrainingDiverged { what, .. } => diverged(what),
                other => other,
            })?;
        }
        let n_train = dataset.train.len() as f64;
        let val_eval = evaluate(&net, &dataset.test)?;
        if !val_eval.loss.is_finite() {
            return Err(diverged("loss"));
        }
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / n_train,
            train_accuracy: correct as f64 / n_train,
            val_loss: val_eval.loss,
            val_accuracy: val_eval.accuracy,
        };
        on_epoch(&stats);
        history.epochs.push(stats);
    }
    Ok((net, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_network, NetworkSpec};
    use crate::signal::NormStats;
    use crate::sim::LeakClass;

    fn tiny_spec() -> NetworkSpec {
        NetworkSpec {
            input_dim: 1,
            lstm1: 4,
            lstm2: 3,
            dense1: 4,
            dense2: 3,
            classes: 3,
            dropout: 0.3,
        }
    }

    fn tiny_dataset() -> Dataset {
        let mk = |class: LeakClass, phase: f64| {
            let values = (0..6)
                .map(|t| (t as f64 * 0.7 + phase).sin() + class.index() as f64)
                .collect();
            SequenceSample::new(values, class)
        };
        let mut train = Vec::new();
        let mut test = Vec::new();
        for class in LeakClass::ALL {
            for k in 0..4 {
                train.push(mk(class, k as f64 * 0.3));
            }
            test.push(mk(class, 2.0));
        }
        Dataset {
            train,
            test,
            norm: NormStats::new(0.0, 1.0).unwrap(),
            seed: 0,
            seq_len: 6,
        }
    }

    #[test]
    fn zero_epochs_rejected() {
        let net = init_network::<f64>(&tiny_spec(), 0).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&tiny_dataset(), net, &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn one_epoch_gives_one_history_row() {
        let net = init_network::<f64>(&tiny_spec(), 0).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let (trained, history) = train(&tiny_dataset(), net, &cfg).unwrap();
        assert_eq!(history.len(), 1);
        assert_eq!(trained.seq_len, Some(6));
        let mut buf = Vec::new();
        history.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,train_loss,train_acc,val_loss,val_acc\n1,"));
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 5,
            seed: 9,
            ..TrainConfig::default()
        };
        let run = || {
            let net = init_network::<f64>(&tiny_spec(), 4).unwrap();
            train(&tiny_dataset(), net, &cfg).unwrap()
        };
        let (a, ha) = run();
        let (b, hb) = run();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
    }

    #[test]
    fn uniform_output_follows_tie_break() {
        let mut net = init_network::<f64>(&tiny_spec(), 1).unwrap();
        net.output.w.fill(0.0);
        net.output.b.fill(0.0);
        let mut ds = tiny_dataset();
        // Class 0 is the majority: 4 + 1 + 1 samples.
        ds.train.retain(|s| s.label() == LeakClass::NoLeak);
        ds.train.push(ds.test[1].clone());
        ds.train.push(ds.test[2].clone());
        let eval = evaluate(&net, &ds.train).unwrap();
        assert!(eval.predictions.iter().all(|&p| p == 0));
        assert!((eval.accuracy - 4.0 / 6.0).abs() < 1e-15);
        assert!((eval.loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_net_scores_perfectly() {
        let mut net = init_network::<f64>(&tiny_spec(), 1).unwrap();
        net.output.w.fill(0.0);
        net.output.b.assign(&ndarray::arr1(&[1e4, 0.0, 0.0]));
        let samples: Vec<SequenceSample> = tiny_dataset()
            .train
            .into_iter()
            .filter(|s| s.label() == LeakClass::NoLeak)
            .collect();
        let eval = evaluate(&net, &samples).unwrap();
        assert_eq!(eval.accuracy, 1.0);
        assert_eq!(eval.loss, 0.0);
    }

    #[test]
    fn evaluation_is_repeatable_and_pure() {
        let net = init_network::<f64>(&tiny_spec(), 2).unwrap();
        let before = net.clone();
        let ds = tiny_dataset();
        let a = evaluate(&net, &ds.train).unwrap();
        let b = evaluate(&net, &ds.train).unwrap();
        assert_eq!(a, b);
        assert_eq!(net, before);
        assert!(evaluate(&net, &[]).is_err());
    }

    #[test]
    fn argmax_ties_pick_lowest_index() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[1.0 / 3.0; 3]), 0);
    }
}
