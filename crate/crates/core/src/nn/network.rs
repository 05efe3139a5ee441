use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dense::{Activation, DenseGrads, DenseLayer};
use super::dropout::dropout_forward;
use super::lstm::{LstmCache, LstmGrads, LstmLayer, SequenceMode};
use super::Real;
use crate::error::{Error, Result};
use crate::signal::{NormStats, SequenceSample};

/// Widths of the layer stack.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub lstm1: usize,
    pub lstm2: usize,
    pub dense1: usize,
    pub dense2: usize,
    pub classes: usize,
    pub dropout: f64,
}

impl NetworkSpec {
    /// 1 -> LSTM 128 -> LSTM 64 -> Dense 128 -> Dense 64 -> 3, dropout 0.3.
    pub fn standard() -> Self {
        Self {
            input_dim: 1,
            lstm1: 128,
            lstm2: 64,
            dense1: 128,
            dense2: 64,
            classes: 3,
            dropout: 0.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [
            self.input_dim,
            self.lstm1,
            self.lstm2,
            self.dense1,
            self.dense2,
            self.classes,
        ];
        if widths.contains(&0) {
            return Err(Error::Config(format!(
                "all layer widths must be positive: {self:?}"
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        let lstm = |i: usize, h: usize| 4 * (h * (i + h) + h);
        let dense = |i: usize, o: usize| o * i + o;
        lstm(self.input_dim, self.lstm1)
            + lstm(self.lstm1, self.lstm2)
            + dense(self.lstm2, self.dense1)
            + dense(self.dense1, self.dense2)
            + dense(self.dense2, self.classes)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<F> {
    pub lstm1: LstmLayer<F>,
    pub dropout1: f64,
    pub lstm2: LstmLayer<F>,
    pub dropout2: f64,
    pub dense1: DenseLayer<F>,
    pub dense2: DenseLayer<F>,
    pub output: DenseLayer<F>,
    /// Input normalisation fitted on the training split.
    pub norm: Option<NormStats>,
    /// Sequence length the network was trained on.
    pub seq_len: Option<usize>,
}

/// Per-layer activations and dropout masks of a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<F> {
    batch: usize,
    lstm1: LstmCache<F>,
    mask1: Array2<F>,
    lstm2: LstmCache<F>,
    mask2: Array2<F>,
    dense1_in: Array2<F>,
    dense1_out: Array2<F>,
    dense2_out: Array2<F>,
}

/// Loss gradients, shaped like the network parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<F> {
    pub lstm1: LstmGrads<F>,
    pub lstm2: LstmGrads<F>,
    pub dense1: DenseGrads<F>,
    pub dense2: DenseGrads<F>,
    pub output: DenseGrads<F>,
}

macro_rules! tensor_list {
    ($self:expr, $conv:ident) => {
        vec![
            $self.lstm1.w.$conv(),
            $self.lstm1.u.$conv(),
            $self.lstm1.b.$conv(),
            $self.lstm2.w.$conv(),
            $self.lstm2.u.$conv(),
            $self.lstm2.b.$conv(),
            $self.dense1.w.$conv(),
            $self.dense1.b.$conv(),
            $self.dense2.w.$conv(),
            $self.dense2.b.$conv(),
            $self.output.w.$conv(),
            $self.output.b.$conv(),
        ]
    };
}

/// Names matching the order of [`Network::tensors`].
pub const TENSOR_NAMES: [&str; 12] = [
    "lstm1.w", "lstm1.u", "lstm1.b", "lstm2.w", "lstm2.u", "lstm2.b", "dense1.w", "dense1.b",
    "dense2.w", "dense2.b", "output.w", "output.b",
];

impl<F: Real> Gradients<F> {
    pub fn tensors(&self) -> Vec<&[F]> {
        tensor_list!(self, as_slice)
            .into_iter()
            .map(|t| t.expect("standard layout"))
            .collect()
    }
}

impl<F: Real> Network<F> {
    pub fn spec(&self) -> NetworkSpec {
        NetworkSpec {
            input_dim: self.lstm1.input_dim(),
            lstm1: self.lstm1.hidden_dim(),
            lstm2: self.lstm2.hidden_dim(),
            dense1: self.dense1.output_dim(),
            dense2: self.dense2.output_dim(),
            classes: self.output.output_dim(),
            dropout: self.dropout1,
        }
    }

    /// Checks that layer widths chain and modes/activations are as expected.
    pub fn validate(&self) -> Result<()> {
        self.lstm1.check_shapes()?;
        self.lstm2.check_shapes()?;
        for d in [&self.dense1, &self.dense2, &self.output] {
            d.check_shapes()?;
        }
        let chain = [
            (
                "lstm2 input",
                self.lstm2.input_dim(),
                self.lstm1.hidden_dim(),
            ),
            (
                "dense1 input",
                self.dense1.input_dim(),
                self.lstm2.hidden_dim(),
            ),
            (
                "dense2 input",
                self.dense2.input_dim(),
                self.dense1.output_dim(),
            ),
            (
                "output input",
                self.output.input_dim(),
                self.dense2.output_dim(),
            ),
        ];
        for (what, got, want) in chain {
            if got != want {
                return Err(Error::Dimension(format!(
                    "{what} is {got}, previous layer emits {want}"
                )));
            }
        }
        if self.lstm1.mode != SequenceMode::FullSequence
            || self.lstm2.mode != SequenceMode::LastStep
        {
            return Err(Error::Dimension(
                "first LSTM must return full sequences and the second only its last step".into(),
            ));
        }
        if self.dense1.activation != Activation::Relu
            || self.dense2.activation != Activation::Relu
            || self.output.activation != Activation::Softmax
        {
            return Err(Error::Dimension(
                "dense activations must be relu, relu, softmax".into(),
            ));
        }
        for rate in [self.dropout1, self.dropout2] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::Dimension(format!(
                    "dropout rate {rate} outside [0, 1)"
                )));
            }
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Parameter tensors in a fixed order (see [`TENSOR_NAMES`]).
    pub fn tensors(&self) -> Vec<&[F]> {
        tensor_list!(self, as_slice)
            .into_iter()
            .map(|t| t.expect("standard layout"))
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        tensor_list!(self, as_slice_mut)
            .into_iter()
            .map(|t| t.expect("standard layout"))
            .collect()
    }

    /// Converts every parameter to another precision.
    pub fn cast<G: Real>(&self) -> Network<G> {
        let c2 = |a: &Array2<F>| a.mapv(|v| G::lit(v.to_f64().unwrap_or(f64::NAN)));
        let c1 = |a: &ndarray::Array1<F>| a.mapv(|v| G::lit(v.to_f64().unwrap_or(f64::NAN)));
        let lstm = |l: &LstmLayer<F>| LstmLayer {
            w: c2(&l.w),
            u: c2(&l.u),
            b: c1(&l.b),
            mode: l.mode,
        };
        let dense = |d: &DenseLayer<F>| DenseLayer {
            w: c2(&d.w),
            b: c1(&d.b),
            activation: d.activation,
        };
        Network {
            lstm1: lstm(&self.lstm1),
            dropout1: self.dropout1,
            lstm2: lstm(&self.lstm2),
            dropout2: self.dropout2,
            dense1: dense(&self.dense1),
            dense2: dense(&self.dense2),
            output: dense(&self.output),
            norm: self.norm,
            seq_len: self.seq_len,
        }
    }

    /// Inference-mode class probabilities, `(batch, classes)`.
    pub fn predict(&self, batch: ArrayView3<F>) -> Result<Array2<F>> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        network_forward(self, batch, false, &mut rng).map(|(p, _)| p)
    }
}

/// `(batch, steps, features)` to time-major `(steps * batch, features)`.
fn time_major<F: Real>(x: ArrayView3<F>) -> Array2<F> {
    let (b, t, d) = x.dim();
    let mut out = Array2::<F>::zeros((t * b, d));
    for step in 0..t {
        out.slice_mut(s![step * b..(step + 1) * b, ..])
            .assign(&x.slice(s![.., step, ..]));
    }
    out
}

/// Full forward pass. In training mode dropout is active and the returned
/// cache feeds [`network_backward`]; in inference mode no randomness is used
/// and no cache is returned.
pub fn network_forward<F: Real, R: Rng + ?Sized>(
    net: &Network<F>,
    batch: ArrayView3<F>,
    training: bool,
    rng: &mut R,
) -> Result<(Array2<F>, Option<ForwardCache<F>>)> {
    let (b, t, d) = batch.dim();
    if b == 0 || t == 0 {
        return Err(Error::Dimension("empty batch".into()));
    }
    if d != net.lstm1.input_dim() {
        return Err(Error::Dimension(format!(
            "network expects {} features per step, got {d}",
            net.lstm1.input_dim()
        )));
    }
    if let Some(len) = net.seq_len {
        if len != t {
            return Err(Error::Dimension(format!(
                "network trained on length {len}, got {t}"
            )));
        }
    }

    let x = time_major(batch);
    let (h1, cache1) = net.lstm1.forward(x.view(), b)?;
    let (h1, mask1) = dropout_forward(&h1, net.dropout1, rng, training);
    let (h2, cache2) = net.lstm2.forward(h1.view(), b)?;
    let (h2, mask2) = dropout_forward(&h2, net.dropout2, rng, training);
    let a1 = net.dense1.forward(h2.view())?;
    let a2 = net.dense2.forward(a1.view())?;
    let probs = net.output.forward(a2.view())?;

    let cache = training.then(|| ForwardCache {
        batch: b,
        lstm1: cache1,
        mask1,
        lstm2: cache2,
        mask2,
        dense1_in: h2,
        dense1_out: a1,
        dense2_out: a2,
    });
    Ok((probs, cache))
}

fn relu_backward<F: Real>(upstream: &mut Array2<F>, activated: &Array2<F>) {
    Zip::from(upstream).and(activated).for_each(|g, &a| {
        if a <= F::zero() {
            *g = F::zero();
        }
    });
}

/// Exact gradients of the batch-mean cross-entropy w.r.t. every parameter.
pub fn network_backward<F: Real>(
    net: &Network<F>,
    cache: Option<&ForwardCache<F>>,
    probs: ArrayView2<F>,
    onehots: ArrayView2<F>,
) -> Result<Gradients<F>> {
    let cache = cache.ok_or(Error::MissingCache)?;
    let b = cache.batch;
    if probs.dim() != (b, net.output.output_dim()) || onehots.dim() != probs.dim() {
        return Err(Error::Dimension(format!(
            "probabilities {:?} / labels {:?} do not match batch {b}",
            probs.dim(),
            onehots.dim()
        )));
    }
    // Softmax and cross-entropy fused.
    let dlogits = (&probs - &onehots) / F::lit(b as f64);
    let (g_out, mut d_a2) = net.output.backward(cache.dense2_out.view(), dlogits.view());
    relu_backward(&mut d_a2, &cache.dense2_out);
    let (g_d2, mut d_a1) = net.dense2.backward(cache.dense1_out.view(), d_a2.view());
    relu_backward(&mut d_a1, &cache.dense1_out);
    let (g_d1, d_h2) = net.dense1.backward(cache.dense1_in.view(), d_a1.view());
    let d_h2 = d_h2 * &cache.mask2;
    let (g_l2, d_h1) = net.lstm2.backward(&cache.lstm2, d_h2.view())?;
    let d_h1 = d_h1 * &cache.mask1;
    let (g_l1, _) = net.lstm1.backward(&cache.lstm1, d_h1.view())?;
    Ok(Gradients {
        lstm1: g_l1,
        lstm2: g_l2,
        dense1: g_d1,
        dense2: g_d2,
        output: g_out,
    })
}

/// Stacks samples into a `(batch, steps, 1)` input and `(batch, 3)` labels.
pub fn batch_from_samples<F: Real>(samples: &[&SequenceSample]) -> Result<(Array3<F>, Array2<F>)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Dimension("empty batch".into()))?;
    let t = first.values.len();
    let mut x = Array3::<F>::zeros((samples.len(), t, 1));
    let mut y = Array2::<F>::zeros((samples.len(), 3));
    for (i, s) in samples.iter().enumerate() {
        if s.values.len() != t {
            return Err(Error::Dimension(format!(
                "sample {i} has length {}, batch length is {t}",
                s.values.len()
            )));
        }
        for (k, &v) in s.values.iter().enumerate() {
            x[[i, k, 0]] = F::lit(v);
        }
        for k in 0..3 {
            y[[i, k]] = F::lit(s.onehot[k]);
        }
    }
    Ok((x, y))
}
