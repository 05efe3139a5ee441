use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::dense::{Activation, DenseLayer};
use super::lstm::{LstmLayer, SequenceMode};
use super::network::{Network, NetworkSpec};
use super::Real;
use crate::error::Result;

fn glorot<R: Rng>(
    rows: usize,
    cols: usize,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-limit..=limit))
}

/// Random orthogonal `n x n` matrix: the Q factor of a Gaussian matrix,
/// via modified Gram-Schmidt applied twice per column.
fn orthogonal<R: Rng>(n: usize, rng: &mut R) -> Array2<f64> {
    let mut q = Array2::from_shape_simple_fn((n, n), || rng.sample::<f64, _>(StandardNormal));
    for j in 0..n {
        for _ in 0..2 {
            for k in 0..j {
                let dot = q.column(j).dot(&q.column(k));
                let qk = q.column(k).to_owned();
                q.column_mut(j).scaled_add(-dot, &qk);
            }
        }
        let norm = q.column(j).dot(&q.column(j)).sqrt();
        q.column_mut(j).mapv_inplace(|v| v / norm);
    }
    q
}

fn lstm_layer<F: Real, R: Rng>(
    input: usize,
    hidden: usize,
    mode: SequenceMode,
    rng: &mut R,
) -> LstmLayer<F> {
    let w = glorot(4 * hidden, input, input, 4 * hidden, rng);
    let mut u = Array2::<f64>::zeros((4 * hidden, hidden));
    for gate in 0..4 {
        u.slice_mut(s![gate * hidden..(gate + 1) * hidden, ..])
            .assign(&orthogonal(hidden, rng));
    }
    let mut b = Array1::<f64>::zeros(4 * hidden);
    b.slice_mut(s![hidden..2 * hidden]).fill(1.0);
    LstmLayer {
        w: w.mapv(F::lit),
        u: u.mapv(F::lit),
        b: b.mapv(F::lit),
        mode,
    }
}

fn dense_layer<F: Real, R: Rng>(
    input: usize,
    output: usize,
    activation: Activation,
    rng: &mut R,
) -> DenseLayer<F> {
    DenseLayer {
        w: glorot(output, input, input, output, rng).mapv(F::lit),
        b: Array1::zeros(output),
        activation,
    }
}

/// Seeded initialisation: Glorot-uniform input and dense weights, one
/// random orthogonal block per recurrent gate, zero biases except the LSTM
/// forget gate (1.0). Values are drawn in `f64`, so networks of either
/// precision built from the same seed agree up to rounding.
pub fn init_network<F: Real>(spec: &NetworkSpec, seed: u64) -> Result<Network<F>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lstm1 = lstm_layer(
        spec.input_dim,
        spec.lstm1,
        SequenceMode::FullSequence,
        &mut rng,
    );
    let lstm2 = lstm_layer(spec.lstm1, spec.lstm2, SequenceMode::LastStep, &mut rng);
    let dense1 = dense_layer(spec.lstm2, spec.dense1, Activation::Relu, &mut rng);
    let dense2 = dense_layer(spec.dense1, spec.dense2, Activation::Relu, &mut rng);
    let output = dense_layer(spec.dense2, spec.classes, Activation::Softmax, &mut rng);
    Ok(Network {
        lstm1,
        dropout1: spec.dropout,
        lstm2,
        dropout2: spec.dropout,
        dense1,
        dense2,
        output,
        norm: None,
        seq_len: None,
    })
}
