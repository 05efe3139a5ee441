//! Versioned JSON model files.
//!
//! Weights are stored as flattened row-major arrays of `f64`, which
//! represents either precision exactly, so a save/load round trip is
//! bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::dense::{Activation, DenseLayer};
use super::lstm::{LstmLayer, SequenceMode};
use super::network::Network;
use super::Real;
use crate::error::{Error, Result};
use crate::signal::NormStats;

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema_version: u64,
    precision: String,
    sequence_length: Option<usize>,
    norm: Option<NormStats>,
    layers: Vec<LayerRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LayerRecord {
    Lstm {
        input_dim: usize,
        hidden_dim: usize,
        mode: SequenceMode,
        w: Vec<f64>,
        u: Vec<f64>,
        b: Vec<f64>,
    },
    Dropout {
        rate: f64,
    },
    Dense {
        input_dim: usize,
        output_dim: usize,
        activation: Activation,
        w: Vec<f64>,
        b: Vec<f64>,
    },
}

fn flat<F: Real>(values: impl IntoIterator<Item = F>) -> Vec<f64> {
    values
        .into_iter()
        .map(|v| v.to_f64().expect("finite parameter"))
        .collect()
}

fn lstm_record<F: Real>(l: &LstmLayer<F>) -> LayerRecord {
    LayerRecord::Lstm {
        input_dim: l.input_dim(),
        hidden_dim: l.hidden_dim(),
        mode: l.mode,
        w: flat(l.w.iter().copied()),
        u: flat(l.u.iter().copied()),
        b: flat(l.b.iter().copied()),
    }
}

fn dense_record<F: Real>(d: &DenseLayer<F>) -> LayerRecord {
    LayerRecord::Dense {
        input_dim: d.input_dim(),
        output_dim: d.output_dim(),
        activation: d.activation,
        w: flat(d.w.iter().copied()),
        b: flat(d.b.iter().copied()),
    }
}

fn matrix<F: Real>(rows: usize, cols: usize, data: Vec<f64>, what: &str) -> Result<Array2<F>> {
    Array2::from_shape_vec((rows, cols), data.into_iter().map(F::lit).collect())
        .map_err(|_| Error::ModelFormat(format!("{what}: expected {rows}x{cols} values")))
}

fn vector<F: Real>(len: usize, data: Vec<f64>, what: &str) -> Result<Array1<F>> {
    if data.len() != len {
        return Err(Error::ModelFormat(format!(
            "{what}: expected {len} values, found {}",
            data.len()
        )));
    }
    Ok(Array1::from_vec(data.into_iter().map(F::lit).collect()))
}

fn lstm_from<F: Real>(record: LayerRecord, position: usize) -> Result<LstmLayer<F>> {
    match record {
        LayerRecord::Lstm {
            input_dim,
            hidden_dim,
            mode,
            w,
            u,
            b,
        } => Ok(LstmLayer {
            w: matrix(4 * hidden_dim, input_dim, w, "lstm w")?,
            u: matrix(4 * hidden_dim, hidden_dim, u, "lstm u")?,
            b: vector(4 * hidden_dim, b, "lstm b")?,
            mode,
        }),
        _ => Err(Error::ModelFormat(format!(
            "layer {position} must be an lstm layer"
        ))),
    }
}

fn dropout_from(record: LayerRecord, position: usize) -> Result<f64> {
    match record {
        LayerRecord::Dropout { rate } => Ok(rate),
        _ => Err(Error::ModelFormat(format!(
            "layer {position} must be a dropout layer"
        ))),
    }
}

fn dense_from<F: Real>(record: LayerRecord, position: usize) -> Result<DenseLayer<F>> {
    match record {
        LayerRecord::Dense {
            input_dim,
            output_dim,
            activation,
            w,
            b,
        } => Ok(DenseLayer {
            w: matrix(output_dim, input_dim, w, "dense w")?,
            b: vector(output_dim, b, "dense b")?,
            activation,
        }),
        _ => Err(Error::ModelFormat(format!(
            "layer {position} must be a dense layer"
        ))),
    }
}

pub fn write_model<F: Real, W: Write>(net: &Network<F>, mut out: W) -> Result<()> {
    let file = ModelFile {
        schema_version: SCHEMA_VERSION,
        precision: F::NAME.to_string(),
        sequence_length: net.seq_len,
        norm: net.norm,
        layers: vec![
            lstm_record(&net.lstm1),
            LayerRecord::Dropout { rate: net.dropout1 },
            lstm_record(&net.lstm2),
            LayerRecord::Dropout { rate: net.dropout2 },
            dense_record(&net.dense1),
            dense_record(&net.dense2),
            dense_record(&net.output),
        ],
    };
    serde_json::to_writer(&mut out, &file).map_err(|e| Error::ModelFormat(e.to_string()))?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_model<F: Real, R: Read>(mut input: R) -> Result<Network<F>> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::ModelFormat(e.to_string()))?;
    let version = value
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::ModelFormat("missing schema_version".into()))?;
    if version != SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            found: version,
            expected: SCHEMA_VERSION,
        });
    }
    let file: ModelFile =
        serde_json::from_value(value).map_err(|e| Error::ModelFormat(e.to_string()))?;
    if file.layers.len() != 7 {
        return Err(Error::ModelFormat(format!(
            "expected 7 layers, found {}",
            file.layers.len()
        )));
    }
    let mut layers = file.layers.into_iter();
    let mut next = || layers.next().expect("length checked");
    let net = Network {
        lstm1: lstm_from(next(), 0)?,
        dropout1: dropout_from(next(), 1)?,
        lstm2: lstm_from(next(), 2)?,
        dropout2: dropout_from(next(), 3)?,
        dense1: dense_from(next(), 4)?,
        dense2: dense_from(next(), 5)?,
        output: dense_from(next(), 6)?,
        norm: file.norm,
        seq_len: file.sequence_length,
    };
    net.validate()
        .map_err(|e| Error::ModelFormat(format!("inconsistent layer stack: {e}")))?;
    Ok(net)
}

pub fn save_model<F: Real>(net: &Network<F>, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_model(net, std::io::BufWriter::new(file))
}

pub fn load_model<F: Real>(path: impl AsRef<Path>) -> Result<Network<F>> {
    let file = std::fs::File::open(path)?;
    read_model(std::io::BufReader::new(file))
}
