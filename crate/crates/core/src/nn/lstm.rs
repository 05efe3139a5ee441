use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::Real;
use crate::error::{Error, Result};

/// Batches below this size use the unpacked recurrent product.
const PACKED_MIN_BATCH: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceMode {
    /// Emit the hidden state of every step.
    FullSequence,
    /// Emit only the hidden state after the final step.
    LastStep,
}

/// One LSTM layer. Gate blocks are stacked in the order `[i, f, g, o]`
/// along the first axis of `w`, `u` and `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayer<F> {
    /// Input weights, `(4 * hidden, input)`.
    pub w: Array2<F>,
    /// Recurrent weights, `(4 * hidden, hidden)`.
    pub u: Array2<F>,
    pub b: Array1<F>,
    pub mode: SequenceMode,
}

/// Activations kept for backpropagation through time.
#[derive(Clone, Debug)]
pub struct LstmCache<F> {
    pub batch: usize,
    pub input: Array2<F>,
    /// Post-nonlinearity gate values `[i, f, g, o]`, `(steps * batch, 4 * hidden)`.
    pub gates: Array2<F>,
    pub cell: Array2<F>,
    pub tanh_cell: Array2<F>,
    pub hidden: Array2<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmGrads<F> {
    pub w: Array2<F>,
    pub u: Array2<F>,
    pub b: Array1<F>,
}

impl<F: Real> LstmLayer<F> {
    pub fn zeros(input_dim: usize, hidden_dim: usize, mode: SequenceMode) -> Self {
        Self {
            w: Array2::zeros((4 * hidden_dim, input_dim)),
            u: Array2::zeros((4 * hidden_dim, hidden_dim)),
            b: Array1::zeros(4 * hidden_dim),
            mode,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.u.ncols()
    }

    pub fn check_shapes(&self) -> Result<()> {
        let h = self.hidden_dim();
        if self.w.nrows() != 4 * h || self.u.nrows() != 4 * h || self.b.len() != 4 * h {
            return Err(Error::Dimension(format!(
                "lstm weights inconsistent: w {:?}, u {:?}, b {}",
                self.w.dim(),
                self.u.dim(),
                self.b.len()
            )));
        }
        Ok(())
    }

    /// Runs the recurrence from zero state over a time-major batch and
    /// returns the hidden state of every step, `(steps * batch, hidden)`.
    pub fn forward_all(
        &self,
        input: ArrayView2<F>,
        batch: usize,
    ) -> Result<(Array2<F>, LstmCache<F>)> {
        let rows = input.nrows();
        if batch == 0 || rows == 0 || !rows.is_multiple_of(batch) {
            return Err(Error::Dimension(format!(
                "lstm input has {rows} rows, not a positive multiple of batch {batch}"
            )));
        }
        if input.ncols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "lstm expects {} input features, got {}",
                self.input_dim(),
                input.ncols()
            )));
        }
        let steps = rows / batch;
        let h = self.hidden_dim();

        let mut gates = Array2::<F>::zeros((rows, 4 * h));
        general_mat_mul(F::one(), &input, &self.w.t(), F::zero(), &mut gates);
        gates += &self.b;
        let mut cell = Array2::<F>::zeros((rows, h));
        let mut tanh_cell = Array2::<F>::zeros((rows, h));
        let mut hidden = Array2::<F>::zeros((rows, h));

        // For a handful of rows the packed product spends more time packing
        // `u` than multiplying, so small batches use a plain row kernel.
        let u_t = (batch < PACKED_MIN_BATCH).then(|| self.u.t().as_standard_layout().into_owned());
        let mut acc = vec![F::zero(); 4 * h];

        for t in 0..steps {
            let cur = t * batch..(t + 1) * batch;
            if t > 0 {
                let prev = hidden.slice(s![(t - 1) * batch..t * batch, ..]);
                match &u_t {
                    Some(u_t) => {
                        let u_t = u_t.as_slice().expect("standard layout");
                        for b in 0..batch {
                            acc.fill(F::zero());
                            let h_prev = prev.row(b);
                            F::vec_mat_acc(
                                &mut acc,
                                h_prev.as_slice().expect("standard layout"),
                                u_t,
                            );
                            for (z, &a) in gates.row_mut(t * batch + b).iter_mut().zip(&acc) {
                                *z += a;
                            }
                        }
                    }
                    None => {
                        let mut z = gates.slice_mut(s![cur.clone(), ..]);
                        general_mat_mul(F::one(), &prev, &self.u.t(), F::one(), &mut z);
                    }
                }
            }
            for r in cur.clone() {
                let g = gates.row_mut(r).into_slice().expect("standard layout");
                F::sigmoid_in_place(&mut g[..2 * h]);
                F::tanh_in_place(&mut g[2 * h..3 * h]);
                F::sigmoid_in_place(&mut g[3 * h..]);
            }

            let block = cur.start * h..cur.end * h;
            let (cell_before, cell_now) = cell
                .as_slice_mut()
                .expect("standard layout")
                .split_at_mut(block.start);
            let cell_now = &mut cell_now[..block.len()];
            for (b, r) in cur.clone().enumerate() {
                let g = gates.row(r);
                let g = g.as_slice().expect("standard layout");
                let c = &mut cell_now[b * h..(b + 1) * h];
                if t > 0 {
                    let c_prev = &cell_before[(r - batch) * h..(r - batch + 1) * h];
                    for j in 0..h {
                        c[j] = g[h + j] * c_prev[j] + g[j] * g[2 * h + j];
                    }
                } else {
                    for j in 0..h {
                        c[j] = g[j] * g[2 * h + j];
                    }
                }
            }
            let tanh_now = &mut tanh_cell.as_slice_mut().expect("standard layout")[block.clone()];
            tanh_now.copy_from_slice(cell_now);
            F::tanh_in_place(tanh_now);
            let hidden_now = &mut hidden.as_slice_mut().expect("standard layout")[block];
            for (b, r) in cur.enumerate() {
                let g = gates.row(r);
                let o = &g.as_slice().expect("standard layout")[3 * h..];
                for j in 0..h {
                    hidden_now[b * h + j] = o[j] * tanh_now[b * h + j];
                }
            }
        }

        let cache = LstmCache {
            batch,
            input: input.to_owned(),
            gates,
            cell,
            tanh_cell,
            hidden: hidden.clone(),
        };
        Ok((hidden, cache))
    }

    /// Forward pass honouring `self.mode`: `(steps * batch, hidden)` for a
    /// full sequence, `(batch, hidden)` for the last step.
    pub fn forward(&self, input: ArrayView2<F>, batch: usize) -> Result<(Array2<F>, LstmCache<F>)> {
        let (hidden, cache) = self.forward_all(input, batch)?;
        let out = match self.mode {
            SequenceMode::FullSequence => hidden,
            SequenceMode::LastStep => hidden.slice(s![hidden.nrows() - batch.., ..]).to_owned(),
        };
        Ok((out, cache))
    }

    /// Backpropagation through time. `d_out` is the loss gradient w.r.t. the
    /// layer output in the shape `forward` returned. Returns parameter
    /// gradients and the gradient w.r.t. the input sequence.
    pub fn backward(
        &self,
        cache: &LstmCache<F>,
        d_out: ArrayView2<F>,
    ) -> Result<(LstmGrads<F>, Array2<F>)> {
        let batch = cache.batch;
        let rows = cache.gates.nrows();
        let steps = rows / batch;
        let h = self.hidden_dim();
        let expected_rows = match self.mode {
            SequenceMode::FullSequence => rows,
            SequenceMode::LastStep => batch,
        };
        if d_out.dim() != (expected_rows, h) {
            return Err(Error::Dimension(format!(
                "lstm output gradient has shape {:?}, expected {:?}",
                d_out.dim(),
                (expected_rows, h)
            )));
        }

        let mut dz = Array2::<F>::zeros((rows, 4 * h));
        let mut dh_next = Array2::<F>::zeros((batch, h));
        let mut dc_next = Array2::<F>::zeros((batch, h));
        let one = F::one();

        for t in (0..steps).rev() {
            let base = t * batch;
            let d_out_rows = match self.mode {
                SequenceMode::FullSequence => Some(base),
                SequenceMode::LastStep if t == steps - 1 => Some(0),
                SequenceMode::LastStep => None,
            };
            let zero_row = vec![F::zero(); h];
            for b in 0..batch {
                let r = base + b;
                let g = cache.gates.row(r);
                let g = g.as_slice().expect("standard layout");
                let tc = cache.tanh_cell.row(r);
                let tc = tc.as_slice().expect("standard layout");
                let c_prev = if t > 0 {
                    cache.cell.row(r - batch)
                } else {
                    ndarray::ArrayView1::from(&zero_row[..])
                };
                let c_prev = c_prev.as_slice().expect("standard layout");
                let d_o_row = d_out_rows.map(|off| d_out.row(off + b));
                let dh_in = dh_next.row(b);
                let dh_in = dh_in.as_slice().expect("standard layout");
                let dc_row = dc_next.row_mut(b).into_slice().expect("standard layout");
                let dzr = dz.row_mut(r).into_slice().expect("standard layout");
                for j in 0..h {
                    let (i, f, gg, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                    let mut dh = dh_in[j];
                    if let Some(extra) = &d_o_row {
                        dh += extra[j];
                    }
                    let tc = tc[j];
                    let d_o = dh * tc;
                    let dc = dh * o * (one - tc * tc) + dc_row[j];
                    dc_row[j] = dc * f;
                    dzr[j] = dc * gg * i * (one - i);
                    dzr[h + j] = dc * c_prev[j] * f * (one - f);
                    dzr[2 * h + j] = dc * i * (one - gg * gg);
                    dzr[3 * h + j] = d_o * o * (one - o);
                }
            }
            if t > 0 {
                let dz_t = dz.slice(s![base..base + batch, ..]);
                general_mat_mul(one, &dz_t, &self.u, F::zero(), &mut dh_next);
            }
        }

        let mut dx = Array2::<F>::zeros((rows, self.input_dim()));
        general_mat_mul(one, &dz, &self.w, F::zero(), &mut dx);
        let mut dw = Array2::<F>::zeros(self.w.dim());
        general_mat_mul(one, &dz.t(), &cache.input, F::zero(), &mut dw);
        let mut du = Array2::<F>::zeros(self.u.dim());
        if steps > 1 {
            let dz_tail = dz.slice(s![batch.., ..]);
            let h_prev = cache.hidden.slice(s![..rows - batch, ..]);
            general_mat_mul(one, &dz_tail.t(), &h_prev, F::zero(), &mut du);
        }
        let db = dz.sum_axis(Axis(0));
        Ok((
            LstmGrads {
                w: dw,
                u: du,
                b: db,
            },
            dx,
        ))
    }
}

/// Runs one LSTM layer over `sequence` (`(steps, input_dim)`, a single
/// sample) and returns `(steps, hidden)` or `(1, hidden)` by mode.
pub fn lstm_forward<F: Real>(layer: &LstmLayer<F>, sequence: ArrayView2<F>) -> Result<Array2<F>> {
    layer.forward(sequence, 1).map(|(out, _)| out)
}
