use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::loss::softmax_rows;
use super::Real;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Softmax,
    None,
}

/// Fully connected layer, `y = act(x W^T + b)` on row-major batches.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<F> {
    /// `(out, in)`.
    pub w: Array2<F>,
    pub b: Array1<F>,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrads<F> {
    pub w: Array2<F>,
    pub b: Array1<F>,
}

impl<F: Real> DenseLayer<F> {
    pub fn zeros(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        Self {
            w: Array2::zeros((output_dim, input_dim)),
            b: Array1::zeros(output_dim),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn check_shapes(&self) -> Result<()> {
        if self.b.len() != self.w.nrows() {
            return Err(Error::Dimension(format!(
                "dense weights {:?} do not match bias of length {}",
                self.w.dim(),
                self.b.len()
            )));
        }
        Ok(())
    }

    /// Pre-activation `x W^T + b`.
    pub fn linear(&self, x: ArrayView2<F>) -> Result<Array2<F>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "dense layer expects {} inputs, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let mut z = Array2::<F>::zeros((x.nrows(), self.output_dim()));
        general_mat_mul(F::one(), &x, &self.w.t(), F::zero(), &mut z);
        z += &self.b;
        Ok(z)
    }

    pub fn forward(&self, x: ArrayView2<F>) -> Result<Array2<F>> {
        let mut z = self.linear(x)?;
        match self.activation {
            Activation::Relu => z.mapv_inplace(|v| v.max(F::zero())),
            Activation::Softmax => softmax_rows(&mut z),
            Activation::None => {}
        }
        Ok(z)
    }

    /// Gradients given `dz`, the loss gradient w.r.t. the pre-activation.
    pub fn backward(&self, x: ArrayView2<F>, dz: ArrayView2<F>) -> (DenseGrads<F>, Array2<F>) {
        let mut dw = Array2::<F>::zeros(self.w.dim());
        general_mat_mul(F::one(), &dz.t(), &x, F::zero(), &mut dw);
        let db = dz.sum_axis(Axis(0));
        let mut dx = Array2::<F>::zeros((x.nrows(), self.input_dim()));
        general_mat_mul(F::one(), &dz, &self.w, F::zero(), &mut dx);
        (DenseGrads { w: dw, b: db }, dx)
    }
}

/// `activation(W x + b)` for a batch of row vectors.
pub fn dense_forward<F: Real>(layer: &DenseLayer<F>, x: ArrayView2<F>) -> Result<Array2<F>> {
    layer.forward(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn relu_identity() {
        let layer = DenseLayer {
            w: Array2::<f64>::eye(2),
            b: Array1::zeros(2),
            activation: Activation::Relu,
        };
        let y = dense_forward(&layer, array![[-1.0, 2.0]].view()).unwrap();
        assert_eq!(y, array![[0.0, 2.0]]);
    }

    #[test]
    fn softmax_symmetry_and_shift() {
        let layer = DenseLayer {
            w: Array2::<f64>::eye(3),
            b: Array1::zeros(3),
            activation: Activation::Softmax,
        };
        let y = dense_forward(&layer, array![[0.0, 0.0, 0.0]].view()).unwrap();
        for v in y.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let a = dense_forward(&layer, array![[1.0, 2.0, 3.0]].view()).unwrap();
        let b = dense_forward(&layer, array![[11.0, 12.0, 13.0]].view()).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn input_width_checked() {
        let layer = DenseLayer::<f64>::zeros(3, 2, Activation::None);
        assert!(layer.forward(array![[1.0, 2.0]].view()).is_err());
    }
}
