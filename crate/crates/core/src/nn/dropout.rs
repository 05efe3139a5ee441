use ndarray::Array2;
use rand::Rng;

use super::Real;

/// Inverted dropout. In training mode each element is zeroed with
/// probability `rate` and survivors are scaled by `1 / (1 - rate)`; in
/// inference mode the input passes through and the mask is all ones.
pub fn dropout_forward<F: Real, R: Rng + ?Sized>(
    x: &Array2<F>,
    rate: f64,
    rng: &mut R,
    training: bool,
) -> (Array2<F>, Array2<F>) {
    assert!(
        (0.0..1.0).contains(&rate),
        "dropout rate must lie in [0, 1)"
    );
    if !training || rate == 0.0 {
        return (x.clone(), Array2::from_elem(x.dim(), F::one()));
    }
    let keep = F::lit(1.0 / (1.0 - rate));
    let mask = Array2::from_shape_simple_fn(x.dim(), || {
        if rng.gen::<f64>() < rate {
            F::zero()
        } else {
            keep
        }
    });
    (x * &mask, mask)
}
