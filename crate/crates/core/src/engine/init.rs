use super::real::Real;
use super::rng::SeededRng;
use super::tensor::{Shape4, Tensor4};
use crate::error::{Error, Result};

/// Half-width `sqrt(6 / (fan_in + fan_out))` of the Glorot uniform law for a
/// kernel shaped (out_channels, in_channels, kh, kw).
pub fn glorot_limit(shape: Shape4) -> Result<f64> {
    let area = shape.h() * shape.w();
    let fan_in = shape.c() * area;
    let fan_out = shape.n() * area;
    if fan_in + fan_out == 0 {
        return Err(Error::shape(format!(
            "glorot init needs a nonempty kernel, got {shape}"
        )));
    }
    Ok((6.0 / (fan_in + fan_out) as f64).sqrt())
}

/// I.i.d. uniform samples on `[-L, L]` with the Glorot limit `L`.
pub fn glorot_uniform<T: Real>(shape: Shape4, rng: &mut SeededRng) -> Result<Tensor4<T>> {
    let limit = glorot_limit(shape)?;
    let data = (0..shape.numel())
        .map(|_| T::lit(rng.uniform(-limit, limit)))
        .collect();
    Tensor4::from_vec(shape, data)
}
