use crate::error::{param_err, Result};
use crate::matrix::RealMatrix;
use crate::rng::RngStream;

/// Draws a keep-mask for a `rows x cols` activation block.
///
/// Each unit is kept with probability `1 - p`; kept units carry the inverted
/// scale `1 / (1 - p)` so the expected activation is unchanged. With `p = 1`
/// every unit is dropped.
pub(crate) fn draw_mask(rows: usize, cols: usize, p: f64, rng: &mut RngStream) -> RealMatrix {
    let keep_scale = if p < 1.0 { 1.0 / (1.0 - p) } else { 0.0 };
    let mut mask = RealMatrix::zeros(rows, cols);
    for v in mask.values_mut() {
        if !rng.bernoulli(p) {
            *v = keep_scale;
        }
    }
    mask
}

pub(crate) fn validate_p(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return param_err(format!("dropout probability {p} outside [0, 1]"));
    }
    Ok(())
}

/// Zeroes each unit independently with probability `p`.
pub fn apply_dropout(
    activations: &RealMatrix,
    p: f64,
    rng: &mut RngStream,
) -> Result<RealMatrix> {
    validate_p(p)?;
    if p == 0.0 {
        return Ok(activations.clone());
    }
    let mask = draw_mask(activations.rows(), activations.cols(), p, rng);
    let mut out = activations.clone();
    for (o, m) in out.values_mut().iter_mut().zip(mask.values()) {
        *o *= m;
    }
    Ok(out)
}
