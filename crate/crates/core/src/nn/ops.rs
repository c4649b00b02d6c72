//! Elementwise and reduction helpers composed from differentiable
//! primitives, so that every one of them supports backpropagation.

use candle_core::{Tensor, D};

use crate::error::Result;

/// Additive bias for masked-out attention keys.
const MASK_NEG: f64 = -1e9;

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((x.neg()?.exp()? + 1.0)?.recip()?)
}

/// `ln(1 + e^x)` evaluated as `relu(x) + ln(1 + e^{-|x|})`.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let tail = (x.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok((x.relu()? + tail)?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok((x.relu()? - (x.neg()?.relu()? * slope)?)?)
}

/// Softmax over the last dimension with an optional 0/1 mask broadcastable
/// to `x`; masked entries receive exactly zero weight.
pub fn masked_softmax(x: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
    let x = match mask {
        Some(m) => {
            let bias = ((m.ones_like()? - m)? * MASK_NEG)?;
            x.broadcast_add(&bias)?
        }
        None => x.clone(),
    };
    // The shift cancels in the ratio; detaching keeps it out of the graph.
    let shift = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&shift)?.exp()?;
    let e = match mask {
        Some(m) => e.broadcast_mul(m)?,
        None => e,
    };
    let z = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&z)?)
}

/// `x` of shape (B, T, C) times a (B, T) mask.
pub fn apply_mask(x: &Tensor, mask: &Tensor) -> Result<Tensor> {
    Ok(x.broadcast_mul(&mask.unsqueeze(2)?)?)
}

/// Mean over the time axis of (B, T, C) restricted to valid steps → (B, C).
pub fn masked_time_mean(x: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let summed = apply_mask(x, mask)?.sum(1)?;
    let counts = mask.sum_keepdim(1)?;
    Ok(summed.broadcast_div(&counts)?)
}

/// Masked mean of squared differences over all valid elements.
pub fn masked_mse(a: &Tensor, b: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let diff2 = (a - b)?.sqr()?;
    let mask = mask.broadcast_as(diff2.shape())?;
    let total = (diff2 * &mask)?.sum_all()?;
    Ok((total / mask.sum_all()?.to_scalar::<f64>()?)?)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_slice(v, v.len(), &Device::Cpu).unwrap()
    }

    #[test]
    fn softplus_matches_closed_form() {
        let x = t(&[-800.0, -3.0, 0.0, 2.5, 800.0]);
        let y = softplus(&x).unwrap().to_vec1::<f64>().unwrap();
        for (xv, yv) in [-800.0f64, -3.0, 0.0, 2.5, 800.0].iter().zip(&y) {
            let expected = if *xv > 30.0 { *xv } else { xv.exp().ln_1p() };
            assert!((yv - expected).abs() < 1e-12, "{xv}: {yv} vs {expected}");
        }
    }

    #[test]
    fn masked_softmax_zeroes_masked_entries() {
        let x = Tensor::from_slice(&[1.0, 2.0, 3.0, 4.0], (1, 4), &Device::Cpu).unwrap();
        let m = Tensor::from_slice(&[1.0, 1.0, 0.0, 1.0], (1, 4), &Device::Cpu).unwrap();
        let y = masked_softmax(&x, Some(&m)).unwrap().to_vec2::<f64>().unwrap();
        assert_eq!(y[0][2], 0.0);
        assert!((y[0].iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn leaky_relu_values() {
        let y = leaky_relu(&t(&[-2.0, 0.0, 3.0]), 0.2).unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(y, vec![-0.4, 0.0, 3.0]);
    }
}
