use candle_core::{Tensor, D};

use super::{join, Init, ParamStore};
use crate::error::{Error, Result};

/// `y = x W + b` over the last dimension; `W` is stored as (in, out).
#[derive(Clone, Debug)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, prefix: &str, input: usize, output: usize) -> Result<Self> {
        let bound = 1.0 / (input as f64).sqrt();
        Ok(Self {
            weight: ps.get(&join(prefix, "weight"), &[input, output], Init::Uniform(bound))?,
            bias: ps.get(&join(prefix, "bias"), &[output], Init::Zeros)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = match x.rank() {
            2 => x.matmul(&self.weight)?,
            _ => x.broadcast_matmul(&self.weight)?,
        };
        Ok(y.broadcast_add(&self.bias)?)
    }
}

/// Same-length 1-D convolution over (B, T, C) inputs.
#[derive(Clone, Debug)]
pub struct Conv1d {
    weight: Tensor,
    bias: Tensor,
    padding: usize,
}

impl Conv1d {
    pub fn new(
        ps: &mut ParamStore,
        prefix: &str,
        input: usize,
        output: usize,
        kernel: usize,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::Shape(format!("conv kernel {kernel} must be odd")));
        }
        let bound = 1.0 / ((input * kernel) as f64).sqrt();
        Ok(Self {
            weight: ps.get(&join(prefix, "weight"), &[output, input, kernel], Init::Uniform(bound))?,
            bias: ps.get(&join(prefix, "bias"), &[output], Init::Zeros)?,
            padding: kernel / 2,
        })
    }

    /// Unfolds the padded input into (B, T, C·k) columns and multiplies by
    /// the flattened kernel. Built from primitive ops because the batched
    /// native conv backward returns wrong weight gradients.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, c) = x.dims3()?;
        let (out, _, k) = self.weight.dims3()?;
        let x = if self.padding > 0 {
            let pad = Tensor::zeros((b, self.padding, c), x.dtype(), x.device())?;
            Tensor::cat(&[&pad, x, &pad], 1)?
        } else {
            x.clone()
        };
        let taps = (0..k).map(|j| x.narrow(1, j, t)).collect::<candle_core::Result<Vec<_>>>()?;
        let cols = Tensor::stack(&taps, 3)?.reshape((b, t, c * k))?;
        let w = self.weight.reshape((out, c * k))?.t()?;
        Ok(cols.broadcast_matmul(&w)?.broadcast_add(&self.bias)?)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    gain: Tensor,
    bias: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, prefix: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: ps.get(&join(prefix, "gain"), &[dim], Init::Ones)?,
            bias: ps.get(&join(prefix, "bias"), &[dim], Init::Zeros)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gain)?.broadcast_add(&self.bias)?)
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    table: Tensor,
    vocab: usize,
}

impl Embedding {
    pub fn new(ps: &mut ParamStore, prefix: &str, vocab: usize, dim: usize) -> Result<Self> {
        Ok(Self {
            table: ps.get(&join(prefix, "table"), &[vocab, dim], Init::Normal(1.0 / (dim as f64).sqrt()))?,
            vocab,
        })
    }

    /// `ids` is (B, N) of u32 → (B, N, dim).
    pub fn forward(&self, ids: &Tensor) -> Result<Tensor> {
        let (b, n) = ids.dims2()?;
        let flat = ids.flatten_all()?;
        if let Some(&bad) = flat.to_vec1::<u32>()?.iter().find(|&&i| i as usize >= self.vocab) {
            return Err(Error::Vocabulary {
                id: bad as usize,
                size: self.vocab,
            });
        }
        let dim = self.table.dim(1)?;
        Ok(self.table.index_select(&flat, 0)?.reshape((b, n, dim))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::device;

    fn input(b: usize, t: usize, c: usize) -> Tensor {
        let data: Vec<f64> = (0..b * t * c).map(|i| ((i * 7 % 11) as f64 - 5.0) / 4.0).collect();
        Tensor::from_vec(data, (b, t, c), &device()).unwrap()
    }

    #[test]
    fn conv_matches_native_forward_per_item() {
        let mut ps = ParamStore::new(3);
        let conv = Conv1d::new(&mut ps, "c", 3, 4, 5).unwrap();
        let x = input(2, 7, 3);
        let y = conv.forward(&x).unwrap();
        for i in 0..2 {
            let xi = x.get(i).unwrap().t().unwrap().unsqueeze(0).unwrap().contiguous().unwrap();
            let native = xi.conv1d(&conv.weight, 2, 1, 1, 1).unwrap().squeeze(0).unwrap().t().unwrap();
            let native = native.broadcast_add(&conv.bias).unwrap();
            let diff = (y.get(i).unwrap() - native).unwrap().abs().unwrap().max_all().unwrap();
            assert!(diff.to_scalar::<f64>().unwrap() < 1e-12);
        }
    }

    #[test]
    fn batched_conv_weight_gradient_matches_finite_differences() {
        let mut ps = ParamStore::new(5);
        let conv = Conv1d::new(&mut ps, "c", 2, 3, 3).unwrap();
        let x = input(3, 6, 2);
        let target = input(3, 6, 3).sin().unwrap();
        let loss = || (conv.forward(&x).unwrap() * &target).unwrap().sum_all().unwrap();
        let grads = loss().backward().unwrap();
        let analytic = grads.get(&conv.weight).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let values = ps.values("c.weight").unwrap();
        for (i, &a) in analytic.iter().enumerate() {
            let mut probe = values.clone();
            probe[i] += 1e-6;
            ps.set_values("c.weight", &probe).unwrap();
            let up = loss().to_scalar::<f64>().unwrap();
            probe[i] -= 2e-6;
            ps.set_values("c.weight", &probe).unwrap();
            let down = loss().to_scalar::<f64>().unwrap();
            ps.set_values("c.weight", &values).unwrap();
            assert!(((up - down) / 2e-6 - a).abs() < 1e-6, "element {i}");
        }
    }
}
