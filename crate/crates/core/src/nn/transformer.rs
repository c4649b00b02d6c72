//! Feed-forward transformer blocks: self-attention followed by a
//! convolutional position-wise network, each with residual + post-norm.

use candle_core::Tensor;

use super::ops::apply_mask;
use super::{join, Conv1d, LayerNorm, MultiHeadAttention, ParamStore};
use crate::error::Result;

/// Standard sinusoidal position table, (len, dim).
pub fn sinusoid_positions(len: usize, dim: usize) -> Result<Tensor> {
    let mut data = vec![0.0; len * dim];
    for pos in 0..len {
        for i in 0..dim {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = pos as f64 * rate;
            data[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Ok(Tensor::from_vec(data, (len, dim), &super::device())?)
}

pub struct FftBlock {
    attention: MultiHeadAttention,
    attn_norm: LayerNorm,
    conv_in: Conv1d,
    conv_out: Conv1d,
    ff_norm: LayerNorm,
}

impl FftBlock {
    pub fn new(
        ps: &mut ParamStore,
        prefix: &str,
        dim: usize,
        heads: usize,
        ff_hidden: usize,
        kernel: usize,
    ) -> Result<Self> {
        Ok(Self {
            attention: MultiHeadAttention::new(ps, &join(prefix, "attn"), dim, dim, dim, heads)?,
            attn_norm: LayerNorm::new(ps, &join(prefix, "attn_norm"), dim)?,
            conv_in: Conv1d::new(ps, &join(prefix, "ff_in"), dim, ff_hidden, kernel)?,
            conv_out: Conv1d::new(ps, &join(prefix, "ff_out"), ff_hidden, dim, kernel)?,
            ff_norm: LayerNorm::new(ps, &join(prefix, "ff_norm"), dim)?,
        })
    }

    pub fn forward(&self, x: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (attended, _) = self.attention.forward(x, x, mask)?;
        let x = apply_mask(&self.attn_norm.forward(&(x + attended)?)?, mask)?;
        let h = self.conv_in.forward(&x)?.relu()?;
        let h = self.conv_out.forward(&apply_mask(&h, mask)?)?;
        apply_mask(&self.ff_norm.forward(&(x + h)?)?, mask)
    }
}

/// Positional encoding plus a stack of [`FftBlock`]s.
pub struct FftStack {
    blocks: Vec<FftBlock>,
    dim: usize,
}

impl FftStack {
    pub fn new(
        ps: &mut ParamStore,
        prefix: &str,
        layers: usize,
        dim: usize,
        heads: usize,
        ff_hidden: usize,
        kernel: usize,
    ) -> Result<Self> {
        let blocks = (0..layers)
            .map(|l| FftBlock::new(ps, &join(prefix, &format!("block{l}")), dim, heads, ff_hidden, kernel))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { blocks, dim })
    }

    pub fn forward(&self, x: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let t = x.dim(1)?;
        let pos = sinusoid_positions(t, self.dim)?;
        let mut h = apply_mask(&x.broadcast_add(&pos)?, mask)?;
        for block in &self.blocks {
            h = block.forward(&h, mask)?;
        }
        Ok(h)
    }
}
