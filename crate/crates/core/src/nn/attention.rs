use candle_core::Tensor;

use super::ops::masked_softmax;
use super::{join, Linear, ParamStore};
use crate::error::{Error, Result};

/// Scaled dot-product attention with `heads` heads. Queries and keys may
/// come from different sequences (and widths).
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    query: Linear,
    key: Linear,
    value: Linear,
    output: Linear,
    heads: usize,
    width: usize,
}

impl MultiHeadAttention {
    pub fn new(
        ps: &mut ParamStore,
        prefix: &str,
        query_dim: usize,
        key_dim: usize,
        width: usize,
        heads: usize,
    ) -> Result<Self> {
        if width % heads != 0 {
            return Err(Error::Shape(format!("width {width} not divisible by {heads} heads")));
        }
        Ok(Self {
            query: Linear::new(ps, &join(prefix, "query"), query_dim, width)?,
            key: Linear::new(ps, &join(prefix, "key"), key_dim, width)?,
            value: Linear::new(ps, &join(prefix, "value"), key_dim, width)?,
            output: Linear::new(ps, &join(prefix, "output"), width, width)?,
            heads,
            width,
        })
    }

    fn split(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, _) = x.dims3()?;
        Ok(x.reshape((b, t, self.heads, self.width / self.heads))?
            .transpose(1, 2)?
            .contiguous()?)
    }

    /// `queries` (B, Nq, Dq), `keys` (B, Nk, Dk), `key_mask` (B, Nk) of 0/1.
    /// Returns the attended features (B, Nq, width) and the weights
    /// (B, heads, Nq, Nk), each query row summing to 1 over valid keys.
    pub fn forward(
        &self,
        queries: &Tensor,
        keys: &Tensor,
        key_mask: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        let (b, nq, _) = queries.dims3()?;
        let q = self.split(&self.query.forward(queries)?)?;
        let k = self.split(&self.key.forward(keys)?)?;
        let v = self.split(&self.value.forward(keys)?)?;
        let scale = 1.0 / ((self.width / self.heads) as f64).sqrt();
        let scores = (q.matmul(&k.transpose(2, 3)?.contiguous()?)? * scale)?;
        let mask = key_mask.unsqueeze(1)?.unsqueeze(1)?;
        let weights = masked_softmax(&scores, Some(&mask))?;
        let attended = weights
            .matmul(&v)?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, nq, self.width))?;
        Ok((self.output.forward(&attended)?, weights))
    }
}
