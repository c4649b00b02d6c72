//! Masked recurrent layers over right-padded (B, T, C) batches.
//!
//! A padded step leaves the state untouched, so the forward direction stops
//! at each sequence's end and the reverse direction starts at it: results
//! are identical to running every sequence alone.

use candle_core::Tensor;

use super::ops::sigmoid;
use super::{join, Init, ParamStore};
use crate::error::Result;

struct Cell {
    w_ih: Tensor,
    b_ih: Tensor,
    w_hh: Tensor,
    b_hh: Tensor,
    hidden: usize,
}

impl Cell {
    fn new(ps: &mut ParamStore, prefix: &str, input: usize, hidden: usize, gates: usize) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        Ok(Self {
            w_ih: ps.get(&join(prefix, "w_ih"), &[input, gates * hidden], Init::Uniform(bound))?,
            b_ih: ps.get(&join(prefix, "b_ih"), &[gates * hidden], Init::Uniform(bound))?,
            w_hh: ps.get(&join(prefix, "w_hh"), &[hidden, gates * hidden], Init::Uniform(bound))?,
            b_hh: ps.get(&join(prefix, "b_hh"), &[gates * hidden], Init::Uniform(bound))?,
            hidden,
        })
    }

    /// Input projections for every step, laid out time-major (T, B, G·H).
    fn project_inputs(&self, x: &Tensor) -> Result<Tensor> {
        let proj = x.broadcast_matmul(&self.w_ih)?.broadcast_add(&self.b_ih)?;
        Ok(proj.transpose(0, 1)?.contiguous()?)
    }

    fn project_state(&self, h: &Tensor) -> Result<Tensor> {
        Ok(h.matmul(&self.w_hh)?.broadcast_add(&self.b_hh)?)
    }

    fn gate(&self, t: &Tensor, i: usize) -> Result<Tensor> {
        Ok(t.narrow(1, i * self.hidden, self.hidden)?)
    }
}

fn step_order(len: usize, reverse: bool) -> Vec<usize> {
    if reverse {
        (0..len).rev().collect()
    } else {
        (0..len).collect()
    }
}

/// `mask_tm` is time-major (T, B, 1).
fn blend(new: &Tensor, old: &Tensor, m: &Tensor) -> Result<Tensor> {
    Ok((old + (new - old)?.broadcast_mul(m)?)?)
}

struct GruDirection {
    cell: Cell,
    reverse: bool,
}

impl GruDirection {
    fn forward(&self, x: &Tensor, mask_tm: &Tensor) -> Result<Tensor> {
        let (b, t, _) = x.dims3()?;
        let xp = self.cell.project_inputs(x)?;
        let mut h = Tensor::zeros((b, self.cell.hidden), x.dtype(), x.device())?;
        let mut outs = vec![None; t];
        for step in step_order(t, self.reverse) {
            let xs = xp.get(step)?;
            let hs = self.cell.project_state(&h)?;
            let r = sigmoid(&(self.cell.gate(&xs, 0)? + self.cell.gate(&hs, 0)?)?)?;
            let z = sigmoid(&(self.cell.gate(&xs, 1)? + self.cell.gate(&hs, 1)?)?)?;
            let n = (self.cell.gate(&xs, 2)? + (r * self.cell.gate(&hs, 2)?)?)?.tanh()?;
            // h' = n + z (h - n)
            let candidate = (&n + (z * (&h - &n)?)?)?;
            let m = mask_tm.get(step)?;
            h = blend(&candidate, &h, &m)?;
            outs[step] = Some(h.broadcast_mul(&m)?);
        }
        let outs: Vec<Tensor> = outs.into_iter().map(|o| o.expect("every step visited")).collect();
        Ok(Tensor::stack(&outs, 1)?)
    }
}

/// Stacked bidirectional GRU. Output width is `2 * hidden`.
pub struct BiGru {
    layers: Vec<(GruDirection, GruDirection)>,
}

impl BiGru {
    pub fn new(
        ps: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        layers: usize,
    ) -> Result<Self> {
        let mut stack = Vec::with_capacity(layers);
        for l in 0..layers {
            let width = if l == 0 { input } else { 2 * hidden };
            let fwd = Cell::new(ps, &join(prefix, &format!("l{l}.fwd")), width, hidden, 3)?;
            let bwd = Cell::new(ps, &join(prefix, &format!("l{l}.bwd")), width, hidden, 3)?;
            stack.push((
                GruDirection {
                    cell: fwd,
                    reverse: false,
                },
                GruDirection {
                    cell: bwd,
                    reverse: true,
                },
            ));
        }
        Ok(Self { layers: stack })
    }

    /// `x` (B, T, C), `mask` (B, T) → (B, T, 2·hidden), zero at padding.
    pub fn forward(&self, x: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let mask_tm = mask.transpose(0, 1)?.contiguous()?.unsqueeze(2)?;
        let mut h = x.clone();
        for (fwd, bwd) in &self.layers {
            let a = fwd.forward(&h, &mask_tm)?;
            let b = bwd.forward(&h, &mask_tm)?;
            h = Tensor::cat(&[a, b], 2)?;
        }
        Ok(h)
    }
}

/// Stacked unidirectional LSTM.
pub struct Lstm {
    layers: Vec<Cell>,
}

impl Lstm {
    pub fn new(
        ps: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        layers: usize,
    ) -> Result<Self> {
        let mut stack = Vec::with_capacity(layers);
        for l in 0..layers {
            let width = if l == 0 { input } else { hidden };
            stack.push(Cell::new(ps, &join(prefix, &format!("l{l}")), width, hidden, 4)?);
        }
        Ok(Self { layers: stack })
    }

    pub fn forward(&self, x: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (b, t, _) = x.dims3()?;
        let mask_tm = mask.transpose(0, 1)?.contiguous()?.unsqueeze(2)?;
        let mut seq = x.clone();
        for cell in &self.layers {
            let xp = cell.project_inputs(&seq)?;
            let mut h = Tensor::zeros((b, cell.hidden), x.dtype(), x.device())?;
            let mut c = h.clone();
            let mut outs = Vec::with_capacity(t);
            for step in 0..t {
                let g = (xp.get(step)? + cell.project_state(&h)?)?;
                let i = sigmoid(&cell.gate(&g, 0)?)?;
                let f = sigmoid(&cell.gate(&g, 1)?)?;
                let cand = cell.gate(&g, 2)?.tanh()?;
                let o = sigmoid(&cell.gate(&g, 3)?)?;
                let c_new = ((f * &c)? + (i * cand)?)?;
                let h_new = (o * c_new.tanh()?)?;
                let m = mask_tm.get(step)?;
                c = blend(&c_new, &c, &m)?;
                h = blend(&h_new, &h, &m)?;
                outs.push(h.broadcast_mul(&m)?);
            }
            seq = Tensor::stack(&outs, 1)?;
        }
        Ok(seq)
    }
}
