//! Dual tokenization of a `T×C` sample.
//!
//! Temporal tokens flatten `L` consecutive timestamps across all channels
//! (the trailing partial patch is zero-padded); channel tokens take one
//! channel's whole series. Both add a learned positional table.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::param::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Number of patches of length `patch_len` covering `len` steps.
pub fn patch_count(len: usize, patch_len: usize) -> usize {
    len.div_ceil(patch_len)
}

fn check_sample(x: &Tensor, len: usize, channels: usize, op: &'static str) -> Result<()> {
    if x.shape() != [len, channels] {
        return Err(Error::Shape {
            op,
            lhs: x.shape().to_vec(),
            rhs: vec![len, channels],
        });
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TemporalTokenizer {
    pub len: usize,
    pub channels: usize,
    pub patch_len: usize,
    pub patches: usize,
    pub weight: ParamId,
    pub bias: ParamId,
    pub position: ParamId,
}

impl TemporalTokenizer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        len: usize,
        channels: usize,
        patch_len: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if patch_len == 0 || patch_len > len || channels == 0 {
            return Err(Error::Config(format!(
                "patch length must be in [1, {len}], got {patch_len}"
            )));
        }
        let patches = patch_count(len, patch_len);
        Ok(Self {
            len,
            channels,
            patch_len,
            patches,
            weight: store.add_weight(format!("{name}.weight"), patch_len * channels, dim, rng),
            bias: store.add_bias(format!("{name}.bias"), dim),
            position: store.add_table(format!("{name}.position"), patches, dim, rng),
        })
    }

    /// `[P × L·C]` matrix of flattened, zero-padded patches.
    pub fn patch_matrix(&self, x: &Tensor) -> Result<Tensor> {
        check_sample(x, self.len, self.channels, "temporal_embed")?;
        let width = self.patch_len * self.channels;
        let mut data = vec![0.0; self.patches * width];
        // Row-major T×C means patch i is a contiguous slice of the sample.
        let src = x.data();
        for i in 0..self.patches {
            let start = i * width;
            let end = (start + width).min(src.len());
            data[i * width..i * width + (end - start)].copy_from_slice(&src[start..end]);
        }
        Tensor::new(vec![self.patches, width], data)
    }

    pub fn forward(&self, g: &mut Graph, x: &Tensor) -> Result<Var> {
        let patches = g.constant(self.patch_matrix(x)?);
        let w = g.param(self.weight);
        let e = g.matmul(patches, w)?;
        let b = g.param(self.bias);
        let e = g.add_bias(e, b)?;
        let pos = g.param(self.position);
        g.add(e, pos)
    }
}

#[derive(Clone, Debug)]
pub struct ChannelTokenizer {
    pub len: usize,
    pub channels: usize,
    pub weight: ParamId,
    pub bias: ParamId,
    pub position: ParamId,
}

impl ChannelTokenizer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        len: usize,
        channels: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            len,
            channels,
            weight: store.add_weight(format!("{name}.weight"), len, dim, rng),
            bias: store.add_bias(format!("{name}.bias"), dim),
            position: store.add_table(format!("{name}.position"), channels, dim, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: &Tensor) -> Result<Var> {
        check_sample(x, self.len, self.channels, "channel_embed")?;
        let series = g.constant(x.transpose());
        let w = g.param(self.weight);
        let e = g.matmul(series, w)?;
        let b = g.param(self.bias);
        let e = g.add_bias(e, b)?;
        let pos = g.param(self.position);
        g.add(e, pos)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::SeedRng;
    use rand::SeedableRng;

    fn sample(t: usize, c: usize, seed: u64) -> Tensor {
        Tensor::uniform(&[t, c], 1.0, &mut SeedRng::seed_from_u64(seed))
    }

    #[test]
    fn whole_series_patch() {
        let mut rng = SeedRng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let tk = TemporalTokenizer::new(&mut store, "t", 6, 2, 6, 4, &mut rng).unwrap();
        let mut g = Graph::with_params(&store);
        let e = tk.forward(&mut g, &sample(6, 2, 1)).unwrap();
        assert_eq!(g.shape(e), &[1, 4]);
    }

    #[test]
    fn ragged_tail_is_zero_padded() {
        let mut rng = SeedRng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let tk = TemporalTokenizer::new(&mut store, "t", 5, 2, 2, 4, &mut rng).unwrap();
        assert_eq!(tk.patches, 3);
        let x = Tensor::new(vec![5, 2], (1..=10).map(f64::from).collect()).unwrap();
        let p = tk.patch_matrix(&x).unwrap();
        assert_eq!(p.shape(), &[3, 4]);
        assert_eq!(p.row(0), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(p.row(2), &[9.0, 10.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_input_isolates_positions() {
        let mut rng = SeedRng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let tk = TemporalTokenizer::new(&mut store, "t", 8, 3, 3, 4, &mut rng).unwrap();
        let ck = ChannelTokenizer::new(&mut store, "c", 8, 3, 4, &mut rng);
        let mut g = Graph::with_params(&store);
        let zero = Tensor::zeros(&[8, 3]);
        let te = tk.forward(&mut g, &zero).unwrap();
        let ce = ck.forward(&mut g, &zero).unwrap();
        assert_eq!(g.value(te), store.get(tk.position));
        assert_eq!(g.value(ce), store.get(ck.position));
    }

    #[test]
    fn duplicated_channel_differs_by_position_only() {
        let mut rng = SeedRng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let ck = ChannelTokenizer::new(&mut store, "c", 8, 3, 4, &mut rng);
        let mut x = sample(8, 3, 2);
        for t in 0..8 {
            let v = x.at(t, 0);
            x.data_mut()[t * 3 + 2] = v;
        }
        let mut g = Graph::with_params(&store);
        let e = ck.forward(&mut g, &x).unwrap();
        let e = g.value(e);
        let pos = store.get(ck.position);
        for d in 0..4 {
            let lhs = e.at(0, d) - e.at(2, d);
            let rhs = pos.at(0, d) - pos.at(2, d);
            assert!((lhs - rhs).abs() < 1e-14);
        }
    }

    #[test]
    fn channel_tokens_match_scalar_dot_products() {
        let mut rng = SeedRng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let ck = ChannelTokenizer::new(&mut store, "c", 7, 4, 5, &mut rng);
        let b = store.get_mut(ck.bias);
        b.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = 0.1 * i as f64);
        let x = sample(7, 4, 4);
        let mut g = Graph::with_params(&store);
        let e = ck.forward(&mut g, &x).unwrap();
        let (w, b, pos) = (store.get(ck.weight), store.get(ck.bias), store.get(ck.position));
        for j in 0..4 {
            for d in 0..5 {
                let mut acc = 0.0;
                for t in 0..7 {
                    acc += x.at(t, j) * w.at(t, d);
                }
                acc += b.data()[d] + pos.at(j, d);
                assert!((g.value(e).at(j, d) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut rng = SeedRng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let tk = TemporalTokenizer::new(&mut store, "t", 8, 3, 3, 4, &mut rng).unwrap();
        let mut g = Graph::with_params(&store);
        assert!(tk.forward(&mut g, &Tensor::zeros(&[8, 2])).is_err());
        assert!(TemporalTokenizer::new(&mut store, "bad", 4, 3, 5, 4, &mut rng).is_err());
    }
}
