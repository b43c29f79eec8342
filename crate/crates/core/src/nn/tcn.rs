use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::conv::{Conv1d, ConvCache, ConvGrads};
use super::{Scalar, ValueBlock};

/// Shape of a residual temporal-convolution network: a stack of blocks
/// followed by a width-1 output convolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub input_channels: usize,
    pub output_channels: usize,
    pub kernel_width: usize,
    pub widths: Vec<usize>,
    pub dilations: Vec<usize>,
    /// Dropout rate of every block but the first.
    pub dropout: f64,
}

impl Topology {
    /// Four blocks, kernel 3, dilations 1-2-4-8, widths 64-64-64-32, dropout 0.2.
    pub fn standard(input_channels: usize, output_channels: usize) -> Self {
        Topology {
            input_channels,
            output_channels,
            kernel_width: 3,
            widths: vec![64, 64, 64, 32],
            dilations: vec![1, 2, 4, 8],
            dropout: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.len() != self.dilations.len() {
            return Err(Error::Config(format!(
                "topology needs matching non-empty widths and dilations, got {} and {}",
                self.widths.len(),
                self.dilations.len()
            )));
        }
        if self.kernel_width % 2 == 0 || self.dilations.contains(&0) || self.widths.contains(&0) {
            return Err(Error::Config("kernel width must be odd, dilations and widths positive".into()));
        }
        if self.input_channels == 0 || self.output_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Samples on each side that can influence one output sample.
    pub fn receptive_half_width(&self) -> usize {
        let half = (self.kernel_width - 1) / 2;
        self.dilations.iter().map(|d| 2 * half * d).sum()
    }
}

/// Two dilated convolutions with rectifiers and optional dropout, added to
/// the (possibly projected) input.
#[derive(Debug, Clone, PartialEq)]
pub struct TcnBlock<T> {
    pub conv1: Conv1d<T>,
    pub conv2: Conv1d<T>,
    /// Width-1 projection when input and output widths differ.
    pub residual: Option<Conv1d<T>>,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct BlockCache<T> {
    c1: ConvCache<T>,
    act1: Vec<T>,
    mask1: Option<Vec<T>>,
    c2: ConvCache<T>,
    act2: Vec<T>,
    mask2: Option<Vec<T>>,
    res: Option<ConvCache<T>>,
}

fn relu_inplace<T: Scalar>(v: &mut [T]) {
    for x in v.iter_mut() {
        if *x < T::ZERO {
            *x = T::ZERO;
        }
    }
}

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)`.
fn dropout_mask<T: Scalar>(len: usize, rate: f64, rng: &mut dyn RngCore) -> Vec<T> {
    let keep = T::from_f64(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { T::ZERO } else { keep })
        .collect()
}

fn apply_mask<T: Scalar>(v: &mut [T], mask: &[T]) {
    for (x, m) in v.iter_mut().zip(mask) {
        *x *= *m;
    }
}

/// Gradient through rectifier (given its output) and optional dropout mask.
fn relu_dropout_backward<T: Scalar>(grad: &mut [T], act: &[T], mask: Option<&Vec<T>>) {
    if let Some(mask) = mask {
        apply_mask(grad, mask);
    }
    for (g, a) in grad.iter_mut().zip(act) {
        if *a <= T::ZERO {
            *g = T::ZERO;
        }
    }
}

impl<T: Scalar> TcnBlock<T> {
    pub fn init<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel_width: usize,
        dilation: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let conv1 = Conv1d::init(kernel_width, dilation, in_channels, out_channels, rng)?;
        let conv2 = Conv1d::init(kernel_width, dilation, out_channels, out_channels, rng)?;
        let residual = if in_channels != out_channels {
            Some(Conv1d::init(1, 1, in_channels, out_channels, rng)?)
        } else {
            None
        };
        Ok(TcnBlock {
            conv1,
            conv2,
            residual,
            dropout,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.conv2.out_channels
    }

    /// Dropout is active only when `rng` is given and the rate is non-zero.
    pub fn forward<'r>(
        &self,
        x: &ValueBlock<T>,
        mut rng: Option<&mut (dyn RngCore + 'r)>,
    ) -> Result<(ValueBlock<T>, BlockCache<T>)> {
        let (mut h1, c1) = self.conv1.forward(x)?;
        relu_inplace(&mut h1.data);
        let act1 = h1.data.clone();
        let mask1 = match rng.as_deref_mut() {
            Some(r) if self.dropout > 0.0 => {
                let m = dropout_mask(h1.data.len(), self.dropout, r);
                apply_mask(&mut h1.data, &m);
                Some(m)
            }
            _ => None,
        };

        let (mut h2, c2) = self.conv2.forward(&h1)?;
        relu_inplace(&mut h2.data);
        let act2 = h2.data.clone();
        let mask2 = match rng {
            Some(r) if self.dropout > 0.0 => {
                let m = dropout_mask(h2.data.len(), self.dropout, r);
                apply_mask(&mut h2.data, &m);
                Some(m)
            }
            _ => None,
        };

        let res = match &self.residual {
            Some(proj) => {
                let (r, cache) = proj.forward(x)?;
                h2.add_assign(&r);
                Some(cache)
            }
            None => {
                if x.channels != h2.channels {
                    return Err(Error::shape("identity residual with mismatched widths"));
                }
                h2.add_assign(x);
                None
            }
        };
        Ok((
            h2,
            BlockCache {
                c1,
                act1,
                mask1,
                c2,
                act2,
                mask2,
                res,
            },
        ))
    }

    /// `grads` holds this block's convolutions in order conv1, conv2, residual.
    pub fn backward(
        &self,
        cache: &BlockCache<T>,
        grad_out: &ValueBlock<T>,
        grads: &mut [ConvGrads<T>],
    ) -> ValueBlock<T> {
        let mut g2 = grad_out.clone();
        relu_dropout_backward(&mut g2.data, &cache.act2, cache.mask2.as_ref());
        let mut g1 = self.conv2.backward(&cache.c2, &g2, &mut grads[1]);
        relu_dropout_backward(&mut g1.data, &cache.act1, cache.mask1.as_ref());
        let mut gx = self.conv1.backward(&cache.c1, &g1, &mut grads[0]);
        match (&self.residual, &cache.res) {
            (Some(proj), Some(rc)) => gx.add_assign(&proj.backward(rc, grad_out, &mut grads[2])),
            _ => gx.add_assign(grad_out),
        }
        gx
    }

    fn convs(&self) -> impl Iterator<Item = &Conv1d<T>> {
        [&self.conv1, &self.conv2].into_iter().chain(self.residual.as_ref())
    }

    fn convs_mut(&mut self) -> impl Iterator<Item = &mut Conv1d<T>> {
        [&mut self.conv1, &mut self.conv2]
            .into_iter()
            .chain(self.residual.as_mut())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcnNetwork<T> {
    pub topology: Topology,
    pub blocks: Vec<TcnBlock<T>>,
    pub head: Conv1d<T>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    blocks: Vec<BlockCache<T>>,
    head: ConvCache<T>,
}

impl<T> ForwardCache<T> {
    /// Which rectifier units were active; a change between two nearby
    /// parameter settings means a kink lies between them.
    pub fn activation_pattern(&self) -> Vec<bool>
    where
        T: Scalar,
    {
        self.blocks
            .iter()
            .flat_map(|b| b.act1.iter().chain(&b.act2))
            .map(|v| *v > T::ZERO)
            .collect()
    }
}

/// Gradients for every convolution, in network order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGrads<T> {
    pub convs: Vec<ConvGrads<T>>,
}

impl<T: Scalar> NetworkGrads<T> {
    pub fn flat(&self) -> Vec<&[T]> {
        self.convs
            .iter()
            .flat_map(|c| [c.kernel.as_slice(), c.bias.as_slice()])
            .collect()
    }
}

impl<T: Scalar> TcnNetwork<T> {
    pub fn init(topology: &Topology, seed: u64) -> Result<Self> {
        topology.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blocks = Vec::with_capacity(topology.widths.len());
        let mut in_ch = topology.input_channels;
        for (i, (&w, &d)) in topology.widths.iter().zip(&topology.dilations).enumerate() {
            let dropout = if i == 0 { 0.0 } else { topology.dropout };
            blocks.push(TcnBlock::init(in_ch, w, topology.kernel_width, d, dropout, &mut rng)?);
            in_ch = w;
        }
        let head = Conv1d::init(1, 1, in_ch, topology.output_channels, &mut rng)?;
        Ok(TcnNetwork {
            topology: topology.clone(),
            blocks,
            head,
        })
    }

    pub fn convs(&self) -> Vec<&Conv1d<T>> {
        let mut out: Vec<&Conv1d<T>> = self.blocks.iter().flat_map(|b| b.convs()).collect();
        out.push(&self.head);
        out
    }

    fn convs_mut(&mut self) -> Vec<&mut Conv1d<T>> {
        let mut out: Vec<&mut Conv1d<T>> = self.blocks.iter_mut().flat_map(|b| b.convs_mut()).collect();
        out.push(&mut self.head);
        out
    }

    /// Parameter tensors in declaration order: each convolution's kernel
    /// then bias, blocks first, head last.
    pub fn params(&self) -> Vec<&[T]> {
        self.convs()
            .into_iter()
            .flat_map(|c| [c.kernel.as_slice(), c.bias.as_slice()])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.convs_mut()
            .into_iter()
            .flat_map(|c| [c.kernel.as_mut_slice(), c.bias.as_mut_slice()])
            .collect()
    }

    /// Names and element counts matching [`TcnNetwork::params`].
    pub fn param_layout(&self) -> Vec<(String, usize)> {
        let mut names = Vec::new();
        for (b, block) in self.blocks.iter().enumerate() {
            for (label, conv) in ["conv1", "conv2", "residual"].iter().zip(block.convs()) {
                names.push((format!("block{b}.{label}.kernel"), conv.kernel.len()));
                names.push((format!("block{b}.{label}.bias"), conv.bias.len()));
            }
        }
        names.push(("head.kernel".into(), self.head.kernel.len()));
        names.push(("head.bias".into(), self.head.bias.len()));
        names
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grads(&self) -> NetworkGrads<T> {
        NetworkGrads {
            convs: self.convs().into_iter().map(ConvGrads::zeros_like).collect(),
        }
    }

    pub fn forward<'r>(
        &self,
        x: &ValueBlock<T>,
        mut rng: Option<&mut (dyn RngCore + 'r)>,
    ) -> Result<(ValueBlock<T>, ForwardCache<T>)> {
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut h = std::borrow::Cow::Borrowed(x);
        for block in &self.blocks {
            let (out, cache) = block.forward(&h, rng.as_deref_mut())?;
            caches.push(cache);
            h = std::borrow::Cow::Owned(out);
        }
        let (out, head) = self.head.forward(&h)?;
        Ok((
            out,
            ForwardCache {
                blocks: caches,
                head,
            },
        ))
    }

    /// Inference pass without dropout.
    pub fn infer(&self, x: &ValueBlock<T>) -> Result<ValueBlock<T>> {
        Ok(self.forward(x, None)?.0)
    }

    /// Reverse pass from the gradient of the loss w.r.t. the network output.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_out: &ValueBlock<T>) -> NetworkGrads<T> {
        let mut grads = self.zero_grads();
        let head_slot = grads.convs.len() - 1;
        let mut g = self.head.backward(&cache.head, grad_out, &mut grads.convs[head_slot]);
        let mut slot_end = head_slot;
        for (block, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            let n = 2 + usize::from(block.residual.is_some());
            let start = slot_end - n;
            g = block.backward(bc, &g, &mut grads.convs[start..slot_end]);
            slot_end = start;
        }
        grads
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block_with_zero_kernels(ch: usize) -> TcnBlock<f64> {
        TcnBlock {
            conv1: Conv1d::zeros(3, 1, ch, ch).unwrap(),
            conv2: Conv1d::zeros(3, 1, ch, ch).unwrap(),
            residual: None,
            dropout: 0.3,
        }
    }

    #[test]
    fn zero_kernels_make_block_identity() {
        let block = block_with_zero_kernels(3);
        let x = ValueBlock::from_vec(1, 4, 3, (0..12).map(|v| v as f64 - 6.0).collect()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (y, _) = block.forward(&x, Some(&mut rng)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn reduction_block_projects_residual() {
        let topo = Topology::standard(14, 1);
        let net = TcnNetwork::<f32>::init(&topo, 5).unwrap();
        assert!(net.blocks[0].residual.is_some());
        assert!(net.blocks[1].residual.is_none());
        assert!(net.blocks[3].residual.is_some());
        assert_eq!(net.blocks[0].dropout, 0.0);
        assert_eq!(net.blocks[1].dropout, 0.2);
        assert_eq!(net.param_layout().len(), net.params().len());
        let x = ValueBlock::zeros(2, 16, 14);
        assert_eq!(net.infer(&x).unwrap().shape(), (2, 16, 1));
    }

    #[test]
    fn seeded_dropout_is_reproducible() {
        let topo = Topology {
            dropout: 0.2,
            ..Topology::standard(4, 2)
        };
        let net = TcnNetwork::<f32>::init(&topo, 9).unwrap();
        let x = ValueBlock::from_vec(1, 16, 4, (0..64).map(|v| (v as f32 * 0.37).sin()).collect()).unwrap();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            net.forward(&x, Some(&mut rng)).unwrap().0
        };
        let (a, b, c) = (run(1), run(1), run(2));
        assert_eq!(
            a.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_ne!(a, c);
        assert_eq!(net.infer(&x).unwrap(), net.infer(&x).unwrap());
    }

    #[test]
    fn invalid_topologies_rejected() {
        let mut t = Topology::standard(3, 1);
        t.dilations.pop();
        assert!(t.validate().is_err());
        let t = Topology {
            dropout: 1.0,
            ..Topology::standard(3, 1)
        };
        assert!(t.validate().is_err());
        let t = Topology {
            kernel_width: 4,
            ..Topology::standard(3, 1)
        };
        assert!(t.validate().is_err());
    }

    #[test]
    fn inverted_dropout_preserves_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let act: Vec<f64> = (0..32).map(|i| 0.5 + (i as f64 * 0.7).sin().abs()).collect();
        let trials = 10_000;
        let mut mean = vec![0.0; act.len()];
        for _ in 0..trials {
            let mask: Vec<f64> = dropout_mask(act.len(), 0.2, &mut rng);
            for ((m, a), k) in mean.iter_mut().zip(&act).zip(&mask) {
                *m += a * k / trials as f64;
            }
        }
        let total: f64 = mean.iter().sum();
        let want: f64 = act.iter().sum();
        assert!((total - want).abs() <= 0.01 * want, "{total} vs {want}");
        for (m, a) in mean.iter().zip(&act) {
            assert!((m - a).abs() <= 0.05 * a);
        }
    }

    #[test]
    fn receptive_field() {
        assert_eq!(Topology::standard(1, 1).receptive_half_width(), 2 * (1 + 2 + 4 + 8));
    }
}
