use rand::Rng;

use crate::error::{Error, Result};

use super::{Scalar, ValueBlock};

/// Dilated 1-D convolution with zero "same" padding.
///
/// The kernel is stored as `[width][in_channels][out_channels]`, so a
/// forward pass is one matrix product of the unfolded input with the kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<T> {
    pub width: usize,
    pub dilation: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

/// Unfolded input kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    cols: Vec<T>,
    batch: usize,
    time: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvGrads<T> {
    pub fn zeros_like(conv: &Conv1d<T>) -> Self {
        ConvGrads {
            kernel: vec![T::ZERO; conv.kernel.len()],
            bias: vec![T::ZERO; conv.bias.len()],
        }
    }
}

impl<T: Scalar> Conv1d<T> {
    pub fn zeros(width: usize, dilation: usize, in_channels: usize, out_channels: usize) -> Result<Self> {
        if width % 2 == 0 {
            return Err(Error::shape(format!("kernel width must be odd, got {width}")));
        }
        if dilation == 0 {
            return Err(Error::shape("dilation must be at least 1"));
        }
        Ok(Conv1d {
            width,
            dilation,
            in_channels,
            out_channels,
            kernel: vec![T::ZERO; width * in_channels * out_channels],
            bias: vec![T::ZERO; out_channels],
        })
    }

    /// He-uniform kernel, zero bias.
    pub fn init<R: Rng>(
        width: usize,
        dilation: usize,
        in_channels: usize,
        out_channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut conv = Self::zeros(width, dilation, in_channels, out_channels)?;
        let bound = (6.0 / (width * in_channels) as f64).sqrt();
        for w in &mut conv.kernel {
            *w = T::from_f64(rng.random_range(-bound..bound));
        }
        Ok(conv)
    }

    pub fn kernel_at(&self, k: usize, i: usize, o: usize) -> T {
        self.kernel[(k * self.in_channels + i) * self.out_channels + o]
    }

    fn unfold(&self, x: &ValueBlock<T>) -> Vec<T> {
        let (batch, time, cin) = x.shape();
        let row_len = self.width * cin;
        let half = (self.width - 1) / 2;
        let mut cols = vec![T::ZERO; batch * time * row_len];
        for b in 0..batch {
            for t in 0..time {
                let row = &mut cols[(b * time + t) * row_len..(b * time + t + 1) * row_len];
                for k in 0..self.width {
                    let src = t as isize + (k as isize - half as isize) * self.dilation as isize;
                    if src < 0 || src >= time as isize {
                        continue;
                    }
                    row[k * cin..(k + 1) * cin].copy_from_slice(x.row(b, src as usize));
                }
            }
        }
        cols
    }

    pub fn forward(&self, x: &ValueBlock<T>) -> Result<(ValueBlock<T>, ConvCache<T>)> {
        if x.channels != self.in_channels {
            return Err(Error::shape(format!(
                "convolution expects {} input channels, got {}",
                self.in_channels, x.channels
            )));
        }
        let rows = x.rows();
        let cols = if self.width == 1 {
            x.data.clone()
        } else {
            self.unfold(x)
        };
        let mut out = Vec::with_capacity(rows * self.out_channels);
        for _ in 0..rows {
            out.extend_from_slice(&self.bias);
        }
        T::gemm(
            rows,
            self.width * self.in_channels,
            self.out_channels,
            &cols,
            false,
            &self.kernel,
            false,
            T::ONE,
            &mut out,
        );
        Ok((
            ValueBlock {
                batch: x.batch,
                time: x.time,
                channels: self.out_channels,
                data: out,
            },
            ConvCache {
                cols,
                batch: x.batch,
                time: x.time,
            },
        ))
    }

    /// Accumulates parameter gradients into `grads` and returns the input
    /// gradient.
    pub fn backward(
        &self,
        cache: &ConvCache<T>,
        grad_out: &ValueBlock<T>,
        grads: &mut ConvGrads<T>,
    ) -> ValueBlock<T> {
        let rows = cache.batch * cache.time;
        let row_len = self.width * self.in_channels;
        debug_assert_eq!(grad_out.data.len(), rows * self.out_channels);

        // dK += cols^T . dY
        T::gemm(
            row_len,
            rows,
            self.out_channels,
            &cache.cols,
            true,
            &grad_out.data,
            false,
            T::ONE,
            &mut grads.kernel,
        );
        for r in 0..rows {
            let g = &grad_out.data[r * self.out_channels..(r + 1) * self.out_channels];
            for (acc, v) in grads.bias.iter_mut().zip(g) {
                *acc += *v;
            }
        }

        // dCols = dY . K^T
        let mut dcols = vec![T::ZERO; rows * row_len];
        T::gemm(
            rows,
            self.out_channels,
            row_len,
            &grad_out.data,
            false,
            &self.kernel,
            true,
            T::ZERO,
            &mut dcols,
        );
        if self.width == 1 {
            return ValueBlock {
                batch: cache.batch,
                time: cache.time,
                channels: self.in_channels,
                data: dcols,
            };
        }

        let mut dx = ValueBlock::zeros(cache.batch, cache.time, self.in_channels);
        let half = (self.width - 1) / 2;
        let cin = self.in_channels;
        for b in 0..cache.batch {
            for t in 0..cache.time {
                let row = &dcols[(b * cache.time + t) * row_len..(b * cache.time + t + 1) * row_len];
                for k in 0..self.width {
                    let src = t as isize + (k as isize - half as isize) * self.dilation as isize;
                    if src < 0 || src >= cache.time as isize {
                        continue;
                    }
                    let start = (b * cache.time + src as usize) * cin;
                    for (acc, v) in dx.data[start..start + cin].iter_mut().zip(&row[k * cin..(k + 1) * cin]) {
                        *acc += *v;
                    }
                }
            }
        }
        dx
    }
}

/// Direct-loop reference used to cross-check the unfolded implementation.
#[cfg(test)]
pub(crate) fn conv_reference(conv: &Conv1d<f64>, x: &ValueBlock<f64>) -> ValueBlock<f64> {
    let half = (conv.width - 1) / 2;
    let mut out = ValueBlock::zeros(x.batch, x.time, conv.out_channels);
    for b in 0..x.batch {
        for t in 0..x.time {
            for o in 0..conv.out_channels {
                let mut acc = conv.bias[o];
                for k in 0..conv.width {
                    let src = t as isize + (k as isize - half as isize) * conv.dilation as isize;
                    if src < 0 || src >= x.time as isize {
                        continue;
                    }
                    for i in 0..conv.in_channels {
                        acc += x.row(b, src as usize)[i] * conv.kernel_at(k, i, o);
                    }
                }
                out.data[(b * x.time + t) * conv.out_channels + o] = acc;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_block(rng: &mut ChaCha8Rng, b: usize, t: usize, c: usize) -> ValueBlock<f64> {
        let data = (0..b * t * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        ValueBlock::from_vec(b, t, c, data).unwrap()
    }

    #[test]
    fn identity_kernels_pass_input_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_block(&mut rng, 2, 10, 3);

        let mut id1 = Conv1d::<f64>::zeros(1, 1, 3, 3).unwrap();
        for i in 0..3 {
            id1.kernel[i * 3 + i] = 1.0;
        }
        assert_eq!(id1.forward(&x).unwrap().0, x);

        let mut delta = Conv1d::<f64>::zeros(3, 2, 3, 3).unwrap();
        for i in 0..3 {
            delta.kernel[(3 + i) * 3 + i] = 1.0;
        }
        assert_eq!(delta.forward(&x).unwrap().0, x);
    }

    #[test]
    fn same_padding_keeps_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = Conv1d::<f64>::init(3, 4, 2, 5, &mut rng).unwrap();
        let x = random_block(&mut rng, 1, 16, 2);
        let (y, _) = conv.forward(&x).unwrap();
        assert_eq!(y.shape(), (1, 16, 5));
    }

    #[test]
    fn matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (width, dilation) in [(1, 1), (3, 1), (3, 3), (5, 2)] {
            let mut conv = Conv1d::<f64>::init(width, dilation, 3, 4, &mut rng).unwrap();
            conv.bias = vec![0.1, -0.2, 0.3, 0.0];
            let x = random_block(&mut rng, 2, 9, 3);
            let (y, _) = conv.forward(&x).unwrap();
            let want = conv_reference(&conv, &x);
            for (a, b) in y.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let conv = Conv1d::<f32>::zeros(3, 1, 4, 2).unwrap();
        let x = ValueBlock::<f32>::zeros(1, 5, 3);
        assert!(matches!(conv.forward(&x), Err(Error::Shape(_))));
        assert!(Conv1d::<f32>::zeros(2, 1, 1, 1).is_err());
        assert!(Conv1d::<f32>::zeros(3, 0, 1, 1).is_err());
    }
}
