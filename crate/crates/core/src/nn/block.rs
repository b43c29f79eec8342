use crate::error::{Error, Result};

use super::Scalar;

/// Activations laid out as `(batch, time, channels)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueBlock<T> {
    pub batch: usize,
    pub time: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> ValueBlock<T> {
    pub fn zeros(batch: usize, time: usize, channels: usize) -> Self {
        ValueBlock {
            batch,
            time,
            channels,
            data: vec![T::ZERO; batch * time * channels],
        }
    }

    pub fn from_vec(batch: usize, time: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != batch * time * channels {
            return Err(Error::shape(format!(
                "block ({batch}, {time}, {channels}) needs {} values, got {}",
                batch * time * channels,
                data.len()
            )));
        }
        Ok(ValueBlock {
            batch,
            time,
            channels,
            data,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.batch, self.time, self.channels)
    }

    /// Number of `(batch, time)` rows.
    pub fn rows(&self) -> usize {
        self.batch * self.time
    }

    pub fn row(&self, b: usize, t: usize) -> &[T] {
        let start = (b * self.time + t) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &ValueBlock<T>) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }
}
