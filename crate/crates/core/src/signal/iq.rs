use num_complex::Complex;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// One multi-antenna IQ record laid out as `antennas × 2 × time`
/// (channel 0 is in-phase, channel 1 quadrature).
#[derive(Clone, Debug, PartialEq)]
pub struct IqTensor<S> {
    antennas: usize,
    time: usize,
    data: Vec<S>,
}

impl<S: Scalar> IqTensor<S> {
    pub fn new(antennas: usize, time: usize, data: Vec<S>) -> Result<Self> {
        if antennas == 0 || time == 0 {
            return Err(Error::shape("iq_tensor", format!("{antennas} antennas x {time} samples")));
        }
        if data.len() != antennas * 2 * time {
            return Err(Error::shape(
                "iq_tensor",
                format!("{antennas} x 2 x {time} needs {} values, got {}", antennas * 2 * time, data.len()),
            ));
        }
        Ok(Self { antennas, time, data })
    }

    pub fn zeros(antennas: usize, time: usize) -> Self {
        Self {
            antennas,
            time,
            data: vec![S::zero(); antennas * 2 * time],
        }
    }

    /// Builds a record from per-antenna complex rows.
    pub fn from_complex_rows(rows: &[Vec<Complex<f64>>]) -> Result<Self> {
        let antennas = rows.len();
        let time = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != time) {
            return Err(Error::shape("iq_tensor", "antenna rows differ in length"));
        }
        let mut data = Vec::with_capacity(antennas * 2 * time);
        for row in rows {
            data.extend(row.iter().map(|c| S::from_f64_lossy(c.re)));
            data.extend(row.iter().map(|c| S::from_f64_lossy(c.im)));
        }
        Self::new(antennas, time, data)
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn index(&self, antenna: usize, channel: usize, t: usize) -> usize {
        (antenna * 2 + channel) * self.time + t
    }

    pub fn get(&self, antenna: usize, channel: usize, t: usize) -> S {
        self.data[self.index(antenna, channel, t)]
    }

    /// Row of one antenna/channel pair.
    pub fn channel(&self, antenna: usize, channel: usize) -> &[S] {
        let start = self.index(antenna, channel, 0);
        &self.data[start..start + self.time]
    }

    pub fn channel_mut(&mut self, antenna: usize, channel: usize) -> &mut [S] {
        let start = self.index(antenna, channel, 0);
        &mut self.data[start..start + self.time]
    }

    pub fn complex(&self, antenna: usize, t: usize) -> Complex<f64> {
        Complex::new(self.get(antenna, 0, t).as_f64(), self.get(antenna, 1, t).as_f64())
    }

    pub fn max_abs(&self) -> S {
        self.data.iter().fold(S::zero(), |m, v| m.max(v.abs()))
    }

    /// Appends all-zero antenna rows up to `antennas` (no-op if already there).
    pub fn zero_padded(&self, antennas: usize) -> Result<Self> {
        if antennas < self.antennas {
            return Err(Error::shape(
                "zero_pad",
                format!("cannot pad {} antennas down to {antennas}", self.antennas),
            ));
        }
        let mut data = self.data.clone();
        data.resize(antennas * 2 * self.time, S::zero());
        Self::new(antennas, self.time, data)
    }

    pub fn to_tensor(&self) -> Tensor<S> {
        Tensor::new(vec![self.antennas, 2, self.time], self.data.clone())
            .expect("IqTensor invariants guarantee a valid shape")
    }

    pub fn cast<T: Scalar>(&self) -> IqTensor<T> {
        IqTensor {
            antennas: self.antennas,
            time: self.time,
            data: self.data.iter().map(|v| T::from_f64_lossy(v.as_f64())).collect(),
        }
    }
}
