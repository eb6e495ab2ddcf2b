//! Far-field uniform-linear-array synthesis of labeled MIMO IQ records.

mod iq;

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use iq::IqTensor;

use crate::dataio::{IqDataset, SplitManifest};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Label field names used by synthesized datasets, in storage order.
pub const MODULATION_FIELD: &str = "modulation";
pub const AOA_FIELD: &str = "aoa_bin";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayGeometry {
    pub antennas: usize,
    /// Element spacing in meters.
    pub spacing: f64,
    /// Carrier wavelength in meters.
    pub wavelength: f64,
}

impl ArrayGeometry {
    /// Half-wavelength array at 5.88 GHz.
    pub fn half_wavelength(antennas: usize) -> Self {
        let wavelength = 299_792_458.0 / 5.88e9;
        Self {
            antennas,
            spacing: wavelength / 2.0,
            wavelength,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.antennas == 0 {
            return Err(Error::invalid("array needs at least one antenna"));
        }
        if !(self.spacing > 0.0 && self.wavelength > 0.0) {
            return Err(Error::invalid(format!(
                "spacing {} and wavelength {} must be positive",
                self.spacing, self.wavelength
            )));
        }
        Ok(())
    }

    /// Position of element `m` (1-based) along the array axis.
    pub fn position(&self, m: usize) -> f64 {
        (m as f64 - 1.0) * self.spacing
    }
}

/// Phase `2π·p_m·sin(θ)/λ` seen by element `m` (1-based) for a wave from `theta` radians.
pub fn steering_phase(geometry: &ArrayGeometry, m: usize, theta: f64) -> f64 {
    assert!(
        (1..=geometry.antennas).contains(&m),
        "antenna index {m} outside 1..={}",
        geometry.antennas
    );
    2.0 * PI * geometry.position(m) * theta.sin() / geometry.wavelength
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    Bpsk,
    Qpsk,
    Qam16,
    Qam64,
    Pam4,
    Sine,
    Cw,
}

impl Modulation {
    pub const ALL: [Modulation; 7] = [
        Modulation::Bpsk,
        Modulation::Qpsk,
        Modulation::Qam16,
        Modulation::Qam64,
        Modulation::Pam4,
        Modulation::Sine,
        Modulation::Cw,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&m| m == self).expect("listed in ALL")
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Modulation::Bpsk => "bpsk",
            Modulation::Qpsk => "qpsk",
            Modulation::Qam16 => "qam16",
            Modulation::Qam64 => "qam64",
            Modulation::Pam4 => "pam4",
            Modulation::Sine => "sine",
            Modulation::Cw => "cw",
        }
    }

    /// Unit-average-power constellation; empty for the continuous waveforms.
    pub fn constellation(self) -> Vec<Complex64> {
        fn grid(levels: &[f64], scale: f64) -> Vec<Complex64> {
            levels
                .iter()
                .flat_map(|&i| levels.iter().map(move |&q| Complex64::new(i * scale, q * scale)))
                .collect()
        }
        match self {
            Modulation::Bpsk => vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)],
            Modulation::Qpsk => grid(&[-1.0, 1.0], 1.0 / 2f64.sqrt()),
            Modulation::Qam16 => grid(&[-3.0, -1.0, 1.0, 3.0], 1.0 / 10f64.sqrt()),
            Modulation::Qam64 => grid(&[-7.0, -5.0, -3.0, -1.0, 1.0, 3.0, 5.0, 7.0], 1.0 / 42f64.sqrt()),
            Modulation::Pam4 => [-3.0, -1.0, 1.0, 3.0]
                .iter()
                .map(|&a| Complex64::new(a / 5f64.sqrt(), 0.0))
                .collect(),
            Modulation::Sine | Modulation::Cw => Vec::new(),
        }
    }
}

impl std::fmt::Display for Modulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Modulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown modulation `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleLabel {
    pub modulation: Modulation,
    pub aoa_bin: usize,
    pub snr_db: f64,
}

/// Distribution of the complex channel gain applied to each record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GainModel {
    /// α = 1.
    Unit,
    /// α = e^{jφ}, φ uniform on [0, 2π).
    RandomPhase,
    /// α = r·e^{jφ} with r uniform on `[min, max]`.
    RandomPhaseMagnitude { min: f64, max: f64 },
}

impl GainModel {
    fn draw(&self, rng: &mut impl Rng) -> Complex64 {
        match *self {
            GainModel::Unit => Complex64::new(1.0, 0.0),
            GainModel::RandomPhase => Complex64::from_polar(1.0, rng.gen_range(0.0..2.0 * PI)),
            GainModel::RandomPhaseMagnitude { min, max } => {
                let r = if max > min { rng.gen_range(min..=max) } else { min };
                Complex64::from_polar(r, rng.gen_range(0.0..2.0 * PI))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseShape {
    /// Each symbol held for `samples_per_symbol` samples.
    Rectangular,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisConfig {
    pub geometry: ArrayGeometry,
    /// Samples per record (T).
    pub samples: usize,
    pub samples_per_symbol: usize,
    pub aoa_grid_deg: Vec<f64>,
    pub snr_db: f64,
    pub gain: GainModel,
    pub pulse: PulseShape,
    /// SINE tone frequency as a fraction of the sample rate.
    pub sine_frequency: f64,
    pub modulations: Vec<Modulation>,
    pub seed: u64,
}

/// `-70°, -60°, …, 70°` with `classes` bins spread evenly over that span.
pub fn aoa_grid(classes: usize) -> Vec<f64> {
    match classes {
        0 => Vec::new(),
        1 => vec![0.0],
        n => (0..n)
            .map(|i| -70.0 + 140.0 * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            geometry: ArrayGeometry::half_wavelength(4),
            samples: 256,
            samples_per_symbol: 8,
            aoa_grid_deg: aoa_grid(15),
            snr_db: 10.0,
            gain: GainModel::Unit,
            pulse: PulseShape::Rectangular,
            sine_frequency: 0.05,
            modulations: Modulation::ALL.to_vec(),
            seed: 0,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if self.samples == 0 || self.samples_per_symbol == 0 {
            return Err(Error::invalid("samples and samples_per_symbol must be positive"));
        }
        if self.samples % self.samples_per_symbol != 0 {
            return Err(Error::invalid(format!(
                "{} samples are not a whole number of {}-sample symbols",
                self.samples, self.samples_per_symbol
            )));
        }
        if self.aoa_grid_deg.is_empty() || self.modulations.is_empty() {
            return Err(Error::invalid("need at least one angle and one modulation"));
        }
        if self.aoa_grid_deg.iter().any(|a| !a.is_finite() || a.abs() > 90.0) {
            return Err(Error::invalid("angles must be finite and within ±90°"));
        }
        if self.snr_db.is_nan() {
            return Err(Error::invalid("SNR is NaN"));
        }
        Ok(())
    }

    pub fn symbols_per_record(&self) -> usize {
        self.samples / self.samples_per_symbol
    }

    /// Index of the grid angle equal to `theta` radians.
    pub fn aoa_bin(&self, theta: f64) -> Result<usize> {
        let deg = theta.to_degrees();
        self.aoa_grid_deg
            .iter()
            .position(|&a| (a - deg).abs() < 1e-6)
            .ok_or_else(|| Error::invalid(format!("angle {deg}° is not on the configured grid")))
    }
}

/// Draws `n_symbols` symbols of `modulation`.
///
/// Digital schemes draw uniformly from their unit-power constellation. SINE
/// returns a unit phasor advancing by `sine_frequency` cycles per symbol and
/// CW a constant 1; both ignore the generator.
pub fn synthesize_symbols(
    modulation: Modulation,
    n_symbols: usize,
    sine_frequency: f64,
    rng: &mut impl Rng,
) -> Vec<Complex64> {
    match modulation {
        Modulation::Sine => (0..n_symbols)
            .map(|k| Complex64::from_polar(1.0, 2.0 * PI * sine_frequency * k as f64))
            .collect(),
        Modulation::Cw => vec![Complex64::new(1.0, 0.0); n_symbols],
        digital => {
            let points = digital.constellation();
            (0..n_symbols)
                .map(|_| *points.choose(rng).expect("constellation is non-empty"))
                .collect()
        }
    }
}

/// Transmitted baseband waveform `s(t)` of `config.samples` samples.
pub fn baseband_waveform(config: &SynthesisConfig, modulation: Modulation, rng: &mut impl Rng) -> Vec<Complex64> {
    match modulation {
        // The tone is defined per sample, not per symbol.
        Modulation::Sine => synthesize_symbols(modulation, config.samples, config.sine_frequency, rng),
        _ => {
            let symbols = synthesize_symbols(modulation, config.symbols_per_record(), config.sine_frequency, rng);
            match config.pulse {
                PulseShape::Rectangular => symbols
                    .iter()
                    .flat_map(|&s| std::iter::repeat(s).take(config.samples_per_symbol))
                    .collect(),
            }
        }
    }
}

fn complex_noise(rng: &mut impl Rng, std_per_axis: f64) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * std_per_axis, im * std_per_axis)
}

/// Received rows `x_m(t) = α·s(t)·e^{j·phase_m} + n_m(t)` before normalization.
pub fn received_rows(
    config: &SynthesisConfig,
    modulation: Modulation,
    theta: f64,
    snr_db: f64,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<Complex64>>> {
    if snr_db.is_nan() {
        return Err(Error::invalid("SNR is NaN"));
    }
    let alpha = config.gain.draw(rng);
    let s = baseband_waveform(config, modulation, rng);
    // Nominal signal power is |α|² since every waveform has unit mean power.
    let noise_power = alpha.norm_sqr() * 10f64.powf(-snr_db / 10.0);
    let std_per_axis = (noise_power / 2.0).sqrt();
    let rows = (1..=config.geometry.antennas)
        .map(|m| {
            let steer = Complex64::from_polar(1.0, steering_phase(&config.geometry, m, theta));
            s.iter()
                .map(|&st| {
                    let clean = alpha * st * steer;
                    if std_per_axis > 0.0 {
                        clean + complex_noise(rng, std_per_axis)
                    } else {
                        clean
                    }
                })
                .collect()
        })
        .collect();
    Ok(rows)
}

/// One unnormalized record and its label.
pub fn synthesize_sample(
    config: &SynthesisConfig,
    modulation: Modulation,
    theta: f64,
    snr_db: f64,
    rng: &mut impl Rng,
) -> Result<(IqTensor<f64>, SampleLabel)> {
    let aoa_bin = config.aoa_bin(theta)?;
    let rows = received_rows(config, modulation, theta, snr_db, rng)?;
    let x = IqTensor::from_complex_rows(&rows)?;
    Ok((
        x,
        SampleLabel {
            modulation,
            aoa_bin,
            snr_db,
        },
    ))
}

/// Divides by the largest absolute value; an all-zero record is returned as is.
pub fn unit_max_normalize<S: Scalar>(x: &IqTensor<S>) -> IqTensor<S> {
    let peak = x.max_abs();
    let mut out = x.clone();
    if peak > S::zero() {
        out.data_mut().iter_mut().for_each(|v| *v = *v / peak);
    }
    out
}

/// Generator for record `index` of a dataset seeded with `seed`; independent
/// of how records are scheduled across threads.
pub fn record_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Balanced `modulation × angle` grid of normalized records plus a stratified
/// train/test split.
///
/// Stored values are rounded to `f32` so that the in-memory dataset equals
/// what the container format reads back.
pub fn build_dataset(
    config: &SynthesisConfig,
    per_class_count: usize,
    train_ratio: f64,
) -> Result<(IqDataset, SplitManifest)> {
    config.validate()?;
    if per_class_count == 0 {
        return Err(Error::invalid("per_class_count must be at least 1"));
    }
    if !(0.0..=1.0).contains(&train_ratio) {
        return Err(Error::invalid(format!("train ratio {train_ratio} outside [0, 1]")));
    }
    let classes: Vec<(Modulation, usize)> = config
        .modulations
        .iter()
        .flat_map(|&m| (0..config.aoa_grid_deg.len()).map(move |a| (m, a)))
        .collect();
    let jobs: Vec<(usize, Modulation, usize)> = classes
        .iter()
        .flat_map(|&(m, a)| std::iter::repeat((m, a)).take(per_class_count))
        .enumerate()
        .map(|(i, (m, a))| (i, m, a))
        .collect();
    let samples = jobs
        .par_iter()
        .map(|&(i, modulation, bin)| {
            let mut rng = record_rng(config.seed, i as u64);
            let theta = config.aoa_grid_deg[bin].to_radians();
            let (x, _) = synthesize_sample(config, modulation, theta, config.snr_db, &mut rng)?;
            let x = unit_max_normalize(&x);
            Ok(x.cast::<f32>().cast::<f64>())
        })
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<i32> = jobs
        .iter()
        .flat_map(|&(_, m, a)| [m.index() as i32, a as i32])
        .collect();
    let provenance = format!(
        "synthetic ULA: {}",
        serde_json::to_string(&serde_json::json!({
            "synthesis": config,
            "per_class_count": per_class_count,
        }))?
    );
    let dataset = IqDataset::new(
        config.geometry.antennas,
        config.samples,
        samples,
        vec![MODULATION_FIELD.to_string(), AOA_FIELD.to_string()],
        labels,
        provenance,
    )?;
    let split = stratified_split(per_class_count, classes.len(), train_ratio, config.seed);
    Ok((dataset, split))
}

/// Per-class shuffled split of class-contiguous records.
fn stratified_split(per_class: usize, n_classes: usize, ratio: f64, seed: u64) -> SplitManifest {
    let mut rng = record_rng(seed, u64::MAX);
    let n_train = (ratio * per_class as f64).round() as usize;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..n_classes {
        let mut idx: Vec<usize> = (c * per_class..(c + 1) * per_class).collect();
        idx.shuffle(&mut rng);
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    SplitManifest {
        seed,
        ratio,
        train,
        test,
    }
}
