//! IQ-domain augmentations and the task-conditional two-view sampler.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::signal::IqTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Aoa,
    Mod,
    Joint,
}

impl Task {
    pub fn allows_mask(self) -> bool {
        matches!(self, Task::Aoa | Task::Joint)
    }

    pub fn allows_drop(self) -> bool {
        matches!(self, Task::Mod | Task::Joint)
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aoa" => Ok(Task::Aoa),
            "mod" | "modulation" => Ok(Task::Mod),
            "joint" => Ok(Task::Joint),
            _ => Err(Error::invalid(format!("unknown task `{s}` (aoa|mod|joint)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentStep {
    Mask,
    Drop,
    Roll,
    Scale,
    Noise,
}

pub const DEFAULT_ORDER: [AugmentStep; 5] = [
    AugmentStep::Mask,
    AugmentStep::Drop,
    AugmentStep::Roll,
    AugmentStep::Scale,
    AugmentStep::Noise,
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationPolicy {
    pub cd_prob: f64,
    pub cm_prob: f64,
    /// Longest masked run, in samples.
    pub cm_len: usize,
    pub tr_prob: f64,
    /// Largest roll, in samples.
    pub tr_len: usize,
    pub amp_range: f64,
    pub noise_sigma: f64,
    pub task: Task,
    #[serde(default = "default_order")]
    pub order: Vec<AugmentStep>,
}

fn default_order() -> Vec<AugmentStep> {
    DEFAULT_ORDER.to_vec()
}

impl AugmentationPolicy {
    /// Temporal preset: channel dropping plus time rolling.
    pub fn ssl_mod() -> Self {
        Self {
            cd_prob: 1.0,
            cm_prob: 0.0,
            cm_len: 0,
            tr_prob: 0.8,
            tr_len: 40,
            amp_range: 0.1,
            noise_sigma: 0.09,
            task: Task::Mod,
            order: default_order(),
        }
    }

    /// Spatial preset: channel masking plus time rolling.
    pub fn ssl_aoa() -> Self {
        Self {
            cd_prob: 0.0,
            cm_prob: 0.95,
            cm_len: 200,
            tr_prob: 0.95,
            tr_len: 120,
            amp_range: 0.1,
            noise_sigma: 0.09,
            task: Task::Aoa,
            order: default_order(),
        }
    }

    pub fn ssl_joint() -> Self {
        Self {
            cd_prob: 0.45,
            cm_prob: 0.97,
            cm_len: 40,
            tr_prob: 0.95,
            tr_len: 20,
            amp_range: 0.1,
            noise_sigma: 0.09,
            task: Task::Joint,
            order: default_order(),
        }
    }

    /// Everything off: both views equal the input.
    pub fn identity(task: Task) -> Self {
        Self {
            cd_prob: 0.0,
            cm_prob: 0.0,
            cm_len: 0,
            tr_prob: 0.0,
            tr_len: 0,
            amp_range: 0.0,
            noise_sigma: 0.0,
            task,
            order: default_order(),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().replace('_', "-").as_str() {
            "ssl-mod" => Ok(Self::ssl_mod()),
            "ssl-aoa" => Ok(Self::ssl_aoa()),
            "ssl-joint" => Ok(Self::ssl_joint()),
            _ => Err(Error::invalid(format!("unknown policy preset `{name}` (ssl-mod|ssl-aoa|ssl-joint)"))),
        }
    }

    pub fn validate(&self, time: usize) -> Result<()> {
        for (name, p) in [("cd_prob", self.cd_prob), ("cm_prob", self.cm_prob), ("tr_prob", self.tr_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if self.cm_len > time || self.tr_len > time {
            return Err(Error::invalid(format!(
                "cm_len {} / tr_len {} exceed record length {time}",
                self.cm_len, self.tr_len
            )));
        }
        if !(self.amp_range >= 0.0 && self.noise_sigma >= 0.0) {
            return Err(Error::invalid("amp_range and noise_sigma must be non-negative"));
        }
        Ok(())
    }

    /// Mask probability after task gating.
    pub fn effective_cm_prob(&self) -> f64 {
        if self.task.allows_mask() && self.cm_len > 0 {
            self.cm_prob
        } else {
            0.0
        }
    }

    /// Drop probability after task gating.
    pub fn effective_cd_prob(&self) -> f64 {
        if self.task.allows_drop() {
            self.cd_prob
        } else {
            0.0
        }
    }
}

/// Cyclic shift: `x'(t) = x((t + dir·tau) mod T)` on every antenna and channel.
pub fn time_roll<S: Scalar>(x: &IqTensor<S>, tau: usize, dir: i8) -> Result<IqTensor<S>> {
    let t = x.time();
    if tau >= t {
        return Err(Error::invalid(format!("roll of {tau} samples on a record of {t}")));
    }
    if dir != 1 && dir != -1 {
        return Err(Error::invalid(format!("roll direction must be ±1, got {dir}")));
    }
    let shift = if dir > 0 { tau } else { (t - tau) % t };
    let mut out = x.clone();
    for a in 0..x.antennas() {
        for c in 0..2 {
            let src = x.channel(a, c);
            let dst = out.channel_mut(a, c);
            dst[..t - shift].copy_from_slice(&src[shift..]);
            dst[t - shift..].copy_from_slice(&src[..shift]);
        }
    }
    Ok(out)
}

/// Zeroes the time indices where `keep[t]` is false, on all antennas at once.
pub fn channel_mask<S: Scalar>(x: &IqTensor<S>, keep: &[bool]) -> Result<IqTensor<S>> {
    if keep.len() != x.time() {
        return Err(Error::shape("channel_mask", format!("mask of {} for {} samples", keep.len(), x.time())));
    }
    let mut out = x.clone();
    for a in 0..x.antennas() {
        for c in 0..2 {
            for (v, &k) in out.channel_mut(a, c).iter_mut().zip(keep) {
                if !k {
                    *v = S::zero();
                }
            }
        }
    }
    Ok(out)
}

/// Zeroes whole antenna rows (0-based indices); at least one must survive.
pub fn channel_drop<S: Scalar>(x: &IqTensor<S>, dropped: &[usize]) -> Result<IqTensor<S>> {
    if let Some(&bad) = dropped.iter().find(|&&a| a >= x.antennas()) {
        return Err(Error::invalid(format!("antenna {bad} out of range for {}", x.antennas())));
    }
    let mut set = dropped.to_vec();
    set.sort_unstable();
    set.dedup();
    if set.len() == x.antennas() {
        return Err(Error::invalid("cannot drop every antenna"));
    }
    let mut out = x.clone();
    for &a in &set {
        for c in 0..2 {
            out.channel_mut(a, c).iter_mut().for_each(|v| *v = S::zero());
        }
    }
    Ok(out)
}

/// Multiplies by `1 + s`.
pub fn amplitude_scale<S: Scalar>(x: &IqTensor<S>, s: f64) -> IqTensor<S> {
    let f = S::from_f64_lossy(1.0 + s);
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| *v *= f);
    out
}

/// Adds i.i.d. zero-mean Gaussian noise of standard deviation `sigma`.
pub fn add_noise<S: Scalar>(x: &IqTensor<S>, sigma: f64, rng: &mut impl Rng) -> IqTensor<S> {
    let mut out = x.clone();
    if sigma > 0.0 {
        for v in out.data_mut() {
            let n: f64 = StandardNormal.sample(rng);
            *v += S::from_f64_lossy(n * sigma);
        }
    }
    out
}

/// What one call of [`sample_view`] did.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AppliedAugmentations {
    /// `(start, length)` of the masked run.
    pub mask: Option<(usize, usize)>,
    pub dropped: Option<Vec<usize>>,
    /// `(tau, dir)`.
    pub roll: Option<(usize, i8)>,
    pub scale: Option<f64>,
    pub noise: bool,
}

/// Draws one augmented view of `x` under `policy`.
pub fn sample_view<S: Scalar>(
    x: &IqTensor<S>,
    policy: &AugmentationPolicy,
    rng: &mut impl Rng,
) -> (IqTensor<S>, AppliedAugmentations) {
    let t = x.time();
    let m = x.antennas();
    let mut out = x.clone();
    let mut applied = AppliedAugmentations::default();
    for step in &policy.order {
        match step {
            AugmentStep::Mask => {
                let p = policy.effective_cm_prob();
                if p > 0.0 && rng.gen_bool(p) {
                    let len = rng.gen_range(1..=policy.cm_len.min(t));
                    let start = rng.gen_range(0..=t - len);
                    let keep: Vec<bool> = (0..t).map(|i| i < start || i >= start + len).collect();
                    out = channel_mask(&out, &keep).expect("mask sized to record");
                    applied.mask = Some((start, len));
                }
            }
            AugmentStep::Drop => {
                let p = policy.effective_cd_prob();
                if m > 1 && p > 0.0 && rng.gen_bool(p) {
                    // Uniform over the 2^M − 2 nonempty strict subsets.
                    let bits: u64 = rng.gen_range(1..(1u64 << m) - 1);
                    let dropped: Vec<usize> = (0..m).filter(|&a| bits >> a & 1 == 1).collect();
                    out = channel_drop(&out, &dropped).expect("strict subset");
                    applied.dropped = Some(dropped);
                }
            }
            AugmentStep::Roll => {
                let max = policy.tr_len.min(t.saturating_sub(1));
                if max > 0 && policy.tr_prob > 0.0 && rng.gen_bool(policy.tr_prob) {
                    let tau = rng.gen_range(1..=max);
                    let dir = if rng.gen_bool(0.5) { 1 } else { -1 };
                    out = time_roll(&out, tau, dir).expect("tau < T");
                    applied.roll = Some((tau, dir));
                }
            }
            AugmentStep::Scale => {
                if policy.amp_range > 0.0 {
                    let s = rng.gen_range(-policy.amp_range..=policy.amp_range);
                    out = amplitude_scale(&out, s);
                    applied.scale = Some(s);
                }
            }
            AugmentStep::Noise => {
                if policy.noise_sigma > 0.0 {
                    out = add_noise(&out, policy.noise_sigma, rng);
                    applied.noise = true;
                }
            }
        }
    }
    (out, applied)
}

/// Two independent views of the same record.
pub fn sample_views<S: Scalar>(
    x: &IqTensor<S>,
    policy: &AugmentationPolicy,
    rng: &mut impl Rng,
) -> (IqTensor<S>, IqTensor<S>) {
    let (a, _) = sample_view(x, policy, rng);
    let (b, _) = sample_view(x, policy, rng);
    (a, b)
}
