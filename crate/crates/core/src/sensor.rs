//! Soft strain sensors embedded along the finger.
//!
//! Each sensor sums the strain over a contiguous window of segments and passes
//! it through a play (backlash) operator, then adds a random-walk drift and
//! white read noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SENSOR_COUNT: usize = 6;

/// Minimum fraction of segments the six windows must cover together.
pub const MIN_COVERAGE: f64 = 0.75;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensorError {
    #[error("strain for segment {index} is {value}; strains must be finite and nonnegative")]
    InvalidStrain { index: usize, value: f64 },
    #[error("expected {expected} strain entries, got {got}")]
    Length { expected: usize, got: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorParams {
    pub gain: f64,
    pub play_width: f64,
    /// Drift random-walk intensity, per sqrt(second).
    pub drift_sigma: f64,
    pub noise_sigma: f64,
    /// Relative spread of per-sensor gain around `gain`.
    pub gain_spread: f64,
    /// Relative spread of per-sensor play width around `play_width`.
    pub play_spread: f64,
    pub layout_seed: u64,
}

impl Default for SensorParams {
    fn default() -> Self {
        Self {
            gain: 1.0,
            play_width: 0.05,
            drift_sigma: 0.002,
            noise_sigma: 0.005,
            gain_spread: 0.3,
            play_spread: 0.5,
            layout_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    /// First and last covered segment, inclusive.
    pub window: [usize; 2],
    pub gain: f64,
    pub play_width: f64,
    pub drift_sigma: f64,
    pub noise_sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorLayout {
    pub segments: usize,
    pub sensors: Vec<SensorSpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensorState {
    /// Play-operator outputs.
    pub play_memory: [f64; SENSOR_COUNT],
    pub drift_offset: [f64; SENSOR_COUNT],
    rng: ChaCha8Rng,
}

impl SensorState {
    pub fn new(seed: u64) -> Self {
        Self {
            play_memory: [0.0; SENSOR_COUNT],
            drift_offset: [0.0; SENSOR_COUNT],
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

/// Backlash operator: the output only moves once the input leaves `[y - w, y + w]`.
pub fn play_operator(input: f64, previous: f64, width: f64) -> f64 {
    (input - width).max((input + width).min(previous))
}

/// Random sensor placement over `segments` segments.
///
/// A contiguous run of at least 75% of the segments is split into six
/// chunks (one per sensor), then each window is widened by up to one segment
/// per side and windows are shuffled among sensors.
pub fn init_layout(seed: u64, segments: usize, params: &SensorParams) -> SensorLayout {
    assert!(segments >= 1, "finger needs at least one segment");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let required = ((MIN_COVERAGE * segments as f64).ceil() as usize).clamp(1, segments);
    let start = rng.random_range(0..=segments - required);

    // cut points splitting `required` segments into SENSOR_COUNT chunks
    let mut cuts: Vec<usize> = if required >= SENSOR_COUNT {
        let mut inner: Vec<usize> = (1..required).collect();
        for i in (1..inner.len()).rev() {
            let j = rng.random_range(0..=i);
            inner.swap(i, j);
        }
        inner.truncate(SENSOR_COUNT - 1);
        inner
    } else {
        (1..SENSOR_COUNT).map(|k| k * required / SENSOR_COUNT).collect()
    };
    cuts.sort_unstable();
    let mut bounds = vec![0];
    bounds.extend(cuts);
    bounds.push(required);

    let mut windows: Vec<[usize; 2]> = bounds
        .windows(2)
        .map(|b| {
            let lo = start + b[0];
            let hi = start + b[1].max(b[0] + 1) - 1;
            let lo = lo.saturating_sub(rng.random_range(0..=1));
            let hi = (hi + rng.random_range(0..=1)).min(segments - 1);
            [lo.min(hi), hi]
        })
        .collect();
    for i in (1..windows.len()).rev() {
        let j = rng.random_range(0..=i);
        windows.swap(i, j);
    }

    let sensors = windows
        .into_iter()
        .map(|window| {
            let g = 1.0 + params.gain_spread * rng.random_range(-1.0..=1.0);
            let w = 1.0 + params.play_spread * rng.random_range(-1.0..=1.0);
            SensorSpec {
                window,
                gain: params.gain * g,
                play_width: (params.play_width * w).max(0.0),
                drift_sigma: params.drift_sigma,
                noise_sigma: params.noise_sigma,
            }
        })
        .collect();
    SensorLayout { segments, sensors }
}

impl SensorLayout {
    /// Fraction of segments covered by at least one window.
    pub fn coverage(&self) -> f64 {
        let mut covered = vec![false; self.segments];
        for s in &self.sensors {
            for c in &mut covered[s.window[0]..=s.window[1]] {
                *c = true;
            }
        }
        covered.iter().filter(|&&c| c).count() as f64 / self.segments as f64
    }

    /// Summed window strain per sensor.
    pub fn aggregate(&self, strains: &[f64]) -> Result<[f64; SENSOR_COUNT], SensorError> {
        if strains.len() != self.segments {
            return Err(SensorError::Length {
                expected: self.segments,
                got: strains.len(),
            });
        }
        if let Some((index, &value)) = strains
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(SensorError::InvalidStrain { index, value });
        }
        let mut out = [0.0; SENSOR_COUNT];
        for (o, s) in out.iter_mut().zip(&self.sensors) {
            *o = strains[s.window[0]..=s.window[1]].iter().sum();
        }
        Ok(out)
    }

    /// One sample: returns the six readings and the advanced sensor state.
    pub fn read(
        &self,
        state: &SensorState,
        strains: &[f64],
        dt: f64,
    ) -> Result<([f64; SENSOR_COUNT], SensorState), SensorError> {
        let aggregate = self.aggregate(strains)?;
        let mut next = state.clone();
        let mut readings = [0.0; SENSOR_COUNT];
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        for (i, s) in self.sensors.iter().enumerate() {
            next.play_memory[i] = play_operator(aggregate[i], state.play_memory[i], s.play_width);
            if s.drift_sigma > 0.0 {
                next.drift_offset[i] += s.drift_sigma * dt.sqrt() * unit.sample(&mut next.rng);
            }
            let noise = if s.noise_sigma > 0.0 {
                s.noise_sigma * unit.sample(&mut next.rng)
            } else {
                0.0
            };
            readings[i] = s.gain * next.play_memory[i] + next.drift_offset[i] + noise;
        }
        Ok((readings, next))
    }
}
