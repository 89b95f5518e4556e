//! Episode scripting, dataset assembly and the binary dataset format.

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geom::{segment_distance_sq, Vec2};
use crate::render::{render, DistractorState, LabeledImage, RenderConfig, RenderError};
use crate::sensor::{init_layout, SensorError, SensorLayout, SensorParams, SensorState, SENSOR_COUNT};
use crate::sim::{MovableObject, PhysicsParams, Pose, SceneSpec, Shape, SimError, Simulator};

pub const DATASET_MAGIC: &[u8; 4] = b"SBSD";
pub const DATASET_VERSION: u16 = 1;
pub const ACTION_DIM: usize = 3;
pub const INPUT_DIM: usize = ACTION_DIM + SENSOR_COUNT;

/// Radius and mass of the pushable objects that scenes draw from.
pub const OBJECT_CATALOGUE: [(f64, f64); 11] = [
    (0.012, 0.02),
    (0.014, 0.03),
    (0.016, 0.03),
    (0.018, 0.04),
    (0.020, 0.05),
    (0.022, 0.05),
    (0.024, 0.06),
    (0.026, 0.07),
    (0.028, 0.08),
    (0.030, 0.09),
    (0.015, 0.10),
];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("simulation failed at frame {frame}: {source}")]
    Sim {
        frame: usize,
        #[source]
        source: SimError,
    },
    #[error("sensor read failed at frame {frame}: {source}")]
    Sensor {
        frame: usize,
        #[source]
        source: SensorError,
    },
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("not a dataset file (bad magic)")]
    Magic,
    #[error("unsupported dataset version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },
    #[error("file truncated at byte {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("{0} unexpected trailing bytes")]
    Trailing(usize),
    #[error("header is malformed: {0}")]
    Header(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ornstein-Uhlenbeck parameters for the commanded base motion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionParams {
    /// Pull towards the workspace centre, 1/s.
    pub mean_reversion: f64,
    /// Noise intensity per sqrt(second) for x, y (m) and theta (rad).
    pub sigma: [f64; 3],
    /// Time constant of the low-pass filter applied to the walk, seconds; 0 emits the raw walk.
    pub smoothing: f64,
}

impl Default for MotionParams {
    fn default() -> Self {
        Self {
            mean_reversion: 0.5,
            sigma: [0.05, 0.05, 0.4],
            smoothing: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeSeeds {
    pub motion: u64,
    pub sensors: u64,
    pub distractor: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub scene: SceneSpec,
    pub frames: usize,
    pub dt: f64,
    pub motion: MotionParams,
    /// Transport delay between emitted and applied command, in frames.
    pub delay: usize,
    pub distractor: bool,
    pub seeds: EpisodeSeeds,
    pub physics: PhysicsParams,
    pub sensors: SensorParams,
    pub render: RenderConfig,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            frames: 600,
            dt: 1.0 / 33.0,
            motion: MotionParams::default(),
            delay: 0,
            distractor: false,
            seeds: EpisodeSeeds::default(),
            // lag in generated data comes from `delay` alone
            physics: PhysicsParams {
                tau: 0.0,
                ..PhysicsParams::default()
            },
            sensors: SensorParams::default(),
            render: RenderConfig::default(),
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.frames == 0 {
            return Err(DatasetError::Config("frames must be at least 1".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(DatasetError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        let m = &self.motion;
        if !(m.mean_reversion >= 0.0 && m.mean_reversion.is_finite() && m.sigma.iter().all(|s| *s >= 0.0 && s.is_finite()) && m.smoothing >= 0.0 && m.smoothing.is_finite()) {
            return Err(DatasetError::Config("motion parameters must be finite and nonnegative".into()));
        }
        if self.physics.nodes < 3 {
            return Err(DatasetError::Config("finger needs at least 3 nodes".into()));
        }
        self.render.validate()?;
        Ok(())
    }

    /// Render settings with the episode's distractor switch and seed applied.
    pub fn effective_render(&self) -> RenderConfig {
        let mut r = self.render.clone();
        r.distractor.enabled = self.distractor;
        r.distractor.seed = self.seeds.distractor;
        r
    }

    pub fn sensor_layout(&self) -> SensorLayout {
        init_layout(self.sensors.layout_seed, self.physics.nodes - 1, &self.sensors)
    }
}

/// One synchronized sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub t: usize,
    /// Command emitted at this frame.
    pub action: [f32; ACTION_DIM],
    pub sensors: [f32; SENSOR_COUNT],
    pub image: LabeledImage,
    /// Whether any contact force acted during the step into this frame.
    pub contact: bool,
}

impl Frame {
    pub fn raw_input(&self) -> [f32; INPUT_DIM] {
        let mut x = [0.0; INPUT_DIM];
        x[..ACTION_DIM].copy_from_slice(&self.action);
        x[ACTION_DIM..].copy_from_slice(&self.sensors);
        x
    }
}

/// Per-frame record of the simulated base, kept for analysis and tests.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub frames: Vec<Frame>,
    pub base: Vec<Pose>,
    pub applied: Vec<Pose>,
}

fn ou_step(x: f64, mean: f64, kappa: f64, sigma: f64, dt: f64, z: f64) -> f64 {
    if kappa > 0.0 {
        let decay = (-kappa * dt).exp();
        let sd = sigma * ((1.0 - decay * decay) / (2.0 * kappa)).sqrt();
        mean + (x - mean) * decay + sd * z
    } else {
        x + sigma * dt.sqrt() * z
    }
}

/// Emitted commands: frame 0 is home, later frames follow a clipped OU walk.
pub fn command_sequence(cfg: &EpisodeConfig) -> Vec<Pose> {
    let ws = &cfg.scene.workspace;
    let home = ws.center();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds.motion);
    let mut a = home;
    let mut c = home;
    let mut out = Vec::with_capacity(cfg.frames);
    out.push(home);
    let m = &cfg.motion;
    let beta = if m.smoothing > 0.0 { 1.0 - (-cfg.dt / m.smoothing).exp() } else { 1.0 };
    for _ in 1..cfg.frames {
        let z: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        let next = Pose::new(
            ou_step(a.x, home.x, m.mean_reversion, m.sigma[0], cfg.dt, z[0]),
            ou_step(a.y, home.y, m.mean_reversion, m.sigma[1], cfg.dt, z[1]),
            ou_step(a.theta, home.theta, m.mean_reversion, m.sigma[2], cfg.dt, z[2]),
        );
        a = ws.clamp(next);
        c = Pose::new(
            c.x + beta * (a.x - c.x),
            c.y + beta * (a.y - c.y),
            c.theta + beta * (a.theta - c.theta),
        );
        out.push(c);
    }
    out
}

/// Runs one scripted episode: commands, delayed actuation, sensing and rendering.
pub fn generate_episode(cfg: &EpisodeConfig) -> Result<Episode, DatasetError> {
    cfg.validate()?;
    let sim = Simulator::new(cfg.scene.clone(), cfg.physics);
    let mut state = sim.build().map_err(|source| DatasetError::Sim { frame: 0, source })?;
    let layout = cfg.sensor_layout();
    let render_cfg = cfg.effective_render();
    let mut sensor_state = SensorState::new(cfg.seeds.sensors);
    let mut distractor = DistractorState::new(&render_cfg);
    let commands = command_sequence(cfg);
    let mut pending: VecDeque<Pose> = std::iter::repeat_n(commands[0], cfg.delay).collect();

    let mut ep = Episode {
        frames: Vec::with_capacity(cfg.frames),
        base: Vec::with_capacity(cfg.frames),
        applied: Vec::with_capacity(cfg.frames),
    };
    for (t, &emitted) in commands.iter().enumerate() {
        pending.push_back(emitted);
        let applied = pending.pop_front().expect("buffer holds at least the new command");
        if t > 0 {
            state = sim
                .step(&state, &applied, cfg.dt)
                .map_err(|source| DatasetError::Sim { frame: t, source })?;
        }
        let strains = sim.strain_profile(&state);
        let (readings, next_sensors) = layout
            .read(&sensor_state, &strains, cfg.dt)
            .map_err(|source| DatasetError::Sensor { frame: t, source })?;
        sensor_state = next_sensors;
        let (image, next_distractor) = render(&state, &cfg.scene, cfg.physics.skin_radius, &render_cfg, &distractor);
        distractor = next_distractor;
        ep.frames.push(Frame {
            t,
            action: emitted.to_array().map(|v| v as f32),
            sensors: readings.map(|v| v as f32),
            image,
            contact: state.peak_contact_force > 0.0,
        });
        ep.base.push(state.base);
        ep.applied.push(applied);
    }
    Ok(ep)
}

/// Random object and peg placement for per-batch scenes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSampler {
    /// Inclusive range of movable objects drawn from the catalogue.
    pub objects: [usize; 2],
    /// Inclusive range of static pegs.
    pub pegs: [usize; 2],
    pub peg_radius: f64,
    pub region_min: Vec2,
    pub region_max: Vec2,
    /// Free gap kept around the rest finger and between shapes.
    pub clearance: f64,
}

impl Default for SceneSampler {
    fn default() -> Self {
        Self {
            objects: [0, 0],
            pegs: [0, 0],
            peg_radius: 0.008,
            region_min: Vec2::new(-0.11, -0.05),
            region_max: Vec2::new(0.11, 0.09),
            clearance: 0.004,
        }
    }
}

impl SceneSampler {
    /// Preset with frequent finger-object contact.
    pub fn contact_rich() -> Self {
        Self {
            objects: [2, 4],
            pegs: [0, 1],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.objects[0] > self.objects[1] || self.pegs[0] > self.pegs[1] {
            return Err(DatasetError::Config("scene count ranges must be ordered".into()));
        }
        if self.objects[1] > OBJECT_CATALOGUE.len() {
            return Err(DatasetError::Config(format!(
                "at most {} objects are available",
                OBJECT_CATALOGUE.len()
            )));
        }
        let span = self.region_max - self.region_min;
        if !(span.x > 0.0 && span.y > 0.0 && self.peg_radius > 0.0 && self.clearance >= 0.0) {
            return Err(DatasetError::Config("scene region and peg radius must be positive".into()));
        }
        Ok(())
    }

    /// Draws a scene whose shapes clear the rest finger and each other.
    pub fn sample(&self, base: &SceneSpec, physics: &PhysicsParams, seed: u64) -> SceneSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut scene = base.clone();
        scene.seed = seed;
        let home = scene.workspace.center();
        let dir = home.heading();
        let root = home.position();
        let tip = root + dir * (physics.rest_length * (physics.nodes - 1) as f64);
        let mut placed: Vec<(Vec2, f64)> = scene
            .static_obstacles
            .iter()
            .filter_map(|s| match *s {
                Shape::Disc { center, radius } => Some((center, radius)),
                Shape::Box { .. } => None,
            })
            .chain(scene.movable_objects.iter().map(|o| (o.center, o.radius)))
            .collect();
        let mut place = |radius: f64, rng: &mut ChaCha8Rng| -> Option<Vec2> {
            for _ in 0..500 {
                let c = Vec2::new(
                    rng.random_range(self.region_min.x + radius..=self.region_max.x - radius),
                    rng.random_range(self.region_min.y + radius..=self.region_max.y - radius),
                );
                let finger_gap = radius + physics.skin_radius + self.clearance;
                if segment_distance_sq(c, root, tip) < finger_gap * finger_gap {
                    continue;
                }
                if placed
                    .iter()
                    .any(|&(o, r)| (c - o).norm() < radius + r + self.clearance)
                {
                    continue;
                }
                placed.push((c, radius));
                return Some(c);
            }
            None
        };

        let n_objects = rng.random_range(self.objects[0]..=self.objects[1]);
        let mut ids: Vec<usize> = (0..OBJECT_CATALOGUE.len()).collect();
        for i in (1..ids.len()).rev() {
            let j = rng.random_range(0..=i);
            ids.swap(i, j);
        }
        for &id in ids.iter().take(n_objects) {
            let (radius, mass) = OBJECT_CATALOGUE[id];
            if let Some(center) = place(radius, &mut rng) {
                scene.movable_objects.push(MovableObject {
                    center,
                    radius,
                    mass,
                    color_id: id as u8,
                });
            }
        }
        let n_pegs = rng.random_range(self.pegs[0]..=self.pegs[1]);
        for _ in 0..n_pegs {
            if let Some(center) = place(self.peg_radius, &mut rng) {
                scene.static_obstacles.push(Shape::Disc {
                    center,
                    radius: self.peg_radius,
                });
            }
        }
        scene
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub batches: usize,
    /// Trailing batches held out for testing.
    pub test_batches: usize,
    pub scene_seed: u64,
    pub normalize: bool,
    /// Draw a fresh scene for every batch; otherwise all batches share one.
    pub resample_scenes: bool,
    pub scenes: SceneSampler,
    pub episode: EpisodeConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            batches: 12,
            test_batches: 1,
            scene_seed: 0,
            normalize: true,
            resample_scenes: true,
            scenes: SceneSampler::default(),
            episode: EpisodeConfig::default(),
        }
    }
}

impl DatasetConfig {
    /// 77 batches of 5000 frames at 128x128.
    pub fn full_scale() -> Self {
        let mut cfg = Self {
            batches: 77,
            ..Self::default()
        };
        cfg.episode.frames = 5000;
        cfg.episode.render = RenderConfig::with_size(128);
        cfg
    }

    pub fn total_frames(&self) -> usize {
        self.batches * self.episode.frames
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.batches == 0 {
            return Err(DatasetError::Config("need at least one batch".into()));
        }
        if self.test_batches >= self.batches {
            return Err(DatasetError::Config("at least one batch must be used for training".into()));
        }
        self.scenes.validate()?;
        self.episode.validate()
    }

    /// Scene and seeds of batch `index`, derived from `scene_seed`.
    pub fn batch_episode(&self, index: usize) -> EpisodeConfig {
        let mut rng = ChaCha8Rng::seed_from_u64(self.scene_seed);
        // skip ahead: four draws per batch
        for _ in 0..4 * index {
            rng.random::<u64>();
        }
        let mut scene_seed: u64 = rng.random();
        if !self.resample_scenes {
            scene_seed = self.scene_seed;
        }
        let mut ep = self.episode.clone();
        ep.seeds = EpisodeSeeds {
            motion: rng.random(),
            sensors: rng.random(),
            distractor: rng.random(),
        };
        ep.scene = self.scenes.sample(&self.episode.scene, &self.episode.physics, scene_seed);
        ep
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchInfo {
    pub scene: SceneSpec,
    pub seeds: EpisodeSeeds,
    pub frames: usize,
    pub test: bool,
    /// Half-open frame ranges with contact.
    pub contact: Vec<[usize; 2]>,
}

/// Z-score statistics for the nine network inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub enabled: bool,
    pub mean: [f64; INPUT_DIM],
    pub std: [f64; INPUT_DIM],
}

impl NormStats {
    pub fn identity() -> Self {
        Self {
            enabled: false,
            mean: [0.0; INPUT_DIM],
            std: [1.0; INPUT_DIM],
        }
    }

    /// Population mean and standard deviation, two-pass.
    ///
    /// A channel that never changes gets its exact value as mean and a zero
    /// standard deviation.
    pub fn from_frames<'a>(frames: impl Iterator<Item = &'a Frame> + Clone, enabled: bool) -> Self {
        let mut n = 0usize;
        let mut sum = [0.0f64; INPUT_DIM];
        let mut lo = [f32::INFINITY; INPUT_DIM];
        let mut hi = [f32::NEG_INFINITY; INPUT_DIM];
        for f in frames.clone() {
            n += 1;
            for (i, v) in f.raw_input().into_iter().enumerate() {
                sum[i] += v as f64;
                lo[i] = lo[i].min(v);
                hi[i] = hi[i].max(v);
            }
        }
        let count = n.max(1) as f64;
        let constant: [bool; INPUT_DIM] = std::array::from_fn(|i| n > 0 && lo[i] == hi[i]);
        let mean: [f64; INPUT_DIM] =
            std::array::from_fn(|i| if constant[i] { lo[i] as f64 } else { sum[i] / count });
        let mut sq = [0.0f64; INPUT_DIM];
        for f in frames {
            for ((s, v), m) in sq.iter_mut().zip(f.raw_input()).zip(&mean) {
                let d = v as f64 - m;
                *s += d * d;
            }
        }
        let std = std::array::from_fn(|i| if constant[i] { 0.0 } else { (sq[i] / count).sqrt() });
        Self { enabled, mean, std }
    }

    /// Network-space value of channel `i` at its training mean.
    pub fn neutral(&self, i: usize) -> f32 {
        if self.enabled {
            0.0
        } else {
            self.mean[i] as f32
        }
    }

    /// Normalized network input; channels with zero spread map to 0.
    pub fn apply(&self, raw: &[f32; INPUT_DIM]) -> [f32; INPUT_DIM] {
        if !self.enabled {
            return *raw;
        }
        std::array::from_fn(|i| {
            if self.std[i] > 0.0 {
                ((raw[i] as f64 - self.mean[i]) / self.std[i]) as f32
            } else {
                0.0
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub config: DatasetConfig,
    pub width: usize,
    pub height: usize,
    pub layout: SensorLayout,
    pub batches: Vec<BatchInfo>,
    pub stats: NormStats,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub batches: Vec<Vec<Frame>>,
}

fn contact_intervals(frames: &[Frame]) -> Vec<[usize; 2]> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, f) in frames.iter().enumerate() {
        match (f.contact, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push([s, i]);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push([s, frames.len()]);
    }
    out
}

/// Generates every batch (in parallel) and computes training-split statistics.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Dataset, DatasetError> {
    cfg.validate()?;
    let episodes: Vec<(EpisodeConfig, Episode)> = (0..cfg.batches)
        .into_par_iter()
        .map(|i| {
            let ep_cfg = cfg.batch_episode(i);
            generate_episode(&ep_cfg).map(|ep| (ep_cfg, ep))
        })
        .collect::<Result<_, _>>()?;
    let train_count = cfg.batches - cfg.test_batches;
    let mut infos = Vec::with_capacity(cfg.batches);
    let mut batches = Vec::with_capacity(cfg.batches);
    for (i, (ep_cfg, ep)) in episodes.into_iter().enumerate() {
        infos.push(BatchInfo {
            scene: ep_cfg.scene,
            seeds: ep_cfg.seeds,
            frames: ep.frames.len(),
            test: i >= train_count,
            contact: contact_intervals(&ep.frames),
        });
        batches.push(ep.frames);
    }
    let stats = NormStats::from_frames(batches[..train_count].iter().flatten(), cfg.normalize);
    let r = &cfg.episode.render;
    Ok(Dataset {
        header: DatasetHeader {
            config: cfg.clone(),
            width: r.width,
            height: r.height,
            layout: cfg.episode.sensor_layout(),
            batches: infos,
            stats,
        },
        batches,
    })
}

impl From<crate::binio::Truncated> for DatasetError {
    fn from(t: crate::binio::Truncated) -> Self {
        DatasetError::Truncated {
            offset: t.offset,
            needed: t.needed,
        }
    }
}

impl Dataset {
    pub fn frame(&self, batch: usize, t: usize) -> &Frame {
        &self.batches[batch][t]
    }

    pub fn is_test(&self, batch: usize) -> bool {
        self.header.batches[batch].test
    }

    pub fn batch_indices(&self, split: Split) -> Vec<usize> {
        (0..self.batches.len())
            .filter(|&b| match split {
                Split::Train => !self.is_test(b),
                Split::Test => self.is_test(b),
                Split::All => true,
            })
            .collect()
    }

    pub fn frame_count(&self) -> usize {
        self.batches.iter().map(Vec::len).sum()
    }

    /// Normalized nine-vector of a frame.
    pub fn input(&self, batch: usize, t: usize) -> [f32; INPUT_DIM] {
        self.header.stats.apply(&self.frame(batch, t).raw_input())
    }

    /// Image of a frame as floats in [0, 1], HxWx3.
    pub fn image_floats(&self, batch: usize, t: usize) -> Vec<f32> {
        self.frame(batch, t).image.to_unit_floats()
    }

    /// Streams the file format into `out`.
    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<(), DatasetError> {
        let header = serde_json::to_vec(&self.header).map_err(|e| DatasetError::Header(e.to_string()))?;
        out.write_all(DATASET_MAGIC)?;
        out.write_all(&DATASET_VERSION.to_le_bytes())?;
        out.write_all(&(header.len() as u32).to_le_bytes())?;
        out.write_all(&header)?;
        let mut values = [0u8; 4 * INPUT_DIM];
        for f in self.batches.iter().flatten() {
            for (chunk, v) in values.chunks_exact_mut(4).zip(f.action.iter().chain(&f.sensors)) {
                chunk.copy_from_slice(&v.to_le_bytes());
            }
            out.write_all(&values)?;
            out.write_all(&f.image.rgb)?;
            out.write_all(&f.image.mask)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, DatasetError> {
        let px = self.header.width * self.header.height;
        let mut out = Vec::with_capacity(1024 + self.frame_count() * (4 * INPUT_DIM + 4 * px));
        self.write_to(&mut out)?;
        Ok(out)
    }

    /// SHA-256 of the serialized dataset, hex encoded.
    pub fn digest(&self) -> Result<String, DatasetError> {
        let mut hasher = HashWriter(Sha256::new());
        self.write_to(&mut hasher)?;
        Ok(hex::encode(hasher.0.finalize()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DatasetError> {
        let mut r = crate::binio::ByteReader::new(bytes);
        if &r.array::<4>()? != DATASET_MAGIC {
            return Err(DatasetError::Magic);
        }
        let version = r.u16()?;
        if version != DATASET_VERSION {
            return Err(DatasetError::Version {
                found: version,
                expected: DATASET_VERSION,
            });
        }
        let len = r.u32()? as usize;
        let header: DatasetHeader =
            serde_json::from_slice(r.take(len)?).map_err(|e| DatasetError::Header(e.to_string()))?;
        let (w, h) = (header.width, header.height);
        let mut batches = Vec::with_capacity(header.batches.len());
        for info in &header.batches {
            let mut frames = Vec::with_capacity(info.frames);
            for t in 0..info.frames {
                let mut vals = [0f32; INPUT_DIM];
                for v in vals.iter_mut() {
                    *v = r.f32()?;
                }
                let rgb = r.take(w * h * 3)?.to_vec();
                let mask = r.take(w * h)?.to_vec();
                frames.push(Frame {
                    t,
                    action: vals[..ACTION_DIM].try_into().expect("split"),
                    sensors: vals[ACTION_DIM..].try_into().expect("split"),
                    image: LabeledImage {
                        width: w,
                        height: h,
                        rgb,
                        mask,
                    },
                    contact: info.contact.iter().any(|c| t >= c[0] && t < c[1]),
                });
            }
            batches.push(frames);
        }
        if r.remaining() > 0 {
            return Err(DatasetError::Trailing(r.remaining()));
        }
        Ok(Self { header, batches })
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

struct HashWriter(Sha256);

impl Write for HashWriter {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    StaticSchema,
    SceneConditioned,
    Recurrent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    All,
}

/// One network sample; the target image is frame `t` of `batch`.
///
/// For scene-conditioned and recurrent tasks the conditioning image is frame 0
/// of the same batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct View {
    pub batch: usize,
    pub t: usize,
    pub input: [f32; INPUT_DIM],
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainingViews {
    Pairs(Vec<View>),
    Sequences(Vec<Vec<View>>),
}

impl TrainingViews {
    pub fn len(&self) -> usize {
        match self {
            TrainingViews::Pairs(v) => v.len(),
            TrainingViews::Sequences(s) => s.iter().map(Vec::len).sum(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn make_training_views(ds: &Dataset, task: Task, split: Split) -> TrainingViews {
    let seqs: Vec<Vec<View>> = ds
        .batch_indices(split)
        .into_iter()
        .map(|b| {
            (0..ds.batches[b].len())
                .map(|t| View {
                    batch: b,
                    t,
                    input: ds.input(b, t),
                })
                .collect()
        })
        .collect();
    match task {
        Task::StaticSchema | Task::SceneConditioned => TrainingViews::Pairs(seqs.into_iter().flatten().collect()),
        Task::Recurrent => TrainingViews::Sequences(seqs),
    }
}
