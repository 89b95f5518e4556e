//! Nearest-pixel rasterizer producing an RGB frame and a label mask.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{segment_distance_sq, Vec2};
use crate::sim::{SceneSpec, Shape, SimState};

pub const LABEL_BACKGROUND: u8 = 0;
pub const LABEL_FINGER: u8 = 1;
pub const LABEL_OBJECT_BASE: u8 = 2;
pub const LABEL_OBSTACLE: u8 = 254;
pub const LABEL_DISTRACTOR: u8 = 255;
/// Highest object index that still gets its own label.
pub const MAX_OBJECTS: usize = (LABEL_OBSTACLE - LABEL_OBJECT_BASE) as usize;

pub type Rgb = [u8; 3];

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("image must be at least 16x16, got {width}x{height}")]
    TooSmall { width: usize, height: usize },
    #[error("view box is empty or not finite")]
    ViewBox,
    #[error("palette colors must be pairwise distinct ({0})")]
    Palette(String),
    #[error("distractor settings are invalid: {0}")]
    Distractor(String),
    #[error("png encoding failed: {0}")]
    Png(#[from] png::EncodingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Palette {
    pub background: Rgb,
    pub finger: Rgb,
    pub obstacle: Rgb,
    pub distractor: Rgb,
    /// Indexed by `MovableObject::color_id` (wrapping).
    pub objects: Vec<Rgb>,
}

impl Default for Palette {
    fn default() -> Self {
        Self {
            background: [16, 16, 24],
            finger: [235, 200, 70],
            obstacle: [110, 110, 120],
            distractor: [210, 40, 210],
            objects: vec![
                [220, 60, 50],
                [60, 170, 80],
                [60, 110, 230],
                [240, 130, 30],
                [40, 200, 200],
                [150, 80, 200],
                [200, 200, 200],
                [130, 90, 40],
                [250, 150, 180],
                [120, 190, 30],
                [30, 80, 120],
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistractorConfig {
    pub enabled: bool,
    /// Blob radius in metres.
    pub radius: f64,
    /// Random-walk step deviation per frame, metres.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for DistractorConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            radius: 0.025,
            sigma: 0.012,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    pub view_min: Vec2,
    pub view_max: Vec2,
    pub palette: Palette,
    pub distractor: DistractorConfig,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            view_min: Vec2::new(-0.16, -0.18),
            view_max: Vec2::new(0.16, 0.14),
            palette: Palette::default(),
            distractor: DistractorConfig::default(),
        }
    }
}

impl RenderConfig {
    pub fn with_size(size: usize) -> Self {
        Self {
            width: size,
            height: size,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if self.width < 16 || self.height < 16 {
            return Err(RenderError::TooSmall {
                width: self.width,
                height: self.height,
            });
        }
        let span = self.view_max - self.view_min;
        if !(span.is_finite() && span.x > 0.0 && span.y > 0.0) {
            return Err(RenderError::ViewBox);
        }
        let p = &self.palette;
        if p.objects.is_empty() {
            return Err(RenderError::Palette("no object colors".into()));
        }
        let mut all = vec![p.background, p.finger, p.obstacle, p.distractor];
        all.extend(&p.objects);
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                if all[i] == all[j] {
                    return Err(RenderError::Palette(format!("entries {i} and {j} are both {:?}", all[i])));
                }
            }
        }
        let d = &self.distractor;
        if !(d.radius.is_finite() && d.radius >= 0.0 && d.sigma.is_finite() && d.sigma >= 0.0) {
            return Err(RenderError::Distractor("radius and sigma must be finite and nonnegative".into()));
        }
        Ok(())
    }

    /// Metres per pixel along x and y.
    pub fn pixel_size(&self) -> Vec2 {
        let span = self.view_max - self.view_min;
        Vec2::new(span.x / self.width as f64, span.y / self.height as f64)
    }

    /// World coordinates of the centre of pixel (row, col); row 0 is the top edge.
    pub fn pixel_center(&self, row: usize, col: usize) -> Vec2 {
        let s = self.pixel_size();
        Vec2::new(
            self.view_min.x + (col as f64 + 0.5) * s.x,
            self.view_max.y - (row as f64 + 0.5) * s.y,
        )
    }

    fn object_color(&self, color_id: u8) -> Rgb {
        let objs = &self.palette.objects;
        objs[color_id as usize % objs.len()]
    }
}

/// Seeded random walk for the visual distractor, independent of the scene.
#[derive(Clone, Debug, PartialEq)]
pub struct DistractorState {
    pub position: Vec2,
    rng: ChaCha8Rng,
}

impl DistractorState {
    /// Starts uniformly inside the view box.
    pub fn new(cfg: &RenderConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.distractor.seed);
        let (lo, hi) = (cfg.view_min, cfg.view_max);
        let position = Vec2::new(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y));
        Self { position, rng }
    }

    /// One random-walk step, reflected at the view box edges.
    pub fn advance(&self, cfg: &RenderConfig) -> Self {
        let mut next = self.clone();
        let sigma = cfg.distractor.sigma;
        if sigma > 0.0 {
            let n = Normal::new(0.0, sigma).expect("finite sigma");
            let step = Vec2::new(n.sample(&mut next.rng), n.sample(&mut next.rng));
            next.position = reflect(self.position + step, cfg.view_min, cfg.view_max);
        }
        next
    }
}

fn reflect(p: Vec2, lo: Vec2, hi: Vec2) -> Vec2 {
    let fold = |v: f64, a: f64, b: f64| {
        let w = b - a;
        let m = (v - a).rem_euclid(2.0 * w);
        if m > w {
            a + 2.0 * w - m
        } else {
            a + m
        }
    };
    Vec2::new(fold(p.x, lo.x, hi.x), fold(p.y, lo.y, hi.y))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledImage {
    pub width: usize,
    pub height: usize,
    /// Row-major, 3 bytes per pixel.
    pub rgb: Vec<u8>,
    pub mask: Vec<u8>,
}

impl LabeledImage {
    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        Self {
            width,
            height,
            rgb: color.iter().copied().cycle().take(width * height * 3).collect(),
            mask: vec![LABEL_BACKGROUND; width * height],
        }
    }

    pub fn pixel(&self, row: usize, col: usize) -> Rgb {
        let i = 3 * (row * self.width + col);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn label(&self, row: usize, col: usize) -> u8 {
        self.mask[row * self.width + col]
    }

    fn set(&mut self, idx: usize, color: Rgb, label: u8) {
        self.rgb[3 * idx..3 * idx + 3].copy_from_slice(&color);
        self.mask[idx] = label;
    }

    pub fn count_label(&self, label: u8) -> usize {
        self.mask.iter().filter(|&&m| m == label).count()
    }

    /// RGB bytes scaled into [0, 1].
    pub fn to_unit_floats(&self) -> Vec<f32> {
        self.rgb.iter().map(|&b| b as f32 / 255.0).collect()
    }

    pub fn write_png<W: Write>(&self, out: W) -> Result<(), RenderError> {
        write_rgb_png(out, self.width, self.height, &self.rgb)
    }

    pub fn save_png(&self, path: &Path) -> Result<(), RenderError> {
        let f = std::fs::File::create(path)?;
        self.write_png(std::io::BufWriter::new(f))
    }
}

/// 8-bit RGB PNG without alpha.
pub fn write_rgb_png<W: Write>(out: W, width: usize, height: usize, rgb: &[u8]) -> Result<(), RenderError> {
    let mut enc = png::Encoder::new(out, width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header()?;
    w.write_image_data(rgb)?;
    w.finish()?;
    Ok(())
}

/// Converts unit floats (any layout of HxWx3) back to bytes with rounding.
pub fn unit_floats_to_bytes(values: &[f32]) -> Vec<u8> {
    values
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

fn shape_contains(shape: &Shape, p: Vec2) -> bool {
    match *shape {
        Shape::Disc { center, radius } => (p - center).norm_sq() <= radius * radius,
        Shape::Box { min, max } => p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y,
    }
}

fn finger_contains(nodes: &[Vec2], radius: f64, p: Vec2) -> bool {
    let r2 = radius * radius;
    match nodes {
        [] => false,
        [only] => (p - *only).norm_sq() <= r2,
        _ => nodes.windows(2).any(|w| segment_distance_sq(p, w[0], w[1]) <= r2),
    }
}

/// Rasterizes one frame; also returns the distractor state for the next frame.
///
/// Draw order is background, obstacles, movable objects, finger, distractor.
/// The finger is the union of capsules of `skin_radius` around each segment.
pub fn render(
    state: &SimState,
    scene: &SceneSpec,
    skin_radius: f64,
    cfg: &RenderConfig,
    distractor: &DistractorState,
) -> (LabeledImage, DistractorState) {
    let mut img = LabeledImage::filled(cfg.width, cfg.height, cfg.palette.background);
    let nodes = &state.finger.positions;
    let blob = cfg.distractor.radius;
    for row in 0..cfg.height {
        for col in 0..cfg.width {
            let p = cfg.pixel_center(row, col);
            let idx = row * cfg.width + col;
            if scene.static_obstacles.iter().any(|s| shape_contains(s, p)) {
                img.set(idx, cfg.palette.obstacle, LABEL_OBSTACLE);
            }
            for (k, (obj, st)) in scene.movable_objects.iter().zip(&state.objects).enumerate().take(MAX_OBJECTS) {
                if (p - st.position).norm_sq() <= obj.radius * obj.radius {
                    img.set(idx, cfg.object_color(obj.color_id), LABEL_OBJECT_BASE + k as u8);
                }
            }
            if finger_contains(nodes, skin_radius, p) {
                img.set(idx, cfg.palette.finger, LABEL_FINGER);
            }
            if cfg.distractor.enabled && (p - distractor.position).norm_sq() <= blob * blob {
                img.set(idx, cfg.palette.distractor, LABEL_DISTRACTOR);
            }
        }
    }
    let next = if cfg.distractor.enabled {
        distractor.advance(cfg)
    } else {
        distractor.clone()
    };
    (img, next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{MovableObject, PhysicsParams, Simulator};

    fn sim_with(scene: SceneSpec) -> (Simulator, SimState) {
        let sim = Simulator::new(scene, PhysicsParams::default());
        let s = sim.build().unwrap();
        (sim, s)
    }

    #[test]
    fn default_config_is_valid() {
        RenderConfig::default().validate().unwrap();
        RenderConfig::with_size(128).validate().unwrap();
    }

    #[test]
    fn rejects_small_images_and_duplicate_colors() {
        assert!(matches!(RenderConfig::with_size(8).validate(), Err(RenderError::TooSmall { .. })));
        let mut cfg = RenderConfig::default();
        cfg.palette.finger = cfg.palette.background;
        assert!(matches!(cfg.validate(), Err(RenderError::Palette(_))));
    }

    #[test]
    fn empty_view_is_background() {
        let (sim, mut s) = sim_with(SceneSpec::default());
        // move the finger out of view
        for p in s.finger.positions.iter_mut() {
            *p += Vec2::new(5.0, 5.0);
        }
        let cfg = RenderConfig::default();
        let (img, _) = render(&s, &sim.scene, sim.params.skin_radius, &cfg, &DistractorState::new(&cfg));
        assert!(img.mask.iter().all(|&m| m == LABEL_BACKGROUND));
        assert_eq!(img, LabeledImage::filled(64, 64, cfg.palette.background));
    }

    #[test]
    fn disc_area_matches_analytic_within_perimeter_band() {
        let cfg = RenderConfig::default();
        let px = cfg.pixel_size().x;
        for (i, radius) in [0.012, 0.02, 0.03].into_iter().enumerate() {
            let mut scene = SceneSpec::default();
            scene.movable_objects.push(MovableObject {
                center: Vec2::new(0.09 + 0.0013 * i as f64, 0.07),
                radius,
                mass: 0.05,
                color_id: 2,
            });
            let (sim, s) = sim_with(scene);
            let (img, _) = render(&s, &sim.scene, sim.params.skin_radius, &cfg, &DistractorState::new(&cfg));
            let r_px = radius / px;
            let analytic = std::f64::consts::PI * r_px * r_px;
            let tol = 4.0 * 2.0 * std::f64::consts::PI * r_px;
            let got = img.count_label(LABEL_OBJECT_BASE) as f64;
            assert!((got - analytic).abs() <= tol, "r={radius}: {got} vs {analytic}");
        }
    }

    #[test]
    fn distractor_walk_depends_only_on_seed() {
        let mut cfg = RenderConfig::default();
        cfg.distractor.enabled = true;
        cfg.distractor.seed = 7;
        let walk = |cfg: &RenderConfig| {
            let mut d = DistractorState::new(cfg);
            (0..50)
                .map(|_| {
                    d = d.advance(cfg);
                    d.position
                })
                .collect::<Vec<_>>()
        };
        let a = walk(&cfg);
        assert_eq!(a, walk(&cfg));
        assert!(a.iter().all(|p| p.x >= cfg.view_min.x && p.x <= cfg.view_max.x && p.y >= cfg.view_min.y && p.y <= cfg.view_max.y));
        cfg.distractor.seed = 8;
        assert_ne!(a, walk(&cfg));
    }

    #[test]
    fn distractor_overdraws_with_its_label() {
        let mut cfg = RenderConfig::default();
        cfg.distractor.enabled = true;
        let (sim, s) = sim_with(SceneSpec::default());
        let mut d = DistractorState::new(&cfg);
        d.position = Vec2::new(0.0, 0.0);
        let (img, next) = render(&s, &sim.scene, sim.params.skin_radius, &cfg, &d);
        assert!(img.count_label(LABEL_DISTRACTOR) > 0);
        assert_ne!(next.position, d.position);
        for (i, &m) in img.mask.iter().enumerate() {
            if m == LABEL_DISTRACTOR {
                assert_eq!(&img.rgb[3 * i..3 * i + 3], &cfg.palette.distractor);
            }
        }
    }

    #[test]
    fn png_roundtrip_header() {
        let img = LabeledImage::filled(16, 16, [1, 2, 3]);
        let mut buf = Vec::new();
        img.write_png(&mut buf).unwrap();
        assert_eq!(&buf[1..4], b"PNG");
        let dec = png::Decoder::new(std::io::Cursor::new(buf));
        let mut r = dec.read_info().unwrap();
        let mut out = vec![0; r.output_buffer_size().unwrap()];
        r.next_frame(&mut out).unwrap();
        assert_eq!(out, img.rgb);
    }

    #[test]
    fn reflection_stays_inside() {
        let lo = Vec2::new(0.0, 0.0);
        let hi = Vec2::new(1.0, 1.0);
        assert_eq!(reflect(Vec2::new(1.25, -0.5), lo, hi), Vec2::new(0.75, 0.5));
    }
}
