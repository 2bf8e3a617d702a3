//! Deterministic synthetic scenes with exact ground truth.
//!
//! Randomness comes from xoshiro256** (Blackman and Vigna) seeded through
//! splitmix64, with Gaussian samples from the cosine branch of Box-Muller.
//! Both are spelled out here so any implementation following the same steps
//! reproduces the frames bit for bit.
//!
//! Frame `t` draws its noise from a generator seeded with
//! `seed + (t + 1) * 0x9E3779B97F4A7C15` (wrapping), and the background
//! texture from one seeded with `seed` itself, so frames can be generated
//! independently.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{save_image, save_mask, BinaryMask, ByteImage};
use crate::par;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// xoshiro256** 1.0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Xoshiro256StarStar {
    s: [u64; 4],
}

impl Xoshiro256StarStar {
    pub fn seed_from_u64(seed: u64) -> Self {
        let mut sm = seed;
        Self {
            s: std::array::from_fn(|_| splitmix64(&mut sm)),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.s;
        let result = s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in `[0, 1)` from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal: `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`.
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Static,
    MovingSquare,
    Disk,
    IlluminationRamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    /// Standard deviation of additive Gaussian noise, in [0, 1] units.
    pub noise_sigma: f64,
    pub scenario: Scenario,
}

impl SynthSpec {
    pub fn new(width: usize, height: usize, seed: u64, noise_sigma: f64, scenario: Scenario) -> Self {
        Self {
            width,
            height,
            seed,
            noise_sigma,
            scenario,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::config("synthetic scenes need positive dimensions"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config(format!(
                "noise_sigma must be a non-negative number, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFrame {
    pub frame: ByteImage,
    pub gt: BinaryMask,
}

pub const SQUARE_SIZE: usize = 10;
/// Color of the moving square.
pub const SQUARE_LEVEL: [f64; 3] = [0.92, 0.92, 0.92];
/// Peak relative brightness change of the illumination scenario.
pub const RAMP_AMPLITUDE: f64 = 0.2;
const TEXTURE_BLOCK: usize = 4;

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn frame_rng(seed: u64, t: usize) -> Xoshiro256StarStar {
    let stream = seed.wrapping_add((t as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    Xoshiro256StarStar::seed_from_u64(stream)
}

/// Static RGB background: 4x4 blocks of random gray level in [0.25, 0.65]
/// with a per-block tint of up to +-0.05 per channel and per-pixel grain of
/// up to +-0.03.
fn background_texture(spec: &SynthSpec) -> Vec<[f64; 3]> {
    let mut rng = Xoshiro256StarStar::seed_from_u64(spec.seed);
    let bw = spec.width.div_ceil(TEXTURE_BLOCK);
    let bh = spec.height.div_ceil(TEXTURE_BLOCK);
    let blocks: Vec<[f64; 3]> = (0..bw * bh)
        .map(|_| {
            let level = 0.25 + 0.4 * rng.next_f64();
            std::array::from_fn(|_| level + 0.1 * (rng.next_f64() - 0.5))
        })
        .collect();
    let mut out = Vec::with_capacity(spec.width * spec.height);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let block = blocks[(y / TEXTURE_BLOCK) * bw + x / TEXTURE_BLOCK];
            let grain = 0.06 * (rng.next_f64() - 0.5);
            out.push(block.map(|c| c + grain));
        }
    }
    out
}

fn square_mask(spec: &SynthSpec, t: usize) -> BinaryMask {
    let x0 = t % spec.width;
    let y0 = (spec.height - SQUARE_SIZE) / 2;
    BinaryMask::from_fn(spec.width, spec.height, |x, y| {
        let dx = (x + spec.width - x0) % spec.width;
        dx < SQUARE_SIZE && (y0..y0 + SQUARE_SIZE).contains(&y)
    })
}

fn noisy_rgb_frame(spec: &SynthSpec, t: usize, clean: impl Fn(usize) -> [f64; 3]) -> ByteImage {
    let mut rng = frame_rng(spec.seed, t);
    let n = spec.width * spec.height;
    let mut samples = Vec::with_capacity(n * 3);
    for i in 0..n {
        for c in clean(i) {
            let noise = if spec.noise_sigma > 0.0 {
                spec.noise_sigma * rng.next_gaussian()
            } else {
                0.0
            };
            samples.push(quantize(c + noise));
        }
    }
    ByteImage::new(spec.width, spec.height, 3, samples).expect("valid dimensions")
}

/// Generates `n_frames` labeled frames of a sequence scenario.
///
/// * `static`: the textured background only; ground truth empty.
/// * `moving_square`: a 10x10 square of [`SQUARE_LEVEL`] whose left edge sits
///   at column `t mod width` (wrapping), vertically centred; ground truth is
///   the square.
/// * `illumination_ramp`: the static scene scaled by
///   `1 + 0.2 sin(2 pi t / n_frames)`; ground truth empty.
/// * `disk`: independent noisy copies of [`gen_disk_image`] with radius
///   `min(width, height) / 4` and levels 0.8 / 0.2.
pub fn gen_sequence(spec: &SynthSpec, n_frames: usize) -> Result<Vec<LabeledFrame>> {
    spec.validate()?;
    if n_frames == 0 {
        return Err(Error::config("n_frames must be at least 1"));
    }
    if spec.scenario == Scenario::Disk {
        let radius = spec.width.min(spec.height) / 4;
        return (0..n_frames)
            .map(|t| disk_frame(spec, t, radius, 0.8, 0.2))
            .collect();
    }
    if spec.scenario == Scenario::MovingSquare && (spec.width < SQUARE_SIZE || spec.height < SQUARE_SIZE) {
        return Err(Error::config(format!(
            "moving_square needs at least {SQUARE_SIZE}x{SQUARE_SIZE} pixels"
        )));
    }
    let texture = background_texture(spec);
    let indices: Vec<usize> = (0..n_frames).collect();
    Ok(par::map(&indices, |&t| match spec.scenario {
        Scenario::Static => LabeledFrame {
            frame: noisy_rgb_frame(spec, t, |i| texture[i]),
            gt: BinaryMask::empty(spec.width, spec.height),
        },
        Scenario::IlluminationRamp => {
            let gain = 1.0 + RAMP_AMPLITUDE * (2.0 * PI * t as f64 / n_frames as f64).sin();
            LabeledFrame {
                frame: noisy_rgb_frame(spec, t, |i| texture[i].map(|c| c * gain)),
                gt: BinaryMask::empty(spec.width, spec.height),
            }
        }
        Scenario::MovingSquare => {
            let gt = square_mask(spec, t);
            let frame = noisy_rgb_frame(spec, t, |i| if gt.bits()[i] { SQUARE_LEVEL } else { texture[i] });
            LabeledFrame { frame, gt }
        }
        Scenario::Disk => unreachable!("handled above"),
    }))
}

fn disk_frame(spec: &SynthSpec, t: usize, radius: usize, fg_level: f64, bg_level: f64) -> Result<LabeledFrame> {
    spec.validate()?;
    let (cx, cy) = (spec.width / 2, spec.height / 2);
    if cx < radius || cy < radius || cx + radius >= spec.width || cy + radius >= spec.height {
        return Err(Error::config(format!(
            "disk of radius {radius} does not fit a {}x{} image",
            spec.width, spec.height
        )));
    }
    for level in [fg_level, bg_level] {
        if !(0.0..=1.0).contains(&level) {
            return Err(Error::config(format!("disk levels must lie in [0, 1], got {level}")));
        }
    }
    let r2 = (radius * radius) as i64;
    let gt = BinaryMask::from_fn(spec.width, spec.height, |x, y| {
        let (dx, dy) = (x as i64 - cx as i64, y as i64 - cy as i64);
        dx * dx + dy * dy <= r2
    });
    let mut rng = frame_rng(spec.seed, t);
    let mut samples = Vec::with_capacity(spec.width * spec.height * 3);
    for inside in gt.bits() {
        let clean = if *inside { fg_level } else { bg_level };
        let noise = if spec.noise_sigma > 0.0 {
            spec.noise_sigma * rng.next_gaussian()
        } else {
            0.0
        };
        let v = quantize(clean + noise);
        samples.extend([v, v, v]);
    }
    let frame = ByteImage::new(spec.width, spec.height, 3, samples)?;
    Ok(LabeledFrame { frame, gt })
}

/// A filled disk centred at `(width / 2, height / 2)` over a flat background,
/// plus seeded gray noise (identical in all three channels).
pub fn gen_disk_image(spec: &SynthSpec, radius: usize, fg_level: f64, bg_level: f64) -> Result<LabeledFrame> {
    disk_frame(spec, 0, radius, fg_level, bg_level)
}

/// File-level description of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub noise_sigma: f64,
    pub scenario: Scenario,
    #[serde(default = "one")]
    pub frames: usize,
    /// Disk radius; defaults to a quarter of the smaller side.
    #[serde(default)]
    pub radius: Option<usize>,
    #[serde(default = "default_fg")]
    pub fg_level: f64,
    #[serde(default = "default_bg")]
    pub bg_level: f64,
}

fn one() -> usize {
    1
}

fn default_fg() -> f64 {
    0.8
}

fn default_bg() -> f64 {
    0.2
}

impl SynthConfig {
    pub fn spec(&self) -> SynthSpec {
        SynthSpec::new(self.width, self.height, self.seed, self.noise_sigma, self.scenario)
    }

    pub fn generate(&self) -> Result<Vec<LabeledFrame>> {
        let spec = self.spec();
        if self.scenario == Scenario::Disk {
            let radius = self.radius.unwrap_or(self.width.min(self.height) / 4);
            if self.frames == 0 {
                return Err(Error::config("frames must be at least 1"));
            }
            (0..self.frames)
                .map(|t| disk_frame(&spec, t, radius, self.fg_level, self.bg_level))
                .collect()
        } else {
            gen_sequence(&spec, self.frames)
        }
    }
}

/// Reads a dataset description; errors name the offending field.
pub fn load_synth_config(path: impl AsRef<Path>) -> Result<SynthConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let at = e.path().to_string();
        Error::config(format!("{at}: {}", e.into_inner()))
    })
}

#[derive(Debug, Serialize)]
struct SynthManifest<'a> {
    generator: &'static str,
    version: &'static str,
    config: &'a SynthConfig,
    frames: Vec<String>,
    frames_dir: &'static str,
    gt_dir: &'static str,
}

/// Writes `frames/frame_NNNN.png`, `gt/frame_NNNN.png` and `manifest.json`
/// under `out_dir`.
pub fn write_dataset(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<Vec<LabeledFrame>> {
    let out_dir = out_dir.as_ref();
    let frames = cfg.generate()?;
    let (frame_dir, gt_dir) = (out_dir.join("frames"), out_dir.join("gt"));
    for dir in [&frame_dir, &gt_dir] {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut names = Vec::with_capacity(frames.len());
    for (t, f) in frames.iter().enumerate() {
        let name = format!("frame_{t:04}.png");
        save_image(&f.frame, frame_dir.join(&name))?;
        save_mask(&f.gt, gt_dir.join(&name))?;
        names.push(name);
    }
    let manifest = SynthManifest {
        generator: "xoshiro256** / splitmix64 / box-muller-cos",
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        frames: names,
        frames_dir: "frames",
        gt_dir: "gt",
    };
    let path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(frames)
}
