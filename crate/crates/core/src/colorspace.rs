//! Color-space conversion and contrast enhancement.
//!
//! RGB inputs are 8-bit sRGB. Lab uses the D65 reference white. Histogram
//! equalization and CLAHE quantize their [0, 1] input to 256 bins.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{ByteImage, ScalarField};
use crate::par;

const BINS: usize = 256;

/// Hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HsvPixel {
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

impl HsvPixel {
    pub fn from_rgb(rgb: [u8; 3]) -> Self {
        let [r, g, b] = rgb.map(|c| f64::from(c) / 255.0);
        let max = r.max(g).max(b);
        let min = r.min(g).min(b);
        let delta = max - min;
        let s = if max > 0.0 { delta / max } else { 0.0 };
        let h = if delta == 0.0 {
            0.0
        } else if max == r {
            60.0 * ((g - b) / delta).rem_euclid(6.0)
        } else if max == g {
            60.0 * ((b - r) / delta + 2.0)
        } else {
            60.0 * ((r - g) / delta + 4.0)
        };
        Self {
            h: if h >= 360.0 { 0.0 } else { h },
            s,
            v: max,
        }
    }

    pub fn to_rgb(self) -> [u8; 3] {
        let c = self.v * self.s;
        let sector = (self.h / 60.0).rem_euclid(6.0);
        let x = c * (1.0 - (sector.rem_euclid(2.0) - 1.0).abs());
        let (r, g, b) = match sector as u8 {
            0 => (c, x, 0.0),
            1 => (x, c, 0.0),
            2 => (0.0, c, x),
            3 => (0.0, x, c),
            4 => (x, 0.0, c),
            _ => (c, 0.0, x),
        };
        let m = self.v - c;
        [r, g, b].map(|ch| to_byte(ch + m))
    }
}

/// CIELAB coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabPixel {
    pub l_star: f64,
    pub a_star: f64,
    pub b_star: f64,
}

/// Reference white in XYZ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WhitePoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// CIE standard illuminant D65 (2 degree observer).
pub const D65: WhitePoint = WhitePoint {
    x: 0.95047,
    y: 1.0,
    z: 1.08883,
};

// linear sRGB -> XYZ, D65
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

const LAB_EPSILON: f64 = 216.0 / 24389.0;
const LAB_DELTA: f64 = 6.0 / 29.0;

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.003_130_8 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

fn to_byte(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn lab_f(t: f64) -> f64 {
    if t > LAB_EPSILON {
        t.cbrt()
    } else {
        t / (3.0 * LAB_DELTA * LAB_DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    if t > LAB_DELTA {
        t * t * t
    } else {
        3.0 * LAB_DELTA * LAB_DELTA * (t - 4.0 / 29.0)
    }
}

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let cof = |r0: usize, c0: usize, r1: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    [
        [cof(1, 1, 2, 2) / det, -cof(0, 1, 2, 2) / det, cof(0, 1, 1, 2) / det],
        [-cof(1, 0, 2, 2) / det, cof(0, 0, 2, 2) / det, -cof(0, 0, 1, 2) / det],
        [cof(1, 0, 2, 1) / det, -cof(0, 0, 2, 1) / det, cof(0, 0, 1, 1) / det],
    ]
}

fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|r| m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2])
}

impl LabPixel {
    pub fn from_rgb(rgb: [u8; 3]) -> Self {
        Self::from_rgb_with_white(rgb, D65)
    }

    pub fn from_rgb_with_white(rgb: [u8; 3], white: WhitePoint) -> Self {
        let linear = rgb.map(|c| srgb_to_linear(f64::from(c) / 255.0));
        let [x, y, z] = mat_vec(&RGB_TO_XYZ, linear);
        let (fx, fy, fz) = (lab_f(x / white.x), lab_f(y / white.y), lab_f(z / white.z));
        Self {
            l_star: 116.0 * fy - 16.0,
            a_star: 500.0 * (fx - fy),
            b_star: 200.0 * (fy - fz),
        }
    }

    pub fn to_rgb(self) -> [u8; 3] {
        self.to_rgb_with_white(D65)
    }

    pub fn to_rgb_with_white(self, white: WhitePoint) -> [u8; 3] {
        let fy = (self.l_star + 16.0) / 116.0;
        let fx = fy + self.a_star / 500.0;
        let fz = fy - self.b_star / 200.0;
        let xyz = [
            lab_f_inv(fx) * white.x,
            lab_f_inv(fy) * white.y,
            lab_f_inv(fz) * white.z,
        ];
        mat_vec(&invert3(&RGB_TO_XYZ), xyz).map(|c| to_byte(linear_to_srgb(c)))
    }
}

/// Chroma `C*ab` and hue angle `h*ab` in degrees `[0, 360)`.
/// The hue of an achromatic pixel is 0.
pub fn lab_chroma_hue(p: LabPixel) -> (f64, f64) {
    let chroma = p.a_star.hypot(p.b_star);
    if chroma == 0.0 {
        return (0.0, 0.0);
    }
    let mut hue = p.b_star.atan2(p.a_star).to_degrees();
    if hue < 0.0 {
        hue += 360.0;
    }
    if hue >= 360.0 {
        hue = 0.0;
    }
    (chroma, hue)
}

fn rgb_pixels(img: &ByteImage) -> Result<impl Iterator<Item = [u8; 3]> + '_> {
    img.require_channels(3)?;
    Ok(img.pixels().map(|p| [p[0], p[1], p[2]]))
}

/// Row-major HSV conversion of a 3-channel image.
pub fn rgb_to_hsv(img: &ByteImage) -> Result<Vec<HsvPixel>> {
    Ok(rgb_pixels(img)?.map(HsvPixel::from_rgb).collect())
}

/// Row-major CIELAB conversion of a 3-channel image.
pub fn rgb_to_lab(img: &ByteImage) -> Result<Vec<LabPixel>> {
    Ok(rgb_pixels(img)?.map(LabPixel::from_rgb).collect())
}

fn bin_of(v: f64) -> usize {
    (v.clamp(0.0, 1.0) * 255.0).round() as usize
}

/// Maps a 256-bin histogram to equalized output levels, or `None` when every
/// sample falls in one bin (the equalization formula is 0/0 there).
fn equalization_lut(hist: &[u64; BINS]) -> Option<[f64; BINS]> {
    let total: u64 = hist.iter().sum();
    let cdf_min = *hist.iter().find(|c| **c > 0)?;
    if cdf_min == total {
        return None;
    }
    let span = (total - cdf_min) as f64;
    let mut lut = [0.0; BINS];
    let mut cdf = 0u64;
    for (bin, count) in hist.iter().enumerate() {
        cdf += count;
        let level = if cdf < cdf_min {
            0.0
        } else {
            ((cdf - cdf_min) as f64 / span * 255.0).round()
        };
        lut[bin] = level / 255.0;
    }
    Some(lut)
}

/// Global histogram equalization. Constant inputs are returned unchanged.
pub fn hist_equalize(channel: &ScalarField) -> ScalarField {
    let mut hist = [0u64; BINS];
    for v in channel.values() {
        hist[bin_of(*v)] += 1;
    }
    match equalization_lut(&hist) {
        None => channel.clone(),
        Some(lut) => {
            let values = channel.values().iter().map(|v| lut[bin_of(*v)]).collect();
            ScalarField::unit(channel.width(), channel.height(), values).expect("lut in [0, 1]")
        }
    }
}

#[derive(Clone)]
enum TileMap {
    Identity,
    Lut(Box<[f64; BINS]>),
}

impl TileMap {
    #[inline]
    fn apply(&self, v: f64, bin: usize) -> f64 {
        match self {
            TileMap::Identity => v,
            TileMap::Lut(lut) => lut[bin],
        }
    }
}

/// Reflect-101 border index (`dcb|abcd|cba`).
fn reflect101(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Clips bins at `limit` and spreads the excess evenly, leftovers going to
/// evenly spaced bins starting at bin 0.
fn clip_histogram(hist: &mut [u64; BINS], limit: u64) {
    let mut excess = 0u64;
    for count in hist.iter_mut() {
        if *count > limit {
            excess += *count - limit;
            *count = limit;
        }
    }
    let batch = excess / BINS as u64;
    let mut residual = excess - batch * BINS as u64;
    for count in hist.iter_mut() {
        *count += batch;
    }
    if let Some(step) = (BINS as u64).checked_div(residual) {
        let step = step.max(1) as usize;
        let mut bin = 0;
        while bin < BINS && residual > 0 {
            hist[bin] += 1;
            residual -= 1;
            bin += step;
        }
    }
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Contrast-limited adaptive histogram equalization.
///
/// `clip` is expressed relative to a uniform histogram: a bin may hold at most
/// `max(1, clip * tile_area / 256)` samples. `f64::INFINITY` disables
/// clipping. Tiles that do not divide the image are completed with reflected
/// samples, and each output pixel bilinearly blends the four nearest tile
/// mappings.
pub fn clahe(channel: &ScalarField, clip: f64, tiles: (usize, usize)) -> Result<ScalarField> {
    if !(clip > 0.0) {
        return Err(Error::config(format!("CLAHE clip limit must be positive, got {clip}")));
    }
    let (tiles_x, tiles_y) = tiles;
    if tiles_x == 0 || tiles_y == 0 {
        return Err(Error::config("CLAHE tile grid must be at least 1x1"));
    }
    let (width, height) = channel.dims();
    let tile_w = width.div_ceil(tiles_x);
    let tile_h = height.div_ceil(tiles_y);
    let area = (tile_w * tile_h) as u64;
    let limit = if clip.is_finite() {
        Some(((clip * area as f64 / BINS as f64) as u64).max(1))
    } else {
        None
    };

    let bins: Vec<usize> = channel.values().iter().map(|v| bin_of(*v)).collect();
    let tile_ids: Vec<(usize, usize)> = (0..tiles_y)
        .flat_map(|ty| (0..tiles_x).map(move |tx| (tx, ty)))
        .collect();
    let maps: Vec<TileMap> = par::map(&tile_ids, |&(tx, ty)| {
        let mut hist = [0u64; BINS];
        for py in ty * tile_h..(ty + 1) * tile_h {
            let y = reflect101(py as isize, height);
            for px in tx * tile_w..(tx + 1) * tile_w {
                let x = reflect101(px as isize, width);
                hist[bins[y * width + x]] += 1;
            }
        }
        // a single occupied bin stays untouched, as in global equalization
        if hist.iter().filter(|c| **c > 0).count() <= 1 {
            return TileMap::Identity;
        }
        if let Some(limit) = limit {
            clip_histogram(&mut hist, limit);
        }
        match equalization_lut(&hist) {
            Some(lut) => TileMap::Lut(Box::new(lut)),
            None => TileMap::Identity,
        }
    });

    let neighbours = |pos: usize, tile: usize, count: usize| {
        let f = pos as f64 / tile as f64 - 0.5;
        let lo = f.floor();
        let t = f - lo;
        let lo = lo as isize;
        let a = lo.max(0) as usize;
        let b = ((lo + 1) as usize).min(count - 1);
        (a, b, t)
    };

    let src = channel.values();
    let mut out = vec![0.0; width * height];
    par::for_each_row(&mut out, width, |y, row| {
        let (ty1, ty2, ya) = neighbours(y, tile_h, tiles_y);
        for (x, slot) in row.iter_mut().enumerate() {
            let (tx1, tx2, xa) = neighbours(x, tile_w, tiles_x);
            let i = y * width + x;
            let (v, bin) = (src[i], bins[i]);
            let m = |tx: usize, ty: usize| maps[ty * tiles_x + tx].apply(v, bin);
            let top = lerp(m(tx1, ty1), m(tx2, ty1), xa);
            let bottom = lerp(m(tx1, ty2), m(tx2, ty2), xa);
            *slot = lerp(top, bottom, ya).clamp(0.0, 1.0);
        }
    });
    ScalarField::unit(width, height, out)
}

/// Brightness channel used by the color pre-processing step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BrightnessChannel {
    /// HSV value.
    V,
    /// CIELAB lightness, rescaled from [0, 100] to [0, 1].
    L,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Enhancement {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "HE")]
    He,
    #[serde(rename = "CLAHE")]
    Clahe,
}

pub const DEFAULT_CLAHE_CLIP: f64 = 2.0;
pub const DEFAULT_CLAHE_TILES: [usize; 2] = [8, 8];

/// Color pre-processing: brightness-channel extraction plus optional
/// contrast enhancement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PccConfig {
    pub channel: BrightnessChannel,
    #[serde(default = "default_enhancement")]
    pub enhancement: Enhancement,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clahe_clip: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clahe_tiles: Option<[usize; 2]>,
}

fn default_enhancement() -> Enhancement {
    Enhancement::None
}

impl PccConfig {
    pub fn new(channel: BrightnessChannel, enhancement: Enhancement) -> Self {
        let mut cfg = Self {
            channel,
            enhancement,
            clahe_clip: None,
            clahe_tiles: None,
        };
        cfg.fill_defaults();
        cfg
    }

    /// Fills the CLAHE block with defaults when CLAHE is selected.
    pub fn fill_defaults(&mut self) {
        if self.enhancement == Enhancement::Clahe {
            self.clahe_clip.get_or_insert(DEFAULT_CLAHE_CLIP);
            self.clahe_tiles.get_or_insert(DEFAULT_CLAHE_TILES);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let has_clahe_fields = self.clahe_clip.is_some() || self.clahe_tiles.is_some();
        if self.enhancement != Enhancement::Clahe && has_clahe_fields {
            return Err(Error::config(
                "clahe_clip/clahe_tiles are only valid with enhancement \"CLAHE\"",
            ));
        }
        if let Some(clip) = self.clahe_clip {
            if !(clip > 0.0) {
                return Err(Error::config(format!("clahe_clip must be positive, got {clip}")));
            }
        }
        if let Some([tx, ty]) = self.clahe_tiles {
            if tx == 0 || ty == 0 {
                return Err(Error::config("clahe_tiles entries must be at least 1"));
            }
        }
        Ok(())
    }
}

/// Extracts the configured brightness channel and applies the configured
/// enhancement.
pub fn preprocess_pcc(img: &ByteImage, cfg: &PccConfig) -> Result<ScalarField> {
    cfg.validate()?;
    let values: Vec<f64> = match cfg.channel {
        BrightnessChannel::V => rgb_pixels(img)?
            .map(|p| f64::from(p[0].max(p[1]).max(p[2])) / 255.0)
            .collect(),
        BrightnessChannel::L => rgb_pixels(img)?
            .map(|p| (LabPixel::from_rgb(p).l_star / 100.0).clamp(0.0, 1.0))
            .collect(),
    };
    let field = ScalarField::unit(img.width(), img.height(), values)?;
    match cfg.enhancement {
        Enhancement::None => Ok(field),
        Enhancement::He => Ok(hist_equalize(&field)),
        Enhancement::Clahe => {
            let clip = cfg.clahe_clip.unwrap_or(DEFAULT_CLAHE_CLIP);
            let [tx, ty] = cfg.clahe_tiles.unwrap_or(DEFAULT_CLAHE_TILES);
            clahe(&field, clip, (tx, ty))
        }
    }
}
