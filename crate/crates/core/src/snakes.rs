//! Morphological active contours on a binary level set.
//!
//! Both evolutions alternate an image-driven attachment step with a number of
//! curvature smoothing steps; the geodesic variant adds a gated balloon
//! (dilation or erosion) in front. The level set never leaves `{0, 1}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{BinaryMask, ScalarField};
use crate::morphology::{dilate, erode, CurvatureSmoother, StructuringElement};
use crate::par;

/// `true` = inside the evolving curve.
pub type LevelSet = BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Circle {
    pub x: f64,
    pub y: f64,
    pub r: f64,
}

/// Initial contour: the union of one or more filled circles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContourInit {
    pub circles: Vec<Circle>,
}

impl ContourInit {
    pub fn circle(x: f64, y: f64, r: f64) -> Self {
        Self {
            circles: vec![Circle { x, y, r }],
        }
    }
}

/// Filled circles; pixel `(x, y)` is inside iff `(x-cx)^2 + (y-cy)^2 <= r^2`.
pub fn init_levelset(init: &ContourInit, width: usize, height: usize) -> Result<LevelSet> {
    if init.circles.is_empty() {
        return Err(Error::config("contour initialization needs at least one circle"));
    }
    for c in &init.circles {
        let inside = c.x >= 0.0 && c.y >= 0.0 && c.x <= (width - 1) as f64 && c.y <= (height - 1) as f64;
        if !inside {
            return Err(Error::config(format!(
                "circle center ({}, {}) lies outside the {width}x{height} image",
                c.x, c.y
            )));
        }
        if !(c.r >= 0.0) {
            return Err(Error::config(format!("circle radius must be non-negative, got {}", c.r)));
        }
    }
    Ok(BinaryMask::from_fn(width, height, |x, y| {
        init.circles.iter().any(|c| {
            let (dx, dy) = (x as f64 - c.x, y as f64 - c.y);
            dx * dx + dy * dy <= c.r * c.r
        })
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GimageParams {
    /// Gaussian standard deviation in pixels.
    pub sigma: f64,
    /// Steepness of the edge response.
    pub alpha: f64,
}

impl Default for GimageParams {
    fn default() -> Self {
        Self {
            sigma: 3.0,
            alpha: 1000.0,
        }
    }
}

impl GimageParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::config(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Half-sample symmetric border (`cba|abcd|dcb`).
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma + 0.5) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

fn gaussian_blur(values: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let mut horizontal = vec![0.0; width * height];
    par::for_each_row(&mut horizontal, width, |y, row| {
        let src = &values[y * width..(y + 1) * width];
        for (x, out) in row.iter_mut().enumerate() {
            *out = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * src[reflect(x as isize + k as isize - radius, width)])
                .sum();
        }
    });
    let mut out = vec![0.0; width * height];
    par::for_each_row(&mut out, width, |y, row| {
        for (x, o) in row.iter_mut().enumerate() {
            *o = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * horizontal[reflect(y as isize + k as isize - radius, height) * width + x])
                .sum();
        }
    });
    out
}

/// Edge indicator `g = 1 / sqrt(1 + alpha * |grad(G_sigma * I)|)`.
///
/// The blur uses a Gaussian truncated at four standard deviations with
/// reflected borders; the gradient is a central difference on the blurred
/// image. Flat regions map to 1 and strong edges towards 0.
pub fn inverse_gaussian_gradient(img: &ScalarField, p: &GimageParams) -> Result<ScalarField> {
    p.validate()?;
    let (width, height) = img.dims();
    let blurred = gaussian_blur(img.values(), width, height, p.sigma);
    let at = |x: isize, y: isize| blurred[reflect(y, height) * width + reflect(x, width)];
    let mut g = vec![0.0; width * height];
    par::for_each_row(&mut g, width, |y, row| {
        let y = y as isize;
        for (x, out) in row.iter_mut().enumerate() {
            let x = x as isize;
            let gx = (at(x + 1, y) - at(x - 1, y)) / 2.0;
            let gy = (at(x, y + 1) - at(x, y - 1)) / 2.0;
            *out = 1.0 / (1.0 + p.alpha * gx.hypot(gy)).sqrt();
        }
    });
    ScalarField::unit(width, height, g)
}

/// Per-pixel partial derivatives of a plane.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
}

/// Central differences in the interior, one-sided differences on the border
/// (a single-pixel axis has zero derivative).
fn gradient(values: &[f64], width: usize, height: usize) -> GradientField {
    let diff = |get: &dyn Fn(usize) -> f64, i: usize, n: usize| -> f64 {
        if n == 1 {
            0.0
        } else if i == 0 {
            get(1) - get(0)
        } else if i == n - 1 {
            get(n - 1) - get(n - 2)
        } else {
            (get(i + 1) - get(i - 1)) / 2.0
        }
    };
    let mut dx = vec![0.0; width * height];
    let mut dy = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            dx[y * width + x] = diff(&|i| values[y * width + i], x, width);
            dy[y * width + x] = diff(&|j| values[j * width + x], y, height);
        }
    }
    GradientField { width, height, dx, dy }
}

/// Gradient of a real-valued field (used for the MGAC attraction term).
pub fn field_gradient(field: &ScalarField) -> GradientField {
    gradient(field.values(), field.width(), field.height())
}

fn levelset_gradient(u: &LevelSet) -> GradientField {
    let values: Vec<f64> = u.bits().iter().map(|b| f64::from(u8::from(*b))).collect();
    gradient(&values, u.width(), u.height())
}

fn check_smoothing(s: u32) -> Result<()> {
    if (1..=4).contains(&s) {
        Ok(())
    } else {
        Err(Error::config(format!("smoothing steps must be in 1..=4, got {s}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MacweParams {
    /// Weight of the inside-region fit.
    pub lambda1: f64,
    /// Weight of the outside-region fit.
    pub lambda2: f64,
    pub iterations: u32,
    pub smoothing: u32,
}

impl Default for MacweParams {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            iterations: 100,
            smoothing: 2,
        }
    }
}

impl MacweParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 > 0.0 && self.lambda2 > 0.0) {
            return Err(Error::config(format!(
                "lambda1 and lambda2 must be positive, got {} and {}",
                self.lambda1, self.lambda2
            )));
        }
        check_smoothing(self.smoothing)
    }
}

/// Region means `(inside, outside)` of `img` under `u`.
pub fn region_means(u: &LevelSet, img: &ScalarField) -> Result<(f64, f64)> {
    let (mut sum_in, mut n_in, mut sum_out, mut n_out) = (0.0, 0usize, 0.0, 0usize);
    for (inside, v) in u.bits().iter().zip(img.values()) {
        if *inside {
            sum_in += v;
            n_in += 1;
        } else {
            sum_out += v;
            n_out += 1;
        }
    }
    if n_out == 0 || n_in == 0 {
        return Err(Error::DegenerateRegion { all_inside: n_out == 0 });
    }
    Ok((sum_in / n_in as f64, sum_out / n_out as f64))
}

fn check_dims(u: &LevelSet, dims: (usize, usize)) -> Result<()> {
    if u.dims() == dims {
        Ok(())
    } else {
        Err(Error::Dimension {
            expected: u.dims(),
            got: dims,
        })
    }
}

/// One MACWE iteration: region-fit attachment on the contour band, then
/// `p.smoothing` curvature steps.
pub fn macwe_step(
    u: &LevelSet,
    img: &ScalarField,
    p: &MacweParams,
    smoother: &mut CurvatureSmoother,
) -> Result<LevelSet> {
    check_dims(u, img.dims())?;
    let (c_in, c_out) = region_means(u, img)?;
    let du = levelset_gradient(u);
    let mut next = u.clone();
    for (i, bit) in next.bits_mut().iter_mut().enumerate() {
        if du.dx[i] == 0.0 && du.dy[i] == 0.0 {
            continue;
        }
        let v = img.values()[i];
        let fit_in = p.lambda1 * (v - c_in) * (v - c_in);
        let fit_out = p.lambda2 * (v - c_out) * (v - c_out);
        if fit_in < fit_out {
            *bit = true;
        } else if fit_in > fit_out {
            *bit = false;
        }
    }
    Ok(smoother.smooth(next, p.smoothing))
}

/// Which balloon gate comparison to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    /// Balloon acts where `g > threshold / |balloon|`.
    #[default]
    Scaled,
    /// Balloon acts where `g > threshold`.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MgacParams {
    /// Balloon force; positive inflates, negative deflates, zero disables.
    pub balloon: f64,
    /// Stopping threshold on `g`.
    pub threshold: f64,
    pub iterations: u32,
    pub smoothing: u32,
    pub gate_mode: GateMode,
}

impl Default for MgacParams {
    fn default() -> Self {
        Self {
            balloon: 1.2,
            threshold: 0.3,
            iterations: 100,
            smoothing: 2,
            gate_mode: GateMode::Scaled,
        }
    }
}

impl MgacParams {
    pub fn validate(&self) -> Result<()> {
        if !self.balloon.is_finite() {
            return Err(Error::config("balloon must be finite"));
        }
        if !(self.threshold >= 0.0 && self.threshold.is_finite()) {
            return Err(Error::config(format!(
                "threshold must be a non-negative number, got {}",
                self.threshold
            )));
        }
        check_smoothing(self.smoothing)
    }

    /// Pixels where the balloon may act.
    pub fn balloon_gate(&self, g: &ScalarField) -> Vec<bool> {
        let cut = match self.gate_mode {
            GateMode::Scaled if self.balloon != 0.0 => self.threshold / self.balloon.abs(),
            _ => self.threshold,
        };
        g.values().iter().map(|v| *v > cut).collect()
    }

    /// Balloon sub-steps in the 1-based `iteration`: `floor(|v|)` every time
    /// plus one extra every `round(1 / frac(|v|))`-th iteration.
    pub fn balloon_repeats(&self, iteration: u32) -> u32 {
        let magnitude = self.balloon.abs();
        let whole = magnitude.floor();
        let frac = magnitude - whole;
        let mut reps = whole as u32;
        if frac > 1e-9 {
            let period = ((1.0 / frac) - 1e-9).ceil().max(1.0) as u32;
            if iteration.is_multiple_of(period) {
                reps += 1;
            }
        }
        reps
    }
}

/// Precomputed image terms for MGAC.
#[derive(Debug, Clone)]
pub struct MgacField {
    pub g: ScalarField,
    pub dg: GradientField,
}

impl MgacField {
    pub fn new(g: ScalarField) -> Self {
        let dg = field_gradient(&g);
        Self { g, dg }
    }
}

/// One MGAC iteration: gated balloon, edge attraction, curvature smoothing.
/// `iteration` is 1-based and drives the fractional balloon schedule.
pub fn mgac_step(
    u: &LevelSet,
    field: &MgacField,
    p: &MgacParams,
    iteration: u32,
    smoother: &mut CurvatureSmoother,
) -> Result<LevelSet> {
    check_dims(u, field.g.dims())?;
    let mut next = u.clone();
    if p.balloon != 0.0 {
        let gate = p.balloon_gate(&field.g);
        let square = StructuringElement::square(3);
        for _ in 0..p.balloon_repeats(iteration) {
            let aux = if p.balloon > 0.0 {
                dilate(&next, &square)
            } else {
                erode(&next, &square)
            };
            for ((bit, open), grown) in next.bits_mut().iter_mut().zip(&gate).zip(aux.bits()) {
                if *open {
                    *bit = *grown;
                }
            }
        }
    }

    let du = levelset_gradient(&next);
    let dg = &field.dg;
    for (i, bit) in next.bits_mut().iter_mut().enumerate() {
        let pull = dg.dx[i] * du.dx[i] + dg.dy[i] * du.dy[i];
        if pull > 0.0 {
            *bit = true;
        } else if pull < 0.0 {
            *bit = false;
        }
    }
    Ok(smoother.smooth(next, p.smoothing))
}

/// Result of a full contour evolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SnakeOutcome {
    pub mask: LevelSet,
    pub iterations_run: u32,
    /// The level set became (or started) all-inside or all-outside.
    pub degenerate: bool,
}

fn evolve(
    init: LevelSet,
    iterations: u32,
    mut step: impl FnMut(&LevelSet, u32) -> Result<LevelSet>,
) -> Result<SnakeOutcome> {
    let mut u = init;
    let mut unchanged = 0;
    let mut run = 0;
    for it in 1..=iterations {
        let next = match step(&u, it) {
            Ok(next) => next,
            Err(Error::DegenerateRegion { .. }) => {
                return Ok(SnakeOutcome {
                    mask: u,
                    iterations_run: run,
                    degenerate: true,
                })
            }
            Err(e) => return Err(e),
        };
        run = it;
        if next == u {
            unchanged += 1;
        } else {
            unchanged = 0;
        }
        u = next;
        if unchanged >= 2 {
            break;
        }
    }
    let degenerate = u.none() || u.all();
    Ok(SnakeOutcome {
        mask: u,
        iterations_run: run,
        degenerate,
    })
}

/// Morphological active contours without edges. Stops after
/// `p.iterations` steps or once two consecutive steps leave the mask
/// unchanged.
pub fn run_macwe(img: &ScalarField, init: &ContourInit, p: &MacweParams) -> Result<SnakeOutcome> {
    p.validate()?;
    let u0 = init_levelset(init, img.width(), img.height())?;
    let mut smoother = CurvatureSmoother::default();
    evolve(u0, p.iterations, |u, _| macwe_step(u, img, p, &mut smoother))
}

/// Morphological geodesic active contours driven by the inverse Gaussian
/// gradient of `img`.
pub fn run_mgac(
    img: &ScalarField,
    init: &ContourInit,
    p: &MgacParams,
    gp: &GimageParams,
) -> Result<SnakeOutcome> {
    p.validate()?;
    let field = MgacField::new(inverse_gaussian_gradient(img, gp)?);
    let u0 = init_levelset(init, img.width(), img.height())?;
    let mut smoother = CurvatureSmoother::default();
    evolve(u0, p.iterations, |u, it| mgac_step(u, &field, p, it, &mut smoother))
}
