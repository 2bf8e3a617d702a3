//! Pixel-wise adaptive Gaussian mixture background subtraction.
//!
//! Every pixel keeps a short list of isotropic Gaussian components sorted by
//! `w / sigma`. A new value is classified against the background components
//! (the shortest prefix whose cumulative weight exceeds `tau`) and then folded
//! into the mixture with an online K-means step. Weights carry a constant
//! negative prior (`c_t`), so components that stop receiving support decay
//! below zero and are dropped, which makes the component count adaptive.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{BinaryMask, ByteImage, ScalarField};
use crate::par;

pub use self::components::{connected_components, Labeling};

pub const MAX_CHANNELS: usize = 3;

/// Learning-rate policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LearningRate {
    Fixed(f64),
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AutoTag {
    #[serde(rename = "auto")]
    Auto,
}

impl LearningRate {
    pub const AUTO: LearningRate = LearningRate::Auto(AutoTag::Auto);

    /// Rate used for the `frames_seen`-th frame (1-based).
    pub fn at(&self, frames_seen: u64, history: u32) -> f64 {
        match *self {
            LearningRate::Fixed(alpha) => alpha,
            LearningRate::Auto(_) => 1.0 / frames_seen.clamp(1, u64::from(history.max(1))) as f64,
        }
    }
}

/// How the mean/variance step size of the matched component is derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoMode {
    /// `rho = alpha / w_matched`.
    #[default]
    WeightRatio,
    /// `rho = alpha * N(x | mu, sigma^2 I)`.
    Likelihood,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GmmParams {
    /// Number of frames the auto learning rate averages over.
    pub history: u32,
    /// Portion of the weight mass attributed to the background.
    pub tau: f64,
    pub alpha: LearningRate,
    /// Match radius in standard deviations.
    pub match_k: f64,
    pub k_max: usize,
    /// Variance given to freshly created components.
    pub sigma0_sq: f64,
    pub var_min: f64,
    pub var_max: f64,
    /// Complexity-reduction prior subtracted from every weight each frame.
    pub c_t: f64,
    pub rho_mode: RhoMode,
}

impl Default for GmmParams {
    fn default() -> Self {
        let sq = |v: f64| (v / 255.0) * (v / 255.0);
        Self {
            history: 250,
            tau: 0.7,
            alpha: LearningRate::AUTO,
            match_k: 2.5,
            k_max: 5,
            sigma0_sq: sq(15.0),
            var_min: sq(4.0),
            var_max: sq(75.0),
            c_t: 0.01,
            rho_mode: RhoMode::WeightRatio,
        }
    }
}

impl GmmParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::config(msg));
        if self.history == 0 {
            return fail("history must be at least 1".into());
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return fail(format!("tau must lie in (0, 1), got {}", self.tau));
        }
        if let LearningRate::Fixed(alpha) = self.alpha {
            if !(alpha > 0.0 && alpha < 1.0) {
                return fail(format!("alpha must lie in (0, 1), got {alpha}"));
            }
        }
        if !(self.match_k > 0.0) {
            return fail(format!("match_k must be positive, got {}", self.match_k));
        }
        if self.k_max < 1 {
            return fail("k_max must be at least 1".into());
        }
        if !(self.var_min > 0.0 && self.var_min <= self.sigma0_sq && self.sigma0_sq <= self.var_max) {
            return fail(format!(
                "variances must satisfy 0 < var_min <= sigma0_sq <= var_max, got {} / {} / {}",
                self.var_min, self.sigma0_sq, self.var_max
            ));
        }
        if !(self.c_t >= 0.0) {
            return fail(format!("c_t must be non-negative, got {}", self.c_t));
        }
        Ok(())
    }
}

/// One Gaussian: weight, per-channel mean and a variance shared by all channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: [f64; MAX_CHANNELS],
    pub variance: f64,
}

impl MixtureComponent {
    pub fn new(weight: f64, x: &[f64], variance: f64) -> Self {
        let mut mean = [0.0; MAX_CHANNELS];
        mean[..x.len()].copy_from_slice(x);
        Self {
            weight,
            mean,
            variance,
        }
    }

    fn dist2(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.mean)
            .map(|(a, m)| (a - m) * (a - m))
            .sum()
    }

    /// Sort key `w / sigma`.
    pub fn fitness(&self) -> f64 {
        self.weight / self.variance.sqrt()
    }
}

/// `true` iff `||x - mu||^2 <= match_k^2 * sigma^2`.
pub fn match_component(x: &[f64], c: &MixtureComponent, match_k: f64) -> bool {
    c.dist2(x) <= match_k * match_k * c.variance
}

/// Components of one pixel, sorted by descending `w / sigma`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PixelMixture {
    components: Vec<MixtureComponent>,
}

impl PixelMixture {
    /// Builds a mixture from components given in any order.
    pub fn from_components(mut components: Vec<MixtureComponent>) -> Self {
        sort_components(&mut components);
        Self { components }
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Number of leading components that make up the background model.
    pub fn background_count(&self, tau: f64) -> usize {
        let mut cumulative = 0.0;
        for (i, c) in self.components.iter().enumerate() {
            cumulative += c.weight;
            if cumulative > tau {
                return i + 1;
            }
        }
        self.components.len()
    }
}

fn sort_components(components: &mut [MixtureComponent]) {
    components.sort_by(|a, b| b.fitness().total_cmp(&a.fitness()));
}

fn gaussian_density(dist2: f64, variance: f64, dims: usize) -> f64 {
    (2.0 * std::f64::consts::PI * variance).powf(-(dims as f64) / 2.0) * (-dist2 / (2.0 * variance)).exp()
}

/// Folds one observation into a mixture.
pub fn update_pixel(m: &mut PixelMixture, x: &[f64], alpha: f64, params: &GmmParams) {
    let comps = &mut m.components;
    let matched = comps.iter().position(|c| match_component(x, c, params.match_k));

    for (i, c) in comps.iter_mut().enumerate() {
        let ownership = if Some(i) == matched { 1.0 } else { 0.0 };
        c.weight += alpha * (ownership - c.weight) - alpha * params.c_t;
    }

    match matched {
        Some(i) => {
            let c = &mut comps[i];
            let rho = match params.rho_mode {
                RhoMode::WeightRatio => alpha / c.weight,
                RhoMode::Likelihood => alpha * gaussian_density(c.dist2(x), c.variance, x.len()),
            }
            .min(1.0);
            let dist2 = c.dist2(x);
            for (mean, value) in c.mean.iter_mut().zip(x) {
                *mean += rho * (value - *mean);
            }
            c.variance = ((1.0 - rho) * c.variance + rho * dist2).clamp(params.var_min, params.var_max);
            comps.retain(|c| c.weight > 0.0);
        }
        None => {
            comps.retain(|c| c.weight > 0.0);
            let fresh = MixtureComponent::new(alpha, x, params.sigma0_sq);
            if comps.len() < params.k_max {
                comps.push(fresh);
            } else if let Some(last) = comps.last_mut() {
                *last = fresh;
            }
        }
    }

    let total: f64 = comps.iter().map(|c| c.weight).sum();
    for c in comps.iter_mut() {
        c.weight /= total;
    }
    sort_components(comps);
}

/// Foreground test against the background prefix of the mixture. An empty
/// mixture has no background and always reports foreground.
pub fn classify_pixel(m: &PixelMixture, x: &[f64], params: &GmmParams) -> bool {
    let b = m.background_count(params.tau);
    !m.components[..b]
        .iter()
        .any(|c| match_component(x, c, params.match_k))
}

/// A frame handed to [`BackgroundModel::process_frame`].
#[derive(Debug, Clone, Copy)]
pub enum FrameRef<'a> {
    Image(&'a ByteImage),
    Field(&'a ScalarField),
}

impl<'a> From<&'a ByteImage> for FrameRef<'a> {
    fn from(img: &'a ByteImage) -> Self {
        FrameRef::Image(img)
    }
}

impl<'a> From<&'a ScalarField> for FrameRef<'a> {
    fn from(field: &'a ScalarField) -> Self {
        FrameRef::Field(field)
    }
}

impl FrameRef<'_> {
    fn dims(&self) -> (usize, usize) {
        match self {
            FrameRef::Image(img) => img.dims(),
            FrameRef::Field(f) => f.dims(),
        }
    }

    fn channels(&self) -> usize {
        match self {
            FrameRef::Image(img) => img.channels(),
            FrameRef::Field(_) => 1,
        }
    }

    /// Channel values of pixel `i` scaled to [0, 1].
    fn pixel(&self, i: usize, out: &mut [f64; MAX_CHANNELS]) {
        match self {
            FrameRef::Image(img) => {
                let c = img.channels();
                for (o, s) in out.iter_mut().zip(&img.samples()[i * c..(i + 1) * c]) {
                    *o = f64::from(*s) / 255.0;
                }
            }
            FrameRef::Field(f) => out[0] = f.values()[i],
        }
    }
}

/// Per-pixel mixtures for one video.
#[derive(Debug, Clone)]
pub struct BackgroundModel {
    width: usize,
    height: usize,
    channels: usize,
    params: GmmParams,
    frames_seen: u64,
    mixtures: Vec<PixelMixture>,
}

impl BackgroundModel {
    pub fn new(width: usize, height: usize, channels: usize, params: GmmParams) -> Result<Self> {
        params.validate()?;
        if width == 0 || height == 0 {
            return Err(Error::config("model dimensions must be positive"));
        }
        if !(1..=MAX_CHANNELS).contains(&channels) {
            return Err(Error::config(format!(
                "channel count must be 1..={MAX_CHANNELS}, got {channels}"
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            params,
            frames_seen: 0,
            mixtures: vec![PixelMixture::default(); width * height],
        })
    }

    pub fn params(&self) -> &GmmParams {
        &self.params
    }

    pub fn frames_seen(&self) -> u64 {
        self.frames_seen
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn mixtures(&self) -> &[PixelMixture] {
        &self.mixtures
    }

    pub fn mixture(&self, x: usize, y: usize) -> &PixelMixture {
        &self.mixtures[y * self.width + x]
    }

    /// Classifies every pixel of `frame` against the current model, then
    /// updates the model with it.
    pub fn process_frame<'a>(&mut self, frame: impl Into<FrameRef<'a>>) -> Result<BinaryMask> {
        let frame = frame.into();
        if frame.dims() != (self.width, self.height) {
            return Err(Error::Dimension {
                expected: (self.width, self.height),
                got: frame.dims(),
            });
        }
        if frame.channels() != self.channels {
            return Err(Error::Channel {
                expected: self.channels,
                got: frame.channels(),
            });
        }
        self.frames_seen += 1;
        let alpha = self.params.alpha.at(self.frames_seen, self.params.history);
        let params = &self.params;
        let (width, channels) = (self.width, self.channels);
        let mut bits = vec![false; self.width * self.height];
        par::for_each_row_zip(&mut self.mixtures, &mut bits, width, |y, mixtures, row| {
            let mut x = [0.0; MAX_CHANNELS];
            for (col, (m, fg)) in mixtures.iter_mut().zip(row.iter_mut()).enumerate() {
                frame.pixel(y * width + col, &mut x);
                let x = &x[..channels];
                *fg = classify_pixel(m, x, params);
                update_pixel(m, x, alpha, params);
            }
        });
        BinaryMask::new(self.width, self.height, bits)
    }

    /// Checks the per-pixel invariants: weights positive and normalized,
    /// count within `1..=k_max` once a frame was seen, sorted by `w / sigma`,
    /// variances inside the clamps.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        for (i, m) in self.mixtures.iter().enumerate() {
            let comps = m.components();
            if comps.len() > self.params.k_max {
                return Err(format!("pixel {i}: {} components > k_max", comps.len()));
            }
            if self.frames_seen > 0 && comps.is_empty() {
                return Err(format!("pixel {i}: empty mixture after {} frames", self.frames_seen));
            }
            if comps.is_empty() {
                continue;
            }
            let total: f64 = comps.iter().map(|c| c.weight).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(format!("pixel {i}: weights sum to {total}"));
            }
            if let Some(c) = comps.iter().find(|c| c.weight <= 0.0) {
                return Err(format!("pixel {i}: non-positive weight {}", c.weight));
            }
            if comps.windows(2).any(|w| w[0].fitness() < w[1].fitness()) {
                return Err(format!("pixel {i}: components not sorted by w/sigma"));
            }
            if let Some(c) = comps.iter().find(|c| {
                !(c.variance >= self.params.var_min && c.variance <= self.params.var_max)
            }) {
                return Err(format!("pixel {i}: variance {} outside clamps", c.variance));
            }
        }
        Ok(())
    }
}

mod components {
    use crate::imgcore::BinaryMask;

    /// Disjoint-set forest over provisional labels.
    struct UnionFind {
        parent: Vec<u32>,
    }

    impl UnionFind {
        fn new() -> Self {
            Self { parent: vec![0] }
        }

        fn make(&mut self) -> u32 {
            let id = self.parent.len() as u32;
            self.parent.push(id);
            id
        }

        fn find(&mut self, mut a: u32) -> u32 {
            while self.parent[a as usize] != a {
                let grand = self.parent[self.parent[a as usize] as usize];
                self.parent[a as usize] = grand;
                a = grand;
            }
            a
        }

        fn union(&mut self, a: u32, b: u32) {
            let (ra, rb) = (self.find(a), self.find(b));
            if ra != rb {
                let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
                self.parent[hi as usize] = lo;
            }
        }
    }

    /// Component labels: 0 is background, components are `1..=count`
    /// numbered in raster order of first appearance.
    #[derive(Debug, Clone, PartialEq, Eq)]
    pub struct Labeling {
        pub width: usize,
        pub height: usize,
        pub labels: Vec<u32>,
        pub count: usize,
    }

    impl Labeling {
        pub fn label(&self, x: usize, y: usize) -> u32 {
            self.labels[y * self.width + x]
        }

        /// Pixel count of each component, indexed by `label - 1`.
        pub fn areas(&self) -> Vec<usize> {
            let mut areas = vec![0; self.count];
            for l in self.labels.iter().filter(|l| **l > 0) {
                areas[*l as usize - 1] += 1;
            }
            areas
        }

        pub fn to_mask(&self) -> BinaryMask {
            BinaryMask::new(self.width, self.height, self.labels.iter().map(|l| *l > 0).collect())
                .expect("same dimensions")
        }

        /// Drops components smaller than `min_area` pixels and renumbers the
        /// survivors in order.
        pub fn filter_min_area(&self, min_area: usize) -> Labeling {
            let areas = self.areas();
            let mut remap = vec![0u32; self.count + 1];
            let mut next = 0;
            for (i, area) in areas.iter().enumerate() {
                if *area >= min_area {
                    next += 1;
                    remap[i + 1] = next;
                }
            }
            Labeling {
                width: self.width,
                height: self.height,
                labels: self.labels.iter().map(|l| remap[*l as usize]).collect(),
                count: next as usize,
            }
        }
    }

    /// Two-pass 8-connected labeling.
    pub fn connected_components(mask: &BinaryMask) -> Labeling {
        let (width, height) = mask.dims();
        let mut provisional = vec![0u32; width * height];
        let mut sets = UnionFind::new();

        for y in 0..height {
            for x in 0..width {
                if !mask.get(x, y) {
                    continue;
                }
                // already-visited 8-neighbours: W, NW, N, NE
                let mut neighbours = [0u32; 4];
                let mut n = 0;
                let mut look = |dx: isize, dy: isize| {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx >= 0 && ny >= 0 && (nx as usize) < width {
                        let l = provisional[ny as usize * width + nx as usize];
                        if l > 0 {
                            neighbours[n] = l;
                            n += 1;
                        }
                    }
                };
                look(-1, 0);
                look(-1, -1);
                look(0, -1);
                look(1, -1);
                let label = match neighbours[..n].iter().min() {
                    None => sets.make(),
                    Some(&min) => {
                        for &other in &neighbours[..n] {
                            sets.union(min, other);
                        }
                        min
                    }
                };
                provisional[y * width + x] = label;
            }
        }

        let mut final_of_root = vec![0u32; sets.parent.len()];
        let mut count = 0u32;
        let labels = provisional
            .iter()
            .map(|&l| {
                if l == 0 {
                    return 0;
                }
                let root = sets.find(l) as usize;
                if final_of_root[root] == 0 {
                    count += 1;
                    final_of_root[root] = count;
                }
                final_of_root[root]
            })
            .collect();
        Labeling {
            width,
            height,
            labels,
            count: count as usize,
        }
    }
}
