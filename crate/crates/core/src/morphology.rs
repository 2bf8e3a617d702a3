//! Binary morphology on [`BinaryMask`] grids.
//!
//! Dilation and erosion read pixels outside the grid as background. The
//! sup-inf / inf-sup line-segment operators instead skip samples that fall
//! off the grid (every segment contains its origin, so at least one sample
//! always remains); with that convention they are exact duals and keep
//! constant masks fixed.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::BinaryMask;
use crate::par;

pub type Offset = (i32, i32);

/// A finite set of `(dx, dy)` offsets probed around each pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuringElement {
    offsets: Vec<Offset>,
}

impl StructuringElement {
    pub fn new(offsets: impl IntoIterator<Item = Offset>) -> Result<Self> {
        let mut offsets: Vec<Offset> = offsets.into_iter().collect();
        offsets.sort_unstable();
        offsets.dedup();
        if offsets.is_empty() {
            return Err(Error::config("structuring element must not be empty"));
        }
        Ok(Self { offsets })
    }

    /// Full `size`x`size` square centred on the origin (`size` odd).
    pub fn square(size: u32) -> Self {
        assert!(size % 2 == 1, "square elements have odd size");
        let r = (size / 2) as i32;
        let offsets = (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)));
        Self::new(offsets).expect("non-empty")
    }

    /// The 3x3 plus shape.
    pub fn cross3() -> Self {
        Self::new([(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)]).expect("non-empty")
    }

    /// Resolves `"square3"`, `"square5"` or `"cross3"`.
    pub fn named(name: &str) -> Result<Self> {
        match name {
            "square3" => Ok(Self::square(3)),
            "square5" => Ok(Self::square(5)),
            "cross3" => Ok(Self::cross3()),
            other => Err(Error::config(format!(
                "unknown structuring element \"{other}\" (expected square3, square5, cross3 or an offset list)"
            ))),
        }
    }

    pub fn offsets(&self) -> &[Offset] {
        &self.offsets
    }

    pub fn contains_origin(&self) -> bool {
        self.offsets.contains(&(0, 0))
    }

    /// `hB = { h * o : o in B }`.
    pub fn scaled(&self, h: u32) -> Result<Self> {
        if h == 0 {
            return Err(Error::config("structuring element scale must be positive"));
        }
        let h = h as i32;
        Self::new(self.offsets.iter().map(|(dx, dy)| (dx * h, dy * h)))
    }

    /// `-B`.
    pub fn reflected(&self) -> Self {
        Self::new(self.offsets.iter().map(|(dx, dy)| (-dx, -dy))).expect("non-empty")
    }

    pub fn is_symmetric(&self) -> bool {
        self.reflected() == *self
    }
}

/// Serialized form of a structuring element: a name or explicit offsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ElementSpec {
    Named(String),
    Offsets(Vec<[i32; 2]>),
}

impl Default for ElementSpec {
    fn default() -> Self {
        ElementSpec::Named("square3".into())
    }
}

impl ElementSpec {
    pub fn resolve(&self) -> Result<StructuringElement> {
        match self {
            ElementSpec::Named(name) => StructuringElement::named(name),
            ElementSpec::Offsets(list) => StructuringElement::new(list.iter().map(|[x, y]| (*x, *y))),
        }
    }
}

impl fmt::Display for ElementSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ElementSpec::Named(name) => f.write_str(name),
            ElementSpec::Offsets(list) => write!(f, "{list:?}"),
        }
    }
}

fn map_pixels(u: &BinaryMask, f: impl Fn(isize, isize) -> bool + Sync + Send) -> BinaryMask {
    let (width, height) = u.dims();
    let mut bits = vec![false; width * height];
    par::for_each_row(&mut bits, width, |y, row| {
        for (x, out) in row.iter_mut().enumerate() {
            *out = f(x as isize, y as isize);
        }
    });
    BinaryMask::new(width, height, bits).expect("same dimensions")
}

/// `out(x) = max_{y in B} u(x - y)`.
pub fn dilate(u: &BinaryMask, element: &StructuringElement) -> BinaryMask {
    let offsets = element.offsets();
    map_pixels(u, |x, y| {
        offsets
            .iter()
            .any(|&(dx, dy)| u.get_or_false(x - dx as isize, y - dy as isize))
    })
}

/// `out(x) = min_{y in -B} u(x - y)`.
pub fn erode(u: &BinaryMask, element: &StructuringElement) -> BinaryMask {
    let offsets = element.offsets();
    map_pixels(u, |x, y| {
        offsets
            .iter()
            .all(|&(dx, dy)| u.get_or_false(x + dx as isize, y + dy as isize))
    })
}

/// Erosion followed by dilation; removes specks smaller than the element.
pub fn opening(u: &BinaryMask, element: &StructuringElement) -> BinaryMask {
    dilate(&erode(u, element), element)
}

/// Dilation followed by erosion; fills gaps smaller than the element.
pub fn closing(u: &BinaryMask, element: &StructuringElement) -> BinaryMask {
    erode(&dilate(u, element), element)
}

/// The four 3-pixel line segments through the origin: horizontal,
/// vertical and both diagonals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LineSegmentFamily {
    segments: [[Offset; 3]; 4],
}

impl Default for LineSegmentFamily {
    fn default() -> Self {
        Self {
            segments: [
                [(-1, 0), (0, 0), (1, 0)],
                [(0, -1), (0, 0), (0, 1)],
                [(-1, -1), (0, 0), (1, 1)],
                [(-1, 1), (0, 0), (1, -1)],
            ],
        }
    }
}

impl LineSegmentFamily {
    pub fn segments(&self) -> &[[Offset; 3]; 4] {
        &self.segments
    }
}

#[inline]
fn segment_samples<'a>(
    u: &'a BinaryMask,
    x: isize,
    y: isize,
    segment: &'a [Offset; 3],
    h: isize,
) -> impl Iterator<Item = bool> + 'a {
    let (w, hh) = (u.width() as isize, u.height() as isize);
    segment.iter().filter_map(move |&(dx, dy)| {
        let (sx, sy) = (x + dx as isize * h, y + dy as isize * h);
        (sx >= 0 && sy >= 0 && sx < w && sy < hh).then(|| u.get(sx as usize, sy as usize))
    })
}

/// `out(x) = sup_B inf_{y in x + hB} u(y)`.
pub fn sup_inf(u: &BinaryMask, family: &LineSegmentFamily, h: u32) -> BinaryMask {
    let h = h.max(1) as isize;
    map_pixels(u, |x, y| {
        family
            .segments()
            .iter()
            .any(|seg| segment_samples(u, x, y, seg, h).all(|b| b))
    })
}

/// `out(x) = inf_B sup_{y in x + hB} u(y)`.
pub fn inf_sup(u: &BinaryMask, family: &LineSegmentFamily, h: u32) -> BinaryMask {
    let h = h.max(1) as isize;
    map_pixels(u, |x, y| {
        family
            .segments()
            .iter()
            .all(|seg| segment_samples(u, x, y, seg, h).any(|b| b))
    })
}

/// Which composition the curvature operator applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SmoothingPhase {
    /// `SI o IS`: inf-sup first, then sup-inf.
    #[default]
    SupInfOfInfSup,
    /// `IS o SI`.
    InfSupOfSupInf,
}

impl SmoothingPhase {
    pub fn next(self) -> Self {
        match self {
            SmoothingPhase::SupInfOfInfSup => SmoothingPhase::InfSupOfSupInf,
            SmoothingPhase::InfSupOfSupInf => SmoothingPhase::SupInfOfInfSup,
        }
    }
}

/// Curvature morphological operator with unit segments.
pub fn curvature_op(u: &BinaryMask, phase: SmoothingPhase) -> BinaryMask {
    let family = LineSegmentFamily::default();
    match phase {
        SmoothingPhase::SupInfOfInfSup => sup_inf(&inf_sup(u, &family, 1), &family, 1),
        SmoothingPhase::InfSupOfSupInf => inf_sup(&sup_inf(u, &family, 1), &family, 1),
    }
}

/// Alternates the curvature operator phase across successive calls.
#[derive(Debug, Clone, Default)]
pub struct CurvatureSmoother {
    phase: SmoothingPhase,
}

impl CurvatureSmoother {
    pub fn new(phase: SmoothingPhase) -> Self {
        Self { phase }
    }

    pub fn phase(&self) -> SmoothingPhase {
        self.phase
    }

    /// One smoothing step; flips the phase for the next call.
    pub fn step(&mut self, u: &BinaryMask) -> BinaryMask {
        let out = curvature_op(u, self.phase);
        self.phase = self.phase.next();
        out
    }

    pub fn smooth(&mut self, u: BinaryMask, steps: u32) -> BinaryMask {
        (0..steps).fold(u, |acc, _| self.step(&acc))
    }
}
