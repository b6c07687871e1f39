//! Planar geometry, the log-distance trend features and the bi-square basis.

use smallvec::SmallVec;

use crate::error::{Error, Result};

/// Smallest BS distance fed to the logarithm of the trend, in meters.
pub const MIN_TREND_DISTANCE: f64 = 1.0;

/// A point of the plane, in meters (east, north).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Location {
    pub x: f64,
    pub y: f64,
}

impl Location {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// `self - offset`, the location an error vector `offset` points back to.
    pub fn shifted(&self, offset: [f64; 2]) -> Self {
        Self::new(self.x - offset[0], self.y - offset[1])
    }
}

pub fn distance(a: Location, b: Location) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Axis-aligned rectangle `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub min: Location,
    pub max: Location,
}

impl BoundingBox {
    pub fn new(min: Location, max: Location) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) || max.x <= min.x || max.y <= min.y {
            return Err(Error::InvalidInput(format!(
                "bounding box max ({}, {}) must strictly exceed min ({}, {})",
                max.x, max.y, min.x, min.y
            )));
        }
        Ok(Self { min, max })
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn contains(&self, p: Location) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

/// Trend regressors `(1, 10·log10 dist)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrendVector {
    pub one: f64,
    pub logdist: f64,
}

impl TrendVector {
    pub fn as_array(&self) -> [f64; 2] {
        [self.one, self.logdist]
    }

    pub fn dot(&self, alpha: [f64; 2]) -> f64 {
        self.one * alpha[0] + self.logdist * alpha[1]
    }
}

/// Trend features of a mobile at `x` served by a base station at `bs`.
/// The distance is clamped to [`MIN_TREND_DISTANCE`] before the logarithm.
pub fn trend_features(x: Location, bs: Location) -> TrendVector {
    let d = distance(x, bs).max(MIN_TREND_DISTANCE);
    TrendVector {
        one: 1.0,
        logdist: 10.0 * d.log10(),
    }
}

/// Bi-square function `[1 - (d/tau)^2]^2` on `d <= tau`, zero outside.
pub fn bisquare(x: Location, center: Location, tau: f64) -> f64 {
    bisquare_of_distance(distance(x, center), tau)
}

#[inline]
fn bisquare_of_distance(d: f64, tau: f64) -> f64 {
    if d <= tau {
        let q = d / tau;
        let w = 1.0 - q * q;
        w * w
    } else {
        0.0
    }
}

/// Nonzero entries `(center index, value)` of a basis vector.
pub type SparseBasis = SmallVec<[(usize, f64); 8]>;

#[derive(Debug, Clone, Copy, PartialEq)]
struct GridLayout {
    origin: Location,
    nx: usize,
    ny: usize,
}

/// A set of `r` bi-square functions sharing the radius `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    centers: Vec<Location>,
    tau: f64,
    grid: Option<GridLayout>,
}

impl BasisSet {
    /// Basis with arbitrary centers. Evaluation scans every center.
    pub fn from_centers(centers: Vec<Location>, tau: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::InvalidInput("basis needs at least one center".into()));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidInput(format!("basis radius must be positive, got {tau}")));
        }
        Ok(Self {
            centers,
            tau,
            grid: None,
        })
    }

    pub fn centers(&self) -> &[Location] {
        &self.centers
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Grid shape `(nx, ny)` when the centers were laid out by [`build_basis_grid`].
    pub fn grid_shape(&self) -> Option<(usize, usize)> {
        self.grid.map(|g| (g.nx, g.ny))
    }

    /// Nonzero components of `s(x)`, in increasing center index.
    pub fn evaluate_sparse(&self, x: Location) -> SparseBasis {
        let mut out = SparseBasis::new();
        match self.grid {
            Some(g) => {
                let tau = self.tau;
                let range = |coord: f64, origin: f64, count: usize| {
                    let lo = ((coord - origin - tau) / tau).ceil().max(0.0);
                    let hi = ((coord - origin + tau) / tau).floor();
                    if hi < 0.0 || lo > (count - 1) as f64 {
                        None
                    } else {
                        Some((lo as usize, (hi as usize).min(count - 1)))
                    }
                };
                let (Some((ix0, ix1)), Some((iy0, iy1))) =
                    (range(x.x, g.origin.x, g.nx), range(x.y, g.origin.y, g.ny))
                else {
                    return out;
                };
                for iy in iy0..=iy1 {
                    for ix in ix0..=ix1 {
                        let idx = iy * g.nx + ix;
                        let v = bisquare(x, self.centers[idx], tau);
                        if v > 0.0 {
                            out.push((idx, v));
                        }
                    }
                }
            }
            None => {
                for (idx, c) in self.centers.iter().enumerate() {
                    let v = bisquare(x, *c, self.tau);
                    if v > 0.0 {
                        out.push((idx, v));
                    }
                }
            }
        }
        out
    }

    /// Dense `s(x)`.
    pub fn basis_vector(&self, x: Location) -> Vec<f64> {
        let mut v = vec![0.0; self.len()];
        for (i, s) in self.evaluate_sparse(x) {
            v[i] = s;
        }
        v
    }

    /// Pairwise center distance matrix.
    pub fn center_distances(&self) -> nalgebra::DMatrix<f64> {
        let r = self.len();
        nalgebra::DMatrix::from_fn(r, r, |i, j| distance(self.centers[i], self.centers[j]))
    }
}

/// Centers of the `tau x tau` cells tiling `area` expanded by `tau` on every side.
///
/// Centers are numbered row-major (x fastest). The expansion keeps full basis
/// support at the edges of the area.
pub fn build_basis_grid(area: &BoundingBox, tau: f64) -> Result<BasisSet> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidInput(format!("basis radius must be positive, got {tau}")));
    }
    // Guard against 3.0000000001 cells from floating point division.
    let cells = |extent: f64| {
        let c = (extent + 2.0 * tau) / tau;
        let rounded = c.round();
        if (c - rounded).abs() < 1e-9 {
            rounded as usize
        } else {
            c.ceil() as usize
        }
    };
    let nx = cells(area.width());
    let ny = cells(area.height());
    let origin = Location::new(area.min.x - tau + 0.5 * tau, area.min.y - tau + 0.5 * tau);
    let mut centers = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            centers.push(Location::new(
                origin.x + ix as f64 * tau,
                origin.y + iy as f64 * tau,
            ));
        }
    }
    Ok(BasisSet {
        centers,
        tau,
        grid: Some(GridLayout { origin, nx, ny }),
    })
}

/// Dense `s(x)` for `basis`.
pub fn basis_vector(x: Location, basis: &BasisSet) -> Vec<f64> {
    basis.basis_vector(x)
}

/// The spatial design shared by every stage: basis functions and serving base station.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldLayout {
    pub basis: BasisSet,
    pub bs: Location,
}

impl FieldLayout {
    pub fn new(basis: BasisSet, bs: Location) -> Self {
        Self { basis, bs }
    }

    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    pub fn trend(&self, x: Location) -> [f64; 2] {
        trend_features(x, self.bs).as_array()
    }

    pub fn basis_sparse(&self, x: Location) -> SparseBasis {
        self.basis.evaluate_sparse(x)
    }
}
