//! Random B-spline displacement surfaces.
//!
//! A 9x9 control net with jittered in-plane coordinates and random heights is
//! evaluated as a clamped cubic tensor-product surface. The evaluated points are
//! splatted onto the pixel lattice, so the surface height at pixel `(r, c)`
//! becomes the displacement at that pixel.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{DisplacementField, Grid, ScalarField};
use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum FieldError {
    #[error("basis index {index} out of range for {count} control points")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("parameter {0} outside the knot range")]
    ParameterOutOfRange(f64),
    #[error("invalid knot vector: {0}")]
    InvalidKnots(String),
    #[error("invalid grid configuration: {0}")]
    InvalidConfig(String),
    #[error("{empty} of {total} pixel bins empty before fill; increase oversampling")]
    SparseCoverage { empty: usize, total: usize },
    #[error("mirror extension expects a square field, got {0}x{1}")]
    MirrorSize(usize, usize),
}

/// Nondecreasing knot sequence of a B-spline of the given degree.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    knots: Vec<f64>,
    degree: usize,
}

impl KnotVector {
    pub fn new(knots: Vec<f64>, degree: usize) -> Result<Self, FieldError> {
        if knots.len() < 2 * (degree + 1) {
            return Err(FieldError::InvalidKnots(format!(
                "{} knots cannot carry a degree-{degree} basis",
                knots.len()
            )));
        }
        if knots.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(FieldError::InvalidKnots("knots must be nondecreasing".into()));
        }
        Ok(Self { knots, degree })
    }

    /// Clamped knots on `[0, 1]` with uniformly spaced interior knots.
    pub fn clamped_uniform(control_count: usize, degree: usize) -> Result<Self, FieldError> {
        if control_count <= degree {
            return Err(FieldError::InvalidKnots(format!(
                "{control_count} control points cannot carry degree {degree}"
            )));
        }
        let spans = control_count - degree;
        let mut knots = vec![0.0; degree + 1];
        knots.extend((1..spans).map(|i| i as f64 / spans as f64));
        knots.extend(std::iter::repeat(1.0).take(degree + 1));
        Self::new(knots, degree)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn control_count(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn first(&self) -> f64 {
        self.knots[0]
    }

    pub fn last(&self) -> f64 {
        *self.knots.last().expect("nonempty")
    }

    /// Degree-0 indicator. The half-open span is closed on the right for the
    /// last nonempty span so the basis is defined at the final knot.
    fn indicator(&self, i: usize, t: f64) -> f64 {
        let (a, b) = (self.knots[i], self.knots[i + 1]);
        let inside = (a <= t && t < b) || (t == self.last() && a < b && b == self.last());
        if inside {
            1.0
        } else {
            0.0
        }
    }

    fn recurse(&self, i: usize, p: usize, t: f64) -> f64 {
        if p == 0 {
            return self.indicator(i, t);
        }
        let k = &self.knots;
        let ratio = |num: f64, den: f64| if den == 0.0 { 0.0 } else { num / den };
        let left = ratio(t - k[i], k[i + p] - k[i]);
        let right = ratio(k[i + p + 1] - t, k[i + p + 1] - k[i + 1]);
        let mut acc = 0.0;
        if left != 0.0 {
            acc += left * self.recurse(i, p - 1, t);
        }
        if right != 0.0 {
            acc += right * self.recurse(i + 1, p - 1, t);
        }
        acc
    }

    /// `N_{i,p}(t)` by the Cox-de Boor recursion, with `0/0 := 0`.
    pub fn basis(&self, i: usize, p: usize, t: f64) -> Result<f64, FieldError> {
        let count = self.knots.len() - p - 1;
        if p > self.degree || i >= count {
            return Err(FieldError::IndexOutOfRange { index: i, count });
        }
        if !(self.first() <= t && t <= self.last()) {
            return Err(FieldError::ParameterOutOfRange(t));
        }
        Ok(self.recurse(i, p, t))
    }

    /// Index `s` of the knot span with `knots[s] <= t < knots[s + 1]`, clamped so
    /// that the last knot maps to the last nonempty span.
    fn span(&self, t: f64) -> usize {
        let n = self.control_count();
        if t >= self.knots[n] {
            return n - 1;
        }
        let (mut lo, mut hi) = (self.degree, n);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if t < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// The `degree + 1` basis values that may be nonzero at `t`, together with
    /// the index of the first one. Triangular-table evaluation; agrees with
    /// [`KnotVector::basis`] to rounding.
    pub fn nonzero_basis(&self, t: f64) -> (usize, Vec<f64>) {
        let p = self.degree;
        let s = self.span(t);
        let k = &self.knots;
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = t - k[s + 1 - j];
            right[j] = k[s + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let den = right[r + 1] + left[j - r];
                let tmp = if den == 0.0 { 0.0 } else { n[r] / den };
                n[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            n[j] = saved;
        }
        (s - p, n)
    }
}

/// Settings for drawing a random control net.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Control points per side.
    pub points: usize,
    pub degree: usize,
    /// `(width, height)` of the surface domain in pixels.
    pub domain: (usize, usize),
    /// Interior jitter as a fraction of half a cell; 1.0 means `+-cell/2`.
    pub jitter: f64,
    /// Heights are uniform in `[-z_max, z_max]`.
    pub z_max: f64,
    /// Parametric samples per output pixel along each axis.
    pub oversample: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            points: 9,
            degree: 3,
            domain: (256, 256),
            jitter: 1.0,
            z_max: 5.0,
            oversample: 4,
        }
    }
}

impl GridConfig {
    pub fn with_domain(size: usize) -> Self {
        Self {
            domain: (size, size),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        let bad = |m: String| Err(FieldError::InvalidConfig(m));
        if self.domain.0 < 2 || self.domain.1 < 2 {
            return bad(format!("domain {:?} smaller than 2x2", self.domain));
        }
        if self.points <= self.degree {
            return bad(format!("{} control points for degree {}", self.points, self.degree));
        }
        if !(0.0..=1.0).contains(&self.jitter) {
            return bad(format!("jitter {} outside [0, 1]", self.jitter));
        }
        if !(self.z_max >= 0.0 && self.z_max.is_finite()) {
            return bad(format!("z_max {}", self.z_max));
        }
        if self.oversample == 0 {
            return bad("oversample must be at least 1".into());
        }
        Ok(())
    }
}

/// Control net, row-major: `points[i * n + j]` is row `i` (y) and column `j` (x).
#[derive(Debug, Clone, PartialEq)]
pub struct ControlGrid {
    pub n: usize,
    pub points: Vec<[f64; 3]>,
    pub domain: (usize, usize),
}

impl ControlGrid {
    pub fn point(&self, i: usize, j: usize) -> [f64; 3] {
        self.points[i * self.n + j]
    }

    pub fn z_range(&self) -> (f64, f64) {
        self.points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[2]), hi.max(p[2])))
    }
}

pub fn sample_control_grid(seed: u64, cfg: &GridConfig) -> Result<ControlGrid, FieldError> {
    cfg.validate()?;
    let mut rng = seed::rng(seed);
    let n = cfg.points;
    let (w, h) = (cfg.domain.0 as f64, cfg.domain.1 as f64);
    let (cell_x, cell_y) = (w / (n - 1) as f64, h / (n - 1) as f64);
    let mut jitter = |cell: f64| {
        let amp = cfg.jitter * cell / 2.0;
        if amp > 0.0 {
            rng.gen_range(-amp..=amp)
        } else {
            0.0
        }
    };
    let mut points = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let x = match j {
                0 => 0.0,
                _ if j == n - 1 => w,
                _ => (j as f64 * cell_x + jitter(cell_x)).clamp(0.0, w),
            };
            let y = match i {
                0 => 0.0,
                _ if i == n - 1 => h,
                _ => (i as f64 * cell_y + jitter(cell_y)).clamp(0.0, h),
            };
            points.push([x, y, 0.0]);
        }
    }
    for p in &mut points {
        p[2] = if cfg.z_max > 0.0 {
            rng.gen_range(-cfg.z_max..=cfg.z_max)
        } else {
            0.0
        };
    }
    Ok(ControlGrid {
        n,
        points,
        domain: cfg.domain,
    })
}

/// Surface samples `(x, y, z)` on a regular parameter lattice.
#[derive(Debug, Clone)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
}

/// Evaluate `S(s, t) = sum_i sum_j N_i(t) N_j(s) P_ij` on an
/// `(oversample * H) x (oversample * W)` lattice spanning `[0, 1]^2`.
pub fn evaluate_surface(grid: &ControlGrid, degree: usize, oversample: usize) -> Result<PointCloud, FieldError> {
    let kv = KnotVector::clamped_uniform(grid.n, degree)?;
    let (w, h) = grid.domain;
    let (cols, rows) = (oversample.max(1) * w, oversample.max(1) * h);
    let lattice = |count: usize| -> Vec<(usize, Vec<f64>)> {
        (0..count)
            .map(|k| {
                let t = if count == 1 { 0.0 } else { k as f64 / (count - 1) as f64 };
                kv.nonzero_basis(t)
            })
            .collect()
    };
    let bs = lattice(cols);
    let bt = lattice(rows);
    let mut points = Vec::with_capacity(rows * cols);
    for (ti, nt) in &bt {
        for (sj, ns) in &bs {
            let mut acc = [0.0; 3];
            for (a, &wt) in nt.iter().enumerate() {
                let row = &grid.points[(ti + a) * grid.n..];
                for (b, &ws) in ns.iter().enumerate() {
                    let p = row[sj + b];
                    let wgt = wt * ws;
                    acc[0] += wgt * p[0];
                    acc[1] += wgt * p[1];
                    acc[2] += wgt * p[2];
                }
            }
            points.push(acc);
        }
    }
    Ok(PointCloud { points })
}

/// Per-pixel accumulation of splatted surface samples.
#[derive(Debug, Clone)]
pub struct SplatBins {
    pub height: usize,
    pub width: usize,
    sums: Vec<f64>,
    counts: Vec<u32>,
}

impl SplatBins {
    pub fn empty_count(&self) -> usize {
        self.counts.iter().filter(|&&c| c == 0).count()
    }
}

/// Drop every sample into the pixel bin `(floor(y), floor(x))`, clamped to the lattice.
pub fn splat(cloud: &PointCloud, resolution: (usize, usize)) -> SplatBins {
    let (h, w) = resolution;
    let mut sums = vec![0.0; h * w];
    let mut counts = vec![0u32; h * w];
    for p in &cloud.points {
        let c = (p[0].floor().max(0.0) as usize).min(w - 1);
        let r = (p[1].floor().max(0.0) as usize).min(h - 1);
        sums[r * w + c] += p[2];
        counts[r * w + c] += 1;
    }
    SplatBins {
        height: h,
        width: w,
        sums,
        counts,
    }
}

/// Average the samples landing in each pixel and fill any empty pixel by
/// inverse-distance weighting of the nearest (at least three) filled pixels.
pub fn resample_to_pixels(cloud: &PointCloud, resolution: (usize, usize)) -> Result<ScalarField, FieldError> {
    let bins = splat(cloud, resolution);
    let (h, w) = resolution;
    let empty = bins.empty_count();
    if empty * 10 > h * w {
        return Err(FieldError::SparseCoverage { empty, total: h * w });
    }
    let mean: Vec<Option<f64>> = bins
        .sums
        .iter()
        .zip(&bins.counts)
        .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
        .collect();
    let mut out = Grid::new(h, w, 0.0);
    for r in 0..h {
        for c in 0..w {
            let v = match mean[r * w + c] {
                Some(v) => v,
                None => idw_fill(&mean, h, w, r, c),
            };
            out.set(r, c, v as f32);
        }
    }
    Ok(out)
}

fn idw_fill(mean: &[Option<f64>], h: usize, w: usize, r: usize, c: usize) -> f64 {
    let max_radius = h.max(w);
    for radius in 1..=max_radius {
        let (r0, r1) = (r.saturating_sub(radius), (r + radius).min(h - 1));
        let (c0, c1) = (c.saturating_sub(radius), (c + radius).min(w - 1));
        let mut found = 0;
        let (mut num, mut den) = (0.0, 0.0);
        for rr in r0..=r1 {
            for cc in c0..=c1 {
                if let Some(v) = mean[rr * w + cc] {
                    let d2 = (rr as f64 - r as f64).powi(2) + (cc as f64 - c as f64).powi(2);
                    num += v / d2;
                    den += 1.0 / d2;
                    found += 1;
                }
            }
        }
        if found >= 3 {
            return num / den;
        }
    }
    // fewer than three filled pixels in the whole lattice
    let filled: Vec<f64> = mean.iter().flatten().copied().collect();
    if filled.is_empty() {
        0.0
    } else {
        filled.iter().sum::<f64>() / filled.len() as f64
    }
}

/// One displacement channel from a control net.
pub fn surface_field(seed: u64, cfg: &GridConfig) -> Result<ScalarField, FieldError> {
    let grid = sample_control_grid(seed, cfg)?;
    let cloud = evaluate_surface(&grid, cfg.degree, cfg.oversample)?;
    resample_to_pixels(&cloud, (cfg.domain.1, cfg.domain.0))
}

/// Two independent surfaces, one per displacement direction.
pub fn make_displacement_field(seed: u64, cfg: &GridConfig) -> Result<DisplacementField, FieldError> {
    let u = surface_field(seed::mix(seed, 1), cfg)?;
    let v = surface_field(seed::mix(seed, 2), cfg)?;
    Ok(DisplacementField::new(u, v))
}

/// Symmetric reflection of an index into `[0, n)` (edge sample repeated).
fn reflect(k: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = k.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Embed an `n x n` field in the center of a `2n x 2n` one and continue it
/// outward by mirror reflection: `out[n/2 + i][n/2 + j] = in[i][j]`.
pub fn mirror_extend(field: &ScalarField) -> Result<ScalarField, FieldError> {
    let (h, w) = field.dims();
    if h != w || h == 0 {
        return Err(FieldError::MirrorSize(h, w));
    }
    let off = (h / 2) as isize;
    Ok(Grid::from_fn(2 * h, 2 * w, |r, c| {
        field.get(reflect(r as isize - off, h), reflect(c as isize - off, w))
    }))
}
