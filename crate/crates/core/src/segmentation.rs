//! Iris localization: edge maps, circular Hough voting for the pupil and
//! limbus, parabolic Hough voting for the eyelids, and the noise mask.

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::imaging::{convolve2d, gradients_real, BinaryImage, GrayImage, Kernel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

impl Circle {
    pub fn new(cx: f64, cy: f64, r: f64) -> Self {
        Self { cx, cy, r }
    }

    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        (x - self.cx).hypot(y - self.cy)
    }

    /// Boundary point at angle `theta` (0 along +x, counter-clockwise on screen).
    pub fn point_at(&self, theta: f64) -> (f64, f64) {
        (self.cx + self.r * theta.cos(), self.cy - self.r * theta.sin())
    }

    /// True when `inner` lies strictly inside `self`.
    pub fn contains_circle(&self, inner: &Circle) -> bool {
        inner.r > 0.0 && inner.r < self.r && self.distance_to(inner.cx, inner.cy) + inner.r < self.r
    }
}

/// Eyelid model `(-(x-h) sin t + (y-k) cos t)^2 = a ((x-h) cos t + (y-k) sin t)`.
///
/// `theta` is kept in `[-pi/2, pi/2]`; a rotation by `pi` is the same curve
/// with `a` negated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Parabola {
    pub h: f64,
    pub k: f64,
    pub a: f64,
    pub theta: f64,
}

impl Parabola {
    pub fn new(h: f64, k: f64, a: f64, theta: f64) -> Result<Self> {
        if a == 0.0 || !a.is_finite() || !theta.is_finite() {
            return Err(Error::InvalidArgument("parabola needs finite nonzero a".into()));
        }
        let (mut a, mut theta) = (a, theta.rem_euclid(2.0 * PI));
        if theta > PI {
            theta -= 2.0 * PI;
        }
        if theta > PI / 2.0 {
            theta -= PI;
            a = -a;
        } else if theta < -PI / 2.0 {
            theta += PI;
            a = -a;
        }
        Ok(Self { h, k, a, theta })
    }

    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (x - self.h, y - self.k);
        (dx * c + dy * s, -dx * s + dy * c)
    }

    /// Implicit form `v^2 - a u`; zero on the curve, negative on the focus side.
    pub fn implicit(&self, x: f64, y: f64) -> f64 {
        let (u, v) = self.local(x, y);
        v * v - self.a * u
    }

    /// First-order distance estimate `|F| / |grad F|`.
    pub fn approx_distance(&self, x: f64, y: f64) -> f64 {
        let (u, v) = self.local(x, y);
        let f = v * v - self.a * u;
        f.abs() / (4.0 * v * v + self.a * self.a).sqrt()
    }

    /// Curve point for the local axis coordinate `v`.
    pub fn point_at(&self, v: f64) -> (f64, f64) {
        let u = v * v / self.a;
        let (s, c) = self.theta.sin_cos();
        (self.h + u * c - v * s, self.k + u * s + v * c)
    }
}

/// Axis-aligned pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeBias {
    /// `|dI/dx|` only: picks up vertically oriented boundary arcs.
    VerticalEdges,
    /// `|dI/dy|` only: picks up horizontally oriented edges such as eyelids.
    HorizontalEdges,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMap {
    width: usize,
    height: usize,
    points: Vec<(u32, u32)>,
}

impl EdgeMap {
    /// Builds a map from arbitrary points; duplicates are dropped and order is
    /// normalized to row-major.
    pub fn from_points(width: usize, height: usize, points: impl IntoIterator<Item = (u32, u32)>) -> Result<Self> {
        let mut points: Vec<(u32, u32)> = points.into_iter().collect();
        if let Some(&(x, y)) = points.iter().find(|&&(x, y)| x as usize >= width || y as usize >= height) {
            return Err(Error::InvalidArgument(format!(
                "edge point ({x}, {y}) outside {width}x{height}"
            )));
        }
        points.sort_by_key(|&(x, y)| (y, x));
        points.dedup();
        Ok(Self { width, height, points })
    }

    pub fn points(&self) -> &[(u32, u32)] {
        &self.points
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn filtered(&self, mut keep: impl FnMut(u32, u32) -> bool) -> Self {
        Self {
            width: self.width,
            height: self.height,
            points: self.points.iter().copied().filter(|&(x, y)| keep(x, y)).collect(),
        }
    }
}

/// Thresholded, thinned gradient-magnitude map after 5x5 Gaussian smoothing
/// (sigma 1).
///
/// Thinning keeps a pixel only if its magnitude is a local maximum along the
/// gradient direction (ties resolved toward the later pixel).
pub fn edge_map(img: &GrayImage, bias: EdgeBias, grad_threshold: f64) -> Result<EdgeMap> {
    let (w, h) = (img.width(), img.height());
    if w < 5 || h < 5 {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            min_width: 5,
            min_height: 5,
        });
    }
    if !(grad_threshold > 0.0) {
        return Err(Error::InvalidArgument("gradient threshold must be positive".into()));
    }
    let smooth = convolve2d(img, &Kernel::gaussian(5, 1.0)?)?;
    let (gx, gy) = gradients_real(&smooth)?;
    let (gx, gy) = (gx.values(), gy.values());
    let mag: Vec<f64> = match bias {
        EdgeBias::VerticalEdges => gx.iter().map(|v| v.abs()).collect(),
        EdgeBias::HorizontalEdges => gy.iter().map(|v| v.abs()).collect(),
        EdgeBias::None => gx.iter().zip(gy).map(|(a, b)| a.hypot(*b)).collect(),
    };
    let mut points = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let m = mag[i];
            if m < grad_threshold {
                continue;
            }
            let (dx, dy): (isize, isize) = match bias {
                EdgeBias::VerticalEdges => (1, 0),
                EdgeBias::HorizontalEdges => (0, 1),
                EdgeBias::None => {
                    let angle = gy[i].atan2(gx[i]).rem_euclid(PI);
                    match ((angle + PI / 8.0) / (PI / 4.0)) as usize % 4 {
                        0 => (1, 0),
                        1 => (1, 1),
                        2 => (0, 1),
                        _ => (-1, 1),
                    }
                }
            };
            let at = |ox: isize, oy: isize| -> f64 {
                let nx = x as isize + ox;
                let ny = y as isize + oy;
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    0.0
                } else {
                    mag[ny as usize * w + nx as usize]
                }
            };
            if m >= at(-dx, -dy) && m > at(dx, dy) {
                points.push((x as u32, y as u32));
            }
        }
    }
    Ok(EdgeMap { width: w, height: h, points })
}

/// Integer offsets whose length rounds to `r`.
fn ring_offsets(r: u32) -> Vec<(i32, i32)> {
    let r = r as i64;
    let lo = (2 * r - 1).pow(2);
    let hi = (2 * r + 1).pow(2);
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            let d = 4 * (dx * dx + dy * dy);
            if d >= lo && d < hi {
                out.push((dx as i32, dy as i32));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct CenterWindow {
    x0: i64,
    y0: i64,
    x1: i64, // inclusive
    y1: i64,
    around: Option<(f64, f64, f64)>,
}

/// Hough peak with its support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CirclePeak {
    pub circle: Circle,
    pub votes: u32,
    /// Number of accumulator offsets on the discrete circle of this radius.
    pub ring_len: u32,
}

fn hough_circle(edges: &EdgeMap, r_min: u32, r_max: u32, window: CenterWindow) -> Result<CirclePeak> {
    if edges.is_empty() {
        return Err(Error::EmptyEdgeMap);
    }
    if r_min == 0 || r_min >= r_max {
        return Err(Error::InvalidArgument(format!(
            "radius range must satisfy 0 < r_min < r_max, got [{r_min}, {r_max}]"
        )));
    }
    let ww = (window.x1 - window.x0 + 1).max(0) as usize;
    let wh = (window.y1 - window.y0 + 1).max(0) as usize;
    if ww == 0 || wh == 0 {
        return Err(Error::InvalidArgument("empty center window".into()));
    }
    let allowed: Vec<bool> = (0..ww * wh)
        .map(|i| match window.around {
            Some((cx, cy, max_off)) => {
                let x = window.x0 + (i % ww) as i64;
                let y = window.y0 + (i / ww) as i64;
                (x as f64 - cx).hypot(y as f64 - cy) <= max_off
            }
            None => true,
        })
        .collect();
    let mut acc = vec![0u16; ww * wh];
    let mut best: Option<(u32, u32, u32, i64, i64)> = None; // votes, ring, r, cx, cy
    for r in r_min..=r_max {
        let ring = ring_offsets(r);
        let ring_len = ring.len() as u32;
        acc.iter_mut().for_each(|v| *v = 0);
        for &(px, py) in edges.points() {
            for &(dx, dy) in &ring {
                let cx = px as i64 - dx as i64 - window.x0;
                let cy = py as i64 - dy as i64 - window.y0;
                if cx >= 0 && cy >= 0 && (cx as usize) < ww && (cy as usize) < wh {
                    let idx = cy as usize * ww + cx as usize;
                    acc[idx] = acc[idx].saturating_add(1);
                }
            }
        }
        for (idx, &votes) in acc.iter().enumerate() {
            if votes == 0 || !allowed[idx] {
                continue;
            }
            let votes = votes as u32;
            // score = votes / ring_len, compared exactly
            let better = match best {
                None => true,
                Some((bv, bring, ..)) => votes as u64 * bring as u64 > bv as u64 * ring_len as u64,
            };
            if better {
                let cx = window.x0 + (idx % ww) as i64;
                let cy = window.y0 + (idx / ww) as i64;
                best = Some((votes, ring_len, r, cx, cy));
            }
        }
    }
    match best {
        Some((votes, ring_len, r, cx, cy)) if votes >= 3 => Ok(CirclePeak {
            circle: Circle::new(cx as f64, cy as f64, r as f64),
            votes,
            ring_len,
        }),
        Some((votes, ..)) => Err(Error::NoCircleEvidence { votes }),
        None => Err(Error::NoCircleEvidence { votes: 0 }),
    }
}

/// Circular Hough transform over centers inside the edge map's image and
/// integer radii in `[r_min, r_max]`.
///
/// Each edge point votes for every center at distance `r` (rounded) from it.
/// The peak is the cell with the largest fraction of its discrete circle
/// supported, so small and large circles compete fairly. Ties go to the
/// smallest `r`, then smallest `(cy, cx)`.
pub fn circular_hough(edges: &EdgeMap, r_min: u32, r_max: u32) -> Result<Circle> {
    circular_hough_peak(edges, r_min, r_max).map(|p| p.circle)
}

pub fn circular_hough_peak(edges: &EdgeMap, r_min: u32, r_max: u32) -> Result<CirclePeak> {
    let window = CenterWindow {
        x0: 0,
        y0: 0,
        x1: edges.width() as i64 - 1,
        y1: edges.height() as i64 - 1,
        around: None,
    };
    hough_circle(edges, r_min, r_max, window)
}

/// As [`circular_hough`] but only centers within `max_offset` of `(cx, cy)`
/// are eligible.
pub fn circular_hough_near(
    edges: &EdgeMap,
    r_min: u32,
    r_max: u32,
    cx: f64,
    cy: f64,
    max_offset: f64,
) -> Result<Circle> {
    let clamp_x = |v: f64| (v as i64).clamp(0, edges.width() as i64 - 1);
    let clamp_y = |v: f64| (v as i64).clamp(0, edges.height() as i64 - 1);
    let window = CenterWindow {
        x0: clamp_x((cx - max_offset).floor()),
        y0: clamp_y((cy - max_offset).floor()),
        x1: clamp_x((cx + max_offset).ceil()),
        y1: clamp_y((cy + max_offset).ceil()),
        around: Some((cx, cy, max_offset)),
    };
    hough_circle(edges, r_min, r_max, window).map(|p| p.circle)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RadiusRange {
    pub min: u32,
    pub max: u32,
}

/// Quantization of the four-parameter eyelid accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct ParabolaSearch {
    /// Rotation angles tried, degrees.
    pub angles_deg: Vec<f64>,
    /// Signed curvature range; both ends share a sign. Sampled log-uniformly.
    pub a_range: (f64, f64),
    pub a_steps: usize,
    /// Peak-position cell size, pixels.
    pub cell: f64,
    /// Peak must collect at least this fraction of the region's edge points.
    pub min_vote_fraction: f64,
    /// Absolute vote floor.
    pub min_votes: u32,
}

impl ParabolaSearch {
    /// Axis near the x-axis: `theta` in {-10, -5, 0, 5, 10} degrees.
    pub fn near_horizontal_axis(a_range: (f64, f64)) -> Self {
        Self {
            angles_deg: vec![-10.0, -5.0, 0.0, 5.0, 10.0],
            a_range,
            a_steps: 20,
            cell: 4.0,
            min_vote_fraction: 0.05,
            min_votes: 3,
        }
    }

    /// Eyelid search: axis near vertical (`theta` = 90 +- 10 degrees).
    /// Positive `a` opens downward on screen (upper lid), negative upward.
    pub fn eyelid(a_range: (f64, f64)) -> Self {
        Self {
            angles_deg: vec![80.0, 85.0, 90.0, 95.0, 100.0],
            a_range,
            a_steps: 20,
            cell: 4.0,
            min_vote_fraction: 0.05,
            min_votes: 12,
        }
    }

    pub fn a_values(&self) -> Vec<f64> {
        let (lo, hi) = self.a_range;
        let sign = lo.signum();
        let (lo, hi) = (lo.abs().ln(), hi.abs().ln());
        if self.a_steps == 1 {
            return vec![sign * lo.exp()];
        }
        (0..self.a_steps)
            .map(|i| sign * (lo + (hi - lo) * i as f64 / (self.a_steps - 1) as f64).exp())
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.a_range;
        if lo == 0.0 || hi == 0.0 || lo.signum() != hi.signum() || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidArgument("curvature range must be nonzero with one sign".into()));
        }
        if self.a_steps == 0 || self.angles_deg.is_empty() || !(self.cell > 0.0) {
            return Err(Error::InvalidArgument("empty parabola search grid".into()));
        }
        Ok(())
    }
}

/// Parabolic Hough transform over `(h, k, a, theta)` with peaks restricted to
/// `region`. Only edge points inside the region vote. Returns `None` when no
/// peak clears the vote floor.
pub fn parabolic_hough(edges: &EdgeMap, region: Rect, search: &ParabolaSearch) -> Result<Option<Parabola>> {
    search.validate()?;
    let points: Vec<(f64, f64)> = edges
        .points()
        .iter()
        .map(|&(x, y)| (x as f64, y as f64))
        .filter(|&(x, y)| region.contains(x, y))
        .collect();
    if points.is_empty() || !(region.x1 > region.x0 && region.y1 > region.y0) {
        return Ok(None);
    }
    let nh = ((region.x1 - region.x0) / search.cell).ceil() as usize;
    let nk = ((region.y1 - region.y0) / search.cell).ceil() as usize;
    let a_values = search.a_values();
    let thetas: Vec<f64> = search.angles_deg.iter().map(|d| d.to_radians()).collect();
    let slice = nh * nk;
    let diag = (region.x1 - region.x0).hypot(region.y1 - region.y0);

    let mut acc = vec![0u32; slice];
    let mut stamp = vec![u32::MAX; slice];
    let mut best: Option<(u32, usize, usize, usize)> = None; // votes, theta, a, cell
    for (ti, &theta) in thetas.iter().enumerate() {
        let (s, c) = theta.sin_cos();
        for (ai, &a) in a_values.iter().enumerate() {
            acc.iter_mut().for_each(|v| *v = 0);
            stamp.iter_mut().for_each(|v| *v = u32::MAX);
            let v_max = diag.min((a.abs() * diag).sqrt());
            for (pi, &(px, py)) in points.iter().enumerate() {
                let mut v = -v_max;
                while v <= v_max {
                    let u = v * v / a;
                    let h = px - (u * c - v * s);
                    let k = py - (u * s + v * c);
                    if region.contains(h, k) {
                        let hi = ((h - region.x0) / search.cell) as usize;
                        let ki = ((k - region.y0) / search.cell) as usize;
                        if hi < nh && ki < nk {
                            let idx = ki * nh + hi;
                            if stamp[idx] != pi as u32 {
                                stamp[idx] = pi as u32;
                                acc[idx] += 1;
                            }
                        }
                    }
                    // keep the peak moving at most half a cell per step
                    let slope = 2.0 * v / a;
                    v += 0.5 * search.cell / (1.0 + slope * slope).sqrt();
                }
            }
            for (idx, &votes) in acc.iter().enumerate() {
                if votes > best.map_or(0, |b| b.0) {
                    best = Some((votes, ti, ai, idx));
                }
            }
        }
    }
    let Some((votes, ti, ai, idx)) = best else {
        return Ok(None);
    };
    let floor = (search.min_vote_fraction * points.len() as f64).ceil() as u32;
    if votes < floor.max(search.min_votes) {
        return Ok(None);
    }
    let h = region.x0 + ((idx % nh) as f64 + 0.5) * search.cell;
    let k = region.y0 + ((idx / nh) as f64 + 0.5) * search.cell;
    Parabola::new(h, k, a_values[ai], thetas[ti]).map(Some)
}

/// Tunables for [`segment`].
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationConfig {
    pub pupil_radius: RadiusRange,
    pub iris_radius: RadiusRange,
    pub grad_threshold: f64,
    /// Largest allowed distance between pupil and iris centers.
    pub max_center_offset: f64,
    pub specular_threshold: u8,
    /// Curvature magnitude range for eyelids, as multiples of the iris radius.
    /// `None` disables eyelid detection.
    pub eyelid_a_factor: Option<(f64, f64)>,
    /// Extra band masked on the iris side of a detected eyelid, pixels.
    pub eyelid_margin: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            pupil_radius: RadiusRange { min: 6, max: 70 },
            iris_radius: RadiusRange { min: 72, max: 96 },
            grad_threshold: 12.0,
            max_center_offset: 15.0,
            specular_threshold: 240,
            eyelid_a_factor: Some((1.5, 15.0)),
            eyelid_margin: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    pub pupil: Circle,
    pub iris: Circle,
    pub upper_eyelid: Option<Parabola>,
    pub lower_eyelid: Option<Parabola>,
    /// `true` marks an invalid pixel.
    pub noise_mask: BinaryImage,
}

impl SegmentationResult {
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if !self.iris.contains_circle(&self.pupil) {
            return Err(Error::InvalidGeometry(format!(
                "pupil {:?} not inside iris {:?}",
                self.pupil, self.iris
            )));
        }
        if self.noise_mask.width() != width || self.noise_mask.height() != height {
            return Err(Error::DimensionMismatch("noise mask differs from image size".into()));
        }
        Ok(())
    }
}

/// Pupil from the unbiased edge map, then iris from the vertical-edge map with
/// its center held near the pupil center.
pub fn locate_pupil_and_iris(img: &GrayImage, cfg: &SegmentationConfig) -> Result<(Circle, Circle)> {
    if cfg.pupil_radius.max >= cfg.iris_radius.min {
        return Err(Error::InvalidArgument(
            "pupil radius range must lie below the iris radius range".into(),
        ));
    }
    let edges = edge_map(img, EdgeBias::None, cfg.grad_threshold)?;
    let pupil = circular_hough(&edges, cfg.pupil_radius.min, cfg.pupil_radius.max)?;
    let vertical = edge_map(img, EdgeBias::VerticalEdges, cfg.grad_threshold)?;
    let iris = circular_hough_near(
        &vertical,
        cfg.iris_radius.min,
        cfg.iris_radius.max,
        pupil.cx,
        pupil.cy,
        cfg.max_center_offset,
    )?;
    if !iris.contains_circle(&pupil) {
        return Err(Error::InvalidGeometry(format!(
            "detected pupil {pupil:?} not inside iris {iris:?}"
        )));
    }
    Ok((pupil, iris))
}

/// Upper and lower eyelids from the horizontal-edge map, using only edge
/// points strictly inside the iris annulus.
pub fn detect_eyelids(
    img: &GrayImage,
    pupil: &Circle,
    iris: &Circle,
    cfg: &SegmentationConfig,
) -> Result<(Option<Parabola>, Option<Parabola>)> {
    let Some((lo, hi)) = cfg.eyelid_a_factor else {
        return Ok((None, None));
    };
    let edges = edge_map(img, EdgeBias::HorizontalEdges, cfg.grad_threshold)?;
    let inner = edges.filtered(|x, y| {
        let (x, y) = (x as f64, y as f64);
        pupil.distance_to(x, y) > pupil.r + 3.0 && iris.distance_to(x, y) < iris.r - 3.0
    });
    let upper_region = Rect {
        x0: iris.cx - iris.r,
        y0: iris.cy - iris.r,
        x1: iris.cx + iris.r,
        y1: pupil.cy,
    };
    let lower_region = Rect {
        x0: iris.cx - iris.r,
        y0: pupil.cy,
        x1: iris.cx + iris.r,
        y1: iris.cy + iris.r,
    };
    let upper = parabolic_hough(&inner, upper_region, &ParabolaSearch::eyelid((lo * iris.r, hi * iris.r)))?;
    let lower = parabolic_hough(&inner, lower_region, &ParabolaSearch::eyelid((-lo * iris.r, -hi * iris.r)))?;
    Ok((upper, lower))
}

/// Marks pixels outside the iris, inside the pupil, on the far side of an
/// eyelid (plus `eyelid_margin`), or at or above `specular_threshold`.
pub fn build_noise_mask(
    img: &GrayImage,
    pupil: &Circle,
    iris: &Circle,
    eyelids: &[Parabola],
    specular_threshold: u8,
    eyelid_margin: f64,
) -> Result<BinaryImage> {
    if !iris.contains_circle(pupil) {
        return Err(Error::InvalidGeometry(format!(
            "pupil {pupil:?} not inside iris {iris:?}"
        )));
    }
    let pupil_side: Vec<bool> = eyelids
        .iter()
        .map(|p| p.implicit(pupil.cx, pupil.cy) < 0.0)
        .collect();
    Ok(BinaryImage::from_fn(img.width(), img.height(), |x, y| {
        let (fx, fy) = (x as f64, y as f64);
        if iris.distance_to(fx, fy) > iris.r || pupil.distance_to(fx, fy) < pupil.r {
            return true;
        }
        if img.get(x, y) >= specular_threshold {
            return true;
        }
        eyelids.iter().zip(&pupil_side).any(|(p, &neg)| {
            let f = p.implicit(fx, fy);
            (f < 0.0) != neg || p.approx_distance(fx, fy) < eyelid_margin
        })
    }))
}

/// Full localization: circles, eyelids, noise mask.
pub fn segment(img: &GrayImage, cfg: &SegmentationConfig) -> Result<SegmentationResult> {
    let (pupil, iris) = locate_pupil_and_iris(img, cfg)?;
    let (upper_eyelid, lower_eyelid) = detect_eyelids(img, &pupil, &iris, cfg)?;
    let lids: Vec<Parabola> = upper_eyelid.iter().chain(lower_eyelid.iter()).copied().collect();
    let noise_mask = build_noise_mask(img, &pupil, &iris, &lids, cfg.specular_threshold, cfg.eyelid_margin)?;
    Ok(SegmentationResult {
        pupil,
        iris,
        upper_eyelid,
        lower_eyelid,
        noise_mask,
    })
}

/// Copy of `img` with both circle outlines drawn at 255.
pub fn overlay(img: &GrayImage, seg: &SegmentationResult) -> GrayImage {
    let mut out = img.clone();
    for circle in [seg.pupil, seg.iris] {
        let steps = (2.0 * PI * circle.r * 2.0).ceil().max(16.0) as usize;
        for i in 0..steps {
            let (x, y) = circle.point_at(2.0 * PI * i as f64 / steps as f64);
            let (x, y) = (x.round(), y.round());
            if x >= 0.0 && y >= 0.0 && (x as usize) < out.width() && (y as usize) < out.height() {
                out.set(x as usize, y as usize, 255);
            }
        }
    }
    out
}

/// `pupil cx cy r` and `iris cx cy r`, one per line.
pub fn sidecar_text(seg: &SegmentationResult) -> String {
    let mut s = String::new();
    for (name, c) in [("pupil", seg.pupil), ("iris", seg.iris)] {
        writeln!(s, "{name} {} {} {}", c.cx, c.cy, c.r).expect("write to String");
    }
    s
}

/// Parses [`sidecar_text`] output back into `(pupil, iris)`.
pub fn parse_sidecar(text: &str) -> Result<(Circle, Circle)> {
    let mut pupil = None;
    let mut iris = None;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad sidecar number {s:?}")))
        };
        if fields.len() != 4 {
            return Err(Error::InvalidArgument(format!("bad sidecar line {line:?}")));
        }
        let c = Circle::new(parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
        match fields[0] {
            "pupil" => pupil = Some(c),
            "iris" => iris = Some(c),
            other => return Err(Error::InvalidArgument(format!("unknown sidecar key {other:?}"))),
        }
    }
    match (pupil, iris) {
        (Some(p), Some(i)) => Ok((p, i)),
        _ => Err(Error::InvalidArgument("sidecar needs pupil and iris lines".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle_points(cx: f64, cy: f64, r: f64, step_deg: f64) -> Vec<(u32, u32)> {
        let n = (360.0 / step_deg).round() as usize;
        (0..n)
            .map(|i| {
                let t = (i as f64 * step_deg).to_radians();
                ((cx + r * t.cos()).round() as u32, (cy + r * t.sin()).round() as u32)
            })
            .collect()
    }

    #[test]
    fn constant_image_has_no_edges() {
        let img = GrayImage::filled(20, 20, 90);
        for bias in [EdgeBias::None, EdgeBias::VerticalEdges, EdgeBias::HorizontalEdges] {
            assert!(edge_map(&img, bias, 1.0).unwrap().is_empty());
        }
    }

    #[test]
    fn vertical_step_gives_one_column() {
        let img = GrayImage::from_fn(16, 12, |x, _| if x < 8 { 0 } else { 200 });
        let edges = edge_map(&img, EdgeBias::VerticalEdges, 10.0).unwrap();
        let cols: std::collections::BTreeSet<u32> = edges.points().iter().map(|p| p.0).collect();
        assert_eq!(cols.len(), 1);
        let col = *cols.iter().next().unwrap();
        assert!(col == 7 || col == 8);
        assert_eq!(edges.len(), 12);
    }

    #[test]
    fn exact_circle_recovered() {
        let edges = EdgeMap::from_points(200, 160, circle_points(100.0, 80.0, 30.0, 2.0)).unwrap();
        let c = circular_hough(&edges, 10, 50).unwrap();
        assert_eq!((c.cx, c.cy, c.r), (100.0, 80.0, 30.0));
    }

    #[test]
    fn empty_edges_is_error() {
        let edges = EdgeMap::from_points(50, 50, []).unwrap();
        assert!(matches!(circular_hough(&edges, 5, 10), Err(Error::EmptyEdgeMap)));
    }

    #[test]
    fn bad_radius_range() {
        let edges = EdgeMap::from_points(50, 50, [(3, 3)]).unwrap();
        assert!(circular_hough(&edges, 10, 10).is_err());
        assert!(circular_hough(&edges, 0, 10).is_err());
    }

    #[test]
    fn too_few_votes_is_error() {
        let edges = EdgeMap::from_points(50, 50, [(3, 3), (40, 40)]).unwrap();
        assert!(matches!(
            circular_hough(&edges, 5, 10),
            Err(Error::NoCircleEvidence { .. })
        ));
    }

    #[test]
    fn edge_points_outside_image_rejected() {
        assert!(EdgeMap::from_points(10, 10, [(10, 0)]).is_err());
    }

    #[test]
    fn parabola_angle_canonical() {
        let p = Parabola::new(0.0, 0.0, 2.0, 100f64.to_radians()).unwrap();
        assert!((p.theta - (-80f64).to_radians()).abs() < 1e-12);
        assert_eq!(p.a, -2.0);
        // same curve either way
        let q = Parabola { h: 0.0, k: 0.0, a: 2.0, theta: 100f64.to_radians() };
        for v in [-3.0, -1.0, 0.5, 2.0] {
            let (x, y) = q.point_at(v);
            assert!(p.implicit(x, y).abs() < 1e-9);
        }
        assert!(Parabola::new(0.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn parabola_points_satisfy_equation() {
        let p = Parabola::new(10.0, 20.0, 0.3, 0.2).unwrap();
        for v in [-4.0, -1.0, 0.0, 2.5] {
            let (x, y) = p.point_at(v);
            assert!(p.implicit(x, y).abs() < 1e-9);
            assert!(p.approx_distance(x, y) < 1e-9);
        }
    }

    #[test]
    fn parabola_empty_region() {
        let edges = EdgeMap::from_points(100, 100, [(5, 5), (6, 7)]).unwrap();
        let region = Rect { x0: 50.0, y0: 50.0, x1: 90.0, y1: 90.0 };
        let search = ParabolaSearch::near_horizontal_axis((0.01, 1.0));
        assert_eq!(parabolic_hough(&edges, region, &search).unwrap(), None);
    }

    #[test]
    fn noise_mask_is_annulus_complement() {
        let img = GrayImage::filled(60, 60, 100);
        let pupil = Circle::new(30.0, 30.0, 8.0);
        let iris = Circle::new(31.0, 30.0, 20.0);
        let mask = build_noise_mask(&img, &pupil, &iris, &[], 240, 0.0).unwrap();
        for y in 0..60 {
            for x in 0..60 {
                let (fx, fy) = (x as f64, y as f64);
                let in_annulus = iris.distance_to(fx, fy) <= iris.r && pupil.distance_to(fx, fy) >= pupil.r;
                assert_eq!(mask.get(x, y), !in_annulus, "({x}, {y})");
            }
        }
    }

    #[test]
    fn specular_pixel_masked() {
        let mut img = GrayImage::filled(60, 60, 100);
        img.set(45, 30, 255);
        let pupil = Circle::new(30.0, 30.0, 8.0);
        let iris = Circle::new(30.0, 30.0, 20.0);
        let mask = build_noise_mask(&img, &pupil, &iris, &[], 240, 0.0).unwrap();
        assert!(mask.get(45, 30));
        assert!(!mask.get(44, 30));
    }

    #[test]
    fn noise_mask_rejects_bad_geometry() {
        let img = GrayImage::filled(60, 60, 100);
        let pupil = Circle::new(30.0, 30.0, 25.0);
        let iris = Circle::new(30.0, 30.0, 20.0);
        assert!(build_noise_mask(&img, &pupil, &iris, &[], 240, 0.0).is_err());
    }

    #[test]
    fn eyelid_side_masked() {
        let img = GrayImage::filled(80, 80, 100);
        let pupil = Circle::new(40.0, 40.0, 6.0);
        let iris = Circle::new(40.0, 40.0, 30.0);
        // upper lid: apex at y = 25, opening downward on screen
        let lid = Parabola::new(40.0, 25.0, 60.0, PI / 2.0).unwrap();
        let mask = build_noise_mask(&img, &pupil, &iris, &[lid], 240, 0.0).unwrap();
        assert!(mask.get(40, 20));
        assert!(!mask.get(40, 30));
    }

    #[test]
    fn sidecar_round_trip() {
        let seg = SegmentationResult {
            pupil: Circle::new(100.0, 80.0, 30.0),
            iris: Circle::new(102.0, 81.0, 80.0),
            upper_eyelid: None,
            lower_eyelid: None,
            noise_mask: BinaryImage::filled(1, 1, false),
        };
        let text = sidecar_text(&seg);
        assert_eq!(text, "pupil 100 80 30\niris 102 81 80\n");
        assert_eq!(parse_sidecar(&text).unwrap(), (seg.pupil, seg.iris));
    }
}
