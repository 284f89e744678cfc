//! Orthographic isotropic-splat renderer with front-to-back alpha
//! compositing, plus the exact (linear) appearance Jacobian.
//!
//! Images are `(channels, height, width)` arrays. Pixel `(r, c)` samples the
//! image plane at `(c, r)` in pixel units, so the optical axis lands on pixel
//! `(H/2, W/2)`. The camera orbits the vertical axis: azimuth `theta` rotates
//! scene points by `R_y(theta)` before projection, and depth is the rotated z
//! (smaller is nearer).

use ndarray::{Array3, ArrayView3};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::kinematics::Vec3;

pub type Image = Array3<f64>;

/// Footprints are culled beyond this many radii.
pub const CULL_RADII: f64 = 3.0;
pub const MIN_IMAGE_SIDE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrimitive {
    pub mu: Vec3,
    pub scale: f64,
    pub opacity: f64,
    pub appearance: Vec<f64>,
}

impl GaussianPrimitive {
    pub fn new(mu: Vec3, scale: f64, opacity: f64, appearance: Vec<f64>) -> Result<Self> {
        let p = Self { mu, scale, opacity, appearance };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu.iter().all(|v| v.is_finite()) {
            return Err(Error::param("mu", "position must be finite"));
        }
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::param("scale", format!("must be positive, got {}", self.scale)));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(Error::param("opacity", format!("must lie in [0, 1], got {}", self.opacity)));
        }
        if self.appearance.is_empty() {
            return Err(Error::param("appearance", "needs at least one channel"));
        }
        if self.appearance.iter().any(|s| !s.is_finite()) {
            return Err(Error::param("appearance", "values must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Viewpoint {
    pub azimuth: f64,
    pub height: usize,
    pub width: usize,
    /// Scene units per image half-width.
    pub extent: f64,
}

impl Viewpoint {
    pub fn new(azimuth: f64, height: usize, width: usize, extent: f64) -> Result<Self> {
        if !(0.0..360.0).contains(&azimuth) {
            return Err(Error::param("azimuth", format!("must lie in [0, 360), got {azimuth}")));
        }
        if height < MIN_IMAGE_SIDE || width < MIN_IMAGE_SIDE {
            return Err(Error::param(
                "image_size",
                format!("sides must be at least {MIN_IMAGE_SIDE}, got {height}x{width}"),
            ));
        }
        if !(extent > 0.0) || !extent.is_finite() {
            return Err(Error::param("extent", format!("must be positive, got {extent}")));
        }
        Ok(Self { azimuth, height, width, extent })
    }

    pub fn pixels_per_unit(&self) -> f64 {
        (self.width as f64 / 2.0) / self.extent
    }

    /// `R_y(azimuth) * p`.
    pub fn rotate(&self, p: &Vec3) -> Vec3 {
        let (s, c) = self.azimuth.to_radians().sin_cos();
        Vec3::new(p.x * c + p.z * s, p.y, -p.x * s + p.z * c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSequence {
    pub frames: Vec<Vec<GaussianPrimitive>>,
    pub dt: f64,
    /// `correspondence[t][i]` is the index in frame `t - 1` of primitive `i`
    /// of frame `t` (entry 0 is unused and empty). `None` when unknown.
    pub correspondence: Option<Vec<Vec<usize>>>,
}

impl SceneSequence {
    pub fn new(frames: Vec<Vec<GaussianPrimitive>>, dt: f64, correspondence: Option<Vec<Vec<usize>>>) -> Result<Self> {
        let scene = Self { frames, dt, correspondence };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::param("frames", "scene has no frames"));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::param("dt", format!("must be positive, got {}", self.dt)));
        }
        let k = self.channels();
        for (t, frame) in self.frames.iter().enumerate() {
            if frame.is_empty() {
                return Err(Error::param("frames", format!("frame {t} is empty")));
            }
            for p in frame {
                p.validate()?;
                if p.appearance.len() != k {
                    return Err(Error::LengthMismatch {
                        context: "appearance channels",
                        expected: k,
                        actual: p.appearance.len(),
                    });
                }
            }
        }
        if let Some(corr) = &self.correspondence {
            if corr.len() != self.frames.len() {
                return Err(Error::LengthMismatch {
                    context: "correspondence frames",
                    expected: self.frames.len(),
                    actual: corr.len(),
                });
            }
            for t in 1..self.frames.len() {
                if corr[t].len() != self.frames[t].len() {
                    return Err(Error::LengthMismatch {
                        context: "correspondence entries",
                        expected: self.frames[t].len(),
                        actual: corr[t].len(),
                    });
                }
                if corr[t].iter().any(|&j| j >= self.frames[t - 1].len()) {
                    return Err(Error::param("correspondence", format!("frame {t} maps outside frame {}", t - 1)));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.frames.first().and_then(|f| f.first()).map_or(1, |p| p.appearance.len())
    }

    pub fn appearance(&self, t: usize) -> Vec<Vec<f64>> {
        self.frames[t].iter().map(|p| p.appearance.clone()).collect()
    }

    pub fn positions(&self, t: usize) -> Vec<Vec3> {
        self.frames[t].iter().map(|p| p.mu).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Horizontal pixel coordinate (column axis).
    pub u: f64,
    /// Vertical pixel coordinate (row axis).
    pub v: f64,
    pub depth: f64,
    /// Footprint radius in pixels.
    pub radius: f64,
}

pub fn project(p: &GaussianPrimitive, view: &Viewpoint) -> Projection {
    let r = view.rotate(&p.mu);
    let ppu = view.pixels_per_unit();
    Projection {
        u: view.width as f64 / 2.0 + r.x * ppu,
        v: view.height as f64 / 2.0 - r.y * ppu,
        depth: r.z,
        radius: p.scale * ppu,
    }
}

/// Projected primitives in compositing order.
struct Sorted {
    order: Vec<usize>,
    proj: Vec<Projection>,
}

fn sort_front_to_back(frame: &[GaussianPrimitive], view: &Viewpoint) -> Sorted {
    let proj: Vec<Projection> = frame.iter().map(|p| project(p, view)).collect();
    let mut order: Vec<usize> = (0..frame.len()).collect();
    order.sort_by(|&a, &b| proj[a].depth.total_cmp(&proj[b].depth).then(a.cmp(&b)));
    Sorted { order, proj }
}

/// Falloff `G'` at pixel (r, c), zero beyond the cull radius.
fn falloff(p: &Projection, r: usize, c: usize) -> f64 {
    let du = c as f64 - p.u;
    let dv = r as f64 - p.v;
    let d2 = du * du + dv * dv;
    let cut = CULL_RADII * p.radius;
    if d2 > cut * cut {
        0.0
    } else {
        (-d2 / (2.0 * p.radius * p.radius)).exp()
    }
}

/// Compositing coefficients for one image row: `(pixel column, prim, coef)`.
fn row_coefficients(frame: &[GaussianPrimitive], view: &Viewpoint, sorted: &Sorted, r: usize) -> Vec<(usize, usize, f64)> {
    // Primitives whose culled footprint reaches this row, still in depth order.
    let active: Vec<usize> = sorted
        .order
        .iter()
        .copied()
        .filter(|&k| {
            let p = &sorted.proj[k];
            (r as f64 - p.v).abs() <= CULL_RADII * p.radius && frame[k].opacity > 0.0
        })
        .collect();
    let mut out = Vec::new();
    for c in 0..view.width {
        let mut transmittance = 1.0;
        for &k in &active {
            let g = falloff(&sorted.proj[k], r, c);
            if g == 0.0 {
                continue;
            }
            let a = frame[k].opacity * g;
            out.push((c, k, a * transmittance));
            transmittance *= 1.0 - a;
        }
    }
    out
}

/// Renders by direct compositing. Background is 0.
pub fn render(frame: &[GaussianPrimitive], view: &Viewpoint) -> Image {
    render_with(frame, view, Execution::Sequential)
}

pub fn render_with(frame: &[GaussianPrimitive], view: &Viewpoint, exec: Execution) -> Image {
    let k = frame.first().map_or(1, |p| p.appearance.len());
    let sorted = sort_front_to_back(frame, view);
    let rows = exec.map(view.height, |r| {
        let mut row = vec![0.0; k * view.width];
        for (c, prim, coef) in row_coefficients(frame, view, &sorted, r) {
            for (ch, s) in frame[prim].appearance.iter().enumerate() {
                row[ch * view.width + c] += coef * s;
            }
        }
        row
    });
    let mut img = Image::zeros((k, view.height, view.width));
    for (r, row) in rows.into_iter().enumerate() {
        for ch in 0..k {
            for c in 0..view.width {
                img[[ch, r, c]] = row[ch * view.width + c];
            }
        }
    }
    img
}

/// Sparse pixel-major Jacobian of a render with respect to primitive
/// appearance. The same coefficients apply to every channel.
#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceJacobian {
    pub height: usize,
    pub width: usize,
    pub primitives: usize,
    row_ptr: Vec<usize>,
    prim: Vec<u32>,
    coef: Vec<f64>,
}

impl AppearanceJacobian {
    /// `(prim, coef)` entries of pixel `(r, c)` in compositing order.
    pub fn pixel(&self, r: usize, c: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let p = r * self.width + c;
        let range = self.row_ptr[p]..self.row_ptr[p + 1];
        self.prim[range.clone()].iter().map(|&k| k as usize).zip(self.coef[range].iter().copied())
    }

    pub fn nnz(&self) -> usize {
        self.coef.len()
    }

    /// Dense coefficient of primitive `k` at pixel `(r, c)`.
    pub fn coefficient(&self, r: usize, c: usize, k: usize) -> f64 {
        self.pixel(r, c).filter(|(p, _)| *p == k).map(|(_, v)| v).sum()
    }

    /// `J * s`: the rendered image for per-primitive appearances.
    pub fn apply(&self, appearance: &[Vec<f64>]) -> Result<Image> {
        if appearance.len() != self.primitives {
            return Err(Error::LengthMismatch {
                context: "jacobian appearance",
                expected: self.primitives,
                actual: appearance.len(),
            });
        }
        let k = appearance.first().map_or(1, Vec::len);
        let plane = self.height * self.width;
        let mut flat = vec![0.0; k * plane];
        for px in 0..plane {
            let range = self.row_ptr[px]..self.row_ptr[px + 1];
            for (&p, &w) in self.prim[range.clone()].iter().zip(&self.coef[range]) {
                for (ch, s) in appearance[p as usize].iter().enumerate() {
                    flat[ch * plane + px] += w * s;
                }
            }
        }
        Ok(Image::from_shape_vec((k, self.height, self.width), flat).expect("shape matches buffer"))
    }

    /// `J^T * g`: pulls a per-pixel gradient back to per-primitive appearance.
    pub fn transpose_apply(&self, grad: ArrayView3<f64>) -> Result<Vec<Vec<f64>>> {
        let (k, h, w) = grad.dim();
        if (h, w) != (self.height, self.width) {
            return Err(Error::ShapeMismatch {
                context: "jacobian transpose",
                expected: (self.height, self.width),
                actual: (h, w),
            });
        }
        let grad = grad.as_standard_layout();
        let g = grad.as_slice().expect("standard layout");
        let plane = h * w;
        let mut acc = vec![0.0; self.primitives * k];
        for px in 0..plane {
            let range = self.row_ptr[px]..self.row_ptr[px + 1];
            for (&p, &coef) in self.prim[range.clone()].iter().zip(&self.coef[range]) {
                let base = p as usize * k;
                for ch in 0..k {
                    acc[base + ch] += coef * g[ch * plane + px];
                }
            }
        }
        Ok(acc.chunks(k.max(1)).take(self.primitives).map(<[f64]>::to_vec).collect())
    }
}

pub fn render_appearance_jacobian(frame: &[GaussianPrimitive], view: &Viewpoint) -> AppearanceJacobian {
    render_appearance_jacobian_with(frame, view, Execution::Sequential)
}

pub fn render_appearance_jacobian_with(frame: &[GaussianPrimitive], view: &Viewpoint, exec: Execution) -> AppearanceJacobian {
    let sorted = sort_front_to_back(frame, view);
    let rows = exec.map(view.height, |r| row_coefficients(frame, view, &sorted, r));
    let mut row_ptr = Vec::with_capacity(view.height * view.width + 1);
    let mut prim = Vec::new();
    let mut coef = Vec::new();
    row_ptr.push(0);
    for row in rows {
        let mut it = row.into_iter().peekable();
        for c in 0..view.width {
            while let Some(&(cc, p, v)) = it.peek() {
                if cc != c {
                    break;
                }
                prim.push(p as u32);
                coef.push(v);
                it.next();
            }
            row_ptr.push(coef.len());
        }
    }
    AppearanceJacobian { height: view.height, width: view.width, primitives: frame.len(), row_ptr, prim, coef }
}

/// Views at `0, interval, 2*interval, ...` degrees.
pub fn view_ring(interval_deg: f64, height: usize, width: usize, extent: f64) -> Result<Vec<Viewpoint>> {
    if !(interval_deg > 0.0) || interval_deg > 360.0 {
        return Err(Error::param("view_interval", format!("must lie in (0, 360], got {interval_deg}")));
    }
    let count = 360.0 / interval_deg;
    let n = count.round();
    if (count - n).abs() > 1e-9 {
        return Err(Error::param("view_interval", format!("{interval_deg} does not divide 360")));
    }
    (0..n as usize)
        .map(|i| Viewpoint::new(i as f64 * interval_deg, height, width, extent))
        .collect()
}
