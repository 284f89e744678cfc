//! Image-space distortions and bit-accuracy scoring.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::splat::Image;
use crate::watermark::decoder::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttackKind {
    None,
    Noise,
    Rotation,
    Scaling,
    Blur,
    Crop,
    Resize,
    Jpeg,
}

impl AttackKind {
    pub const ALL: [AttackKind; 8] = [
        AttackKind::None,
        AttackKind::Noise,
        AttackKind::Rotation,
        AttackKind::Scaling,
        AttackKind::Blur,
        AttackKind::Crop,
        AttackKind::Resize,
        AttackKind::Jpeg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::Noise => "noise",
            AttackKind::Rotation => "rotation",
            AttackKind::Scaling => "scaling",
            AttackKind::Blur => "blur",
            AttackKind::Crop => "crop",
            AttackKind::Resize => "resize",
            AttackKind::Jpeg => "jpeg",
        }
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownAttack(s.to_string()))
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttackParam {
    Scalar(f64),
    /// Inclusive range `lo:hi`.
    Range(f64, f64),
}

impl FromStr for AttackParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::param("attack parameter", format!("not a number: {t:?}")))
        };
        match s.split_once(':') {
            Some((lo, hi)) => Ok(AttackParam::Range(num(lo)?, num(hi)?)),
            None => Ok(AttackParam::Scalar(num(s)?)),
        }
    }
}

impl fmt::Display for AttackParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttackParam::Scalar(v) => write!(f, "{v}"),
            AttackParam::Range(lo, hi) => write!(f, "{lo}:{hi}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub param: AttackParam,
    pub seed: u64,
}

impl AttackSpec {
    pub fn new(kind: AttackKind, param: AttackParam, seed: u64) -> Result<Self> {
        let spec = Self { kind, param, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn scalar(kind: AttackKind, v: f64, seed: u64) -> Result<Self> {
        Self::new(kind, AttackParam::Scalar(v), seed)
    }

    /// Same attack with a seed decorrelated per image index.
    pub fn for_image(&self, index: u64) -> Self {
        let mut mix = SplitMix64::new(self.seed ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03));
        Self { seed: mix.next_u64(), ..*self }
    }

    /// Range a stochastic parameter is drawn from.
    fn range(&self) -> (f64, f64) {
        match (self.kind, self.param) {
            (_, AttackParam::Range(lo, hi)) => (lo, hi),
            (AttackKind::Rotation, AttackParam::Scalar(p)) => (-p.abs(), p.abs()),
            (AttackKind::Scaling, AttackParam::Scalar(p)) => (1.0 - p, 1.0 + p),
            (_, AttackParam::Scalar(p)) => (p, p),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::param("attack parameter", format!("{}: {reason}", self.kind)));
        let (lo, hi) = self.range();
        if !lo.is_finite() || !hi.is_finite() || lo > hi {
            return bad(format!("invalid value {}", self.param));
        }
        let scalar = match self.param {
            AttackParam::Scalar(v) => Some(v),
            AttackParam::Range(..) => None,
        };
        match self.kind {
            AttackKind::None => {}
            AttackKind::Noise | AttackKind::Blur | AttackKind::Crop | AttackKind::Jpeg if scalar.is_none() => {
                return bad("expects a single value".into());
            }
            AttackKind::Noise | AttackKind::Blur if lo < 0.0 => return bad("must be non-negative".into()),
            AttackKind::Crop if !(0.0..1.0).contains(&lo) => return bad("crop fraction must lie in [0, 1)".into()),
            AttackKind::Jpeg if !(1.0..=100.0).contains(&lo) => return bad("quality must lie in [1, 100]".into()),
            AttackKind::Rotation if lo < -std::f64::consts::PI || hi > std::f64::consts::PI => {
                return bad("angle must lie within [-pi, pi]".into());
            }
            AttackKind::Scaling if lo < 0.75 - 1e-12 || hi > 1.25 + 1e-12 => {
                return bad("scale change is limited to 25%".into());
            }
            AttackKind::Resize if lo <= 0.0 || hi > 1.0 => return bad("resize factor must lie in (0, 1]".into()),
            _ => {}
        }
        Ok(())
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        let (lo, hi) = self.range();
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..=hi)
        }
    }
}

impl fmt::Display for AttackSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.kind, self.param, self.seed)
    }
}

/// The default robustness suite.
pub fn default_suite(seed: u64) -> Vec<AttackSpec> {
    use AttackKind::*;
    use AttackParam::*;
    [
        (None, Scalar(0.0)),
        (Noise, Scalar(0.1)),
        (Rotation, Scalar(std::f64::consts::FRAC_PI_6)),
        (Scaling, Scalar(0.25)),
        (Blur, Scalar(0.1)),
        (Crop, Scalar(0.2)),
        (Resize, Range(0.9, 1.0)),
        (Jpeg, Scalar(50.0)),
    ]
    .into_iter()
    .map(|(k, p)| AttackSpec { kind: k, param: p, seed })
    .collect()
}

/// Parses `kind parameter seed` lines; `#` starts a comment.
pub fn parse_suite(text: &str, path: &Path) -> Result<Vec<AttackSpec>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let wrap = |e: Error| Error::parse(path, i + 1, e.to_string());
        if fields.len() != 3 {
            return Err(Error::parse(path, i + 1, format!("expected `kind parameter seed`, got {} fields", fields.len())));
        }
        let kind = fields[0].parse::<AttackKind>().map_err(wrap)?;
        let param = fields[1].parse::<AttackParam>().map_err(wrap)?;
        let seed = fields[2].parse::<u64>().map_err(|_| Error::parse(path, i + 1, format!("bad seed {:?}", fields[2])))?;
        out.push(AttackSpec::new(kind, param, seed).map_err(wrap)?);
    }
    Ok(out)
}

pub fn format_suite(suite: &[AttackSpec]) -> String {
    suite.iter().map(|s| format!("{s}\n")).collect()
}

/// Applies one attack. Pixel values stay in `[0, 1]` for in-range inputs.
pub fn apply_attack(image: &Image, spec: &AttackSpec) -> Result<Image> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok(match spec.kind {
        AttackKind::None => image.clone(),
        AttackKind::Noise => {
            let std = spec.draw(&mut rng);
            let normal = Normal::new(0.0, std).map_err(|e| Error::param("noise", e.to_string()))?;
            image.mapv(|v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0))
        }
        AttackKind::Rotation => {
            let angle = spec.draw(&mut rng);
            if angle == 0.0 {
                image.clone()
            } else {
                let (s, c) = angle.sin_cos();
                // Inverse map: output offset rotated back by -angle.
                warp(image, |dx, dy| (c * dx + s * dy, -s * dx + c * dy))
            }
        }
        AttackKind::Scaling => {
            let f = spec.draw(&mut rng);
            if f == 1.0 {
                image.clone()
            } else {
                warp(image, |dx, dy| (dx / f, dy / f))
            }
        }
        AttackKind::Blur => gaussian_blur(image, spec.draw(&mut rng)),
        AttackKind::Crop => crop_border(image, spec.draw(&mut rng)),
        AttackKind::Resize => {
            let f = spec.draw(&mut rng);
            let (_, h, w) = image.dim();
            let nh = ((h as f64 * f).round() as usize).max(1);
            let nw = ((w as f64 * f).round() as usize).max(1);
            resize_bilinear(&resize_bilinear(image, nh, nw), h, w)
        }
        AttackKind::Jpeg => jpeg_roundtrip(image, spec.draw(&mut rng)),
    })
}

/// Zero-filled bilinear sample at fractional (x = column, y = row).
fn sample_zero(plane: ndarray::ArrayView2<f64>, x: f64, y: f64) -> f64 {
    let (h, w) = plane.dim();
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let mut acc = 0.0;
    for (oy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
        for (ox, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
            let weight = wx * wy;
            if weight == 0.0 {
                continue;
            }
            let (xi, yi) = (x0 + ox, y0 + oy);
            if xi >= 0.0 && yi >= 0.0 && (xi as usize) < w && (yi as usize) < h {
                acc += weight * plane[[yi as usize, xi as usize]];
            }
        }
    }
    acc
}

/// Resamples every channel through `map(dx, dy) -> (sx, sy)`, offsets taken
/// from the image centre.
fn warp(image: &Image, map: impl Fn(f64, f64) -> (f64, f64)) -> Image {
    let (k, h, w) = image.dim();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    Image::from_shape_fn((k, h, w), |(ch, r, c)| {
        let (sx, sy) = map(c as f64 - cx, r as f64 - cy);
        sample_zero(image.index_axis(ndarray::Axis(0), ch), sx + cx, sy + cy)
    })
}

pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = k.iter().sum();
    k.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian blur with clamp-to-edge borders.
pub fn gaussian_blur(image: &Image, sigma: f64) -> Image {
    let kernel = gaussian_kernel(sigma);
    if kernel.len() == 1 {
        return image.clone();
    }
    let radius = (kernel.len() / 2) as i64;
    let (k, h, w) = image.dim();
    let clamp = |i: i64, n: usize| i.clamp(0, n as i64 - 1) as usize;
    let horiz = Image::from_shape_fn((k, h, w), |(ch, r, c)| {
        kernel.iter().enumerate().map(|(j, kv)| kv * image[[ch, r, clamp(c as i64 + j as i64 - radius, w)]]).sum()
    });
    Image::from_shape_fn((k, h, w), |(ch, r, c)| {
        kernel.iter().enumerate().map(|(j, kv)| kv * horiz[[ch, clamp(r as i64 + j as i64 - radius, h), c]]).sum()
    })
}

/// Zeros a border so the kept centre covers `1 - fraction` of the area.
pub fn crop_border(image: &Image, fraction: f64) -> Image {
    let (k, h, w) = image.dim();
    let side = (1.0 - fraction).sqrt();
    let bh = ((h as f64 * (1.0 - side)) / 2.0).round() as usize;
    let bw = ((w as f64 * (1.0 - side)) / 2.0).round() as usize;
    Image::from_shape_fn((k, h, w), |(ch, r, c)| {
        if r < bh || r >= h - bh || c < bw || c >= w - bw {
            0.0
        } else {
            image[[ch, r, c]]
        }
    })
}

/// Bilinear resize with pixel-centre alignment and clamped borders.
pub fn resize_bilinear(image: &Image, nh: usize, nw: usize) -> Image {
    let (k, h, w) = image.dim();
    if (nh, nw) == (h, w) {
        return image.clone();
    }
    let sy = h as f64 / nh as f64;
    let sx = w as f64 / nw as f64;
    Image::from_shape_fn((k, nh, nw), |(ch, r, c)| {
        let y = ((r as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let x = ((c as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        let top = image[[ch, y0, x0]] * (1.0 - fx) + image[[ch, y0, x1]] * fx;
        let bot = image[[ch, y1, x0]] * (1.0 - fx) + image[[ch, y1, x1]] * fx;
        top * (1.0 - fy) + bot * fy
    })
}

/// Standard JPEG luminance quantisation table (quality 50), row-major.
pub const LUMINANCE_QUANT: [f64; 64] = [
    16., 11., 10., 16., 24., 40., 51., 61., //
    12., 12., 14., 19., 26., 58., 60., 55., //
    14., 13., 16., 24., 40., 57., 69., 56., //
    14., 17., 22., 29., 51., 87., 80., 62., //
    18., 22., 37., 56., 68., 109., 103., 77., //
    24., 35., 55., 64., 81., 104., 113., 92., //
    49., 64., 78., 87., 103., 121., 120., 101., //
    72., 92., 95., 98., 112., 100., 103., 99.,
];

pub fn quant_table(quality: f64) -> [f64; 64] {
    let q = quality.clamp(1.0, 100.0);
    let scale = if q < 50.0 { 5000.0 / q } else { 200.0 - 2.0 * q };
    LUMINANCE_QUANT.map(|b| ((b * scale + 50.0) / 100.0).floor().clamp(1.0, 255.0))
}

fn dct_basis() -> [[f64; 8]; 8] {
    let mut m = [[0.0; 8]; 8];
    for (u, row) in m.iter_mut().enumerate() {
        let a = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        for (x, v) in row.iter_mut().enumerate() {
            *v = a * (((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI) / 16.0).cos();
        }
    }
    m
}

/// Block-DCT quantisation roundtrip per channel with edge padding.
pub fn jpeg_roundtrip(image: &Image, quality: f64) -> Image {
    let q = quant_table(quality);
    let m = dct_basis();
    let (k, h, w) = image.dim();
    let ph = h.div_ceil(8) * 8;
    let pw = w.div_ceil(8) * 8;
    let mut out = Image::zeros((k, h, w));
    for ch in 0..k {
        for by in (0..ph).step_by(8) {
            for bx in (0..pw).step_by(8) {
                let mut block = [[0.0; 8]; 8];
                for (y, row) in block.iter_mut().enumerate() {
                    for (x, v) in row.iter_mut().enumerate() {
                        let r = (by + y).min(h - 1);
                        let c = (bx + x).min(w - 1);
                        *v = image[[ch, r, c]] * 255.0 - 128.0;
                    }
                }
                // coef = M * block * M^T, quantised.
                let mut tmp = [[0.0; 8]; 8];
                for u in 0..8 {
                    for x in 0..8 {
                        tmp[u][x] = (0..8).map(|y| m[u][y] * block[y][x]).sum();
                    }
                }
                let mut coef = [[0.0; 8]; 8];
                for u in 0..8 {
                    for v in 0..8 {
                        let c: f64 = (0..8).map(|x| tmp[u][x] * m[v][x]).sum();
                        let qv = q[u * 8 + v];
                        coef[u][v] = (c / qv).round() * qv;
                    }
                }
                // block = M^T * coef * M.
                for y in 0..8 {
                    for v in 0..8 {
                        tmp[y][v] = (0..8).map(|u| m[u][y] * coef[u][v]).sum();
                    }
                }
                for y in 0..8 {
                    for x in 0..8 {
                        let (r, c) = (by + y, bx + x);
                        if r < h && c < w {
                            let val: f64 = (0..8).map(|v| tmp[y][v] * m[v][x]).sum();
                            out[[ch, r, c]] = ((val + 128.0) / 255.0).clamp(0.0, 1.0);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Fraction of bits where `soft > 0.5` agrees with `message == 1`.
pub fn bit_accuracy(soft_bits: &[f64], message: &[u8]) -> Result<f64> {
    if soft_bits.len() != message.len() {
        return Err(Error::LengthMismatch { context: "bit accuracy", expected: message.len(), actual: soft_bits.len() });
    }
    if message.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let hits = soft_bits.iter().zip(message).filter(|(p, b)| (**p > 0.5) == (**b == 1)).count();
    Ok(hits as f64 / message.len() as f64)
}
