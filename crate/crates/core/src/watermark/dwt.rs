//! Orthonormal 2D Haar transform.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Detail bands of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct DetailBands {
    pub lh: Array2<f64>,
    pub hl: Array2<f64>,
    pub hh: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveletPyramid {
    pub ll: Array2<f64>,
    /// Finest level first.
    pub details: Vec<DetailBands>,
}

impl WaveletPyramid {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    /// Sum of squares of every coefficient.
    pub fn energy(&self) -> f64 {
        let sq = |a: &Array2<f64>| a.iter().map(|v| v * v).sum::<f64>();
        sq(&self.ll)
            + self
                .details
                .iter()
                .map(|d| sq(&d.lh) + sq(&d.hl) + sq(&d.hh))
                .sum::<f64>()
    }

    /// All detail coefficients, level by level, in LH, HL, HH order.
    pub fn detail_coefficients(&self) -> impl Iterator<Item = f64> + '_ {
        self.details
            .iter()
            .flat_map(|d| d.lh.iter().chain(d.hl.iter()).chain(d.hh.iter()).copied())
    }

    pub fn detail_count(&self) -> usize {
        self.details.iter().map(|d| 3 * d.lh.len()).sum()
    }

    /// Applies `f` to every detail coefficient of `self` and `other` pairwise.
    pub fn zip_details(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Vec<DetailBands> {
        self.details
            .iter()
            .zip(&other.details)
            .map(|(a, b)| DetailBands {
                lh: ndarray::Zip::from(&a.lh).and(&b.lh).map_collect(|x, y| f(*x, *y)),
                hl: ndarray::Zip::from(&a.hl).and(&b.hl).map_collect(|x, y| f(*x, *y)),
                hh: ndarray::Zip::from(&a.hh).and(&b.hh).map_collect(|x, y| f(*x, *y)),
            })
            .collect()
    }
}

pub fn check_divisible(height: usize, width: usize, levels: usize) -> Result<()> {
    let divisor = 1usize << levels;
    if height == 0 || width == 0 || !height.is_multiple_of(divisor) || !width.is_multiple_of(divisor) {
        return Err(Error::Divisibility { height, width, divisor });
    }
    Ok(())
}

pub fn dwt_forward(image: ArrayView2<f64>, levels: usize) -> Result<WaveletPyramid> {
    let (h, w) = image.dim();
    check_divisible(h, w, levels)?;
    let mut ll = image.to_owned();
    let mut details = Vec::with_capacity(levels);
    for _ in 0..levels {
        let (h, w) = (ll.nrows() / 2, ll.ncols() / 2);
        let mut next = Array2::zeros((h, w));
        let mut bands = DetailBands { lh: Array2::zeros((h, w)), hl: Array2::zeros((h, w)), hh: Array2::zeros((h, w)) };
        for r in 0..h {
            for c in 0..w {
                let a = ll[[2 * r, 2 * c]];
                let b = ll[[2 * r, 2 * c + 1]];
                let cc = ll[[2 * r + 1, 2 * c]];
                let d = ll[[2 * r + 1, 2 * c + 1]];
                next[[r, c]] = (a + b + cc + d) / 2.0;
                bands.lh[[r, c]] = (a - b + cc - d) / 2.0;
                bands.hl[[r, c]] = (a + b - cc - d) / 2.0;
                bands.hh[[r, c]] = (a - b - cc + d) / 2.0;
            }
        }
        details.push(bands);
        ll = next;
    }
    Ok(WaveletPyramid { ll, details })
}

pub fn dwt_inverse(pyramid: &WaveletPyramid) -> Result<Array2<f64>> {
    let mut ll = pyramid.ll.clone();
    for bands in pyramid.details.iter().rev() {
        let (h, w) = ll.dim();
        for band in [&bands.lh, &bands.hl, &bands.hh] {
            if band.dim() != (h, w) {
                return Err(Error::ShapeMismatch { context: "wavelet detail band", expected: (h, w), actual: band.dim() });
            }
        }
        let mut up = Array2::zeros((2 * h, 2 * w));
        for r in 0..h {
            for c in 0..w {
                let (s, lh, hl, hh) = (ll[[r, c]], bands.lh[[r, c]], bands.hl[[r, c]], bands.hh[[r, c]]);
                up[[2 * r, 2 * c]] = (s + lh + hl + hh) / 2.0;
                up[[2 * r, 2 * c + 1]] = (s - lh + hl - hh) / 2.0;
                up[[2 * r + 1, 2 * c]] = (s + lh - hl - hh) / 2.0;
                up[[2 * r + 1, 2 * c + 1]] = (s - lh - hl + hh) / 2.0;
            }
        }
        ll = up;
    }
    Ok(ll)
}

/// Adjoint of "take the LL band after `levels` levels": spreads an LL-sized
/// array back to image resolution. Since the transform is orthonormal this is
/// the inverse with all details zero.
pub fn ll_adjoint(ll: Array2<f64>, levels: usize) -> Result<Array2<f64>> {
    let (h, w) = ll.dim();
    let details = (0..levels)
        .rev()
        .map(|l| {
            let s = 1usize << l;
            DetailBands {
                lh: Array2::zeros((h * s, w * s)),
                hl: Array2::zeros((h * s, w * s)),
                hh: Array2::zeros((h * s, w * s)),
            }
        })
        .collect();
    dwt_inverse(&WaveletPyramid { ll, details })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_image() {
        let img = Array2::from_elem((4, 4), 0.3);
        let p = dwt_forward(img.view(), 1).unwrap();
        assert!(p.ll.iter().all(|v| (v - 0.6).abs() < 1e-15));
        assert!(p.detail_coefficients().all(|v| v == 0.0));
    }

    #[test]
    fn hand_block() {
        let p = dwt_forward(array![[1.0, 0.0], [0.0, 1.0]].view(), 1).unwrap();
        assert_eq!(p.ll[[0, 0]], 1.0);
        assert_eq!(p.details[0].lh[[0, 0]], 0.0);
        assert_eq!(p.details[0].hl[[0, 0]], 0.0);
        assert_eq!(p.details[0].hh[[0, 0]], 1.0);
    }

    #[test]
    fn zero_and_delta() {
        let zero = dwt_forward(Array2::zeros((8, 8)).view(), 3).unwrap();
        assert!(dwt_inverse(&zero).unwrap().iter().all(|v| *v == 0.0));
        let mut delta = Array2::zeros((8, 8));
        delta[[3, 6]] = 1.0;
        let back = dwt_inverse(&dwt_forward(delta.view(), 3).unwrap()).unwrap();
        assert!((&back - &delta).iter().all(|d| d.abs() <= 1e-10));
    }

    #[test]
    fn divisibility_error() {
        let img = Array2::<f64>::zeros((6, 8));
        assert!(matches!(dwt_forward(img.view(), 2), Err(Error::Divisibility { divisor: 4, .. })));
        assert!(dwt_forward(img.view(), 1).is_ok());
    }

    #[test]
    fn band_sizes_halve() {
        let p = dwt_forward(Array2::zeros((16, 8)).view(), 3).unwrap();
        assert_eq!(p.details[0].lh.dim(), (8, 4));
        assert_eq!(p.details[2].hh.dim(), (2, 1));
        assert_eq!(p.ll.dim(), (2, 1));
    }

    #[test]
    fn ll_adjoint_is_transpose_of_ll_extraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_fn((16, 16), |_| rng.random_range(-1.0..1.0));
        let y = Array2::from_shape_fn((4, 4), |_| rng.random_range(-1.0..1.0));
        let lhs = (&dwt_forward(x.view(), 2).unwrap().ll * &y).sum();
        let rhs = (&x * &ll_adjoint(y, 2).unwrap()).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn roundtrip_and_parseval_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for levels in 1..=4 {
            let img = Array2::from_shape_fn((32, 16), |_| rng.random::<f64>());
            let p = dwt_forward(img.view(), levels).unwrap();
            let back = dwt_inverse(&p).unwrap();
            assert!((&back - &img).iter().all(|d| d.abs() <= 1e-10));
            let e: f64 = img.iter().map(|v| v * v).sum();
            assert!((e - p.energy()).abs() <= 1e-9);
        }
    }
}
