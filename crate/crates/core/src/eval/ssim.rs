//! Structural similarity on luminance.
//!
//! Images in [-1, 1] are shifted to [0, 1], reduced to ITU-R 601 luma, and
//! compared with an 11×11 Gaussian window (σ = 1.5) over every window that
//! lies fully inside the image. The score is the mean of the SSIM map.

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range L of the compared planes.
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn kernel(&self) -> Vec<f64> {
        let half = (self.window as f64 - 1.0) / 2.0;
        let taps: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - half;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let sum: f64 = taps.iter().sum();
        taps.into_iter().map(|t| t / sum).collect()
    }
}

/// Row-major luminance in [0, 1]. One-channel images are used as is;
/// otherwise the first three channels are RGB.
pub fn luminance(img: &ImageTensor) -> Vec<f64> {
    let unit = |v: f32| (v as f64 + 1.0) / 2.0;
    if img.channels() < 3 {
        return img.plane(0).iter().map(|&v| unit(v)).collect();
    }
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    (0..r.len())
        .map(|i| LUMA[0] * unit(r[i]) + LUMA[1] * unit(g[i]) + LUMA[2] * unit(b[i]))
        .collect()
}

/// Valid-mode separable filter of a `height × width` plane.
fn filter(plane: &[f64], width: usize, height: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (ow, oh) = (width + 1 - n, height + 1 - n);
    let mut rows = vec![0.0; height * ow];
    for y in 0..height {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * plane[y * width + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean SSIM of two planes with the same `width × height` layout.
pub fn ssim_planes(a: &[f64], b: &[f64], width: usize, height: usize, params: &SsimParams) -> Result<f64> {
    if a.len() != width * height || b.len() != width * height {
        return Err(Error::Shape(format!(
            "planes of {} and {} values for a {width}x{height} image",
            a.len(),
            b.len()
        )));
    }
    if width < params.window || height < params.window {
        return Err(Error::InvalidInput(format!(
            "{width}x{height} image is smaller than the {0}x{0} SSIM window",
            params.window
        )));
    }
    let k = params.kernel();
    let prod = |f: &dyn Fn(usize) -> f64| (0..a.len()).map(f).collect::<Vec<_>>();
    let (mu_a, ..) = filter(a, width, height, &k);
    let (mu_b, ..) = filter(b, width, height, &k);
    let (e_aa, ..) = filter(&prod(&|i| a[i] * a[i]), width, height, &k);
    let (e_bb, ..) = filter(&prod(&|i| b[i] * b[i]), width, height, &k);
    let (e_ab, ..) = filter(&prod(&|i| a[i] * b[i]), width, height, &k);
    let (c1, c2) = (params.c1(), params.c2());
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = e_aa[i] - ma * ma;
            let var_b = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2))
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}

/// SSIM of two images with values in [-1, 1].
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(Error::Shape(format!(
            "cannot compare {}x{} with {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    ssim_planes(&luminance(a), &luminance(b), a.width(), a.height(), &SsimParams::default())
}
