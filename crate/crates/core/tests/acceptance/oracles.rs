//! Direct scalar re-evaluations of the library's vectorized math.

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const CPU: Device = Device::Cpu;

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(data, shape, &CPU).unwrap()
}

pub fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `-log(exp(v·v+/τ) / (exp(v·v+/τ) + Σ_n exp(v·v-_n/τ)))`, term by term.
pub fn info_nce_scalar(v: &[f64], pos: &[f64], negs: &[Vec<f64>], tau: f64) -> f64 {
    let p = (dot(v, pos) / tau).exp();
    let n: f64 = negs.iter().map(|u| (dot(v, u) / tau).exp()).sum();
    -(p / (p + n)).ln()
}

/// Outcome of a finite-difference sweep.
pub struct GradReport {
    pub passed: usize,
    pub total: usize,
}

/// Central differences with step `eps` against autodiff, for every element
/// of every input. A coordinate passes when the two agree to `rel_tol`
/// relative to the larger magnitude, or both are below 1e-8.
pub fn grad_check(inputs: &[Tensor], eps: f64, rel_tol: f64, f: &dyn Fn(&[Tensor]) -> Tensor) -> GradReport {
    let vars: Vec<Var> = inputs.iter().map(|t| Var::from_tensor(t).unwrap()).collect();
    let live: Vec<Tensor> = vars.iter().map(|v| v.as_tensor().clone()).collect();
    let grads = f(&live).backward().unwrap();
    let mut report = GradReport { passed: 0, total: 0 };
    for (i, v) in vars.iter().enumerate() {
        let analytic: Vec<f64> = match grads.get(v.as_tensor()) {
            Some(g) => g.flatten_all().unwrap().to_vec1().unwrap(),
            None => vec![0.0; v.elem_count()],
        };
        let base: Vec<f64> = inputs[i].flatten_all().unwrap().to_vec1().unwrap();
        for j in 0..base.len() {
            let at = |delta: f64| {
                let mut moved = base.clone();
                moved[j] += delta;
                let mut args = inputs.to_vec();
                args[i] = Tensor::from_vec(moved, inputs[i].shape(), &CPU).unwrap();
                scalar(&f(&args))
            };
            let numeric = (at(eps) - at(-eps)) / (2.0 * eps);
            let diff = (analytic[j] - numeric).abs();
            report.total += 1;
            if diff <= rel_tol * analytic[j].abs().max(numeric.abs()) || diff < 1e-8 {
                report.passed += 1;
            }
        }
    }
    report
}

/// Normalized 2-D Gaussian window built directly from its definition.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<Vec<f64>> {
    let c = (size as f64 - 1.0) / 2.0;
    let mut w: Vec<Vec<f64>> = (0..size)
        .map(|i| {
            (0..size)
                .map(|j| {
                    let (di, dj) = (i as f64 - c, j as f64 - c);
                    (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp()
                })
                .collect()
        })
        .collect();
    let total: f64 = w.iter().flatten().sum();
    for row in &mut w {
        for v in row {
            *v /= total;
        }
    }
    w
}

/// Mean SSIM over every fully contained window, with weighted means,
/// centered variances and covariance evaluated per window.
pub fn ssim_brute_force(a: &[f64], b: &[f64], width: usize, height: usize) -> f64 {
    let w = gaussian_window(11, 1.5);
    let n = w.len();
    let (c1, c2) = ((0.01f64).powi(2), (0.03f64).powi(2));
    let (mut total, mut count) = (0.0, 0usize);
    for y0 in 0..=height - n {
        for x0 in 0..=width - n {
            let at = |p: &[f64], i: usize, j: usize| p[(y0 + i) * width + x0 + j];
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    ma += w[i][j] * at(a, i, j);
                    mb += w[i][j] * at(b, i, j);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let (da, db) = (at(a, i, j) - ma, at(b, i, j) - mb);
                    va += w[i][j] * da * da;
                    vb += w[i][j] * db * db;
                    cov += w[i][j] * da * db;
                }
            }
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}
