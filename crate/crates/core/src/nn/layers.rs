//! Building blocks shared by the networks.

use candle_core::{DType, Module, Tensor, Var, D};
use candle_nn::{Conv2dConfig, ConvTranspose2dConfig};

use super::params::{ParamPath, INIT_STD};
use crate::error::Result;

const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct Conv2d {
    inner: candle_nn::Conv2d,
}

impl Conv2d {
    pub fn new(
        p: &mut ParamPath<'_>,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let w = p.normal("weight", (out_c, in_c, kernel, kernel), 0.0, INIT_STD)?;
        let b = p.zeros("bias", out_c)?;
        let cfg = Conv2dConfig {
            padding,
            stride,
            dilation: 1,
            groups: 1,
            cudnn_fwd_algo: None,
        };
        Ok(Self {
            inner: candle_nn::Conv2d::new(w, Some(b), cfg),
        })
    }

    pub fn weight(&self) -> &Tensor {
        self.inner.weight()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.inner.forward(x)?)
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    inner: candle_nn::ConvTranspose2d,
}

impl ConvTranspose2d {
    pub fn new(
        p: &mut ParamPath<'_>,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Self> {
        let w = p.normal("weight", (in_c, out_c, kernel, kernel), 0.0, INIT_STD)?;
        let b = p.zeros("bias", out_c)?;
        let cfg = ConvTranspose2dConfig {
            padding,
            output_padding,
            stride,
            dilation: 1,
        };
        Ok(Self {
            inner: candle_nn::ConvTranspose2d::new(w, Some(b), cfg),
        })
    }

    pub fn weight(&self) -> &Tensor {
        self.inner.weight()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.inner.forward(x)?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    inner: candle_nn::Linear,
}

impl Linear {
    pub fn new(p: &mut ParamPath<'_>, in_dim: usize, out_dim: usize) -> Result<Self> {
        let w = p.normal("weight", (out_dim, in_dim), 0.0, INIT_STD)?;
        let b = p.zeros("bias", out_dim)?;
        Ok(Self {
            inner: candle_nn::Linear::new(w, Some(b)),
        })
    }

    pub fn weight(&self) -> &Tensor {
        self.inner.weight()
    }

    pub fn bias(&self) -> Option<&Tensor> {
        self.inner.bias()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.inner.forward(x)?)
    }
}

/// Per-sample, per-channel normalization over the spatial dims, without affine terms.
pub fn instance_norm(x: &Tensor) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?.mean_keepdim(D::Minus2)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered
        .sqr()?
        .mean_keepdim(D::Minus1)?
        .mean_keepdim(D::Minus2)?;
    Ok(centered.broadcast_div(&(var + NORM_EPS)?.sqrt()?)?)
}

/// Batch normalization with running statistics kept as non-trainable buffers.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    gamma: Tensor,
    beta: Tensor,
    running_mean: Var,
    running_var: Var,
    momentum: f64,
}

impl BatchNorm2d {
    pub fn new(p: &mut ParamPath<'_>, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: p.normal("weight", channels, 1.0, INIT_STD)?,
            beta: p.zeros("bias", channels)?,
            running_mean: p.buffer("running_mean", channels, 0.0)?,
            running_var: p.buffer("running_var", channels, 1.0)?,
            momentum: 0.1,
        })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let c = x.dim(1)?;
        let (mean, var) = if train {
            let mean = x.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
            let centered = x.broadcast_sub(&mean)?;
            let var = centered
                .sqr()?
                .mean_keepdim(0)?
                .mean_keepdim(2)?
                .mean_keepdim(3)?;
            let n = x.elem_count() / c;
            let unbiased = if n > 1 {
                (var.detach() * (n as f64 / (n - 1) as f64))?
            } else {
                var.detach()
            };
            let m = self.momentum;
            let new_mean = ((self.running_mean.as_tensor() * (1.0 - m))?
                + (mean.detach().flatten_all()? * m)?)?;
            let new_var = ((self.running_var.as_tensor() * (1.0 - m))?
                + (unbiased.flatten_all()? * m)?)?;
            self.running_mean.set(&new_mean)?;
            self.running_var.set(&new_var)?;
            (mean, var)
        } else {
            (
                self.running_mean.as_tensor().reshape((1, c, 1, 1))?,
                self.running_var.as_tensor().reshape((1, c, 1, 1))?,
            )
        };
        let x = x
            .broadcast_sub(&mean)?
            .broadcast_div(&(var + NORM_EPS)?.sqrt()?)?;
        let x = x.broadcast_mul(&self.gamma.reshape((1, c, 1, 1))?)?;
        Ok(x.broadcast_add(&self.beta.reshape((1, c, 1, 1))?)?)
    }
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

/// Reflection padding on the last two dims (edge pixel not repeated).
pub fn reflection_pad2d(x: &Tensor, pad: usize) -> Result<Tensor> {
    if pad == 0 {
        return Ok(x.clone());
    }
    let (_, _, h, w) = x.dims4()?;
    if pad >= h || pad >= w {
        return Err(crate::error::Error::Shape(format!(
            "reflection pad {pad} needs spatial dims > {pad}, got {h}x{w}"
        )));
    }
    let idx = |n: usize| -> Result<Tensor> {
        let ids: Vec<u32> = (0..n + 2 * pad)
            .map(|i| {
                let j = i as i64 - pad as i64;
                let r = if j < 0 {
                    -j
                } else if j >= n as i64 {
                    2 * (n as i64 - 1) - j
                } else {
                    j
                };
                r as u32
            })
            .collect();
        Ok(Tensor::from_vec(ids, n + 2 * pad, x.device())?)
    };
    let x = x.index_select(&idx(w)?, 3)?;
    Ok(x.index_select(&idx(h)?, 2)?)
}

pub fn max_pool_3x3_s2(x: &Tensor) -> Result<Tensor> {
    // Pad with the most negative value so padding never wins the max.
    let (_, _, h, w) = x.dims4()?;
    let lowest = match x.dtype() {
        DType::F64 => f64::MIN,
        _ => f32::MIN as f64,
    };
    let x = x.pad_with_zeros(2, 1, 1)?.pad_with_zeros(3, 1, 1)?;
    let mask = Tensor::ones((h, w), x.dtype(), x.device())?
        .pad_with_zeros(0, 1, 1)?
        .pad_with_zeros(1, 1, 1)?;
    let fill = ((mask.ones_like()? - &mask)? * lowest)?;
    let x = x.broadcast_add(&fill)?;
    // candle's max-pool has no padding argument; windows of 3 with stride 2
    // are assembled from strided slices.
    let out_h = (h + 2 - 3) / 2 + 1;
    let out_w = (w + 2 - 3) / 2 + 1;
    let mut acc: Option<Tensor> = None;
    for dy in 0..3 {
        for dx in 0..3 {
            let rows = strided_index(dy, out_h, x.device())?;
            let cols = strided_index(dx, out_w, x.device())?;
            let s = x.index_select(&rows, 2)?.index_select(&cols, 3)?;
            acc = Some(match acc {
                None => s,
                Some(a) => a.maximum(&s)?,
            });
        }
    }
    Ok(acc.expect("3x3 window"))
}

fn strided_index(start: usize, n: usize, device: &candle_core::Device) -> Result<Tensor> {
    let ids: Vec<u32> = (0..n).map(|i| (start + 2 * i) as u32).collect();
    Ok(Tensor::from_vec(ids, n, device)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::ParamStore;
    use candle_core::Device;

    #[test]
    fn reflection_pad_matches_definition() {
        let x = Tensor::arange(0f32, 9., &Device::Cpu)
            .unwrap()
            .reshape((1, 1, 3, 3))
            .unwrap();
        let y = reflection_pad2d(&x, 1).unwrap();
        let rows = y.squeeze(0).unwrap().squeeze(0).unwrap().to_vec2::<f32>().unwrap();
        assert_eq!(rows[0], vec![4., 3., 4., 5., 4.]);
        assert_eq!(rows[1], vec![1., 0., 1., 2., 1.]);
        assert_eq!(rows[4], vec![4., 3., 4., 5., 4.]);
    }

    #[test]
    fn instance_norm_zero_mean_unit_var() {
        let x = Tensor::randn(3f32, 2., (2, 3, 5, 5), &Device::Cpu).unwrap();
        let y = instance_norm(&x).unwrap();
        let m = y.mean_keepdim(3).unwrap().mean_keepdim(2).unwrap();
        let max_mean = m.abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(max_mean < 1e-5);
        let v = y.sqr().unwrap().mean_keepdim(3).unwrap().mean_keepdim(2).unwrap();
        let v = v.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(v.iter().all(|v| (v - 1.0).abs() < 1e-3));
    }

    #[test]
    fn max_pool_shape_and_values() {
        let x = Tensor::arange(0f32, 16., &Device::Cpu)
            .unwrap()
            .reshape((1, 1, 4, 4))
            .unwrap();
        let y = (max_pool_3x3_s2(&x).unwrap() * 1.0).unwrap();
        assert_eq!(y.dims(), &[1, 1, 2, 2]);
        let v = y.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(v, vec![5., 7., 13., 15.]);
        let neg = (x.neg().unwrap() - 1.0).unwrap();
        let v = max_pool_3x3_s2(&neg).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(v, vec![-1., -2., -5., -6.]);
    }

    #[test]
    fn batch_norm_updates_running_stats_in_train_mode_only() {
        let mut store = ParamStore::new(0, DType::F32);
        let bn = BatchNorm2d::new(&mut store.root().pp("bn"), 2).unwrap();
        let x = (Tensor::randn(0f32, 1., (4, 2, 3, 3), &Device::Cpu).unwrap() + 5.0).unwrap();
        let before = store.fingerprint("bn").unwrap();
        bn.forward(&x, false).unwrap();
        assert_eq!(before, store.fingerprint("bn").unwrap());
        bn.forward(&x, true).unwrap();
        assert_ne!(before, store.fingerprint("bn").unwrap());
        let rm = store
            .get("bn.running_mean")
            .unwrap()
            .as_tensor()
            .to_vec1::<f32>()
            .unwrap();
        assert!(rm.iter().all(|&m| (m - 0.5).abs() < 0.1));
    }
}
