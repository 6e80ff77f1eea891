use std::collections::HashMap;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};

use crate::error::{Error, Result};

const EPS: f64 = 1e-8;

/// Adam with L2 weight decay folded into the gradient.
#[derive(Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    weight_decay: f64,
    step: u64,
    params: Vec<(String, Var)>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: Vec<(String, Var)>, lr: f64, beta1: f64, beta2: f64, weight_decay: f64) -> Result<Self> {
        let m = params
            .iter()
            .map(|(_, p)| p.as_tensor().zeros_like())
            .collect::<candle_core::Result<Vec<_>>>()?;
        let v = m.clone();
        Ok(Self {
            lr,
            beta1,
            beta2,
            weight_decay,
            step: 0,
            params,
            m,
            v,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|(n, _)| n.as_str())
    }

    /// Applies one update to every parameter that received a gradient.
    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, (_, p)) in self.params.iter().enumerate() {
            let Some(g) = grads.get(p.as_tensor()) else { continue };
            // Detached so the moments do not keep each step's graph alive.
            let (g, w) = (g.detach(), p.as_tensor().detach());
            let g = if self.weight_decay != 0.0 { (g + (&w * self.weight_decay)?)? } else { g };
            let m = ((&self.m[i] * self.beta1)? + (&g * (1.0 - self.beta1))?)?;
            let v = ((&self.v[i] * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?;
            let denom = ((&v / c2)?.sqrt()? + EPS)?;
            let update = ((&m / c1)? / denom)?;
            p.set(&(w - (update * self.lr)?)?)?;
            self.m[i] = m;
            self.v[i] = v;
        }
        Ok(())
    }

    /// Moments keyed `<prefix>.m.<param>` / `<prefix>.v.<param>`.
    pub fn state_tensors(&self, prefix: &str) -> HashMap<String, Tensor> {
        let mut out = HashMap::new();
        for (i, (name, _)) in self.params.iter().enumerate() {
            out.insert(format!("{prefix}.m.{name}"), self.m[i].clone());
            out.insert(format!("{prefix}.v.{name}"), self.v[i].clone());
        }
        out
    }

    pub fn load_state(&mut self, prefix: &str, source: &HashMap<String, Tensor>, step: u64) -> Result<()> {
        for (i, (name, p)) in self.params.iter().enumerate() {
            for (kind, slot) in [("m", &mut self.m[i]), ("v", &mut self.v[i])] {
                let key = format!("{prefix}.{kind}.{name}");
                let t = source
                    .get(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer entry `{key}`")))?;
                if t.dims() != p.as_tensor().dims() {
                    return Err(Error::Checkpoint(format!(
                        "optimizer entry `{key}` has shape {:?}, expected {:?}",
                        t.dims(),
                        p.as_tensor().dims()
                    )));
                }
                *slot = t.to_dtype(p.as_tensor().dtype())?;
            }
        }
        self.step = step;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn first_step_moves_by_lr_in_sign_direction() {
        let p = Var::from_tensor(&Tensor::new(&[1.0f64, -2.0, 3.0], &Device::Cpu).unwrap()).unwrap();
        let mut opt = Adam::new(vec![("p".into(), p.clone())], 0.1, 0.9, 0.999, 0.0).unwrap();
        let loss = (p.as_tensor() * Tensor::new(&[2.0f64, -1.0, 0.5], &Device::Cpu).unwrap())
            .unwrap()
            .sum_all()
            .unwrap();
        opt.step(&loss.backward().unwrap()).unwrap();
        let v = p.as_tensor().to_vec1::<f64>().unwrap();
        let expected = [0.9, -1.9, 2.9];
        for (a, b) in v.iter().zip(expected) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn converges_on_a_quadratic_with_decay() {
        let p = Var::zeros(4, DType::F64, &Device::Cpu).unwrap();
        let target = Tensor::new(&[1.0f64, 2.0, -1.0, 0.5], &Device::Cpu).unwrap();
        let mut opt = Adam::new(vec![("p".into(), p.clone())], 0.05, 0.9, 0.999, 1e-3).unwrap();
        for _ in 0..2000 {
            let loss = (p.as_tensor() - &target).unwrap().sqr().unwrap().sum_all().unwrap();
            opt.step(&loss.backward().unwrap()).unwrap();
        }
        let v = p.as_tensor().to_vec1::<f64>().unwrap();
        // Stationary point of |p - t|^2 + (wd/2)|p|^2 is t / (1 + wd/2).
        for (a, t) in v.iter().zip([1.0, 2.0, -1.0, 0.5]) {
            assert!((a - t / (1.0 + 5e-4)).abs() < 1e-3);
        }
    }
}
