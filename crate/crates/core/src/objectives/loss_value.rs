use candle_core::{DType, Tensor};

use crate::error::{Error, Result};

/// One named, weighted sub-loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerm {
    pub name: String,
    pub weight: f64,
    pub value: f64,
}

/// A differentiable total plus its named components.
///
/// [`LossValue::value`] is the weighted sum of the component values in f64;
/// [`LossValue::tensor`] is the same sum as a graph node for backprop.
#[derive(Debug, Clone)]
pub struct LossValue {
    total: Tensor,
    terms: Vec<LossTerm>,
}

impl LossValue {
    pub fn single(name: &str, loss: Tensor) -> Result<Self> {
        Self::weighted(vec![(name, 1.0, loss)])
    }

    pub fn weighted(parts: Vec<(&str, f64, Tensor)>) -> Result<Self> {
        let mut total: Option<Tensor> = None;
        let mut terms = Vec::with_capacity(parts.len());
        for (name, weight, t) in parts {
            let t = if t.rank() == 0 { t } else { t.reshape(())? };
            let value = t.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            if !value.is_finite() {
                return Err(Error::Numerical(format!("loss component `{name}` is {value}")));
            }
            let scaled = (&t * weight)?;
            total = Some(match total {
                None => scaled,
                Some(acc) => (acc + scaled)?,
            });
            terms.push(LossTerm {
                name: name.to_string(),
                weight,
                value,
            });
        }
        let total = total.ok_or_else(|| Error::InvalidInput("loss has no components".into()))?;
        Ok(Self { total, terms })
    }

    pub fn value(&self) -> f64 {
        self.terms.iter().map(|t| t.weight * t.value).sum()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.total
    }

    pub fn terms(&self) -> &[LossTerm] {
        &self.terms
    }

    pub fn component(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.name == name).map(|t| t.value)
    }
}
