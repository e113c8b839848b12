//! Two-layer MLP prediction head.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelClass {
    Student,
    Teacher,
}

/// Hidden width of the head: `n_in` for a student, `round(√(n_in·n_out))`
/// for a teacher.
pub fn head_sizes(n_in: usize, n_out: usize, class: ModelClass) -> usize {
    match class {
        ModelClass::Student => n_in,
        ModelClass::Teacher => ((n_in * n_out) as f64).sqrt().round().max(1.0) as usize,
    }
}

#[derive(Clone)]
pub struct MlpHead {
    pub fc1_weight: Tensor,
    pub fc1_bias: Tensor,
    pub fc2_weight: Tensor,
    pub fc2_bias: Tensor,
}

impl MlpHead {
    pub fn new(n_in: usize, n_out: usize, class: ModelClass, seed: u64) -> Result<Self> {
        if n_in == 0 || n_out == 0 {
            return Err(Error::Config("head widths must be positive".into()));
        }
        let n_hidden = head_sizes(n_in, n_out, class);
        let mut rng = rng::stream(seed, "mlp-head");
        let linear = |fan_in: usize, fan_out: usize, rng: &mut rng::Rng| -> Result<(Tensor, Tensor)> {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = Tensor::uniform(&[fan_in, fan_out], -bound, bound, rng);
            let b = Tensor::uniform(&[fan_out], -bound, bound, rng);
            w.set_requires_grad(true)?;
            b.set_requires_grad(true)?;
            Ok((w, b))
        };
        let (fc1_weight, fc1_bias) = linear(n_in, n_hidden, &mut rng)?;
        let (fc2_weight, fc2_bias) = linear(n_hidden, n_out, &mut rng)?;
        Ok(MlpHead {
            fc1_weight,
            fc1_bias,
            fc2_weight,
            fc2_bias,
        })
    }

    pub fn n_in(&self) -> usize {
        self.fc1_weight.shape()[0]
    }

    pub fn n_hidden(&self) -> usize {
        self.fc1_weight.shape()[1]
    }

    pub fn n_out(&self) -> usize {
        self.fc2_weight.shape()[1]
    }

    pub fn forward(&self, features: &Tensor) -> Result<Tensor> {
        features
            .matmul(&self.fc1_weight)?
            .add(&self.fc1_bias)?
            .gelu()
            .matmul(&self.fc2_weight)?
            .add(&self.fc2_bias)
    }

    pub fn named_parameters(&self) -> Vec<(String, Tensor)> {
        vec![
            ("fc1.weight".into(), self.fc1_weight.clone()),
            ("fc1.bias".into(), self.fc1_bias.clone()),
            ("fc2.weight".into(), self.fc2_weight.clone()),
            ("fc2.bias".into(), self.fc2_bias.clone()),
        ]
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        self.named_parameters().into_iter().map(|(_, t)| t).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().iter().map(Tensor::numel).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizing_rule() {
        assert_eq!(head_sizes(96, 10, ModelClass::Student), 96);
        assert_eq!(head_sizes(192, 12, ModelClass::Teacher), 48);
        assert_eq!(head_sizes(7, 7, ModelClass::Teacher), 7);
    }

    #[test]
    fn head_shapes_follow_sizing_rule() {
        let h = MlpHead::new(192, 12, ModelClass::Teacher, 0).unwrap();
        assert_eq!((h.n_in(), h.n_hidden(), h.n_out()), (192, 48, 12));
        let x = Tensor::zeros(&[5, 192]);
        assert_eq!(h.forward(&x).unwrap().shape(), [5, 12]);
    }
}
