use crate::autodiff::Tensor;
use crate::model::ModelParams;

/// Adamax: Adam with an infinity-norm second moment.
#[derive(Debug, Clone)]
pub struct Adamax {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    u: Vec<Tensor>,
}

impl Adamax {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            u: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &[Tensor], lr: f64) {
        self.step += 1;
        let rate = lr / (1.0 - self.beta1.powi(self.step as i32));
        for ((w, g), (m, u)) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.u.iter_mut()))
        {
            for (((w, g), m), u) in w
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(u.data_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *u = (self.beta2 * *u).max(g.abs());
                *w -= rate * *m / (*u + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FusionMode, ModelDims, ParamId};

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let dims = ModelDims {
            vocab: 3,
            word_dim: 2,
            feat_dim: 2,
            hidden: 2,
            answers: 2,
            max_tokens: 2,
        };
        let mut p = ModelParams::init(dims, FusionMode::None, 0).unwrap();
        let before = p.clone();
        let grads: Vec<Tensor> = p
            .tensors()
            .iter()
            .map(|t| t.with_data(t.data().iter().enumerate().map(|(i, _)| if i % 2 == 0 { 0.5 } else { -2.0 }).collect()))
            .collect();
        let mut opt = Adamax::new(&p);
        opt.step(&mut p, &grads, 0.01);
        let a = before.get(ParamId::ObjectW).data();
        let b = p.get(ParamId::ObjectW).data();
        for (i, (x, y)) in a.iter().zip(b).enumerate() {
            let want = if i % 2 == 0 { -0.01 } else { 0.01 };
            assert!((y - x - want).abs() < 1e-9);
        }
    }
}
