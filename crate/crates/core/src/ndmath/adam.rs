use super::tensor::Tensor;
use crate::{Error, Result};

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(lr: f64, shapes: &[Vec<usize>]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    /// One update. Parameters are untouched when any gradient is rejected.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape {
                context: "adam parameter count".into(),
                expected: vec![self.m.len()],
                got: vec![params.len(), grads.len()],
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.m[i].shape() || g.shape() != self.m[i].shape() {
                return Err(Error::Shape {
                    context: format!("adam parameter {i}"),
                    expected: self.m[i].shape().to_vec(),
                    got: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter {i}")));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((pj, &gj), mj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mj = b1 * *mj + (1.0 - b1) * gj;
                *vj = b2 * *vj + (1.0 - b2) * gj * gj;
                let m_hat = *mj / bc1;
                let v_hat = *vj / bc2;
                *pj -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = Tensor::vector(vec![1.0, -2.0]);
        let mut adam = AdamState::new(0.1, &[vec![2]]);
        adam.step(&mut [&mut p], &[Tensor::vector(vec![0.0, 0.0])]).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
        assert_eq!(adam.m[0].data(), &[0.0, 0.0]);
        assert_eq!(adam.v[0].data(), &[0.0, 0.0]);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        // m = 0.1 g, v = 0.001 g^2; m_hat = g, v_hat = g^2; update = lr * g / (|g| + eps)
        let g = [0.5, -3.0, 1e-3];
        let lr = 0.01;
        let mut p = Tensor::vector(vec![0.0; 3]);
        let mut adam = AdamState::new(lr, &[vec![3]]);
        adam.step(&mut [&mut p], &[Tensor::vector(g.to_vec())]).unwrap();
        for (pj, gj) in p.data().iter().zip(g) {
            let expected = -lr * gj / (gj.abs() + 1e-8);
            assert!((pj - expected).abs() < 1e-15, "{pj} vs {expected}");
        }
    }

    #[test]
    fn constant_gradient_moves_monotonically() {
        let mut p = Tensor::vector(vec![0.0]);
        let mut adam = AdamState::new(0.05, &[vec![1]]);
        let mut prev = 0.0;
        for _ in 0..2 {
            adam.step(&mut [&mut p], &[Tensor::vector(vec![2.0])]).unwrap();
            assert!(p.data()[0] < prev);
            prev = p.data()[0];
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut a = Tensor::vector(vec![0.0]);
        let mut b = Tensor::vector(vec![0.0]);
        let mut adam = AdamState::new(0.1, &[vec![1], vec![1]]);
        let err =
            adam.step(&mut [&mut a, &mut b], &[Tensor::vector(vec![1.0]), Tensor::vector(vec![f64::NAN])]).unwrap_err();
        assert!(err.to_string().contains("parameter 1"), "{err}");
        assert_eq!(adam.step, 0);
        assert_eq!(a.data(), &[0.0]);
    }
}
