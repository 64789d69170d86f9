use super::network::{DuelingQNetwork, Gradients};
use crate::scalar::Scalar;

/// Plain RMSprop: no momentum, no centering.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp<T> {
    pub learning_rate: T,
    pub rho: T,
    pub eps: T,
    /// Rescale gradients whose global norm exceeds this value. Off by default.
    pub clip_norm: Option<T>,
    accumulators: Vec<Vec<T>>,
}

impl<T: Scalar> RmsProp<T> {
    pub fn new(learning_rate: T, shapes: &[usize]) -> Self {
        Self {
            learning_rate,
            rho: T::from_f64_lossy(0.99),
            eps: T::from_f64_lossy(1e-8),
            clip_norm: None,
            accumulators: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn for_network(learning_rate: T, net: &DuelingQNetwork<T>) -> Self {
        let shapes: Vec<usize> = net.tensors().iter().map(|t| t.len()).collect();
        Self::new(learning_rate, &shapes)
    }

    pub fn accumulators(&self) -> &[Vec<T>] {
        &self.accumulators
    }

    /// Applies one update to `params` in place.
    pub fn step_tensors(&mut self, params: &mut [&mut Vec<T>], grads: &Gradients<T>) {
        assert_eq!(params.len(), self.accumulators.len(), "parameter list differs from optimizer state");
        assert_eq!(grads.tensors.len(), self.accumulators.len(), "gradient list differs from optimizer state");
        let scale = match self.clip_norm {
            Some(max) => {
                let norm = grads.global_norm();
                if norm > max {
                    max / norm
                } else {
                    T::one()
                }
            }
            None => T::one(),
        };
        let one_minus_rho = T::one() - self.rho;
        for ((p, g), acc) in params.iter_mut().zip(&grads.tensors).zip(&mut self.accumulators) {
            assert_eq!(p.len(), g.len());
            for ((pi, &gi), ai) in p.iter_mut().zip(g).zip(acc.iter_mut()) {
                let gi = gi * scale;
                *ai = self.rho * *ai + one_minus_rho * gi * gi;
                *pi -= self.learning_rate * gi / (ai.sqrt() + self.eps);
            }
        }
    }

    pub fn step(&mut self, net: &mut DuelingQNetwork<T>, grads: &Gradients<T>) {
        let mut params = net.tensors_mut();
        self.step_tensors(&mut params, grads);
    }
}
