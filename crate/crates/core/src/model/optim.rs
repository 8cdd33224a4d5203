use crate::error::{Result, VrdError};

/// AdaGrad: `acc += g²; θ −= lr · g / (√acc + ε)` per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaGradState {
    pub accumulated: Vec<f64>,
    pub learning_rate: f64,
    pub epsilon: f64,
}

impl AdaGradState {
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        AdaGradState {
            accumulated: vec![0.0; n_params],
            learning_rate,
            epsilon: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.accumulated.len() || grads.len() != params.len() {
            return Err(VrdError::shape(format!(
                "AdaGrad state holds {} parameters, got {} params / {} grads",
                self.accumulated.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, &g), acc) in params.iter_mut().zip(grads).zip(&mut self.accumulated) {
            *acc += g * g;
            *p -= self.learning_rate * g / (acc.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = AdaGradState::new(3, 0.1);
        let mut p = vec![1.0, -2.0, 3.0];
        s.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_closed_form() {
        let mut s = AdaGradState::new(1, 0.1);
        let mut p = vec![0.0];
        s.step(&mut p, &[1.0]).unwrap();
        assert!((p[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn divisor_accumulates() {
        let mut s = AdaGradState::new(1, 1.0);
        let mut p = vec![0.0];
        s.step(&mut p, &[3.0]).unwrap();
        let before = p[0];
        s.step(&mut p, &[4.0]).unwrap();
        assert!((before - p[0] - 4.0 / (5.0 + 1e-8)).abs() < 1e-14);
        assert_eq!(s.accumulated, vec![25.0]);
    }

    #[test]
    fn shape_mismatch() {
        let mut s = AdaGradState::new(2, 0.1);
        assert!(s.step(&mut [0.0; 3], &[0.0; 3]).is_err());
    }
}
