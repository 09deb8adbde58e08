//! Adam optimizer (Kingma & Ba defaults: beta1 0.9, beta2 0.999, eps 1e-8).

#[derive(Debug, Clone)]
pub struct Adam {
    lr: f32,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(lr: f32, dim: usize) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; dim], v: vec![0.0; dim], t: 0 }
    }

    /// One bias-corrected update of `param` in place.
    pub fn step(&mut self, param: &mut [f32], grad: &[f32]) {
        debug_assert_eq!(param.len(), self.m.len());
        debug_assert_eq!(param.len(), grad.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..param.len() {
            let g = f64::from(grad[i]);
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            param[i] -= (f64::from(self.lr) * mhat / (vhat.sqrt() + self.eps)) as f32;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient() {
        // With bias correction, |update| == lr on the first step for any
        // nonzero gradient.
        let mut adam = Adam::new(0.1, 2);
        let mut p = vec![1.0f32, -2.0];
        adam.step(&mut p, &[0.5, -3.0]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut adam = Adam::new(0.05, 1);
        let mut p = vec![3.0f32];
        for _ in 0..2000 {
            let g = 2.0 * p[0];
            adam.step(&mut p, &[g]);
        }
        assert!(p[0].abs() < 1e-3, "got {}", p[0]);
    }
}
