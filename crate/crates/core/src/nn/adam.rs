use ndarray::{ArrayD, Zip};

use super::layers::Param;

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    t: u32,
    moments: Vec<(ArrayD<f32>, ArrayD<f32>)>,
}

impl Adam {
    pub fn new(lr: f32, beta1: f32, beta2: f32) -> Self {
        Self { lr, beta1, beta2, eps: 1e-8, t: 0, moments: Vec::new() }
    }

    pub fn steps_taken(&self) -> u32 {
        self.t
    }

    /// Applies one update to `params` using their accumulated gradients.
    ///
    /// The parameter list must be passed in the same order on every call.
    pub fn step(&mut self, params: &mut [&mut Param]) {
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| (ArrayD::zeros(p.value.raw_dim()), ArrayD::zeros(p.value.raw_dim())))
                .collect();
        }
        assert_eq!(self.moments.len(), params.len(), "parameter list changed between steps");
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let (lr, eps) = (self.lr, self.eps);
        for (p, (m, v)) in params.iter_mut().zip(self.moments.iter_mut()) {
            Zip::from(&mut p.value)
                .and(&p.grad)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mhat = *m / c1;
                    let vhat = *v / c2;
                    *w -= lr * mhat / (vhat.sqrt() + eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // bias correction makes the first step exactly lr * sign(g) (up to eps)
        let mut p = Param::new(ndarray::arr1(&[1.0f32, -2.0]).into_dyn());
        p.grad = ndarray::arr1(&[0.3f32, -5.0]).into_dyn();
        let mut opt = Adam::new(0.001, 0.5, 0.999);
        opt.step(&mut [&mut p]);
        assert!((p.value[0] - 0.999).abs() < 1e-6);
        assert!((p.value[1] + 1.999).abs() < 1e-6);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = Param::new(ndarray::arr1(&[3.0f32]).into_dyn());
        let mut opt = Adam::new(0.05, 0.9, 0.999);
        for _ in 0..2000 {
            p.grad[0] = 2.0 * p.value[0];
            opt.step(&mut [&mut p]);
        }
        assert!(p.value[0].abs() < 1e-2);
    }
}
