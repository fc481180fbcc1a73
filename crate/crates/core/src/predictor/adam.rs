/// Adaptive moment estimation with bias correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }

    pub fn step(&self, weights: &mut [f64], grad: &[f64], moments: &mut AdamMoments) {
        moments.step += 1;
        let t = moments.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((w, &g), m), v) in weights
            .iter_mut()
            .zip(grad)
            .zip(moments.first.iter_mut())
            .zip(moments.second.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub step: u64,
}

impl AdamMoments {
    pub fn zeros(len: usize) -> Self {
        AdamMoments {
            first: vec![0.0; len],
            second: vec![0.0; len],
            step: 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let adam = Adam::new(0.01);
        let mut w = vec![1.0, -1.0, 0.5];
        let mut m = AdamMoments::zeros(3);
        adam.step(&mut w, &[2.0, -0.5, 0.0], &mut m);
        // bias-corrected first step is lr * sign(g)
        assert!((w[0] - 0.99).abs() < 1e-8);
        assert!((w[1] + 0.99).abs() < 1e-8);
        assert_eq!(w[2], 0.5);
        assert_eq!(m.step, 1);
    }

    #[test]
    fn minimises_a_quadratic() {
        let adam = Adam::new(0.05);
        let mut w = vec![3.0, -2.0];
        let mut m = AdamMoments::zeros(2);
        for _ in 0..2000 {
            let g: Vec<f64> = w.iter().map(|x| 2.0 * (x - 1.0)).collect();
            adam.step(&mut w, &g, &mut m);
        }
        assert!(w.iter().all(|x| (x - 1.0).abs() < 1e-3), "{w:?}");
    }
}
