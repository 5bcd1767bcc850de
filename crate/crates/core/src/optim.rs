//! Adam with bias correction and the exponential learning-rate decay used by
//! the deformation stage.

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    config: &AdamConfig,
) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let AdamConfig {
        beta1,
        beta2,
        epsilon,
    } = *config;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    for ((p, &g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
    }
}

/// `lr_start · (lr_end / lr_start)^(step / total)`.
pub fn lr_schedule(step: usize, total: usize, lr_start: f64, lr_end: f64) -> f64 {
    if total == 0 {
        return lr_start;
    }
    let frac = (step.min(total)) as f64 / total as f64;
    lr_start * (lr_end / lr_start).powf(frac)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_leaves_params_unchanged() {
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, 0.1, &AdamConfig::default());
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(s.step, 1);
        assert_eq!(s.m, vec![0.0, 0.0]);
    }

    #[test]
    fn moments_decay_under_zero_grad() {
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        let cfg = AdamConfig::default();
        adam_step(&mut p, &[1.0], &mut s, 0.1, &cfg);
        let (m, v) = (s.m[0], s.v[0]);
        adam_step(&mut p, &[0.0], &mut s, 0.1, &cfg);
        assert_eq!(s.m[0], m * 0.9);
        assert_eq!(s.v[0], v * 0.999);
    }

    #[test]
    fn first_step_is_sign_scaled() {
        // m̂ = g, v̂ = g², so the step is lr · g / (|g| + ε)
        let mut p = vec![0.0, 0.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.5, -3.0], &mut s, 0.01, &AdamConfig::default());
        assert!((p[0] + 0.01 * 0.5 / (0.5 + 1e-8)).abs() < 1e-15);
        assert!((p[1] - 0.01 * 3.0 / (3.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn matches_reference_over_two_steps() {
        fn reference(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], t: i32, lr: f64) {
            for i in 0..p.len() {
                m[i] = 0.9 * m[i] + 0.1 * g[i];
                v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
                let mh = m[i] / (1.0 - 0.9f64.powi(t));
                let vh = v[i] / (1.0 - 0.999f64.powi(t));
                p[i] -= lr * mh / (vh.sqrt() + 1e-8);
            }
        }
        let g = [0.3, -0.7, 1e-3];
        let mut a = vec![1.0, 2.0, 3.0];
        let mut b = a.clone();
        let (mut m, mut v) = (vec![0.0; 3], vec![0.0; 3]);
        let mut s = AdamState::new(3);
        for t in 1..=2 {
            adam_step(&mut a, &g, &mut s, 7e-3, &AdamConfig::default());
            reference(&mut b, &g, &mut m, &mut v, t, 7e-3);
        }
        assert_eq!(a, b);
    }

    #[test]
    fn schedule_endpoints_and_midpoint() {
        assert_eq!(lr_schedule(0, 100, 1.6e-4, 1.6e-5), 1.6e-4);
        assert!((lr_schedule(100, 100, 1.6e-4, 1.6e-5) - 1.6e-5).abs() < 1e-20);
        let mid = lr_schedule(50, 100, 1.6e-4, 1.6e-5);
        assert!((mid - 1.6e-4 * 10f64.powf(-0.5)).abs() < 1e-18);
        assert!((mid - 5.06e-5).abs() < 1e-7);
        assert_eq!(lr_schedule(0, 0, 1.0, 0.5), 1.0);
    }
}
