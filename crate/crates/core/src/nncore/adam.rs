use super::params::{Gradients, ModelParams};
use super::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }
}

/// One Adam update with bias correction and coupled weight decay. Groups
/// whose gradient is flagged inactive are skipped: no decay, no moment update.
pub fn adam_step<T: Real>(params: &mut ModelParams<T>, grads: &Gradients<T>, state: &mut AdamState<T>, hyper: &AdamHyper) {
    assert_eq!(grads.values.len(), params.values.len(), "gradient shape");
    assert_eq!(state.m.len(), params.values.len(), "moment shape");
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::from_f64(hyper.beta1), T::from_f64(hyper.beta2));
    let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
    let c1 = T::from_f64(1.0 - hyper.beta1.powi(t));
    let c2 = T::from_f64(1.0 - hyper.beta2.powi(t));
    let (lr, eps, wd) = (T::from_f64(hyper.lr), T::from_f64(hyper.eps), T::from_f64(hyper.weight_decay));
    for (group, &active) in params.layout.groups.iter().zip(&grads.active) {
        if !active {
            continue;
        }
        for i in group.range() {
            let theta = params.values[i];
            let g = grads.values[i] + wd * theta;
            let m = b1 * state.m[i] + one_b1 * g;
            let v = b2 * state.v[i] + one_b2 * g * g;
            state.m[i] = m;
            state.v[i] = v;
            let m_hat = m / c1;
            let v_hat = v / c2;
            params.values[i] = theta - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::{GroupKind, ModelConfig};

    fn tiny() -> ModelParams<f64> {
        let cfg = ModelConfig {
            resolution: 4,
            widths: vec![1],
            feature_dim: 2,
            num_sources: 2,
            dropout: 0.0,
        };
        ModelParams::init(cfg, 1).unwrap()
    }

    #[test]
    fn zero_gradient_without_decay_is_noop() {
        let mut p = tiny();
        let before = p.clone();
        let g = Gradients::zeros(&p.layout);
        let mut s = AdamState::new(p.values.len());
        let h = AdamHyper {
            weight_decay: 0.0,
            ..AdamHyper::default()
        };
        for _ in 0..3 {
            adam_step(&mut p, &g, &mut s, &h);
        }
        assert_eq!(p, before);
        assert_eq!(s.t, 3);
    }

    #[test]
    fn first_step_value() {
        let mut p = tiny();
        p.values.fill(1.0);
        let mut g = Gradients::zeros(&p.layout);
        g.values.fill(1.0);
        let mut s = AdamState::new(p.values.len());
        let h = AdamHyper {
            lr: 0.1,
            weight_decay: 0.0,
            ..AdamHyper::default()
        };
        adam_step(&mut p, &g, &mut s, &h);
        let expect = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!(p.values.iter().all(|&v| (v - expect).abs() < 1e-12));
        assert!((p.values[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn symmetric_parameters_stay_equal() {
        let mut p = tiny();
        let n = p.values.len();
        p.values.fill(0.3);
        let mut s = AdamState::new(n);
        for step in 0..25 {
            let mut g = Gradients::zeros(&p.layout);
            g.values.fill((step as f64 * 0.7).sin());
            adam_step(&mut p, &g, &mut s, &AdamHyper::default());
        }
        assert!(p.values.iter().all(|&v| v == p.values[0]));
    }

    #[test]
    fn inactive_groups_untouched() {
        let mut p = tiny();
        let before = p.get(GroupKind::SourceWeight).to_vec();
        let mut g = Gradients::zeros(&p.layout);
        g.values.fill(0.5);
        for (flag, grp) in g.active.iter_mut().zip(&p.layout.groups) {
            *flag = !grp.kind.is_source_head();
        }
        let mut s = AdamState::new(p.values.len());
        adam_step(&mut p, &g, &mut s, &AdamHyper::default());
        assert_eq!(p.get(GroupKind::SourceWeight), &before[..]);
        assert_ne!(p.get(GroupKind::CovidWeight)[0], 0.0);
    }
}
