use std::collections::BTreeMap;

use crate::networks::NetworkParams;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
}

/// Adam state of one network group. The step counter is shared by every
/// network in the group; moments are keyed `"<net>/<param>"`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState {
    pub step: u64,
    pub moments: BTreeMap<String, Moments>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Advance the shared step counter. Call once per group update, before
    /// the per-network [`adam_step`] calls.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }
}

/// Bias-corrected Adam update of every trainable entry of `params` that has a
/// gradient. `grads` is aligned with `params.entries`. Non-trainable entries
/// are never touched.
pub fn adam_step(
    params: &mut NetworkParams,
    prefix: &str,
    grads: &[Option<Tensor>],
    state: &mut OptimizerState,
    cfg: &AdamConfig,
) {
    assert!(state.step > 0, "begin_step must precede adam_step");
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (entry, grad) in params.entries.iter_mut().zip(grads) {
        let (true, Some(grad)) = (entry.trainable, grad) else {
            continue;
        };
        assert_eq!(entry.tensor.shape(), grad.shape(), "gradient shape for {}", entry.name);
        let slot = state
            .moments
            .entry(format!("{prefix}/{}", entry.name))
            .or_insert_with(|| Moments {
                m: Tensor::zeros(grad.shape()),
                v: Tensor::zeros(grad.shape()),
            });
        let w = entry.tensor.data_mut();
        let m = slot.m.data_mut();
        let v = slot.v.data_mut();
        for i in 0..w.len() {
            let g = grad.data()[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            w[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::ParamEntry;

    fn single(w: f64) -> NetworkParams {
        NetworkParams {
            entries: vec![
                ParamEntry {
                    name: "w".into(),
                    tensor: Tensor::scalar(w),
                    trainable: true,
                },
                ParamEntry {
                    name: "running".into(),
                    tensor: Tensor::scalar(7.0),
                    trainable: false,
                },
            ],
        }
    }

    const CFG: AdamConfig = AdamConfig {
        lr: 0.001,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };

    #[test]
    fn first_step_closed_form() {
        let mut p = single(0.0);
        let mut st = OptimizerState::new();
        st.begin_step();
        adam_step(
            &mut p,
            "X",
            &[Some(Tensor::scalar(1.0)), Some(Tensor::scalar(1.0))],
            &mut st,
            &CFG,
        );
        // m_hat = v_hat = 1, so the step is lr / (1 + eps).
        let w = p.entries[0].tensor.data()[0];
        assert!((w + 0.001 / (1.0 + 1e-8)).abs() < 1e-15, "{w}");
        assert_eq!(p.entries[1].tensor.data()[0], 7.0);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point_and_moments_decay() {
        let mut p = single(0.25);
        let mut st = OptimizerState::new();
        st.begin_step();
        adam_step(&mut p, "X", &[Some(Tensor::scalar(0.0)), None], &mut st, &CFG);
        assert_eq!(p.entries[0].tensor.data()[0], 0.25);

        st.moments.get_mut("X/w").unwrap().m = Tensor::scalar(0.5);
        st.moments.get_mut("X/w").unwrap().v = Tensor::scalar(0.5);
        st.begin_step();
        adam_step(&mut p, "X", &[Some(Tensor::scalar(0.0)), None], &mut st, &CFG);
        let mo = &st.moments["X/w"];
        assert!((mo.m.data()[0] - 0.45).abs() < 1e-15);
        assert!(mo.v.data()[0] < 0.5);
    }

    #[test]
    fn descends_a_parabola() {
        let mut p = single(1.0);
        let mut st = OptimizerState::new();
        let mut prev = f64::INFINITY;
        for _ in 0..100 {
            let w = p.entries[0].tensor.data()[0];
            let f = w * w;
            assert!(f < prev, "f did not decrease: {f} >= {prev}");
            prev = f;
            st.begin_step();
            adam_step(&mut p, "X", &[Some(Tensor::scalar(2.0 * w)), None], &mut st, &CFG);
        }
    }
}
