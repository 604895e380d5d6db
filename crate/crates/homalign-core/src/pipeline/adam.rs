//! Adam with bias-corrected first and second moments.

use alloc::vec::Vec;

use crate::element::Element;
use crate::tensor::Tensor;
#[allow(unused_imports)]
use num_traits::Float;

#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Per-parameter moment buffers plus the shared step counter.
#[derive(Clone, Debug)]
pub struct AdamState<E: Element = f64> {
    m: Vec<Tensor<E>>,
    v: Vec<Tensor<E>>,
    step: u64,
}

impl<E: Element> AdamState<E> {
    pub fn new(params: &[Tensor<E>]) -> Self {
        Self {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One update: `θ ← θ − lr·m̂/(√v̂ + ε)`. Parameters with a missing gradient
/// receive a zero gradient (their moments decay).
pub fn adam_step<E: Element>(
    params: &mut [Tensor<E>],
    grads: &[Option<Tensor<E>>],
    state: &mut AdamState<E>,
    hyper: &AdamHyper,
) {
    debug_assert_eq!(params.len(), grads.len());
    debug_assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let t = state.step as i32;
    let b1 = E::from_f64(hyper.beta1);
    let b2 = E::from_f64(hyper.beta2);
    let lr = E::from_f64(hyper.learning_rate);
    let eps = E::from_f64(hyper.epsilon);
    let corr1 = E::one() / (E::one() - b1.powi(t));
    let corr2 = E::one() / (E::one() - b2.powi(t));

    for i in 0..params.len() {
        let n = params[i].numel();
        let zero;
        let g: &[E] = match &grads[i] {
            Some(g) => {
                debug_assert_eq!(g.shape(), params[i].shape());
                g.data()
            }
            None => {
                zero = alloc::vec![E::zero(); n];
                &zero
            }
        };
        let mut m = state.m[i].data().to_vec();
        let mut v = state.v[i].data().to_vec();
        let mut p = params[i].data().to_vec();
        for j in 0..n {
            m[j] = b1 * m[j] + (E::one() - b1) * g[j];
            v[j] = b2 * v[j] + (E::one() - b2) * g[j] * g[j];
            let m_hat = m[j] * corr1;
            let v_hat = v[j] * corr2;
            p[j] = p[j] - lr * m_hat / (v_hat.sqrt() + eps);
        }
        state.m[i] = Tensor::from_vec(params[i].shape(), m).expect("moment shape");
        state.v[i] = Tensor::from_vec(params[i].shape(), v).expect("moment shape");
        params[i] = Tensor::from_vec(params[i].shape(), p).expect("param shape");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_from_fresh_state_leaves_parameters_unchanged() {
        let mut params = vec![Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap()];
        let before = params[0].clone();
        let mut state = AdamState::new(&params);
        for _ in 0..5 {
            adam_step(&mut params, &[None], &mut state, &AdamHyper::default());
        }
        assert_eq!(params[0], before);
        assert_eq!(state.step_count(), 5);
    }

    #[test]
    fn first_step_with_unit_gradient_moves_by_about_lr() {
        let hyper = AdamHyper { learning_rate: 1e-3, ..AdamHyper::default() };
        let mut params = vec![Tensor::scalar(0.0f64)];
        let mut state = AdamState::new(&params);
        adam_step(
            &mut params,
            &[Some(Tensor::scalar(1.0))],
            &mut state,
            &hyper,
        );
        // Bias-corrected m̂ = v̂ = 1, so the step is −lr/(1+ε·corr).
        let got = params[0].item();
        assert!((got + hyper.learning_rate).abs() < 1e-6 * hyper.learning_rate + 1e-12);
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(x) = ½‖x − c‖², gradient x − c.
        let c = [3.0, -1.5, 0.25];
        let mut params = vec![Tensor::from_vec(&[3], vec![0.0; 3]).unwrap()];
        let mut state = AdamState::new(&params);
        let hyper = AdamHyper { learning_rate: 0.05, ..AdamHyper::default() };
        let loss = |p: &Tensor<f64>| -> f64 {
            p.data().iter().zip(&c).map(|(x, c)| 0.5 * (x - c) * (x - c)).sum()
        };
        let mut history = Vec::new();
        for _ in 0..300 {
            let g: Vec<f64> = params[0].data().iter().zip(&c).map(|(x, c)| x - c).collect();
            let g = Tensor::from_vec(&[3], g).unwrap();
            adam_step(&mut params, &[Some(g)], &mut state, &hyper);
            history.push(loss(&params[0]));
        }
        // Adam oscillates at a fixed step size, so compare window means
        // after burn-in rather than per-step monotonicity.
        let window = |range: core::ops::Range<usize>| -> f64 {
            let n = range.len() as f64;
            history[range].iter().sum::<f64>() / n
        };
        assert!(window(50..150) > window(150..250));
        assert!(window(150..250) > window(250..300));
        assert!(history[299] < 1e-2, "final loss {}", history[299]);
    }
}
