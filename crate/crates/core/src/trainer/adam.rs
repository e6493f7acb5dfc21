use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

use super::TrainError;

/// Adam moments for one parameter set. Moment shapes mirror the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn matches(&self, params: &[Tensor]) -> bool {
        self.first.len() == params.len()
            && self.second.len() == params.len()
            && params
                .iter()
                .zip(self.first.iter().zip(&self.second))
                .all(|(p, (m, v))| p.shape() == m.shape() && p.shape() == v.shape())
    }
}

/// One bias-corrected Adam update. Nothing is modified when any gradient is
/// non-finite.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    names: &[String],
    state: &mut AdamState,
    learning_rate: f64,
) -> Result<(), TrainError> {
    if grads.len() != params.len() || !state.matches(params) {
        return Err(TrainError::Config(
            "gradients, parameters and optimizer state disagree in shape".into(),
        ));
    }
    for (k, (g, p)) in grads.iter().zip(params.iter()).enumerate() {
        if g.shape() != p.shape() {
            return Err(TrainError::Config(format!(
                "gradient of {} has shape {:?}, parameter {:?}",
                names.get(k).map(String::as_str).unwrap_or("?"),
                g.shape(),
                p.shape()
            )));
        }
        if g.data().iter().any(|v| !v.is_finite()) {
            return Err(TrainError::NonFiniteGradient {
                param: names.get(k).cloned().unwrap_or_else(|| format!("#{k}")),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let correct1 = 1.0 - b1.powi(t);
    let correct2 = 1.0 - b2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first.iter_mut().zip(state.second.iter_mut()))
    {
        let iter = p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
        for ((x, &gi), (mi, vi)) in iter {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / correct1;
            let v_hat = *vi / correct2;
            *x -= learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    #[test]
    fn hand_computed_first_step() {
        // f(x) = x^2 at x = 1: g = 2, m = 0.2, v = 0.004, m_hat = 2, v_hat = 4
        let mut x = vec![Tensor::scalar(1.0)];
        let mut state = AdamState::new(&x);
        let g = vec![Tensor::scalar(2.0)];
        adam_step(&mut x, &g, &names(1), &mut state, 0.1).unwrap();
        let expected = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
        assert!((x[0].item() - expected).abs() < 1e-15);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn constant_gradient_steps_approach_learning_rate() {
        let mut x = vec![Tensor::scalar(0.0)];
        let mut state = AdamState::new(&x);
        let g = vec![Tensor::scalar(0.37)];
        let mut last = 0.0;
        for _ in 0..2000 {
            let before = x[0].item();
            adam_step(&mut x, &g, &names(1), &mut state, 0.01).unwrap();
            last = before - x[0].item();
        }
        assert!((last - 0.01).abs() < 1e-6, "{last}");
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = vec![Tensor::scalar(1.0), Tensor::zeros(&[2])];
        let mut state = AdamState::new(&p);
        let g = vec![Tensor::scalar(1.0), Tensor::vector(vec![0.0, f64::NAN]).unwrap()];
        let before = p.clone();
        match adam_step(&mut p, &g, &names(2), &mut state, 0.1) {
            Err(TrainError::NonFiniteGradient { param }) => assert_eq!(param, "p1"),
            other => panic!("{other:?}"),
        }
        assert_eq!(p, before);
        assert_eq!(state.step, 0);
    }

    proptest! {
        #[test]
        fn zero_gradient_leaves_parameters(values in prop::collection::vec(-10.0f64..10.0, 1..16)) {
            let mut p = vec![Tensor::vector(values.clone()).unwrap()];
            let mut state = AdamState::new(&p);
            let g = vec![Tensor::zeros(&[values.len()])];
            adam_step(&mut p, &g, &names(1), &mut state, 0.5).unwrap();
            prop_assert_eq!(p[0].data(), values.as_slice());
            prop_assert_eq!(state.step, 1);
        }
    }
}
