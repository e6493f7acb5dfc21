//! Central finite-difference gradient checking.

use super::tape::{Tape, Var};
use super::tensor::{Tensor, TensorError};

/// Outcome of [`grad_check`]. `worst_param`/`worst_index` locate the entry with
/// the largest relative error.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: usize,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub entries_checked: usize,
}

/// Relative error used throughout: `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn evaluate<F, E>(params: &[Tensor], f: &mut F) -> Result<(Tape, Vec<Var>, Var), E>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    Ok((tape, vars, loss))
}

fn scalar_loss(tape: &Tape, loss: Var, location: impl Fn() -> String) -> Result<f64, TensorError> {
    let v = tape.value(loss);
    if !v.is_scalar() {
        return Err(TensorError::NonScalarLoss {
            shape: v.shape().to_vec(),
        });
    }
    let x = v.item();
    if !x.is_finite() {
        return Err(TensorError::NonFinite {
            location: location(),
            value: x,
        });
    }
    Ok(x)
}

/// Compares tape gradients of `f` against central differences at every entry of
/// every parameter. `f` builds a scalar loss from parameter handles and must be
/// deterministic.
pub fn grad_check<F, E>(params: &[Tensor], epsilon: f64, mut f: F) -> Result<GradCheckReport, E>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    if !(epsilon > 0.0) {
        return Err(TensorError::Invalid(format!("epsilon must be positive, got {epsilon}")).into());
    }
    let (mut tape, vars, loss) = evaluate(params, &mut f)?;
    scalar_loss(&tape, loss, || "loss at base point".into())?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.shape()))
        })
        .collect();
    for (pi, g) in analytic.iter().enumerate() {
        g.check_finite(&format!("gradient of param {pi}"))?;
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: 0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        entries_checked: 0,
    };
    let mut work: Vec<Tensor> = params.to_vec();
    for pi in 0..params.len() {
        for i in 0..params[pi].numel() {
            let orig = params[pi].data()[i];
            work[pi].data_mut()[i] = orig + epsilon;
            let (tp, _, lp) = evaluate(&work, &mut f)?;
            let fp = scalar_loss(&tp, lp, || format!("param {pi} entry {i} (+eps)"))?;
            work[pi].data_mut()[i] = orig - epsilon;
            let (tm, _, lm) = evaluate(&work, &mut f)?;
            let fm = scalar_loss(&tm, lm, || format!("param {pi} entry {i} (-eps)"))?;
            work[pi].data_mut()[i] = orig;

            let numeric = (fp - fm) / (2.0 * epsilon);
            let a = analytic[pi].data()[i];
            let err = relative_error(a, numeric);
            report.entries_checked += 1;
            if err > report.max_rel_error || report.entries_checked == 1 {
                report.max_rel_error = err;
                report.worst_param = pi;
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let x = Tensor::vector(vec![0.3, -1.2, 2.5]).unwrap();
        let r = grad_check::<_, TensorError>(&[x], 1e-5, |tape, p| {
            let sq = tape.mul(p[0], p[0])?;
            Ok(tape.sum(sq))
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert_eq!(r.entries_checked, 3);
    }

    #[test]
    fn sigmoid_chain() {
        let x = Tensor::vector(vec![1.0, -0.4]).unwrap();
        let r = grad_check::<_, TensorError>(&[x], 1e-5, |tape, p| {
            let a = tape.sigmoid(p[0]);
            let b = tape.scale(a, 3.0);
            let c = tape.sigmoid(b);
            Ok(tape.sum(c))
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn non_finite_is_reported_with_location() {
        let x = Tensor::scalar(1.0);
        let err = grad_check::<_, TensorError>(&[x], 1e-5, |tape, p| {
            let big = tape.scale(p[0], f64::INFINITY);
            Ok(tape.sum(big))
        })
        .unwrap_err();
        assert!(matches!(err, TensorError::NonFinite { .. }));
    }

    #[test]
    fn rejects_nonpositive_epsilon() {
        let r = grad_check::<_, TensorError>(&[Tensor::scalar(1.0)], 0.0, |tape, p| {
            Ok(tape.sum(p[0]))
        });
        assert!(r.is_err());
    }
}
