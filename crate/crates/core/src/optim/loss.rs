use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Var};

/// Which parameters the L2 penalty covers: all, minus any whose name
/// contains one of the listed fragments.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct L2Scope {
    pub exclude: Vec<String>,
}

impl L2Scope {
    pub fn includes(&self, name: &str) -> bool {
        !self.exclude.iter().any(|frag| name.contains(frag.as_str()))
    }
}

/// RMSE over every entry of an N×2 prediction.
pub fn rmse_loss<S: Scalar>(tape: &mut Tape<S>, pred: Var, target: Var) -> Result<Var> {
    let n = tape.value(pred).shape().first().copied().unwrap_or(0);
    if n == 0 {
        return Err(Error::data("loss over an empty batch"));
    }
    let diff = tape.sub(pred, target)?;
    let sq = tape.mul(diff, diff)?;
    let mse = tape.mean_all(sq)?;
    tape.sqrt(mse)
}

/// `RMSE(pred, target) + λ·Σ p²` over the in-scope parameters; the penalty
/// contributes `2λp` to each parameter gradient.
pub fn loss_with_l2<S: Scalar>(
    tape: &mut Tape<S>,
    pred: Var,
    target: Var,
    params: &[(String, Var)],
    lambda: f64,
    scope: &L2Scope,
) -> Result<Var> {
    if lambda < 0.0 {
        return Err(Error::config(format!("L2 weight must be non-negative, got {lambda}")));
    }
    let mut loss = rmse_loss(tape, pred, target)?;
    if lambda == 0.0 {
        return Ok(loss);
    }
    let mut penalty: Option<Var> = None;
    for (name, p) in params {
        if !scope.includes(name) {
            continue;
        }
        let sq = tape.mul(*p, *p)?;
        let s = tape.sum_all(sq)?;
        penalty = Some(match penalty {
            Some(acc) => tape.add(acc, s)?,
            None => s,
        });
    }
    if let Some(pen) = penalty {
        let scaled = tape.scale(pen, S::of(lambda));
        loss = tape.add(loss, scaled)?;
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let mut tape = Tape::new();
        let p = tape.leaf(t(&[1, 2], &[1.0, 2.0]).with_requires_grad(true));
        let y = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let l = loss_with_l2(&mut tape, p, y, &[], 0.0, &L2Scope::default()).unwrap();
        assert_eq!(tape.value(l).data(), &[0.0]);
        // gradient at the kink is defined (zero) rather than NaN
        tape.backward(l, &t(&[1], &[1.0])).unwrap();
        assert!(tape.grad(p).unwrap().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn hand_rmse() {
        let mut tape = Tape::new();
        let p = tape.constant(t(&[1, 2], &[0.0, 0.0]));
        let y = tape.constant(t(&[1, 2], &[3.0, 4.0]));
        let l = loss_with_l2(&mut tape, p, y, &[], 0.0, &L2Scope::default()).unwrap();
        assert!((tape.value(l).data()[0] - 3.5355339).abs() < 1e-6);
    }

    #[test]
    fn zero_params_add_no_penalty() {
        let mut tape = Tape::new();
        let p = tape.constant(t(&[1, 2], &[0.0, 0.0]));
        let y = tape.constant(t(&[1, 2], &[3.0, 4.0]));
        let w = tape.param("w", &t(&[3], &[0.0, 0.0, 0.0]));
        let params = tape.params().to_vec();
        let l = loss_with_l2(&mut tape, p, y, &params, 0.5, &L2Scope::default()).unwrap();
        assert!((tape.value(l).data()[0] - 12.5f64.sqrt()).abs() < 1e-12);
        tape.backward(l, &t(&[1], &[1.0])).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn penalty_gradient_is_two_lambda_p() {
        let mut tape = Tape::new();
        let p = tape.constant(t(&[1, 2], &[1.0, 1.0]));
        let y = tape.constant(t(&[1, 2], &[1.0, 1.0]));
        let w = tape.param("layer.weight", &t(&[2], &[0.5, -2.0]));
        let b = tape.param("layer.bias", &t(&[1], &[3.0]));
        let params = tape.params().to_vec();
        let scope = L2Scope {
            exclude: vec!["bias".into()],
        };
        let l = loss_with_l2(&mut tape, p, y, &params, 0.01, &scope).unwrap();
        assert!((tape.value(l).data()[0] - 0.01 * 4.25).abs() < 1e-12);
        tape.backward(l, &t(&[1], &[1.0])).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[0.01, -0.04]);
        assert!(tape.grad(b).is_none());
    }
}
