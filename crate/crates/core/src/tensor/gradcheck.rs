use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Outcome of a finite-difference comparison over several inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Max relative error per input, in input order.
    pub per_input: Vec<f64>,
    /// Primitives recorded by the function.
    pub ops: BTreeSet<&'static str>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.per_input.iter().copied().fold(0.0, f64::max)
    }
}

/// Compares the recorded gradient of a scalar function against central
/// differences, jointly over every tensor in `inputs`.
///
/// The error for a coordinate is `|analytic − fd| / max(1, |analytic|)`.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    grad_check_many_with(f, inputs, eps, None)
}

/// [`grad_check_many`] with the backward rule of primitive `fault` broken
/// in the analytic pass.
#[doc(hidden)]
pub fn grad_check_many_with<F>(f: F, inputs: &[Tensor], eps: f64, fault: Option<&'static str>) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }

    let ops;
    let analytic: Vec<Vec<f64>> = {
        let graph = match fault {
            Some(op) => Graph::with_faulty_backward(op),
            None => Graph::new(),
        };
        let vars: Vec<_> = inputs.iter().map(|t| graph.param(t.clone())).collect();
        let root = f(&graph, &vars)?;
        graph.backward(root)?;
        ops = graph.op_names();
        vars.iter()
            .zip(inputs)
            .map(|(v, t)| v.grad().map(Tensor::into_data).unwrap_or_else(|| vec![0.0; t.numel()]))
            .collect()
    };

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let graph = Graph::new();
        let vars: Vec<_> = xs.iter().map(|t| graph.constant(t.clone())).collect();
        let value = f(&graph, &vars)?.item();
        if !value.is_finite() {
            return Err(Error::NumericFault("grad_check: function value is not finite".into()));
        }
        Ok(value)
    };

    let mut work = inputs.to_vec();
    let mut per_input = Vec::with_capacity(inputs.len());
    for (k, grads) in analytic.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for (i, &a) in grads.iter().enumerate() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + eps;
            let plus = eval(&work)?;
            work[k].data_mut()[i] = orig - eps;
            let minus = eval(&work)?;
            work[k].data_mut()[i] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            worst = worst.max((a - fd).abs() / a.abs().max(1.0));
        }
        per_input.push(worst);
    }
    Ok(GradCheckReport { per_input, ops })
}

/// Single-input form of [`grad_check_many`]; returns the max relative error.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: for<'g> Fn(&'g Graph, Var<'g>) -> Result<Var<'g>>,
{
    grad_check_many(|g, vars| f(g, vars[0]), std::slice::from_ref(x), eps).map(|r| r.max_error())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let x = Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap();
        let err = grad_check(|_, x| x.mul(x)?.sum(), &x, 1e-5).unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let x = Tensor::vector(vec![0.5, -0.5]).unwrap();
        let err = grad_check(|g, _| Ok(g.constant(Tensor::scalar(4.0))), &x, 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn rejects_bad_eps_and_non_finite_values() {
        let x = Tensor::vector(vec![1.0]).unwrap();
        assert!(grad_check(|_, x| x.sum(), &x, 0.0).is_err());
        let at_zero = Tensor::vector(vec![1e-6]).unwrap();
        let err = grad_check(|_, x| x.ln()?.sum(), &at_zero, 1e-5).unwrap_err();
        assert!(err.is_numeric());
    }

    #[test]
    fn faulty_rule_is_detected() {
        let x = Tensor::vector(vec![0.2, -0.4, 1.1]).unwrap();
        let g = Graph::with_faulty_backward("exp");
        let v = g.param(x.clone());
        let root = v.exp().unwrap().sum().unwrap();
        root.backward().unwrap();
        let analytic = v.grad().unwrap();
        let expected: Vec<f64> = x.data().iter().map(|v| v.exp()).collect();
        assert!((analytic.data()[0] - expected[0]).abs() > 0.1);
    }
}
