use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of [`finite_difference_check`].
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max relative error per parameter tensor.
    pub per_param: Vec<f64>,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// Compares reverse-mode gradients of a scalar graph with central
/// differences `(f(x+h) - f(x-h)) / 2h`, element by element.
///
/// `build` records the graph on a fresh tape given the parameter handles and
/// returns the scalar output. The relative error of one element is
/// `|analytic - numeric| / max(|analytic|, |numeric|, floor)`; the floor
/// keeps differencing noise on near-zero components from dominating.
pub fn finite_difference_check<F>(
    build: F,
    params: &[Tensor<f64>],
    h: f64,
    tol: f64,
    floor: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if h <= 0.0 {
        return Err(Error::invalid(format!("finite difference step {h} must be positive")));
    }
    if !(floor > 0.0) {
        return Err(Error::invalid(format!("relative error floor {floor} must be positive")));
    }
    let eval = |ps: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let out = build(&mut tape, &vars)?;
        let v = tape.value(out);
        if v.len() != 1 {
            return Err(Error::dim(format!("checked graph returned {:?}", v.shape())));
        }
        let v = v.data()[0];
        if !v.is_finite() {
            return Err(Error::Numeric(format!("checked graph evaluated to {v}")));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = build(&mut tape, &vars)?;
    if !tape.value(out).is_finite() {
        return Err(Error::Numeric("checked graph is not finite".into()));
    }
    let grads = tape.backward(out)?;

    let mut work = params.to_vec();
    let mut per_param = Vec::with_capacity(params.len());
    for (pi, &var) in vars.iter().enumerate() {
        let analytic = grads.get(var);
        let mut worst: f64 = 0.0;
        for e in 0..params[pi].len() {
            let x0 = params[pi].data()[e];
            work[pi].data_mut()[e] = x0 + h;
            let fp = eval(&work)?;
            work[pi].data_mut()[e] = x0 - h;
            let fm = eval(&work)?;
            work[pi].data_mut()[e] = x0;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.data()[e];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(floor));
        }
        per_param.push(worst);
    }
    let max_rel_error = per_param.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_param,
        max_rel_error,
        tolerance: tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let r = finite_difference_check(
            |t, v| {
                let sq = t.mul(v[0], v[0])?;
                Ok(t.mean_all(sq))
            },
            &[Tensor::scalar(3.0)],
            1e-5,
            1e-8,
            1e-8,
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn constant_graph_has_zero_gradient() {
        let r = finite_difference_check(
            |t, _| Ok(t.constant(Tensor::scalar(4.2))),
            &[Tensor::scalar(1.0)],
            1e-3,
            0.0,
            1e-8,
        )
        .unwrap();
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn linear_graph_is_exact_for_any_step() {
        for h in [1e-6, 1e-2, 0.5] {
            let r =
                finite_difference_check(|t, v| Ok(t.scale(v[0], 2.0)), &[Tensor::scalar(1.5)], h, 1e-9, 1e-8).unwrap();
            assert!(r.passed(), "h={h}: {r:?}");
        }
    }

    #[test]
    fn rejects_bad_step_and_non_finite_graphs() {
        let f = |t: &mut Tape<f64>, v: &[Var]| Ok(t.mean_all(v[0]));
        assert!(finite_difference_check(f, &[Tensor::scalar(1.0)], 0.0, 1.0, 1e-8).is_err());
        let inf = |t: &mut Tape<f64>, v: &[Var]| Ok(t.scale(v[0], f64::INFINITY));
        assert!(matches!(
            finite_difference_check(inf, &[Tensor::scalar(1.0)], 1e-3, 1.0, 1e-8),
            Err(Error::Numeric(_))
        ));
    }
}
