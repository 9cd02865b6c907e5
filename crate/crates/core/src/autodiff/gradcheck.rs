use super::{Graph, GraphError, Tensor, Var};

/// Denominator floor for relative errors, so entries whose true gradient is
/// ~0 are judged on absolute error.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub max_rel_error: f64,
    /// `(flat index, analytic, numeric, relative error)` for entries over tolerance.
    pub flagged: Vec<(usize, f64, f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.flagged.is_empty())
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares `backward()` against central differences with step `h`.
///
/// `f` builds a scalar loss from the parameter vars (registered as
/// `p0`, `p1`, ...). Errors from `f` are returned unchanged; gradient
/// mismatches are only reported.
pub fn grad_check<F>(f: F, params: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport, GraphError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, GraphError>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let eval = |ps: &[Tensor]| -> Result<f64, GraphError> {
        let mut g = Graph::new();
        let vars: Vec<Var> =
            ps.iter().enumerate().map(|(i, p)| g.param(&format!("p{i}"), p.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.scalar_value(loss))
    };

    let mut g = Graph::new();
    let vars: Vec<Var> =
        params.iter().enumerate().map(|(i, p)| g.param(&format!("p{i}"), p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let mut report = GradCheckReport { params: Vec::with_capacity(params.len()), tol };
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).cloned().unwrap_or_else(|| Tensor::zeros(params[pi].shape()));
        let mut check = ParamCheck { max_rel_error: 0.0, flagged: Vec::new() };
        for idx in 0..params[pi].len() {
            let mut plus = params.to_vec();
            plus[pi].data_mut()[idx] += h;
            let mut minus = params.to_vec();
            minus[pi].data_mut()[idx] -= h;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
            let a = analytic.data()[idx];
            let err = rel_error(a, numeric);
            check.max_rel_error = check.max_rel_error.max(err);
            if !(err <= tol) {
                check.flagged.push((idx, a, numeric, err));
            }
        }
        report.params.push(check);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_is_exact() {
        let p = vec![Tensor::vector(&[0.3, -1.2, 2.5]), Tensor::matrix(2, 2, vec![1.0, -0.5, 0.25, 4.0]).unwrap()];
        let report = grad_check(
            |g, v| {
                let a = g.mul(v[0], v[0])?;
                let b = g.mul(v[1], v[1])?;
                let sa = g.sum(a);
                let sb = g.sum(b);
                g.add(sa, sb)
            },
            &p,
            1e-5,
            1e-9,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
        assert!(report.max_rel_error() < 1e-9);
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        // Dot with a constant copy of itself hides half the gradient.
        let p = vec![Tensor::vector(&[1.0, 2.0])];
        let report = grad_check(
            |g, v| {
                let c = g.constant(g.value(v[0]).clone());
                g.dot(v[0], c)
            },
            &p,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(!report.passed());
        assert_eq!(report.params[0].flagged.len(), 2);
    }
}
