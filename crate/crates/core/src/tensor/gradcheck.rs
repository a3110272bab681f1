use super::{Graph, ParamStore, Var};
use crate::error::{EngineError, Error};

/// Outcome for one parameter tensor.
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Flat (row-major) index of the worst entry.
    pub worst_entry: usize,
    /// Analytic and central-difference values at the worst entry.
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    /// Flat indices where a perturbed evaluation failed or was non-finite.
    pub non_finite: Vec<usize>,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
    pub eps: f64,
}

impl GradCheckReport {
    /// The parameter with the largest relative error.
    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares analytic gradients with central differences for every entry
/// of every parameter in `store`.
pub fn grad_check<F>(builder: F, store: &ParamStore, eps: f64, tol: f64) -> Result<GradCheckReport, Error>
where
    F: Fn(&ParamStore) -> Result<(Graph, Var), Error>,
{
    if !(eps > 0.0 && tol > 0.0) {
        return Err(EngineError::Invalid {
            op: "grad_check",
            reason: format!("eps and tol must be positive (eps={eps}, tol={tol})"),
        }
        .into());
    }
    let (graph, root) = builder(store)?;
    let analytic = graph.backward(root)?.for_params(&graph, store);

    let eval = |s: &ParamStore| -> Option<f64> {
        let (g, r) = builder(s).ok()?;
        let v = g.item(r);
        v.is_finite().then_some(v)
    };

    let mut work = store.clone();
    let mut params = Vec::with_capacity(store.len());
    for (pi, tensor) in store.tensors().iter().enumerate() {
        let mut check = ParamCheck {
            name: tensor.name.clone(),
            max_rel_error: 0.0,
            worst_entry: 0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
            non_finite: Vec::new(),
            passed: true,
        };
        let cols = tensor.value.ncols();
        for flat in 0..tensor.value.len() {
            let (r, c) = (flat / cols, flat % cols);
            let orig = tensor.value[[r, c]];
            work.tensors_mut()[pi].value[[r, c]] = orig + eps;
            let plus = eval(&work);
            work.tensors_mut()[pi].value[[r, c]] = orig - eps;
            let minus = eval(&work);
            work.tensors_mut()[pi].value[[r, c]] = orig;
            let (Some(fp), Some(fm)) = (plus, minus) else {
                check.non_finite.push(flat);
                continue;
            };
            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic.as_slice()[pi][[r, c]];
            let err = rel_error(a, numeric);
            if err > check.max_rel_error {
                check.max_rel_error = err;
                check.worst_entry = flat;
                check.worst_analytic = a;
                check.worst_numeric = numeric;
            }
        }
        check.passed = check.non_finite.is_empty() && check.max_rel_error <= tol;
        params.push(check);
    }
    Ok(GradCheckReport { params, tol, eps })
}
