//! Central-difference validation of analytic gradients.

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, ValueId};

/// Outcome of one finite-difference check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<28} max_rel_err {:>12.3e}  tol {:>8.1e}  {}",
            self.name,
            self.max_rel_err,
            self.tolerance,
            if self.passed { "pass" } else { "FAIL" }
        )
    }
}

/// Test hook: corrupt one analytic gradient before comparison so the harness
/// itself can be shown to catch bad gradients.
#[derive(Clone, Copy, Debug)]
pub struct Fault {
    pub param: usize,
    pub element: usize,
    /// Multiplier applied to the analytic gradient entry.
    pub scale: f64,
}

/// Compares the tape's gradients against central differences
/// `(f(x+eps) - f(x-eps)) / (2 eps)` for every element of every parameter.
///
/// `build` reconstructs the scalar output from leaves bound to `params`; it
/// is re-run for each perturbed evaluation. Failure is encoded in the report,
/// not the `Result`, which only carries build errors.
pub fn finite_diff_check<F>(
    name: &str,
    params: &[Tensor],
    build: F,
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[ValueId]) -> Result<ValueId>,
{
    finite_diff_check_with_fault(name, params, build, epsilon, tolerance, None)
}

/// [`finite_diff_check`] with an optional injected gradient fault.
pub fn finite_diff_check_with_fault<F>(
    name: &str,
    params: &[Tensor],
    build: F,
    epsilon: f64,
    tolerance: f64,
    fault: Option<Fault>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[ValueId]) -> Result<ValueId>,
{
    assert!(epsilon > 0.0, "epsilon must be positive");

    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<ValueId> = tensors.iter().map(|t| g.input(t)).collect();
        let out = build(&mut g, &ids)?;
        if g.data(out).len() != 1 {
            return Err(Error::Gradient(format!(
                "{name}: gradcheck target must be scalar"
            )));
        }
        Ok(g.data(out)[0])
    };

    // Analytic gradients at the base point.
    let mut base_graph = Graph::new();
    let ids: Vec<ValueId> = params.iter().map(|t| base_graph.input(t)).collect();
    let out = build(&mut base_graph, &ids)?;
    if base_graph.data(out).len() != 1 {
        return Err(Error::Gradient(format!(
            "{name}: gradcheck target must be scalar"
        )));
    }
    base_graph.backward(out)?;
    let mut analytic: Vec<Vec<f64>> = ids.iter().map(|id| base_graph.grad(*id).to_vec()).collect();
    if let Some(f) = fault {
        analytic[f.param][f.element] *= f.scale;
    }

    let mut max_rel = 0.0_f64;
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        for ei in 0..p.len() {
            let orig = p.data()[ei];
            work[pi].data_mut()[ei] = orig + epsilon;
            let f_plus = eval(&work)?;
            work[pi].data_mut()[ei] = orig - epsilon;
            let f_minus = eval(&work)?;
            work[pi].data_mut()[ei] = orig;
            let numeric = (f_plus - f_minus) / (2.0 * epsilon);
            let a = analytic[pi][ei];
            // Relative error with a small-magnitude floor so that finite-
            // difference noise around zero gradients does not dominate.
            let denom = a.abs().max(numeric.abs()).max(1e-4);
            let rel = (a - numeric).abs() / denom;
            max_rel = max_rel.max(rel);
        }
    }

    Ok(GradCheckReport {
        name: name.to_string(),
        max_rel_err: max_rel,
        tolerance,
        passed: max_rel <= tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_passes_at_tight_tolerance() {
        // f(x) = x^2 at x = 3: analytic 6, central difference ~6.000000
        let params = [Tensor::scalar(3.0)];
        let rep = finite_diff_check(
            "square",
            &params,
            |g, ids| {
                let y = g.mul(ids[0], ids[0])?;
                g.sum(y)
            },
            1e-4,
            1e-6,
        )
        .unwrap();
        assert!(rep.passed, "{rep}");
    }

    #[test]
    fn constant_graph_passes() {
        let params = [Tensor::scalar(5.0)];
        let rep = finite_diff_check(
            "constant",
            &params,
            |g, ids| {
                let zero = g.scale(ids[0], 0.0)?;
                let seven = g.offset(zero, 7.0)?;
                g.sum(seven)
            },
            1e-4,
            1e-6,
        )
        .unwrap();
        assert!(rep.passed);
        assert_eq!(rep.max_rel_err, 0.0);
    }

    #[test]
    fn injected_fault_is_caught() {
        // Corrupt analytic 6 down to 5: relative error ~ 1/6 = 0.167.
        let params = [Tensor::scalar(3.0)];
        let rep = finite_diff_check_with_fault(
            "square_faulty",
            &params,
            |g, ids| {
                let y = g.mul(ids[0], ids[0])?;
                g.sum(y)
            },
            1e-4,
            1e-3,
            Some(Fault {
                param: 0,
                element: 0,
                scale: 5.0 / 6.0,
            }),
        )
        .unwrap();
        assert!(!rep.passed);
        assert!((rep.max_rel_err - 1.0 / 6.0).abs() < 1e-3, "{rep}");
    }
}
