//! Central finite-difference gradient checking.

use crate::error::{Error, Result};

use super::{Graph, Tensor};

/// Outcome of a finite-difference check. `max_rel_error` uses the
/// denominator `max(|analytic|, |numeric|, 1)` so near-zero coordinates are
/// judged on absolute error.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat coordinate of the worst disagreement.
    pub worst: Option<(String, usize)>,
    pub tol: f64,
    pub passed: bool,
    pub coords_checked: usize,
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Compare the recorded backward pass of `f` against central finite
/// differences, coordinate by coordinate, over every named parameter.
///
/// `f` must deterministically build a scalar loss on the supplied graph from
/// the supplied parameter tensors (in the given order).
pub fn grad_check<F>(
    f: F,
    params: &[(String, Tensor)],
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&Graph, &[Tensor]) -> Result<Tensor>,
{
    if h <= 0.0 {
        return Err(Error::Contract("grad_check requires h > 0".to_string()));
    }
    let base: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();

    // Analytic gradients from one backward pass.
    for t in &base {
        t.clear_grad();
    }
    let graph = Graph::new();
    let loss = f(&graph, &base)?;
    if !loss.is_scalar() {
        return Err(Error::Contract(format!(
            "grad_check: f must produce a scalar, got shape {:?}",
            loss.shape()
        )));
    }
    graph.backward(&loss)?;
    let analytic: Vec<Vec<f64>> = base
        .iter()
        .map(|t| t.take_grad().unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();

    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let g = Graph::new();
        let out = f(&g, tensors)?;
        Ok(out.item())
    };

    let mut max_rel_error = 0.0;
    let mut worst = None;
    let mut coords_checked = 0;
    for (pi, (name, tensor)) in params.iter().enumerate() {
        for ci in 0..tensor.len() {
            let mut plus = tensor.values().to_vec();
            let mut minus = plus.clone();
            plus[ci] += h;
            minus[ci] -= h;
            let mut tensors = base.clone();
            tensors[pi] = Tensor::from_parts(tensor.shape().to_vec(), plus);
            let f_plus = eval(&tensors)?;
            tensors[pi] = Tensor::from_parts(tensor.shape().to_vec(), minus);
            let f_minus = eval(&tensors)?;
            let numeric = (f_plus - f_minus) / (2.0 * h);
            let err = rel_error(analytic[pi][ci], numeric);
            if err > max_rel_error {
                max_rel_error = err;
                worst = Some((name.clone(), ci));
            }
            coords_checked += 1;
        }
    }

    Ok(GradCheckReport {
        max_rel_error,
        worst,
        tol,
        passed: max_rel_error <= tol,
        coords_checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_passes_exactly() {
        let w = Tensor::new(&[3], vec![0.4, -1.2, 2.0]).unwrap();
        let report = grad_check(
            |g, p| g.sum_all(&p[0]),
            &[("w".to_string(), w)],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "max rel error {}", report.max_rel_error);
        assert!(report.max_rel_error < 1e-9);
    }

    #[test]
    fn wrong_backward_rule_fails() {
        // A deliberately wrong rule: forward x^2, backward claims d/dx = 3x.
        let w = Tensor::new(&[2], vec![1.5, -0.7]).unwrap();
        let report = grad_check(
            |g, p| {
                let x = &p[0];
                let sq: Vec<f64> = x.values().iter().map(|v| v * v).collect();
                let out = Tensor::from_parts(x.shape().to_vec(), sq);
                let (xc, oc) = (x.clone(), out.clone());
                g.record(
                    out.id(),
                    Box::new(move || {
                        let Some(grad) = oc.grad_for_backward() else {
                            return;
                        };
                        let xv = xc.values();
                        let mut gx = xc.grad_mut();
                        for i in 0..grad.len() {
                            gx[i] += grad[i] * 3.0 * xv[i];
                        }
                    }),
                );
                g.sum_all(&out)
            },
            &[("w".to_string(), w)],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(!report.passed);
        assert!(report.max_rel_error > 0.1);
    }

    #[test]
    fn rejects_non_positive_h() {
        let w = Tensor::scalar(1.0);
        assert!(grad_check(
            |g, p| g.sum_all(&p[0]),
            &[("w".to_string(), w)],
            0.0,
            1e-4
        )
        .is_err());
    }
}
