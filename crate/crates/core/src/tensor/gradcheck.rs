//! Central finite-difference gradient checking.

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::par;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub passed: bool,
    /// Largest `|analytic - numeric| / max(1, |analytic|)` over checked coordinates.
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
}

fn validate_step(h: f64) -> Result<()> {
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::Config(format!("finite-difference step {h} outside [1e-7, 1e-3]")));
    }
    Ok(())
}

/// Compares a supplied gradient against `(f(x + h e_i) - f(x - h e_i)) / 2h`
/// on each coordinate in `coords` (all coordinates when `None`).
pub fn compare_gradients<F>(
    f: F,
    point: &Tensor,
    analytic: &[f64],
    h: f64,
    tol: f64,
    coords: Option<&[usize]>,
) -> Result<GradCheckReport>
where
    F: Fn(&Tensor) -> Result<f64> + Sync,
{
    validate_step(h)?;
    if analytic.len() != point.len() {
        return Err(Error::Dimension(format!(
            "analytic gradient has {} entries for a {}-element point",
            analytic.len(),
            point.len()
        )));
    }
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..point.len()).collect();
            &all
        }
    };
    if let Some(&bad) = coords.iter().find(|&&i| i >= point.len()) {
        return Err(Error::Dimension(format!("coordinate {bad} out of range")));
    }

    let errors = par::map_indexed(coords.len(), |j| -> Result<f64> {
        let i = coords[j];
        let mut plus = point.clone();
        plus.data_mut()[i] += h;
        let mut minus = point.clone();
        minus.data_mut()[i] -= h;
        let numeric = (f(&plus)? - f(&minus)?) / (2.0 * h);
        Ok((analytic[i] - numeric).abs() / analytic[i].abs().max(1.0))
    });

    let mut max_rel_error = 0.0;
    let mut worst_index = None;
    for (j, e) in errors.into_iter().enumerate() {
        let e = e?;
        // NaN must fail the check
        if e.is_nan() || e > max_rel_error {
            max_rel_error = if e.is_nan() { f64::INFINITY } else { e };
            worst_index = Some(coords[j]);
        }
    }
    Ok(GradCheckReport {
        passed: max_rel_error < tol,
        max_rel_error,
        worst_index,
        checked: coords.len(),
    })
}

fn analytic_gradient<F>(f: &F, point: &Tensor) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.param(point.clone());
    let out = f(&mut g, x)?;
    g.backward(out)?;
    Ok(g.grad(x).map_or_else(|| vec![0.0; point.len()], <[f64]>::to_vec))
}

fn evaluate<F>(f: &F, point: &Tensor) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.constant(point.clone());
    let out = f(&mut g, x)?;
    g.value(out).item()
}

/// Checks the graph gradient of the scalar function `f` at `point` against
/// central differences on every coordinate.
pub fn finite_difference_check<F>(f: F, point: &Tensor, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var> + Sync,
{
    finite_difference_check_subset(f, point, h, tol, None)
}

/// Like [`finite_difference_check`] but restricted to the given coordinates.
pub fn finite_difference_check_subset<F>(
    f: F,
    point: &Tensor,
    h: f64,
    tol: f64,
    coords: Option<&[usize]>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var> + Sync,
{
    validate_step(h)?;
    let analytic = analytic_gradient(&f, point)?;
    compare_gradients(|p| evaluate(&f, p), point, &analytic, h, tol, coords)
}
