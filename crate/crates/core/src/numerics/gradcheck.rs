use alloc::string::String;
use alloc::vec::Vec;
use rand::seq::index::sample;

use super::param::Module;
use super::tape::{Tape, Var};
use crate::error::Result;
use crate::Rng;

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Largest relative error between the tape gradient of the scalar `f` at `x`
/// and its central finite difference with step `eps`.
pub fn grad_check<F>(f: F, shape: &[usize], x: &[f64], eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let v = tape.leaf(shape, x.to_vec())?;
    let loss = f(&tape, v)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<f64> = match grads.wrt(v) {
        Some(g) => g.to_vec(),
        None => alloc::vec![0.0; x.len()],
    };
    let eval = |xs: Vec<f64>| -> Result<f64> {
        let tape = Tape::inference();
        let v = tape.leaf(shape, xs)?;
        Ok(f(&tape, v)?.item())
    };
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut xp = x.to_vec();
        xp[i] += eps;
        let mut xm = x.to_vec();
        xm[i] -= eps;
        let numeric = (eval(xp)? - eval(xm)?) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter holding the worst coordinate.
    pub worst_param: String,
    pub coords_checked: usize,
}

/// Finite-difference check of every parameter of `model`.
///
/// Up to `per_param` coordinates are probed in each parameter tensor: the one
/// with the largest analytic gradient plus a random sample of the rest.
pub fn grad_check_module<M, F>(
    model: &mut M,
    loss: F,
    eps: f64,
    per_param: usize,
    rng: &mut Rng,
) -> Result<GradCheckReport>
where
    M: Module<f64>,
    F: for<'t> Fn(&M, &'t Tape<f64>) -> Result<Var<'t, f64>>,
{
    model.zero_grad();
    {
        let tape = Tape::new();
        let l = loss(model, &tape)?;
        let g = tape.backward(l)?;
        model.accumulate(&g);
    }
    let mut plan: Vec<(usize, Vec<usize>)> = Vec::new();
    let mut pi = 0;
    model.visit(&mut |p| {
        let n = p.len();
        let mut coords: Vec<usize> = if n <= per_param {
            (0..n).collect()
        } else {
            sample(rng, n, per_param.saturating_sub(1)).into_vec()
        };
        if n > per_param {
            let best = (0..n)
                .max_by(|&a, &b| p.grad[a].abs().total_cmp(&p.grad[b].abs()))
                .unwrap_or(0);
            if !coords.contains(&best) {
                coords.push(best);
            }
        }
        plan.push((pi, coords));
        pi += 1;
    });
    let eval = |m: &M| -> Result<f64> {
        let tape = Tape::inference();
        Ok(loss(m, &tape)?.item())
    };
    let mut report = GradCheckReport::default();
    for (target, coords) in plan {
        for c in coords {
            let mut analytic = 0.0;
            let mut original = 0.0;
            let mut name = String::new();
            nudge(model, target, |p| {
                analytic = p.grad[c];
                original = p.value()[c];
                name = p.name().into();
                p.value_mut()[c] = original + eps;
            });
            let up = eval(model)?;
            nudge(model, target, |p| p.value_mut()[c] = original - eps);
            let down = eval(model)?;
            nudge(model, target, |p| p.value_mut()[c] = original);
            let err = relative_error(analytic, (up - down) / (2.0 * eps));
            report.coords_checked += 1;
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst_param = name;
            }
        }
    }
    model.zero_grad();
    Ok(report)
}

fn nudge<M: Module<f64>>(model: &mut M, target: usize, mut f: impl FnMut(&mut super::Param<f64>)) {
    let mut i = 0;
    model.visit_mut(&mut |p| {
        if i == target {
            f(p);
        }
        i += 1;
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn sum_of_squares_is_tight() {
        let mut rng = crate::seeded_rng(1);
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let err = grad_check(|_, v| Ok(v.square().sum()), &[6], &x, 1e-5).unwrap();
        assert!(err <= 1e-7, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let err = grad_check(|t, _| Ok(t.scalar(3.0)), &[3], &[1.0, 2.0, 3.0], 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn module_check_on_linear_model() {
        let mut rng = crate::seeded_rng(4);
        let mut p = super::super::Param::new("w", &[3, 2], (0..6).map(|_| rng.random_range(-1.0..1.0)).collect());
        let report = grad_check_module(
            &mut p,
            |w, t| {
                let x = t.constant(&[1, 3], alloc::vec![0.3, -0.7, 1.1])?;
                Ok(x.matmul(t.param(w))?.tanh().sum())
            },
            1e-5,
            8,
            &mut rng,
        )
        .unwrap();
        assert_eq!(report.coords_checked, 6);
        assert!(report.max_rel_error <= 1e-6, "{report:?}");
    }
}
