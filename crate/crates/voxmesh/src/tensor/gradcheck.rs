//! Central finite-difference verification of reverse-mode gradients.
//!
//! The checker evaluates the loss function through the forward path only (no
//! tape gradients are reused), so it is an oracle independent of the backward
//! implementation it tests. Checks run in f64.

use super::{Tape, Var};
use ndarray::ArrayD;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_REL_TOL: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-8;

#[derive(Debug)]
pub struct GradMismatch {
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compare reverse-mode gradients of `f` against central differences at the
/// given inputs. `f` must build a scalar loss from the leaf vars it is handed.
/// Returns all elements where |a - n| > rel_tol * max(|a|, |n|) + ABS_FLOOR.
pub fn check_gradients<F>(inputs: &[ArrayD<f64>], f: F) -> Vec<GradMismatch>
where
    F: for<'a> Fn(&'a Tape<f64>, &[Var<'a, f64>]) -> Var<'a, f64>,
{
    check_gradients_with(inputs, f, DEFAULT_STEP, DEFAULT_REL_TOL)
}

pub fn check_gradients_with<F>(
    inputs: &[ArrayD<f64>],
    f: F,
    h: f64,
    rel_tol: f64,
) -> Vec<GradMismatch>
where
    F: for<'a> Fn(&'a Tape<f64>, &[Var<'a, f64>]) -> Var<'a, f64>,
{
    // Analytic gradients.
    let analytic: Vec<ArrayD<f64>> = {
        let tape = Tape::new();
        let vars: Vec<Var<f64>> = inputs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
        let loss = f(&tape, &vars);
        loss.backward().expect("backward");
        vars.iter()
            .map(|v| {
                v.grad()
                    .unwrap_or_else(|| ArrayD::zeros(v.value_ref().raw_dim()))
            })
            .collect()
    };

    let eval = |xs: &[ArrayD<f64>]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var<f64>> = xs.iter().map(|x| tape.leaf(x.clone(), false)).collect();
        f(&tape, &vars).scalar_value()
    };

    let mut mismatches = Vec::new();
    for (ii, input) in inputs.iter().enumerate() {
        for ei in 0..input.len() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            *plus[ii].iter_mut().nth(ei).unwrap() += h;
            *minus[ii].iter_mut().nth(ei).unwrap() -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = *analytic[ii].iter().nth(ei).unwrap();
            if (a - numeric).abs() > rel_tol * a.abs().max(numeric.abs()) + ABS_FLOOR {
                mismatches.push(GradMismatch {
                    input: ii,
                    element: ei,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    mismatches
}

/// Panic with a readable report if any element disagrees.
pub fn assert_gradients<F>(inputs: &[ArrayD<f64>], f: F)
where
    F: for<'a> Fn(&'a Tape<f64>, &[Var<'a, f64>]) -> Var<'a, f64>,
{
    let bad = check_gradients(inputs, f);
    assert!(
        bad.is_empty(),
        "gradient mismatches: {:?}",
        &bad[..bad.len().min(5)]
    );
}
