//! Central finite-difference gradient checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::{Tape, Tensor, Var};

/// Result of comparing tape gradients against central differences.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: Vec<f32>,
    pub numeric: Vec<f64>,
}

/// Smallest denominator used when forming relative errors. Gradients below
/// it are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1.0;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Checks `d f(x) / d x` against central differences with step `eps`.
///
/// The step is rounded to the nearest power of two so that `x ± h` is exact
/// in binary floating point.
///
/// `f` may return a tensor of any shape. Non-scalar outputs are reduced with
/// a fixed random projection `Σ cᵢ yᵢ`, accumulated in `f64`; the same
/// projection seeds the tape's backward pass.
pub fn finite_difference_check<F>(f: F, x: &Tensor, eps: f32) -> Result<GradCheck>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), true);
    let y = f(&mut tape, xv)?;
    let out_len = tape.value(y).numel();
    let weights: Vec<f32> = if out_len == 1 {
        vec![1.0]
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        (0..out_len).map(|_| rng.random_range(-1.0..1.0)).collect()
    };
    tape.backward_with_grad(y, weights.clone())?;
    let analytic = tape
        .grad(xv)
        .map(<[f32]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.numel()]);

    let project = |input: Tensor| -> Result<f64> {
        let mut t = Tape::inference();
        let v = t.input(input);
        let out = f(&mut t, v)?;
        Ok(t
            .value(out)
            .data()
            .iter()
            .zip(&weights)
            .map(|(&a, &w)| f64::from(a) * f64::from(w))
            .sum())
    };

    let eps = 2f32.powi(eps.log2().round() as i32);
    let mut numeric = Vec::with_capacity(x.numel());
    let mut max_rel_error = 0.0;
    let mut worst_index = 0;
    for j in 0..x.numel() {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus.data_mut()[j] += eps;
        minus.data_mut()[j] -= eps;
        // actual representable step
        let h = f64::from(plus.data()[j]) - f64::from(minus.data()[j]);
        let d = (project(plus)? - project(minus)?) / h;
        let err = relative_error(f64::from(analytic[j]), d);
        if err > max_rel_error {
            max_rel_error = err;
            worst_index = j;
        }
        numeric.push(d);
    }
    Ok(GradCheck {
        max_rel_error,
        worst_index,
        analytic,
        numeric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let x = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        let check = finite_difference_check(
            |t, x| {
                let sq = t.mul(x, x)?;
                Ok(t.sum(sq))
            },
            &x,
            1e-3,
        )
        .unwrap();
        assert_eq!(check.analytic, vec![2.0, 4.0]);
        assert!(check.max_rel_error < 1e-6, "{}", check.max_rel_error);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let x = Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let check = finite_difference_check(
            |t, _x| Ok(t.input(Tensor::scalar(4.0))),
            &x,
            1e-3,
        )
        .unwrap();
        assert!(check.analytic.iter().all(|&g| g == 0.0));
        assert!(check.numeric.iter().all(|&g| g == 0.0));
        assert_eq!(check.max_rel_error, 0.0);
    }
}
