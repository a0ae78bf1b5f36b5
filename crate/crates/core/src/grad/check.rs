use crate::error::Result;

use super::{Tape, Tensor, Var};

/// Compares backprop gradients with central finite differences.
///
/// `f` must build the same scalar loss on a fresh tape every time it is
/// called; any randomness has to be passed in through `leaves` or captured
/// as fixed data. Returns the largest
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)` over all leaf
/// entries.
pub fn grad_check<F>(f: F, leaves: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    assert!(step > 0.0, "finite-difference step must be positive");

    let eval = |leaves: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = leaves.iter().map(|l| tape.leaf(l.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.scalar(loss))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|l| tape.leaf(l.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;

    let mut worst = 0.0f64;
    let mut probe = leaves.to_vec();
    for (li, &var) in vars.iter().enumerate() {
        let analytic = tape.grad(var).expect("leaf gradient").to_vec();
        for (k, &a) in analytic.iter().enumerate() {
            let orig = probe[li].values()[k];
            probe[li].values_mut()[k] = orig + step;
            let up = eval(&probe)?;
            probe[li].values_mut()[k] = orig - step;
            let down = eval(&probe)?;
            probe[li].values_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * step);
            let err = (a - numeric).abs() / f64::max(1e-8, a.abs() + numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
