use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Compares autodiff gradients against fp64 central finite differences.
///
/// Runs `backward` on `loss`, then for each variable in `wrt` probes up to
/// `max_entries_per_var` entries (all of them when the tensor is small,
/// otherwise a seeded random sample): the recorded graph is replayed twice in
/// fp64 with the entry displaced by ±h, and the central difference is
/// compared against the accumulated fp32 gradient.
///
/// Returns the maximum of |g_ad - g_fd| / max(|g_fd|, 1e-6) over all probed
/// entries. Inputs are expected to be finite and interior to op domains
/// (more than 2h away from any clamp or kink boundary); the caller picks the
/// evaluation point accordingly.
pub fn finite_diff_check(
    tape: &mut Tape,
    loss: Var,
    wrt: &[Var],
    h: f64,
    max_entries_per_var: usize,
    seed: u64,
) -> Result<f64> {
    if tape.values(loss).len() != 1 {
        return Err(Error::invalid_argument("finite_diff_check: objective must be scalar".to_string()));
    }
    tape.backward(loss)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel = 0.0f64;

    for &var in wrt {
        let numel = tape.values(var).len();
        let mut indices: Vec<usize> = (0..numel).collect();
        if numel > max_entries_per_var {
            indices.shuffle(&mut rng);
            indices.truncate(max_entries_per_var);
        }
        let grad = tape.grad_or_zeros(var);
        for i in indices {
            let x = tape.values(var)[i] as f64;
            let f_plus = tape.eval_f64(loss, Some((var, i, x + h)))?;
            let f_minus = tape.eval_f64(loss, Some((var, i, x - h)))?;
            let g_fd = (f_plus - f_minus) / (2.0 * h);
            let g_ad = grad[i] as f64;
            let rel = (g_ad - g_fd).abs() / g_fd.abs().max(1e-6);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_objective_is_exact() {
        let mut tape = Tape::new();
        let x = tape
            .leaf_values(&[4], vec![0.3, -1.2, 0.8, 2.1], true)
            .unwrap();
        let loss = tape.sum(x);
        let err = finite_diff_check(&mut tape, loss, &[x], 1e-3, 8, 1).unwrap();
        assert!(err < 1e-8, "linear fd error {err}");
    }

    #[test]
    fn rejects_non_scalar_objective() {
        let mut tape = Tape::new();
        let x = tape.leaf_values(&[3], vec![1.0, 2.0, 3.0], true).unwrap();
        let y = tape.mul(x, x).unwrap();
        assert!(finite_diff_check(&mut tape, y, &[x], 1e-3, 8, 1).is_err());
    }
}
