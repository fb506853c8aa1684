//! Finite-difference gradient verification.
//!
//! Central differences at 64-bit with h = 1e-4 against the tape's analytic
//! gradients. The relative error uses `|a-n| / max(1, |a|, |n|)`, i.e. it is
//! absolute for sub-unit gradients, which keeps the comparison meaningful
//! where truncation noise dominates tiny derivatives.

use super::tape::{NodeId, Tape};
use super::{Result, Tensor, TensorError};

pub const STEP: f64 = 1e-4;

/// Runs `build` once analytically and `2 * num_values` times numerically,
/// returning the maximum relative error across every element of every leaf.
///
/// `build` must construct the same deterministic scalar-valued graph on each
/// call (no interior randomness).
pub fn grad_check<F>(build: F, leaves: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let ids: Vec<NodeId> =
        leaves.iter().map(|t| tape.leaf(t.clone().requires_grad(true))).collect();
    let out = build(&mut tape, &ids)?;
    if tape.value(out).len() != 1 {
        return Err(TensorError::NonScalarLoss { shape: tape.shape_of(out).to_vec() });
    }
    if !tape.value(out)[0].is_finite() {
        return Err(TensorError::NonFinite { op: "grad_check" });
    }
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(leaves)
        .map(|(&id, leaf)| tape.grad(id).map_or_else(|| vec![0.0; leaf.len()], <[f64]>::to_vec))
        .collect();

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = perturbed.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &ids)?;
        Ok(tape.value(out)[0])
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<f64>> = leaves.to_vec();
    for (li, leaf) in leaves.iter().enumerate() {
        for ei in 0..leaf.len() {
            let base = leaf.data()[ei];
            work[li].data_mut()[ei] = base + STEP;
            let f_plus = eval(&work)?;
            work[li].data_mut()[ei] = base - STEP;
            let f_minus = eval(&work)?;
            work[li].data_mut()[ei] = base;
            let numeric = (f_plus - f_minus) / (2.0 * STEP);
            let a = analytic[li][ei];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}

/// One named check of the primitive-op suite.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub max_rel_err: f64,
}

/// Gradient checks for every primitive op on randomized shapes. Inputs are
/// kept away from kinks (relu/abs at zero, batch-stat ties) so the central
/// difference is valid.
pub fn primitive_suite() -> Result<Vec<CheckResult>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x9e3779b9);

    // Uniform in [0.1, 1.0] with a random sign: bounded away from zero.
    let mut off_kink = |shape: &[usize]| -> Tensor<f64> {
        Tensor::from_fn(shape, |_| {
            let v = 0.1 + 0.9 * rng.gen::<f64>();
            if rng.gen::<bool>() {
                v
            } else {
                -v
            }
        })
    };

    let mut results = Vec::new();

    let x = off_kink(&[3, 4]);
    let w = off_kink(&[4, 2]);
    let b = off_kink(&[2]);
    results.push(CheckResult {
        name: "dense",
        max_rel_err: grad_check(
            |t, ids| {
                let y = t.dense(ids[0], ids[1], ids[2])?;
                t.sum(y)
            },
            &[x, w, b],
        )?,
    });

    let x = off_kink(&[2, 9, 3]);
    let w = off_kink(&[3, 3, 5]);
    results.push(CheckResult {
        name: "conv1d",
        max_rel_err: grad_check(
            |t, ids| {
                let y = t.conv1d(ids[0], ids[1], 2, 1)?;
                let y = t.tanh(y)?;
                t.mean(y)
            },
            &[x, w],
        )?,
    });

    let x = off_kink(&[2, 6, 5, 3]);
    let w = off_kink(&[3, 3, 3, 4]);
    results.push(CheckResult {
        name: "conv2d",
        max_rel_err: grad_check(
            |t, ids| {
                let y = t.conv2d(ids[0], ids[1], 2, 1)?;
                let y = t.sigmoid(y)?;
                t.mean(y)
            },
            &[x, w],
        )?,
    });

    let x = off_kink(&[1, 3, 4, 2]);
    let w = off_kink(&[4, 4, 2, 3]);
    results.push(CheckResult {
        name: "conv_transpose2d",
        max_rel_err: grad_check(
            |t, ids| {
                let y = t.conv_transpose2d(ids[0], ids[1], 2, 1)?;
                let y = t.tanh(y)?;
                t.mean(y)
            },
            &[x, w],
        )?,
    });

    let x = off_kink(&[4, 7]);
    results.push(CheckResult {
        name: "activations",
        max_rel_err: grad_check(
            |t, ids| {
                let r = t.relu(ids[0])?;
                let l = t.leaky_relu(ids[0], 0.2)?;
                let th = t.tanh(ids[0])?;
                let sg = t.sigmoid(ids[0])?;
                let a = t.add(r, l)?;
                let b = t.add(th, sg)?;
                let y = t.add(a, b)?;
                t.mean(y)
            },
            &[x],
        )?,
    });

    // Distinct per-feature values so min/max arguments sit far from ties.
    let x = Tensor::from_fn(&[5, 3], |i| {
        let b = i / 3;
        let f = i % 3;
        ((b * 7 + f * 5 + b * f) % 11) as f64 * 0.17 - 0.6 + b as f64 * 0.013
    });
    results.push(CheckResult {
        name: "batch_stats",
        max_rel_err: grad_check(
            |t, ids| {
                let s = t.batch_stats(ids[0])?;
                let s = t.tanh(s)?;
                t.mean(s)
            },
            &[x],
        )?,
    });

    let x = off_kink(&[2, 3, 4]);
    let y = off_kink(&[2, 3, 2]);
    results.push(CheckResult {
        name: "concat_upsample",
        max_rel_err: grad_check(
            |t, ids| {
                let c = t.concat_last(&[ids[0], ids[1]])?;
                let u = t.upsample_time(c, 2)?;
                let u = t.sigmoid(u)?;
                t.mean_rows(u).and_then(|m| t.sum(m))
            },
            &[x, y],
        )?,
    });

    // ln on strictly positive inputs; abs and clamp away from their kinks.
    let x = Tensor::from_fn(&[6], |i| 0.3 + 0.1 * i as f64);
    results.push(CheckResult {
        name: "ln_abs_clamp",
        max_rel_err: grad_check(
            |t, ids| {
                let l = t.ln(ids[0])?;
                let a = t.abs(ids[0])?;
                let c = t.clamp(ids[0], 0.05, 2.0)?;
                let s = t.add(l, a)?;
                let s = t.add(s, c)?;
                let s = t.affine(s, 0.5, -0.1)?;
                t.mean(s)
            },
            &[x],
        )?,
    });

    let x = off_kink(&[3, 5]);
    let m = off_kink(&[3, 5]);
    results.push(CheckResult {
        name: "elementwise",
        max_rel_err: grad_check(
            |t, ids| {
                let p = t.mul(ids[0], ids[1])?;
                let d = t.sub(p, ids[0])?;
                let s = t.add(d, ids[1])?;
                t.sum(s)
            },
            &[x, m],
        )?,
    });

    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grad_of_sum_has_zero_error() {
        let x = Tensor::new(&[4], vec![0.2, -0.7, 1.3, 0.5]).unwrap();
        let err = grad_check(|t, ids| t.sum(ids[0]), &[x]).unwrap();
        assert!(err < 1e-10, "sum gradient is exact, got err {err}");
    }

    #[test]
    fn primitive_suite_passes_at_1e5() {
        for check in primitive_suite().unwrap() {
            assert!(
                check.max_rel_err <= 1e-5,
                "{} gradient check failed: {}",
                check.name,
                check.max_rel_err
            );
        }
    }

    #[test]
    fn non_finite_objective_is_rejected() {
        let x = Tensor::new(&[1], vec![-1.0]).unwrap();
        // ln of a negative number NaNs inside the op, which the tape rejects.
        let err = grad_check(
            |t, ids| {
                let l = t.ln(ids[0])?;
                t.sum(l)
            },
            &[x],
        )
        .unwrap_err();
        assert!(matches!(err, TensorError::NonFinite { .. }));
    }
}
