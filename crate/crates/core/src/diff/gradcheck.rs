//! Central finite-difference verification of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::{Error, Result};

pub const FD_STEP: f64 = 1e-6;
pub const FD_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, 1e-4)`.
    pub max_rel_error: f64,
    /// `(input, flat index)` where the largest error occurred.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

fn evaluate<F>(inputs: &[Tensor], f: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let root = f(&mut tape, &vars)?;
    Ok(tape.item(root))
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` with central
/// differences of step `step` taken on every input coordinate.
pub fn check_gradients<F>(inputs: &[Tensor], step: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let root = f(&mut tape, &vars)?;
    tape.backward(root)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| tape.grad_or_zeros(v)).collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut probe = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let x = input.data()[j];
            probe[k].data_mut()[j] = x + step;
            let up = evaluate(&probe, &f)?;
            probe[k].data_mut()[j] = x - step;
            let down = evaluate(&probe, &f)?;
            probe[k].data_mut()[j] = x;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[k].data()[j];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient check at input {k}, index {j}: analytic {a}, numeric {numeric}"
                )));
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
            if rel > report.max_rel_error {
                report = GradCheckReport {
                    max_rel_error: rel,
                    worst: (k, j),
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::dist::{kl_categorical, kl_diag_gaussian, reparam_sample};
    use crate::diff::{CategoricalLatent, DiagGaussian, GruCell, LatentDist, LatentNoise, Mlp, ParamSet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut impl Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
        Tensor::new(r, c, (0..r * c).map(|_| rng.random_range(lo..hi)).collect())
    }

    /// Reduces a matrix to a scalar through fixed random weights so every
    /// output coordinate contributes a distinct amount.
    fn project(tape: &mut Tape, x: Var, seed: u64) -> Var {
        let (r, c) = tape.shape(x);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = tape.constant(rand_tensor(&mut rng, r, c, -1.0, 1.0));
        let p = tape.mul(x, w);
        tape.sum(p)
    }

    fn assert_passes<F>(name: &str, inputs: &[Tensor], f: F)
    where
        F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    {
        let report = check_gradients(inputs, FD_STEP, f).unwrap();
        assert!(report.passes(FD_TOLERANCE), "{name}: {report:?}");
    }

    #[test]
    fn sum_tanh_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = rand_tensor(&mut rng, 4, 3, -1.0, 1.0);
        let x = rand_tensor(&mut rng, 3, 2, -1.0, 1.0);
        assert_passes("sum(tanh(W·x))", &[w, x], |t, v| {
            let y = t.matmul(v[0], v[1]);
            let y = t.tanh(y);
            Ok(t.sum(y))
        });
    }

    type Unary = fn(&mut Tape, Var) -> Var;

    #[test]
    fn unary_ops() {
        let ops: [(&str, Unary, f64, f64); 10] = [
            ("neg", Tape::neg, -2.0, 2.0),
            ("tanh", Tape::tanh, -2.0, 2.0),
            ("sigmoid", Tape::sigmoid, -4.0, 4.0),
            ("silu", Tape::silu, -4.0, 4.0),
            ("softplus", Tape::softplus, -4.0, 4.0),
            ("exp", Tape::exp, -2.0, 2.0),
            ("ln", Tape::ln, 0.2, 3.0),
            ("square", Tape::square, -2.0, 2.0),
            ("symlog", Tape::symlog, -5.0, 5.0),
            ("symexp", Tape::symexp, -2.0, 2.0),
        ];
        for (seed, (name, op, lo, hi)) in ops.into_iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed as u64 + 10);
            let x = rand_tensor(&mut rng, 3, 4, lo, hi);
            assert_passes(name, &[x], |t, v| {
                let y = op(t, v[0]);
                Ok(project(t, y, 99))
            });
        }
    }

    #[test]
    fn binary_and_broadcast_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = rand_tensor(&mut rng, 3, 4, -1.0, 1.0);
        let b = rand_tensor(&mut rng, 3, 4, 0.5, 2.0);
        let row = rand_tensor(&mut rng, 1, 4, -1.0, 1.0);
        let col = rand_tensor(&mut rng, 3, 1, -1.0, 1.0);
        let inputs = [a, b, row, col];
        assert_passes("add", &inputs, |t, v| {
            let y = t.add(v[0], v[1]);
            Ok(project(t, y, 1))
        });
        assert_passes("sub", &inputs, |t, v| {
            let y = t.sub(v[0], v[1]);
            Ok(project(t, y, 2))
        });
        assert_passes("mul", &inputs, |t, v| {
            let y = t.mul(v[0], v[1]);
            Ok(project(t, y, 3))
        });
        assert_passes("div", &inputs, |t, v| {
            let y = t.div(v[0], v[1]);
            Ok(project(t, y, 4))
        });
        assert_passes("add_row", &inputs, |t, v| {
            let y = t.add_row(v[0], v[2]);
            Ok(project(t, y, 5))
        });
        assert_passes("mul_col", &inputs, |t, v| {
            let y = t.mul_col(v[0], v[3]);
            Ok(project(t, y, 6))
        });
        assert_passes("scale/add_scalar", &inputs, |t, v| {
            let y = t.scale(v[0], -1.7);
            let y = t.add_scalar(y, 0.3);
            let y = t.square(y);
            Ok(project(t, y, 7))
        });
    }

    #[test]
    fn structural_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = rand_tensor(&mut rng, 2, 3, -1.0, 1.0);
        let b = rand_tensor(&mut rng, 2, 5, -1.0, 1.0);
        let inputs = [a, b];
        assert_passes("concat/slice", &inputs, |t, v| {
            let c = t.concat_cols(&[v[0], v[1]]);
            let s = t.slice_cols(c, 2, 4);
            let s = t.tanh(s);
            Ok(project(t, s, 8))
        });
        assert_passes("sum_cols", &inputs, |t, v| {
            let s = t.sum_cols(v[1]);
            let s = t.square(s);
            Ok(project(t, s, 9))
        });
        assert_passes("sum_rows", &inputs, |t, v| {
            let s = t.sum_rows(v[1]);
            let s = t.square(s);
            Ok(project(t, s, 10))
        });
        assert_passes("mean", &inputs, |t, v| {
            let s = t.square(v[0]);
            Ok(t.mean(s))
        });
    }

    #[test]
    fn group_softmax_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let logits = rand_tensor(&mut rng, 2, 6, -3.0, 3.0);
        assert_passes("group_log_softmax", &[logits.clone()], |t, v| {
            let y = t.group_log_softmax(v[0], 3);
            Ok(project(t, y, 11))
        });
        assert_passes("group_softmax", &[logits], |t, v| {
            let y = t.group_softmax(v[0], 2);
            Ok(project(t, y, 12))
        });
    }

    #[test]
    fn max_scalar_away_from_the_floor() {
        let x = Tensor::row(&[0.3, 2.0, -1.0]);
        assert_passes("max_scalar", &[x], |t, v| {
            let s = t.square(v[0]);
            let s = t.sum(s);
            Ok(t.max_scalar(s, 1.0))
        });
        let x = Tensor::row(&[0.1, 0.2]);
        assert_passes("max_scalar floored", &[x], |t, v| {
            let s = t.square(v[0]);
            let s = t.sum(s);
            Ok(t.max_scalar(s, 1.0))
        });
    }

    #[test]
    fn layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = ParamSet::new();
        let mlp = Mlp::new(&mut params, "mlp", 3, 5, 2, 2, false, &mut rng);
        let gru = GruCell::new(&mut params, "gru", 2, 4, &mut rng);
        let x = rand_tensor(&mut rng, 2, 3, -1.0, 1.0);
        let h = rand_tensor(&mut rng, 2, 4, -1.0, 1.0);
        let mut inputs = vec![x, h];
        inputs.extend(params.tensors().iter().cloned());
        assert_passes("mlp+gru", &inputs, |t, v| {
            let bound = crate::diff::Bound::from_vars(v[2..].to_vec());
            let y = mlp.forward(t, &bound, v[0]);
            let y = t.tanh(y);
            let h2 = gru.forward(t, &bound, y, v[1]);
            Ok(project(t, h2, 13))
        });
    }

    #[test]
    fn kl_and_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let inputs: Vec<Tensor> = (0..4).map(|_| rand_tensor(&mut rng, 2, 3, -1.0, 1.0)).collect();
        assert_passes("kl_diag_gaussian", &inputs, |t, v| {
            let p = DiagGaussian::from_raw(t, v[0], v[1]);
            let q = DiagGaussian::from_raw(t, v[2], v[3]);
            let kl = kl_diag_gaussian(t, &p, &q)?;
            Ok(project(t, kl, 14))
        });
        let noise = LatentNoise::gaussian(&mut rng, 2, 3);
        assert_passes("gaussian sample", &inputs[..2], |t, v| {
            let d = LatentDist::Gaussian(DiagGaussian::from_raw(t, v[0], v[1]));
            let s = reparam_sample(t, &d, &noise)?;
            Ok(project(t, s, 15))
        });
        let logits: Vec<Tensor> = (0..2).map(|_| rand_tensor(&mut rng, 2, 6, -2.0, 2.0)).collect();
        assert_passes("kl_categorical", &logits, |t, v| {
            let p = CategoricalLatent::new(t, v[0], 2, 3)?;
            let q = CategoricalLatent::new(t, v[1], 2, 3)?;
            let kl = kl_categorical(t, &p, &q)?;
            Ok(project(t, kl, 16))
        });
        assert_passes("categorical entropy", &logits[..1], |t, v| {
            let p = CategoricalLatent::new(t, v[0], 3, 2)?;
            let h = p.entropy(t);
            Ok(project(t, h, 17))
        });
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // straight-through carries the surrogate's gradient, not the forward value's
        let x = Tensor::row(&[0.3, -0.2]);
        let report = check_gradients(&[x], FD_STEP, |t, v| {
            let sq = t.square(v[0]);
            let fwd = t.value(v[0]).clone();
            let st = t.straight_through(fwd.map(|a| 3.0 * a), sq);
            Ok(t.sum(st))
        })
        .unwrap();
        assert!(!report.passes(FD_TOLERANCE));
    }
}
