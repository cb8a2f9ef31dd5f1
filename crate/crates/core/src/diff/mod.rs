//! Self-contained reverse-mode differentiable numerics: a matrix tape,
//! dense layers, a gated recurrent cell, latent distributions, an adaptive
//! moment optimizer and parameter checkpoints.

pub mod checkpoint;
pub mod dist;
pub mod gradcheck;
pub mod nn;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use checkpoint::{load_params, save_params, CHECKPOINT_HEADER};
pub use dist::{
    kl_categorical, kl_diag_gaussian, reparam_sample, CategoricalLatent, DiagGaussian, LatentDist,
    LatentNoise,
};
pub use gradcheck::{check_gradients, GradCheckReport, FD_STEP, FD_TOLERANCE};
pub use nn::{Activation, Bound, GruCell, Linear, Mlp, ParamId, ParamSet};
pub use optim::{optimizer_step, AdamConfig, OptimizerState, StepReport};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

/// `sign(x)·ln(1+|x|)`.
pub fn symlog(x: f64) -> f64 {
    x.signum() * x.abs().ln_1p()
}

/// Inverse of [`symlog`]: `sign(x)·(exp|x| − 1)`.
pub fn symexp(x: f64) -> f64 {
    x.signum() * x.abs().exp_m1()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn symlog_fixed_points() {
        assert_eq!(symlog(0.0), 0.0);
        assert!((symlog(std::f64::consts::E - 1.0) - 1.0).abs() < 1e-15);
        assert!((symlog(-(std::f64::consts::E - 1.0)) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn symexp_inverts_symlog() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let x: f64 = rng.random_range(-1e4..1e4);
            let back = symexp(symlog(x));
            assert!((back - x).abs() <= 1e-9 * x.abs().max(1e-300), "{x} -> {back}");
        }
    }
}
