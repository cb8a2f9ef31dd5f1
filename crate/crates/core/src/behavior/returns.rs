//! λ-return targets `G_k = r_k + γ c_k ((1−λ) v_{k+1} + λ G_{k+1})`,
//! `G_{K−1} = v_{K−1}`.

use crate::diff::{Tape, Tensor, Var};
use crate::{Error, Result};

fn check(rewards: usize, conts: usize, values: usize, gamma: f64, lambda: f64) -> Result<()> {
    if values == 0 {
        return Err(Error::Shape("λ-returns of an empty trajectory".into()));
    }
    // the last reward/continuation never enters the recursion, so callers
    // may pass K or K−1 of them
    if rewards != conts || !(rewards == values || rewards + 1 == values) {
        return Err(Error::Shape(format!(
            "λ-returns: {rewards} rewards, {conts} continuations, {values} values"
        )));
    }
    if !(0.0..1.0).contains(&gamma) || !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("γ={gamma} must lie in [0,1) and λ={lambda} in [0,1]")));
    }
    Ok(())
}

/// Scalar λ-returns of one trajectory.
pub fn lambda_returns(rewards: &[f64], conts: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>> {
    check(rewards.len(), conts.len(), values.len(), gamma, lambda)?;
    let k = values.len();
    let mut g = vec![0.0; k];
    g[k - 1] = values[k - 1];
    for j in (0..k - 1).rev() {
        g[j] = rewards[j] + gamma * conts[j] * ((1.0 - lambda) * values[j + 1] + lambda * g[j + 1]);
    }
    Ok(g)
}

/// Column-wise λ-returns of a batch; each element is `batch × 1`.
pub fn lambda_returns_batch(
    rewards: &[Tensor],
    conts: &[Tensor],
    values: &[Tensor],
    gamma: f64,
    lambda: f64,
) -> Result<Vec<Tensor>> {
    check(rewards.len(), conts.len(), values.len(), gamma, lambda)?;
    let k = values.len();
    let mut g = vec![values[k - 1].clone(); k];
    for j in (0..k - 1).rev() {
        let boot = values[j + 1].zip_map(&g[j + 1], |v, n| (1.0 - lambda) * v + lambda * n);
        let disc = conts[j].zip_map(&boot, |c, b| gamma * c * b);
        g[j] = rewards[j].zip_map(&disc, |r, d| r + d);
    }
    Ok(g)
}

/// The same recursion on the tape, differentiable in every input.
pub fn lambda_returns_tape(
    tape: &mut Tape,
    rewards: &[Var],
    conts: &[Var],
    values: &[Var],
    gamma: f64,
    lambda: f64,
) -> Result<Vec<Var>> {
    check(rewards.len(), conts.len(), values.len(), gamma, lambda)?;
    let k = values.len();
    let mut g = vec![values[k - 1]; k];
    for j in (0..k - 1).rev() {
        let a = tape.scale(values[j + 1], 1.0 - lambda);
        let b = tape.scale(g[j + 1], lambda);
        let boot = tape.add(a, b);
        let disc = tape.mul(conts[j], boot);
        let disc = tape.scale(disc, gamma);
        g[j] = tape.add(rewards[j], disc);
    }
    Ok(g)
}
