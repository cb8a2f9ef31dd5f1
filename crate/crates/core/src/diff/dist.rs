//! Latent distributions living on a [`Tape`]: diagonal Gaussians and grouped
//! categoricals, their closed-form KL divergences and reparameterized samples.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::{Error, Result};

/// Lower bound added to every standard deviation.
pub const STDDEV_FLOOR: f64 = 1e-4;

/// Batch of diagonal Gaussians; `mean` and `stddev` are `batch × dim`.
#[derive(Clone, Copy, Debug)]
pub struct DiagGaussian {
    pub mean: Var,
    pub stddev: Var,
}

impl DiagGaussian {
    /// Stddev parameterized as `softplus(raw) + 1e-4`.
    pub fn from_raw(tape: &mut Tape, mean: Var, raw_stddev: Var) -> Self {
        let sp = tape.softplus(raw_stddev);
        let stddev = tape.add_scalar(sp, STDDEV_FLOOR);
        Self { mean, stddev }
    }

    pub fn dim(&self, tape: &Tape) -> usize {
        tape.shape(self.mean).1
    }
}

/// Batch of `groups` independent categoricals with `classes` outcomes each;
/// `logits` is `batch × (groups·classes)`, one contiguous block per group.
#[derive(Clone, Copy, Debug)]
pub struct CategoricalLatent {
    pub logits: Var,
    pub groups: usize,
    pub classes: usize,
}

impl CategoricalLatent {
    pub fn new(tape: &Tape, logits: Var, groups: usize, classes: usize) -> Result<Self> {
        if tape.shape(logits).1 != groups * classes {
            return Err(Error::Shape(format!(
                "categorical logits have {} columns, expected {groups}x{classes}",
                tape.shape(logits).1
            )));
        }
        if !tape.value(logits).all_finite() {
            return Err(Error::NonFinite("categorical logits".into()));
        }
        Ok(Self {
            logits,
            groups,
            classes,
        })
    }

    pub fn log_probs(&self, tape: &mut Tape) -> Var {
        tape.group_log_softmax(self.logits, self.classes)
    }

    pub fn probs(&self, tape: &mut Tape) -> Var {
        tape.group_softmax(self.logits, self.classes)
    }

    /// Per-row entropy summed over groups, `batch × 1`.
    pub fn entropy(&self, tape: &mut Tape) -> Var {
        let lp = self.log_probs(tape);
        let p = self.probs(tape);
        let plp = tape.mul(p, lp);
        let s = tape.sum_cols(plp);
        tape.neg(s)
    }
}

/// Either latent family.
#[derive(Clone, Copy, Debug)]
pub enum LatentDist {
    Gaussian(DiagGaussian),
    Categorical(CategoricalLatent),
}

impl LatentDist {
    /// Same distribution with every parameter cut from the graph.
    pub fn detached(&self, tape: &mut Tape) -> Self {
        match *self {
            LatentDist::Gaussian(g) => LatentDist::Gaussian(DiagGaussian {
                mean: tape.detach(g.mean),
                stddev: tape.detach(g.stddev),
            }),
            LatentDist::Categorical(c) => LatentDist::Categorical(CategoricalLatent {
                logits: tape.detach(c.logits),
                ..c
            }),
        }
    }

    pub fn batch(&self, tape: &Tape) -> usize {
        match self {
            LatentDist::Gaussian(g) => tape.shape(g.mean).0,
            LatentDist::Categorical(c) => tape.shape(c.logits).0,
        }
    }
}

/// Externally supplied randomness for one reparameterized draw.
/// Gaussian: standard normals `batch × dim`. Categorical: uniforms in
/// `[0,1)`, `batch × groups`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LatentNoise {
    Gaussian(Tensor),
    Categorical(Tensor),
}

impl LatentNoise {
    pub fn gaussian(rng: &mut impl Rng, batch: usize, dim: usize) -> Self {
        let data = (0..batch * dim).map(|_| rng.sample(StandardNormal)).collect();
        LatentNoise::Gaussian(Tensor::new(batch, dim, data))
    }

    pub fn categorical(rng: &mut impl Rng, batch: usize, groups: usize) -> Self {
        let data = (0..batch * groups).map(|_| rng.random::<f64>()).collect();
        LatentNoise::Categorical(Tensor::new(batch, groups, data))
    }
}

/// Closed-form `KL(p ∥ q)` per batch row, `batch × 1`.
pub fn kl_diag_gaussian(tape: &mut Tape, p: &DiagGaussian, q: &DiagGaussian) -> Result<Var> {
    let shapes = [
        tape.shape(p.mean),
        tape.shape(p.stddev),
        tape.shape(q.mean),
        tape.shape(q.stddev),
    ];
    if shapes.iter().any(|s| *s != shapes[0]) {
        return Err(Error::Contract(format!(
            "kl_diag_gaussian dimension mismatch: {shapes:?}"
        )));
    }
    // ln(σq/σp) + (σp² + (μp − μq)²) / (2σq²) − ½
    let log_ratio = {
        let lq = tape.ln(q.stddev);
        let lp = tape.ln(p.stddev);
        tape.sub(lq, lp)
    };
    let vp = tape.square(p.stddev);
    let dm = tape.sub(p.mean, q.mean);
    let dm2 = tape.square(dm);
    let num = tape.add(vp, dm2);
    let vq = tape.square(q.stddev);
    let den = tape.scale(vq, 2.0);
    let frac = tape.div(num, den);
    let terms = tape.add(log_ratio, frac);
    let terms = tape.add_scalar(terms, -0.5);
    Ok(tape.sum_cols(terms))
}

/// Exact `Σ_groups Σ_c p log(p/q)` per batch row, `batch × 1`.
pub fn kl_categorical(tape: &mut Tape, p: &CategoricalLatent, q: &CategoricalLatent) -> Result<Var> {
    if p.groups != q.groups
        || p.classes != q.classes
        || tape.shape(p.logits) != tape.shape(q.logits)
    {
        return Err(Error::Contract(format!(
            "kl_categorical shape mismatch: {}x{} {:?} vs {}x{} {:?}",
            p.groups,
            p.classes,
            tape.shape(p.logits),
            q.groups,
            q.classes,
            tape.shape(q.logits)
        )));
    }
    let lp = p.log_probs(tape);
    let lq = q.log_probs(tape);
    let pp = p.probs(tape);
    let diff = tape.sub(lp, lq);
    let terms = tape.mul(pp, diff);
    Ok(tape.sum_cols(terms))
}

/// KL between two latent distributions of the same family.
pub fn kl_latent(tape: &mut Tape, p: &LatentDist, q: &LatentDist) -> Result<Var> {
    match (p, q) {
        (LatentDist::Gaussian(p), LatentDist::Gaussian(q)) => kl_diag_gaussian(tape, p, q),
        (LatentDist::Categorical(p), LatentDist::Categorical(q)) => kl_categorical(tape, p, q),
        _ => Err(Error::Contract("kl between different latent families".into())),
    }
}

/// Differentiable draw. Gaussian: `mean + stddev ⊙ noise`. Categorical:
/// exact one-hot by inverse CDF with the straight-through gradient of the
/// softmax probabilities.
pub fn reparam_sample(tape: &mut Tape, dist: &LatentDist, noise: &LatentNoise) -> Result<Var> {
    match (dist, noise) {
        (LatentDist::Gaussian(g), LatentNoise::Gaussian(eps)) => {
            if tape.shape(g.mean) != eps.shape() {
                return Err(Error::Contract(format!(
                    "gaussian noise shape {:?} does not match {:?}",
                    eps.shape(),
                    tape.shape(g.mean)
                )));
            }
            let e = tape.constant(eps.clone());
            let scaled = tape.mul(g.stddev, e);
            Ok(tape.add(g.mean, scaled))
        }
        (LatentDist::Categorical(c), LatentNoise::Categorical(u)) => {
            let batch = tape.shape(c.logits).0;
            if u.shape() != (batch, c.groups) {
                return Err(Error::Contract(format!(
                    "categorical noise shape {:?} does not match {}x{}",
                    u.shape(),
                    batch,
                    c.groups
                )));
            }
            let probs = c.probs(tape);
            let onehot = one_hot_by_inverse_cdf(tape.value(probs), u, c.classes);
            Ok(tape.straight_through(onehot, probs))
        }
        _ => Err(Error::Contract("noise family does not match distribution".into())),
    }
}

/// One-hot draw per group: the first class whose cumulative probability
/// exceeds the uniform.
pub fn one_hot_by_inverse_cdf(probs: &Tensor, uniforms: &Tensor, classes: usize) -> Tensor {
    let mut out = Tensor::zeros(probs.rows(), probs.cols());
    let groups = probs.cols() / classes;
    for r in 0..probs.rows() {
        for g in 0..groups {
            let u = uniforms.get(r, g);
            let base = g * classes;
            let mut acc = 0.0;
            let mut pick = classes - 1;
            for k in 0..classes {
                acc += probs.get(r, base + k);
                if u < acc {
                    pick = k;
                    break;
                }
            }
            out.set(r, base + pick, 1.0);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gauss(tape: &mut Tape, mean: &[f64], std: &[f64]) -> DiagGaussian {
        DiagGaussian {
            mean: tape.param(Tensor::row(mean)),
            stddev: tape.param(Tensor::row(std)),
        }
    }

    #[test]
    fn gaussian_kl_closed_forms() {
        let mut t = Tape::new();
        let p = gauss(&mut t, &[0.3, -1.0], &[0.5, 2.0]);
        let kl = kl_diag_gaussian(&mut t, &p, &p).unwrap();
        assert!(t.item(kl).abs() < 1e-15);

        let p = gauss(&mut t, &[1.0], &[1.0]);
        let q = gauss(&mut t, &[0.0], &[1.0]);
        let kl = kl_diag_gaussian(&mut t, &p, &q).unwrap();
        assert!((t.item(kl) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gaussian_kl_matches_monte_carlo() {
        // KL(N(0,2²) ∥ N(0,1)) against a 10^6-sample estimate of E_p[log p − log q].
        let mut t = Tape::new();
        let p = gauss(&mut t, &[0.0], &[2.0]);
        let q = gauss(&mut t, &[0.0], &[1.0]);
        let kl = kl_diag_gaussian(&mut t, &p, &q).unwrap();
        let kl = t.item(kl);
        assert!((kl - 0.806_852_819_440_054_3).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for _ in 0..n {
            let x: f64 = 2.0 * rng.sample::<f64, _>(StandardNormal);
            let log_p = -0.5 * (x / 2.0).powi(2) - 2f64.ln();
            let log_q = -0.5 * x * x;
            let d = log_p - log_q;
            sum += d;
            sumsq += d * d;
        }
        let mean = sum / n as f64;
        let se = ((sumsq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - kl).abs() < 3.0 * se, "mc {mean} ± {se} vs {kl}");
    }

    #[test]
    fn gaussian_kl_dimension_mismatch() {
        let mut t = Tape::new();
        let p = gauss(&mut t, &[0.0, 1.0], &[1.0, 1.0]);
        let q = gauss(&mut t, &[0.0], &[1.0]);
        assert!(matches!(kl_diag_gaussian(&mut t, &p, &q), Err(Error::Contract(_))));
    }

    #[test]
    fn categorical_kl_cases() {
        let mut t = Tape::new();
        let u = t.param(Tensor::row(&[0.0, 0.0, 0.0, 0.0]));
        let cu = CategoricalLatent::new(&t, u, 2, 2).unwrap();
        let kl = kl_categorical(&mut t, &cu, &cu).unwrap();
        assert_eq!(t.item(kl), 0.0);

        // near point mass on class 0 vs uniform over two classes → ln 2
        let pm = t.param(Tensor::row(&[0.0, -800.0]));
        let p = CategoricalLatent::new(&t, pm, 1, 2).unwrap();
        let un = t.param(Tensor::row(&[0.0, 0.0]));
        let q = CategoricalLatent::new(&t, un, 1, 2).unwrap();
        let kl = kl_categorical(&mut t, &p, &q).unwrap();
        assert!((t.item(kl) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn categorical_kl_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (groups, classes) = (3, 4);
            let a: Vec<f64> = (0..12).map(|_| rng.random_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..12).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut t = Tape::new();
            let pa = t.param(Tensor::row(&a));
            let pb = t.param(Tensor::row(&b));
            let p = CategoricalLatent::new(&t, pa, groups, classes).unwrap();
            let q = CategoricalLatent::new(&t, pb, groups, classes).unwrap();
            let kl = kl_categorical(&mut t, &p, &q).unwrap();
            let kl = t.item(kl);
            let softmax = |z: &[f64]| {
                let e: Vec<f64> = z.iter().map(|x| x.exp()).collect();
                let s: f64 = e.iter().sum();
                e.into_iter().map(|x| x / s).collect::<Vec<_>>()
            };
            let mut direct = 0.0;
            for g in 0..groups {
                let pp = softmax(&a[g * classes..(g + 1) * classes]);
                let qq = softmax(&b[g * classes..(g + 1) * classes]);
                direct += pp.iter().zip(&qq).map(|(x, y)| x * (x / y).ln()).sum::<f64>();
            }
            assert!((kl - direct).abs() < 1e-12);
            assert!(kl >= 0.0);
        }
    }

    #[test]
    fn categorical_shape_mismatch() {
        let mut t = Tape::new();
        let a = t.param(Tensor::row(&[0.0; 4]));
        let b = t.param(Tensor::row(&[0.0; 6]));
        let p = CategoricalLatent::new(&t, a, 1, 4).unwrap();
        let q = CategoricalLatent::new(&t, b, 2, 3).unwrap();
        assert!(kl_categorical(&mut t, &p, &q).is_err());
        assert!(CategoricalLatent::new(&t, a, 2, 3).is_err());
    }

    #[test]
    fn gaussian_sample_degenerate_and_gradient() {
        let mut t = Tape::new();
        let mean = t.param(Tensor::row(&[0.5, -1.5, 2.0]));
        let std = t.param(Tensor::row(&[0.0, 0.0, 0.0]));
        let d = LatentDist::Gaussian(DiagGaussian { mean, stddev: std });
        let noise = LatentNoise::Gaussian(Tensor::row(&[0.3, -2.0, 1.0]));
        let s = reparam_sample(&mut t, &d, &noise).unwrap();
        assert_eq!(t.value(s).data(), &[0.5, -1.5, 2.0]);
        let total = t.sum(s);
        t.backward(total).unwrap();
        assert_eq!(t.grad(mean).unwrap().data(), &[1.0, 1.0, 1.0]);
        assert_eq!(t.grad(std).unwrap().data(), &[0.3, -2.0, 1.0]);
    }

    #[test]
    fn sample_is_deterministic_given_noise() {
        let run = || {
            let mut t = Tape::new();
            let logits = t.param(Tensor::row(&[0.1, 0.7, -0.2, 1.0, 0.0, 0.0]));
            let d = LatentDist::Categorical(CategoricalLatent::new(&t, logits, 2, 3).unwrap());
            let noise = LatentNoise::Categorical(Tensor::row(&[0.42, 0.91]));
            let s = reparam_sample(&mut t, &d, &noise).unwrap();
            t.value(s).clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn noise_shape_is_checked() {
        let mut t = Tape::new();
        let mean = t.param(Tensor::row(&[0.0, 0.0]));
        let std = t.param(Tensor::row(&[1.0, 1.0]));
        let d = LatentDist::Gaussian(DiagGaussian { mean, stddev: std });
        let noise = LatentNoise::Gaussian(Tensor::row(&[0.0]));
        assert!(reparam_sample(&mut t, &d, &noise).is_err());
        let wrong_family = LatentNoise::Categorical(Tensor::row(&[0.5]));
        assert!(reparam_sample(&mut t, &d, &wrong_family).is_err());
    }

    #[test]
    fn straight_through_gradient_is_softmax_pathway() {
        // d/dlogits Σ w ⊙ onehot  ==  d/dlogits Σ w ⊙ softmax(logits)
        let logits = [0.2, -0.4, 0.9, 0.1, 0.1, -1.0];
        let w = Tensor::row(&[1.0, -2.0, 0.5, 3.0, 0.0, 1.5]);

        let mut t = Tape::new();
        let l = t.param(Tensor::row(&logits));
        let d = LatentDist::Categorical(CategoricalLatent::new(&t, l, 2, 3).unwrap());
        let s = reparam_sample(&mut t, &d, &LatentNoise::Categorical(Tensor::row(&[0.3, 0.6]))).unwrap();
        let value = t.value(s).clone();
        for g in 0..2 {
            let block = &value.data()[g * 3..g * 3 + 3];
            assert_eq!(block.iter().filter(|&&x| x == 1.0).count(), 1);
            assert_eq!(block.iter().filter(|&&x| x == 0.0).count(), 2);
        }
        let wc = t.constant(w.clone());
        let prod = t.mul(s, wc);
        let root = t.sum(prod);
        t.backward(root).unwrap();
        let st_grad = t.grad(l).unwrap().clone();

        let mut t2 = Tape::new();
        let l2 = t2.param(Tensor::row(&logits));
        let p = t2.group_softmax(l2, 3);
        let wc = t2.constant(w);
        let prod = t2.mul(p, wc);
        let root = t2.sum(prod);
        t2.backward(root).unwrap();
        assert_eq!(&st_grad, t2.grad(l2).unwrap());
    }
}
