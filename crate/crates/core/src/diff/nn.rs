//! Parameter collections and the layers built on them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Index of a tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named, flat collection of parameter tensors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name `{name}`"
        );
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    /// Places every tensor on `tape`, trainable or frozen.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    /// Gradients of a trainable binding after `tape.backward`.
    pub fn grads(&self, tape: &Tape, bound: &Bound) -> Vec<Tensor> {
        bound.vars.iter().map(|&v| tape.grad_or_zeros(v)).collect()
    }
}

/// Tape handles for one binding of a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps tape handles created elsewhere, in [`ParamSet`] order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Silu,
    Tanh,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Silu => tape.silu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

/// Affine map `x·W + b`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Glorot-uniform weights, zero bias. `zero_init` zeroes the weights too.
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        zero_init: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let data = (0..in_dim * out_dim)
            .map(|_| {
                if zero_init {
                    0.0
                } else {
                    rng.random_range(-limit..limit)
                }
            })
            .collect();
        let weight = params.add(format!("{name}.w"), Tensor::new(in_dim, out_dim, data));
        let bias = params.add(format!("{name}.b"), Tensor::zeros(1, out_dim));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Var {
        let h = tape.matmul(x, p.var(self.weight));
        tape.add_row(h, p.var(self.bias))
    }
}

/// Stack of linear layers with a hidden activation and a linear output.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        in_dim: usize,
        hidden: usize,
        depth: usize,
        out_dim: usize,
        zero_output: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let mut layers = Vec::with_capacity(depth + 1);
        let mut d = in_dim;
        for l in 0..depth {
            layers.push(Linear::new(params, &format!("{name}.h{l}"), d, hidden, false, rng));
            d = hidden;
        }
        layers.push(Linear::new(params, &format!("{name}.out"), d, out_dim, zero_output, rng));
        Self {
            layers,
            activation: Activation::Silu,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Var {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, p, h);
            if i < last {
                h = self.activation.apply(tape, h);
            }
        }
        h
    }
}

/// Gated recurrent cell:
/// `r = σ(x·Wr + h·Ur)`, `u = σ(x·Wu + h·Uu)`,
/// `c = tanh(x·Wc + r ⊙ (h·Uc))`, `h' = (1 − u) ⊙ h + u ⊙ c`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GruCell {
    input: Linear,
    hidden: Linear,
    pub hidden_dim: usize,
}

impl GruCell {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        in_dim: usize,
        hidden_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let input = Linear::new(params, &format!("{name}.x"), in_dim, 3 * hidden_dim, false, rng);
        let hidden = Linear::new(params, &format!("{name}.h"), hidden_dim, 3 * hidden_dim, false, rng);
        Self {
            input,
            hidden,
            hidden_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var, h: Var) -> Var {
        let n = self.hidden_dim;
        let gx = self.input.forward(tape, p, x);
        let gh = self.hidden.forward(tape, p, h);
        let xr = tape.slice_cols(gx, 0, n);
        let xu = tape.slice_cols(gx, n, n);
        let xc = tape.slice_cols(gx, 2 * n, n);
        let hr = tape.slice_cols(gh, 0, n);
        let hu = tape.slice_cols(gh, n, n);
        let hc = tape.slice_cols(gh, 2 * n, n);
        let r = tape.add(xr, hr);
        let r = tape.sigmoid(r);
        let u = tape.add(xu, hu);
        let u = tape.sigmoid(u);
        let gated = tape.mul(r, hc);
        let c = tape.add(xc, gated);
        let c = tape.tanh(c);
        // h + u ⊙ (c − h)
        let delta = tape.sub(c, h);
        let step = tape.mul(u, delta);
        tape.add(h, step)
    }
}
