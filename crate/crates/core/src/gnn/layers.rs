use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::TensorError;

/// Affine map `x W + b` on row vectors; `W` is `input × output`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    input: usize,
    output: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.insert_uniform(format!("{name}.weight"), &[input, output], input, rng);
        let bias = store.insert_uniform(format!("{name}.bias"), &[output], input, rng);
        Linear {
            weight,
            bias,
            input,
            output,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn output_dim(&self) -> usize {
        self.output
    }

    pub fn forward(&self, tape: &mut Tape, params: &Bound, x: Var) -> Result<Var, TensorError> {
        let xw = tape.matmul(x, params.var(self.weight))?;
        tape.add(xw, params.var(self.bias))
    }
}

/// Linear layers with ReLU between consecutive layers (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    /// `widths = [in, h1, ..., out]`.
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, widths: &[usize], rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Mlp { layers }
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn forward(&self, tape: &mut Tape, params: &Bound, x: Var) -> Result<Var, TensorError> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                h = tape.relu(h);
            }
            h = layer.forward(tape, params, h)?;
        }
        Ok(h)
    }
}
