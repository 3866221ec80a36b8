//! Layer building blocks used by the policy network.

use rand::Rng;

use crate::error::{shape_err, DiffError, Result};
use crate::params::{init_fan_in, ParamGroup, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Affine layer `y = x W + b` with `W: [in, out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    /// Registers `{name}.weight` and `{name}.bias`, initialised uniformly
    /// within `±scale / sqrt(inputs)`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        inputs: usize,
        outputs: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(DiffError::Config(format!(
                "linear layer `{name}` needs non-zero sizes, got {inputs}x{outputs}"
            )));
        }
        let w = init_fan_in(rng, &[inputs, outputs], inputs, scale);
        let b = init_fan_in(rng, &[outputs], inputs, scale);
        let weight = store.add(&format!("{name}.weight"), group, w)?;
        let bias = store.add(&format!("{name}.bias"), group, b)?;
        Ok(Self {
            weight,
            bias,
            inputs,
            outputs,
        })
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let (_, cols) = tape.value(x)?.dims2()?;
        if cols != self.inputs {
            return Err(shape_err(
                "linear",
                format!("expected {} input columns, got {cols}", self.inputs),
            ));
        }
        let xw = tape.matmul(x, w)?;
        tape.add_bias(xw, b)
    }
}

/// Interleaved `[sin(k f_0), cos(k f_0), sin(k f_1), ...]` with geometrically
/// spaced frequencies `f_i = 10000^(-2i/dim)`.
pub fn sinusoidal_embed(k: usize, dim: usize) -> Result<Tensor> {
    if dim == 0 || dim % 2 != 0 {
        return Err(DiffError::Config(format!(
            "sinusoidal embedding width must be even and positive, got {dim}"
        )));
    }
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = 10000f64.powf(-(2.0 * i as f64) / dim as f64);
        let phase = k as f64 * freq;
        out.push(phase.sin());
        out.push(phase.cos());
    }
    Ok(Tensor::vector(out))
}
