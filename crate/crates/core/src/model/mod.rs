//! Network architectures expressed on the autodiff primitives.

mod encoder;
mod policy;

pub use encoder::{Encoder, EncoderConfig};
pub use policy::{AgentContext, PolicyConfig, PolicyNet};

use rand::Rng as _;

use crate::autodiff::{Bound, Graph, Tensor, Var};
use crate::error::Result;
use crate::rng::Rng;

/// Uniform fan-in initialisation, `U(-gain·√(6/fan_in), +gain·√(6/fan_in))`.
pub(crate) fn he_uniform(rng: &mut Rng, shape: &[usize], fan_in: usize, gain: f64) -> Tensor {
    let bound = gain * (6.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// `x · W + b` for `x` of shape `[.., in]`.
pub(crate) fn linear(g: &mut Graph, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let w = p.get(&format!("{prefix}.w"))?;
    let b = p.get(&format!("{prefix}.b"))?;
    let h = g.matmul(x, w)?;
    g.add(h, b)
}

/// Layer normalisation with learned gain and bias.
pub(crate) fn layer_norm(g: &mut Graph, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let n = g.layer_norm(x, 1e-5)?;
    let gain = p.get(&format!("{prefix}.g"))?;
    let bias = p.get(&format!("{prefix}.b"))?;
    let h = g.mul(n, gain)?;
    g.add(h, bias)
}
