//! Reverse-mode differentiation for small fp64 tanh MLPs.
//!
//! Networks are `[in, h1, .., out]` stacks of affine layers with `tanh` on
//! every hidden layer and identity on the output. Parameters live in one flat
//! buffer, layer by layer, each layer storing its `out × in` weight matrix
//! (row-major) followed by its bias.

mod adam;
mod checkpoint;
mod graph;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use graph::{Gradients, Graph, NodeId};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::{rng, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct MlpSpec {
    layer_sizes: Vec<usize>,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "an MLP needs at least an input and an output size, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidInput(format!(
                "layer sizes must be positive, got {layer_sizes:?}"
            )));
        }
        Ok(MlpSpec { layer_sizes })
    }

    /// `[input, hidden.., output]`
    pub fn with_hidden(input: usize, hidden: &[usize], output: usize) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        MlpSpec::new(sizes)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Number of affine layers.
    pub fn depth(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// `(fan_in, fan_out)` of affine layer `l`.
    pub fn layer_shape(&self, l: usize) -> (usize, usize) {
        (self.layer_sizes[l], self.layer_sizes[l + 1])
    }

    /// Offset of layer `l`'s weights in the flat buffer; its bias follows
    /// `fan_in * fan_out` entries later.
    pub fn layer_offset(&self, l: usize) -> usize {
        (0..l)
            .map(|k| {
                let (i, o) = self.layer_shape(k);
                i * o + o
            })
            .sum()
    }

    pub fn param_count(&self) -> usize {
        self.layer_offset(self.depth())
    }
}

impl TryFrom<Vec<usize>> for MlpSpec {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        MlpSpec::new(v)
    }
}

impl From<MlpSpec> for Vec<usize> {
    fn from(s: MlpSpec) -> Self {
        s.layer_sizes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    spec: MlpSpec,
    data: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(spec: MlpSpec) -> Self {
        let n = spec.param_count();
        MlpParams {
            spec,
            data: vec![0.0; n],
        }
    }

    pub fn from_flat(spec: MlpSpec, data: Vec<f64>) -> Result<Self> {
        if data.len() != spec.param_count() {
            return Err(Error::DimensionMismatch {
                context: "flat parameter buffer",
                expected: spec.param_count(),
                got: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            let p = MlpParams { spec, data };
            return Err(Error::NonFinite(format!("parameter in {}", p.block_name(i))));
        }
        Ok(MlpParams { spec, data })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn weight(&self, l: usize) -> &[f64] {
        let (i, o) = self.spec.layer_shape(l);
        let off = self.spec.layer_offset(l);
        &self.data[off..off + i * o]
    }

    pub fn weight_mut(&mut self, l: usize) -> &mut [f64] {
        let (i, o) = self.spec.layer_shape(l);
        let off = self.spec.layer_offset(l);
        &mut self.data[off..off + i * o]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let (i, o) = self.spec.layer_shape(l);
        let off = self.spec.layer_offset(l) + i * o;
        &self.data[off..off + o]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let (i, o) = self.spec.layer_shape(l);
        let off = self.spec.layer_offset(l) + i * o;
        &mut self.data[off..off + o]
    }

    /// Human-readable name of the block holding flat index `idx`,
    /// e.g. `"layer 1 weight"`.
    pub fn block_name(&self, idx: usize) -> String {
        for l in 0..self.spec.depth() {
            let (i, o) = self.spec.layer_shape(l);
            let off = self.spec.layer_offset(l);
            if idx < off + i * o {
                return format!("layer {l} weight");
            }
            if idx < off + i * o + o {
                return format!("layer {l} bias");
            }
        }
        format!("index {idx} (out of range)")
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Weights uniform in `[-1/√fan_in, 1/√fan_in]`, biases zero.
pub fn init_params(spec: &MlpSpec, seed: u64) -> MlpParams {
    let mut rng = rng::derive_rng(seed, "mlp-init", 0);
    let mut params = MlpParams::zeros(spec.clone());
    for l in 0..spec.depth() {
        let (fan_in, _) = spec.layer_shape(l);
        let bound = 1.0 / (fan_in as f64).sqrt();
        for w in params.weight_mut(l) {
            *w = rng.gen_range(-bound..=bound);
        }
    }
    params
}

/// Single-input forward pass.
pub fn mlp_forward<'p>(params: &'p MlpParams, x: &[f64]) -> Result<(Vec<f64>, Graph<'p>)> {
    let graph = mlp_forward_batch(params, Matrix::row_vector(x))?;
    let y = graph.output().row(0).to_vec();
    Ok((y, graph))
}

/// Forward pass over a batch whose rows are inputs.
pub fn mlp_forward_batch(params: &MlpParams, xs: Matrix) -> Result<Graph<'_>> {
    let mut g = Graph::new(params.len());
    let mut h = g.input(xs)?;
    let depth = params.spec().depth();
    for l in 0..depth {
        h = g.affine(params, l, h)?;
        if l + 1 < depth {
            h = g.tanh(h);
        }
    }
    Ok(g)
}

/// Output only, no tape kept beyond the call.
pub fn mlp_eval(params: &MlpParams, x: &[f64]) -> Result<Vec<f64>> {
    mlp_forward(params, x).map(|(y, _)| y)
}

/// Forward pass over a batch, returning outputs only.
pub fn mlp_eval_batch(params: &MlpParams, xs: Matrix) -> Result<Matrix> {
    Ok(mlp_forward_batch(params, xs)?.into_output())
}

/// Gradients of `⟨seed, y⟩` with respect to parameters and the input.
pub fn backward(graph: &Graph<'_>, seed: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let seed = Matrix::row_vector(seed);
    let grads = graph.backward(&seed)?;
    Ok((grads.params, grads.inputs.into_vec()))
}

/// `m × n` Jacobian of the network output with respect to its input.
pub fn input_jacobian(params: &MlpParams, x: &[f64]) -> Result<Matrix> {
    let (_, graph) = mlp_forward(params, x)?;
    jacobian_from_graph(&graph)
        .map(|mut js| js.pop().expect("graph over one input yields one Jacobian"))
}

/// Per-row `m × n` input Jacobians for a batch, using `m` reverse passes
/// over the shared tape.
pub fn input_jacobian_batch(params: &MlpParams, xs: Matrix) -> Result<Vec<Matrix>> {
    let graph = mlp_forward_batch(params, xs)?;
    jacobian_from_graph(&graph)
}

/// Per-row input Jacobians of whatever `graph` computes.
pub fn jacobian_from_graph(graph: &Graph<'_>) -> Result<Vec<Matrix>> {
    let out = graph.output();
    let (batch, m) = (out.rows(), out.cols());
    let n = graph.input_dim();
    let mut jac = vec![Matrix::zeros(m, n); batch];
    let mut seed = Matrix::zeros(batch, m);
    for k in 0..m {
        for b in 0..batch {
            seed.set(b, k, 1.0);
            if k > 0 {
                seed.set(b, k - 1, 0.0);
            }
        }
        let g = graph.backward_inputs(&seed)?;
        for (b, j) in jac.iter_mut().enumerate() {
            j.row_mut(k).copy_from_slice(g.row(b));
        }
    }
    Ok(jac)
}
