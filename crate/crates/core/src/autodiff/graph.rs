use crate::autodiff::MlpParams;
use crate::linalg::{axpy, dot, Matrix};
use crate::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<'p> {
    Input,
    Affine {
        x: NodeId,
        weight: &'p [f64],
        bias: &'p [f64],
        offset: usize,
    },
    Tanh(NodeId),
    Square(NodeId),
    SumCols(NodeId),
}

#[derive(Debug)]
struct Node<'p> {
    op: Op<'p>,
    value: Matrix,
}

/// Tape of one forward evaluation over a batch.
///
/// Every node holds a `batch × width` matrix; rows never interact, so a
/// batch of `B` rows is `B` independent evaluations sharing one tape. Nodes
/// are pushed in evaluation order, which makes the node list a topological
/// order and lets [`Graph::backward`] visit each node exactly once in
/// reverse. The last node pushed is the output.
#[derive(Debug)]
pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
    n_params: usize,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    /// Flat parameter gradient, summed over the batch.
    pub params: Vec<f64>,
    /// Per-row gradient with respect to the input node.
    pub inputs: Matrix,
}

impl<'p> Graph<'p> {
    /// `n_params` is the length of the parameter buffer that affine nodes
    /// read from (0 for parameter-free graphs).
    pub fn new(n_params: usize) -> Self {
        Graph {
            nodes: Vec::new(),
            n_params,
        }
    }

    fn push(&mut self, op: Op<'p>, value: Matrix) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// The single input node; must be the first node pushed.
    pub fn input(&mut self, x: Matrix) -> Result<NodeId> {
        if !self.nodes.is_empty() {
            return Err(Error::InvalidInput(
                "graph input must be the first node".into(),
            ));
        }
        Ok(self.push(Op::Input, x))
    }

    pub fn affine(&mut self, params: &'p MlpParams, layer: usize, x: NodeId) -> Result<NodeId> {
        if params.len() != self.n_params {
            return Err(Error::DimensionMismatch {
                context: "graph parameter buffer",
                expected: self.n_params,
                got: params.len(),
            });
        }
        let (fan_in, fan_out) = params.spec().layer_shape(layer);
        let xv = &self.nodes[x.0].value;
        if xv.cols() != fan_in {
            return Err(Error::DimensionMismatch {
                context: "affine layer input",
                expected: fan_in,
                got: xv.cols(),
            });
        }
        let weight = params.weight(layer);
        let bias = params.bias(layer);
        let mut y = Matrix::zeros(xv.rows(), fan_out);
        for (xr, yr) in xv.iter_rows().zip(y.as_mut_slice().chunks_exact_mut(fan_out)) {
            for ((yo, wo), bo) in yr.iter_mut().zip(weight.chunks_exact(fan_in)).zip(bias) {
                *yo = dot(wo, xr) + bo;
            }
        }
        let offset = params.spec().layer_offset(layer);
        Ok(self.push(
            Op::Affine {
                x,
                weight,
                bias,
                offset,
            },
            y,
        ))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let mut y = self.nodes[x.0].value.clone();
        y.as_mut_slice().iter_mut().for_each(|v| *v = v.tanh());
        self.push(Op::Tanh(x), y)
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        let mut y = self.nodes[x.0].value.clone();
        y.as_mut_slice().iter_mut().for_each(|v| *v *= *v);
        self.push(Op::Square(x), y)
    }

    /// Row sums, `batch × 1`.
    pub fn sum_cols(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let sums: Vec<f64> = xv.iter_rows().map(|r| r.iter().sum()).collect();
        let y = Matrix::from_vec(xv.rows(), 1, sums).expect("one sum per row");
        self.push(Op::SumCols(x), y)
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn output(&self) -> &Matrix {
        &self.nodes.last().expect("graph has no nodes").value
    }

    pub fn into_output(mut self) -> Matrix {
        self.nodes.pop().expect("graph has no nodes").value
    }

    pub fn input_dim(&self) -> usize {
        self.nodes.first().map_or(0, |n| n.value.cols())
    }

    pub fn batch_size(&self) -> usize {
        self.nodes.first().map_or(0, |n| n.value.rows())
    }

    /// Reverse pass for `Σ_rows ⟨seed_row, output_row⟩`.
    pub fn backward(&self, seed: &Matrix) -> Result<Gradients> {
        let (params, inputs) = self.reverse(seed, true)?;
        Ok(Gradients {
            params: params.unwrap_or_default(),
            inputs,
        })
    }

    /// Reverse pass that skips parameter gradients.
    pub fn backward_inputs(&self, seed: &Matrix) -> Result<Matrix> {
        Ok(self.reverse(seed, false)?.1)
    }

    fn reverse(&self, seed: &Matrix, want_params: bool) -> Result<(Option<Vec<f64>>, Matrix)> {
        let out = self.output();
        if seed.cols() != out.cols() || seed.rows() != out.rows() {
            return Err(Error::DimensionMismatch {
                context: "backward seed",
                expected: out.rows() * out.cols(),
                got: seed.rows() * seed.cols(),
            });
        }
        let mut pgrad = want_params.then(|| vec![0.0; self.n_params]);
        let mut adj: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        *adj.last_mut().unwrap() = Some(seed.clone());

        for idx in (1..self.nodes.len()).rev() {
            let Some(dy) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match node.op {
                Op::Input => unreachable!("input is always node 0"),
                Op::Affine {
                    x,
                    weight,
                    bias,
                    offset,
                } => {
                    let xv = &self.nodes[x.0].value;
                    let (fan_in, fan_out) = (xv.cols(), bias.len());
                    if let Some(pg) = pgrad.as_mut() {
                        let (gw, rest) = pg[offset..].split_at_mut(fan_in * fan_out);
                        let gb = &mut rest[..fan_out];
                        for (xr, dr) in xv.iter_rows().zip(dy.iter_rows()) {
                            for ((gwo, gbo), &d) in
                                gw.chunks_exact_mut(fan_in).zip(gb.iter_mut()).zip(dr)
                            {
                                if d != 0.0 {
                                    axpy(d, xr, gwo);
                                    *gbo += d;
                                }
                            }
                        }
                    }
                    let dx = accumulate(&mut adj[x.0], xv.rows(), fan_in);
                    for (dxr, dr) in dx.as_mut_slice().chunks_exact_mut(fan_in).zip(dy.iter_rows()) {
                        for (wo, &d) in weight.chunks_exact(fan_in).zip(dr) {
                            if d != 0.0 {
                                axpy(d, wo, dxr);
                            }
                        }
                    }
                }
                Op::Tanh(x) => {
                    let dx = accumulate(&mut adj[x.0], dy.rows(), dy.cols());
                    for ((g, &d), &y) in dx
                        .as_mut_slice()
                        .iter_mut()
                        .zip(dy.as_slice())
                        .zip(node.value.as_slice())
                    {
                        *g += d * (1.0 - y * y);
                    }
                }
                Op::Square(x) => {
                    let xv = &self.nodes[x.0].value;
                    let dx = accumulate(&mut adj[x.0], dy.rows(), dy.cols());
                    for ((g, &d), &xi) in dx
                        .as_mut_slice()
                        .iter_mut()
                        .zip(dy.as_slice())
                        .zip(xv.as_slice())
                    {
                        *g += 2.0 * xi * d;
                    }
                }
                Op::SumCols(x) => {
                    let cols = self.nodes[x.0].value.cols();
                    let dx = accumulate(&mut adj[x.0], dy.rows(), cols);
                    for (dxr, &d) in dx.as_mut_slice().chunks_exact_mut(cols).zip(dy.as_slice()) {
                        dxr.iter_mut().for_each(|g| *g += d);
                    }
                }
            }
        }
        let inputs = adj[0]
            .take()
            .unwrap_or_else(|| Matrix::zeros(self.batch_size(), self.input_dim()));
        Ok((pgrad, inputs))
    }
}

fn accumulate(slot: &mut Option<Matrix>, rows: usize, cols: usize) -> &mut Matrix {
    slot.get_or_insert_with(|| Matrix::zeros(rows, cols))
}
