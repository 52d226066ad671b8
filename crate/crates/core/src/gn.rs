//! The interaction network: an edge MLP producing messages, sum pooling by
//! receiver, and a node MLP producing velocity updates.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::sim::{interaction_pairs, EnvConfig, SystemState};
use crate::tensor::{self, Tape, Tensor2, Var};
use crate::{fmt17, Error, Result, FORMAT_VERSION};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub message_dim: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
}

impl ModelConfig {
    /// The bottlenecked setting: messages as wide as the force vectors.
    pub fn bottleneck(dim: usize) -> Self {
        Self::with_message_dim(dim, dim)
    }

    pub fn with_message_dim(dim: usize, message_dim: usize) -> Self {
        Self {
            dim,
            message_dim,
            hidden: 128,
            hidden_layers: 3,
        }
    }

    /// Node attribute length: position, velocity and mass.
    pub fn node_dim(&self) -> usize {
        2 * self.dim + 1
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dim == 2 || self.dim == 3) {
            return Err(Error::Config(format!(
                "model dimension must be 2 or 3, got {}",
                self.dim
            )));
        }
        if self.message_dim == 0 || self.hidden == 0 {
            return Err(Error::Config(
                "message dimension and hidden width must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `fan_in × fan_out`.
    pub weight: Tensor2,
    /// `1 × fan_out`.
    pub bias: Tensor2,
}

/// ReLU after every layer except the last.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    fn init(sizes: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
                let weight = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
                Dense {
                    weight: Tensor2::from_vec(fan_in, fan_out, weight).expect("sized"),
                    bias: Tensor2::zeros(1, fan_out),
                }
            })
            .collect();
        Self { layers }
    }

    fn zeros(sizes: &[usize]) -> Self {
        Self {
            layers: sizes
                .windows(2)
                .map(|w| Dense {
                    weight: Tensor2::zeros(w[0], w[1]),
                    bias: Tensor2::zeros(1, w[1]),
                })
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weight.rows())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.cols())
    }

    pub fn forward(&self, x: &Tensor2) -> Result<Tensor2> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = tensor::affine(&layer.weight, &layer.bias, &h)?;
            if i < last {
                tensor::relu_in_place(&mut h);
            }
        }
        Ok(h)
    }

    /// Records the forward pass on `tape`, returning the output and the
    /// (weight, bias) leaves in layer order.
    fn record(&self, tape: &mut Tape, x: Var) -> Result<(Var, Vec<Var>)> {
        let mut h = x;
        let mut leaves = Vec::with_capacity(2 * self.layers.len());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = tape.param(layer.weight.clone());
            let b = tape.param(layer.bias.clone());
            leaves.extend([w, b]);
            h = tape.affine(h, w, b)?;
            if i < last {
                h = tape.relu(h);
            }
        }
        Ok((h, leaves))
    }

    fn check_sizes(&self, sizes: &[usize], name: &str) -> Result<()> {
        let ok = self.layers.len() + 1 == sizes.len()
            && self.layers.iter().zip(sizes.windows(2)).all(|(l, w)| {
                l.weight.shape() == (w[0], w[1]) && l.bias.shape() == (1, w[1])
            });
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{name} layers do not match sizes {sizes:?}"
            )))
        }
    }
}

/// Weights of both MLPs plus the configuration they were built for.
#[derive(Clone, Debug, PartialEq)]
pub struct GNParams {
    pub config: ModelConfig,
    /// Maps `[receiver ; sender]` node attributes to a message.
    pub message_mlp: Mlp,
    /// Maps `[node ; pooled message]` to a velocity update.
    pub node_mlp: Mlp,
}

fn layer_sizes(input: usize, config: &ModelConfig, output: usize) -> Vec<usize> {
    let mut sizes = vec![input];
    sizes.extend(std::iter::repeat_n(config.hidden, config.hidden_layers));
    sizes.push(output);
    sizes
}

impl GNParams {
    fn message_sizes(config: &ModelConfig) -> Vec<usize> {
        layer_sizes(2 * config.node_dim(), config, config.message_dim)
    }

    fn node_sizes(config: &ModelConfig) -> Vec<usize> {
        layer_sizes(config.node_dim() + config.message_dim, config, config.dim)
    }

    /// All weights and biases zero: messages and updates are identically zero.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            message_mlp: Mlp::zeros(&Self::message_sizes(config)),
            node_mlp: Mlp::zeros(&Self::node_sizes(config)),
            config: config.clone(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.message_mlp
            .check_sizes(&Self::message_sizes(&self.config), "message MLP")?;
        self.node_mlp
            .check_sizes(&Self::node_sizes(&self.config), "node MLP")?;
        if self.tensors().any(|t| t.data().iter().any(|v| !v.is_finite())) {
            return Err(Error::Format("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Every weight and bias, message MLP first, each layer as (weight, bias).
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor2> {
        self.message_mlp
            .layers
            .iter()
            .chain(&self.node_mlp.layers)
            .flat_map(|l| [&l.weight, &l.bias])
    }

    fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor2> {
        self.message_mlp
            .layers
            .iter_mut()
            .chain(self.node_mlp.layers.iter_mut())
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn num_params(&self) -> usize {
        self.tensors().map(|t| t.data().len()).sum()
    }

    /// Parameters flattened in [`GNParams::tensors`] order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for t in self.tensors() {
            out.extend_from_slice(t.data());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.data().len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

/// He-normal weights (std `√(2/fan_in)`) and zero biases.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<GNParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let message_mlp = Mlp::init(&GNParams::message_sizes(config), &mut rng);
    let node_mlp = Mlp::init(&GNParams::node_sizes(config), &mut rng);
    Ok(GNParams {
        config: config.clone(),
        message_mlp,
        node_mlp,
    })
}

/// Directed edges as (receiver, sender) pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphTopology {
    pub n_nodes: usize,
    pub edges: Vec<(usize, usize)>,
}

impl GraphTopology {
    pub fn receivers(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.0).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for &(r, s) in &self.edges {
            if r == s {
                return Err(Error::Shape(format!("self edge on node {r}")));
            }
            for idx in [r, s] {
                if idx >= self.n_nodes {
                    return Err(Error::Index {
                        index: idx,
                        len: self.n_nodes,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Node attribute rows laid out as `[position | velocity | mass]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeAttrs(pub Tensor2);

impl NodeAttrs {
    pub fn from_state(state: &SystemState) -> Self {
        let d = state.dim;
        let n = state.n_bodies();
        let mut data = Vec::with_capacity(n * (2 * d + 1));
        for i in 0..n {
            data.extend_from_slice(state.position(i));
            data.extend_from_slice(state.velocity(i));
            data.push(state.masses[i]);
        }
        Self(Tensor2::from_vec(n, 2 * d + 1, data).expect("sized"))
    }
}

/// Complete directed graph for n-body laws, both chain directions for the
/// string.
pub fn build_graph(state: &SystemState, env: &EnvConfig) -> (GraphTopology, NodeAttrs) {
    let n = state.n_bodies();
    (
        GraphTopology {
            n_nodes: n,
            edges: interaction_pairs(env.law, n),
        },
        NodeAttrs::from_state(state),
    )
}

fn edge_inputs(graph: &GraphTopology, attrs: &Tensor2) -> Tensor2 {
    let width = attrs.cols();
    let mut data = Vec::with_capacity(graph.edges.len() * 2 * width);
    for &(r, s) in &graph.edges {
        data.extend_from_slice(attrs.row(r));
        data.extend_from_slice(attrs.row(s));
    }
    Tensor2::from_vec(graph.edges.len(), 2 * width, data).expect("sized")
}

fn check_inputs(params: &GNParams, graph: &GraphTopology, attrs: &NodeAttrs) -> Result<()> {
    graph.validate()?;
    let expected = params.config.node_dim();
    if attrs.0.cols() != expected || attrs.0.rows() != graph.n_nodes {
        return Err(Error::Shape(format!(
            "node attributes {:?}, expected {}x{}",
            attrs.0.shape(),
            graph.n_nodes,
            expected
        )));
    }
    Ok(())
}

/// A single message for one (receiver, sender) attribute pair.
pub fn message_forward(params: &GNParams, receiver: &[f64], sender: &[f64]) -> Result<Vec<f64>> {
    let width = params.config.node_dim();
    if receiver.len() != width || sender.len() != width {
        return Err(Error::Shape(format!(
            "node attributes of length {} and {}, expected {width}",
            receiver.len(),
            sender.len()
        )));
    }
    let input = Tensor2::from_vec(1, 2 * width, [receiver, sender].concat())?;
    Ok(params.message_mlp.forward(&input)?.into_vec())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GnOutput {
    /// `n × dim` predicted velocity updates.
    pub dv: Tensor2,
    /// `n_edges × message_dim`, in edge order.
    pub messages: Tensor2,
}

pub fn forward(params: &GNParams, graph: &GraphTopology, attrs: &NodeAttrs) -> Result<GnOutput> {
    check_inputs(params, graph, attrs)?;
    let messages = params.message_mlp.forward(&edge_inputs(graph, &attrs.0))?;
    let pooled = tensor::scatter_sum(&messages, &graph.receivers(), graph.n_nodes)?;
    let dv = params
        .node_mlp
        .forward(&tensor::concat_cols(&attrs.0, &pooled)?)?;
    Ok(GnOutput { dv, messages })
}

/// Several graphs merged into one disconnected graph, with velocity-update
/// targets. Used for batched training and evaluation.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    pub graph: GraphTopology,
    pub attrs: NodeAttrs,
    pub targets: Tensor2,
}

impl GraphBatch {
    pub fn from_records<'a>(
        env: &EnvConfig,
        records: impl IntoIterator<Item = &'a crate::sim::Record>,
    ) -> Result<Self> {
        let d = env.dim;
        let mut edges = Vec::new();
        let mut attrs = Vec::new();
        let mut targets = Vec::new();
        let mut offset = 0;
        for rec in records {
            let (g, a) = build_graph(&rec.state, env);
            edges.extend(g.edges.iter().map(|&(r, s)| (r + offset, s + offset)));
            attrs.extend_from_slice(a.0.data());
            targets.extend_from_slice(&rec.dv);
            offset += g.n_nodes;
        }
        Ok(Self {
            graph: GraphTopology {
                n_nodes: offset,
                edges,
            },
            attrs: NodeAttrs(Tensor2::from_vec(offset, 2 * d + 1, attrs)?),
            targets: Tensor2::from_vec(offset, d, targets)?,
        })
    }
}

/// Mean L1 loss of the batch and its gradient, flattened like
/// [`GNParams::to_flat`].
pub fn loss_and_grad(params: &GNParams, batch: &GraphBatch) -> Result<(f64, Vec<f64>)> {
    check_inputs(params, &batch.graph, &batch.attrs)?;
    if batch.targets.shape() != (batch.graph.n_nodes, params.config.dim) {
        return Err(Error::Shape(format!(
            "targets {:?} for {} nodes of dimension {}",
            batch.targets.shape(),
            batch.graph.n_nodes,
            params.config.dim
        )));
    }
    let mut tape = Tape::new();
    let edge_in = tape.constant(edge_inputs(&batch.graph, &batch.attrs.0));
    let (messages, mut leaves) = params.message_mlp.record(&mut tape, edge_in)?;
    let pooled = tape.scatter_sum(messages, &batch.graph.receivers(), batch.graph.n_nodes)?;
    let nodes = tape.constant(batch.attrs.0.clone());
    let node_in = tape.concat_cols(nodes, pooled)?;
    let (dv, node_leaves) = params.node_mlp.record(&mut tape, node_in)?;
    leaves.extend(node_leaves);
    let target = tape.constant(batch.targets.clone());
    let loss = tape.l1_loss(dv, target)?;
    let mut grads = tape.backward(loss)?;
    let mut flat = Vec::with_capacity(params.num_params());
    for leaf in leaves {
        let g = grads
            .take(leaf)
            .unwrap_or_else(|| Tensor2::zeros(tape.value(leaf).rows(), tape.value(leaf).cols()));
        flat.extend_from_slice(g.data());
    }
    Ok((tape.value(loss).data()[0], flat))
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    fan_in: usize,
    fan_out: usize,
    #[serde(serialize_with = "fmt17::serialize_vec")]
    weight: Vec<f64>,
    #[serde(serialize_with = "fmt17::serialize_vec")]
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    config: ModelConfig,
    seed: u64,
    steps: usize,
    message_mlp: Vec<LayerFile>,
    node_mlp: Vec<LayerFile>,
}

/// A trained model together with how it was produced.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: GNParams,
    pub seed: u64,
    pub steps: usize,
}

fn layers_to_file(mlp: &Mlp) -> Vec<LayerFile> {
    mlp.layers
        .iter()
        .map(|l| LayerFile {
            fan_in: l.weight.rows(),
            fan_out: l.weight.cols(),
            weight: l.weight.data().to_vec(),
            bias: l.bias.data().to_vec(),
        })
        .collect()
}

fn layers_from_file(layers: Vec<LayerFile>) -> Result<Mlp> {
    let layers = layers
        .into_iter()
        .map(|l| {
            Ok(Dense {
                weight: Tensor2::from_vec(l.fan_in, l.fan_out, l.weight)?,
                bias: Tensor2::from_vec(1, l.fan_out, l.bias)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Mlp { layers })
}

pub fn write_checkpoint<W: Write>(ckpt: &Checkpoint, mut out: W) -> Result<()> {
    let file = CheckpointFile {
        format_version: FORMAT_VERSION,
        config: ckpt.params.config.clone(),
        seed: ckpt.seed,
        steps: ckpt.steps,
        message_mlp: layers_to_file(&ckpt.params.message_mlp),
        node_mlp: layers_to_file(&ckpt.params.node_mlp),
    };
    serde_json::to_writer(&mut out, &file)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<Checkpoint> {
    let file: CheckpointFile = serde_json::from_reader(input)?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint format version {}",
            file.format_version
        )));
    }
    let params = GNParams {
        config: file.config,
        message_mlp: layers_from_file(file.message_mlp)?,
        node_mlp: layers_from_file(file.node_mlp)?,
    };
    params.validate()?;
    Ok(Checkpoint {
        params,
        seed: file.seed,
        steps: file.steps,
    })
}
