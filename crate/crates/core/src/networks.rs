//! The five networks of the model: encoder `E` (data to latent), generator
//! `G` (latent to data), data-side secondary encoder `F`, latent-side
//! secondary encoder `H`, and the discriminator `D` that scores the
//! concatenation `[F(x), H(z)]`.
//!
//! Image networks follow the DCGAN layout: stride-2 4x4 convolutions halve
//! the extent down to 4x4 and transposed convolutions double it back. In toy
//! mode every network is a small fully connected stack.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{BatchNormMode, Graph, RunningStats, Tensor, Var};

pub const INIT_STD: f64 = 0.02;

/// Toy stacks draw linear weights from N(0, TOY_INIT_GAIN^2 / fan_in).
pub const TOY_INIT_GAIN: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
enum WeightInit {
    Fixed,
    FanIn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    /// `[dim]` in toy mode, `[channels, height, width]` otherwise.
    pub data_shape: Vec<usize>,
    pub latent_dim: usize,
    pub secondary_latent_dim: usize,
    /// First convolution width; hidden width of the toy stacks.
    pub base_channels: usize,
    pub omit_h: bool,
    pub toy_mode: bool,
    /// Hidden layers in the toy `E`, `G` and `F` stacks.
    pub toy_depth: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            data_shape: vec![1, 32, 32],
            latent_dim: 64,
            secondary_latent_dim: 128,
            base_channels: 64,
            omit_h: true,
            toy_mode: false,
            toy_depth: 1,
        }
    }
}

impl ArchConfig {
    /// Fully connected configuration for flat `dim`-dimensional data.
    pub fn toy(dim: usize, latent_dim: usize) -> Self {
        ArchConfig {
            data_shape: vec![dim],
            latent_dim,
            secondary_latent_dim: 128,
            base_channels: 64,
            omit_h: true,
            toy_mode: true,
            toy_depth: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("latent_dim", self.latent_dim),
            ("secondary_latent_dim", self.secondary_latent_dim),
            ("base_channels", self.base_channels),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.toy_mode {
            if self.data_shape.len() != 1 || self.data_shape[0] == 0 {
                return Err(Error::Config(format!(
                    "toy mode needs a flat data shape, got {:?}",
                    self.data_shape
                )));
            }
            if self.toy_depth == 0 {
                return Err(Error::Config("toy_depth must be at least 1".into()));
            }
        } else {
            let [c, h, w] = self.data_shape[..] else {
                return Err(Error::Config(format!(
                    "image mode needs [channels, height, width], got {:?}",
                    self.data_shape
                )));
            };
            if c == 0 || h != w || h < 8 || !h.is_power_of_two() {
                return Err(Error::Config(format!(
                    "image extents must be equal powers of two >= 8, got {h}x{w}"
                )));
            }
        }
        Ok(())
    }

    pub fn data_len(&self) -> usize {
        self.data_shape.iter().product()
    }

    /// Width of the vector the discriminator sees.
    pub fn discriminator_input_dim(&self) -> usize {
        if self.omit_h {
            self.secondary_latent_dim + self.latent_dim
        } else {
            2 * self.secondary_latent_dim
        }
    }

    /// Number of stride-2 blocks between the image extent and 4x4.
    pub fn conv_blocks(&self) -> usize {
        if self.toy_mode {
            0
        } else {
            (self.data_shape[1] / 4).trailing_zeros() as usize
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NetKind {
    E,
    G,
    F,
    H,
    D,
}

impl NetKind {
    pub const ALL: [NetKind; 5] = [NetKind::E, NetKind::G, NetKind::F, NetKind::H, NetKind::D];

    pub fn name(self) -> &'static str {
        match self {
            NetKind::E => "E",
            NetKind::G => "G",
            NetKind::F => "F",
            NetKind::H => "H",
            NetKind::D => "D",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        NetKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

/// Ordered named tensors of one network, batchnorm running statistics
/// included as non-trainable entries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NetworkParams {
    pub entries: Vec<ParamEntry>,
}

impl NetworkParams {
    fn push(&mut self, name: String, tensor: Tensor, trainable: bool) -> usize {
        debug_assert!(self.index_of(&name).is_none(), "duplicate parameter {name}");
        self.entries.push(ParamEntry {
            name,
            tensor,
            trainable,
        });
        self.entries.len() - 1
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.entries[i].tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(|i| &mut self.entries[i].tensor)
    }

    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.tensor.len())
            .sum()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Layer {
    Linear {
        w: usize,
        b: Option<usize>,
    },
    Conv {
        k: usize,
        b: Option<usize>,
    },
    ConvT {
        k: usize,
        b: Option<usize>,
    },
    BatchNorm {
        gamma: usize,
        beta: usize,
        mean: usize,
        var: usize,
    },
    Relu,
    Tanh,
    Sigmoid,
    Flatten,
    Unflatten([usize; 3]),
}

const CONV_KERNEL: usize = 4;
const CONV_STRIDE: usize = 2;
const CONV_PAD: usize = 1;

/// One network: a layer program plus its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    pub params: NetworkParams,
}

struct Builder<'a> {
    init: WeightInit,
    rng: &'a mut ChaCha8Rng,
    layers: Vec<Layer>,
    params: NetworkParams,
    fc: usize,
    conv: usize,
    convt: usize,
    bn: usize,
}

impl<'a> Builder<'a> {
    fn new(rng: &'a mut ChaCha8Rng, init: WeightInit) -> Self {
        Builder {
            init,
            rng,
            layers: Vec::new(),
            params: NetworkParams::default(),
            fc: 0,
            conv: 0,
            convt: 0,
            bn: 0,
        }
    }

    fn normal(&mut self, shape: &[usize], mean: f64, std: f64) -> Tensor {
        let dist = Normal::new(mean, std).expect("valid init std");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(self.rng)).collect();
        Tensor::from_vec(shape.to_vec(), data).expect("init shape")
    }

    fn linear(&mut self, input: usize, output: usize, bias: bool) {
        let i = self.fc;
        self.fc += 1;
        let std = match self.init {
            WeightInit::Fixed => INIT_STD,
            WeightInit::FanIn => TOY_INIT_GAIN / (input as f64).sqrt(),
        };
        let w = self.normal(&[input, output], 0.0, std);
        let w = self.params.push(format!("fc{i}.weight"), w, true);
        let b = bias.then(|| self.params.push(format!("fc{i}.bias"), Tensor::zeros(&[output]), true));
        self.layers.push(Layer::Linear { w, b });
    }

    fn conv(&mut self, c_in: usize, c_out: usize, bias: bool) {
        let i = self.conv;
        self.conv += 1;
        let k = self.normal(&[c_out, c_in, CONV_KERNEL, CONV_KERNEL], 0.0, INIT_STD);
        let k = self.params.push(format!("conv{i}.weight"), k, true);
        let b = bias.then(|| self.params.push(format!("conv{i}.bias"), Tensor::zeros(&[c_out]), true));
        self.layers.push(Layer::Conv { k, b });
    }

    fn conv_t(&mut self, c_in: usize, c_out: usize, bias: bool) {
        let i = self.convt;
        self.convt += 1;
        let k = self.normal(&[c_in, c_out, CONV_KERNEL, CONV_KERNEL], 0.0, INIT_STD);
        let k = self.params.push(format!("convt{i}.weight"), k, true);
        let b = bias.then(|| {
            self.params
                .push(format!("convt{i}.bias"), Tensor::zeros(&[c_out]), true)
        });
        self.layers.push(Layer::ConvT { k, b });
    }

    fn batchnorm(&mut self, c: usize) {
        let i = self.bn;
        self.bn += 1;
        let gamma = self.normal(&[c], 1.0, INIT_STD);
        let gamma = self.params.push(format!("bn{i}.gamma"), gamma, true);
        let beta = self.params.push(format!("bn{i}.beta"), Tensor::zeros(&[c]), true);
        let mean = self
            .params
            .push(format!("bn{i}.running_mean"), Tensor::zeros(&[c]), false);
        let var = self
            .params
            .push(format!("bn{i}.running_var"), Tensor::full(&[c], 1.0), false);
        self.layers.push(Layer::BatchNorm { gamma, beta, mean, var });
    }

    fn act(&mut self, layer: Layer) {
        self.layers.push(layer);
    }

    fn mlp(&mut self, input: usize, hidden: usize, depth: usize, output: usize) {
        let mut width = input;
        for _ in 0..depth {
            self.linear(width, hidden, true);
            self.act(Layer::Relu);
            width = hidden;
        }
        self.linear(width, output, true);
    }

    fn finish(self) -> Network {
        Network {
            layers: self.layers,
            params: self.params,
        }
    }
}

fn build_conv_encoder(rng: &mut ChaCha8Rng, arch: &ArchConfig, head: usize) -> Network {
    let mut b = Builder::new(rng, WeightInit::Fixed);
    let mut c_in = arch.data_shape[0];
    let mut c_out = arch.base_channels;
    for i in 0..arch.conv_blocks() {
        // The first block carries a bias instead of batchnorm.
        b.conv(c_in, c_out, i == 0);
        if i > 0 {
            b.batchnorm(c_out);
        }
        b.act(Layer::Relu);
        c_in = c_out;
        c_out *= 2;
    }
    b.act(Layer::Flatten);
    b.linear(c_in * 16, head, true);
    b.finish()
}

fn build_conv_generator(rng: &mut ChaCha8Rng, arch: &ArchConfig) -> Network {
    let blocks = arch.conv_blocks();
    let top = arch.base_channels << (blocks - 1);
    let mut b = Builder::new(rng, WeightInit::Fixed);
    b.linear(arch.latent_dim, top * 16, false);
    b.act(Layer::Unflatten([top, 4, 4]));
    b.batchnorm(top);
    b.act(Layer::Relu);
    let mut c = top;
    for i in 0..blocks {
        if i + 1 == blocks {
            b.conv_t(c, arch.data_shape[0], true);
            b.act(Layer::Tanh);
        } else {
            b.conv_t(c, c / 2, false);
            b.batchnorm(c / 2);
            b.act(Layer::Relu);
            c /= 2;
        }
    }
    b.finish()
}

impl Network {
    /// Register every parameter on `graph`; trainable entries become
    /// gradient-accumulating leaves when `with_grad` is set.
    pub fn bind(&self, graph: &mut Graph, with_grad: bool) -> Vec<Var> {
        self.params
            .entries
            .iter()
            .map(|e| {
                if with_grad && e.trainable {
                    graph.leaf(e.tensor.clone())
                } else {
                    graph.constant(e.tensor.clone())
                }
            })
            .collect()
    }

    /// Gradients of the bound parameters, aligned with `params.entries`.
    /// Entries without a gradient (constants) are `None`.
    pub fn grads(&self, graph: &Graph, vars: &[Var]) -> Vec<Option<Tensor>> {
        vars.iter().map(|&v| graph.grad(v).cloned()).collect()
    }

    fn run(
        &self,
        graph: &mut Graph,
        vars: &[Var],
        x: Var,
        mode: BatchNormMode,
        updates: &mut Vec<(usize, usize, RunningStats)>,
    ) -> Result<Var> {
        let mut h = x;
        for layer in &self.layers {
            h = match *layer {
                Layer::Linear { w, b } => {
                    let y = graph.matmul(h, vars[w])?;
                    match b {
                        Some(b) => graph.add_bias(y, vars[b])?,
                        None => y,
                    }
                }
                Layer::Conv { k, b } => {
                    let y = graph.conv2d(h, vars[k], CONV_STRIDE, CONV_PAD)?;
                    match b {
                        Some(b) => graph.add_bias(y, vars[b])?,
                        None => y,
                    }
                }
                Layer::ConvT { k, b } => {
                    let y = graph.conv2d_transposed(h, vars[k], CONV_STRIDE, CONV_PAD)?;
                    match b {
                        Some(b) => graph.add_bias(y, vars[b])?,
                        None => y,
                    }
                }
                Layer::BatchNorm { gamma, beta, mean, var } => {
                    let mut stats = RunningStats {
                        mean: self.params.entries[mean].tensor.data().to_vec(),
                        var: self.params.entries[var].tensor.data().to_vec(),
                    };
                    let y = graph.batchnorm(h, vars[gamma], vars[beta], &mut stats, mode)?;
                    if mode == BatchNormMode::Train {
                        updates.push((mean, var, stats));
                    }
                    y
                }
                Layer::Relu => graph.relu(h),
                Layer::Tanh => graph.tanh(h),
                Layer::Sigmoid => graph.sigmoid(h),
                Layer::Flatten => {
                    let s = graph.shape(h).to_vec();
                    let flat: usize = s[1..].iter().product();
                    graph.reshape(h, &[s[0], flat])?
                }
                Layer::Unflatten([c, hh, ww]) => {
                    let b = graph.shape(h)[0];
                    graph.reshape(h, &[b, c, hh, ww])?
                }
            };
        }
        Ok(h)
    }

    /// Forward pass; in train mode batchnorm running statistics are updated.
    pub fn forward(&mut self, graph: &mut Graph, vars: &[Var], x: Var, mode: BatchNormMode) -> Result<Var> {
        let mut updates = Vec::new();
        let y = self.run(graph, vars, x, mode, &mut updates)?;
        for (mean, var, stats) in updates {
            let c = stats.mean.len();
            self.params.entries[mean].tensor = Tensor::from_vec(vec![c], stats.mean)?;
            self.params.entries[var].tensor = Tensor::from_vec(vec![c], stats.var)?;
        }
        Ok(y)
    }

    /// Eval-mode forward pass that leaves the network untouched.
    pub fn forward_eval(&self, graph: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        let mut updates = Vec::new();
        self.run(graph, vars, x, BatchNormMode::Eval, &mut updates)
    }

    /// Eval-mode forward on plain tensors.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let y = self.forward_eval(&mut g, &vars, xv)?;
        Ok(g.value(y).clone())
    }

    pub fn has_batchnorm(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::BatchNorm { .. }))
    }

    /// Number of conv blocks (strided convolutions) in this network.
    pub fn conv_count(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, Layer::Conv { .. })).count()
    }

    pub fn linear_count(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, Layer::Linear { .. })).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IganModel {
    pub arch: ArchConfig,
    pub e: Network,
    pub g: Network,
    pub f: Network,
    pub h: Option<Network>,
    pub d: Network,
}

/// Parameter variables of every network bound on one graph.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub e: Vec<Var>,
    pub g: Vec<Var>,
    pub f: Vec<Var>,
    pub h: Option<Vec<Var>>,
    pub d: Vec<Var>,
}

impl BoundModel {
    pub fn vars(&self, kind: NetKind) -> Option<&[Var]> {
        match kind {
            NetKind::E => Some(&self.e),
            NetKind::G => Some(&self.g),
            NetKind::F => Some(&self.f),
            NetKind::H => self.h.as_deref(),
            NetKind::D => Some(&self.d),
        }
    }
}

/// Build every network from `seed`. Image networks draw weights from
/// N(0, 0.02) and batchnorm scales from N(1, 0.02). Toy networks scale the
/// weight spread with the fan-in, see [`TOY_INIT_GAIN`]. Biases and shifts
/// start at zero.
pub fn build_model(arch: &ArchConfig, seed: u64) -> Result<IganModel> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = if arch.toy_mode {
        WeightInit::FanIn
    } else {
        WeightInit::Fixed
    };
    let (data, lat, sec) = (arch.data_len(), arch.latent_dim, arch.secondary_latent_dim);
    let (e, g, f) = if arch.toy_mode {
        let (hidden, depth) = (arch.base_channels, arch.toy_depth);
        let mut b = Builder::new(&mut rng, init);
        b.mlp(data, hidden, depth, lat);
        let e = b.finish();
        let mut b = Builder::new(&mut rng, init);
        b.mlp(lat, hidden, depth, data);
        b.act(Layer::Tanh);
        let g = b.finish();
        let mut b = Builder::new(&mut rng, init);
        b.mlp(data, hidden, depth, sec);
        (e, g, b.finish())
    } else {
        let e = build_conv_encoder(&mut rng, arch, lat);
        let g = build_conv_generator(&mut rng, arch);
        let f = build_conv_encoder(&mut rng, arch, sec);
        (e, g, f)
    };
    let h = (!arch.omit_h).then(|| {
        let mut b = Builder::new(&mut rng, init);
        b.mlp(lat, sec, 1, sec);
        b.finish()
    });
    let mut b = Builder::new(&mut rng, init);
    b.mlp(arch.discriminator_input_dim(), sec, 1, 1);
    b.act(Layer::Sigmoid);
    let d = b.finish();
    Ok(IganModel {
        arch: arch.clone(),
        e,
        g,
        f,
        h,
        d,
    })
}

impl IganModel {
    pub fn network(&self, kind: NetKind) -> Option<&Network> {
        match kind {
            NetKind::E => Some(&self.e),
            NetKind::G => Some(&self.g),
            NetKind::F => Some(&self.f),
            NetKind::H => self.h.as_ref(),
            NetKind::D => Some(&self.d),
        }
    }

    pub fn network_mut(&mut self, kind: NetKind) -> Option<&mut Network> {
        match kind {
            NetKind::E => Some(&mut self.e),
            NetKind::G => Some(&mut self.g),
            NetKind::F => Some(&mut self.f),
            NetKind::H => self.h.as_mut(),
            NetKind::D => Some(&mut self.d),
        }
    }

    /// Networks present in this model, in canonical order.
    pub fn kinds(&self) -> Vec<NetKind> {
        NetKind::ALL
            .into_iter()
            .filter(|&k| self.network(k).is_some())
            .collect()
    }

    pub fn trainable_count(&self) -> usize {
        self.kinds()
            .into_iter()
            .map(|k| self.network(k).map_or(0, |n| n.params.trainable_count()))
            .sum()
    }

    /// Bind all networks on `graph`, with gradients for the kinds listed.
    pub fn bind(&self, graph: &mut Graph, with_grad: &[NetKind]) -> BoundModel {
        let wants = |k: NetKind| with_grad.contains(&k);
        BoundModel {
            e: self.e.bind(graph, wants(NetKind::E)),
            g: self.g.bind(graph, wants(NetKind::G)),
            f: self.f.bind(graph, wants(NetKind::F)),
            h: self.h.as_ref().map(|h| h.bind(graph, wants(NetKind::H))),
            d: self.d.bind(graph, wants(NetKind::D)),
        }
    }

    pub fn check_data(&self, x: &Tensor) -> Result<()> {
        if x.rank() < 2 || x.shape()[1..] != self.arch.data_shape[..] {
            let mut want = vec![x.shape().first().copied().unwrap_or(0)];
            want.extend_from_slice(&self.arch.data_shape);
            return Err(Error::dim("data input", x.shape(), &want));
        }
        Ok(())
    }

    pub fn check_latent(&self, z: &Tensor) -> Result<()> {
        if z.rank() != 2 || z.shape()[1] != self.arch.latent_dim {
            return Err(Error::dim(
                "latent input",
                z.shape(),
                &[z.shape().first().copied().unwrap_or(0), self.arch.latent_dim],
            ));
        }
        Ok(())
    }

    /// Graph-level `E`. `x` is `[b, ..data_shape]`.
    pub fn run_e(&mut self, graph: &mut Graph, bound: &BoundModel, x: Var, mode: BatchNormMode) -> Result<Var> {
        self.check_data(graph.value(x))?;
        self.e.forward(graph, &bound.e, x, mode)
    }

    pub fn run_g(&mut self, graph: &mut Graph, bound: &BoundModel, z: Var, mode: BatchNormMode) -> Result<Var> {
        self.check_latent(graph.value(z))?;
        self.g.forward(graph, &bound.g, z, mode)
    }

    pub fn run_f(&mut self, graph: &mut Graph, bound: &BoundModel, x: Var, mode: BatchNormMode) -> Result<Var> {
        self.check_data(graph.value(x))?;
        self.f.forward(graph, &bound.f, x, mode)
    }

    /// Graph-level `H`; the identity when `H` is omitted.
    pub fn run_h(&mut self, graph: &mut Graph, bound: &BoundModel, z: Var, mode: BatchNormMode) -> Result<Var> {
        self.check_latent(graph.value(z))?;
        match (self.h.as_mut(), bound.h.as_deref()) {
            (Some(h), Some(vars)) => h.forward(graph, vars, z, mode),
            _ => Ok(z),
        }
    }

    /// `D(concat(F(x), H(z)))`, one score per batch item.
    pub fn run_discriminator(
        &mut self,
        graph: &mut Graph,
        bound: &BoundModel,
        x: Var,
        z: Var,
        mode: BatchNormMode,
    ) -> Result<Var> {
        let fx = self.run_f(graph, bound, x, mode)?;
        let hz = self.run_h(graph, bound, z, mode)?;
        if graph.shape(fx)[0] != graph.shape(hz)[0] {
            return Err(Error::dim("discriminate", graph.shape(fx), graph.shape(hz)));
        }
        let joint = graph.concat(fx, hz, 1)?;
        let score = self.d.forward(graph, &bound.d, joint, mode)?;
        let b = graph.shape(score)[0];
        graph.reshape(score, &[b])
    }

    pub fn forward_e(&self, x: &Tensor) -> Result<Tensor> {
        self.check_data(x)?;
        self.e.apply(x)
    }

    pub fn forward_g(&self, z: &Tensor) -> Result<Tensor> {
        self.check_latent(z)?;
        self.g.apply(z)
    }

    pub fn forward_f(&self, x: &Tensor) -> Result<Tensor> {
        self.check_data(x)?;
        self.f.apply(x)
    }

    pub fn forward_h(&self, z: &Tensor) -> Result<Tensor> {
        self.check_latent(z)?;
        match &self.h {
            Some(h) => h.apply(z),
            None => Ok(z.clone()),
        }
    }

    /// Eval-mode discriminator score of the couples `(x_like[i], z_like[i])`.
    pub fn discriminate(&self, x_like: &Tensor, z_like: &Tensor) -> Result<Tensor> {
        self.check_data(x_like)?;
        self.check_latent(z_like)?;
        if x_like.batch() != z_like.batch() {
            return Err(Error::dim("discriminate", x_like.shape(), z_like.shape()));
        }
        let mut g = Graph::new();
        let bound = self.bind(&mut g, &[]);
        let x = g.constant(x_like.clone());
        let z = g.constant(z_like.clone());
        let fx = self.f.forward_eval(&mut g, &bound.f, x)?;
        let hz = match (&self.h, &bound.h) {
            (Some(h), Some(vars)) => h.forward_eval(&mut g, vars, z)?,
            _ => z,
        };
        let joint = g.concat(fx, hz, 1)?;
        let score = self.d.forward_eval(&mut g, &bound.d, joint)?;
        g.value(score).reshape(&[x_like.batch()])
    }
}
