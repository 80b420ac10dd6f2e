//! Bag aggregators (ABMIL, CLAM-SB, TransMIL) with three linear task heads.

mod abmil;
mod checkpoint;
mod clam;
mod loss;
mod transmil;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use clam::{select_pseudo_labels, PseudoLabels};
pub use loss::{class_weights, multitask_loss, multitask_loss_on_tape, Task, TASKS};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::bag::Labels;
use crate::tensor::{grad_check, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Aggregator {
    Abmil,
    ClamSb,
    TransMil,
}

impl Aggregator {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregator::Abmil => "abmil",
            Aggregator::ClamSb => "clam_sb",
            Aggregator::TransMil => "transmil",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Aggregator::Abmil => 0,
            Aggregator::ClamSb => 1,
            Aggregator::TransMil => 2,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Aggregator::Abmil),
            1 => Some(Aggregator::ClamSb),
            2 => Some(Aggregator::TransMil),
            _ => None,
        }
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Aggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "abmil" => Ok(Aggregator::Abmil),
            "clam_sb" | "clam" => Ok(Aggregator::ClamSb),
            "transmil" => Ok(Aggregator::TransMil),
            other => Err(Error::Config(format!(
                "unknown aggregator '{other}' (expected abmil, clam_sb or transmil)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub aggregator: Aggregator,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub n_heads: usize,
    /// Self-attention layers; only TransMIL uses it.
    pub n_attn_layers: usize,
    pub clam_k: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(aggregator: Aggregator, input_dim: usize) -> Self {
        Self {
            aggregator,
            input_dim,
            hidden_dim: 128,
            n_heads: 4,
            n_attn_layers: 2,
            clam_k: 8,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.n_heads == 0 {
            return Err(Error::Config(format!(
                "input_dim, hidden_dim and n_heads must be positive: {self:?}"
            )));
        }
        if self.hidden_dim % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {} not divisible by n_heads {}",
                self.hidden_dim, self.n_heads
            )));
        }
        if self.aggregator == Aggregator::TransMil && self.n_attn_layers == 0 {
            return Err(Error::Config("TransMIL needs at least one attention layer".into()));
        }
        Ok(())
    }
}

/// Named parameter tensors for one model, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// Kind of initial values for a parameter.
enum Init {
    /// Uniform in `±1/sqrt(fan_in)`.
    Uniform(usize),
    Zeros,
    Ones,
}

fn name_stream(name: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl ModelParams {
    /// Deterministic initialisation: each parameter draws from its own
    /// ChaCha stream keyed by `(seed, parameter name)`.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (d, h) = (config.input_dim, config.hidden_dim);
        let mut specs: Vec<(String, Vec<usize>, Init)> = vec![
            ("input.w".into(), vec![d, h], Init::Uniform(d)),
            ("input.b".into(), vec![1, h], Init::Zeros),
        ];
        match config.aggregator {
            Aggregator::Abmil | Aggregator::ClamSb => {
                specs.extend([
                    ("attn.v.w".into(), vec![h, h], Init::Uniform(h)),
                    ("attn.v.b".into(), vec![1, h], Init::Zeros),
                    ("attn.u.w".into(), vec![h, h], Init::Uniform(h)),
                    ("attn.u.b".into(), vec![1, h], Init::Zeros),
                    ("attn.w".into(), vec![h, 1], Init::Uniform(h)),
                ]);
                if config.aggregator == Aggregator::ClamSb {
                    specs.extend([
                        ("inst.w".into(), vec![h, 1], Init::Uniform(h)),
                        ("inst.b".into(), vec![1, 1], Init::Zeros),
                    ]);
                }
            }
            Aggregator::TransMil => {
                specs.push(("cls".into(), vec![1, h], Init::Uniform(h)));
                for l in 0..config.n_attn_layers {
                    for p in ["q", "k", "v", "o"] {
                        specs.push((format!("layer{l}.{p}.w"), vec![h, h], Init::Uniform(h)));
                        // A key bias shifts a whole score row; softmax cancels it.
                        if p != "k" {
                            specs.push((format!("layer{l}.{p}.b"), vec![1, h], Init::Zeros));
                        }
                    }
                    specs.extend([
                        (format!("layer{l}.ln1.g"), vec![1, h], Init::Ones),
                        (format!("layer{l}.ln1.b"), vec![1, h], Init::Zeros),
                        (format!("layer{l}.ff1.w"), vec![h, 2 * h], Init::Uniform(h)),
                        (format!("layer{l}.ff1.b"), vec![1, 2 * h], Init::Zeros),
                        (format!("layer{l}.ff2.w"), vec![2 * h, h], Init::Uniform(2 * h)),
                        (format!("layer{l}.ff2.b"), vec![1, h], Init::Zeros),
                        (format!("layer{l}.ln2.g"), vec![1, h], Init::Ones),
                        (format!("layer{l}.ln2.b"), vec![1, h], Init::Zeros),
                    ]);
                }
            }
        }
        specs.push(("heads.w".into(), vec![h, 3], Init::Uniform(h)));
        specs.push(("heads.b".into(), vec![1, 3], Init::Zeros));

        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for (name, shape, init) in specs {
            let n: usize = shape.iter().product();
            let data = match init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Uniform(fan_in) => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                    rng.set_stream(name_stream(&name));
                    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                }
            };
            tensors.push(Tensor::new(shape, data)?);
            names.push(name);
        }
        Ok(Self {
            config,
            names,
            tensors,
        })
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        names: Vec<String>,
        tensors: Vec<Tensor>,
    ) -> Result<Self> {
        let reference = Self::init(config)?;
        if reference.names != names {
            return Err(Error::InvalidInput(format!(
                "parameter names {names:?} do not match the {} layout",
                config.aggregator
            )));
        }
        for ((n, a), b) in names.iter().zip(&reference.tensors).zip(&tensors) {
            if a.shape() != b.shape() {
                return Err(Error::InvalidInput(format!(
                    "parameter {n}: shape {:?}, expected {:?}",
                    b.shape(),
                    a.shape()
                )));
            }
        }
        Ok(Self {
            config,
            names,
            tensors,
        })
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

    pub fn index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::InvalidInput(format!("no parameter named {name}")))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.tensors[self.index(name)?])
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        let i = self.index(name)?;
        Ok(&mut self.tensors[i])
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Registers every parameter on the tape, in order.
    pub fn register(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors
            .iter()
            .enumerate()
            .map(|(i, t)| tape.param(i, t.clone()))
            .collect()
    }
}

/// Lookup of registered parameter nodes by name.
pub(crate) struct Bound<'a> {
    params: &'a ModelParams,
    vars: &'a [Var],
}

impl<'a> Bound<'a> {
    pub(crate) fn new(params: &'a ModelParams, vars: &'a [Var]) -> Result<Self> {
        if vars.len() != params.tensors.len() {
            return Err(Error::InvalidInput(format!(
                "{} parameter nodes for {} parameters",
                vars.len(),
                params.tensors.len()
            )));
        }
        Ok(Self { params, vars })
    }

    pub(crate) fn var(&self, name: &str) -> Result<Var> {
        Ok(self.vars[self.params.index(name)?])
    }

    /// `x * W + b` for parameters `{prefix}.w`, `{prefix}.b`.
    pub(crate) fn linear(&self, tape: &mut Tape, x: Var, prefix: &str) -> Result<Var> {
        let w = self.var(&format!("{prefix}.w"))?;
        let b = self.var(&format!("{prefix}.b"))?;
        let y = tape.matmul(x, w)?;
        tape.add(y, b)
    }
}

/// Slide-level prediction: logits in head order (MSI, MSS, hypermutation)
/// and normalized per-tile attention.
#[derive(Debug, Clone, PartialEq)]
pub struct BagOutput {
    pub logits: [f64; 3],
    pub attention: Vec<f64>,
}

/// Tape nodes produced by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `1 x 3` logits.
    pub logits: Var,
    pub attention: Vec<f64>,
    /// `n x 1` instance logits (CLAM only).
    pub instance_logits: Option<Var>,
}

impl ForwardPass {
    pub fn output(&self, tape: &Tape) -> BagOutput {
        let l = tape.value(self.logits).data();
        BagOutput {
            logits: [l[0], l[1], l[2]],
            attention: self.attention.clone(),
        }
    }
}

/// Runs the configured aggregator on a registered parameter set.
pub fn forward_on_tape(
    params: &ModelParams,
    tape: &mut Tape,
    vars: &[Var],
    features: Var,
) -> Result<ForwardPass> {
    let x = tape.value(features);
    if x.cols() != params.config.input_dim {
        return Err(Error::InvalidInput(format!(
            "feature dimension {} does not match model input_dim {}",
            x.cols(),
            params.config.input_dim
        )));
    }
    let bound = Bound::new(params, vars)?;
    match params.config.aggregator {
        Aggregator::Abmil => abmil::forward(&bound, tape, features),
        Aggregator::ClamSb => clam::forward(&bound, tape, features),
        Aggregator::TransMil => transmil::forward(&bound, tape, features),
    }
}

/// Forward pass plus the training loss for one labelled bag. CLAM
/// pseudo-labels are chosen from the current attention and treated as
/// constants.
pub fn bag_loss_on_tape(
    params: &ModelParams,
    tape: &mut Tape,
    vars: &[Var],
    features: Var,
    labels: &Labels,
    weights: &[f64; 3],
    instance_coeff: f64,
) -> Result<Var> {
    let pass = forward_on_tape(params, tape, vars, features)?;
    let pseudo = match (params.config.aggregator, pass.instance_logits) {
        (Aggregator::ClamSb, Some(inst)) => {
            select_pseudo_labels(&pass.attention, params.config.clam_k).map(|p| (inst, p))
        }
        _ => None,
    };
    multitask_loss_on_tape(
        tape,
        pass.logits,
        labels,
        weights,
        pseudo.as_ref().map(|(v, p)| (*v, p)),
        instance_coeff,
    )
}

/// Largest relative error between reverse-mode and central-difference
/// gradients of the bag loss over every parameter scalar.
pub fn model_grad_check(
    params: &ModelParams,
    features: &Tensor,
    labels: &Labels,
    weights: &[f64; 3],
    instance_coeff: f64,
    eps: f64,
) -> Result<f64> {
    grad_check(
        |tape, vars| {
            let x = tape.leaf(features.clone());
            bag_loss_on_tape(params, tape, vars, x, labels, weights, instance_coeff)
        },
        params.tensors(),
        eps,
    )
}

/// Forward pass on a fresh tape; `features` is `n x input_dim`.
pub fn forward(params: &ModelParams, features: &Tensor) -> Result<BagOutput> {
    Ok(forward_full(params, features)?.0)
}

/// Forward pass also returning CLAM instance logits when present.
pub fn forward_full(
    params: &ModelParams,
    features: &Tensor,
) -> Result<(BagOutput, Option<Vec<f64>>)> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let x = tape.leaf(features.clone());
    let pass = forward_on_tape(params, &mut tape, &vars, x)?;
    let inst = pass
        .instance_logits
        .map(|v| tape.value(v).data().to_vec());
    Ok((pass.output(&tape), inst))
}

/// Feature matrix of a bag as a tensor.
pub fn bag_features(bag: &crate::bag::SlideBag) -> Result<Tensor> {
    if bag.n_tiles() == 0 {
        return Err(Error::InvalidInput(format!("slide {} has no tiles", bag.slide_id)));
    }
    Tensor::matrix(bag.n_tiles(), bag.feature_dim, bag.features.clone())
}

pub fn abmil_forward(params: &ModelParams, features: &Tensor) -> Result<BagOutput> {
    expect_aggregator(params, Aggregator::Abmil)?;
    forward(params, features)
}

pub fn transmil_forward(params: &ModelParams, features: &Tensor) -> Result<BagOutput> {
    expect_aggregator(params, Aggregator::TransMil)?;
    forward(params, features)
}

/// CLAM-SB bag output plus per-tile instance logits.
pub fn clam_forward(params: &ModelParams, features: &Tensor) -> Result<(BagOutput, Vec<f64>)> {
    expect_aggregator(params, Aggregator::ClamSb)?;
    let (out, inst) = forward_full(params, features)?;
    Ok((out, inst.unwrap_or_default()))
}

fn expect_aggregator(params: &ModelParams, agg: Aggregator) -> Result<()> {
    if params.config.aggregator != agg {
        return Err(Error::InvalidInput(format!(
            "expected {agg} parameters, got {}",
            params.config.aggregator
        )));
    }
    Ok(())
}
