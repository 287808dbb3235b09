//! Model zoo: MLP, SGC, GCN and snowball baselines plus their adaptive
//! channel-mixing (ACM/ACMII) variants.
//!
//! Hidden layers of gcn/snowball (and the single logits layer of sgc) can be
//! wrapped in the three-channel machinery: per-channel feature extraction
//! through the lowpass/highpass/identity filterbank, feature-conditioned
//! node-wise softmax mixing weights with a temperature, and a weighted
//! recombination. The final classification layer is always a plain linear
//! map to class logits (softmax applied by the loss), outside the mixing
//! machinery.

use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::filters::{AffinityKind, Operator};
use crate::graph::Graph;
use crate::mat::Mat;
use crate::nn::{Tape, VarId};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Mlp,
    Sgc,
    Gcn,
    Snowball,
}

impl Family {
    fn name(self) -> &'static str {
        match self {
            Family::Mlp => "mlp",
            Family::Sgc => "sgc",
            Family::Gcn => "gcn",
            Family::Snowball => "snowball",
        }
    }
}

/// Filterbank channels in canonical order (lowpass, highpass, identity).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Channel {
    LowPass,
    HighPass,
    Identity,
}

impl Channel {
    fn name(self) -> &'static str {
        match self {
            Channel::LowPass => "lp",
            Channel::HighPass => "hp",
            Channel::Identity => "identity",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mixing {
    /// Feature-conditioned node-wise softmax weights.
    Adaptive,
    /// Plain sum of the channel outputs, no extra parameters.
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AcmVariant {
    None,
    /// Filter before the nonlinearity: `ReLU(F (H W))`.
    Acm,
    /// Filter after the nonlinearity: `F ReLU(H W)`.
    AcmII,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub family: Family,
    /// Layer count for mlp/gcn/snowball; propagation hops for sgc.
    pub depth: usize,
    /// Hidden widths, one per hidden layer (empty for sgc and depth-1 models).
    pub hidden: Vec<usize>,
    pub channels: Vec<Channel>,
    pub mixing: Mixing,
    pub acm: AcmVariant,
    pub temperature: f64,
    pub input_dropout: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub op_kind: AffinityKind,
}

impl ModelConfig {
    pub fn new(family: Family, depth: usize) -> Self {
        let hidden = match family {
            Family::Sgc => vec![],
            _ => vec![64; depth.saturating_sub(1)],
        };
        ModelConfig {
            family,
            depth,
            hidden,
            channels: vec![Channel::LowPass, Channel::HighPass, Channel::Identity],
            mixing: Mixing::Adaptive,
            acm: AcmVariant::None,
            temperature: 3.0,
            input_dropout: 0.0,
            lr: 0.05,
            weight_decay: 5e-5,
            op_kind: AffinityKind::RandomWalkRenorm,
        }
    }

    pub fn with_acm(mut self, variant: AcmVariant) -> Self {
        self.acm = variant;
        self
    }

    pub fn with_channels(mut self, channels: &[Channel]) -> Self {
        self.channels = channels.to_vec();
        self
    }

    pub fn with_mixing(mut self, mixing: Mixing) -> Self {
        self.mixing = mixing;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("depth must be at least 1".into()));
        }
        let expected_hidden = match self.family {
            Family::Sgc => 0,
            _ => self.depth - 1,
        };
        if self.hidden.len() != expected_hidden {
            return Err(Error::Config(format!(
                "{} with depth {} needs {} hidden widths, got {}",
                self.family.name(),
                self.depth,
                expected_hidden,
                self.hidden.len()
            )));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        let mut channels = self.channels.clone();
        channels.sort();
        channels.dedup();
        if channels.is_empty() || channels.len() != self.channels.len() {
            return Err(Error::Config(
                "channels must be a nonempty set without duplicates".into(),
            ));
        }
        match self.acm {
            AcmVariant::AcmII if !matches!(self.family, Family::Gcn | Family::Snowball) => {
                return Err(Error::Config(
                    "acmii applies only to gcn and snowball (sgc has no nonlinearity, \
                     so the variants coincide; use acm)"
                        .into(),
                ));
            }
            AcmVariant::Acm | AcmVariant::AcmII if self.family == Family::Mlp => {
                return Err(Error::Config(
                    "mlp is the graph-agnostic baseline; channel mixing needs a filter".into(),
                ));
            }
            _ => {}
        }
        if self.temperature <= 0.0 {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.input_dropout) {
            return Err(Error::Config("input_dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Sorted canonical channel order used for parameters and mixing logits.
    pub fn ordered_channels(&self) -> Vec<Channel> {
        let mut channels = self.channels.clone();
        channels.sort();
        channels
    }

    fn acm_active(&self) -> bool {
        self.acm != AcmVariant::None
    }

    /// Identifier used in CSV rows and CLI model lists, e.g. `acm-gcn-2`.
    pub fn id(&self) -> String {
        let prefix = match self.acm {
            AcmVariant::None => "",
            AcmVariant::Acm => "acm-",
            AcmVariant::AcmII => "acmii-",
        };
        format!("{prefix}{}-{}", self.family.name(), self.depth)
    }

    /// Parses identifiers like `mlp-2`, `sgc-1`, `gcn-2`, `acm-gcn-2`,
    /// `acmii-snowball-3`; a missing depth defaults to 2 (1 for sgc).
    pub fn parse_id(id: &str) -> Result<ModelConfig> {
        let mut rest = id.trim();
        let acm = if let Some(r) = rest.strip_prefix("acmii-") {
            rest = r;
            AcmVariant::AcmII
        } else if let Some(r) = rest.strip_prefix("acm-") {
            rest = r;
            AcmVariant::Acm
        } else {
            AcmVariant::None
        };
        let (family_str, depth) = match rest.rsplit_once('-') {
            Some((fam, d)) if d.chars().all(|c| c.is_ascii_digit()) => {
                (fam, d.parse::<usize>().map_err(|_| {
                    Error::Config(format!("bad depth in model id {id:?}"))
                })?)
            }
            _ => (rest, 0),
        };
        let family = match family_str {
            "mlp" => Family::Mlp,
            "sgc" => Family::Sgc,
            "gcn" => Family::Gcn,
            "snowball" => Family::Snowball,
            other => return Err(Error::Config(format!("unknown model family {other:?}"))),
        };
        let depth = if depth == 0 {
            if family == Family::Sgc {
                1
            } else {
                2
            }
        } else {
            depth
        };
        let cfg = ModelConfig::new(family, depth).with_acm(acm);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Flat `key = value` serialization consumed by the CLI.
    pub fn to_key_values(&self) -> String {
        let channels: Vec<&str> = self.ordered_channels().iter().map(|c| c.name()).collect();
        let mixing = match self.mixing {
            Mixing::Adaptive => "adaptive",
            Mixing::Sum => "sum",
        };
        let acm = match self.acm {
            AcmVariant::None => "none",
            AcmVariant::Acm => "acm",
            AcmVariant::AcmII => "acmii",
        };
        let hidden: Vec<String> = self.hidden.iter().map(usize::to_string).collect();
        format!(
            "family = {}\ndepth = {}\nhidden = {}\nchannels = {}\nmixing = {}\nacm = {}\n\
             temperature = {}\ninput_dropout = {}\nlr = {}\nweight_decay = {}\nop_kind = {}\n",
            self.family.name(),
            self.depth,
            hidden.join(","),
            channels.join(","),
            mixing,
            acm,
            self.temperature,
            self.input_dropout,
            self.lr,
            self.weight_decay,
            crate::filters::OperatorKind::Affinity(self.op_kind).name(),
        )
    }

    pub fn from_key_values(text: &str) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::new(Family::Gcn, 2);
        let mut hidden_set = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config(format!(
                "config line {} is not key = value: {raw:?}",
                lineno + 1
            )))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "family" => {
                    cfg.family = match value {
                        "mlp" => Family::Mlp,
                        "sgc" => Family::Sgc,
                        "gcn" => Family::Gcn,
                        "snowball" => Family::Snowball,
                        _ => return Err(Error::Config(format!("unknown family {value:?}"))),
                    }
                }
                "depth" | "hops" => {
                    cfg.depth = value
                        .parse()
                        .map_err(|_| Error::Config(format!("bad depth {value:?}")))?
                }
                "hidden" => {
                    cfg.hidden = if value.is_empty() {
                        vec![]
                    } else {
                        value
                            .split(',')
                            .map(|t| {
                                t.trim()
                                    .parse()
                                    .map_err(|_| Error::Config(format!("bad hidden {t:?}")))
                            })
                            .collect::<Result<_>>()?
                    };
                    hidden_set = true;
                }
                "channels" => {
                    cfg.channels = value
                        .split(',')
                        .map(|t| match t.trim() {
                            "lp" => Ok(Channel::LowPass),
                            "hp" => Ok(Channel::HighPass),
                            "identity" | "i" => Ok(Channel::Identity),
                            other => Err(Error::Config(format!("unknown channel {other:?}"))),
                        })
                        .collect::<Result<_>>()?
                }
                "mixing" => {
                    cfg.mixing = match value {
                        "adaptive" => Mixing::Adaptive,
                        "sum" => Mixing::Sum,
                        _ => return Err(Error::Config(format!("unknown mixing {value:?}"))),
                    }
                }
                "acm" => {
                    cfg.acm = match value {
                        "none" => AcmVariant::None,
                        "acm" => AcmVariant::Acm,
                        "acmii" => AcmVariant::AcmII,
                        _ => return Err(Error::Config(format!("unknown acm variant {value:?}"))),
                    }
                }
                "temperature" => {
                    cfg.temperature = value
                        .parse()
                        .map_err(|_| Error::Config(format!("bad temperature {value:?}")))?
                }
                "input_dropout" => {
                    cfg.input_dropout = value
                        .parse()
                        .map_err(|_| Error::Config(format!("bad input_dropout {value:?}")))?
                }
                "lr" => {
                    cfg.lr = value
                        .parse()
                        .map_err(|_| Error::Config(format!("bad lr {value:?}")))?
                }
                "weight_decay" => {
                    cfg.weight_decay = value
                        .parse()
                        .map_err(|_| Error::Config(format!("bad weight_decay {value:?}")))?
                }
                "op_kind" => {
                    let kind: crate::filters::OperatorKind = value.parse()?;
                    cfg.op_kind = match kind {
                        crate::filters::OperatorKind::Affinity(a) => a,
                        _ => {
                            return Err(Error::Config(
                                "op_kind must be an affinity kind".into(),
                            ))
                        }
                    };
                }
                other => return Err(Error::Config(format!("unknown config key {other:?}"))),
            }
        }
        if !hidden_set {
            cfg.hidden = match cfg.family {
                Family::Sgc => vec![],
                _ => vec![64; cfg.depth.saturating_sub(1)],
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

/// Whether a parameter is an ordinary weight matrix (subject to weight
/// decay) or part of the mixing machinery (not decayed).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ParamRole {
    Weight,
    MixTilde,
    MixMatrix,
}

/// One hidden or output block of the compiled model.
enum Layer {
    /// `ReLU(M W)` (mlp) or `ReLU(LP (M W))` (gcn/snowball hidden).
    DenseRelu { w: usize, aggregate: bool },
    /// ACM(II) block producing hidden features with ReLU channels.
    AcmHidden(AcmParams),
    /// Final logits `M W`, optionally aggregated: `LP (M W)`.
    FinalDense { w: usize, aggregate: bool },
    /// ACM block at the logits level without nonlinearity (ACM-SGC).
    AcmLogits(AcmParams),
}

struct AcmParams {
    /// One weight per channel, canonical order.
    w_channel: Vec<usize>,
    /// Step-2 score vectors, canonical order; empty when mixing is inactive.
    w_tilde: Vec<usize>,
    w_mix: Option<usize>,
}

/// A built model: parameter values live here, each forward pass records a
/// fresh tape. Single-owner during training.
pub struct Model {
    cfg: ModelConfig,
    n: usize,
    in_dim: usize,
    out_dim: usize,
    lp: Mat<f64>,
    hp: Mat<f64>,
    layers: Vec<Layer>,
    params: Vec<Mat<f64>>,
    roles: Vec<ParamRole>,
}

/// Handles produced by one recorded forward pass.
pub struct ForwardPass {
    pub logits: VarId,
    /// Tape ids of the parameters, aligned with [`Model::params`].
    pub param_ids: Vec<VarId>,
    /// Node-wise mixing weight matrices (N x k), one per adaptive ACM block.
    pub mixings: Vec<VarId>,
}

impl Model {
    pub fn build(cfg: &ModelConfig, g: &Graph, seed: u64) -> Result<Model> {
        cfg.validate()?;
        let op = Operator::<f64>::affinity(g, cfg.op_kind)?;
        // sgc propagates `depth` hops; the filterbank complement pairs with
        // the effective lowpass so reconstruction still holds.
        let lp = if cfg.family == Family::Sgc {
            op.matrix_power(cfg.depth)
        } else {
            op.matrix().clone()
        };
        let hp = Mat::identity(g.n_nodes()).sub(&lp);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params: Vec<Mat<f64>> = Vec::new();
        let mut roles: Vec<ParamRole> = Vec::new();
        let push = |params: &mut Vec<Mat<f64>>,
                        roles: &mut Vec<ParamRole>,
                        rng: &mut ChaCha8Rng,
                        rows: usize,
                        cols: usize,
                        role: ParamRole| {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            params.push(Mat::from_fn(rows, cols, |_, _| {
                rng.gen_range(-bound..bound)
            }));
            roles.push(role);
            params.len() - 1
        };

        let in_dim = g.feature_dim();
        let out_dim = g.class_count();
        let channels = cfg.ordered_channels();
        let adaptive_mix = cfg.mixing == Mixing::Adaptive && channels.len() > 1;

        let acm_block = |params: &mut Vec<Mat<f64>>,
                             roles: &mut Vec<ParamRole>,
                             rng: &mut ChaCha8Rng,
                             f_in: usize,
                             f_out: usize| {
            let w_channel: Vec<usize> = channels
                .iter()
                .map(|_| push(params, roles, rng, f_in, f_out, ParamRole::Weight))
                .collect();
            let (w_tilde, w_mix) = if adaptive_mix {
                let tilde: Vec<usize> = channels
                    .iter()
                    .map(|_| push(params, roles, rng, f_out, 1, ParamRole::MixTilde))
                    .collect();
                let k = channels.len();
                let mix = push(params, roles, rng, k, k, ParamRole::MixMatrix);
                (tilde, Some(mix))
            } else {
                (Vec::new(), None)
            };
            AcmParams {
                w_channel,
                w_tilde,
                w_mix,
            }
        };

        let mut layers = Vec::new();
        match cfg.family {
            Family::Sgc => {
                if cfg.acm_active() {
                    layers.push(Layer::AcmLogits(acm_block(
                        &mut params,
                        &mut roles,
                        &mut rng,
                        in_dim,
                        out_dim,
                    )));
                } else {
                    let w = push(&mut params, &mut roles, &mut rng, in_dim, out_dim, ParamRole::Weight);
                    layers.push(Layer::FinalDense { w, aggregate: true });
                }
            }
            Family::Mlp | Family::Gcn | Family::Snowball => {
                let aggregate = cfg.family != Family::Mlp;
                // Snowball layer l consumes the concatenation of the input
                // and all previous hidden outputs.
                let mut width = in_dim;
                for &h in &cfg.hidden {
                    if cfg.acm_active() {
                        layers.push(Layer::AcmHidden(acm_block(
                            &mut params,
                            &mut roles,
                            &mut rng,
                            width,
                            h,
                        )));
                    } else {
                        let w = push(&mut params, &mut roles, &mut rng, width, h, ParamRole::Weight);
                        layers.push(Layer::DenseRelu { w, aggregate });
                    }
                    width = if cfg.family == Family::Snowball {
                        width + h
                    } else {
                        h
                    };
                }
                if cfg.acm_active() {
                    // The output layer stays channel-mixed (without the
                    // channel nonlinearity): a lone aggregated output layer
                    // would undo the routing the hidden mixing learned.
                    layers.push(Layer::AcmLogits(acm_block(
                        &mut params,
                        &mut roles,
                        &mut rng,
                        width,
                        out_dim,
                    )));
                } else {
                    let w =
                        push(&mut params, &mut roles, &mut rng, width, out_dim, ParamRole::Weight);
                    layers.push(Layer::FinalDense { w, aggregate });
                }
            }
        }

        Ok(Model {
            cfg: cfg.clone(),
            n: g.n_nodes(),
            in_dim,
            out_dim,
            lp,
            hp,
            layers,
            params,
            roles,
        })
    }

    pub fn cfg(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[Mat<f64>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Mat<f64>] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<Mat<f64>>) -> Result<()> {
        if params.len() != self.params.len()
            || params
                .iter()
                .zip(&self.params)
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::DimMismatch("parameter shapes disagree".into()));
        }
        self.params = params;
        Ok(())
    }

    /// Number of scalar parameters actually registered.
    pub fn registered_param_count(&self) -> usize {
        self.params.iter().map(|p| p.rows() * p.cols()).sum()
    }

    /// Indices of parameters included in the weight-decay penalty
    /// (weight matrices only; mixing parameters are exempt).
    pub fn decayed_param_indices(&self) -> Vec<usize> {
        self.roles
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == ParamRole::Weight)
            .map(|(i, _)| i)
            .collect()
    }

    /// Records one forward pass on `tape`. `train` enables input dropout.
    pub fn forward(
        &self,
        tape: &mut Tape<f64>,
        features: &Mat<f64>,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<ForwardPass> {
        let param_ids: Vec<VarId> = self.params.iter().map(|p| tape.param(p.clone())).collect();
        self.forward_with(tape, param_ids, features, train, rng)
    }

    /// Forward pass over externally supplied parameter variables (used by
    /// finite-difference checking); `param_ids` must match `params()` shapes.
    pub fn forward_with(
        &self,
        tape: &mut Tape<f64>,
        param_ids: Vec<VarId>,
        features: &Mat<f64>,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<ForwardPass> {
        if features.rows() != self.n || features.cols() != self.in_dim {
            return Err(Error::DimMismatch(format!(
                "model built for {}x{} features, got {}x{}",
                self.n,
                self.in_dim,
                features.rows(),
                features.cols()
            )));
        }
        if param_ids.len() != self.params.len() {
            return Err(Error::DimMismatch(format!(
                "model has {} parameters, got {} ids",
                self.params.len(),
                param_ids.len()
            )));
        }
        let mut lp_id = None;
        let mut hp_id = None;
        let mut lp =
            |tape: &mut Tape<f64>| -> VarId { *lp_id.get_or_insert_with(|| tape.leaf(self.lp.clone())) };
        let mut hp =
            |tape: &mut Tape<f64>| -> VarId { *hp_id.get_or_insert_with(|| tape.leaf(self.hp.clone())) };

        let x = tape.leaf(features.clone());
        let mut h = tape.dropout(x, self.cfg.input_dropout, train, rng)?;
        let mut mixings = Vec::new();

        for layer in &self.layers {
            match layer {
                Layer::DenseRelu { w, aggregate } => {
                    let mut pre = tape.matmul(h, param_ids[*w])?;
                    if *aggregate {
                        let lp = lp(tape);
                        pre = tape.matmul(lp, pre)?;
                    }
                    let out = tape.relu(pre);
                    h = self.stack(tape, h, out)?;
                }
                Layer::FinalDense { w, aggregate } => {
                    let mut logits = tape.matmul(h, param_ids[*w])?;
                    if *aggregate {
                        let lp = lp(tape);
                        logits = tape.matmul(lp, logits)?;
                    }
                    return Ok(ForwardPass {
                        logits,
                        param_ids,
                        mixings,
                    });
                }
                Layer::AcmHidden(block) | Layer::AcmLogits(block) => {
                    let with_relu = matches!(layer, Layer::AcmHidden(_));
                    let channels = self.cfg.ordered_channels();
                    let mut outs = Vec::with_capacity(channels.len());
                    for (ci, ch) in channels.iter().enumerate() {
                        let w = param_ids[block.w_channel[ci]];
                        let pre = tape.matmul(h, w)?;
                        let mut filt = |tape: &mut Tape<f64>, v: VarId| -> Result<VarId> {
                            match ch {
                                Channel::LowPass => {
                                    let lp = lp(tape);
                                    tape.matmul(lp, v)
                                }
                                Channel::HighPass => {
                                    let hp = hp(tape);
                                    tape.matmul(hp, v)
                                }
                                Channel::Identity => Ok(v),
                            }
                        };
                        let out = match (self.cfg.acm, with_relu) {
                            // Option 1: filter, then nonlinearity.
                            (AcmVariant::Acm, true) => {
                                let f = filt(tape, pre)?;
                                tape.relu(f)
                            }
                            // Option 2: nonlinearity, then filter.
                            (AcmVariant::AcmII, true) => {
                                let r = tape.relu(pre);
                                filt(tape, r)?
                            }
                            // Logits level (sgc): no nonlinearity, options coincide.
                            (_, false) => filt(tape, pre)?,
                            (AcmVariant::None, true) => unreachable!("acm layer without variant"),
                        };
                        outs.push(out);
                    }
                    let mixed = if block.w_tilde.is_empty() {
                        // Single channel or mixing = sum: plain addition.
                        let mut acc = outs[0];
                        for &o in &outs[1..] {
                            acc = tape.add(acc, o)?;
                        }
                        acc
                    } else {
                        let tilde: Vec<VarId> = outs
                            .iter()
                            .zip(&block.w_tilde)
                            .map(|(&o, &wt)| {
                                let s = tape.matmul(o, param_ids[wt])?;
                                Ok(tape.sigmoid(s))
                            })
                            .collect::<Result<_>>()?;
                        let stacked = tape.concat_cols(&tilde)?;
                        let mix = tape.matmul(stacked, param_ids[block.w_mix.unwrap()])?;
                        let scaled = tape.scale_const(mix, 1.0 / self.cfg.temperature);
                        let alpha = tape.softmax_rows(scaled);
                        mixings.push(alpha);
                        let mut acc = None;
                        for (ci, &o) in outs.iter().enumerate() {
                            let col = tape.slice_cols(alpha, ci, ci + 1)?;
                            let term = tape.row_scale(col, o)?;
                            acc = Some(match acc {
                                None => term,
                                Some(a) => tape.add(a, term)?,
                            });
                        }
                        acc.expect("at least one channel")
                    };
                    if matches!(layer, Layer::AcmLogits(_)) {
                        return Ok(ForwardPass {
                            logits: mixed,
                            param_ids,
                            mixings,
                        });
                    }
                    h = self.stack(tape, h, mixed)?;
                }
            }
        }
        Err(Error::Config("model has no final layer".into()))
    }

    /// Snowball keeps the running concatenation; other families replace.
    fn stack(&self, tape: &mut Tape<f64>, prev: VarId, new: VarId) -> Result<VarId> {
        if self.cfg.family == Family::Snowball {
            tape.concat_cols(&[prev, new])
        } else {
            Ok(new)
        }
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// Count of nonzeros in the lowpass/highpass filter matrices.
    pub fn filter_nnz(&self) -> (usize, usize) {
        let nnz = |m: &Mat<f64>| m.iter().filter(|v| **v != 0.0).count();
        (nnz(&self.lp), nnz(&self.hp))
    }
}

/// Parameters of one ACM layer: `k` channel weights, plus (when mixing is
/// adaptive over more than one channel) `k` score vectors and a k x k mix.
pub fn acm_layer_param_count(f_in: usize, f_out: usize, k: usize, adaptive: bool) -> usize {
    let step1 = k * f_in * f_out;
    if adaptive && k > 1 {
        step1 + k * f_out + k * k
    } else {
        step1
    }
}

/// Parameters of a plain dense layer.
pub fn plain_layer_param_count(f_in: usize, f_out: usize) -> usize {
    f_in * f_out
}

/// Analytic parameter count of a whole model; matches what `build` registers.
pub fn param_count(cfg: &ModelConfig, in_dim: usize, out_dim: usize) -> Result<usize> {
    cfg.validate()?;
    let k = cfg.ordered_channels().len();
    let adaptive = cfg.mixing == Mixing::Adaptive;
    let mut total = 0usize;
    match cfg.family {
        Family::Sgc => {
            total += if cfg.acm != AcmVariant::None {
                acm_layer_param_count(in_dim, out_dim, k, adaptive)
            } else {
                plain_layer_param_count(in_dim, out_dim)
            };
        }
        Family::Mlp | Family::Gcn | Family::Snowball => {
            let mut width = in_dim;
            for &h in &cfg.hidden {
                total += if cfg.acm != AcmVariant::None {
                    acm_layer_param_count(width, h, k, adaptive)
                } else {
                    plain_layer_param_count(width, h)
                };
                width = if cfg.family == Family::Snowball {
                    width + h
                } else {
                    h
                };
            }
            total += if cfg.acm != AcmVariant::None {
                acm_layer_param_count(width, out_dim, k, adaptive)
            } else {
                plain_layer_param_count(width, out_dim)
            };
        }
    }
    Ok(total)
}

/// Per-layer flop accounting following the published formulas: a full
/// adaptive three-channel layer costs
/// `N F_l (8 + 6 F_{l-1}) + 2 F_l (nnz(LP) + nnz(HP)) + 18 N`
/// and a plain aggregated layer `2 N F_{l-1} F_l + 2 F_l nnz(LP)`.
pub fn flop_estimate(cfg: &ModelConfig, g: &Graph) -> Result<u64> {
    cfg.validate()?;
    let model = Model::build(cfg, g, 0)?;
    let n = g.n_nodes() as u64;
    let (nnz_lp, nnz_hp) = model.filter_nnz();
    let (nnz_lp, nnz_hp) = (nnz_lp as u64, nnz_hp as u64);
    let k = cfg.ordered_channels().len() as u64;
    let adaptive = cfg.mixing == Mixing::Adaptive && k > 1;
    let channels = cfg.ordered_channels();

    let acm_layer = |f_in: u64, f_out: u64| -> u64 {
        if k == 3 && adaptive {
            return n * f_out * (8 + 6 * f_in) + 2 * f_out * (nnz_lp + nnz_hp) + 18 * n;
        }
        // Reduced channel sets: per-channel dense + filter products, plus the
        // mixing machinery when present.
        let mut flops = 2 * k * n * f_in * f_out;
        for ch in &channels {
            flops += match ch {
                Channel::LowPass => 2 * f_out * nnz_lp,
                Channel::HighPass => 2 * f_out * nnz_hp,
                Channel::Identity => 0,
            };
        }
        if adaptive {
            // score matvecs, sigmoids, k x k mix, softmax, weighted sum
            flops += 2 * k * n * f_out + k * n + 2 * k * k * n + 3 * k * n + 2 * k * n * f_out;
        } else {
            flops += (k - 1) * n * f_out;
        }
        flops
    };
    let plain_layer = |f_in: u64, f_out: u64, aggregate: bool| -> u64 {
        let mut flops = 2 * n * f_in * f_out;
        if aggregate {
            flops += 2 * f_out * nnz_lp;
        }
        flops
    };

    let in_dim = g.feature_dim() as u64;
    let out_dim = g.class_count() as u64;
    let mut total = 0u64;
    match cfg.family {
        Family::Sgc => {
            total += if cfg.acm != AcmVariant::None {
                acm_layer(in_dim, out_dim)
            } else {
                plain_layer(in_dim, out_dim, true)
            };
        }
        Family::Mlp | Family::Gcn | Family::Snowball => {
            let aggregate = cfg.family != Family::Mlp;
            let mut width = in_dim;
            for &h in &cfg.hidden {
                let h = h as u64;
                total += if cfg.acm != AcmVariant::None {
                    acm_layer(width, h)
                } else {
                    plain_layer(width, h, aggregate)
                };
                width = if cfg.family == Family::Snowball {
                    width + h
                } else {
                    h
                };
            }
            total += if cfg.acm != AcmVariant::None {
                acm_layer(width, out_dim)
            } else {
                plain_layer(width, out_dim, aggregate)
            };
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    fn toy_graph() -> Graph {
        generate(&SynthConfig::new(0.4, 3, 8, 77)).unwrap()
    }

    fn eval_logits(model: &Model, g: &Graph) -> Mat<f64> {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pass = model.forward(&mut tape, g.features(), false, &mut rng).unwrap();
        tape.value(pass.logits).clone()
    }

    #[test]
    fn logits_shapes() {
        let g = toy_graph();
        for id in ["mlp-1", "mlp-2", "sgc-1", "sgc-2", "gcn-2", "snowball-2", "snowball-3"] {
            let cfg = ModelConfig::parse_id(id).unwrap();
            let model = Model::build(&cfg, &g, 1).unwrap();
            let logits = eval_logits(&model, &g);
            assert_eq!(logits.shape(), (g.n_nodes(), g.class_count()), "{id}");
        }
    }

    #[test]
    fn sgc1_is_one_hop_linear_model() {
        let g = toy_graph();
        let cfg = ModelConfig::parse_id("sgc-1").unwrap();
        let model = Model::build(&cfg, &g, 3).unwrap();
        let logits = eval_logits(&model, &g);
        let op = Operator::<f64>::affinity(&g, AffinityKind::RandomWalkRenorm).unwrap();
        let expect = op
            .matrix()
            .matmul(&g.features().matmul(&model.params()[0]));
        assert!(logits.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn acm_gcn_with_lp_only_equals_plain_gcn() {
        let g = toy_graph();
        let plain_cfg = ModelConfig::parse_id("gcn-2").unwrap();
        let plain = Model::build(&plain_cfg, &g, 11).unwrap();

        for mixing in [Mixing::Adaptive, Mixing::Sum] {
            let cfg = ModelConfig::parse_id("acm-gcn-2")
                .unwrap()
                .with_channels(&[Channel::LowPass])
                .with_mixing(mixing);
            let mut acm = Model::build(&cfg, &g, 12).unwrap();
            acm.set_params(plain.params().to_vec()).unwrap();
            let a = eval_logits(&acm, &g);
            let b = eval_logits(&plain, &g);
            assert_eq!(a, b, "mixing {mixing:?} must be bitwise identical");
        }
    }

    #[test]
    fn acm_sgc_with_lp_only_equals_plain_sgc() {
        let g = toy_graph();
        let plain = Model::build(&ModelConfig::parse_id("sgc-1").unwrap(), &g, 4).unwrap();
        let cfg = ModelConfig::parse_id("acm-sgc-1")
            .unwrap()
            .with_channels(&[Channel::LowPass])
            .with_mixing(Mixing::Sum);
        let mut acm = Model::build(&cfg, &g, 5).unwrap();
        acm.set_params(plain.params().to_vec()).unwrap();
        assert_eq!(eval_logits(&acm, &g), eval_logits(&plain, &g));
    }

    #[test]
    fn acm_options_coincide_for_identity_only_channel() {
        let g = toy_graph();
        let base = ModelConfig::parse_id("acm-gcn-2")
            .unwrap()
            .with_channels(&[Channel::Identity]);
        let m1 = Model::build(&base, &g, 9).unwrap();
        let mut cfg2 = base.clone();
        cfg2.acm = AcmVariant::AcmII;
        let mut m2 = Model::build(&cfg2, &g, 10).unwrap();
        m2.set_params(m1.params().to_vec()).unwrap();
        assert_eq!(eval_logits(&m1, &g), eval_logits(&m2, &g));
    }

    #[test]
    fn huge_temperature_flattens_mixing_weights() {
        let g = toy_graph();
        let mut cfg = ModelConfig::parse_id("acm-gcn-2").unwrap();
        cfg.temperature = 1e9;
        let model = Model::build(&cfg, &g, 6).unwrap();
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pass = model.forward(&mut tape, g.features(), false, &mut rng).unwrap();
        assert_eq!(pass.mixings.len(), 2);
        let alpha = tape.value(pass.mixings[0]);
        assert_eq!(alpha.cols(), 3);
        for v in alpha.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-6, "alpha {v}");
        }
    }

    #[test]
    fn mixing_rows_lie_on_simplex() {
        let g = toy_graph();
        for id in ["acm-gcn-2", "acmii-gcn-2", "acm-snowball-3", "acm-sgc-1"] {
            let cfg = ModelConfig::parse_id(id).unwrap();
            let model = Model::build(&cfg, &g, 21).unwrap();
            let mut tape = Tape::new();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let pass = model
                .forward(&mut tape, g.features(), false, &mut rng)
                .unwrap();
            assert!(!pass.mixings.is_empty(), "{id}");
            for &mix in &pass.mixings {
                let alpha = tape.value(mix);
                for i in 0..alpha.rows() {
                    let sum: f64 = alpha.row(i).iter().sum();
                    assert!((sum - 1.0).abs() < 1e-10);
                    assert!(alpha.row(i).iter().all(|&v| v >= 0.0));
                }
            }
        }
    }

    #[test]
    fn sum_mixing_adds_channels() {
        let g = toy_graph();
        let cfg = ModelConfig::parse_id("acm-sgc-1")
            .unwrap()
            .with_mixing(Mixing::Sum);
        let model = Model::build(&cfg, &g, 31).unwrap();
        // H_L + H_H + H_I computed by hand from the registered weights.
        let op = Operator::<f64>::affinity(&g, AffinityKind::RandomWalkRenorm).unwrap();
        let lp = op.matrix();
        let hp = Mat::identity(g.n_nodes()).sub(lp);
        let x = g.features();
        let h_l = lp.matmul(&x.matmul(&model.params()[0]));
        let h_h = hp.matmul(&x.matmul(&model.params()[1]));
        let h_i = x.matmul(&model.params()[2]);
        let expect = h_l.add(&h_h).add(&h_i);
        assert!(eval_logits(&model, &g).max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn param_counts_match_registration() {
        let g = toy_graph();
        for id in [
            "mlp-1",
            "mlp-2",
            "sgc-1",
            "sgc-2",
            "gcn-2",
            "gcn-3",
            "snowball-2",
            "snowball-3",
            "acm-sgc-1",
            "acm-gcn-2",
            "acmii-gcn-2",
            "acm-snowball-3",
        ] {
            let cfg = ModelConfig::parse_id(id).unwrap();
            let model = Model::build(&cfg, &g, 2).unwrap();
            let analytic = param_count(&cfg, g.feature_dim(), g.class_count()).unwrap();
            assert_eq!(model.registered_param_count(), analytic, "{id}");
        }
    }

    #[test]
    fn full_acm_layer_matches_published_square_formula() {
        // For square layers the published 3 F_{l-1} (F_l + 1) + 9 equals the
        // registered 3 F_{l-1} F_l + 3 F_l + 9.
        for f in [4, 16, 64] {
            assert_eq!(acm_layer_param_count(f, f, 3, true), 3 * f * (f + 1) + 9);
        }
        // The worked example 3 * 64 * (7 + 1) + 9 from the complexity notes
        // presumes the score vectors live in the input dimension; the
        // registered count keeps them at the output width.
        assert_eq!(acm_layer_param_count(64, 7, 3, true), 3 * 64 * 7 + 3 * 7 + 9);
    }

    #[test]
    fn plain_gcn_param_example() {
        assert_eq!(plain_layer_param_count(64, 7), 448);
    }

    #[test]
    fn flop_estimates_zero_and_ordering() {
        let g = toy_graph();
        let gcn = flop_estimate(&ModelConfig::parse_id("gcn-2").unwrap(), &g).unwrap();
        let acm = flop_estimate(&ModelConfig::parse_id("acm-gcn-2").unwrap(), &g).unwrap();
        assert!(acm >= gcn);
    }

    #[test]
    fn config_round_trip() {
        let mut cfg = ModelConfig::parse_id("acmii-snowball-3").unwrap();
        cfg.input_dropout = 0.25;
        cfg.weight_decay = 1e-4;
        let text = cfg.to_key_values();
        let parsed = ModelConfig::from_key_values(&text).unwrap();
        assert_eq!(cfg, parsed);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(ModelConfig::parse_id("acmii-sgc-1").is_err());
        assert!(ModelConfig::parse_id("acm-mlp-2").is_err());
        let mut cfg = ModelConfig::parse_id("gcn-2").unwrap();
        cfg.channels.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::parse_id("gcn-2").unwrap();
        cfg.input_dropout = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn permutation_equivariance() {
        let g = toy_graph();
        let n = g.n_nodes();
        // Reverse permutation keeps the test deterministic.
        let perm: Vec<usize> = (0..n).rev().collect();
        let edges: Vec<(usize, usize)> = g.edges().iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let mut feats = Mat::zeros(n, g.feature_dim());
        let mut ids = vec![0usize; n];
        for v in 0..n {
            ids[perm[v]] = g.label_of(v);
            for j in 0..g.feature_dim() {
                feats[(perm[v], j)] = g.features()[(v, j)];
            }
        }
        let pg = Graph::new(edges, feats, &ids, g.class_count()).unwrap();

        for id in ["gcn-2", "acm-gcn-2", "sgc-1", "snowball-2", "mlp-2"] {
            let cfg = ModelConfig::parse_id(id).unwrap();
            let m1 = Model::build(&cfg, &g, 55).unwrap();
            let mut m2 = Model::build(&cfg, &pg, 55).unwrap();
            m2.set_params(m1.params().to_vec()).unwrap();
            let l1 = eval_logits(&m1, &g);
            let l2 = eval_logits(&m2, &pg);
            for v in 0..n {
                for c in 0..g.class_count() {
                    assert!(
                        (l1[(v, c)] - l2[(perm[v], c)]).abs() < 1e-10,
                        "{id}: node {v} class {c}"
                    );
                }
            }
        }
    }
}
