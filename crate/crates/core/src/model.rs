//! Model configuration, parameter layout and the end-to-end episode pass.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::calibration::{broadcast_class_knowledge, calibrate_classes, map_semantics};
use crate::comparison::{build_pair_mask, run_comparison, PairMask, RelationSet};
use crate::episode::{init_node_features, Episode};
use crate::error::{Error, Result};
use crate::inference::{
    adjacency_loss, assignment_loss, build_loss_masks, classification_loss, final_adjacency, predict,
    total_loss, LossBreakdown, LossWeights,
};
use crate::squeeze::{compute_assignment, squeeze_classes};
use crate::tensor::{Graph, ParamStore, Var};

/// Pipeline variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ablation {
    Full,
    /// No squeeze or calibration; inference reads instance features only.
    NoneClass,
    /// Squeeze, then broadcast the uncalibrated multi-modal class knowledge.
    NoneCalibrate,
    /// Semantic block of the class knowledge zeroed.
    NoneZ,
    /// Visual block of the class knowledge zeroed.
    NoneV,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Full,
        Ablation::NoneCalibrate,
        Ablation::NoneClass,
        Ablation::NoneZ,
        Ablation::NoneV,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoneClass => "none_class",
            Ablation::NoneCalibrate => "none_calibrate",
            Ablation::NoneZ => "none_z",
            Ablation::NoneV => "none_v",
        }
    }

    pub fn has_class_level(self) -> bool {
        self != Ablation::NoneClass
    }

    pub fn uses_semantics(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoneCalibrate | Ablation::NoneV)
    }

    pub fn calibrates(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoneZ | Ablation::NoneV)
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation `{s}`")))
    }
}

/// Everything that determines parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub ways: usize,
    pub raw_dim: usize,
    pub enc_dim: usize,
    /// Node feature width `d`; must be divisible by `heads`.
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub semantic_dim: usize,
    pub leaky_slope: f64,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            ways: 5,
            raw_dim: 32,
            enc_dim: 32,
            dim: 64,
            heads: 8,
            layers: 3,
            semantic_dim: 16,
            leaky_slope: 0.2,
            ablation: Ablation::Full,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    /// Uniform in +-1/sqrt(fan_in).
    FanIn(usize),
    Const(f64),
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("ways", self.ways),
            ("raw_dim", self.raw_dim),
            ("enc_dim", self.enc_dim),
            ("dim", self.dim),
            ("heads", self.heads),
            ("layers", self.layers),
            ("semantic_dim", self.semantic_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "dim {} is not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope.is_finite()) {
            return Err(Error::Config(format!("leaky_slope {} must be >= 0", self.leaky_slope)));
        }
        Ok(())
    }

    pub fn chunk(&self) -> usize {
        self.dim / self.heads
    }

    /// Width of the final sample representation fed to the last relation head.
    pub fn final_dim(&self) -> usize {
        if self.ablation.has_class_level() {
            3 * self.dim
        } else {
            self.dim
        }
    }

    fn layout(&self) -> Vec<(String, (usize, usize), Init)> {
        let mut out = Vec::new();
        let linear = |out: &mut Vec<_>, prefix: &str, fan_in: usize, width: usize| {
            out.push((format!("{prefix}.w"), (fan_in, width), Init::FanIn(fan_in)));
            out.push((format!("{prefix}.b"), (1, width), Init::FanIn(fan_in)));
        };
        // Normalization cancels any bias, so normalized maps carry none.
        let norm = |out: &mut Vec<(String, (usize, usize), Init)>, prefix: &str, fan_in: usize, width: usize| {
            out.push((format!("{prefix}.w"), (fan_in, width), Init::FanIn(fan_in)));
            out.push((format!("{prefix}.gamma"), (1, width), Init::Const(1.0)));
            out.push((format!("{prefix}.beta"), (1, width), Init::Const(0.0)));
        };
        let d = self.dim;
        linear(&mut out, "encoder", self.raw_dim, self.enc_dim);
        linear(&mut out, "input", self.enc_dim + self.ways, d);
        for l in 1..=self.layers {
            let p = format!("comparison.layer{l}.global");
            norm(&mut out, &p, d, 1);
            for h in 1..=self.heads {
                let p = format!("comparison.layer{l}.head{h}");
                norm(&mut out, &p, self.chunk(), 1);
            }
            let p = format!("comparison.layer{l}.tr");
            norm(&mut out, &p, 2 * d, d);
        }
        if self.ablation.has_class_level() {
            out.push(("squeeze.w".into(), (d, self.ways), Init::FanIn(d)));
        }
        if self.ablation.uses_semantics() {
            linear(&mut out, "calibration.g", self.semantic_dim, d);
        }
        if self.ablation.calibrates() {
            out.push(("calibration.w_prime".into(), (2 * d, 2 * d), Init::FanIn(2 * d)));
        }
        norm(&mut out, "final", self.final_dim(), 1);
        out
    }

    /// Parameter names and shapes, in store order.
    pub fn param_shapes(&self) -> Vec<(String, (usize, usize))> {
        self.layout().into_iter().map(|(n, s, _)| (n, s)).collect()
    }
}

/// All learnable weights for one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub init_seed: u64,
}

impl ModelParams {
    pub const VERSION: &'static str = "eckpn-params/1";

    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, shape, init) in config.layout() {
            let value = match init {
                Init::FanIn(fan_in) => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    Array2::from_shape_simple_fn(shape, || rng.random_range(-bound..bound))
                }
                Init::Const(c) => Array2::from_elem(shape, c),
            };
            store.insert(name, value)?;
        }
        Ok(Self {
            config: config.clone(),
            store,
            init_seed: seed,
        })
    }

    /// Checks that `store` holds exactly the parameters `config` expects.
    pub fn from_store(config: ModelConfig, store: ParamStore, init_seed: u64) -> Result<Self> {
        config.validate()?;
        let expected = config.param_shapes();
        for (name, shape) in &expected {
            let t = store
                .get(name)
                .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))?;
            if t.shape() != *shape {
                return Err(Error::Config(format!(
                    "parameter `{name}` has shape {:?}, configuration expects {shape:?}",
                    t.shape()
                )));
            }
        }
        if store.len() != expected.len() {
            let extra = store
                .tensors()
                .iter()
                .find(|t| !expected.iter().any(|(n, _)| *n == t.name))
                .map(|t| t.name.clone())
                .unwrap_or_default();
            return Err(Error::Config(format!("unexpected parameter `{extra}`")));
        }
        Ok(Self {
            config,
            store,
            init_seed,
        })
    }
}

/// Symbolic handles for one episode pass.
#[derive(Debug)]
pub struct ForwardOutput {
    pub graph: Graph,
    pub mask: PairMask,
    pub v0: Var,
    pub v_final: Var,
    pub trace: Vec<RelationSet>,
    pub assignment: Option<Var>,
    pub class_visual: Option<Var>,
    pub semantic: Option<Var>,
    pub class_multimodal: Option<Var>,
    pub class_adjacency: Option<Var>,
    pub class_calibrated: Option<Var>,
    pub v_f: Var,
    pub a_f: Var,
    pub probs: Var,
    pub losses: Option<LossVars>,
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub adjacency: Var,
    pub assignment: Var,
    pub classification: Var,
    pub total: Var,
}

impl ForwardOutput {
    pub fn adjacency_set(&self) -> Vec<(String, Var)> {
        adjacency_set(&self.trace, self.a_f)
    }

    pub fn loss_breakdown(&self, weights: LossWeights) -> Option<LossBreakdown> {
        self.losses.map(|l| LossBreakdown {
            adjacency: self.graph.item(l.adjacency),
            assignment: self.graph.item(l.assignment),
            classification: self.graph.item(l.classification),
            total: self.graph.item(l.total),
            weights,
        })
    }

    /// Predicted episode-local label per query, lowest index on ties.
    pub fn predictions(&self) -> Vec<usize> {
        crate::inference::argmax_rows(self.graph.value(self.probs))
    }
}

/// Runs the whole pipeline on one episode; losses are attached when
/// `loss_weights` is given (meta-train).
pub fn forward_episode(
    params: &ModelParams,
    episode: &Episode,
    loss_weights: Option<LossWeights>,
) -> Result<ForwardOutput> {
    let cfg = &params.config;
    if episode.ways != cfg.ways {
        return Err(Error::Config(format!(
            "episode is {}-way, parameters were built for {}-way",
            episode.ways, cfg.ways
        )));
    }
    let store = &params.store;
    let mut g = Graph::new();
    let mask = build_pair_mask(episode);
    let v0 = init_node_features(&mut g, store, episode, cfg)?;
    let comparison = run_comparison(&mut g, store, v0, &mask, cfg)?;
    let v_final = comparison.features;
    let last_global = comparison.trace.last().expect("at least one layer").global;

    let mut class = ClassLevel::default();
    let mut v_f = v_final;
    if cfg.ablation.has_class_level() {
        let masked_global = g.mask(last_global, &mask.0)?;
        let p = compute_assignment(&mut g, store, v_final, masked_global)?;
        let v_c = squeeze_classes(&mut g, p, v_final)?;
        let z = if cfg.ablation.uses_semantics() {
            Some(map_semantics(&mut g, store, &episode.class_semantics, cfg)?)
        } else {
            None
        };
        let zeros = Array2::zeros((cfg.ways, cfg.dim));
        let visual_block = match cfg.ablation {
            Ablation::NoneV => g.constant(zeros.clone()),
            _ => v_c,
        };
        let semantic_block = match z {
            Some(z) => z,
            None => g.constant(zeros),
        };
        let v_c_mm = g.concat_cols(&[visual_block, semantic_block])?;
        let knowledge = if cfg.ablation.calibrates() {
            let cal = calibrate_classes(&mut g, store, p, masked_global, v_c_mm)?;
            class.adjacency = Some(cal.class_adjacency);
            class.calibrated = Some(cal.calibrated);
            cal.calibrated
        } else {
            v_c_mm
        };
        v_f = broadcast_class_knowledge(&mut g, p, knowledge, v_final)?;
        class.assignment = Some(p);
        class.visual = Some(v_c);
        class.semantic = z;
        class.multimodal = Some(v_c_mm);
    }

    let a_f = final_adjacency(&mut g, store, v_f, cfg)?;
    let probs = predict(&mut g, a_f, episode)?;

    let losses = match loss_weights {
        Some(weights) => {
            let masks = build_loss_masks(episode);
            let mats = adjacency_set(&comparison.trace, a_f);
            let adjacency = adjacency_loss(&mut g, &mats, &masks)?;
            let assignment = match class.assignment {
                Some(p) => assignment_loss(&mut g, p, episode)?,
                None => g.scalar(0.0),
            };
            let classification = classification_loss(&mut g, probs, episode)?;
            let total = total_loss(&mut g, adjacency, assignment, classification, weights);
            Some(LossVars {
                adjacency,
                assignment,
                classification,
                total,
            })
        }
        None => None,
    };

    Ok(ForwardOutput {
        graph: g,
        mask,
        v0,
        v_final,
        trace: comparison.trace,
        assignment: class.assignment,
        class_visual: class.visual,
        semantic: class.semantic,
        class_multimodal: class.multimodal,
        class_adjacency: class.adjacency,
        class_calibrated: class.calibrated,
        v_f,
        a_f,
        probs,
        losses,
    })
}

#[derive(Default)]
struct ClassLevel {
    assignment: Option<Var>,
    visual: Option<Var>,
    semantic: Option<Var>,
    multimodal: Option<Var>,
    adjacency: Option<Var>,
    calibrated: Option<Var>,
}

/// Every adjacency that enters the adjacency loss, layer by layer (global
/// then heads), followed by the final relation.
pub fn adjacency_set(trace: &[RelationSet], a_f: Var) -> Vec<(String, Var)> {
    let mut out = Vec::new();
    for rel in trace {
        out.push((format!("layer{}.global", rel.layer), rel.global));
        for (h, &a) in rel.heads.iter().enumerate() {
            out.push((format!("layer{}.head{}", rel.layer, h + 1), a));
        }
    }
    out.push(("final".into(), a_f));
    out
}
