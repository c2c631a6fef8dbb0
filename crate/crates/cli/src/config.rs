//! Plain-text experiment configuration.
//!
//! One `key = value` pair per line, `#` starts a comment. Keys are dotted
//! section names; trainer and reward keys use the names of the published
//! hyperparameter tables. Every key except the oracle block has a default
//! (the five-body toy setup). Unknown and duplicate keys are rejected.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use eqalign_core::diffusion::{make_schedule, DataConfig, DataGenerator, NetConfig, NoiseSchedule, PretrainConfig, ScheduleKind};
use eqalign_core::fedgrpo::TrainerConfig;
use eqalign_core::oracle::{fit_surrogate, EnergyOracle, HarmonicChain, LennardJones, Oracle, SurrogateConfig};
use eqalign_core::rewards::RewardConfig;
use eqalign_core::theory::TiltCheckConfig;
use eqalign_core::{rng, Topology};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleKind {
    Harmonic,
    LennardJones,
    Surrogate,
}

impl OracleKind {
    fn name(self) -> &'static str {
        match self {
            Self::Harmonic => "harmonic",
            Self::LennardJones => "lennard_jones",
            Self::Surrogate => "surrogate",
        }
    }
}

impl FromStr for OracleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "harmonic" => Ok(Self::Harmonic),
            "lennard_jones" => Ok(Self::LennardJones),
            "surrogate" => Ok(Self::Surrogate),
            _ => Err(format!("unknown oracle kind {s:?} (expected harmonic, lennard_jones or surrogate)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSpec {
    pub kind: Option<OracleKind>,
    pub spring_constant: Option<f64>,
    pub rest_length: Option<f64>,
    pub epsilon: Option<f64>,
    pub sigma: Option<f64>,
    pub r_min_factor: f64,
    pub strict: bool,
    /// Analytic potential the surrogate is fit to.
    pub surrogate_target: Option<OracleKind>,
    pub surrogate: SurrogateConfig,
    pub surrogate_n_train: usize,
    pub surrogate_jitter: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemBlock {
    pub n_bodies: usize,
    pub d_h: usize,
    pub oracle: OracleSpec,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionBlock {
    pub steps: usize,
    pub schedule: &'static str,
    pub precision: f64,
    pub ou_t_max: f64,
    pub layers: usize,
    pub hidden: usize,
    pub coord_range: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainBlock {
    pub data: DataConfig,
    pub optim: PretrainConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBlock {
    pub reward: RewardConfig,
    pub skip_prefix: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalBlock {
    pub n_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryBlock {
    pub seed: u64,
    pub gibbs_instances: usize,
    pub gibbs_cells: usize,
    pub tv_instances: usize,
    pub tv_cells: usize,
    pub tilt_samples: usize,
    pub tilt_bins: usize,
    pub tilt_beta_max: f64,
    pub alignment_states: usize,
    pub alignment_window: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Root seed of pretraining and post-training.
    pub seed: u64,
    pub system: SystemBlock,
    pub diffusion: DiffusionBlock,
    pub pretrain: PretrainBlock,
    /// `t_prefix` and `n_bodies` are derived from the reward and system blocks.
    pub trainer: TrainerConfig,
    pub reward: RewardBlock,
    pub eval: EvalBlock,
    pub theory: TheoryBlock,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            system: SystemBlock {
                n_bodies: 5,
                d_h: 2,
                oracle: OracleSpec {
                    kind: None,
                    spring_constant: None,
                    rest_length: None,
                    epsilon: None,
                    sigma: None,
                    r_min_factor: 0.3,
                    strict: false,
                    surrogate_target: None,
                    surrogate: SurrogateConfig::default(),
                    surrogate_n_train: 128,
                    surrogate_jitter: 0.15,
                },
            },
            diffusion: DiffusionBlock {
                steps: 100,
                schedule: "polynomial_2",
                precision: 1e-5,
                ou_t_max: 4.0,
                layers: 3,
                hidden: 32,
                coord_range: 15.0,
            },
            pretrain: PretrainBlock {
                data: DataConfig {
                    n_bodies: 5,
                    d_h: 2,
                    pool_size: 64,
                    spacing: 1.0,
                    jitter: 0.05,
                    relax_steps: 200,
                },
                optim: PretrainConfig {
                    steps: 1000,
                    ..Default::default()
                },
            },
            trainer: TrainerConfig {
                learning_rate: 3e-5,
                clip_range: 0.2,
                iterations: 60,
                warmup_steps: 5,
                total_steps: 200,
                t_prefix: 30,
                ..Default::default()
            },
            reward: RewardBlock {
                reward: RewardConfig::default(),
                skip_prefix: 70,
            },
            eval: EvalBlock { n_samples: 512, seed: 1 },
            theory: TheoryBlock {
                seed: 2,
                gibbs_instances: 20,
                gibbs_cells: 200,
                tv_instances: 500,
                tv_cells: 50,
                tilt_samples: 2000,
                tilt_bins: 30,
                tilt_beta_max: 1000.0,
                alignment_states: 2000,
                alignment_window: 30,
            },
            out_dir: PathBuf::from("out"),
        }
    }
}

fn parse_value<T: FromStr>(raw: &str) -> Result<T, String> {
    raw.parse::<T>().map_err(|_| format!("cannot parse {raw:?} as {}", std::any::type_name::<T>()))
}

fn parse_bool(raw: &str) -> Result<bool, String> {
    match raw {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got {raw:?}")),
    }
}

impl ExperimentConfig {
    /// Assigns one key; the error is the message for that key.
    fn set(&mut self, key: &str, raw: &str) -> Result<(), String> {
        let o = &mut self.system.oracle;
        let d = &mut self.diffusion;
        let data = &mut self.pretrain.data;
        let p = &mut self.pretrain.optim;
        let t = &mut self.trainer;
        let r = &mut self.reward.reward;
        let th = &mut self.theory;
        match key {
            "seed" => self.seed = parse_value(raw)?,
            "system.n_bodies" => self.system.n_bodies = parse_value(raw)?,
            "system.d_h" => self.system.d_h = parse_value(raw)?,
            "oracle.kind" => o.kind = Some(raw.parse()?),
            "oracle.spring_constant" => o.spring_constant = Some(parse_value(raw)?),
            "oracle.rest_length" => o.rest_length = Some(parse_value(raw)?),
            "oracle.epsilon" => o.epsilon = Some(parse_value(raw)?),
            "oracle.sigma" => o.sigma = Some(parse_value(raw)?),
            "oracle.r_min_factor" => o.r_min_factor = parse_value(raw)?,
            "oracle.strict" => o.strict = parse_bool(raw)?,
            "oracle.surrogate.target" => o.surrogate_target = Some(raw.parse()?),
            "oracle.surrogate.hidden" => o.surrogate.hidden = parse_value(raw)?,
            "oracle.surrogate.n_rbf" => o.surrogate.n_rbf = parse_value(raw)?,
            "oracle.surrogate.cutoff" => o.surrogate.cutoff = parse_value(raw)?,
            "oracle.surrogate.lambda_e" => o.surrogate.lambda_e = parse_value(raw)?,
            "oracle.surrogate.lambda_f" => o.surrogate.lambda_f = parse_value(raw)?,
            "oracle.surrogate.epochs" => o.surrogate.epochs = parse_value(raw)?,
            "oracle.surrogate.lr" => o.surrogate.lr = parse_value(raw)?,
            "oracle.surrogate.seed" => o.surrogate.seed = parse_value(raw)?,
            "oracle.surrogate.n_train" => o.surrogate_n_train = parse_value(raw)?,
            "oracle.surrogate.jitter" => o.surrogate_jitter = parse_value(raw)?,
            "model.time_step" => d.steps = parse_value(raw)?,
            "model.n_layers" => d.layers = parse_value(raw)?,
            "model.nf" => d.hidden = parse_value(raw)?,
            "model.coords_range" => d.coord_range = parse_value(raw)?,
            "diffusion.noise_schedule" => {
                d.schedule = match raw {
                    "polynomial_2" => "polynomial_2",
                    "ou" => "ou",
                    _ => return Err(format!("unknown schedule {raw:?} (expected polynomial_2 or ou)")),
                }
            }
            "diffusion.noise_precision" => d.precision = parse_value(raw)?,
            "diffusion.ou_t_max" => d.ou_t_max = parse_value(raw)?,
            "data.pool_size" => data.pool_size = parse_value(raw)?,
            "data.spacing" => data.spacing = parse_value(raw)?,
            "data.jitter" => data.jitter = parse_value(raw)?,
            "data.relax_steps" => data.relax_steps = parse_value(raw)?,
            "pretrain.n_steps" => p.steps = parse_value(raw)?,
            "pretrain.batch_size" => p.batch_size = parse_value(raw)?,
            "pretrain.lr" => p.lr = parse_value(raw)?,
            "pretrain.warmup_steps" => p.warmup_steps = parse_value(raw)?,
            "pretrain.min_lr_ratio" => p.min_lr_ratio = parse_value(raw)?,
            "pretrain.max_grad_norm" => p.max_grad_norm = parse_value(raw)?,
            "train.learning_rate" => t.learning_rate = parse_value(raw)?,
            "train.clip_range" => t.clip_range = parse_value(raw)?,
            "train.train_micro_batch_size" => t.micro_batch_size = parse_value(raw)?,
            "train.epoch_per_rollout" => t.epochs_per_rollout = parse_value(raw)?,
            "train.kl_penalty_weight" => t.kl_weight = parse_value(raw)?,
            "train.adv_clip_max" => t.adv_clip_max = parse_value(raw)?,
            "train.max_grad_norm" => t.max_grad_norm = parse_value(raw)?,
            "train.eta" => t.eta = parse_value(raw)?,
            "train.pool_groups" => t.pool_groups = parse_bool(raw)?,
            "train.scheduler.name" => {
                if raw != "cosine" {
                    return Err(format!("only the cosine scheduler is available, got {raw:?}"));
                }
            }
            "train.scheduler.warmup_steps" => t.warmup_steps = parse_value(raw)?,
            "train.scheduler.total_steps" => t.total_steps = parse_value(raw)?,
            "train.scheduler.min_lr_ratio" => t.min_lr_ratio = parse_value(raw)?,
            "dataloader.sample_group_size" => t.groups = parse_value(raw)?,
            "dataloader.each_prompt_sample" => t.group_size = parse_value(raw)?,
            "dataloader.epochs" => t.iterations = parse_value(raw)?,
            "reward.force_aggregation" => {
                if raw != "rms" {
                    return Err(format!("only rms force aggregation is available, got {raw:?}"));
                }
            }
            "reward.force_clip_threshold" => r.force_clip_threshold = parse_value(raw)?,
            "reward.force_adv_weight" => t.force_weight = parse_value(raw)?,
            "reward.energy_adv_weight" => t.energy_weight = parse_value(raw)?,
            "reward.property_adv_weight" => t.property_weight = parse_value(raw)?,
            "reward.property_target" => r.property_target = parse_value(raw)?,
            "reward.energy_transform_clip" => r.energy_transform_clip = parse_value(raw)?,
            "reward.shaping.gamma" => r.gamma = parse_value(raw)?,
            "reward.shaping.force" => r.force_shaping = parse_bool(raw)?,
            "reward.shaping.scheduler.skip_prefix" => self.reward.skip_prefix = parse_value(raw)?,
            "eval.n_samples" => self.eval.n_samples = parse_value(raw)?,
            "eval.seed" => self.eval.seed = parse_value(raw)?,
            "theory.seed" => th.seed = parse_value(raw)?,
            "theory.gibbs_instances" => th.gibbs_instances = parse_value(raw)?,
            "theory.gibbs_cells" => th.gibbs_cells = parse_value(raw)?,
            "theory.tv_instances" => th.tv_instances = parse_value(raw)?,
            "theory.tv_cells" => th.tv_cells = parse_value(raw)?,
            "theory.tilt_samples" => th.tilt_samples = parse_value(raw)?,
            "theory.tilt_bins" => th.tilt_bins = parse_value(raw)?,
            "theory.tilt_beta_max" => th.tilt_beta_max = parse_value(raw)?,
            "theory.alignment_states" => th.alignment_states = parse_value(raw)?,
            "theory.alignment_window" => th.alignment_window = parse_value(raw)?,
            "paths.out" => self.out_dir = PathBuf::from(raw),
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Every effective value as `(key, value)` in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let o = &self.system.oracle;
        let d = &self.diffusion;
        let data = &self.pretrain.data;
        let p = &self.pretrain.optim;
        let t = &self.trainer;
        let r = &self.reward.reward;
        let th = &self.theory;
        let mut v: Vec<(&'static str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("system.n_bodies", self.system.n_bodies.to_string()),
            ("system.d_h", self.system.d_h.to_string()),
        ];
        let opt = |v: &mut Vec<(&'static str, String)>, k: &'static str, x: Option<f64>| {
            if let Some(x) = x {
                v.push((k, x.to_string()));
            }
        };
        if let Some(k) = o.kind {
            v.push(("oracle.kind", k.name().into()));
        }
        opt(&mut v, "oracle.spring_constant", o.spring_constant);
        opt(&mut v, "oracle.rest_length", o.rest_length);
        opt(&mut v, "oracle.epsilon", o.epsilon);
        opt(&mut v, "oracle.sigma", o.sigma);
        v.push(("oracle.r_min_factor", o.r_min_factor.to_string()));
        v.push(("oracle.strict", o.strict.to_string()));
        if let Some(k) = o.surrogate_target {
            v.push(("oracle.surrogate.target", k.name().into()));
        }
        v.extend([
            ("oracle.surrogate.hidden", o.surrogate.hidden.to_string()),
            ("oracle.surrogate.n_rbf", o.surrogate.n_rbf.to_string()),
            ("oracle.surrogate.cutoff", o.surrogate.cutoff.to_string()),
            ("oracle.surrogate.lambda_e", o.surrogate.lambda_e.to_string()),
            ("oracle.surrogate.lambda_f", o.surrogate.lambda_f.to_string()),
            ("oracle.surrogate.epochs", o.surrogate.epochs.to_string()),
            ("oracle.surrogate.lr", o.surrogate.lr.to_string()),
            ("oracle.surrogate.seed", o.surrogate.seed.to_string()),
            ("oracle.surrogate.n_train", o.surrogate_n_train.to_string()),
            ("oracle.surrogate.jitter", o.surrogate_jitter.to_string()),
            ("model.time_step", d.steps.to_string()),
            ("model.n_layers", d.layers.to_string()),
            ("model.nf", d.hidden.to_string()),
            ("model.coords_range", d.coord_range.to_string()),
            ("diffusion.noise_schedule", d.schedule.to_string()),
            ("diffusion.noise_precision", d.precision.to_string()),
            ("diffusion.ou_t_max", d.ou_t_max.to_string()),
            ("data.pool_size", data.pool_size.to_string()),
            ("data.spacing", data.spacing.to_string()),
            ("data.jitter", data.jitter.to_string()),
            ("data.relax_steps", data.relax_steps.to_string()),
            ("pretrain.n_steps", p.steps.to_string()),
            ("pretrain.batch_size", p.batch_size.to_string()),
            ("pretrain.lr", p.lr.to_string()),
            ("pretrain.warmup_steps", p.warmup_steps.to_string()),
            ("pretrain.min_lr_ratio", p.min_lr_ratio.to_string()),
            ("pretrain.max_grad_norm", p.max_grad_norm.to_string()),
            ("train.learning_rate", t.learning_rate.to_string()),
            ("train.clip_range", t.clip_range.to_string()),
            ("train.train_micro_batch_size", t.micro_batch_size.to_string()),
            ("train.epoch_per_rollout", t.epochs_per_rollout.to_string()),
            ("train.kl_penalty_weight", t.kl_weight.to_string()),
            ("train.adv_clip_max", t.adv_clip_max.to_string()),
            ("train.max_grad_norm", t.max_grad_norm.to_string()),
            ("train.eta", t.eta.to_string()),
            ("train.pool_groups", t.pool_groups.to_string()),
            ("train.scheduler.name", "cosine".into()),
            ("train.scheduler.warmup_steps", t.warmup_steps.to_string()),
            ("train.scheduler.total_steps", t.total_steps.to_string()),
            ("train.scheduler.min_lr_ratio", t.min_lr_ratio.to_string()),
            ("dataloader.sample_group_size", t.groups.to_string()),
            ("dataloader.each_prompt_sample", t.group_size.to_string()),
            ("dataloader.epochs", t.iterations.to_string()),
            ("reward.force_aggregation", "rms".into()),
            ("reward.force_clip_threshold", r.force_clip_threshold.to_string()),
            ("reward.force_adv_weight", t.force_weight.to_string()),
            ("reward.energy_adv_weight", t.energy_weight.to_string()),
            ("reward.property_adv_weight", t.property_weight.to_string()),
            ("reward.property_target", r.property_target.to_string()),
            ("reward.energy_transform_clip", r.energy_transform_clip.to_string()),
            ("reward.shaping.gamma", r.gamma.to_string()),
            ("reward.shaping.force", r.force_shaping.to_string()),
            ("reward.shaping.scheduler.skip_prefix", self.reward.skip_prefix.to_string()),
            ("eval.n_samples", self.eval.n_samples.to_string()),
            ("eval.seed", self.eval.seed.to_string()),
            ("theory.seed", th.seed.to_string()),
            ("theory.gibbs_instances", th.gibbs_instances.to_string()),
            ("theory.gibbs_cells", th.gibbs_cells.to_string()),
            ("theory.tv_instances", th.tv_instances.to_string()),
            ("theory.tv_cells", th.tv_cells.to_string()),
            ("theory.tilt_samples", th.tilt_samples.to_string()),
            ("theory.tilt_bins", th.tilt_bins.to_string()),
            ("theory.tilt_beta_max", th.tilt_beta_max.to_string()),
            ("theory.alignment_states", th.alignment_states.to_string()),
            ("theory.alignment_window", th.alignment_window.to_string()),
            ("paths.out", self.out_dir.display().to_string()),
        ]);
        v
    }

    /// Canonical text form; parsing it reproduces every effective value.
    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Parses and validates a configuration.
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut cfg = Self::default();
        let mut lines: BTreeMap<String, usize> = BTreeMap::new();
        for (i, raw_line) in text.lines().enumerate() {
            let no = i + 1;
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::config(Some(no), line, "expected `key = value`"));
            };
            let (key, value) = (key.trim(), value.trim());
            if let Some(prev) = lines.insert(key.to_string(), no) {
                return Err(CliError::config(Some(no), key, format!("duplicate key (first set on line {prev})")));
            }
            cfg.set(key, value).map_err(|msg| CliError::config(Some(no), key, msg))?;
        }
        cfg.finish()
            .map_err(|(key, msg)| CliError::config(lines.get(&key).copied(), key, msg))?;
        Ok(cfg)
    }

    /// Derives dependent fields and checks ranges and required keys.
    fn finish(&mut self) -> Result<(), (String, String)> {
        let err = |k: &str, m: &str| Err((k.to_string(), m.to_string()));
        let o = &self.system.oracle;
        let require = |present: bool, key: &str, kind: &str| -> Result<(), (String, String)> {
            if present {
                Ok(())
            } else {
                Err((key.to_string(), format!("missing required key for oracle kind {kind}")))
            }
        };
        let check_analytic = |kind: OracleKind| -> Result<(), (String, String)> {
            match kind {
                OracleKind::Harmonic => {
                    require(o.spring_constant.is_some(), "oracle.spring_constant", "harmonic")?;
                    require(o.rest_length.is_some(), "oracle.rest_length", "harmonic")
                }
                OracleKind::LennardJones => {
                    require(o.epsilon.is_some(), "oracle.epsilon", "lennard_jones")?;
                    require(o.sigma.is_some(), "oracle.sigma", "lennard_jones")
                }
                OracleKind::Surrogate => err("oracle.surrogate.target", "must be harmonic or lennard_jones"),
            }
        };
        match o.kind {
            None => return err("oracle.kind", "missing required key"),
            Some(OracleKind::Surrogate) => match o.surrogate_target {
                None => return err("oracle.surrogate.target", "missing required key for oracle kind surrogate"),
                Some(t) => check_analytic(t)?,
            },
            Some(k) => check_analytic(k)?,
        }
        if !(o.surrogate_jitter >= 0.0) {
            return err("oracle.surrogate.jitter", "must be non-negative");
        }
        if self.system.n_bodies == 0 {
            return err("system.n_bodies", "at least one body is required");
        }
        let d = &self.diffusion;
        if d.steps < 2 {
            return err("model.time_step", "need at least 2 steps");
        }
        if !(d.precision > 0.0 && d.precision < 1e-2) {
            return err("diffusion.noise_precision", "must lie in (0, 1e-2)");
        }
        if d.schedule == "ou" && !(d.ou_t_max > 0.0 && d.ou_t_max.is_finite()) {
            return err("diffusion.ou_t_max", "must be positive");
        }
        self.net_config_with(Topology::Chain)
            .validate()
            .map_err(core_key("model"))?;
        let p = &self.pretrain.optim;
        if p.steps == 0 || p.batch_size == 0 {
            return err("pretrain.n_steps", "steps and batch size must be at least 1");
        }
        if !(p.lr > 0.0) || !(p.max_grad_norm > 0.0) {
            return err("pretrain.lr", "learning rate and gradient norm must be positive");
        }
        if !(0.0..=1.0).contains(&p.min_lr_ratio) {
            return err("pretrain.min_lr_ratio", "must lie in [0, 1]");
        }
        let data = &mut self.pretrain.data;
        data.n_bodies = self.system.n_bodies;
        data.d_h = self.system.d_h;
        if data.pool_size == 0 || !(data.spacing > 0.0) || !(data.jitter >= 0.0) {
            return err("data.pool_size", "need a non-empty pool, positive spacing and non-negative jitter");
        }
        if self.reward.skip_prefix >= d.steps {
            return err("reward.shaping.scheduler.skip_prefix", "must be smaller than model.time_step");
        }
        self.trainer.t_prefix = d.steps - self.reward.skip_prefix;
        self.trainer.n_bodies = self.system.n_bodies;
        self.trainer.validate(d.steps).map_err(core_key("train"))?;
        self.reward.reward.validate().map_err(core_key("reward"))?;
        if self.eval.n_samples == 0 {
            return err("eval.n_samples", "must be at least 1");
        }
        let th = &self.theory;
        if th.gibbs_cells < 2 || th.tv_cells < 2 {
            return err("theory.gibbs_cells", "grids need at least two cells");
        }
        if th.tilt_bins < 2 {
            return err("theory.tilt_bins", "need at least two bins");
        }
        if !(th.tilt_beta_max > 0.0) {
            return err("theory.tilt_beta_max", "must be positive");
        }
        if th.alignment_window == 0 || th.alignment_window > d.steps {
            return err("theory.alignment_window", "must lie in 1..=model.time_step");
        }
        Ok(())
    }

    fn net_config_with(&self, topology: Topology) -> NetConfig {
        NetConfig {
            layers: self.diffusion.layers,
            hidden: self.diffusion.hidden,
            d_h: self.system.d_h,
            topology,
            coord_range: self.diffusion.coord_range,
        }
    }

    fn analytic_oracle(&self, kind: OracleKind) -> eqalign_core::Result<Oracle> {
        let o = &self.system.oracle;
        let missing = |k: &str| eqalign_core::Error::config(k, "missing required key");
        Ok(match kind {
            OracleKind::Harmonic => Oracle::Harmonic(HarmonicChain::new(
                o.spring_constant.ok_or_else(|| missing("oracle.spring_constant"))?,
                o.rest_length.ok_or_else(|| missing("oracle.rest_length"))?,
            )?),
            OracleKind::LennardJones => {
                let lj = LennardJones::new(
                    o.epsilon.ok_or_else(|| missing("oracle.epsilon"))?,
                    o.sigma.ok_or_else(|| missing("oracle.sigma"))?,
                    o.r_min_factor,
                )?;
                Oracle::LennardJones(if o.strict { lj.strict() } else { lj })
            }
            OracleKind::Surrogate => return Err(eqalign_core::Error::config("oracle.surrogate.target", "must be analytic")),
        })
    }

    /// The configured oracle. A surrogate is fit here, deterministically.
    pub fn oracle(&self) -> eqalign_core::Result<Oracle> {
        let o = &self.system.oracle;
        match o.kind.ok_or_else(|| eqalign_core::Error::config("oracle.kind", "missing required key"))? {
            OracleKind::Surrogate => {
                let target_kind = o
                    .surrogate_target
                    .ok_or_else(|| eqalign_core::Error::config("oracle.surrogate.target", "missing required key"))?;
                let target = self.analytic_oracle(target_kind)?;
                let data_cfg = DataConfig {
                    jitter: o.surrogate_jitter,
                    ..self.pretrain.data
                };
                let mut r = rng::stream(o.surrogate.seed, "surrogate.data");
                let gen = DataGenerator::new(&target, &data_cfg, &mut r)?;
                let configs = (0..o.surrogate_n_train)
                    .map(|_| gen.draw(&mut r))
                    .collect::<eqalign_core::Result<Vec<_>>>()?;
                Ok(Oracle::Surrogate(Box::new(fit_surrogate(&target, &configs, &o.surrogate)?)))
            }
            k => self.analytic_oracle(k),
        }
    }

    pub fn schedule(&self) -> eqalign_core::Result<NoiseSchedule> {
        let kind = ScheduleKind::parse(self.diffusion.schedule, self.diffusion.ou_t_max)?;
        make_schedule(self.diffusion.steps, kind, self.diffusion.precision)
    }

    pub fn net_config(&self, oracle: &dyn EnergyOracle) -> NetConfig {
        self.net_config_with(oracle.topology())
    }

    pub fn tilt_config(&self, seed: u64) -> TiltCheckConfig {
        TiltCheckConfig {
            n_samples: self.theory.tilt_samples,
            bins: self.theory.tilt_bins,
            beta_max: self.theory.tilt_beta_max,
            seed,
        }
    }
}

/// Re-keys a core validation error under `section` when it carries no dotted key.
fn core_key(section: &'static str) -> impl Fn(eqalign_core::Error) -> (String, String) {
    move |e| match e {
        eqalign_core::Error::Config { key, msg } if key.contains('.') => (key, msg),
        eqalign_core::Error::Config { key, msg } => (format!("{section}.{key}"), msg),
        eqalign_core::Error::EmptySystem => ("system.n_bodies".into(), "at least one body is required".into()),
        other => (section.to_string(), other.to_string()),
    }
}
