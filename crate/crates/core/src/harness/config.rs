use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelConfig;
use crate::data::ShardPlan;
use crate::fd::{BatchOrder, FloatWidth};
use crate::frd::{DrlConfig, DrlScheme, MergeWeighting, Mission};
use crate::mix2fld::SeedMode;
use crate::nn::{Activation, LogitSource, LossKind};
use crate::{Error, Result};

pub const SCHEMES: [&str; 9] = [
    "fd", "fl", "cd_analytic", "kd_analytic", "mixfld", "mix2fld", "pd", "frd", "frl",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentScheme {
    Fd,
    Fl,
    CdAnalytic,
    KdAnalytic,
    Mixfld,
    Mix2fld,
    Pd,
    Frd,
    Frl,
}

impl ExperimentScheme {
    pub fn is_supervised(self) -> bool {
        matches!(self, Self::Fd | Self::Fl | Self::Mixfld | Self::Mix2fld)
    }

    pub fn drl(self) -> Option<DrlScheme> {
        match self {
            Self::Pd => Some(DrlScheme::Pd),
            Self::Frd => Some(DrlScheme::Frd),
            Self::Frl => Some(DrlScheme::Frl),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Gaussian clusters; the seed defaults to the master seed.
    Synthetic {
        classes: usize,
        per_class: usize,
        dim: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    /// IDX image and label files; pixels are scaled to [0, 1].
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        limit: Option<usize>,
    },
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub source: DataSource,
    /// Share held out as the common test set.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_activation() -> Activation {
    Activation::Tanh
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_loss() -> LossKind {
    LossKind::cross_entropy()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSpec {
    pub rounds: usize,
    /// Local batches per round.
    pub steps: usize,
    pub batch: usize,
    pub eta: f64,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub order: BatchOrder,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    #[serde(default = "default_loss")]
    pub distill_loss: LossKind,
    #[serde(default)]
    pub logit_source: LogitSource,
    #[serde(default)]
    pub float_width: FloatWidth,
}

fn default_mode() -> SeedMode {
    SeedMode::Inverse
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixSpec {
    pub gamma: f64,
    pub n_mix: usize,
    pub n_inv: usize,
    /// Server distillation steps per round.
    pub server_steps: usize,
    pub server_eta: f64,
    /// Overrides the scheme's default seed mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<SeedMode>,
}

fn default_analytic_workers() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticSpec {
    pub a: f64,
    pub lambda: f64,
    #[serde(default = "default_analytic_workers")]
    pub workers: usize,
    /// Samples per worker output vector.
    pub n: usize,
    /// Co-distillation rounds (ignored for KD).
    #[serde(default)]
    pub rounds: usize,
}

/// Agent and exchange settings for `pd`, `frd` and `frl`; every field falls
/// back to the library default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DrlSpec {
    pub agents: usize,
    pub episodes: usize,
    pub exchange_interval: usize,
    pub subspaces: usize,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub actor_eta: f64,
    pub critic_eta: f64,
    pub discount: f64,
    pub update_every: usize,
    pub distill_eta: f64,
    pub distill_epochs: usize,
    pub float_width: FloatWidth,
    pub weighting: MergeWeighting,
    pub mission: Option<Mission>,
}

impl Default for DrlSpec {
    fn default() -> Self {
        let d = DrlConfig::default();
        DrlSpec {
            agents: d.agents,
            episodes: d.episodes,
            exchange_interval: d.exchange_interval,
            subspaces: d.subspaces,
            actor_hidden: d.actor_hidden,
            critic_hidden: d.critic_hidden,
            actor_eta: d.actor_eta,
            critic_eta: d.critic_eta,
            discount: d.discount,
            update_every: d.update_every,
            distill_eta: d.distill_eta,
            distill_epochs: d.distill_epochs,
            float_width: d.float_width,
            weighting: d.weighting,
            mission: d.mission,
        }
    }
}

impl DrlSpec {
    pub fn to_config(&self, scheme: DrlScheme, seed: u64) -> DrlConfig {
        DrlConfig {
            scheme,
            agents: self.agents,
            episodes: self.episodes,
            exchange_interval: self.exchange_interval,
            subspaces: self.subspaces,
            actor_hidden: self.actor_hidden.clone(),
            critic_hidden: self.critic_hidden.clone(),
            actor_eta: self.actor_eta,
            critic_eta: self.critic_eta,
            discount: self.discount,
            update_every: self.update_every,
            distill_eta: self.distill_eta,
            distill_epochs: self.distill_epochs,
            float_width: self.float_width,
            weighting: self.weighting,
            mission: self.mission,
            env: Default::default(),
            seed,
        }
    }
}

fn default_workers() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scheme: ExperimentScheme,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSpec>,
    /// Defaults to an IID split seeded by the master seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shards: Option<ShardPlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<ChannelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mix: Option<MixSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analytic: Option<AnalyticSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drl: Option<DrlSpec>,
}

fn require<'a, T>(section: &'a Option<T>, path: &str, scheme: &str) -> Result<&'a T> {
    section
        .as_ref()
        .ok_or_else(|| Error::validation(path, format!("required for scheme `{scheme}`")))
}

fn positive(path: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::validation(path, "must be positive"));
    }
    Ok(())
}

fn positive_real(path: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::validation(path, format!("must be positive and finite, got {v}")));
    }
    Ok(())
}

/// Re-roots a validation error raised by a sub-component under `prefix`.
fn nest(prefix: &str, err: Error) -> Error {
    match err {
        Error::Validation { path, message } => Error::validation(format!("{prefix}.{path}"), message),
        Error::InvalidArgument(message) => Error::validation(prefix, message),
        other => other,
    }
}

impl ExperimentConfig {
    /// Parses and validates a JSON config.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::validation("<root>", e.to_string()))?;
        match value.get("scheme") {
            None => return Err(Error::validation("scheme", "missing")),
            Some(serde_json::Value::String(s)) if !SCHEMES.contains(&s.as_str()) => {
                return Err(Error::validation(
                    "scheme",
                    format!("unknown scheme `{s}`; expected one of {}", SCHEMES.join(", ")),
                ))
            }
            _ => {}
        }
        let cfg: ExperimentConfig =
            serde_json::from_value(value).map_err(|e| Error::validation("<root>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn scheme_name(&self) -> &'static str {
        let json = serde_json::to_value(self.scheme).expect("scheme serializes");
        SCHEMES
            .iter()
            .find(|s| json.as_str() == Some(**s))
            .copied()
            .expect("every scheme is listed")
    }

    pub fn validate(&self) -> Result<()> {
        let name = self.scheme_name();
        let scheme = self.scheme;
        if scheme.is_supervised() {
            if self.workers < 2 {
                return Err(Error::validation("workers", "federated schemes need at least 2 workers"));
            }
            let dataset = require(&self.dataset, "dataset", name)?;
            if !(dataset.test_fraction > 0.0 && dataset.test_fraction < 1.0) {
                return Err(Error::validation("dataset.test_fraction", "must lie in (0, 1)"));
            }
            if let DataSource::Synthetic { classes, per_class, dim, .. } = dataset.source {
                positive("dataset.source.classes", classes)?;
                positive("dataset.source.per_class", per_class)?;
                positive("dataset.source.dim", dim)?;
            }
            let model = require(&self.model, "model", name)?;
            if model.hidden.is_empty() {
                return Err(Error::validation("model.hidden", "needs at least one hidden layer"));
            }
            if model.hidden.contains(&0) {
                return Err(Error::validation("model.hidden", "widths must be positive"));
            }
            let t = require(&self.training, "training", name)?;
            positive("training.rounds", t.rounds)?;
            positive("training.steps", t.steps)?;
            positive("training.batch", t.batch)?;
            positive_real("training.eta", t.eta)?;
            if !(t.lambda >= 0.0 && t.lambda.is_finite()) {
                return Err(Error::validation("training.lambda", "must be non-negative"));
            }
            for (path, kind) in [("training.loss", t.loss), ("training.distill_loss", t.distill_loss)] {
                if let LossKind::CrossEntropy { temperature } = kind {
                    positive_real(&format!("{path}.temperature"), temperature)?;
                }
            }
            if let Some(ch) = &self.channel {
                ch.resolve().map_err(|e| nest("channel", e))?;
            }
        }
        if matches!(scheme, ExperimentScheme::Mixfld | ExperimentScheme::Mix2fld) {
            let m = require(&self.mix, "mix", name)?;
            if !(m.gamma > 0.0 && m.gamma < 1.0) || m.gamma == 0.5 {
                return Err(Error::validation("mix.gamma", "must lie in (0, 1) and differ from 0.5"));
            }
            positive("mix.n_mix", m.n_mix)?;
            positive("mix.n_inv", m.n_inv)?;
            positive("mix.server_steps", m.server_steps)?;
            positive_real("mix.server_eta", m.server_eta)?;
        }
        if matches!(scheme, ExperimentScheme::CdAnalytic | ExperimentScheme::KdAnalytic) {
            let a = require(&self.analytic, "analytic", name)?;
            positive_real("analytic.a", a.a)?;
            positive_real("analytic.lambda", a.lambda)?;
            positive("analytic.n", a.n)?;
            if scheme == ExperimentScheme::CdAnalytic && a.workers < 2 {
                return Err(Error::validation("analytic.workers", "co-distillation needs at least 2 workers"));
            }
        }
        if let Some(drl) = scheme.drl() {
            let spec = self.drl.clone().unwrap_or_default();
            spec.to_config(drl, self.seed).validate().map_err(|e| nest("drl", e))?;
        }
        for (present, section) in [
            (self.mix.is_some() && !matches!(scheme, ExperimentScheme::Mixfld | ExperimentScheme::Mix2fld), "mix"),
            (self.analytic.is_some() && !matches!(scheme, ExperimentScheme::CdAnalytic | ExperimentScheme::KdAnalytic), "analytic"),
            (self.drl.is_some() && scheme.drl().is_none(), "drl"),
        ] {
            if present {
                log::warn!("section `{section}` is ignored by scheme `{name}`");
            }
        }
        Ok(())
    }

    pub fn seed_mode(&self) -> SeedMode {
        match (&self.mix, self.scheme) {
            (Some(MixSpec { mode: Some(m), .. }), _) => *m,
            (_, ExperimentScheme::Mixfld) => SeedMode::Mixed,
            _ => default_mode(),
        }
    }
}
