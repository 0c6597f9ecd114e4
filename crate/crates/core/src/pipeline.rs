//! End-to-end training of any supported model family from one JSON run
//! configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::AnalysisConfig;
use crate::baselines::{LightGcnConfig, LightGcnModel, MfModel};
use crate::checkpoint::Checkpoint;
use crate::dataio::{interaction_matrix, InteractionDataset, SplitLabel};
use crate::error::{Error, Result};
use crate::eval::{evaluate_embeddings, EvalOptions, EvalReport};
use crate::gde::{GdeBases, GdeConfig, GdeModel, Kernel};
use crate::spectral::EigenOptions;
use crate::train::{fit, Trainable, TrainConfig, TrainHistory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Gde,
    /// The encoder with attention-generated feature weights.
    GdeAttn,
    Mf,
    Lightgcn,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Gde => "gde",
            ModelKind::GdeAttn => "gde-attn",
            ModelKind::Mf => "mf",
            ModelKind::Lightgcn => "lightgcn",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        [ModelKind::Gde, ModelKind::GdeAttn, ModelKind::Mf, ModelKind::Lightgcn]
            .into_iter()
            .find(|k| k.name() == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfConfig {
    pub embed_dim: usize,
}

impl Default for MfConfig {
    fn default() -> Self {
        MfConfig { embed_dim: 64 }
    }
}

/// Everything needed to train one model; unused sections are ignored.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub gde: GdeConfig,
    pub lightgcn: LightGcnConfig,
    pub mf: MfConfig,
    pub train: TrainConfig,
    pub eigen: EigenOptions,
    pub analysis: AnalysisConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(format!("bad run configuration: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run configuration serializes")
    }

    /// Uses `seed` for initialization, sampling and the eigensolver.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.gde.seed = seed;
        self.train.seed = seed;
        self.eigen.seed = seed;
        self
    }

    /// The configuration actually used for `kind`.
    pub fn resolved(&self, kind: ModelKind) -> RunConfig {
        let mut cfg = self.clone();
        if kind == ModelKind::GdeAttn {
            cfg.gde.kernel = Kernel::Attention;
        }
        cfg
    }

    pub fn validate(&self, kind: ModelKind) -> Result<()> {
        self.train.validate()?;
        match kind {
            ModelKind::Gde | ModelKind::GdeAttn => self.resolved(kind).gde.validate()?,
            ModelKind::Lightgcn => {
                self.lightgcn.weights()?;
            }
            ModelKind::Mf => {}
        }
        if kind == ModelKind::Gde && self.gde.kernel == Kernel::Attention {
            return Err(Error::config("use the gde-attn model for the attention kernel"));
        }
        if self.embed_dim(kind) == 0 {
            return Err(Error::config("embed_dim must be positive"));
        }
        Ok(())
    }

    pub fn embed_dim(&self, kind: ModelKind) -> usize {
        match kind {
            ModelKind::Gde | ModelKind::GdeAttn | ModelKind::Lightgcn => self.gde.embed_dim,
            ModelKind::Mf => self.mf.embed_dim,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub checkpoint: Checkpoint,
    pub history: TrainHistory,
    /// Hash of the spectral bases for encoder models.
    pub basis_hash: Option<String>,
}

impl TrainedModel {
    pub fn evaluate(&self, ds: &InteractionDataset, target: SplitLabel, opts: &EvalOptions) -> Result<EvalReport> {
        evaluate_embeddings(&self.checkpoint.user_output, &self.checkpoint.item_output, ds, target, opts)
    }
}

fn finish<M: Trainable + Clone>(
    kind: ModelKind,
    mut model: M,
    cfg: &RunConfig,
    ds: &InteractionDataset,
    basis_hash: Option<String>,
) -> Result<TrainedModel> {
    let history = fit(&mut model, ds, &cfg.train)?;
    let (ou, oi) = model.output_embeddings()?;
    if !(ou.is_finite() && oi.is_finite()) {
        return Err(Error::Numeric("training produced non-finite embeddings".into()));
    }
    Ok(TrainedModel {
        kind,
        checkpoint: Checkpoint::new(kind.name(), cfg.to_json(), ou, oi)?,
        history,
        basis_hash,
    })
}

/// Builds, trains and snapshots a model on the training pairs of `ds`.
/// Spectral bases are read from or written to `cache_dir` when given.
pub fn train_model(kind: ModelKind, cfg: &RunConfig, ds: &InteractionDataset, cache_dir: Option<&Path>) -> Result<TrainedModel> {
    cfg.validate(kind)?;
    let cfg = cfg.resolved(kind);
    let g = interaction_matrix(ds, SplitLabel::Train)?;
    match kind {
        ModelKind::Gde | ModelKind::GdeAttn => {
            let bases = GdeBases::compute_cached(&g, &cfg.gde, &cfg.eigen, cache_dir)?;
            train_gde_on(&cfg, ds, &bases, kind)
        }
        ModelKind::Mf => {
            let model = MfModel::new(ds.user_count, ds.item_count, cfg.mf.embed_dim, cfg.train.seed)?;
            finish(kind, model, &cfg, ds, None)
        }
        ModelKind::Lightgcn => {
            let model = LightGcnModel::lightgcn(&g, &cfg.lightgcn, cfg.gde.embed_dim, cfg.train.seed)?;
            finish(kind, model, &cfg, ds, None)
        }
    }
}

/// Trains an encoder over precomputed bases, which may hold more features
/// than the configuration asks for.
pub fn train_gde_on(cfg: &RunConfig, ds: &InteractionDataset, bases: &GdeBases, kind: ModelKind) -> Result<TrainedModel> {
    let cfg = cfg.resolved(kind);
    let g = interaction_matrix(ds, SplitLabel::Train)?;
    let used = bases.truncate(&cfg.gde)?;
    let model = GdeModel::new(cfg.gde.clone(), &used, &g.user_degree, &g.item_degree)?;
    finish(kind, model, &cfg, ds, Some(used.fingerprint()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{split, synthetic, SplitConfig};

    fn small_config() -> RunConfig {
        let mut cfg = RunConfig::default().with_seed(3);
        cfg.gde.embed_dim = 8;
        cfg.gde.smoothed_users = 6;
        cfg.gde.smoothed_items = 6;
        cfg.gde.rough_users = 1;
        cfg.gde.rough_items = 1;
        cfg.mf.embed_dim = 8;
        cfg.train.epochs = 3;
        cfg.train.learning_rate = 0.5;
        cfg
    }

    #[test]
    fn config_round_trips_and_rejects_unknown_fields() {
        let cfg = small_config();
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert!(RunConfig::from_json(r#"{"train": {"lr": 1}}"#).is_err());
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn every_family_trains_on_a_small_graph() {
        let ds = synthetic(40, 30, 3, 8, 1).unwrap();
        let ds = split(&ds, &SplitConfig::new(0.6, 0.1, 2)).unwrap();
        let cfg = small_config();
        for kind in [ModelKind::Gde, ModelKind::GdeAttn, ModelKind::Mf, ModelKind::Lightgcn] {
            let t = train_model(kind, &cfg, &ds, None).unwrap();
            assert_eq!(t.checkpoint.users(), 40);
            assert_eq!(t.history.records.len(), 4);
            let r = t.evaluate(&ds, SplitLabel::Test, &EvalOptions::default()).unwrap();
            assert!(r.users_evaluated > 0);
        }
    }
}
