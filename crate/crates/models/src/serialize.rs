//! On-disk model format: a small JSON manifest next to kind-specific
//! payload files. Parameter tensors go through the binary tensor format,
//! count and table models through JSON; both round-trip float bits
//! exactly.

use std::fs;
use std::path::{Path, PathBuf};

use ndcore::{load_params, save_params};
use serde::{Deserialize, Serialize};

use crate::arnn::{AttnConfig, AttnPolicy};
use crate::gail::{GailConfig, TrajGailBundle};
use crate::maxent::MaxEntModel;
use crate::policy::{PolicyConfig, SequencePolicy};
use crate::tokens::TokenSpace;
use crate::transition::TransitionMatrix;
use crate::{ModelError, Result};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelManifest {
    pub model_kind: String,
    pub granularity: String,
    /// Kind-specific configuration echo; shape depends on `model_kind`.
    pub config: serde_json::Value,
    pub seed: u64,
    /// Fingerprint of the network or token space the model was trained on.
    pub net_hash: String,
    /// Payload files, relative to the manifest's directory.
    pub files: Vec<String>,
}

pub enum LoadedModel {
    Markov(TransitionMatrix),
    Rnn(SequencePolicy),
    Arnn(AttnPolicy),
    MaxEnt(MaxEntModel),
    Gail(TrajGailBundle),
}

impl LoadedModel {
    pub fn kind(&self) -> &'static str {
        match self {
            LoadedModel::Markov(_) => "markov",
            LoadedModel::Rnn(_) => "rnn",
            LoadedModel::Arnn(_) => "arnn",
            LoadedModel::MaxEnt(_) => "maxent",
            LoadedModel::Gail(_) => "trajgail",
        }
    }

    pub fn granularity(&self) -> &'static str {
        match self {
            LoadedModel::Markov(_) => "token",
            LoadedModel::Rnn(p) => p.space.granularity(),
            LoadedModel::Arnn(p) => p.space.granularity(),
            LoadedModel::MaxEnt(_) | LoadedModel::Gail(_) => "link",
        }
    }

    fn config_value(&self) -> Result<serde_json::Value> {
        Ok(match self {
            LoadedModel::Markov(_) => serde_json::Value::Null,
            LoadedModel::Rnn(p) => serde_json::to_value(p.cfg)?,
            LoadedModel::Arnn(p) => serde_json::to_value(p.cfg)?,
            LoadedModel::MaxEnt(m) => serde_json::json!({ "mode": m.mode.label() }),
            LoadedModel::Gail(b) => serde_json::to_value(b.cfg)?,
        })
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn manifest_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.manifest.json"))
}

/// Writes `model` under `dir/name.*` and returns the manifest that was
/// stored alongside.
pub fn save_model(
    dir: &Path,
    name: &str,
    model: &LoadedModel,
    seed: u64,
    net_hash: &str,
) -> Result<ModelManifest> {
    if name.is_empty() || name.contains(['/', '\\']) {
        return Err(ModelError::BadInput(format!("bad model name {name:?}")));
    }
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    match model {
        LoadedModel::Markov(m) => {
            let f = format!("{name}.model.json");
            write_json(&dir.join(&f), m)?;
            files.push(f);
        }
        LoadedModel::MaxEnt(m) => {
            let f = format!("{name}.model.json");
            write_json(&dir.join(&f), m)?;
            files.push(f);
        }
        LoadedModel::Rnn(p) => {
            let fs_ = format!("{name}.space.json");
            write_json(&dir.join(&fs_), &p.space)?;
            let fp = format!("{name}.params.tlab");
            save_params(&p.params, dir.join(&fp))?;
            files.push(fs_);
            files.push(fp);
        }
        LoadedModel::Arnn(p) => {
            let fs_ = format!("{name}.space.json");
            write_json(&dir.join(&fs_), &p.space)?;
            let fp = format!("{name}.params.tlab");
            save_params(&p.params, dir.join(&fp))?;
            files.push(fs_);
            files.push(fp);
        }
        LoadedModel::Gail(b) => {
            let fs_ = format!("{name}.space.json");
            write_json(&dir.join(&fs_), &b.space)?;
            files.push(fs_);
            for (suffix, ps) in [
                ("policy", &b.policy),
                ("value", &b.value),
                ("disc", &b.disc),
            ] {
                let f = format!("{name}.{suffix}.tlab");
                save_params(ps, dir.join(&f))?;
                files.push(f);
            }
        }
    }
    let manifest = ModelManifest {
        model_kind: model.kind().to_string(),
        granularity: model.granularity().to_string(),
        config: model.config_value()?,
        seed,
        net_hash: net_hash.to_string(),
        files,
    };
    write_json(&manifest_path(dir, name), &manifest)?;
    Ok(manifest)
}

/// Reads a model saved by [`save_model`].
pub fn load_model(dir: &Path, name: &str) -> Result<(LoadedModel, ModelManifest)> {
    let manifest: ModelManifest = read_json(&manifest_path(dir, name))?;
    let model = match manifest.model_kind.as_str() {
        "markov" => {
            let m: TransitionMatrix = read_json(&dir.join(format!("{name}.model.json")))?;
            LoadedModel::Markov(m)
        }
        "maxent" => {
            let m: MaxEntModel = read_json(&dir.join(format!("{name}.model.json")))?;
            LoadedModel::MaxEnt(m)
        }
        "rnn" => {
            let space: TokenSpace = read_json(&dir.join(format!("{name}.space.json")))?;
            let cfg: PolicyConfig = serde_json::from_value(manifest.config.clone())?;
            let params = load_params(dir.join(format!("{name}.params.tlab")))?;
            LoadedModel::Rnn(SequencePolicy { cfg, space, params })
        }
        "arnn" => {
            let space: TokenSpace = read_json(&dir.join(format!("{name}.space.json")))?;
            let cfg: AttnConfig = serde_json::from_value(manifest.config.clone())?;
            let params = load_params(dir.join(format!("{name}.params.tlab")))?;
            LoadedModel::Arnn(AttnPolicy { cfg, space, params })
        }
        "trajgail" => {
            let space: TokenSpace = read_json(&dir.join(format!("{name}.space.json")))?;
            if space.as_link().is_none() {
                return Err(ModelError::BadInput(
                    "stored adversarial bundle lacks link granularity".into(),
                ));
            }
            let cfg: GailConfig = serde_json::from_value(manifest.config.clone())?;
            let policy = load_params(dir.join(format!("{name}.policy.tlab")))?;
            let value = load_params(dir.join(format!("{name}.value.tlab")))?;
            let disc = load_params(dir.join(format!("{name}.disc.tlab")))?;
            LoadedModel::Gail(TrajGailBundle {
                cfg,
                space,
                policy,
                value,
                disc,
            })
        }
        other => {
            return Err(ModelError::BadInput(format!(
                "unknown model kind {other:?} in manifest"
            )));
        }
    };
    Ok((model, manifest))
}
