//! Run-time choice among the four predictors.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{
    FeatureMode, KnnModel, LinearSvmModel, SubspaceConfig, SubspaceKnnModel, SvmConfig,
};
use crate::checkpoint::Checkpoint;
use crate::dataset::{Dataset, RssSample};
use crate::encoder::{ApDirectory, FingerprintImage};
use crate::error::{Error, Result};
use crate::predictor::{ClassTable, Estimate, Localizer};
use crate::wifinet::{ArchConfig, TrainConfig, TrainReport, WiFiNetModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    WiFiNet,
    Knn,
    Svm,
    SubKnn,
}

impl PredictorKind {
    pub const ALL: [PredictorKind; 4] = [
        PredictorKind::WiFiNet,
        PredictorKind::Knn,
        PredictorKind::Svm,
        PredictorKind::SubKnn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PredictorKind::WiFiNet => "wifinet",
            PredictorKind::Knn => "knn",
            PredictorKind::Svm => "svm",
            PredictorKind::SubKnn => "subknn",
        }
    }
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PredictorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PredictorKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown model {s:?} (wifinet|knn|svm|subknn)")))
    }
}

/// Hyperparameters for every predictor.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub wifinet: ArchConfig,
    pub train: TrainConfig,
    pub svm: SvmConfig,
    pub subknn: SubspaceConfig,
    /// Inputs of the classic baselines.
    pub features: FeatureMode,
}

/// A trained model of any kind.
#[derive(Debug, Clone)]
pub enum Trained {
    WiFiNet(WiFiNetModel),
    Knn(KnnModel),
    Svm(LinearSvmModel),
    SubKnn(SubspaceKnnModel),
}

impl Trained {
    /// Trains `kind` on `train`; the WiFiNet loss curve is returned alongside.
    pub fn fit(
        kind: PredictorKind,
        train: &Dataset,
        cfg: &ModelConfig,
    ) -> Result<(Self, Option<TrainReport>)> {
        Ok(match kind {
            PredictorKind::WiFiNet => {
                let (m, r) = WiFiNetModel::fit(train, &cfg.wifinet, &cfg.train)?;
                (Trained::WiFiNet(m), Some(r))
            }
            PredictorKind::Knn => (Trained::Knn(KnnModel::fit(train, cfg.features)?), None),
            PredictorKind::Svm => (
                Trained::Svm(LinearSvmModel::fit(train, cfg.features, &cfg.svm)?),
                None,
            ),
            PredictorKind::SubKnn => (
                Trained::SubKnn(SubspaceKnnModel::fit(train, cfg.features, &cfg.subknn)?),
                None,
            ),
        })
    }

    pub fn kind(&self) -> PredictorKind {
        match self {
            Trained::WiFiNet(_) => PredictorKind::WiFiNet,
            Trained::Knn(_) => PredictorKind::Knn,
            Trained::Svm(_) => PredictorKind::Svm,
            Trained::SubKnn(_) => PredictorKind::SubKnn,
        }
    }

    fn inner(&self) -> &dyn Localizer {
        match self {
            Trained::WiFiNet(m) => m,
            Trained::Knn(m) => m,
            Trained::Svm(m) => m,
            Trained::SubKnn(m) => m,
        }
    }

    pub fn directory(&self) -> Option<&ApDirectory> {
        match self {
            Trained::WiFiNet(m) => m.directory(),
            Trained::Knn(m) => m.directory(),
            Trained::Svm(m) => m.directory(),
            Trained::SubKnn(m) => m.directory(),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        match self {
            Trained::WiFiNet(m) => m.to_checkpoint(),
            Trained::Knn(m) => m.to_checkpoint(),
            Trained::Svm(m) => m.to_checkpoint(),
            Trained::SubKnn(m) => m.to_checkpoint(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        match ck.kind.as_str() {
            "wifinet" => Ok(Trained::WiFiNet(WiFiNetModel::from_checkpoint(ck)?)),
            "knn" => Ok(Trained::Knn(KnnModel::from_checkpoint(ck)?)),
            "svm" => Ok(Trained::Svm(LinearSvmModel::from_checkpoint(ck)?)),
            "subknn" => Ok(Trained::SubKnn(SubspaceKnnModel::from_checkpoint(ck)?)),
            other => Err(Error::Checkpoint(format!("unknown model kind {other:?}"))),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }
}

impl Localizer for Trained {
    fn name(&self) -> &str {
        self.kind().as_str()
    }

    fn class_table(&self) -> &ClassTable {
        self.inner().class_table()
    }

    fn side(&self) -> usize {
        self.inner().side()
    }

    fn predict_class(&self, img: &FingerprintImage) -> Result<usize> {
        self.inner().predict_class(img)
    }

    fn locate(&self, img: &FingerprintImage, sample: &RssSample) -> Result<Estimate> {
        self.inner().locate(img, sample)
    }
}
