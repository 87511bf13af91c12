//! On-disk model format: weights, feature map, prior parameters, a config
//! echo, and the final energy.

use std::path::Path;

use serde::{Deserialize, Serialize};

use spreadlearn::error::{Error, Result};
use spreadlearn::logreg::{FeatureMap, TrainedPrior};
use spreadlearn::prior::{DiscretePrior, GaussianPrior};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorFile {
    Discrete { tables: Vec<Vec<f64>> },
    Gaussian { means: Vec<f64>, variances: Vec<f64> },
    None,
}

impl From<&TrainedPrior> for PriorFile {
    fn from(p: &TrainedPrior) -> Self {
        match p {
            TrainedPrior::Discrete(d) => PriorFile::Discrete {
                tables: d.tables().to_vec(),
            },
            TrainedPrior::Gaussian(g) => PriorFile::Gaussian {
                means: g.means().to_vec(),
                variances: g.variances().to_vec(),
            },
            TrainedPrior::None => PriorFile::None,
        }
    }
}

impl PriorFile {
    pub fn to_trained(&self) -> Result<TrainedPrior> {
        Ok(match self {
            PriorFile::Discrete { tables } => {
                TrainedPrior::Discrete(DiscretePrior::from_weights(tables.clone(), 0.0)?)
            }
            PriorFile::Gaussian { means, variances } => {
                TrainedPrior::Gaussian(GaussianPrior::new(means.clone(), variances.clone())?)
            }
            PriorFile::None => TrainedPrior::None,
        })
    }
}

/// Echo of the settings the model was trained with.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub mode: String,
    pub prior: String,
    pub samples_per_point: usize,
    pub learning_rate: f64,
    pub max_outer_iters: usize,
    pub seed: u64,
    pub channels: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub weights: Vec<f64>,
    pub feature_map: FeatureMap,
    pub prior: PriorFile,
    /// Present when the model was trained on state data rescaled to [0, 1]
    /// (the Gaussian pipeline); eval rescales raw IDX input accordingly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states_to_unit: Option<usize>,
    pub config: ConfigEcho,
    pub final_energy: f64,
    pub iterations: usize,
}

impl ModelFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }
}
