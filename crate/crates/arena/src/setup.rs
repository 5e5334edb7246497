//! Operator-side preparation: datasets and hidden models on disk.

use std::path::{Path, PathBuf};

use maestro_core::data::{gen_synthetic, load_idx, write_idx, Dataset};
use maestro_core::model::{ModelParams, ModelSpec};
use maestro_core::train::{sgd_train, TrainConfig};
use maestro_core::weights::{load_weights, save_weights};
use serde::Serialize;

use crate::config::{Config, DatasetConfig};
use crate::{ArenaError, Result};

/// Files under the data directory.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn train_images(&self) -> PathBuf {
        self.root.join("data").join("train-images.idx")
    }

    pub fn train_labels(&self) -> PathBuf {
        self.root.join("data").join("train-labels.idx")
    }

    pub fn test_images(&self) -> PathBuf {
        self.root.join("data").join("test-images.idx")
    }

    pub fn test_labels(&self) -> PathBuf {
        self.root.join("data").join("test-labels.idx")
    }

    pub fn hidden_model(&self, index: usize) -> PathBuf {
        self.root.join("hidden").join(format!("model-{index}.maes"))
    }

    pub fn store(&self) -> PathBuf {
        self.root.join("store")
    }

    pub fn weights(&self, submission: u64) -> PathBuf {
        self.root.join("weights").join(format!("{submission}.maes"))
    }

    pub fn scratch(&self, submission: u64) -> PathBuf {
        self.root.join("scratch").join(submission.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataSummary {
    pub n_train: usize,
    pub n_test: usize,
    pub dims: [usize; 3],
    pub num_classes: usize,
}

fn operator<E: std::fmt::Display>(what: &str) -> impl FnOnce(E) -> ArenaError + '_ {
    move |e| ArenaError::Operator(format!("{what}: {e}"))
}

/// Materializes the configured dataset as IDX files under the data directory.
///
/// Synthetic train and test splits come from one generator call so they share
/// class templates.
pub fn gen_data(config: &Config) -> Result<DataSummary> {
    let layout = Layout::new(&config.data_dir);
    std::fs::create_dir_all(layout.root().join("data"))?;
    let (train, test) = match &config.dataset {
        DatasetConfig::Synthetic { n_train, n_test, num_classes, dims } => {
            let all = gen_synthetic(config.seed, n_train + n_test, *num_classes, *dims)?;
            all.split_at(*n_train)?
        }
        DatasetConfig::Idx { train_images, train_labels, test_images, test_labels, .. } => (
            load_idx(train_images, train_labels).map_err(operator("training set"))?,
            load_idx(test_images, test_labels).map_err(operator("test set"))?,
        ),
    };
    write_idx(&train, &layout.train_images(), &layout.train_labels())?;
    write_idx(&test, &layout.test_images(), &layout.test_labels())?;
    Ok(DataSummary { n_train: train.len(), n_test: test.len(), dims: train.dims, num_classes: config.dataset.num_classes() })
}

pub fn load_train(config: &Config) -> Result<Dataset> {
    let layout = Layout::new(&config.data_dir);
    load_idx(&layout.train_images(), &layout.train_labels()).map_err(operator("training set missing; run gen-data"))
}

pub fn load_test(config: &Config) -> Result<Dataset> {
    let layout = Layout::new(&config.data_dir);
    load_idx(&layout.test_images(), &layout.test_labels()).map_err(operator("test set missing; run gen-data"))
}

pub fn check_labels(data: &Dataset, num_classes: usize) -> Result<()> {
    match data.labels.iter().find(|&&l| l >= num_classes) {
        Some(l) => Err(ArenaError::Operator(format!("label {l} out of range for {num_classes} classes"))),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HiddenSummary {
    pub index: usize,
    pub seed: u64,
    pub path: PathBuf,
    pub test_accuracy: f64,
}

/// Seed of hidden model `index`.
pub fn hidden_seed(config: &Config, index: usize) -> u64 {
    config.train.seed.wrapping_add(index as u64)
}

/// Trains every hidden model on the training split and saves its weights.
pub fn train_hidden(config: &Config) -> Result<Vec<HiddenSummary>> {
    let train = load_train(config)?;
    let test = load_test(config)?;
    check_labels(&train, config.dataset.num_classes())?;
    let spec = config.model_spec(train.dims);
    let layout = Layout::new(&config.data_dir);
    std::fs::create_dir_all(layout.root().join("hidden"))?;
    (0..config.hidden_models)
        .map(|index| {
            let seed = hidden_seed(config, index);
            let params = sgd_train(&spec, &train, &TrainConfig { seed, ..config.train.clone() })?;
            let path = layout.hidden_model(index);
            save_weights(&params, &path)?;
            Ok(HiddenSummary { index, seed, test_accuracy: params.accuracy(&test)?, path })
        })
        .collect()
}

pub fn load_hidden(config: &Config, spec: &ModelSpec) -> Result<Vec<ModelParams>> {
    let layout = Layout::new(&config.data_dir);
    (0..config.hidden_models)
        .map(|i| {
            let path = layout.hidden_model(i);
            load_weights(&path, spec).map_err(|e| ArenaError::Operator(format!("hidden model {}: {e}; run train-hidden", path.display())))
        })
        .collect()
}
