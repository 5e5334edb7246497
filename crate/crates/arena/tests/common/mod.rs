#![allow(dead_code)]

use std::path::Path;

use maestro_arena::clock::ClockMode;
use maestro_arena::config::DatasetConfig;
use maestro_arena::setup::{gen_data, train_hidden};
use maestro_arena::{Arena, Config};
use maestro_core::train::TrainConfig;

/// A reduced desk setup that trains in well under a second.
pub fn small_config(dir: &Path) -> Config {
    let mut c = Config::desk(dir);
    c.dataset = DatasetConfig::Synthetic { n_train: 600, n_test: 200, num_classes: 10, dims: [12, 12, 1] };
    c.train = TrainConfig { epochs: 8, ..TrainConfig::default() };
    c.defense.train = c.train.clone();
    c.eval.n_samples = 40;
    c.ga.generations = 10;
    c.timing.clock = ClockMode::Frozen;
    c.timing.submission_timeout_s = 20.0;
    c
}

pub fn prepare(config: &Config) {
    gen_data(config).unwrap();
    train_hidden(config).unwrap();
}

pub fn arena(dir: &Path) -> Arena {
    let config = small_config(dir);
    prepare(&config);
    Arena::open(config).unwrap()
}

/// Writes an executable `sh` script into `dir`.
pub fn script(dir: &Path, name: &str, body: &str) -> String {
    use std::os::unix::fs::PermissionsExt;
    let path = dir.join(name);
    std::fs::write(&path, format!("#!/bin/sh\n{body}\n")).unwrap();
    std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
    path.display().to_string()
}
