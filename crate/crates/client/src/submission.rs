//! Reference submissions speaking the line protocol, used to check that a
//! method run through the judge's sandbox scores like the same method run
//! in-process.

use std::io::{self, BufRead, Write};
use std::path::Path;

use maestro_arena::protocol::{ClientMessage, ServerMessage};
use maestro_core::attack::Attack;
use maestro_core::data::load_idx;
use maestro_core::defense::{adversarial_train, DefenseConfig};
use maestro_core::oracle::Capability;
use maestro_core::weights::save_weights;
use maestro_core::{Error, Result, Tensor};

use crate::session::{RemoteOracle, Session};

fn protocol_error(what: &str, got: &ServerMessage) -> Error {
    Error::Io(io::Error::new(io::ErrorKind::InvalidData, format!("expected {what}, got {got:?}")))
}

/// Reads an attack task, runs the attack built by `build(epsilon,
/// query_budget)` against the judge's oracle and sends the perturbed images.
pub fn run_attack<R, W, F>(session: &mut Session<R, W>, capability: Capability, build: F) -> Result<()>
where
    R: BufRead,
    W: Write,
    F: FnOnce(f32, Option<u64>) -> Box<dyn Attack>,
{
    let (images, labels, epsilon, query_budget) = match session.receive()? {
        ServerMessage::AttackTask { images, labels, epsilon, query_budget } => (images, labels, epsilon, query_budget),
        other => return Err(protocol_error("an attack task", &other)),
    };
    let x = Tensor::from_rows(&images)?;
    let attack = build(epsilon, query_budget);
    let result = {
        let oracle = RemoteOracle::new(session, capability, query_budget);
        attack.run(&oracle, &x, &labels)?
    };
    session.send(&ClientMessage::Result { perturbed: Some(result.perturbed.to_rows()), weights: None })?;
    Ok(())
}

/// Reads a defense task, hardens the model with adversarial training at the
/// task's ε and writes the weights where the judge asked.
pub fn run_defense<R: BufRead, W: Write>(session: &mut Session<R, W>, base: &DefenseConfig) -> Result<()> {
    let (train_images, train_labels, model_spec, train, epsilon, weights_path) = match session.receive()? {
        ServerMessage::DefenseTask { train_images, train_labels, model_spec, train, epsilon, weights_path } => {
            (train_images, train_labels, model_spec, train, epsilon, weights_path)
        }
        other => return Err(protocol_error("a defense task", &other)),
    };
    let data = load_idx(Path::new(&train_images), Path::new(&train_labels))?;
    let mut cfg = base.clone();
    cfg.train = train;
    cfg.inner_budget.epsilon = epsilon;
    let hardened = adversarial_train(&model_spec, &data, &cfg)?;
    save_weights(&hardened.params, Path::new(&weights_path))?;
    session.send(&ClientMessage::Result { perturbed: None, weights: Some(weights_path) })?;
    Ok(())
}
