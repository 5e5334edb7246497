//! Query-metered access to a hidden model.
//!
//! Every attack, in-process or external, reaches a hidden model only through an
//! [`Oracle`]. Prediction requests cost one query per sample and count against
//! the optional query budget; gradient requests are metered separately and are
//! refused by black-box oracles.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::model::ModelParams;
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    WhiteBox,
    BlackBox,
}

impl Capability {
    pub fn as_str(self) -> &'static str {
        match self {
            Capability::WhiteBox => "white_box",
            Capability::BlackBox => "black_box",
        }
    }
}

pub trait Oracle {
    fn capability(&self) -> Capability;

    fn num_classes(&self) -> usize;

    /// Softmax probabilities for each row. Costs one query per row.
    fn predict(&self, images: &Tensor) -> Result<Tensor>;

    /// Mean cross-entropy loss and its gradient with respect to the images.
    fn gradient(&self, images: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)>;

    /// Per-sample prediction queries served so far.
    fn queries_used(&self) -> u64;

    /// Per-sample gradient queries served so far.
    fn gradient_queries_used(&self) -> u64;

    fn query_budget(&self) -> Option<u64>;

    fn remaining_queries(&self) -> Option<u64> {
        self.query_budget().map(|b| b.saturating_sub(self.queries_used()))
    }
}

/// The judge-side oracle wrapping a hidden model.
#[derive(Debug)]
pub struct ModelOracle {
    target: Arc<ModelParams>,
    capability: Capability,
    query_budget: Option<u64>,
    predict_count: AtomicU64,
    gradient_count: AtomicU64,
}

impl ModelOracle {
    pub fn new(target: Arc<ModelParams>, capability: Capability, query_budget: Option<u64>) -> Self {
        Self {
            target,
            capability,
            query_budget,
            predict_count: AtomicU64::new(0),
            gradient_count: AtomicU64::new(0),
        }
    }

    pub fn white_box(target: Arc<ModelParams>) -> Self {
        Self::new(target, Capability::WhiteBox, None)
    }

    pub fn black_box(target: Arc<ModelParams>, query_budget: Option<u64>) -> Self {
        Self::new(target, Capability::BlackBox, query_budget)
    }

    /// The hidden model. Judge code uses this for unmetered evaluation; it is
    /// never handed to a submission.
    pub fn target(&self) -> &Arc<ModelParams> {
        &self.target
    }

    fn charge(&self, n: u64) -> Result<()> {
        match self.query_budget {
            None => {
                self.predict_count.fetch_add(n, Ordering::SeqCst);
                Ok(())
            }
            Some(budget) => self
                .predict_count
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |used| {
                    used.checked_add(n).filter(|&total| total <= budget)
                })
                .map(|_| ())
                .map_err(|used| Error::BudgetExhausted { used, budget, requested: n }),
        }
    }
}

impl Oracle for ModelOracle {
    fn capability(&self) -> Capability {
        self.capability
    }

    fn num_classes(&self) -> usize {
        self.target.num_classes()
    }

    fn predict(&self, images: &Tensor) -> Result<Tensor> {
        // Validate before charging so malformed requests cost nothing.
        let probs = self.target.predict_probs(images)?;
        self.charge(images.rows() as u64)?;
        Ok(probs)
    }

    fn gradient(&self, images: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
        if self.capability == Capability::BlackBox {
            return Err(Error::Capability("gradient requested from a black-box oracle".into()));
        }
        let out = self.target.loss_and_input_gradient(images, labels)?;
        self.gradient_count.fetch_add(images.rows() as u64, Ordering::SeqCst);
        Ok(out)
    }

    fn queries_used(&self) -> u64 {
        self.predict_count.load(Ordering::SeqCst)
    }

    fn gradient_queries_used(&self) -> u64 {
        self.gradient_count.load(Ordering::SeqCst)
    }

    fn query_budget(&self) -> Option<u64> {
        self.query_budget
    }
}
