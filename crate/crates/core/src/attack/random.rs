use super::{project, Attack, AttackBudget, AttackResult, Deadline};
use crate::model::argmax;
use crate::oracle::{Capability, Oracle};
use crate::rng::SplitMix64;
use crate::{Error, Result, Tensor};

/// Draws per prediction request.
const CHUNK: usize = 32;

/// Uniform random search in the ε-ball: up to `draws` candidates per sample,
/// stopping at the first misclassified one. Serves as the equal-query baseline
/// for the genetic attack.
pub fn random_search(oracle: &dyn Oracle, x: &Tensor, y: &[usize], epsilon: f32, draws: usize, seed: u64) -> Result<AttackResult> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Config(format!("epsilon must be in [0, 1], got {epsilon}")));
    }
    if y.len() != x.rows() {
        return Err(Error::Input(format!("{} images but {} labels", x.rows(), y.len())));
    }
    let deadline = Deadline::start(None);
    let (q0, g0) = (oracle.queries_used(), oracle.gradient_queries_used());
    let mut perturbed = x.clone();
    let mut success = vec![false; x.rows()];
    let mut exhausted = false;
    'samples: for (i, origin) in x.iter_rows().enumerate() {
        let mut rng = SplitMix64::derive(seed, i as u64);
        let mut left = draws;
        while left > 0 {
            let n = left.min(CHUNK);
            if oracle.remaining_queries().is_some_and(|r| r < n as u64) {
                exhausted = true;
                break 'samples;
            }
            let candidates: Vec<Vec<f32>> = (0..n)
                .map(|_| {
                    let mut c: Vec<f32> = origin.iter().map(|&o| o + rng.uniform(-epsilon, epsilon)).collect();
                    project(&mut c, origin, epsilon);
                    c
                })
                .collect();
            let probs = oracle.predict(&Tensor::from_rows(&candidates)?)?;
            if let Some(hit) = probs.iter_rows().position(|p| argmax(p) != y[i]) {
                perturbed.row_mut(i).copy_from_slice(&candidates[hit]);
                success[i] = true;
                continue 'samples;
            }
            left -= n;
        }
    }
    Ok(AttackResult {
        perturbed,
        per_sample_success: success,
        queries_used: oracle.queries_used() - q0,
        gradient_queries_used: oracle.gradient_queries_used() - g0,
        runtime_seconds: deadline.elapsed(),
        budget_exhausted: exhausted,
    })
}

#[derive(Debug, Clone)]
pub struct RandomSearch {
    pub budget: AttackBudget,
    pub draws: usize,
    pub seed: u64,
}

impl Attack for RandomSearch {
    fn name(&self) -> String {
        "random".into()
    }

    fn required_capability(&self) -> Capability {
        Capability::BlackBox
    }

    fn run(&self, oracle: &dyn Oracle, images: &Tensor, labels: &[usize]) -> Result<AttackResult> {
        random_search(oracle, images, labels, self.budget.epsilon, self.draws, self.seed)
    }
}
