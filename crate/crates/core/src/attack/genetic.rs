//! Black-box genetic attack.
//!
//! Per sample, a population of candidate images inside the ε-ball evolves under
//! the fitness `margin(x') − λ·‖x − x'‖₂`, where `margin` is the largest wrong-
//! class probability minus the true-class probability. Selection is binary
//! tournament, recombination is uniform crossover, mutation is additive
//! Gaussian noise, and the best individual always survives. Only prediction
//! queries are used.

use serde::{Deserialize, Serialize};

use super::{l2_distance, project, Attack, AttackBudget, AttackResult, Deadline};
use crate::model::argmax;
use crate::oracle::{Capability, Oracle};
use crate::rng::SplitMix64;
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    /// Mutation standard deviation σ; `None` means `0.05·ε`.
    pub mutation_scale: Option<f32>,
    pub crossover_rate: f64,
    /// Stealth weight λ on the L2 distance.
    pub stealth_weight: f64,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 20,
            generations: 30,
            mutation_scale: None,
            crossover_rate: 0.7,
            stealth_weight: 0.1,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::Config(format!("population must be >= 2, got {}", self.population)));
        }
        if self.generations == 0 {
            return Err(Error::Config("generations must be >= 1".into()));
        }
        if !(self.stealth_weight >= 0.0) {
            return Err(Error::Config(format!("stealth_weight must be >= 0, got {}", self.stealth_weight)));
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) {
            return Err(Error::Config(format!("crossover_rate must be in [0, 1], got {}", self.crossover_rate)));
        }
        if let Some(s) = self.mutation_scale {
            if !(s >= 0.0) {
                return Err(Error::Config(format!("mutation_scale must be >= 0, got {s}")));
            }
        }
        Ok(())
    }

    pub fn sigma(&self, epsilon: f32) -> f32 {
        self.mutation_scale.unwrap_or(0.05 * epsilon)
    }
}

/// `max_{j≠y} p_j − p_y`.
pub(crate) fn margin(probs: &[f32], label: usize) -> f64 {
    let best_other = probs
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != label)
        .map(|(_, &p)| p)
        .fold(f32::NEG_INFINITY, f32::max);
    best_other as f64 - probs[label] as f64
}

struct Scored {
    fitness: Vec<f64>,
    success: Vec<bool>,
}

enum SampleOutcome {
    Done { image: Vec<f32>, success: bool },
    Exhausted { image: Vec<f32>, success: bool },
}

struct SampleSearch<'a> {
    oracle: &'a dyn Oracle,
    origin: &'a [f32],
    label: usize,
    epsilon: f32,
    sigma: f32,
    cfg: &'a GaConfig,
    deadline: &'a Deadline,
}

impl SampleSearch<'_> {
    fn score(&self, population: &[Vec<f32>]) -> Result<Option<Scored>> {
        if let Some(remaining) = self.oracle.remaining_queries() {
            if remaining < population.len() as u64 {
                return Ok(None);
            }
        }
        let batch = Tensor::from_rows(population)?;
        let probs = match self.oracle.predict(&batch) {
            Ok(p) => p,
            Err(Error::BudgetExhausted { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let mut fitness = Vec::with_capacity(population.len());
        let mut success = Vec::with_capacity(population.len());
        for (row, individual) in probs.iter_rows().zip(population) {
            fitness.push(margin(row, self.label) - self.cfg.stealth_weight * l2_distance(self.origin, individual));
            success.push(argmax(row) != self.label);
        }
        Ok(Some(Scored { fitness, success }))
    }

    fn random_member(&self, rng: &mut SplitMix64) -> Vec<f32> {
        let mut v: Vec<f32> = self.origin.iter().map(|&o| o + rng.uniform(-self.epsilon, self.epsilon)).collect();
        project(&mut v, self.origin, self.epsilon);
        v
    }

    fn tournament(rng: &mut SplitMix64, fitness: &[f64]) -> usize {
        let a = rng.below(fitness.len());
        let b = rng.below(fitness.len());
        if fitness[b] > fitness[a] {
            b
        } else {
            a
        }
    }

    /// Index of the fittest individual, preferring successful ones.
    fn best(scored: &Scored) -> usize {
        let mut best = 0;
        for i in 1..scored.fitness.len() {
            let better = match (scored.success[i], scored.success[best]) {
                (true, false) => true,
                (false, true) => false,
                _ => scored.fitness[i] > scored.fitness[best],
            };
            if better {
                best = i;
            }
        }
        best
    }

    fn run(&self, rng: &mut SplitMix64) -> Result<SampleOutcome> {
        let p = self.cfg.population;
        let mut population: Vec<Vec<f32>> = (0..p).map(|_| self.random_member(rng)).collect();
        let Some(mut scored) = self.score(&population)? else {
            return Ok(SampleOutcome::Exhausted { image: self.origin.to_vec(), success: false });
        };
        for _generation in 1..self.cfg.generations {
            let elite = Self::best(&scored);
            if scored.success[elite] {
                break;
            }
            if self.deadline.expired() {
                return Err(Error::Timeout { budget_seconds: 0.0, partial: None });
            }
            let mut children = Vec::with_capacity(p - 1);
            while children.len() < p - 1 {
                let a = &population[Self::tournament(rng, &scored.fitness)];
                let b = &population[Self::tournament(rng, &scored.fitness)];
                let mut child: Vec<f32> = if rng.bernoulli(self.cfg.crossover_rate) {
                    a.iter().zip(b).map(|(&ga, &gb)| if rng.bernoulli(0.5) { ga } else { gb }).collect()
                } else {
                    a.clone()
                };
                for g in child.iter_mut() {
                    *g += self.sigma * rng.normal() as f32;
                }
                project(&mut child, self.origin, self.epsilon);
                children.push(child);
            }
            let Some(child_scores) = self.score(&children)? else {
                let elite = Self::best(&scored);
                return Ok(SampleOutcome::Exhausted {
                    image: population.swap_remove(elite),
                    success: scored.success[elite],
                });
            };
            let elite_individual = population.swap_remove(elite);
            let (elite_fit, elite_ok) = (scored.fitness[elite], scored.success[elite]);
            population = std::iter::once(elite_individual).chain(children).collect();
            scored = Scored {
                fitness: std::iter::once(elite_fit).chain(child_scores.fitness).collect(),
                success: std::iter::once(elite_ok).chain(child_scores.success).collect(),
            };
        }
        let best = Self::best(&scored);
        Ok(SampleOutcome::Done { success: scored.success[best], image: population.swap_remove(best) })
    }
}

/// Genetic black-box attack. Never requests gradients.
///
/// Generation 0 costs `P` queries; every later generation re-scores only the
/// `P − 1` children. The search for a sample stops at the first generation
/// containing a misclassified individual. When the query budget cannot cover a
/// generation, the attack returns the best image found so far (and the
/// unperturbed image for samples not yet started) with `budget_exhausted` set.
pub fn ga_attack(oracle: &dyn Oracle, x: &Tensor, y: &[usize], budget: &AttackBudget, cfg: &GaConfig) -> Result<AttackResult> {
    cfg.validate()?;
    if !(0.0..=1.0).contains(&budget.epsilon) {
        return Err(Error::Config(format!("epsilon must be in [0, 1], got {}", budget.epsilon)));
    }
    if y.len() != x.rows() {
        return Err(Error::Input(format!("{} images but {} labels", x.rows(), y.len())));
    }
    let deadline = Deadline::start(budget.time_budget);
    let (q0, g0) = (oracle.queries_used(), oracle.gradient_queries_used());
    let mut perturbed = x.clone();
    let mut success = vec![false; x.rows()];
    let mut exhausted = false;
    for (i, origin) in x.iter_rows().enumerate() {
        if exhausted {
            break;
        }
        let search = SampleSearch {
            oracle,
            origin,
            label: y[i],
            epsilon: budget.epsilon,
            sigma: cfg.sigma(budget.epsilon),
            cfg,
            deadline: &deadline,
        };
        let mut rng = SplitMix64::derive(cfg.seed, i as u64);
        let outcome = match search.run(&mut rng) {
            Err(Error::Timeout { .. }) => {
                let partial = AttackResult {
                    perturbed: perturbed.clone(),
                    per_sample_success: success.clone(),
                    queries_used: oracle.queries_used() - q0,
                    gradient_queries_used: oracle.gradient_queries_used() - g0,
                    runtime_seconds: deadline.elapsed(),
                    budget_exhausted: false,
                };
                return Err(deadline.timeout(partial));
            }
            other => other?,
        };
        let (image, ok) = match outcome {
            SampleOutcome::Done { image, success } => (image, success),
            SampleOutcome::Exhausted { image, success } => {
                exhausted = true;
                (image, success)
            }
        };
        perturbed.row_mut(i).copy_from_slice(&image);
        success[i] = ok;
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
pub struct Genetic {
    pub budget: AttackBudget,
    pub config: GaConfig,
}

impl Attack for Genetic {
    fn name(&self) -> String {
        "ga".into()
    }

    fn required_capability(&self) -> Capability {
        Capability::BlackBox
    }

    fn run(&self, oracle: &dyn Oracle, images: &Tensor, labels: &[usize]) -> Result<AttackResult> {
        ga_attack(oracle, images, labels, &self.budget, &self.config)
    }
}
