use super::{project, sign, Attack, AttackBudget, AttackResult, Deadline};
use crate::oracle::{Capability, Oracle};
use crate::rng::SplitMix64;
use crate::{Error, Result, Tensor};

fn require_white_box(oracle: &dyn Oracle, attack: &str) -> Result<()> {
    if oracle.capability() != Capability::WhiteBox {
        return Err(Error::Capability(format!("{attack} needs a white-box oracle")));
    }
    Ok(())
}

/// One signed-gradient step of size `step`, projected onto the ε-ball around
/// `origin` and the pixel box.
fn signed_step(current: &mut Tensor, grad: &Tensor, origin: &Tensor, step: f32, epsilon: f32) {
    let width = origin.row_len();
    for ((row, g), o) in current
        .data_mut()
        .chunks_exact_mut(width)
        .zip(grad.data().chunks_exact(width))
        .zip(origin.iter_rows())
    {
        for (v, &gv) in row.iter_mut().zip(g) {
            *v += step * sign(gv);
        }
        project(row, o, epsilon);
    }
}

/// Fast gradient sign method: `clip(x + ε·sign(∇ₓL))`, one gradient query per
/// sample.
pub fn fgsm(oracle: &dyn Oracle, x: &Tensor, y: &[usize], epsilon: f32) -> Result<AttackResult> {
    require_white_box(oracle, "FGSM")?;
    let deadline = Deadline::start(None);
    let (q0, g0) = (oracle.queries_used(), oracle.gradient_queries_used());
    let (_, grad) = oracle.gradient(x, y)?;
    let mut adv = x.clone();
    signed_step(&mut adv, &grad, x, epsilon, epsilon);
    Ok(AttackResult {
        perturbed: adv,
        per_sample_success: Vec::new(),
        queries_used: oracle.queries_used() - q0,
        gradient_queries_used: oracle.gradient_queries_used() - g0,
        runtime_seconds: deadline.elapsed(),
        budget_exhausted: false,
    })
}

/// Projected gradient descent on the L∞ ball.
///
/// With `random_start`, sample `i` starts from a uniform draw in its ε-ball
/// taken from the stream `(budget.seed, i)`. If the time budget runs out the
/// error carries the current iterate.
pub fn pgd(oracle: &dyn Oracle, x: &Tensor, y: &[usize], budget: &AttackBudget) -> Result<AttackResult> {
    require_white_box(oracle, "PGD")?;
    budget.validate()?;
    let deadline = Deadline::start(budget.time_budget);
    let (q0, g0) = (oracle.queries_used(), oracle.gradient_queries_used());
    let eps = budget.epsilon;
    let mut adv = x.clone();
    if budget.random_start {
        for (i, (row, origin)) in adv
            .data_mut()
            .chunks_exact_mut(x.row_len())
            .zip(x.iter_rows())
            .enumerate()
        {
            let mut rng = SplitMix64::derive(budget.seed, i as u64);
            for v in row.iter_mut() {
                *v += rng.uniform(-eps, eps);
            }
            project(row, origin, eps);
        }
    }
    let snapshot = |adv: &Tensor| AttackResult {
        perturbed: adv.clone(),
        per_sample_success: Vec::new(),
        queries_used: oracle.queries_used() - q0,
        gradient_queries_used: oracle.gradient_queries_used() - g0,
        runtime_seconds: deadline.elapsed(),
        budget_exhausted: false,
    };
    for t in 0..budget.iterations {
        if t > 0 && deadline.expired() {
            return Err(deadline.timeout(snapshot(&adv)));
        }
        let (_, grad) = oracle.gradient(&adv, y)?;
        signed_step(&mut adv, &grad, x, budget.step_size, eps);
    }
    Ok(snapshot(&adv))
}

#[derive(Debug, Clone)]
pub struct Fgsm {
    pub epsilon: f32,
}

impl Attack for Fgsm {
    fn name(&self) -> String {
        "fgsm".into()
    }

    fn required_capability(&self) -> Capability {
        Capability::WhiteBox
    }

    fn run(&self, oracle: &dyn Oracle, images: &Tensor, labels: &[usize]) -> Result<AttackResult> {
        fgsm(oracle, images, labels, self.epsilon)
    }
}

#[derive(Debug, Clone)]
pub struct Pgd {
    pub budget: AttackBudget,
}

impl Attack for Pgd {
    fn name(&self) -> String {
        "pgd".into()
    }

    fn required_capability(&self) -> Capability {
        Capability::WhiteBox
    }

    fn run(&self, oracle: &dyn Oracle, images: &Tensor, labels: &[usize]) -> Result<AttackResult> {
        pgd(oracle, images, labels, &self.budget)
    }
}
