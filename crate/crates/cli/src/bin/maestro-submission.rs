//! `maestro-submission`: reference methods packaged as an external
//! submission. The judge starts it with the task on stdin.

use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use maestro_client::submission::{run_attack, run_defense};
use maestro_client::Session;
use maestro_core::attack::{Attack, AttackBudget, Fgsm, GaConfig, Genetic, Identity, Pgd, RandomSearch};
use maestro_core::defense::{DefenseConfig, InnerAttack};
use maestro_core::oracle::Capability;

#[derive(Debug, Parser)]
#[command(name = "maestro-submission", version, about = "Reference attack and defense speaking the judge protocol")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Method {
    Fgsm,
    Pgd,
    Ga,
    Random,
    Identity,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Inner {
    Fgsm,
    Pgd,
}

#[derive(Debug, Subcommand)]
enum Command {
    Attack {
        method: Method,
        /// Must match what the submission was granted.
        #[arg(long)]
        white_box: bool,
        #[arg(long, default_value_t = 0.05)]
        alpha: f32,
        #[arg(long, default_value_t = 10)]
        iterations: usize,
        #[arg(long)]
        random_start: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        population: usize,
        #[arg(long, default_value_t = 30)]
        generations: usize,
    },
    Defense {
        #[arg(long, value_enum, default_value = "pgd")]
        inner: Inner,
        #[arg(long, default_value_t = 0.5)]
        mix_ratio: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut session = Session::stdio();
    let outcome = match cli.command {
        Command::Attack { method, white_box, alpha, iterations, random_start, seed, population, generations } => {
            let capability = if white_box { Capability::WhiteBox } else { Capability::BlackBox };
            run_attack(&mut session, capability, |epsilon, query_budget| {
                let budget =
                    AttackBudget { epsilon, step_size: alpha, iterations, query_budget, random_start, seed, ..AttackBudget::default() };
                let ga = GaConfig { population, generations, seed, ..GaConfig::default() };
                let attack: Box<dyn Attack> = match method {
                    Method::Fgsm => Box::new(Fgsm { epsilon }),
                    Method::Pgd => Box::new(Pgd { budget }),
                    Method::Ga => Box::new(Genetic { budget, config: ga }),
                    Method::Random => Box::new(RandomSearch { budget, draws: population * generations, seed }),
                    Method::Identity => Box::new(Identity),
                };
                attack
            })
        }
        Command::Defense { inner, mix_ratio } => {
            let inner_attack = match inner {
                Inner::Fgsm => InnerAttack::Fgsm,
                Inner::Pgd => InnerAttack::Pgd,
            };
            run_defense(&mut session, &DefenseConfig { inner_attack, mix_ratio, ..DefenseConfig::default() })
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("maestro-submission: {e}");
            ExitCode::FAILURE
        }
    }
}
