//! Command implementations behind the `gramspai` binary.

pub mod args;
pub mod bench;
pub mod commands;
pub mod heat;
pub mod run;

use args::Command;
use run::{CliResult, Context};

pub fn dispatch(command: &Command, ctx: &Context) -> CliResult<serde_json::Value> {
    match command {
        Command::Generate(a) => commands::generate(a, ctx),
        Command::Gramian(a) => commands::gramian(a, ctx),
        Command::Invert(a) => commands::invert(a, ctx),
        Command::Estimator(a) => commands::estimator(a, ctx),
        Command::Simulate(a) => commands::simulate_cmd(a, ctx),
        Command::Estimate(a) => commands::estimate(a, ctx),
        Command::Control(a) => commands::control(a, ctx),
        Command::BenchmarkScaling(a) => bench::benchmark_scaling(a, ctx),
        Command::ReproduceHeat(a) => heat::reproduce_heat(a, ctx),
    }
}
