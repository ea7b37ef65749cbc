mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command, PredictCommand, SpikeCommand, SsmcCommand};
use commands::{CliError, Outcome};

fn run(cli: &Cli) -> Result<Outcome, CliError> {
    if let Some(t) = cli.common.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let c = &cli.common;
    match &cli.command {
        Command::Gap(a) => commands::gap(c, a),
        Command::QuantumCost(a) => commands::quantum_cost(c, a),
        Command::Ssmc(SsmcCommand::Run(a)) => commands::ssmc_run(c, a),
        Command::Ssmc(SsmcCommand::Calibrate(a)) => commands::ssmc_calibrate(c, a),
        Command::Ssmc(SsmcCommand::Series(a)) => commands::ssmc_series(c, a),
        Command::Predict(PredictCommand::TbGap(a)) => commands::predict(c, a, "tb-gap"),
        Command::Predict(PredictCommand::Pr(a)) => commands::predict(c, a, "pr"),
        Command::Predict(PredictCommand::Dist(a)) => commands::predict_dist(c, a),
        Command::Spike(SpikeCommand::Gap(a)) => commands::spike_gap(c, a),
        Command::Spike(SpikeCommand::Ssmc(a)) => commands::spike_ssmc(c, a),
        Command::Spike(SpikeCommand::Compare(a)) => commands::spike_compare(c, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(Outcome { flagged: false }) => ExitCode::SUCCESS,
        Ok(Outcome { flagged: true }) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
