use std::process::ExitCode;

use anyhow::Result;
use clap::Parser;

use reflex_core::harness::dataset::Target;
use reflex_core::par::ExecMode;
use reflex_gateway::cli::{Cli, Command, TrainArgs};
use reflex_gateway::commands;

fn train_one(cli: &Cli, target: Target, a: &TrainArgs) -> Result<()> {
    let cfg = commands::load_config(cli.config.as_deref())?;
    let tc = commands::train_config(&cfg, cli.seed, a.lr, a.epochs, a.l2, a.batch_size);
    let report = commands::train(target, &a.corpus, &a.out, &cfg, &tc, mode(cli))?;
    commands::print_training(&report);
    Ok(())
}

fn mode(cli: &Cli) -> ExecMode {
    if cli.sequential {
        ExecMode::Sequential
    } else {
        ExecMode::available()
    }
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::TrainBackchannel { train, forms_out } => {
            train_one(&cli, Target::BackchannelTiming, train)?;
            if let Some(dir) = forms_out {
                let cfg = commands::load_config(cli.config.as_deref())?;
                let tc = commands::train_config(&cfg, cli.seed, train.lr, train.epochs, train.l2, train.batch_size);
                for (label, r) in commands::train_form_models(&train.corpus, dir, &cfg, &tc, mode(&cli))? {
                    println!("form {label}: n_train {} held-out AUC {:.4}", r.n_train, r.heldout_auc);
                }
            }
        }
        Command::TrainTrp(a) => train_one(&cli, Target::Trp, a)?,
        Command::TrainTake(a) => train_one(&cli, Target::Take, a)?,
        Command::TrainEngagement(a) => train_one(&cli, Target::Engagement, a)?,
        Command::Replay { corpus, out } => {
            let cfg = commands::load_config(cli.config.as_deref())?;
            let r = commands::replay(corpus, out, cfg, mode(&cli))?;
            println!("{}", r.report.to_canonical_json());
        }
        Command::Eval {
            log,
            corpus,
            out,
            tolerance_ms,
            cutin_window_ms,
        } => {
            let report = commands::eval(log, corpus, *tolerance_ms, *cutin_window_ms)?;
            let text = report.to_canonical_json();
            if let Some(p) = out {
                std::fs::write(p, format!("{text}\n"))?;
            }
            println!("{text}");
        }
        Command::Generate {
            out,
            sessions,
            session_ms,
            spec,
        } => {
            let cfg = commands::load_config(cli.config.as_deref())?;
            let spec = commands::load_spec(spec.as_deref(), *session_ms)?;
            let seed = cli.seed.unwrap_or(cfg.seed);
            let summary = commands::generate(out, *sessions, seed, &spec, mode(&cli))?;
            println!("{summary}");
        }
        Command::Serve { host, port, ws_port } => {
            let cfg = commands::load_config(cli.config.as_deref())?;
            commands::serve(cfg, host, *port, *ws_port)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
