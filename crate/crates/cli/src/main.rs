use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Arg, ArgAction, ArgMatches, Command};
use otfs_core::sim::{
    run_experiment, snapshot, write_experiment, write_snapshot, ExperimentConfig, SweepAxis,
};

fn flag(key: &str) -> String {
    key.replace('_', "-")
}

/// Options shared by every verb. Each config key also becomes a flag.
fn common_args(cmd: Command) -> Command {
    let mut cmd = cmd
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .value_parser(clap::value_parser!(PathBuf))
                .help("TOML experiment file; flags override its values"),
        )
        .arg(
            Arg::new("out")
                .long("out")
                .value_name("DIR")
                .default_value("out")
                .value_parser(clap::value_parser!(PathBuf))
                .help("output directory"),
        );
    for key in ExperimentConfig::keys() {
        let long = flag(&key);
        let mut arg = Arg::new(key.clone())
            .long(long.clone())
            .value_name("VALUE")
            .action(ArgAction::Set)
            .help(format!("config key `{key}`"));
        if long != key {
            arg = arg.alias(key.clone());
        }
        cmd = cmd.arg(arg);
    }
    cmd
}

fn cli() -> Command {
    Command::new("otfs-sim")
        .about("OTFS timing and CFO synchronization experiments")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(common_args(
            Command::new("run").about("Run the experiment described by the config"),
        ))
        .subcommand(
            common_args(Command::new("snapshot").about("Write the metric traces of one trial")).arg(
                Arg::new("trial")
                    .long("trial")
                    .value_name("INDEX")
                    .default_value("0")
                    .value_parser(clap::value_parser!(u64))
                    .help("trial index within the seed"),
            ),
        )
        .subcommand(common_args(
            Command::new("sweep").about("Run every geometry over the sweep axis; needs --sweep"),
        ))
}

fn resolve(m: &ArgMatches) -> Result<ExperimentConfig> {
    let base = match m.get_one::<PathBuf>("config") {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let pairs: Vec<(String, String)> = ExperimentConfig::keys()
        .into_iter()
        .filter_map(|k| m.get_one::<String>(&k).map(|v| (k, v.clone())))
        .collect();
    Ok(base.with_overrides(&pairs)?)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let matches = cli().get_matches();
    let (verb, m) = matches.subcommand().expect("a subcommand is required");
    let cfg = resolve(m)?;
    let out = m.get_one::<PathBuf>("out").expect("has a default").clone();
    let files = match verb {
        "run" | "sweep" => {
            if verb == "sweep" && cfg.sweep == SweepAxis::None {
                bail!("sweep needs an axis: pass --sweep snr or --sweep nu_max_t");
            }
            let tables = run_experiment(&cfg)?;
            write_experiment(&cfg, &tables, &out)?
        }
        "snapshot" => {
            let trial = *m.get_one::<u64>("trial").expect("has a default");
            let (scn, trace) = snapshot(&cfg, trial).context("snapshot failed")?;
            log::info!(
                "theta {} -> {}, eps {:.4} -> coarse {:.4}, fine {:.4}",
                trace.result.theta_true,
                trace.result.theta_hat,
                trace.result.eps_true,
                trace.result.eps_coarse,
                trace.result.eps_fine
            );
            write_snapshot(&cfg, &scn, &trace, &out)?
        }
        other => unreachable!("unknown verb {other}"),
    };
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}
