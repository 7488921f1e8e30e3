//! Command-line front end: single runs, parameter sweeps, mode comparisons
//! and the standalone transmit-policy MDP solver.

use clap::{Args, Parser, Subcommand};
use statuslink::sim::config::{ConfigError, ScenarioConfig};
use statuslink::sim::metrics::{summarize, Metrics};
use statuslink::smart::{error_chain_mdp, index_of_state, solve_decoupled};
use statuslink::{replicate, run_with_traces};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "statuslink", version, about = "Predictive status-update co-simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// key=value configuration file; defaults apply for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Inline overrides applied after the file, e.g. --set delta=0.2.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Comma-separated replication seeds.
    #[arg(long, default_value = "0", value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario; writes metrics.json, config.txt and trace CSVs.
    Run {
        #[command(flatten)]
        common: CommonOpts,
        /// Skip the per-slot trace CSVs (metrics only).
        #[arg(long)]
        no_traces: bool,
    },
    /// Sweep one configuration key over a list of values.
    Sweep {
        #[command(flatten)]
        common: CommonOpts,
        /// Configuration key to sweep.
        #[arg(long)]
        param: String,
        /// Comma-separated values for the swept key.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
    },
    /// Run all four modes on the same scenario and tabulate the results.
    Compare {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Solve the random-walk error-chain MDP for the transmit policy.
    SolveMdp {
        /// Number of error states.
        #[arg(long, default_value_t = 10)]
        states: usize,
        /// Upward drift probability of the silent action.
        #[arg(long, default_value_t = 0.5)]
        p_up: f64,
        /// Auxiliary transmission cost.
        #[arg(long, default_value_t = 0.5)]
        m: f64,
        /// Also report the index of this state over the m grid.
        #[arg(long)]
        index_state: Option<usize>,
        #[arg(long, default_value_t = 0.1)]
        m_min: f64,
        #[arg(long, default_value_t = 0.1)]
        m_int: f64,
        #[arg(long, default_value_t = 2.0)]
        m_max: f64,
    },
}

fn load_config(common: &CommonOpts) -> Result<ScenarioConfig, ConfigError> {
    let mut cfg = ScenarioConfig::default();
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path).map_err(|e| {
            ConfigError::Invariant(format!("cannot read {}: {e}", path.display()))
        })?;
        cfg.apply_kv(&text)?;
    }
    for kv in &common.sets {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| ConfigError::MalformedLine(kv.clone()))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_out(dir: &Path) -> std::io::Result<()> {
    fs::create_dir_all(dir)
}

fn write_seed_metrics(dir: &Path, results: &[(u64, Metrics)]) -> std::io::Result<()> {
    // metrics.json carries the first seed's full record plus the spread of
    // the headline numbers across seeds.
    let reductions: Vec<f64> = results.iter().map(|(_, m)| m.max_gap_reduction).collect();
    let ota: Vec<f64> = results.iter().map(|(_, m)| m.ota_status_packets as f64).collect();
    let doc = serde_json::json!({
        "seeds": results.iter().map(|(s, _)| *s).collect::<Vec<_>>(),
        "max_gap_reduction": summarize(&reductions),
        "ota_status_packets": summarize(&ota),
        "runs": results.iter().map(|(_, m)| m).collect::<Vec<_>>(),
    });
    fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&doc)?)
}

fn cmd_run(common: &CommonOpts, no_traces: bool) -> Result<(), std::io::Error> {
    let cfg = match load_config(common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("configuration error: {e}");
            std::process::exit(EXIT_CONFIG as i32);
        }
    };
    ensure_out(&common.out)?;
    fs::write(common.out.join("config.txt"), cfg.to_kv())?;
    let results = replicate(&cfg, &common.seeds);
    write_seed_metrics(&common.out, &results)?;
    if !no_traces {
        let mut first = cfg.clone();
        first.seed = *common.seeds.iter().min().unwrap_or(&cfg.seed);
        let (_, traces) = run_with_traces(&first);
        traces.write_all(&common.out)?;
    }
    for (seed, m) in &results {
        println!(
            "seed {seed}: max_reduction={:.3} m, min_gap={:.3} m, ota={}, crashed={}",
            m.max_gap_reduction, m.min_gap, m.ota_status_packets, m.crashed
        );
    }
    Ok(())
}

fn cmd_sweep(common: &CommonOpts, param: &str, values: &[String]) -> Result<(), std::io::Error> {
    let base = match load_config(common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("configuration error: {e}");
            std::process::exit(EXIT_CONFIG as i32);
        }
    };
    ensure_out(&common.out)?;
    let mut w = csv::Writer::from_path(common.out.join("sweep.csv"))?;
    w.write_record([
        param,
        "max_gap_reduction_mean",
        "max_gap_reduction_min",
        "max_gap_reduction_max",
        "ota_status_packets_mean",
        "mean_aoi_mean",
        "crashed_any",
    ])?;
    for value in values {
        let mut cfg = base.clone();
        if let Err(e) = cfg.set(param, value).and_then(|_| cfg.validate()) {
            eprintln!("configuration error at {param}={value}: {e}");
            std::process::exit(EXIT_CONFIG as i32);
        }
        let results = replicate(&cfg, &common.seeds);
        let red: Vec<f64> = results.iter().map(|(_, m)| m.max_gap_reduction).collect();
        let ota: Vec<f64> =
            results.iter().map(|(_, m)| m.ota_status_packets as f64).collect();
        let aoi: Vec<f64> = results.iter().map(|(_, m)| m.mean_aoi).collect();
        let crashed = results.iter().any(|(_, m)| m.crashed);
        let rs = summarize(&red);
        w.write_record([
            value.clone(),
            format!("{:.6}", rs.mean),
            format!("{:.6}", rs.min),
            format!("{:.6}", rs.max),
            format!("{:.3}", summarize(&ota).mean),
            format!("{:.3}", summarize(&aoi).mean),
            crashed.to_string(),
        ])?;
        println!("{param}={value}: reduction mean {:.3} m", rs.mean);
    }
    w.flush()?;
    Ok(())
}

fn cmd_compare(common: &CommonOpts) -> Result<(), std::io::Error> {
    let base = match load_config(common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("configuration error: {e}");
            std::process::exit(EXIT_CONFIG as i32);
        }
    };
    ensure_out(&common.out)?;
    let modes = ["parallel", "parallel_no_correction", "status_unaware", "smart"];
    let mut w = csv::Writer::from_path(common.out.join("compare.csv"))?;
    w.write_record([
        "mode",
        "max_gap_reduction_mean",
        "ota_status_packets_mean",
        "mean_aoi_mean",
        "recovery_mae_mean",
        "crashed_any",
    ])?;
    for mode in modes {
        let mut cfg = base.clone();
        cfg.set("mode", mode).expect("known mode");
        let results = replicate(&cfg, &common.seeds);
        let red: Vec<f64> = results.iter().map(|(_, m)| m.max_gap_reduction).collect();
        let ota: Vec<f64> =
            results.iter().map(|(_, m)| m.ota_status_packets as f64).collect();
        let aoi: Vec<f64> = results.iter().map(|(_, m)| m.mean_aoi).collect();
        let mae: Vec<f64> = results.iter().map(|(_, m)| m.recovery_mae).collect();
        let crashed = results.iter().any(|(_, m)| m.crashed);
        w.write_record([
            mode.to_string(),
            format!("{:.6}", summarize(&red).mean),
            format!("{:.3}", summarize(&ota).mean),
            format!("{:.3}", summarize(&aoi).mean),
            format!("{:.6}", summarize(&mae).mean),
            crashed.to_string(),
        ])?;
        println!(
            "{mode}: reduction {:.3} m, ota {:.0}",
            summarize(&red).mean,
            summarize(&ota).mean
        );
    }
    w.flush()?;
    Ok(())
}

fn cmd_solve_mdp(
    states: usize,
    p_up: f64,
    m: f64,
    index_state: Option<usize>,
    m_min: f64,
    m_int: f64,
    m_max: f64,
) -> Result<(), std::io::Error> {
    if states < 2 || !(0.0..=1.0).contains(&p_up) || m < 0.0 {
        eprintln!("configuration error: need states >= 2, p_up in [0,1], m >= 0");
        std::process::exit(EXIT_CONFIG as i32);
    }
    let mdp = error_chain_mdp(states, p_up, m);
    let sol = match solve_decoupled(&mdp) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("solver error: {e}");
            std::process::exit(EXIT_CONFIG as i32);
        }
    };
    let index = match index_state {
        Some(s) if s < states => {
            Some(index_of_state(&mdp, s, m_min, m_int, m_max).map_err(|e| {
                std::io::Error::other(e.to_string())
            })?)
        }
        Some(_) => {
            eprintln!("configuration error: index_state out of range");
            std::process::exit(EXIT_CONFIG as i32);
        }
        None => None,
    };
    let doc = serde_json::json!({
        "states": states,
        "p_up": p_up,
        "aux_cost": m,
        "average_cost": sol.average_cost,
        "sweeps": sol.sweeps,
        "policy": sol.policy,
        "values": sol.values,
        "index": index,
    });
    println!("{}", serde_json::to_string_pretty(&doc)?);
    Ok(())
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("STATUSLINK_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { common, no_traces } => cmd_run(common, *no_traces),
        Command::Sweep { common, param, values } => cmd_sweep(common, param, values),
        Command::Compare { common } => cmd_compare(common),
        Command::SolveMdp { states, p_up, m, index_state, m_min, m_int, m_max } => {
            cmd_solve_mdp(*states, *p_up, *m, *index_state, *m_min, *m_int, *m_max)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("io error: {e}");
            ExitCode::from(EXIT_IO)
        }
    }
}
