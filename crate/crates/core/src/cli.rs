//! Command-line front end: trace generation, single runs, policy comparisons
//! and the DP oracle.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::config::{pretty, write_atomic, ConfigError, Paths, RunConfig, Workload, RUN_CONFIG_KEYS};
use crate::model::ClusterSpec;
use crate::oracle::{check_basic, check_gpu, OracleReport};
use crate::sim::{measured_active_ratio, run, Policy, Summary};

#[derive(Debug, Parser)]
#[command(name = "actsched", version, about = "Elastic action scheduling simulator", after_help = config_help())]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a synthetic trace from generator parameters.
    GenTrace {
        /// Generator parameters (TOML).
        #[arg(long)]
        gen: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Trace file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay one workload under one policy and write its outputs.
    #[command(after_help = config_help())]
    Simulate(RunArgs),
    /// Replay workloads under several policies and tabulate mean ACT ratios.
    #[command(after_help = config_help())]
    Compare(RunArgs),
    /// Check the allocation DP against exhaustive search.
    Oracle {
        /// Flat-pool instances.
        #[arg(long)]
        dp: bool,
        /// GPU chunk instances checked against exhaustive placement.
        #[arg(long)]
        gpu: bool,
        #[arg(long, default_value_t = 500)]
        instances: usize,
        #[arg(long, default_value_t = 4)]
        max_tasks: usize,
        #[arg(long, default_value_t = 16)]
        max_units: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Flags shared by `simulate` and `compare`; each overrides the matching
/// key of `--config`.
#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// Run configuration file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub cluster: Option<PathBuf>,
    /// Trace file; repeat to compare several workloads.
    #[arg(long)]
    pub trace: Vec<PathBuf>,
    /// Generator parameters; repeat to compare several workloads.
    #[arg(long)]
    pub gen: Vec<PathBuf>,
    /// Policy for simulate; repeat or comma-separate for compare.
    #[arg(long, value_delimiter = ',')]
    pub policy: Vec<String>,
    /// Estimation depth [default: 2].
    #[arg(long)]
    pub depth: Option<usize>,
    /// Queueing timeout in seconds [default: 600].
    #[arg(long)]
    pub timeout: Option<f64>,
    /// Seed for generated workloads [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Time series window in seconds [default: 60].
    #[arg(long)]
    pub window: Option<f64>,
}

fn config_help() -> String {
    let mut s = String::from("Run configuration keys (--config FILE, TOML; flags override them):\n");
    for (key, what) in RUN_CONFIG_KEYS {
        let _ = writeln!(s, "  {key:<9} {what}");
    }
    s
}

fn paths(v: &[PathBuf]) -> Option<Paths> {
    match v {
        [] => None,
        [one] => Some(Paths::One(one.clone())),
        many => Some(Paths::Many(many.to_vec())),
    }
}

impl RunArgs {
    fn resolve(&self, compare: bool) -> Result<RunConfig> {
        let file = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let (policy, policies) = match (compare, self.policy.as_slice()) {
            (_, []) => (None, None),
            (false, [one]) => (Some(one.clone()), None),
            (false, _) => return Err(ConfigError::Invalid("simulate takes a single --policy".into()).into()),
            (true, many) => (None, Some(many.to_vec())),
        };
        let flags = RunConfig {
            cluster: self.cluster.clone(),
            trace: paths(&self.trace),
            gen: paths(&self.gen),
            policy,
            policies,
            depth: self.depth,
            timeout: self.timeout,
            seed: self.seed,
            out: self.out.clone(),
            window: self.window,
        };
        Ok(file.merge(flags))
    }
}

fn parse_policy(s: &str) -> Result<Policy> {
    s.parse::<Policy>().map_err(|e| ConfigError::Invalid(e.to_string()).into())
}

fn load_cluster_and_workloads(cfg: &RunConfig) -> Result<(ClusterSpec, Vec<Workload>)> {
    // argument shape problems surface before any file is read
    if cfg.cluster.is_none() {
        return Err(ConfigError::Invalid("need a cluster (--cluster)".into()).into());
    }
    if cfg.trace.is_some() == cfg.gen.is_some() {
        return Err(ConfigError::Invalid("give exactly one of --trace or --gen".into()).into());
    }
    Ok((cfg.cluster_spec()?, cfg.workloads()?))
}

fn summary_line(s: &Summary) -> String {
    format!(
        "{:<18} actions {:>6}  mean ACT {:>9.3}s  p99 {:>9.3}s  queue {:>8.3}s  exec {:>8.3}s  overhead {:>7.3}s  timeouts {}",
        s.policy, s.actions, s.mean_act, s.p99_act, s.mean_queue, s.mean_exec, s.mean_overhead, s.timeouts
    )
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    cfg.out.as_deref().ok_or_else(|| ConfigError::Invalid("need an output directory (--out)".into()).into())
}

fn simulate(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve(false)?;
    let policy = parse_policy(cfg.policy.as_deref().unwrap_or("elastic"))?;
    let sim = cfg.sim_config(policy)?;
    let out = out_dir(&cfg)?.to_path_buf();
    let (cluster, workloads) = load_cluster_and_workloads(&cfg)?;
    let [workload] = workloads.as_slice() else {
        return Err(ConfigError::Invalid("simulate takes a single workload".into()).into());
    };
    let output = run(&workload.trajectories, &cluster, &sim).with_context(|| format!("simulating {}", workload.name))?;
    let summary = crate::config::write_run(&out, &cfg, &cluster, workload, &output)?;
    println!("{}", summary_line(&summary));
    println!("wrote {}", out.display());
    Ok(())
}

fn dir_name(policy: &Policy) -> String {
    policy.to_string().replace(':', "-")
}

/// Mean ACT of every policy over the first policy's, one column per workload.
pub fn ratio_table(workloads: &[String], policies: &[Policy], means: &[Vec<f64>]) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:<18}", "mean ACT ratio");
    for w in workloads {
        let _ = write!(s, " {w:>14}");
    }
    s.push('\n');
    for (p, policy) in policies.iter().enumerate() {
        let _ = write!(s, "{:<18}", policy.to_string());
        for means in means {
            let _ = write!(s, " {:>14.3}", means[p] / means[0]);
        }
        s.push('\n');
    }
    s
}

fn compare(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve(true)?;
    let names = cfg.policies.clone().unwrap_or_else(|| vec!["elastic".into(), "trajectory-static".into()]);
    let policies: Vec<Policy> = names.iter().map(|p| parse_policy(p)).collect::<Result<_>>()?;
    let sims = policies.iter().map(|&p| cfg.sim_config(p)).collect::<Result<Vec<_>, _>>()?;
    let out = out_dir(&cfg)?.to_path_buf();
    let (cluster, workloads) = load_cluster_and_workloads(&cfg)?;

    let results: Vec<Vec<Result<Summary>>> = std::thread::scope(|scope| {
        let handles: Vec<Vec<_>> = workloads
            .iter()
            .map(|w| {
                sims.iter()
                    .map(|sim| {
                        let (cluster, cfg, out) = (&cluster, &cfg, &out);
                        scope.spawn(move || -> Result<Summary> {
                            let output = run(&w.trajectories, cluster, sim)
                                .with_context(|| format!("simulating {} under {}", w.name, sim.policy))?;
                            let dir = out.join(&w.name).join(dir_name(&sim.policy));
                            Ok(crate::config::write_run(&dir, cfg, cluster, w, &output)?)
                        })
                    })
                    .collect()
            })
            .collect();
        handles
            .into_iter()
            .map(|row| row.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect())
            .collect()
    });

    let mut summaries = Vec::with_capacity(results.len());
    for row in results {
        summaries.push(row.into_iter().collect::<Result<Vec<_>>>()?);
    }
    let means: Vec<Vec<f64>> = summaries.iter().map(|row| row.iter().map(|s| s.mean_act).collect()).collect();
    let workload_names: Vec<String> = workloads.iter().map(|w| w.name.clone()).collect();
    for (w, row) in workloads.iter().zip(&summaries) {
        println!("{}", w.name);
        for s in row {
            println!("  {}", summary_line(s));
        }
    }
    let table = ratio_table(&workload_names, &policies, &means);
    println!("\n{table}");

    let mut csv = String::from("workload,policy,mean_act,ratio,p99_act,mean_queue,mean_exec,mean_overhead,timeouts\n");
    for (w, row) in workloads.iter().zip(&summaries) {
        for s in row {
            let _ = writeln!(
                csv,
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
                w.name,
                s.policy,
                s.mean_act,
                s.mean_act / row[0].mean_act,
                s.p99_act,
                s.mean_queue,
                s.mean_exec,
                s.mean_overhead,
                s.timeouts
            );
        }
    }
    write_atomic(&out.join("compare.csv"), csv.as_bytes())?;
    write_atomic(&out.join("compare.txt"), table.as_bytes())?;
    write_atomic(&out.join("compare.json"), pretty(&summaries).as_bytes())?;
    println!("wrote {}", out.display());
    Ok(())
}

fn gen_trace(gen: &Path, seed: u64, out: &Path) -> Result<()> {
    let w = Workload::from_gen(gen, seed)?;
    write_atomic(out, w.text().as_bytes())?;
    let actions: usize = w.trajectories.iter().map(|t| t.actions().count()).sum();
    println!(
        "{} trajectories, {actions} actions, measured active ratio {:.3}; wrote {}",
        w.trajectories.len(),
        measured_active_ratio(&w.trajectories),
        out.display()
    );
    Ok(())
}

fn print_report(what: &str, r: &OracleReport) -> bool {
    println!("{what}: {}/{} match", r.matched, r.checked);
    for m in &r.mismatches {
        println!("  {m}");
    }
    r.all_match()
}

fn oracle(dp: bool, gpu: bool, instances: usize, max_tasks: usize, max_units: u32, seed: u64) -> Result<bool> {
    if max_tasks == 0 || max_units == 0 || instances == 0 {
        return Err(ConfigError::Invalid("instances, max-tasks and max-units must be positive".into()).into());
    }
    let (dp, gpu) = if !dp && !gpu { (true, true) } else { (dp, gpu) };
    let mut ok = true;
    if dp {
        ok &= print_report("dp", &check_basic(instances, max_tasks, max_units, seed));
    }
    if gpu {
        ok &= print_report("gpu", &check_gpu(instances, max_tasks, seed));
    }
    Ok(ok)
}

/// Exit status for an error: 2 for bad arguments or configuration shape,
/// 1 for anything that failed while loading or running.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<ConfigError>() {
        Some(ConfigError::Invalid(_)) => 2,
        _ => 1,
    }
}

/// Parses `args` and runs the command, returning the process exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match &cli.command {
        Command::GenTrace { gen, seed, out } => gen_trace(gen, *seed, out).map(|_| true),
        Command::Simulate(a) => simulate(a).map(|_| true),
        Command::Compare(a) => compare(a).map(|_| true),
        Command::Oracle { dp, gpu, instances, max_tasks, max_units, seed } => {
            oracle(*dp, *gpu, *instances, *max_tasks, *max_units, *seed)
        }
    };
    match result {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

/// Rendered `--help` of the top level and of every subcommand.
pub fn help_texts() -> Vec<String> {
    let mut cmd = Cli::command();
    let mut out = vec![cmd.render_long_help().to_string()];
    for sub in cmd.get_subcommands_mut() {
        out.push(sub.render_long_help().to_string());
    }
    out
}
