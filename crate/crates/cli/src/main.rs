use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pxrl::analysis::Layer;
use pxrl::config::RunConfig;
use pxrl::protocols::probe_checkpoint;
use pxrl::report::{self, Run};
use pxrl::rundir::{self, LoadedRun};
use pxrl::Error;

#[derive(Parser)]
#[command(
    name = "pxrl",
    version,
    about = "Train, sweep, probe and analyze predictive-auxiliary DQN runs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment into a run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory; defaults to `$PXRL_OUT/<experiment>-seed<N>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one experiment per axis value and summarize final scores.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// seed, latent, gamma, epsilon, p or weights.
        #[arg(long)]
        axis: String,
        /// Comma-separated values; weight triples are written `wq/wneg/wpos`.
        #[arg(long)]
        values: String,
        /// Seeds per value, counting up from the config seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute an activation dump from a stored checkpoint.
    Dump {
        #[arg(long)]
        run: PathBuf,
        /// encoder-early, z or t-output.
        #[arg(long)]
        probe: String,
        #[arg(long)]
        step: usize,
        /// Dump label; the file is `dumps/<probe>-<label>.pxrl`. Defaults to `step<K>`.
        #[arg(long)]
        label: Option<String>,
    },
    /// Write the CSV tables of one figure analog.
    Analyze {
        #[arg(long)]
        run: Option<PathBuf>,
        /// Glob over run directories, e.g. `out/sweep/*`.
        #[arg(long)]
        runs: Option<String>,
        #[arg(long)]
        name: String,
        /// Output directory; defaults to `<run>/analysis` or `./analysis`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Io { .. } | Error::Format { .. } => 3,
        Error::NumericAbort { .. } => 4,
        _ => 1,
    }
}

fn out_root() -> PathBuf {
    std::env::var_os("PXRL_OUT").map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

fn experiment_name(cfg: &RunConfig) -> String {
    toml::Value::try_from(cfg.experiment)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn train(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> pxrl::Result<()> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let dir = out
        .unwrap_or_else(|| out_root().join(format!("{}-seed{}", experiment_name(&cfg), cfg.seed)));
    let outcome = rundir::run_to_dir(&cfg, &dir);
    let status = if outcome.is_ok() {
        "complete"
    } else {
        "failed"
    };
    println!("status={status} run={}", dir.display());
    outcome
}

fn apply_axis(cfg: &mut RunConfig, axis: &str, value: &str) -> pxrl::Result<()> {
    let bad = |e: String| Error::Config(format!("axis {axis}: bad value '{value}': {e}"));
    match axis {
        "seed" => cfg.seed = value.parse().map_err(|e| bad(format!("{e}")))?,
        "latent" => cfg.model.latent = value.parse().map_err(|e| bad(format!("{e}")))?,
        "gamma" => cfg.model.gamma = value.parse().map_err(|e| bad(format!("{e}")))?,
        "epsilon" => cfg.train.epsilon = value.parse().map_err(|e| bad(format!("{e}")))?,
        "p" => cfg.env.stochasticity = value.parse().map_err(|e| bad(format!("{e}")))?,
        "weights" => {
            let w: Vec<f64> = value
                .split('/')
                .map(|x| x.parse::<f64>().map_err(|e| bad(format!("{e}"))))
                .collect::<pxrl::Result<_>>()?;
            let [q, neg, pos] = w[..] else {
                return Err(bad("expected wq/wneg/wpos".into()));
            };
            cfg.model.weights = Some([q, neg, pos]);
        }
        other => {
            return Err(Error::Config(format!(
                "unknown sweep axis '{other}'; expected seed, latent, gamma, epsilon, p or weights"
            )))
        }
    }
    cfg.validate()
}

fn sweep(
    config: &Path,
    axis: &str,
    values: &str,
    seeds: u64,
    out: Option<PathBuf>,
) -> pxrl::Result<()> {
    let base = RunConfig::load(config)?;
    let values: Vec<&str> = values
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .collect();
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    if axis == "seed" && seeds > 1 {
        return Err(Error::Config(
            "--seeds cannot be combined with the seed axis".into(),
        ));
    }
    // check every value before starting any run
    for v in &values {
        apply_axis(&mut base.clone(), axis, v)?;
    }
    let out =
        out.unwrap_or_else(|| out_root().join(format!("sweep-{}-{axis}", experiment_name(&base))));
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut runs = String::from("axis_value,seed,status,final_score,dir\n");
    let mut summary = String::from("axis_value,n,failed,mean_final_score,se\n");
    for v in &values {
        let mut finals = Vec::new();
        let mut failed = 0;
        for k in 0..seeds {
            let mut cfg = base.clone();
            cfg.seed = base.seed + k;
            apply_axis(&mut cfg, axis, v)?;
            let name = if seeds == 1 {
                format!("{axis}-{}", v.replace('/', "_"))
            } else {
                format!("{axis}-{}-seed{}", v.replace('/', "_"), cfg.seed)
            };
            let dir = out.join(name);
            match rundir::run_to_dir(&cfg, &dir) {
                Ok(()) => {
                    let run = LoadedRun::load(&dir)?;
                    let f = report::final_score(&run.record);
                    finals.push(f);
                    runs.push_str(&format!(
                        "{v},{},complete,{f},{}\n",
                        cfg.seed,
                        dir.display()
                    ));
                }
                Err(e) => {
                    eprintln!("run {} failed: {e}", dir.display());
                    failed += 1;
                    runs.push_str(&format!("{v},{},failed,,{}\n", cfg.seed, dir.display()));
                }
            }
        }
        summary.push_str(&format!(
            "{v},{},{failed},{},{}\n",
            finals.len(),
            pxrl::analysis::mean(&finals),
            pxrl::analysis::std_error(&finals)
        ));
    }
    for (name, text) in [("runs.csv", &runs), ("summary.csv", &summary)] {
        let p = out.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    print!("{summary}");
    Ok(())
}

fn dump(run: &Path, probe: &str, step: usize, label: Option<String>) -> pxrl::Result<()> {
    let layer = Layer::from_tag(probe).ok_or_else(|| {
        Error::Config(format!(
            "unknown probe layer '{probe}'; valid tags are encoder-early, z, t-output"
        ))
    })?;
    let cfg = RunConfig::load(&run.join("config.toml"))?;
    let manifest = rundir::read_manifest(run)?;
    if !manifest.checkpoints.contains(&step) {
        return Err(Error::Config(format!(
            "run has no checkpoint at step {step}; available steps: {:?}",
            manifest.checkpoints
        )));
    }
    let params = rundir::load_params(&rundir::checkpoint_path(run, step))?;
    let d = probe_checkpoint(&cfg, &params, layer)?;
    let name = format!("{probe}-{}", label.unwrap_or_else(|| format!("step{step}")));
    println!("wrote {}", rundir::add_dump(run, &name, &d)?.display());
    Ok(())
}

fn expand_glob(pattern: &str) -> pxrl::Result<Vec<PathBuf>> {
    let paths =
        glob::glob(pattern).map_err(|e| Error::Config(format!("bad glob '{pattern}': {e}")))?;
    let mut dirs: Vec<PathBuf> = paths
        .filter_map(|p| p.ok())
        .filter(|p| p.join("config.toml").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Config(format!(
            "no run directories match '{pattern}'"
        )));
    }
    Ok(dirs)
}

fn analyze(
    run: Option<PathBuf>,
    runs: Option<String>,
    name: &str,
    out: Option<PathBuf>,
) -> pxrl::Result<()> {
    let mut dirs = Vec::new();
    if let Some(r) = &run {
        dirs.push(r.clone());
    }
    if let Some(g) = &runs {
        dirs.extend(expand_glob(g)?);
    }
    if dirs.is_empty() {
        return Err(Error::Config("analyze needs --run or --runs".into()));
    }
    let mut loaded = Vec::new();
    for d in &dirs {
        let r = LoadedRun::load(d)?;
        if r.manifest.status != "complete" {
            eprintln!("skipping {} (status {})", d.display(), r.manifest.status);
            continue;
        }
        loaded.push(r);
    }
    let views: Vec<Run> = loaded
        .iter()
        .map(|r| Run::new(&r.config, &r.record))
        .collect();
    let tables = report::analyze(name, &views)?;
    let out = out
        .unwrap_or_else(|| run.map_or_else(|| PathBuf::from("analysis"), |r| r.join("analysis")));
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    for t in &tables {
        t.write(&out)?;
        println!("wrote {}", out.join(format!("{}.csv", t.name)).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, seed, out } => train(&config, seed, out),
        Command::Sweep {
            config,
            axis,
            values,
            seeds,
            out,
        } => sweep(&config, &axis, &values, seeds, out),
        Command::Dump {
            run,
            probe,
            step,
            label,
        } => dump(&run, &probe, step, label),
        Command::Analyze {
            run,
            runs,
            name,
            out,
        } => analyze(run, runs, &name, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
