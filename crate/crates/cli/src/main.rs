use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use b2mapo_core::harness::bench::{run_bench, write_bench, BenchConfig};
use b2mapo_core::harness::config::GameSection;
use b2mapo_core::harness::{output_root, report, run_experiment, write_bounds, ConfigFile};
use b2mapo_core::optimizer::Mode;
use b2mapo_core::scheduler::partition::BRUTEFORCE_MAX_AGENTS;
use b2mapo_core::scheduler::{
    layer_topological, min_batches_bruteforce, min_batches_greedy, to_dag, IndependenceGraph, WeightedDigraph,
};
use b2mapo_core::verify::{check_theorem3_distillation, run_suite, summarize, SuiteConfig};
use b2mapo_core::{build_dependency_chain_game, build_random_game, BatchSequence, Error, Result};

#[derive(Parser)]
#[command(name = "b2mapo", version, about = "Batch-by-batch multi-agent policy optimization on small Markov games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the numeric bound checks and write bounds.csv.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Divide every trial count by this factor.
        #[arg(long, default_value_t = 1)]
        scale_down: usize,
        /// Also train and distill on a 2-agent game and check the value gap.
        #[arg(long)]
        distill: bool,
        /// Output directory (relative paths resolve against $B2MAPO_OUTPUT_ROOT).
        #[arg(long, default_value = "verify")]
        out: PathBuf,
    },
    /// Train from a config file and write per-seed CSVs.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// mappo, a2po, b2mapo-dag or b2mapo-fixed.
        #[arg(long)]
        mode: Option<String>,
        /// Replace the configured seed list, e.g. `--seeds 0,1,2`.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        rounds: Option<usize>,
        /// off, monitor or exact.
        #[arg(long)]
        oracle: Option<String>,
        /// Game file to use instead of the config's `[game]` builder.
        #[arg(long)]
        game: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write timings.csv (wall-clock, differs between runs).
        #[arg(long)]
        timings: bool,
    },
    /// Time update rounds and decisions per mode on one game.
    Bench {
        /// Config file for the game and shared hyperparameters; defaults to
        /// the chain game with `--agents` agents.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        agents: usize,
        #[arg(long, default_value_t = 50)]
        rounds: usize,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "bench")]
        out: PathBuf,
    },
    /// Partition a dependence graph file into a batch sequence.
    Partition {
        graph: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Auto)]
        method: Method,
    },
    /// Summarize an output directory.
    Report { dir: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    /// Brute force up to the exact-search limit, greedy beyond.
    Auto,
    Bruteforce,
    Greedy,
    /// Break cycles, then layer by longest path.
    Layer,
}

fn resolve_out(path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        output_root().join(path)
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn verify(seed: u64, scale_down: usize, distill: bool, out: &Path) -> Result<()> {
    let config = SuiteConfig::default().scaled_down(scale_down);
    let mut reports = run_suite(&config, seed)?;
    if distill {
        let game = build_random_game(2, 4, 2, 0.9, seed)?;
        reports.push(check_theorem3_distillation(&game, seed)?);
    }
    let dir = resolve_out(out);
    create_dir(&dir)?;
    let path = dir.join("bounds.csv");
    write_bounds(&path, &reports)?;
    let summary = summarize(&reports);
    println!("{:<26} {:>8} {:>8} {:>14}", "statement", "trials", "failed", "min slack");
    for (name, n, f, s) in &summary {
        println!("{name:<26} {n:>8} {f:>8} {s:>14.6e}");
    }
    println!("wrote {}", path.display());
    let failed: usize = summary.iter().map(|e| e.2).sum();
    if failed > 0 {
        return Err(Error::CheckFailed(format!("{failed} bound violations")));
    }
    Ok(())
}

fn load_config(path: &Path) -> Result<ConfigFile> {
    ConfigFile::read(path)
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Command-line replacements for config values.
struct TrainOverrides {
    mode: Option<String>,
    seeds: Option<Vec<u64>>,
    rounds: Option<usize>,
    oracle: Option<String>,
    game: Option<PathBuf>,
    out: Option<PathBuf>,
    timings: bool,
}

fn train(config: &Path, o: TrainOverrides) -> Result<()> {
    let mut file = load_config(config)?;
    if let Some(m) = o.mode {
        file.scheme.mode = Some(m);
    }
    if let Some(s) = o.seeds {
        file.experiment.seeds = s;
    }
    if let Some(r) = o.rounds {
        file.experiment.rounds = r;
    }
    if let Some(x) = o.oracle {
        file.experiment.oracle = Some(x);
    }
    if let Some(g) = o.game {
        let path = std::path::absolute(&g).map_err(|source| Error::Io {
            path: g.display().to_string(),
            source,
        })?;
        file.game = GameSection {
            builder: "file".into(),
            file: Some(path),
            ..GameSection::default()
        };
    }
    let (out, timings) = (o.out.as_deref(), o.timings);
    if let Some(o) = out {
        file.experiment.output = Some(o.to_path_buf());
    }
    if timings {
        file.experiment.timings = Some(true);
    }
    let exp = file.resolve(&base_dir(config), &output_root())?;
    let runs = run_experiment(&exp)?;
    println!("{:>6} {:>14} {:>14} {:>14}", "seed", "final_j", "final_j_ind", "final_j_mc");
    let show = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.6}"));
    for r in &runs {
        println!(
            "{:>6} {:>14} {:>14} {:>14.6}",
            r.seed,
            show(r.final_j),
            show(r.final_j_independent),
            r.final_j_mc
        );
    }
    println!("wrote {}", exp.output.display());
    Ok(())
}

fn bench(config: Option<&Path>, agents: usize, rounds: usize, warmup: usize, seed: u64, out: &Path) -> Result<()> {
    let mut cfg = match config {
        Some(path) => {
            let exp = load_config(path)?.resolve(&base_dir(path), &output_root())?;
            let mut c = BenchConfig::new(exp.game);
            c.scheme = exp.scheme;
            c
        }
        None => BenchConfig::new(build_dependency_chain_game(agents, 0.5, seed)?.0),
    };
    cfg.rounds = rounds;
    cfg.warmup_rounds = warmup;
    cfg.seed = seed;
    cfg.modes = vec![Mode::Mappo, Mode::B2mapoDag, Mode::A2po];
    let records = run_bench(&cfg)?;
    let dir = resolve_out(out);
    create_dir(&dir)?;
    let path = dir.join("bench.csv");
    write_bench(&path, &records)?;
    println!(
        "{:<14} {:>7} {:>8} {:>14} {:>14} {:>14}",
        "mode", "agents", "batches", "train_s", "decide_cond_s", "decide_ind_s"
    );
    for r in &records {
        println!(
            "{:<14} {:>7} {:>8} {:>14.6e} {:>14.6e} {:>14.6e}",
            r.mode.to_string(),
            r.n_agents,
            r.batches,
            r.train_seconds,
            r.decision_conditioned,
            r.decision_independent
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn partition(path: &Path, method: Method) -> Result<()> {
    let graph = WeightedDigraph::read(path)?;
    let pairs = graph.pairs();
    let conflicts = IndependenceGraph::from_directed(graph.n, &pairs)?;
    let dag = to_dag(graph.n, &graph.edges);
    let dag_pairs: Vec<(usize, usize)> = dag.iter().map(|e| (e.0, e.1)).collect();
    let layered = layer_topological(graph.n, &dag_pairs)?;
    let greedy = min_batches_greedy(&conflicts)?;
    let exact = if graph.n <= BRUTEFORCE_MAX_AGENTS { Some(min_batches_bruteforce(&conflicts)?) } else { None };
    let seq: BatchSequence = match method {
        Method::Layer => layered.clone(),
        Method::Greedy => greedy.clone(),
        Method::Bruteforce => exact.clone().ok_or_else(|| {
            Error::Size(format!("bruteforce supports at most {BRUTEFORCE_MAX_AGENTS} agents, got {}", graph.n))
        })?,
        Method::Auto => exact.clone().unwrap_or_else(|| greedy.clone()),
    };
    println!("{seq}");
    println!("sequence {}", seq.compact());
    println!("batches {}", seq.len());
    match &exact {
        Some(b) => {
            println!("bruteforce {} greedy {} layered {}", b.len(), greedy.len(), layered.len());
            println!("agree {}", if b.len() == greedy.len() { "yes" } else { "no" });
        }
        None => println!("bruteforce - greedy {} layered {}", greedy.len(), layered.len()),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Verify {
            seed,
            scale_down,
            distill,
            out,
        } => verify(seed, scale_down, distill, &out),
        Command::Train {
            config,
            mode,
            seeds,
            rounds,
            oracle,
            game,
            out,
            timings,
        } => train(
            &config,
            TrainOverrides {
                mode,
                seeds,
                rounds,
                oracle,
                game,
                out,
                timings,
            },
        ),
        Command::Bench {
            config,
            agents,
            rounds,
            warmup,
            seed,
            out,
        } => bench(config.as_deref(), agents, rounds, warmup, seed, &out),
        Command::Partition { graph, method } => partition(&graph, method),
        Command::Report { dir } => {
            print!("{}", report(&dir)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
