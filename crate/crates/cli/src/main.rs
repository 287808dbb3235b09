//! Command-line driver: homophily reports and estimation, operator dumps,
//! synthetic graph generation with the closed-form/Monte-Carlo gap oracle,
//! gradient verification, single training runs, homophily sweeps and the
//! channel ablation matrix.
//!
//! Exit codes: 0 success, 1 validation/configuration error, 2 numeric failure.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use heterophily::error::{Error, Result};
use heterophily::filters::{Operator, OperatorKind};
use heterophily::graph::{load_graph, load_graph_dir, save_graph, Graph};
use heterophily::harness::{
    ablation, default_h_grid, split, sweep, train, AblationOptions, SweepOptions, TrainOptions,
    ABLATION_CSV_HEADER, SWEEP_CSV_HEADER,
};
use heterophily::metrics::{estimate_metrics, random_mask, report, HomophilyReport};
use heterophily::models::{Family, ModelConfig};
use heterophily::synth::{
    default_oracle_grid, g_of_h, generate, limitation_scenario, monte_carlo_g, optimal_h,
    FeatureMode, SynthConfig,
};
use heterophily::verify::gradcheck_suite;

#[derive(Parser)]
#[command(
    name = "heterophily",
    about = "Homophily metrics, synthetic graphs and channel-mixing GNNs on dense matrices",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Homophily metrics of a graph.
    Metrics {
        #[command(subcommand)]
        cmd: MetricsCmd,
    },
    /// Spectral/spatial operator zoo.
    Filters {
        #[command(subcommand)]
        cmd: FiltersCmd,
    },
    /// Synthetic graph generation and the similarity-gap oracle.
    Synth {
        #[command(subcommand)]
        cmd: SynthCmd,
    },
    /// Autodiff verification.
    Nn {
        #[command(subcommand)]
        cmd: NnCmd,
    },
    /// Train one model on a graph directory.
    Train(TrainArgs),
    /// Homophily sweep over generated graphs.
    Sweep(SweepArgs),
    /// Channel/mixing ablation matrix.
    Ablation(AblationArgs),
}

/// Graph input: either a directory written by `synth make` or explicit files.
#[derive(Args)]
struct GraphInput {
    /// Directory containing edges.txt, features.csv, labels.csv.
    #[arg(long, conflicts_with_all = ["edges", "features", "labels"])]
    graph: Option<PathBuf>,
    #[arg(long, requires_all = ["features", "labels"])]
    edges: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Treat the first feature-CSV row as a header.
    #[arg(long)]
    header: bool,
}

impl GraphInput {
    fn load(&self) -> Result<Graph> {
        match (&self.graph, &self.edges, &self.features, &self.labels) {
            (Some(dir), None, None, None) => load_graph_dir(dir),
            (None, Some(e), Some(f), Some(l)) => load_graph(e, f, l, self.header),
            _ => Err(Error::Config(
                "provide either --graph DIR or all of --edges/--features/--labels".into(),
            )),
        }
    }
}

#[derive(Subcommand)]
enum MetricsCmd {
    /// Print the full homophily report.
    Report {
        #[command(flatten)]
        input: GraphInput,
        /// Aggregation operator kind (affinity kinds only).
        #[arg(long, default_value = "a_rw_renorm")]
        op: String,
        /// Also write the report as a one-row CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Estimate the metrics from random training-label subsets.
    Estimate {
        #[command(flatten)]
        input: GraphInput,
        #[arg(long, default_value_t = 0.6)]
        train_frac: f64,
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "a_rw_renorm")]
        op: String,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum FiltersCmd {
    /// Write an operator matrix as CSV.
    Dump {
        #[command(flatten)]
        input: GraphInput,
        /// identity | a_rw | a_sym | a_rw_renorm | a_sym_renorm | l | l_sym |
        /// l_rw | l_sym_renorm | l_rw_renorm | hp_<affinity>
        #[arg(long)]
        kind: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum SynthCmd {
    /// Generate a graph and write its three files.
    Make {
        #[arg(long)]
        h: f64,
        #[arg(long, default_value_t = 5)]
        classes: usize,
        #[arg(long, default_value_t = 400)]
        per_class: usize,
        #[arg(long, default_value_t = 2)]
        d_intra: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        feature_dim: usize,
        #[arg(long, default_value_t = 2.0)]
        separation: f64,
        /// Sample features from this base graph directory instead.
        #[arg(long)]
        base_graph: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the closed-form similarity gap with its Monte-Carlo estimate.
    Oracle {
        /// "default" or comma-separated h:d:c triples, e.g. "0.2:10:5,0.5:4:2".
        #[arg(long, default_value = "default")]
        grid: String,
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Generate the small-clusters-on-a-big-cluster limitation scenario.
    Limitation {
        #[arg(long, default_value_t = 2)]
        small_clusters: usize,
        #[arg(long, default_value_t = 5)]
        small_size: usize,
        #[arg(long, default_value_t = 50)]
        big_size: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum NnCmd {
    /// Finite-difference verification of all primitives and model families.
    Gradcheck {
        #[arg(long)]
        seed: u64,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Flat key=value model configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Graph directory (edges.txt, features.csv, labels.csv).
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    max_epochs: usize,
    #[arg(long, default_value_t = 40)]
    patience: usize,
}

#[derive(Args)]
struct SweepArgs {
    /// "default" (28 levels) or comma-separated homophily targets.
    #[arg(long, default_value = "default")]
    grid: String,
    /// Comma-separated model ids, e.g. "sgc-1,gcn-2,acm-gcn-2,mlp-2".
    #[arg(long)]
    models: String,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    #[arg(long, default_value_t = 2)]
    d_intra: usize,
    #[arg(long, default_value_t = 32)]
    feature_dim: usize,
    #[arg(long, default_value_t = 2.0)]
    separation: f64,
    #[arg(long, default_value_t = 400)]
    max_epochs: usize,
    #[arg(long, default_value_t = 60)]
    patience: usize,
    /// Run cells sequentially instead of in the worker pool.
    #[arg(long)]
    serial: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblationArgs {
    /// Comma-separated families: sgc, gcn, snowball.
    #[arg(long)]
    families: String,
    #[command(flatten)]
    input: GraphInput,
    /// Generate a synthetic graph at this homophily instead of loading one.
    #[arg(long)]
    synth_h: Option<f64>,
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 400)]
    max_epochs: usize,
    #[arg(long, default_value_t = 60)]
    patience: usize,
    #[arg(long)]
    serial: bool,
    #[arg(long)]
    out: PathBuf,
}

fn write_file(path: &PathBuf, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|source| Error::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
    }
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })
}

fn affinity_kind(name: &str) -> Result<heterophily::filters::AffinityKind> {
    match name.parse::<OperatorKind>()? {
        OperatorKind::Affinity(a) => Ok(a),
        other => Err(Error::Config(format!(
            "{other} is not an affinity kind; metrics need an aggregation operator"
        ))),
    }
}

fn print_report(r: &HomophilyReport) {
    for (name, value) in HomophilyReport::FIELD_NAMES.iter().zip(r.values()) {
        println!("{name:>10}  {value:.6}");
    }
}

fn report_csv_row(r: &HomophilyReport) -> String {
    let values: Vec<String> = r.values().iter().map(|v| format!("{v:.6}")).collect();
    values.join(",")
}

fn run_metrics(cmd: MetricsCmd) -> Result<()> {
    match cmd {
        MetricsCmd::Report { input, op, csv } => {
            let g = input.load()?;
            let r = report(&g, affinity_kind(&op)?)?;
            print_report(&r);
            if let Some(path) = csv {
                let csv_text = format!(
                    "{}\n{}\n",
                    HomophilyReport::FIELD_NAMES.join(","),
                    report_csv_row(&r)
                );
                write_file(&path, &csv_text)?;
            }
            Ok(())
        }
        MetricsCmd::Estimate {
            input,
            train_frac,
            seeds,
            seed,
            op,
            csv,
        } => {
            if !(0.0 < train_frac && train_frac < 1.0) {
                return Err(Error::Config("train_frac must lie in (0, 1)".into()));
            }
            if seeds == 0 {
                return Err(Error::Config("need at least one seed".into()));
            }
            let g = input.load()?;
            let kind = affinity_kind(&op)?;
            let full = report(&g, kind)?;
            let estimates: Vec<HomophilyReport> = (0..seeds)
                .map(|i| {
                    let mask = random_mask(
                        g.n_nodes(),
                        train_frac,
                        heterophily::harness::mix_seed(&[seed, i as u64]),
                    );
                    estimate_metrics(&g, &mask, kind)
                })
                .collect::<Result<_>>()?;
            println!("{:>10}  {:>10}  {:>10}  {:>10}", "metric", "full", "mean", "std");
            let mut csv_text = String::from("metric,full,mean,std\n");
            for (fi, name) in HomophilyReport::FIELD_NAMES.iter().enumerate() {
                let vals: Vec<f64> = estimates.iter().map(|e| e.values()[fi]).collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let std = if vals.len() > 1 {
                    (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                        / (vals.len() as f64 - 1.0))
                        .sqrt()
                } else {
                    0.0
                };
                println!(
                    "{name:>10}  {:10.6}  {mean:10.6}  {std:10.6}",
                    full.values()[fi]
                );
                csv_text.push_str(&format!(
                    "{name},{:.6},{mean:.6},{std:.6}\n",
                    full.values()[fi]
                ));
            }
            if let Some(path) = csv {
                write_file(&path, &csv_text)?;
            }
            Ok(())
        }
    }
}

fn run_filters(cmd: FiltersCmd) -> Result<()> {
    let FiltersCmd::Dump { input, kind, out } = cmd;
    let g = input.load()?;
    let kind: OperatorKind = kind.parse()?;
    let op = Operator::<f64>::build(&g, kind)?;
    let mut text = String::new();
    for i in 0..op.n() {
        let row: Vec<String> = op.matrix().row(i).iter().map(|v| format!("{v}")).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    write_file(&out, &text)?;
    println!("wrote {} ({} x {})", out.display(), op.n(), op.n());
    Ok(())
}

fn run_synth(cmd: SynthCmd) -> Result<()> {
    match cmd {
        SynthCmd::Make {
            h,
            classes,
            per_class,
            d_intra,
            seed,
            feature_dim,
            separation,
            base_graph,
            out,
        } => {
            let mut cfg = SynthConfig::new(h, classes, per_class, seed);
            cfg.d_intra = d_intra;
            cfg.feature_mode = match base_graph {
                Some(dir) => FeatureMode::FromBaseGraph { dir },
                None => FeatureMode::GaussianMeans {
                    dim: feature_dim,
                    separation,
                },
            };
            let g = generate(&cfg)?;
            save_graph(&g, &out)?;
            let h_measured = heterophily::metrics::edge_homophily(&g)?;
            println!(
                "wrote {} nodes, {} edges to {} (measured edge homophily {:.4})",
                g.n_nodes(),
                g.n_edges(),
                out.display(),
                h_measured
            );
            Ok(())
        }
        SynthCmd::Oracle { grid, trials, seed } => {
            let points = if grid == "default" {
                default_oracle_grid()
            } else {
                grid.split(',')
                    .map(|tok| {
                        let parts: Vec<&str> = tok.trim().split(':').collect();
                        if parts.len() != 3 {
                            return Err(Error::Config(format!(
                                "grid entry {tok:?} is not h:d:c"
                            )));
                        }
                        let h: f64 = parts[0]
                            .parse()
                            .map_err(|_| Error::Config(format!("bad h {tok:?}")))?;
                        let d: usize = parts[1]
                            .parse()
                            .map_err(|_| Error::Config(format!("bad d {tok:?}")))?;
                        let c: usize = parts[2]
                            .parse()
                            .map_err(|_| Error::Config(format!("bad c {tok:?}")))?;
                        Ok((h, d, c))
                    })
                    .collect::<Result<_>>()?
            };
            println!(
                "{:>9} {:>4} {:>3} {:>12} {:>12} {:>11} {:>6}",
                "h", "d", "C", "g_closed", "g_mc", "stderr", "ok"
            );
            for (i, &(h, d, c)) in points.iter().enumerate() {
                let closed = g_of_h(h, d, c)?;
                let (mc, se) = monte_carlo_g(h, d, c, trials, seed.wrapping_add(i as u64))?;
                let ok = (mc - closed).abs() <= 3.0 * se.max(f64::EPSILON);
                println!(
                    "{h:9.6} {d:4} {c:3} {closed:12.6} {mc:12.6} {se:11.2e} {:>6}",
                    if ok { "yes" } else { "NO" }
                );
            }
            let best = optimal_h(2, 5)?;
            println!(
                "optimal h for d_intra=2, C=5: {best} = {:.6}",
                heterophily::scalar::rational_to_f64(&best)
            );
            Ok(())
        }
        SynthCmd::Limitation {
            small_clusters,
            small_size,
            big_size,
            seed,
            out,
        } => {
            let g = limitation_scenario(small_clusters, small_size, big_size, seed)?;
            save_graph(&g, &out)?;
            println!(
                "wrote {} nodes, {} edges to {}",
                g.n_nodes(),
                g.n_edges(),
                out.display()
            );
            Ok(())
        }
    }
}

fn run_gradcheck(seed: u64) -> Result<()> {
    let results = gradcheck_suite(seed)?;
    let mut failed = 0usize;
    println!("{:<45} {:>12} {:>10} {:>6}", "check", "max_rel_err", "bound", "ok");
    for r in &results {
        if !r.passed() {
            failed += 1;
        }
        println!(
            "{:<45} {:>12.3e} {:>10.0e} {:>6}",
            r.name,
            r.error,
            r.bound,
            if r.passed() { "yes" } else { "NO" }
        );
    }
    if failed > 0 {
        return Err(Error::Numeric(format!("{failed} gradient checks failed")));
    }
    println!("all {} checks passed", results.len());
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let text = fs::read_to_string(&args.config).map_err(|source| Error::Io {
        path: args.config.clone(),
        source,
    })?;
    let cfg = ModelConfig::from_key_values(&text)?;
    let g = load_graph_dir(&args.graph)?;
    let masks = split(g.n_nodes(), (0.6, 0.2, 0.2), args.seed)?;
    let opts = TrainOptions {
        max_epochs: args.max_epochs,
        patience: args.patience,
        seed: args.seed,
    };
    let res = train(&cfg, &g, &masks, &opts)?;
    println!("model            {}", cfg.id());
    println!("epochs           {}", res.epochs_run);
    println!("best epoch       {}", res.best_epoch);
    println!("best val acc     {:.4}", res.best_val_acc);
    println!("test acc @ best  {:.4}", res.test_acc_at_best_val);
    println!("ms per epoch     {:.3}", res.wall_time_per_epoch_ms);
    if let Some(mix) = &res.mixing_weights {
        for (i, alpha) in mix.iter().enumerate() {
            let k = alpha.cols();
            let mut means = vec![0.0; k];
            for r in 0..alpha.rows() {
                for c in 0..k {
                    means[c] += alpha[(r, c)] / alpha.rows() as f64;
                }
            }
            let formatted: Vec<String> = means.iter().map(|m| format!("{m:.3}")).collect();
            println!("mixing block {i}   mean alpha = [{}]", formatted.join(", "));
        }
    }
    Ok(())
}

fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    if spec == "default" {
        return Ok(default_h_grid());
    }
    spec.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad grid value {tok:?}")))
        })
        .collect()
}

fn run_sweep(args: SweepArgs) -> Result<()> {
    let grid = parse_grid(&args.grid)?;
    let models: Vec<ModelConfig> = args
        .models
        .split(',')
        .map(ModelConfig::parse_id)
        .collect::<Result<_>>()?;
    let opts = SweepOptions {
        classes: args.classes,
        nodes_per_class: args.per_class,
        d_intra: args.d_intra,
        feature_dim: args.feature_dim,
        feature_separation: args.separation,
        repeats: args.repeats,
        seed: args.seed,
        max_epochs: args.max_epochs,
        patience: args.patience,
        parallel: !args.serial,
        variant_search: true,
    };
    let rows = sweep(&grid, &models, &opts)?;
    let mut text = String::from(SWEEP_CSV_HEADER);
    text.push('\n');
    for row in &rows {
        text.push_str(&row.to_csv());
        text.push('\n');
    }
    write_file(&args.out, &text)?;
    println!("wrote {} rows to {}", rows.len(), args.out.display());
    Ok(())
}

fn run_ablation(args: AblationArgs) -> Result<()> {
    let families: Vec<Family> = args
        .families
        .split(',')
        .map(|tok| match tok.trim() {
            "sgc" => Ok(Family::Sgc),
            "gcn" => Ok(Family::Gcn),
            "snowball" => Ok(Family::Snowball),
            other => Err(Error::Config(format!("unknown family {other:?}"))),
        })
        .collect::<Result<_>>()?;
    let g = match args.synth_h {
        Some(h) => {
            let cfg = SynthConfig::new(h, args.classes, args.per_class, args.seed);
            generate(&cfg)?
        }
        None => args.input.load()?,
    };
    let opts = AblationOptions {
        repeats: args.repeats,
        seed: args.seed,
        max_epochs: args.max_epochs,
        patience: args.patience,
        parallel: !args.serial,
    };
    let rows = ablation(&families, &g, &opts)?;
    let mut text = String::from(ABLATION_CSV_HEADER);
    text.push('\n');
    println!(
        "{:<9} {:>3} {:>3} {:>9} {:>7} {:>9} {:>8} {:>10}",
        "family", "lp", "hp", "identity", "mixing", "mean_acc", "std_acc", "ms/epoch"
    );
    for row in &rows {
        text.push_str(&row.to_csv());
        text.push('\n');
        println!(
            "{:<9} {:>3} {:>3} {:>9} {:>7} {:>9.4} {:>8.4} {:>10.3}",
            row.family_name(),
            u8::from(row.lp),
            u8::from(row.hp),
            u8::from(row.identity),
            u8::from(row.mixing),
            row.mean_acc,
            row.std_acc,
            row.epoch_ms
        );
    }
    write_file(&args.out, &text)?;
    println!("wrote {} rows to {}", rows.len(), args.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Metrics { cmd } => run_metrics(cmd),
        Cmd::Filters { cmd } => run_filters(cmd),
        Cmd::Synth { cmd } => run_synth(cmd),
        Cmd::Nn { cmd } => match cmd {
            NnCmd::Gradcheck { seed } => run_gradcheck(seed),
        },
        Cmd::Train(args) => run_train(args),
        Cmd::Sweep(args) => run_sweep(args),
        Cmd::Ablation(args) => run_ablation(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
