//! `subcrit`: batch runner for the subcritical random graph toolkit.
//!
//! Exit status 0 on success, 2 for usage and configuration errors, 3 for
//! numerical or calibration failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use subcrit::brw::{sample_killed_tree, Caps, Intensity};
use subcrit::estimation::{run_replicas, FailurePolicy, ReplicaPlan};
use subcrit::experiments::{run_experiment, ExperimentConfig};
use subcrit::exploration::{algorithm1, ExplorationConfig, VertexGraph};
use subcrit::graph::{connected_components, SamplerId};
use subcrit::output::{write_output, Cell, OutputFormat, Provenance, Table};
use subcrit::rng::rng_from_seed;
use subcrit::{Error, ModelParams, Result};

const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Parser)]
#[command(name = "subcrit", version, about = "Simulate subcritical inhomogeneous random graphs and their branching random walk approximations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment config; other subcommands read its model section.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// csv or json.
    #[arg(long, global = true)]
    format: Option<OutputFormat>,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Analytic constants as one row.
    Constants {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Edge list of one sampled graph.
    Graph {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        n: u32,
        #[arg(long, default_value = "fast")]
        sampler: SamplerId,
    },
    /// Component statistics of sampled graphs, one row per replica.
    Components {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        n: u32,
        #[arg(long, default_value = "fast")]
        sampler: SamplerId,
        #[arg(long, default_value_t = 1)]
        replicas: u64,
    },
    /// Walks started at log u and killed above 0; counts particles in (log b, 0].
    Brw {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        u: f64,
        #[arg(long, default_value_t = 0.5)]
        b: f64,
        #[arg(long, default_value_t = 1)]
        replicas: u64,
        /// Use this edge density for the walk instead of beta.
        #[arg(long)]
        tilde_beta: Option<f64>,
    },
    /// One exploration of the given targets at scale m.
    Explore {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        tilde_beta: f64,
        #[arg(long)]
        u: f64,
        #[arg(long, default_value_t = 0.5)]
        b: f64,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        a: f64,
        #[arg(long)]
        m: u64,
        /// Comma-separated target vertices in (b u m, u m].
        #[arg(long, value_delimiter = ',', required = true)]
        targets: Vec<u64>,
    },
    /// Runs the experiment named in --config.
    Experiment,
}

fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    ExperimentConfig::from_json(&text)
}

fn model_params(cli: &Cli, model: &ModelArgs) -> Result<ModelParams> {
    let from_config = match &cli.config {
        Some(path) => Some(read_config(path)?.model),
        None => None,
    };
    let gamma = model.gamma.or(from_config.map(|m| m.gamma));
    let beta = model.beta.or(from_config.map(|m| m.beta));
    match (gamma, beta) {
        (Some(g), Some(b)) => ModelParams::new(g, b),
        _ => Err(Error::Usage("--gamma and --beta are required (or --config)".into())),
    }
}

fn model_json(p: &ModelParams) -> serde_json::Value {
    json!({"gamma": p.gamma(), "beta": p.beta()})
}

struct Emit {
    table: Table,
    provenance: Provenance,
    format: Option<OutputFormat>,
    path: Option<PathBuf>,
}

fn constants(cli: &Cli, model: &ModelArgs) -> Result<Emit> {
    let p = model_params(cli, model)?;
    let mut table = Table::new(["gamma", "beta", "beta_c", "rho_minus", "rho_plus", "t_star", "tau", "regime"]);
    let derived = if p.is_subcritical() { Some(p.derived()?) } else { None };
    table.push(vec![
        p.gamma().into(),
        p.beta().into(),
        p.critical_beta().into(),
        derived.map(|d| d.rho_minus).into(),
        derived.map(|d| d.rho_plus).into(),
        derived.map(|d| d.t_star).into(),
        p.tau().into(),
        p.regime().as_str().into(),
    ])?;
    Ok(Emit {
        table,
        provenance: Provenance::new("constants", model_json(&p)),
        format: None,
        path: None,
    })
}

fn graph(cli: &Cli, model: &ModelArgs, n: u32, sampler: SamplerId) -> Result<Emit> {
    let p = model_params(cli, model)?;
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    let g = sampler.sample(&p, n, seed)?;
    let mut table = Table::new(["i", "j"]);
    for &(i, j) in g.edges() {
        table.push(vec![i.into(), j.into()])?;
    }
    let mut provenance = Provenance::new(
        "graph",
        json!({"model": model_json(&p), "n": n, "sampler": sampler.as_str()}),
    );
    provenance.master_seed = Some(seed);
    Ok(Emit {
        table,
        provenance,
        format: None,
        path: None,
    })
}

fn components(cli: &Cli, model: &ModelArgs, n: u32, sampler: SamplerId, replicas: u64) -> Result<Emit> {
    let p = model_params(cli, model)?;
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    let plan = ReplicaPlan::new(seed, replicas, format!("components/n={n}"));
    let run = run_replicas(&plan, cli.workers, FailurePolicy::Continue, |_, s| {
        let stats = connected_components(&sampler.sample(&p, n, s)?);
        Ok((s, stats))
    })?;
    let mut table = Table::new(["replica", "seed", "largest", "components", "max_degree"]);
    for (index, (s, stats)) in &run.results {
        table.push(vec![
            (*index).into(),
            (*s).into(),
            stats.largest.into(),
            stats.component_count().into(),
            stats.max_degree.into(),
        ])?;
    }
    let mut provenance = Provenance::new(
        "components",
        json!({"model": model_json(&p), "n": n, "sampler": sampler.as_str(), "replicas": replicas}),
    );
    provenance.master_seed = Some(seed);
    provenance.replicas_requested = replicas;
    provenance.replicas_failed = run.failures.len() as u64;
    provenance.failures = run.failures;
    Ok(Emit {
        table,
        provenance,
        format: None,
        path: None,
    })
}

fn brw(cli: &Cli, model: &ModelArgs, u: f64, b: f64, replicas: u64, tilde_beta: Option<f64>) -> Result<Emit> {
    let p = model_params(cli, model)?;
    let walk = p.with_beta(tilde_beta.unwrap_or(p.beta()))?;
    let intensity = Intensity::from_params(&walk)?;
    if !(b > 0.0 && b < 1.0 && u > 0.0 && u < 1.0) {
        return Err(Error::Usage(format!("need u, b in (0, 1), got u = {u}, b = {b}")));
    }
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    let plan = ReplicaPlan::new(seed, replicas, format!("brw/u={u:e}"));
    let run = run_replicas(&plan, cli.workers, FailurePolicy::Continue, |_, s| {
        let mut rng = rng_from_seed(s);
        let tree = sample_killed_tree(&intensity, u.ln(), f64::NEG_INFINITY, 0.0, Caps::default(), &mut rng)?;
        Ok((s, tree.len(), tree.count_i(b.ln())?, tree.min_position(), tree.truncated))
    })?;
    let mut table = Table::new(["replica", "seed", "size", "count_i", "min_position", "truncated"]);
    for (index, (s, size, count, min, truncated)) in &run.results {
        table.push(vec![
            (*index).into(),
            (*s).into(),
            (*size).into(),
            (*count).into(),
            (*min).into(),
            (*truncated).into(),
        ])?;
    }
    let mut provenance = Provenance::new(
        "brw",
        json!({"model": model_json(&p), "walk_beta": walk.beta(), "u": u, "b": b, "replicas": replicas}),
    );
    provenance.master_seed = Some(seed);
    provenance.replicas_requested = replicas;
    provenance.replicas_failed = run.failures.len() as u64;
    provenance.failures = run.failures;
    Ok(Emit {
        table,
        provenance,
        format: None,
        path: None,
    })
}

#[allow(clippy::too_many_arguments)]
fn explore(
    cli: &Cli,
    model: &ModelArgs,
    tilde_beta: f64,
    u: f64,
    b: f64,
    epsilon: f64,
    a: f64,
    m: u64,
    targets: &[u64],
) -> Result<Emit> {
    let p = model_params(cli, model)?;
    let cfg = ExplorationConfig::new(&p, u, b, epsilon, a, tilde_beta, m)?;
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    let graph = VertexGraph::from_vertices(targets.iter().copied());
    let mut rng = rng_from_seed(seed);
    let result = algorithm1(&p, &cfg, &graph, targets, &mut rng)?;
    let mut table = Table::new(["target", "start_offset", "failure_reason", "y_size", "y_vertices"]);
    for (i, &t) in targets.iter().enumerate() {
        let y = &result.y_sets[i];
        let vertices: Vec<String> = y.iter().map(u64::to_string).collect();
        table.push(vec![
            t.into(),
            result.start_offsets[i].into(),
            result.outcomes[i].as_str().into(),
            y.len().into(),
            Cell::Text(vertices.join(" ")),
        ])?;
    }
    let mut provenance = Provenance::new(
        "explore",
        json!({"model": model_json(&p), "config": cfg, "targets": targets}),
    );
    provenance.master_seed = Some(seed);
    provenance.summary = json!({
        "graph_size": result.u_graph.len(),
        "y_threshold": result.y_threshold,
        "overflow_threshold": result.overflow_threshold,
    });
    Ok(Emit {
        table,
        provenance,
        format: None,
        path: None,
    })
}

fn experiment(cli: &Cli) -> Result<Emit> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Usage("experiment needs --config".into()))?;
    let mut cfg = read_config(path)?;
    if let Some(seed) = cli.seed {
        cfg.seeds.master_seed = seed;
    }
    let (table, provenance) = run_experiment(&cfg, cli.workers)?;
    if provenance.replicas_failed > 0 {
        eprintln!(
            "{} of {} replicas failed; see the failures in the output metadata",
            provenance.replicas_failed, provenance.replicas_requested
        );
    }
    Ok(Emit {
        table,
        provenance,
        format: Some(cfg.output.format),
        path: cfg.output.path,
    })
}

fn run(cli: &Cli) -> Result<()> {
    let emit = match &cli.command {
        Command::Constants { model } => constants(cli, model)?,
        Command::Graph { model, n, sampler } => graph(cli, model, *n, *sampler)?,
        Command::Components {
            model,
            n,
            sampler,
            replicas,
        } => components(cli, model, *n, *sampler, *replicas)?,
        Command::Brw {
            model,
            u,
            b,
            replicas,
            tilde_beta,
        } => brw(cli, model, *u, *b, *replicas, *tilde_beta)?,
        Command::Explore {
            model,
            tilde_beta,
            u,
            b,
            epsilon,
            a,
            m,
            targets,
        } => explore(cli, model, *tilde_beta, *u, *b, *epsilon, *a, *m, targets)?,
        Command::Experiment => experiment(cli)?,
    };
    let format = cli.format.or(emit.format).unwrap_or_default();
    let path = cli.out.clone().or(emit.path);
    write_output(&emit.table, &emit.provenance, format, path.as_deref())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}
