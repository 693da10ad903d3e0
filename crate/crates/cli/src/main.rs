use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use lnmfa::io::{self, ResultRef, RunConfig, SimSpecDoc};
use lnmfa::mixture::{InitKind, InitSpec};
use lnmfa::simulate;
use lnmfa::{ari, fit_aecm, grid_search, par, CountMatrix, Error, Exec, FitConfig, GridSpec, ModelConstraint};

#[derive(Parser)]
#[command(
    name = "lnmfa",
    version,
    about = "Cluster compositional count data with mixtures of logistic normal multinomial factor analyzers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a count table from a built-in specification.
    Simulate(SimulateArgs),
    /// Fit one (G, q, model) cell.
    Fit(FitArgs),
    /// Fit a grid of cells and pick the best by BIC.
    Select(SelectArgs),
    /// Adjusted Rand index of two label files.
    Ari { a: PathBuf, b: PathBuf },
    /// Print the parameters of the built-in specifications.
    Info {
        /// study1 or study2; both when omitted.
        name: Option<String>,
    },
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value = "study1")]
    builtin: String,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for counts.csv and labels.csv.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    input: PathBuf,
    /// JSON result file.
    #[arg(long)]
    output: Option<PathBuf>,
    /// CSV of 1-based hard labels.
    #[arg(long)]
    labels_out: Option<PathBuf>,
    /// Taxon used as the ALR reference (default: last column).
    #[arg(long)]
    reference: Option<String>,
    /// gaussian, kmeans or random.
    #[arg(long, default_value = "gaussian")]
    init: InitKind,
    #[arg(long, default_value_t = 1e-2)]
    eps: f64,
    #[arg(long, default_value_t = 500)]
    max_sweeps: usize,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long = "G")]
    g: usize,
    #[arg(long)]
    q: usize,
    #[arg(long, default_value = "UUU")]
    model: ModelConstraint,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Start from this partition (1-based labels) instead of `--init`.
    #[arg(long)]
    init_labels: Option<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    common: Common,
    /// Inclusive range `a..b` or comma list.
    #[arg(long = "G", default_value = "1..4")]
    g: String,
    #[arg(long, default_value = "1..4")]
    q: String,
    /// `all` or comma-separated codes.
    #[arg(long, default_value = "all")]
    models: String,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    seeds: Vec<u64>,
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let error = e.into();
        let code = match error.downcast_ref::<Error>() {
            Some(Error::InvalidArgument(_)) | Some(Error::Dimension(_)) => 2,
            _ => 1,
        };
        Failure { code, error }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure { code: 2, error: anyhow::anyhow!(msg.into()) }
}

fn parse_list(s: &str, what: &str) -> Result<Vec<usize>, Failure> {
    let bad = || usage(format!("cannot read {what} values from {s:?}; use a..b or a,b,c"));
    if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect()
}

fn parse_models(s: &str) -> Result<Vec<ModelConstraint>, Failure> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(ModelConstraint::ALL.to_vec());
    }
    s.split(',').map(|x| x.trim().parse::<ModelConstraint>().map_err(|e| usage(e.to_string()))).collect()
}

fn load(common: &Common) -> Result<CountMatrix, Failure> {
    let w = io::read_counts(&common.input)?;
    Ok(match &common.reference {
        Some(r) => w.with_reference(r)?,
        None => w,
    })
}

fn fit_config(common: &Common) -> FitConfig {
    FitConfig {
        eps: common.eps,
        max_sweeps: common.max_sweeps,
        exec: if common.workers > 1 { Exec::Parallel } else { Exec::Sequential },
        ..FitConfig::default()
    }
}

fn run_config(common: &Common, fit: FitConfig, seeds: Vec<u64>, grid: Option<GridSpec>) -> RunConfig {
    let show = |p: &Path| p.display().to_string();
    RunConfig {
        fit,
        seeds,
        workers: common.workers,
        grid,
        input: Some(show(&common.input)),
        output: common.output.as_deref().map(show),
        reference: common.reference.clone(),
    }
}

fn simulate_cmd(args: SimulateArgs) -> Result<(), Failure> {
    let mut spec = simulate::builtin_spec(&args.builtin)?;
    if let Some(n) = args.n {
        spec.n = n;
    }
    spec.seed = args.seed;
    let out = simulate::generate(&spec)?;
    std::fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let counts = args.out_dir.join("counts.csv");
    let labels = args.out_dir.join("labels.csv");
    io::write_counts(&out.counts, &counts)?;
    io::write_labels(out.counts.sample_ids(), &out.true_labels, &labels)?;
    println!("wrote {} and {}", counts.display(), labels.display());
    Ok(())
}

fn fit_cmd(args: FitArgs) -> Result<(), Failure> {
    let w = load(&args.common)?;
    let cfg = fit_config(&args.common);
    let init = match &args.init_labels {
        Some(p) => {
            let raw = io::read_labels(p)?;
            let labels = raw
                .iter()
                .map(|l| match l.parse::<usize>() {
                    Ok(x) if x >= 1 => Ok(x - 1),
                    _ => Err(usage(format!("{}: label {l:?} is not a positive integer", p.display()))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            InitSpec::Labels(labels)
        }
        None => args.common.init.with_seed(args.seed),
    };
    let rc = run_config(&args.common, cfg.clone(), vec![args.seed], None);
    let fit = par::with_workers(args.common.workers, || fit_aecm(&w, args.g, args.q, args.model, &init, &cfg))??;
    println!(
        "{} G={} q={}: objective {:.4}, BIC {:.4}, {} sweeps, converged {}",
        fit.model, fit.g, fit.q, fit.objective, fit.bic, fit.sweeps, fit.converged
    );
    if let Some(out) = &args.common.output {
        io::write_result(ResultRef::Fit(&fit), w.sample_ids(), &rc, out)?;
    }
    if let Some(out) = &args.common.labels_out {
        io::write_labels(w.sample_ids(), &fit.labels, out)?;
    }
    Ok(())
}

fn select_cmd(args: SelectArgs) -> Result<(), Failure> {
    let w = load(&args.common)?;
    let cfg = fit_config(&args.common);
    let grid = GridSpec {
        g_values: parse_list(&args.g, "G")?,
        q_values: parse_list(&args.q, "q")?,
        models: parse_models(&args.models)?,
        seeds: args.seeds.clone(),
        init: args.common.init,
    };
    grid.validate()?;
    let rc = run_config(&args.common, cfg.clone(), args.seeds.clone(), Some(grid.clone()));
    println!("cells: {}", grid.n_cells());
    let report = par::with_workers(args.common.workers, || grid_search(&w, &grid, &cfg))??;
    let win = &report.winner;
    println!(
        "winner: {} G={} q={} BIC {:.4} (seed {}, converged {})",
        win.model,
        win.g,
        win.q,
        win.bic.unwrap_or(f64::NAN),
        win.seed,
        win.converged
    );
    if let Some(out) = &args.common.output {
        io::write_result(ResultRef::Selection(&report), w.sample_ids(), &rc, out)?;
    }
    if let Some(out) = &args.common.labels_out {
        io::write_labels(w.sample_ids(), &report.fit.labels, out)?;
    }
    Ok(())
}

fn ari_cmd(a: &Path, b: &Path) -> Result<(), Failure> {
    let la = io::read_labels(a)?;
    let lb = io::read_labels(b)?;
    if la.len() != lb.len() {
        return Err(usage(format!("{} has {} labels but {} has {}", a.display(), la.len(), b.display(), lb.len())));
    }
    println!("{:?}", ari(&la, &lb)?);
    Ok(())
}

fn info_cmd(name: Option<String>) -> Result<(), Failure> {
    let specs = match name {
        Some(n) => vec![(n.clone(), simulate::builtin_spec(&n)?)],
        None => simulate::builtin_specs().into_iter().map(|(n, s)| (n.to_string(), s)).collect(),
    };
    let docs: Vec<SimSpecDoc> = specs.iter().map(|(n, s)| SimSpecDoc::new(n, s)).collect();
    println!("lnmfa {}", io::VERSION);
    println!("{}", serde_json::to_string_pretty(&docs).context("serializing specifications")?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate_cmd(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Select(a) => select_cmd(a),
        Command::Ari { a, b } => ari_cmd(&a, &b),
        Command::Info { name } => info_cmd(name),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
