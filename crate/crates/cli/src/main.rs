use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use dnnr::dataset::{friedman1, load_features_csv, train_val_split, Dataset, StandardScaler};
use dnnr::experiment::{
    default_grid, fit_method, grid_search, run_bound_sim, run_experiment_on, run_friedman_sweep, BoundSimConfig,
    DatasetSpec, ExperimentConfig, Grid, Method, Params, ResultReport, SweepAxis, SweepRow,
};
use dnnr::featscale::{train_weights, ScaleTrainConfig};
use dnnr::inspect::{collect_relevance, export_traces};
use dnnr::metrics::mse;
use dnnr::nnindex::ScalingWeights;
use dnnr::predictor::{fit_dnnr, DnnrConfig};
use dnnr::theory::{ball_mass_uniform_cube, theorem1_conditions, BoundInputs, BoundReport};

#[derive(Parser)]
#[command(
    name = "dnnr",
    version,
    about = "Differential nearest neighbors regression benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tune and fit a method on a dataset, saving the fitted setup as JSON.
    Fit(FitArgs),
    /// Predict query rows with a setup saved by `fit`.
    Predict(PredictArgs),
    /// Cross-validated evaluation of one method.
    Evaluate(EvaluateArgs),
    /// Friedman-1 sweep over samples, noise or irrelevant features.
    Sweep(SweepArgs),
    /// Error-bound diagnostics.
    #[command(subcommand)]
    Bounds(BoundsCommand),
    /// Feature relevance and neighborhood traces of a DNNR fit.
    Inspect(InspectArgs),
    /// Write a Friedman-1 sample as CSV.
    GenFriedman1(GenArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// CSV path, or `friedman1:n=5000,d=10,noise=0,seed=0`.
    #[arg(long)]
    dataset: String,
    /// Target column: header name, zero-based index, or `last`.
    #[arg(long, default_value = "last")]
    target_col: String,
    /// The CSV has no header row.
    #[arg(long)]
    no_header: bool,
}

impl DataArgs {
    fn spec(&self) -> anyhow::Result<DatasetSpec> {
        parse_dataset(&self.dataset, &self.target_col, !self.no_header)
    }
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum Format {
    Json,
    Table,
    Csv,
}

#[derive(Args)]
struct OutArgs {
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    method: String,
    /// JSON file mapping hyperparameter names to value arrays.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the fitted setup.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    /// Setup written by `fit`.
    #[arg(long)]
    model: PathBuf,
    /// CSV of query rows.
    #[arg(long)]
    dataset: PathBuf,
    /// Target column present in the query file; its MSE is reported.
    #[arg(long)]
    target_col: Option<String>,
    #[arg(long)]
    no_header: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    method: String,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Force feature-weight learning on or off instead of the method default.
    #[arg(long)]
    scale_features: Option<bool>,
    /// Skip per-fold standardization.
    #[arg(long)]
    no_standardize: bool,
    #[command(flatten)]
    output: OutArgs,
}

#[derive(Args)]
struct SweepArgs {
    /// One of n_samples, noise, n_features.
    #[arg(long)]
    axis: String,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
    /// Comma-separated method names.
    #[arg(long, value_delimiter = ',', default_value = "dnnr,knn")]
    methods: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: OutArgs,
}

#[derive(Subcommand)]
enum BoundsCommand {
    /// Compare per-point tolerances with actual errors on Friedman-1.
    Simulate(SimulateArgs),
    /// Sample-size and neighbor-count conditions for a target tolerance.
    Conditions(ConditionsArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 10_000)]
    n_train: usize,
    #[arg(long, default_value_t = 2_000)]
    n_test: usize,
    #[arg(long, default_value_t = 7)]
    k: usize,
    #[arg(long, default_value_t = 32)]
    k_prime: usize,
    #[arg(long, default_value_t = 40.0)]
    lipschitz: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    n_features: usize,
    /// CSV of per-point tolerances, sorted by the DNNR tolerance.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConditionsArgs {
    #[arg(long)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long)]
    lipschitz: f64,
    #[arg(long)]
    tau: f64,
    #[arg(long, default_value_t = 1)]
    mu: u32,
    #[arg(long)]
    y_min: f64,
    #[arg(long)]
    y_max: f64,
    /// Ball mass; estimated for the uniform cube of `--dim` when absent.
    #[arg(long)]
    ball_mass: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    n_train: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: OutArgs,
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long)]
    k_prime: Option<usize>,
    /// Share of rows used as inspected queries.
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Learn feature weights first (relevance then reflects the learned metric).
    #[arg(long)]
    scaled: bool,
    /// Relevance summary CSV; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON export of the worst-predicted queries' neighborhoods.
    #[arg(long)]
    traces: Option<PathBuf>,
    /// Two dimensions to project the traces onto, e.g. `0,1`.
    #[arg(long, value_delimiter = ',', default_value = "0,1")]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    worst: usize,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 5000)]
    n_samples: usize,
    #[arg(long, default_value_t = 10)]
    n_features: usize,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// What `fit` saves: everything needed to rebuild the model.
#[derive(Serialize, Deserialize)]
struct FittedSetup {
    method: Method,
    params: Params,
    weights: Vec<f64>,
    scaler: StandardScaler,
    dataset: DatasetSpec,
    validation_mse: f64,
}

fn parse_dataset(spec: &str, target: &str, has_header: bool) -> anyhow::Result<DatasetSpec> {
    let Some(rest) = spec.strip_prefix("friedman1") else {
        return Ok(DatasetSpec::Csv {
            path: PathBuf::from(spec),
            target: target.to_string(),
            has_header,
        });
    };
    let (mut n, mut d, mut noise, mut seed) = (5000usize, 10usize, 0.0f64, 0u64);
    for kv in rest.trim_start_matches(':').split(',').filter(|s| !s.is_empty()) {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| anyhow!("expected key=value, got {kv:?}"))?;
        match k.trim() {
            "n" => n = v.trim().parse()?,
            "d" => d = v.trim().parse()?,
            "noise" => noise = v.trim().parse()?,
            "seed" => seed = v.trim().parse()?,
            other => bail!("unknown friedman1 option {other:?}"),
        }
    }
    Ok(DatasetSpec::Friedman1 {
        n_samples: n,
        n_features: d,
        noise,
        seed,
    })
}

fn read_grid(path: &Path) -> anyhow::Result<Grid> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading grid {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| dnnr::Error::InvalidConfig(format!("grid {}: {e}", path.display())).into())
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn fmt_params(p: &Params) -> String {
    p.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
}

fn report_table(reports: &[(String, &ResultReport)]) -> String {
    let mut s = format!(
        "{:<24} {:>10} {:>10} {:>8} {:>9}  {}\n",
        "run", "mse", "std", "r2", "time_s", "hyperparameters"
    );
    for (label, r) in reports {
        s += &format!(
            "{:<24} {:>10.4} {:>10.4} {:>8.4} {:>9.1}  {}\n",
            label,
            r.mean_mse,
            r.std_mse,
            r.r2,
            r.wall_time_s,
            fmt_params(&r.best_hyperparameters)
        );
    }
    s
}

fn report_csv(reports: &[(String, &ResultReport)]) -> String {
    let mut s = String::from("run,method,mean_mse,std_mse,r2,wall_time_s,hyperparameters\n");
    for (label, r) in reports {
        s += &format!(
            "{label},{},{:?},{:?},{:?},{:?},{}\n",
            r.method,
            r.mean_mse,
            r.std_mse,
            r.r2,
            r.wall_time_s,
            fmt_params(&r.best_hyperparameters)
        );
    }
    s
}

fn cmd_fit(args: FitArgs) -> anyhow::Result<()> {
    let method = Method::parse(&args.method)?;
    let spec = args.data.spec()?;
    let data = spec.load()?;
    let scaler = StandardScaler::fit(&data)?;
    let scaled = scaler.transform_dataset(&data)?;
    let d = data.n_features();
    let weights = if method.learns_weights() {
        let cfg = ScaleTrainConfig {
            seed: args.seed,
            ..ScaleTrainConfig::for_dim(d)
        };
        train_weights(&scaled, &cfg)?.final_weights
    } else {
        ScalingWeights::identity(d)
    };
    let grid = match &args.grid {
        Some(p) => read_grid(p)?,
        None => default_grid(method, scaled.n_samples(), d)?,
    };
    let (tr, va) = train_val_split(scaled.n_samples(), 0.2, args.seed)?;
    let (params, validation_mse) = grid_search(
        method,
        &grid,
        &scaled.select_rows(&tr)?,
        &scaled.select_rows(&va)?,
        &weights,
    )?;
    let setup = FittedSetup {
        method,
        params,
        weights: weights.into_inner(),
        scaler,
        dataset: spec,
        validation_mse,
    };
    emit(Some(&args.out), &serde_json::to_string_pretty(&setup)?)?;
    eprintln!(
        "{method}: {} (validation mse {validation_mse:.5})",
        fmt_params(&setup.params)
    );
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.model).with_context(|| format!("reading {}", args.model.display()))?;
    let setup: FittedSetup =
        serde_json::from_str(&text).map_err(|e| dnnr::Error::InvalidConfig(format!("model file: {e}")))?;
    let train = setup.scaler.transform_dataset(&setup.dataset.load()?)?;
    let weights = ScalingWeights::new(setup.weights.clone())?;
    let model = fit_method(setup.method, &setup.params, &train, &weights)?;
    let (queries, truth) = match &args.target_col {
        Some(t) => {
            let q = dnnr::dataset::load_csv(&args.dataset, &dnnr::dataset::TargetColumn::parse(t), !args.no_header)?;
            (q.features().to_owned(), Some(q.targets().to_vec()))
        }
        None => (load_features_csv(&args.dataset, !args.no_header)?.0, None),
    };
    let pred = model.predict_batch(setup.scaler.transform(queries.view())?.view())?;
    let mut s = String::from("prediction\n");
    for p in &pred {
        s += &format!("{p:?}\n");
    }
    emit(args.out.as_deref(), &s)?;
    if let Some(t) = truth {
        eprintln!("mse {:.6}", mse(&t, &pred));
    }
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> anyhow::Result<()> {
    let method = Method::parse(&args.method)?;
    let spec = args.data.spec()?;
    let mut cfg = ExperimentConfig::new(method, spec);
    cfg.folds = args.folds;
    cfg.seed = args.seed;
    cfg.standardize = !args.no_standardize;
    if let Some(s) = args.scale_features {
        cfg.scale_features = s;
    }
    if let Some(p) = &args.grid {
        cfg.grid = Some(read_grid(p)?);
    }
    let data = cfg.dataset.load()?;
    let report = run_experiment_on(&cfg, &data)?;
    let rows = [(method.name().to_string(), &report)];
    let text = match args.output.format {
        Format::Json => serde_json::to_string_pretty(&report)? + "\n",
        Format::Table => report_table(&rows),
        Format::Csv => report_csv(&rows),
    };
    emit(args.output.out.as_deref(), &text)
}

fn cmd_sweep(args: SweepArgs) -> anyhow::Result<()> {
    let axis = SweepAxis::parse(&args.axis)?;
    if args.values.is_empty() {
        return Err(dnnr::Error::InvalidConfig("no sweep values".into()).into());
    }
    let methods = args
        .methods
        .iter()
        .map(|m| Method::parse(m))
        .collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<SweepRow> = run_friedman_sweep(axis, &args.values, &methods, args.seed)?;
    let labelled: Vec<(String, &ResultReport)> = rows
        .iter()
        .map(|r| (format!("{}@{}", r.report.method, r.value), &r.report))
        .collect();
    let text = match args.output.format {
        Format::Json => serde_json::to_string_pretty(&rows)? + "\n",
        Format::Table => report_table(&labelled),
        Format::Csv => report_csv(&labelled),
    };
    emit(args.output.out.as_deref(), &text)
}

fn cmd_simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let result = run_bound_sim(&BoundSimConfig {
        n_train: args.n_train,
        n_test: args.n_test,
        k: args.k,
        k_prime: args.k_prime,
        lipschitz: args.lipschitz,
        seed: args.seed,
        n_features: args.n_features,
    })?;
    if let Some(p) = &args.out {
        result.write_csv(p)?;
    }
    println!("{}", result.summary_line());
    Ok(())
}

fn conditions_table(r: &BoundReport, mass: f64) -> String {
    let count = |c: &dnnr::theory::Count| match c.exact() {
        Some(v) => v.to_string(),
        None => format!("{:.3e}", c.value()),
    };
    let mut s = String::new();
    s += &format!("ball_mass     {mass:.6e}\n");
    s += &format!("h_star_dnnr   {:.6}\n", r.h_star_dnnr);
    s += &format!("h_star_knn    {:.6}\n", r.h_star_knn);
    s += &format!("n_required    {}\n", count(&r.n_required));
    s += &format!("n_sufficient  {}\n", count(&r.n_sufficient));
    s += &format!("k_min         {}\n", count(&r.k_min));
    s += &format!("k_max         {}\n", count(&r.k_max));
    s += &format!("eps_dnnr      {:.6}\n", r.eps_dnnr);
    s += &format!("eps_knn       {:.6}\n", r.eps_knn);
    s += &format!("feasible      {}\n", r.feasible);
    s
}

fn cmd_conditions(args: ConditionsArgs) -> anyhow::Result<()> {
    let mass = match (args.ball_mass, args.dim) {
        (Some(m), _) => m,
        (None, Some(d)) => {
            let h = (args.epsilon / (args.lipschitz * (1.0 + args.tau))).sqrt();
            ball_mass_uniform_cube(&vec![0.5; d], h, 100_000, args.seed)?.mass
        }
        (None, None) => return Err(dnnr::Error::InvalidConfig("give --ball-mass or --dim".into()).into()),
    };
    let report = theorem1_conditions(&BoundInputs {
        lipschitz: args.lipschitz,
        mu: args.mu,
        delta: args.delta,
        epsilon: args.epsilon,
        y_range: (args.y_min, args.y_max),
        ball_mass: mass,
        tau: args.tau,
        sigma_min: 0.0,
        h_max: None,
        n_train: args.n_train,
    })?;
    let text = match args.output.format {
        Format::Json => serde_json::to_string_pretty(&report)? + "\n",
        _ => conditions_table(&report, mass),
    };
    emit(args.output.out.as_deref(), &text)
}

fn cmd_inspect(args: InspectArgs) -> anyhow::Result<()> {
    if args.dims.len() != 2 {
        return Err(dnnr::Error::InvalidConfig("--dims takes exactly two dimensions".into()).into());
    }
    let data = args.data.spec()?.load()?;
    let d = data.n_features();
    let (tr, va) = train_val_split(data.n_samples(), args.val_fraction, args.seed)?;
    let train: Dataset = data.select_rows(&tr)?;
    let val = data.select_rows(&va)?;
    let scaler = StandardScaler::fit(&train)?;
    let (train, val) = (scaler.transform_dataset(&train)?, scaler.transform_dataset(&val)?);
    let mut cfg = DnnrConfig::new(args.k, args.k_prime.unwrap_or((4 * d).max(2)));
    let weights = if args.scaled {
        cfg.scaling = dnnr::predictor::Scaling::Learned;
        train_weights(
            &train,
            &ScaleTrainConfig {
                seed: args.seed,
                ..ScaleTrainConfig::for_dim(d)
            },
        )?
        .final_weights
    } else {
        ScalingWeights::identity(d)
    };
    let model = fit_dnnr(&train, &cfg, &weights)?;
    let queries: Vec<Vec<f64>> = val.features().outer_iter().map(|r| r.to_vec()).collect();
    let summary = collect_relevance(&model, &queries)?;
    let names = data.column_labels();
    match &args.out {
        Some(p) => summary.write_csv(p, &names)?,
        None => summary.write_csv_to(std::io::stdout().lock(), &names)?,
    }
    if let Some(path) = &args.traces {
        let truth = val.targets().to_vec();
        let mut worst: Vec<(usize, f64)> = queries
            .iter()
            .enumerate()
            .map(|(i, q)| Ok((i, (model.predict(q)? - truth[i]).abs())))
            .collect::<dnnr::Result<_>>()?;
        worst.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        worst.truncate(args.worst);
        let traces = worst
            .iter()
            .map(|&(i, _)| model.predict_traced(&queries[i]))
            .collect::<dnnr::Result<Vec<_>>>()?;
        let truths: Vec<f64> = worst.iter().map(|&(i, _)| truth[i]).collect();
        export_traces(&model, &traces, (args.dims[0], args.dims[1]), Some(&truths), path)?;
    }
    let ranked: Vec<&str> = summary.dimension_ranks.iter().map(|&j| names[j].as_str()).collect();
    eprintln!("dimensions by median relevance: {}", ranked.join(", "));
    Ok(())
}

fn cmd_gen(args: GenArgs) -> anyhow::Result<()> {
    let data = friedman1(args.n_samples, args.n_features, args.noise, args.seed)?;
    data.write_csv(&args.out)?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Bounds(BoundsCommand::Simulate(a)) => cmd_simulate(a),
        Command::Bounds(BoundsCommand::Conditions(a)) => cmd_conditions(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::GenFriedman1(a) => cmd_gen(a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<dnnr::Error>() {
        Some(e) if e.is_data_error() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
