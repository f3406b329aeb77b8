use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use enspost::domain::build_graph;
use enspost::marginal::{ModelDocument, MODEL_SCHEMA_VERSION};
use enspost::nnet::Checkpoint;
use enspost::pipeline::{
    case_scores_csv, compare_csv, compare_models, fit_models, generate_synthetic, histogram_csv, histograms,
    rolling_experiment, summarize, summary_csv, write_forecasts, write_observations, write_stations,
    ExperimentConfig, ExperimentData, ModelKind,
};
use enspost::Error;

#[derive(Parser, Debug)]
#[command(name = "enspost", version, about = "Ensemble post-processing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Reference model for skill scores and significance tests.
    #[arg(long = "ref", global = true)]
    reference: Option<String>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Configuration override, `key=value` with dotted keys.
    #[arg(long = "set", global = true, value_parser = parse_override)]
    overrides: Vec<(String, String)>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Check configuration and data, print a schema report.
    Validate,
    /// Write a synthetic dataset as CSV.
    Synth,
    /// Fit all configured models on the full data and write checkpoints.
    Train,
    /// Rolling-window verification; per-case and per-lead score tables.
    Evaluate,
    /// Diebold-Mariano tests against `--ref` with BH decisions.
    Compare,
    /// Multivariate rank histograms and reliability indices.
    Histogram,
}

fn parse_override(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got {s:?}"))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(format!("empty key in {s:?}"));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) | Failure::Core(Error::Config(_)) => 2,
            Failure::Core(Error::Degenerate(_) | Error::Numerical(_)) => 4,
            Failure::Core(_) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "usage",
            Failure::Core(e) => match e {
                Error::InvalidInput(_) => "invalid_input",
                Error::DimensionMismatch(_) => "dimension_mismatch",
                Error::Degenerate(_) => "degenerate",
                Error::Numerical(_) => "numerical",
                Error::Config(_) => "config",
                Error::Parse { .. } => "parse",
                Error::Io { .. } => "io",
                Error::Json(_) => "json",
            },
        }
    }

    fn message(&self) -> String {
        let text = match self {
            Failure::Usage(m) => m.clone(),
            Failure::Core(e) => e.to_string(),
        };
        text.split_whitespace().collect::<Vec<_>>().join(" ")
    }
}

type Outcome<T> = Result<T, Failure>;

/// Files produced by a command, written together once everything succeeded.
#[derive(Default)]
struct Artifacts {
    files: Vec<(PathBuf, String)>,
}

impl Artifacts {
    fn add(&mut self, rel: impl Into<PathBuf>, contents: String) {
        self.files.push((rel.into(), contents));
    }

    fn commit(self, root: &Path) -> Outcome<()> {
        let io = |p: &Path, e: std::io::Error| Failure::Core(Error::Io {
            path: p.to_path_buf(),
            source: e,
        });
        let mut staged = Vec::with_capacity(self.files.len());
        for (rel, contents) in &self.files {
            let target = root.join(rel);
            let dir = target.parent().unwrap_or(root).to_path_buf();
            std::fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
            let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| io(&dir, e))?;
            tmp.write_all(contents.as_bytes()).map_err(|e| io(&target, e))?;
            tmp.flush().map_err(|e| io(&target, e))?;
            staged.push((tmp, target));
        }
        for (tmp, target) in staged {
            tmp.persist(&target).map_err(|e| io(&target, e.error))?;
        }
        Ok(())
    }
}

struct Context {
    config: ExperimentConfig,
    seed: u64,
    header: String,
}

fn load_config(cli: &Cli) -> Outcome<Context> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Usage("--config is required".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Core(Error::Config(format!("{}: {e}", path.display()))))?;
    let mut config = ExperimentConfig::from_toml(&text, &cli.overrides)?;
    let base = path.parent().unwrap_or(Path::new("."));
    if let Some(d) = config.data.as_mut() {
        for p in [&mut d.forecasts, &mut d.observations, &mut d.stations] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
    if cli.command == Command::Synth {
        if let (Some(s), Some(seed)) = (config.synthetic.as_mut(), cli.seed) {
            s.seed = seed;
        }
    }
    let seed = match (cli.command, &config.synthetic) {
        (Command::Synth, Some(s)) => s.seed,
        _ => cli.seed.unwrap_or(0),
    };
    let header = format!("# seed={seed} config_sha256={}\n", config.fingerprint());
    Ok(Context { config, seed, header })
}

fn reference(cli: &Cli, required: bool) -> Outcome<Option<ModelKind>> {
    match &cli.reference {
        Some(r) => r
            .parse::<ModelKind>()
            .map(Some)
            .map_err(|e| Failure::Core(Error::Config(e.to_string()))),
        None if required => Err(Failure::Usage("--ref is required".into())),
        None => Ok(None),
    }
}

fn file_stem(m: ModelKind) -> String {
    m.label().to_lowercase().replace('-', "_")
}

fn validate(ctx: &Context) -> Outcome<()> {
    let data = ExperimentData::load(&ctx.config)?;
    let graph = build_graph(&data.stations, ctx.config.graph_threshold_km)?;
    let leads: BTreeSet<u32> = data.cases.iter().map(|c| c.lead_time).collect();
    let leads: Vec<String> = leads.iter().map(u32::to_string).collect();
    let (first, last) = (&data.cases[0], &data.cases[data.cases.len() - 1]);
    println!("status=ok");
    println!("variable={:?}", ctx.config.variable);
    println!("stations={}", data.stations.len());
    println!("cases={}", data.cases.len());
    println!("dropped_cases={}", data.dropped);
    println!("members={}", data.members());
    println!("lead_times={}", leads.join(";"));
    println!("first_init={}", enspost::pipeline::format_time(first.init_time));
    println!("last_init={}", enspost::pipeline::format_time(last.init_time));
    println!("graph_edges={}", graph.id_edges().len());
    println!("extra_covariate={}", data.extra.is_some());
    println!("config_sha256={}", ctx.config.fingerprint());
    Ok(())
}

fn synth(ctx: &Context, artifacts: &mut Artifacts) -> Outcome<()> {
    let spec = ctx
        .config
        .synthetic
        .as_ref()
        .ok_or_else(|| Failure::Core(Error::Config("synth needs a [synthetic] section".into())))?;
    let ds = generate_synthetic(spec)?;
    let render = |f: &dyn Fn(&mut Vec<u8>) -> enspost::Result<()>| -> Outcome<String> {
        let mut buf = ctx.header.clone().into_bytes();
        f(&mut buf)?;
        Ok(String::from_utf8(buf).expect("utf-8 csv"))
    };
    artifacts.add("stations.csv", render(&|b| write_stations(&ds.stations, b))?);
    artifacts.add("forecasts.csv", render(&|b| write_forecasts(&ds, b))?);
    artifacts.add("observations.csv", render(&|b| write_observations(&ds.observations, b))?);
    Ok(())
}

fn train(ctx: &Context, artifacts: &mut Artifacts) -> Outcome<()> {
    let data = ExperimentData::load(&ctx.config)?;
    let features = data.features(ctx.config.variable)?;
    let last = data.cases.iter().map(|c| c.init_time.date_naive()).max().expect("non-empty");
    let cutoff = (last + chrono::Duration::days(1)).and_hms_opt(0, 0, 0).expect("midnight").and_utc();
    let fitted = fit_models(&ctx.config, &data, &features, cutoff, ctx.seed)?;
    let json = |r: enspost::Result<String>| r.map_err(Failure::Core);

    for (lead, model) in &fitted.emos {
        let doc = ModelDocument::SemiLocalEmos {
            schema_version: MODEL_SCHEMA_VERSION,
            model: model.clone(),
        };
        artifacts.add(format!("models/emos_lead{lead}.json"), json(doc.to_json())?);
    }
    if let Some((model, std)) = &fitted.polr {
        let doc = ModelDocument::LocalPolr {
            schema_version: MODEL_SCHEMA_VERSION,
            model: model.clone(),
        };
        artifacts.add("models/polr.json", json(doc.to_json())?);
        artifacts.add("models/polr_standardizer.json", json(to_json(std))?);
    }
    if let Some((net, std)) = &fitted.mlp {
        artifacts.add("checkpoints/mlp.json", json(Checkpoint::from_network(net).to_json())?);
        artifacts.add("checkpoints/mlp_standardizer.json", json(to_json(std))?);
    }
    for (kind, nets) in &fitted.gnn {
        for (r, net) in nets.iter().enumerate() {
            artifacts.add(
                format!("checkpoints/{}_{r}.json", file_stem(*kind)),
                json(Checkpoint::from_network(net).to_json())?,
            );
        }
    }
    if let Some(std) = &fitted.gnn_standardizer {
        artifacts.add("checkpoints/gnn_standardizer.json", json(to_json(std))?);
    }
    for rec in &fitted.logs {
        let mut buf = ctx.header.clone().into_bytes();
        rec.log.write_csv(&mut buf).expect("write to memory");
        artifacts.add(
            format!("logs/{}_{}.csv", file_stem(rec.model), rec.repetition),
            String::from_utf8(buf).expect("utf-8 csv"),
        );
    }
    Ok(())
}

fn to_json<T: serde::Serialize>(v: &T) -> enspost::Result<String> {
    Ok(serde_json::to_string_pretty(v)?)
}

fn run(cli: &Cli) -> Outcome<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(Failure::Usage("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let ctx = load_config(cli)?;
    let mut artifacts = Artifacts::default();
    match cli.command {
        Command::Validate => return validate(&ctx),
        Command::Synth => synth(&ctx, &mut artifacts)?,
        Command::Train => train(&ctx, &mut artifacts)?,
        Command::Evaluate => {
            let reference = reference(cli, false)?;
            let data = ExperimentData::load(&ctx.config)?;
            let result = rolling_experiment(&ctx.config, &data, ctx.seed)?;
            let rows = summarize(&result, reference)?;
            artifacts.add("summary.csv", format!("{}{}", ctx.header, summary_csv(&rows)));
            artifacts.add("case_scores.csv", format!("{}{}", ctx.header, case_scores_csv(&result)));
        }
        Command::Compare => {
            let reference = reference(cli, true)?.expect("required");
            let data = ExperimentData::load(&ctx.config)?;
            let result = rolling_experiment(&ctx.config, &data, ctx.seed)?;
            let rows = compare_models(&result, reference, ctx.config.dm_variance(), ctx.config.alpha)?;
            artifacts.add("dm_tests.csv", format!("{}{}", ctx.header, compare_csv(&rows, reference)));
        }
        Command::Histogram => {
            let data = ExperimentData::load(&ctx.config)?;
            let result = rolling_experiment(&ctx.config, &data, ctx.seed)?;
            let rows = histograms(&result, ctx.seed)?;
            artifacts.add("histograms.csv", format!("{}{}", ctx.header, histogram_csv(&rows)));
        }
    }
    artifacts.commit(&cli.out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error code={} kind={} message={}", f.code(), f.kind(), f.message());
            ExitCode::from(f.code())
        }
    }
}
