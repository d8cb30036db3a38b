use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use distlap_cli::golden::Golden;
use distlap_cli::registry::{registry_get, registry_golden, registry_list, registry_source};
use distlap_cli::{run, CliError, Format, JobConfig, Outcome, EXIT_ANALYSIS, EXIT_GOLDEN, EXIT_OK};
use distlap_core::Exec;

#[derive(Parser)]
#[command(name = "distlap", version, about = "Horizontal Laplacians of generalized distributions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every analysis listed in the config.
    Run(Common),
    Fibers(Common),
    Presentation(Common),
    Metric(Common),
    Laplacian(Common),
    Symbol(Common),
    Ims(Common),
    Hull(Common),
    Derham(Common),
    Isometry(Common),
    Discretize(Common),
    Spectrum(Common),
    Probe(Common),
    /// List the built-in examples, or print one as TOML.
    Registry { label: Option<String> },
    /// Run a built-in example and compare against its golden.
    Golden {
        #[command(flatten)]
        common: Common,
        /// Golden file; the bundled one for --example when absent.
        #[arg(long)]
        golden: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long, conflicts_with = "example")]
    config: Option<PathBuf>,
    #[arg(long)]
    example: Option<String>,
    /// Directory for the report and its artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Tolerance override, `key=value`; repeatable.
    #[arg(long = "tol-override")]
    tol_override: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jet_order: Option<usize>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

impl Common {
    fn load(&self, only: Option<&str>) -> Result<JobConfig, CliError> {
        let mut cfg = match (&self.config, &self.example) {
            (Some(p), _) => {
                let src = std::fs::read_to_string(p).map_err(|source| CliError::Io { path: p.display().to_string(), source })?;
                JobConfig::from_toml(&src)?
            }
            (None, Some(l)) => registry_get(l)?,
            (None, None) => return Err(CliError::InvalidConfig("one of --config or --example is required".into())),
        };
        for t in &self.tol_override {
            cfg.set_tolerance(t)?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(j) = self.jet_order {
            cfg.options.jet_order = j;
        }
        if let Some(a) = only {
            cfg.analyses = vec![a.to_string()];
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    std::fs::create_dir_all(dir)
        .and_then(|_| std::fs::write(&path, contents))
        .map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

fn emit(common: &Common, cfg: &JobConfig, out: &Outcome) -> Result<(), CliError> {
    let body = out.report.render(common.format);
    let dir = common.out.clone().or_else(|| cfg.output.dir.clone().map(PathBuf::from));
    match dir {
        Some(dir) => {
            let ext = match common.format {
                Format::Json => "json",
                Format::Text => "txt",
                Format::Csv => "csv",
            };
            write(&dir, &format!("{}.report.{ext}", cfg.label), &body)?;
            for a in &out.artifacts {
                write(&dir, &a.name, &a.contents)?;
            }
        }
        None => print!("{body}"),
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    let exec = Exec::default();
    let (common, only) = match &cli.command {
        Command::Registry { label: None } => {
            for l in registry_list() {
                println!("{l}");
            }
            return Ok(EXIT_OK);
        }
        Command::Registry { label: Some(l) } => {
            print!("{}", registry_source(l)?);
            return Ok(EXIT_OK);
        }
        Command::Golden { common, golden } => {
            let cfg = common.load(None)?;
            let src = match (golden, &common.example) {
                (Some(p), _) => std::fs::read_to_string(p).map_err(|source| CliError::Io { path: p.display().to_string(), source })?,
                (None, Some(l)) => registry_golden(l)?.to_string(),
                (None, None) => return Err(CliError::Golden("--golden is required with --config".into())),
            };
            let g = Golden::parse(&src)?;
            let out = run(&cfg, exec)?;
            let diffs = g.compare(&out.report.to_value(), cfg.tolerances.get("golden").copied());
            if diffs.is_empty() {
                println!("{}: golden match ({} paths)", cfg.label, g.expected.len());
                return Ok(EXIT_OK);
            }
            for d in &diffs {
                println!("{d}");
            }
            return Ok(EXIT_GOLDEN);
        }
        Command::Run(c) => (c, None),
        Command::Fibers(c) => (c, Some("fibers")),
        Command::Presentation(c) => (c, Some("presentation")),
        Command::Metric(c) => (c, Some("metric")),
        Command::Laplacian(c) => (c, Some("laplacian")),
        Command::Symbol(c) => (c, Some("symbol")),
        Command::Ims(c) => (c, Some("ims")),
        Command::Hull(c) => (c, Some("hull")),
        Command::Derham(c) => (c, Some("derham")),
        Command::Isometry(c) => (c, Some("isometry")),
        Command::Discretize(c) => (c, Some("discretize")),
        Command::Spectrum(c) => (c, Some("spectrum")),
        Command::Probe(c) => (c, Some("probe")),
    };
    let cfg = common.load(only)?;
    let out = run(&cfg, exec)?;
    emit(common, &cfg, &out)?;
    Ok(if out.report.has_errors() { EXIT_ANALYSIS } else { EXIT_OK })
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
