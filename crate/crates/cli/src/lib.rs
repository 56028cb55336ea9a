//! `refcolor` command line: run the pipeline, evaluate results, serve sessions.
//!
//! Exit codes: 0 success, 1 a stage failed, 2 usage or configuration error
//! (including unreadable inputs).

use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use refcolor_core::metrics::evaluate_dirs;
use refcolor_core::{io, Metric};
use refcolor_pipeline::{run_until, PipelineConfig, PipelineError, PipelineResult, ProviderConfig, Stage, StopAfter};
use refcolor_service::{AppState, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "refcolor", version, about = "Reference-based colorization of grayscale images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the full pipeline and write result.png with its artifacts.
    Colorize(RunArgs),
    /// Stop after composing the reference.
    Compose(RunArgs),
    /// Stop after refining hints; writes hints.json.
    Hints(RunArgs),
    /// Score same-named PNGs in two directories; writes metrics.json.
    Metrics(MetricsArgs),
    /// Start the session service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Grayscale input PNG.
    input: PathBuf,
    /// Output directory.
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
    /// TOML configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Candidate source, currently only `dir <path>`.
    #[arg(long, num_args = 2, value_names = ["KIND", "PATH"])]
    candidates: Option<Vec<String>>,
    /// Generation service endpoint.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    timeout_secs: Option<f64>,
    /// External HED boundary map sent to the generation service.
    #[arg(long)]
    hed_map: Option<PathBuf>,
    #[arg(long)]
    caption: Option<String>,
    /// External segment map (PNG labels or RLE JSON).
    #[arg(long)]
    segments: Option<PathBuf>,
    /// Feature grid of the input.
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    n_candidates: Option<usize>,
    #[arg(long)]
    n_hed: Option<usize>,
    #[arg(long)]
    n_segments: Option<usize>,
    #[arg(long)]
    compactness: Option<f64>,
    /// l1, l2 or cosine.
    #[arg(long)]
    metric: Option<Metric>,
    #[arg(long)]
    cell_size: Option<usize>,
    #[arg(long)]
    search_radius: Option<usize>,
    #[arg(long)]
    s_eps: Option<f64>,
    #[arg(long)]
    hint_cap: Option<usize>,
    #[arg(long)]
    dbscan_eps: Option<f64>,
    #[arg(long)]
    dbscan_min_pts: Option<usize>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    sigma_floor: Option<f64>,
    /// Seed forwarded to every stochastic stage.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    /// Directory of predicted PNGs.
    #[arg(long)]
    pred: PathBuf,
    /// Directory of ground-truth PNGs with the same names.
    #[arg(long)]
    gt: PathBuf,
    #[arg(short, long, default_value = "metrics.json")]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Where sessions are persisted.
    #[arg(long, default_value = "sessions")]
    data_dir: PathBuf,
    /// Idle time after which a session is deleted.
    #[arg(long, default_value_t = 24.0)]
    ttl_hours: f64,
    /// TOML pipeline defaults for new sessions.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn config_error(msg: impl Into<String>) -> PipelineError {
    PipelineError::message(Stage::Config, msg)
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, PipelineError> {
    path.map(PipelineConfig::load).transpose().map(Option::unwrap_or_default)
}

impl RunArgs {
    fn config(&self) -> Result<PipelineConfig, PipelineError> {
        let mut cfg = load_config(self.config.as_deref())?;
        match (&self.candidates, &self.endpoint) {
            (Some(_), Some(_)) => return Err(config_error("--candidates and --endpoint are mutually exclusive")),
            (Some(source), None) => {
                let [kind, path] = source.as_slice() else {
                    unreachable!("clap takes exactly two values");
                };
                if kind != "dir" {
                    return Err(config_error(format!("unknown candidate source {kind:?}; expected `dir <path>`")));
                }
                cfg.provider = Some(ProviderConfig::Dir { path: path.into() });
            }
            (None, Some(endpoint)) => {
                let (timeout, hed) = match cfg.provider.take() {
                    Some(ProviderConfig::Http {
                        timeout_secs, hed_map, ..
                    }) => (timeout_secs, hed_map),
                    _ => (300.0, None),
                };
                cfg.provider = Some(ProviderConfig::Http {
                    endpoint: endpoint.clone(),
                    timeout_secs: timeout,
                    hed_map: hed,
                });
            }
            (None, None) => {}
        }
        if self.timeout_secs.is_some() || self.hed_map.is_some() {
            let Some(ProviderConfig::Http { timeout_secs, hed_map, .. }) = &mut cfg.provider else {
                return Err(config_error("--timeout-secs and --hed-map need a generation endpoint"));
            };
            set(timeout_secs, self.timeout_secs);
            if self.hed_map.is_some() {
                *hed_map = self.hed_map.clone();
            }
        }
        set(&mut cfg.caption, self.caption.clone());
        if self.segments.is_some() {
            cfg.segments = self.segments.clone();
        }
        if self.features.is_some() {
            cfg.features = self.features.clone();
        }
        set(&mut cfg.n_candidates, self.n_candidates);
        if self.n_hed.is_some() {
            cfg.n_hed = self.n_hed;
        }
        set(&mut cfg.n_segments, self.n_segments);
        set(&mut cfg.compactness, self.compactness);
        set(&mut cfg.metric, self.metric);
        set(&mut cfg.cell_size, self.cell_size);
        set(&mut cfg.search_radius, self.search_radius);
        set(&mut cfg.s_eps, self.s_eps);
        set(&mut cfg.hint_cap, self.hint_cap);
        set(&mut cfg.dbscan_eps, self.dbscan_eps);
        set(&mut cfg.dbscan_min_pts, self.dbscan_min_pts);
        set(&mut cfg.solver.omega, self.omega);
        set(&mut cfg.solver.tol, self.tol);
        set(&mut cfg.solver.max_iter, self.max_iter);
        set(&mut cfg.solver.sigma_floor, self.sigma_floor);
        set(&mut cfg.seed, self.seed);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn summarize(out: &Path, stop: StopAfter, r: &PipelineResult) -> String {
    let mut line = format!(
        "{}: {} segments from {} candidates",
        out.display(),
        r.segments.count(),
        r.candidate_ids.len()
    );
    if let Some(h) = &r.hints {
        line += &format!(", {} hints", h.len());
    }
    if let (StopAfter::Result, Some(cf), Some(meta)) = (stop, r.colorfulness, r.solver) {
        line += &format!(
            ", CF {cf:.2}, solver {} iterations (residual {:.1e}{})",
            meta.iterations(),
            meta.residual(),
            if meta.converged() { "" } else { ", not converged" }
        );
    }
    line
}

fn run_pipeline_command(args: &RunArgs, stop: StopAfter) -> i32 {
    let outcome = args
        .config()
        .and_then(|cfg| run_until(&args.input, &args.out, &cfg, stop));
    match outcome {
        Ok(r) => {
            println!("{}", summarize(&args.out, stop, &r));
            0
        }
        Err(e) => {
            eprintln!("refcolor: {e}");
            e.exit_code()
        }
    }
}

fn run_metrics(args: &MetricsArgs) -> i32 {
    let report = match evaluate_dirs(&args.pred, &args.gt) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("refcolor: {e}");
            return match e {
                refcolor_core::Error::Io { .. } | refcolor_core::Error::InvalidParameter(_) => 2,
                _ => 1,
            };
        }
    };
    if let Err(e) = io::write_json(&args.output, &report) {
        eprintln!("refcolor: {e}");
        return 1;
    }
    println!(
        "{}: {} images, mean CF {:.2}, PSNR {:.2} dB, SSIM {:.4}",
        args.output.display(),
        report.per_image.len(),
        report.mean.cf,
        report.mean.psnr,
        report.mean.ssim
    );
    0
}

fn run_serve(args: &ServeArgs) -> i32 {
    let pipeline = match load_config(args.config.as_deref()).and_then(|c| c.validate().map(|_| c)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("refcolor: {e}");
            return 2;
        }
    };
    if !(args.ttl_hours > 0.0 && args.ttl_hours.is_finite()) {
        eprintln!("refcolor: --ttl-hours must be positive");
        return 2;
    }
    let mut cfg = ServiceConfig::new(&args.data_dir);
    cfg.idle_ttl = Duration::from_secs_f64(args.ttl_hours * 3600.0);
    cfg.pipeline = pipeline;

    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("refcolor: cannot start runtime: {e}");
            return 1;
        }
    };
    let served = runtime.block_on(async {
        let state = AppState::open(cfg)?;
        let listener = tokio::net::TcpListener::bind(args.addr).await?;
        println!("listening on http://{}", listener.local_addr()?);
        std::io::stdout().flush()?;
        refcolor_service::serve(listener, state).await
    });
    match served {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("refcolor: {e}");
            1
        }
    }
}

/// Parses `argv` (program name first) and runs the command; returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match &cli.command {
        Command::Colorize(a) => run_pipeline_command(a, StopAfter::Result),
        Command::Compose(a) => run_pipeline_command(a, StopAfter::Reference),
        Command::Hints(a) => run_pipeline_command(a, StopAfter::Hints),
        Command::Metrics(a) => run_metrics(a),
        Command::Serve(a) => run_serve(a),
    }
}
