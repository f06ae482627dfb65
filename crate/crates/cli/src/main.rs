use std::collections::BTreeSet;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use histoseek_client::Client;
use histoseek_core::api::{fetch_image, SearchHit, SearchRequest};
use histoseek_core::crawler::{self, CrawlConfig, DEFAULT_USER_AGENT};
use histoseek_core::ontology::load_profiles_dir;
use histoseek_core::{execute_search, DomainProfile, Repository, Snapshot};
use histoseek_server::ServiceConfig;

#[derive(Parser)]
#[command(
    name = "histoseek",
    version,
    about = "Domain-specific image search over grayscale histograms"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Crawl from seed URLs and index images of domain-relevant pages.
    Crawl(CrawlArgs),
    /// Find indexed images matching a query image.
    Search(SearchArgs),
    /// Write every repository entry to a JSON-Lines file.
    Export(ExportArgs),
    /// Upsert entries from a JSON-Lines file into the repository.
    Import(ImportArgs),
    /// Run the HTTP search service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct CrawlArgs {
    /// Domain profile document (JSON).
    #[arg(long)]
    profile: PathBuf,
    /// Seeds file, one absolute URL per line.
    #[arg(long)]
    seeds: PathBuf,
    #[arg(long, env = "HISTOSEEK_DB")]
    db: PathBuf,
    #[arg(long, default_value_t = 100)]
    max_pages: usize,
    #[arg(long, default_value_t = 5)]
    max_depth: u32,
    /// Pause between two requests to the same host.
    #[arg(long, default_value_t = 250)]
    delay_ms: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Follow links to hosts other than the seeds'.
    #[arg(long)]
    allow_offsite: bool,
    #[arg(long)]
    ignore_robots: bool,
    #[arg(long, default_value = DEFAULT_USER_AGENT)]
    user_agent: String,
    /// Do not keep image copies for thumbnails.
    #[arg(long)]
    no_image_cache: bool,
}

#[derive(Args)]
struct SearchArgs {
    /// Query image: a file path or an http(s) URL.
    #[arg(long)]
    image: String,
    #[arg(long, default_value = "exact")]
    mode: String,
    /// Percentage points of distribution mass allowed to differ (probable mode).
    #[arg(long, allow_negative_numbers = true)]
    tolerance: Option<i64>,
    #[arg(long)]
    domain: String,
    /// Inclusive relevance range as MIN,MAX; defaults to the domain's bounds.
    #[arg(long, value_parser = parse_range)]
    relevance_range: Option<[f64; 2]>,
    /// Search a local repository file.
    #[arg(long, env = "HISTOSEEK_DB", conflicts_with = "server")]
    db: Option<PathBuf>,
    /// Search through a running service instead, e.g. http://127.0.0.1:8080.
    #[arg(long, env = "HISTOSEEK_SERVER")]
    server: Option<String>,
    /// Directory of profiles naming the known domains (local mode).
    #[arg(long)]
    profiles: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long, env = "HISTOSEEK_DB")]
    db: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ImportArgs {
    #[arg(long, env = "HISTOSEEK_DB")]
    db: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "HISTOSEEK_DB")]
    db: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long)]
    profiles_dir: Option<PathBuf>,
    /// Directory of built web console assets.
    #[arg(long)]
    static_ui_dir: Option<PathBuf>,
    #[arg(long, default_value_t = histoseek_server::DEFAULT_MAX_UPLOAD_BYTES)]
    max_upload_bytes: usize,
}

fn parse_range(s: &str) -> Result<[f64; 2], String> {
    let (a, b) = s.split_once(',').ok_or("expected MIN,MAX")?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    Ok([parse(a)?, parse(b)?])
}

/// Bad input exits 2, anything else that fails exits 1.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();

    let cli = Cli::parse();
    let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
    let outcome = runtime.block_on(async {
        match cli.command {
            Command::Crawl(a) => crawl(a).await,
            Command::Search(a) => search(a).await,
            Command::Export(a) => export(a),
            Command::Import(a) => import(a),
            Command::Serve(a) => serve(a).await,
        }
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

async fn crawl(a: CrawlArgs) -> Result<(), Failure> {
    let profile = DomainProfile::load(&a.profile).map_err(usage)?;
    let seeds = crawler::read_seeds(&a.seeds).map_err(usage)?;
    let mut config = CrawlConfig::new(seeds).map_err(usage)?;
    config.max_pages = a.max_pages;
    config.max_depth = a.max_depth;
    config.per_host_delay = Duration::from_millis(a.delay_ms);
    config.workers = a.workers;
    config.same_host_only = !a.allow_offsite;
    config.respect_robots = !a.ignore_robots;
    config.user_agent = a.user_agent;
    config.cache_images = !a.no_image_cache;
    config.validate().map_err(usage)?;

    let repo = Repository::open(&a.db)?;
    let report = crawler::crawl(&config, &profile, &repo).await?;
    repo.compact()?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

async fn search(a: SearchArgs) -> Result<(), Failure> {
    let mut request = SearchRequest {
        image_url: None,
        image_b64: None,
        mode: a.mode,
        tolerance: a.tolerance,
        domain: a.domain,
        relevance_range: a.relevance_range,
    };
    let query = request.query().map_err(usage)?;
    let is_url = a.image.starts_with("http://") || a.image.starts_with("https://");

    let hits: Vec<SearchHit> = match (a.server, a.db) {
        (Some(server), _) => {
            let client = Client::new(&server).map_err(usage)?;
            if is_url {
                request.image_url = Some(a.image);
            } else {
                let bytes = std::fs::read(&a.image)
                    .with_context(|| format!("reading query image {}", a.image))
                    .map_err(usage)?;
                request.set_image_bytes(&bytes);
            }
            match client.search(&request).await {
                Ok(hits) => hits,
                Err(e) if e.is_rejection() => return Err(usage(e)),
                Err(e) => return Err(e.into()),
            }
        }
        (None, Some(db)) => {
            let bytes = if is_url {
                fetch(&a.image).await.map_err(usage)?
            } else {
                std::fs::read(&a.image)
                    .with_context(|| format!("reading query image {}", a.image))
                    .map_err(usage)?
            };
            let snapshot = Snapshot::load(&db)?;
            let known: BTreeSet<String> = match &a.profiles {
                Some(dir) => load_profiles_dir(dir)
                    .map_err(usage)?
                    .iter()
                    .map(|p| p.name().to_string())
                    .collect(),
                None => BTreeSet::new(),
            };
            let results = execute_search(&query, &bytes, &snapshot, &known).map_err(|e| match e {
                histoseek_core::search::SearchError::Store(s) => Failure::Runtime(s.into()),
                other => usage(other),
            })?;
            results.iter().map(SearchHit::from).collect()
        }
        (None, None) => return Err(usage(anyhow!("either --db or --server is required"))),
    };

    let mut out = std::io::stdout().lock();
    for hit in &hits {
        serde_json::to_writer(&mut out, hit)?;
        writeln!(out)?;
    }
    Ok(())
}

async fn fetch(url: &str) -> anyhow::Result<Vec<u8>> {
    let url = url::Url::parse(url)?;
    let client = reqwest::Client::builder().user_agent(DEFAULT_USER_AGENT).build()?;
    Ok(fetch_image(&client, url, histoseek_server::DEFAULT_MAX_UPLOAD_BYTES).await?)
}

fn export(a: ExportArgs) -> Result<(), Failure> {
    let snapshot = Snapshot::load(&a.db)?;
    snapshot.export_jsonl(&a.out)?;
    eprintln!("exported {} entries to {}", snapshot.len(), a.out.display());
    Ok(())
}

fn import(a: ImportArgs) -> Result<(), Failure> {
    let repo = Repository::open(&a.db)?;
    let n = repo.import_jsonl(&a.input).map_err(|e| match e {
        histoseek_core::repository::StoreError::Malformed { .. } => usage(e),
        other => other.into(),
    })?;
    repo.compact()?;
    eprintln!("imported {n} entries into {}", a.db.display());
    Ok(())
}

async fn serve(a: ServeArgs) -> Result<(), Failure> {
    let config = ServiceConfig {
        bind: SocketAddr::new(a.host, a.port),
        db_path: a.db,
        profiles_dir: a.profiles_dir,
        static_ui_dir: a.static_ui_dir,
        max_upload_bytes: a.max_upload_bytes,
    };
    histoseek_server::serve(config).await.map_err(|e| match e {
        histoseek_server::StartupError::Io(_) => Failure::Runtime(e.into()),
        other => usage(other),
    })
}
