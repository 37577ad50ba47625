//! `edukg`: batch construction, export, evaluation and the review service.
//!
//! Exit codes: 0 success, 1 usage, 2 input error, 3 external-service failure.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use edukg::evaluation::{
    load_rankings, metrics_report, sample_triples, SessionLog, SrsSession, DEFAULT_MOE_THRESHOLD, DEFAULT_Z,
};
use edukg::expansion::QueryCache;
use edukg::graph::EduKG;
use edukg::hitl::HitlService;
use edukg::layout::{extract_slides, GlyphDocument};
use edukg::pipelines::{Pipeline, PipelineError};
use edukg::services::{Endpoints, FixtureKnowledgeBase, KnowledgeFixture, ServiceBundle};
use edukg::store::GraphStore;
use edukg::transport::{HttpTransport, RetryPolicy};
use edukg::weighting::{AbstractCache, CachingEmbedder, Embedder, RemoteEmbedder, TestEmbedder};
use edukg::{PipelineConfig, PipelineMode};
use serde::Deserialize;
use serde_json::json;

const HTTP_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Parser)]
#[command(name = "edukg", version, about = "Educational knowledge graphs from slide decks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a graph document from a glyph file.
    Build {
        #[arg(long)]
        mode: Option<PipelineMode>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run report path; defaults to `<out>.report.json`.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write a graph document as a Cypher script.
    ExportCypher {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    #[command(subcommand)]
    Eval(Eval),
    /// Serve the review API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory persisting published graphs across restarts.
        #[arg(long)]
        journal: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum Eval {
    /// P@k, MRR and MAP over judged rankings (JSON lines).
    Metrics {
        #[arg(long)]
        judgments: PathBuf,
        #[arg(long, default_value_t = 15)]
        k: usize,
    },
    /// Accuracy estimate from a judgment session, or a triple sample to judge.
    Srs {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, required_unless_present = "sample")]
        session: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_Z)]
        z: f64,
        #[arg(long, default_value_t = DEFAULT_MOE_THRESHOLD)]
        moe: f64,
        /// Emit N sampled triples instead of a report.
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum Failure {
    Input(anyhow::Error),
    Service(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Service(_) => 3,
        }
    }
}

trait InputContext<T> {
    fn input(self, what: impl FnOnce() -> String) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> InputContext<T> for Result<T, E> {
    fn input(self, what: impl FnOnce() -> String) -> Result<T, Failure> {
        self.map_err(|e| Failure::Input(e.into().context(what())))
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
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
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Input(e) | Failure::Service(e)) = &f;
            eprintln!("error: {e:#}");
            ExitCode::from(f.code())
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Build {
            mode,
            input,
            out,
            config,
            report,
        } => build(mode, &input, &out, config.as_deref(), report),
        Command::ExportCypher { graph, out } => {
            let g = read_graph(&graph)?;
            std::fs::write(&out, g.to_cypher()).input(|| format!("writing {}", out.display()))
        }
        Command::Eval(Eval::Metrics { judgments, k }) => {
            let rankings = load_rankings(&judgments).input(|| format!("reading {}", judgments.display()))?;
            let r = metrics_report(&rankings, k).input(|| "scoring rankings".into())?;
            println!("rankings: {}", r.rankings);
            println!("P@{}: {:.4}", r.k, r.precision);
            println!("MRR: {:.4}", r.mrr);
            println!("MAP@{}: {:.4}", r.k, r.map);
            Ok(())
        }
        Command::Eval(Eval::Srs {
            graph,
            session,
            z,
            moe,
            sample,
            seed,
        }) => srs(&graph, session.as_deref(), z, moe, sample, seed),
        Command::Serve { addr, config, journal } => serve(addr, config.as_deref(), journal),
    }
}

/// Config file: `PipelineConfig` fields at top level, a `[services]` table
/// with either `fixture` (knowledge fixture path) or endpoint urls, and an
/// optional `cache_dir`.
#[derive(Deserialize, Default)]
struct FileConfig {
    #[serde(flatten)]
    pipeline: PipelineConfig,
    #[serde(default)]
    services: ServicesSection,
}

#[derive(Deserialize, Default)]
struct ServicesSection {
    fixture: Option<PathBuf>,
    cache_dir: Option<PathBuf>,
    #[serde(flatten)]
    endpoints: Endpoints,
}

fn load_config(path: Option<&Path>) -> Result<FileConfig, Failure> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path).input(|| format!("reading {}", path.display()))?;
    let mut cfg: FileConfig = toml::from_str(&text).input(|| format!("parsing {}", path.display()))?;
    cfg.pipeline
        .validate()
        .input(|| format!("checking {}", path.display()))?;
    // relative paths are relative to the config file
    let base = path.parent().unwrap_or(Path::new("."));
    for p in [&mut cfg.services.fixture, &mut cfg.services.cache_dir]
        .into_iter()
        .flatten()
    {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(cfg)
}

fn bundle(services: &ServicesSection) -> Result<ServiceBundle, Failure> {
    if let Some(path) = &services.fixture {
        let fixture = KnowledgeFixture::load(path).input(|| format!("reading {}", path.display()))?;
        return Ok(ServiceBundle::fixture(Arc::new(FixtureKnowledgeBase::new(fixture))));
    }
    let endpoints = services.endpoints.clone().with_env_overrides();
    let transport = Arc::new(HttpTransport::new(HTTP_TIMEOUT));
    let (abstracts, queries) = match &services.cache_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).input(|| format!("creating {}", dir.display()))?;
            (
                AbstractCache::open(&dir.join("abstracts.jsonl")).input(|| "opening abstract cache".into())?,
                QueryCache::open(&dir.join("sparql.jsonl")).input(|| "opening query cache".into())?,
            )
        }
        None => (AbstractCache::in_memory(), QueryCache::in_memory()),
    };
    let embedder: Arc<dyn Embedder> = match &endpoints.embed {
        Some(url) => Arc::new(CachingEmbedder::new(RemoteEmbedder::new(
            transport.clone(),
            url,
            &endpoints.embed_model,
        ))),
        None => {
            tracing::warn!("no embedding endpoint configured, using the deterministic test embedder");
            Arc::new(TestEmbedder)
        }
    };
    Ok(ServiceBundle::new(
        transport,
        &endpoints,
        embedder,
        Arc::new(abstracts),
        Arc::new(queries),
        RetryPolicy::default(),
    ))
}

fn build(
    mode: Option<PipelineMode>,
    input: &Path,
    out: &Path,
    config: Option<&Path>,
    report: Option<PathBuf>,
) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let text = std::fs::read_to_string(input).input(|| format!("reading {}", input.display()))?;
    let doc = GlyphDocument::parse(&text).input(|| format!("parsing {}", input.display()))?;
    let material = extract_slides(&doc).input(|| format!("extracting slides from {}", input.display()))?;
    let services = bundle(&cfg.services)?;
    let mode = mode.unwrap_or(cfg.pipeline.mode);

    let run = Pipeline::new(services.services(), cfg.pipeline.clone())
        .run(&material, mode)
        .map_err(|e| match e {
            PipelineError::Model(_) => Failure::Input(anyhow!(e).context("building graph")),
            e => Failure::Service(anyhow!(e).context("building graph")),
        })?;

    std::fs::write(out, run.graph.to_document()).input(|| format!("writing {}", out.display()))?;
    let mut nodes: BTreeMap<&str, usize> = BTreeMap::new();
    for n in run.graph.nodes() {
        *nodes.entry(n.kind.label()).or_default() += 1;
    }
    let mut edges: BTreeMap<&str, usize> = BTreeMap::new();
    for e in run.graph.edges() {
        *edges.entry(e.kind.label()).or_default() += 1;
    }
    let summary = json!({
        "material_id": material.id().0,
        "title": material.title(),
        "mode": mode,
        "slides": material.num_slides(),
        "config": cfg.pipeline,
        "keyphrase_calls": run.keyphrase_calls,
        "nodes": nodes,
        "edges": edges,
        "discarded": run.discarded,
        "warnings": run.warnings,
        "events": run.events,
    });
    let report = report.unwrap_or_else(|| {
        let mut name = out.as_os_str().to_owned();
        name.push(".report.json");
        PathBuf::from(name)
    });
    let mut body = serde_json::to_string_pretty(&summary).expect("report serializes");
    body.push('\n');
    std::fs::write(&report, body).input(|| format!("writing {}", report.display()))?;
    for w in &run.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "{}: {} nodes, {} edges ({mode}) -> {}",
        material.id(),
        run.graph.node_count(),
        run.graph.edge_count(),
        out.display()
    );
    Ok(())
}

fn read_graph(path: &Path) -> Result<EduKG, Failure> {
    let text = std::fs::read_to_string(path).input(|| format!("reading {}", path.display()))?;
    EduKG::from_document(&text).input(|| format!("parsing {}", path.display()))
}

fn srs(
    graph: &Path,
    session: Option<&Path>,
    z: f64,
    moe: f64,
    sample: Option<usize>,
    seed: u64,
) -> Result<(), Failure> {
    let g = read_graph(graph)?;
    if let Some(n) = sample {
        for t in sample_triples(&g, n, seed).input(|| "sampling triples".into())? {
            println!("{}", serde_json::to_string(&t).expect("triple serializes"));
        }
        return Ok(());
    }
    let session = session.expect("clap requires --session without --sample");
    let population = g.contains_triples();
    let judgments = SessionLog::read(session).input(|| format!("reading {}", session.display()))?;
    let known: std::collections::HashSet<_> = population.iter().collect();
    let mut s = SrsSession::new(population.clone(), z, moe);
    for j in judgments {
        if !known.contains(&j.triple) {
            return Err(Failure::Input(anyhow!(
                "judged triple {} is not in {}",
                j.triple,
                graph.display()
            )));
        }
        s.record(j).input(|| format!("reading {}", session.display()))?;
    }
    let report = s.report().input(|| "estimating accuracy".into())?;
    println!("{report}");
    Ok(())
}

fn serve(addr: SocketAddr, config: Option<&Path>, journal: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let services = Arc::new(bundle(&cfg.services)?);
    let store = match journal {
        Some(dir) => GraphStore::with_journal(&dir).input(|| format!("opening journal {}", dir.display()))?,
        None => GraphStore::new(),
    };
    let service = HitlService::with_store(services, cfg.pipeline, store);
    let runtime = tokio::runtime::Runtime::new()
        .context("starting runtime")
        .map_err(Failure::Service)?;
    runtime
        .block_on(edukg_service::serve(addr, service))
        .with_context(|| format!("serving on {addr}"))
        .map_err(Failure::Service)
}
