use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pilotroute::harness::ablate::{ablate_gates, ablate_gates_csv, ablate_pilots, ablate_pilots_csv};
use pilotroute::harness::report;
use pilotroute::metrics::parse_metric;
use pilotroute::pilot::{assignments_csv, CorpusScope};
use pilotroute::routers::{route_pilot, SavedRouter};
use pilotroute::synth::CONFIG_FILE;
use pilotroute::{
    evaluate_run, generate_world, load_embedding_set, load_qrels, top_k, EmbeddingSet, Experiment, ExperimentConfig,
    ExperimentInputs, GateId, PilotLibrary, RetrievalRun, RouterKind, SimilarityMetric, SynthConfig,
};

#[derive(Parser)]
#[command(
    name = "pilotroute",
    version,
    about = "Route queries to domain-expert encoders with a pilot embedding library"
)]
struct Cli {
    /// Top-level seed; falls back to RR_SEED, then the config, then 10.
    #[arg(long, global = true, env = "RR_SEED")]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic multi-domain world.
    Synth(SynthArgs),
    /// Build the pilot embedding library from training queries.
    BuildLibrary(BuildLibraryArgs),
    /// Route query embeddings with a saved library or router.
    Route(RouteArgs),
    /// Retrieve top-k documents and write a TREC run.
    Retrieve(RetrieveArgs),
    /// Score a TREC run against qrels.
    Eval(EvalArgs),
    /// Run every router end to end and write the result tables.
    Experiment(ExperimentArgs),
    /// Gate-count and pilot-count ablations.
    Ablate(AblateArgs),
    /// Train a baseline router and save it as JSON.
    TrainRouter(TrainRouterArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// JSON file with generator settings; unset fields keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    domains: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Source {
    /// Experiment config (exp.json).
    #[arg(long, conflicts_with = "world", required_unless_present = "world")]
    config: Option<PathBuf>,
    /// Directory written by `synth`.
    #[arg(long)]
    world: Option<PathBuf>,
}

#[derive(Args)]
struct BuildLibraryArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    exclude_tied: bool,
    #[arg(long, value_parser = parse_scope)]
    corpus_scope: Option<CorpusScope>,
    #[arg(long)]
    out: PathBuf,
    /// Also write per-instance max-gate assignments.
    #[arg(long)]
    assignments: Option<PathBuf>,
}

#[derive(Args)]
struct RouteArgs {
    /// Base-encoder query embeddings.
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, conflicts_with = "router", required_unless_present = "router")]
    library: Option<PathBuf>,
    /// Router saved by `train-router`.
    #[arg(long)]
    router: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Query embeddings, used for every query.
    #[arg(long, required_unless_present = "routes")]
    queries: Option<PathBuf>,
    /// routes.csv; each query uses its selected gate's embedding.
    #[arg(long, conflicts_with = "queries", requires = "gate")]
    routes: Option<PathBuf>,
    /// Which router's rows to use from a routes file with several.
    #[arg(long = "use-router")]
    use_router: Option<String>,
    /// GATE=PATH query embeddings per gate.
    #[arg(long, value_parser = parse_gate_path)]
    gate: Vec<(GateId, PathBuf)>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value = "ip")]
    metric: SimilarityMetric,
    #[arg(long, default_value = "pilotroute")]
    tag: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long, default_value = "ndcg@10")]
    metric: String,
    /// Also print one line per query.
    #[arg(long)]
    per_query: bool,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    routers: Option<Vec<RouterKind>>,
    #[arg(long)]
    exclude_tied: bool,
    #[arg(long, value_parser = parse_scope)]
    corpus_scope: Option<CorpusScope>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    source: Source,
    /// Comma-separated gate order; repeat for several orders.
    #[arg(long)]
    order: Vec<String>,
    /// Every permutation of the configured gates.
    #[arg(long, conflicts_with = "order")]
    all_orders: bool,
    /// Pilot counts for the pilot ablation.
    #[arg(long, value_delimiter = ',')]
    ks: Vec<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainRouterArgs {
    #[command(flatten)]
    source: Source,
    /// head, expert or dataset.
    #[arg(long)]
    kind: RouterKind,
    #[arg(long)]
    out: PathBuf,
}

fn parse_scope(s: &str) -> Result<CorpusScope, String> {
    match s {
        "full" => Ok(CorpusScope::Full),
        "source_dataset" | "source-dataset" => Ok(CorpusScope::SourceDataset),
        _ => Err(format!("expected full or source_dataset, got {s:?}")),
    }
}

fn parse_gate_path(s: &str) -> Result<(GateId, PathBuf), String> {
    let (g, p) = s
        .split_once('=')
        .ok_or_else(|| format!("expected GATE=PATH, got {s:?}"))?;
    Ok((GateId::new(g).map_err(|e| e.to_string())?, PathBuf::from(p)))
}

fn load_config(source: &Source, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = match (&source.config, &source.world) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(dir)) => ExperimentConfig::for_world_dir(dir)?,
        (None, None) => bail!("one of --config or --world is required"),
    };
    if let Some(seed) = seed {
        cfg.settings.seed = seed;
    }
    Ok(cfg)
}

fn write_text(path: &PathBuf, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir.into(), e))?;
    }
    std::fs::write(path, text).map_err(|e| io_error(path.clone(), e))
}

fn io_error(path: PathBuf, source: std::io::Error) -> anyhow::Error {
    anyhow::Error::new(source).context(format!("writing {}", path.display()))
}

fn synth(args: SynthArgs, seed: Option<u64>) -> Result<()> {
    let mut config = match &args.config {
        Some(p) => SynthConfig::load(p)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(t) = args.domains {
        config.num_domains = t;
    }
    if let Some(d) = args.dim {
        config.dim = d;
    }
    let world = generate_world(&config)?;
    world.write(&args.out)?;
    log::info!("wrote {} gates to {}", world.gate_set.len(), args.out.display());
    println!("{}", args.out.join(CONFIG_FILE).display());
    Ok(())
}

fn build_library(args: BuildLibraryArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg = load_config(&args.source, seed)?;
    if let Some(k) = args.k {
        cfg.settings.k = k;
    }
    cfg.settings.exclude_tied |= args.exclude_tied;
    if let Some(scope) = args.corpus_scope {
        cfg.settings.corpus_scope = scope;
    }
    let inputs = ExperimentInputs::load(&cfg)?;
    let exp = Experiment::new(&inputs, cfg.settings.clone())?;
    let library = exp.library(&inputs.gate_set, cfg.settings.k)?;
    library.save(&args.out)?;
    if let Some(path) = &args.assignments {
        write_text(
            path,
            &assignments_csv(&exp.assignments(&inputs.gate_set), &inputs.gate_set)?,
        )?;
    }
    println!("{} entries", library.entries.len());
    Ok(())
}

fn route(args: RouteArgs) -> Result<()> {
    let queries = load_embedding_set(&args.queries)?;
    let (decisions, gates) = if let Some(path) = &args.library {
        let library = PilotLibrary::load(path)?;
        let decisions = queries
            .records()
            .iter()
            .map(|q| route_pilot(q, &library))
            .collect::<pilotroute::Result<Vec<_>>>()?;
        (decisions, library.gates)
    } else {
        let router = SavedRouter::load(args.router.as_ref().expect("clap enforces one source"))?;
        let decisions = queries
            .records()
            .iter()
            .map(|q| router.route(q))
            .collect::<pilotroute::Result<Vec<_>>>()?;
        (decisions, router.gates()?)
    };
    let text = report::decisions_csv(&decisions, &gates)?;
    match &args.out {
        Some(path) => write_text(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn retrieve(args: RetrieveArgs) -> Result<()> {
    if args.k == 0 {
        bail!("--k must be at least 1");
    }
    let corpus = load_embedding_set(&args.corpus)?;
    let mut run = RetrievalRun::new(args.tag.clone());
    let retrieve_one = |run: &mut RetrievalRun, id: &str, q: &[f32]| -> Result<()> {
        run.insert(id, top_k(q, &corpus, args.k, args.metric)?)?;
        Ok(())
    };
    match (&args.queries, &args.routes) {
        (Some(path), _) => {
            let queries = load_embedding_set(path)?;
            for q in queries.records() {
                retrieve_one(&mut run, &q.id, &q.vec)?;
            }
        }
        (None, Some(path)) => {
            let gates: Vec<(GateId, EmbeddingSet)> = args
                .gate
                .iter()
                .map(|(g, p)| Ok((g.clone(), load_embedding_set(p)?)))
                .collect::<Result<_>>()?;
            let rows = report::load_routes(path)?;
            let routers: std::collections::BTreeSet<&str> = rows.iter().map(|r| r.router.as_str()).collect();
            let wanted = match (&args.use_router, routers.len()) {
                (Some(r), _) => r.clone(),
                (None, 1) => routers.iter().next().unwrap().to_string(),
                (None, _) => bail!("routes file has several routers {routers:?}; pick one with --use-router"),
            };
            for row in rows.iter().filter(|r| r.router == wanted) {
                let (_, set) = gates
                    .iter()
                    .find(|(g, _)| g.as_str() == row.selected_gate)
                    .with_context(|| format!("no --gate embeddings for {}", row.selected_gate))?;
                let q = set
                    .get(&row.query_id)
                    .with_context(|| format!("gate {} has no embedding for {}", row.selected_gate, row.query_id))?;
                retrieve_one(&mut run, &row.query_id, q)?;
            }
        }
        (None, None) => bail!("one of --queries or --routes is required"),
    }
    run.save_trec(&args.out)?;
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let k = parse_metric(&args.metric)?;
    let run = RetrievalRun::load_trec(&args.run)?;
    let qrels = load_qrels(&args.qrels)?;
    let eval = evaluate_run(&run, &qrels, k)?;
    if args.per_query {
        for (q, s) in &eval.per_query {
            println!("{q}\t{s:.4}");
        }
    }
    if eval.skipped > 0 {
        log::warn!("{} run queries have no qrels and were skipped", eval.skipped);
    }
    println!("{:.4}", eval.mean);
    Ok(())
}

fn experiment(args: ExperimentArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg = load_config(&args.source, seed)?;
    if let Some(k) = args.k {
        cfg.settings.k = k;
    }
    if let Some(r) = args.routers {
        cfg.settings.routers = r;
    }
    cfg.settings.exclude_tied |= args.exclude_tied;
    if let Some(scope) = args.corpus_scope {
        cfg.settings.corpus_scope = scope;
    }
    let out_dir = args
        .out
        .or(cfg.out.clone())
        .context("no output directory: pass --out or set \"out\"")?;
    let inputs = ExperimentInputs::load(&cfg)?;
    let out = Experiment::new(&inputs, cfg.settings.clone())?.run()?;
    report::write_outputs(&out, &out_dir)?;
    print!("{}", report::results_csv(&out)?);
    Ok(())
}

fn ablate(args: AblateArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg = load_config(&args.source, seed)?;
    if let Some(k) = args.k {
        cfg.settings.k = k;
    }
    let inputs = ExperimentInputs::load(&cfg)?;
    let exp = Experiment::new(&inputs, cfg.settings.clone())?;
    let orders: Vec<Vec<GateId>> = if args.all_orders {
        permutations(inputs.gate_set.gates())
    } else {
        args.order
            .iter()
            .map(|o| o.split(',').map(|s| GateId::new(s.trim())).collect())
            .collect::<pilotroute::Result<_>>()?
    };
    if orders.is_empty() && args.ks.is_empty() {
        bail!("nothing to ablate: pass --order, --all-orders or --ks");
    }
    std::fs::create_dir_all(&args.out).map_err(|e| io_error(args.out.clone(), e))?;
    if !orders.is_empty() {
        let curves = orders
            .iter()
            .map(|o| {
                let label = o.iter().map(|g| g.as_str()).collect::<Vec<_>>().join(">");
                Ok((label, ablate_gates(&exp, o)?))
            })
            .collect::<pilotroute::Result<Vec<_>>>()?;
        write_text(&args.out.join(report::ABLATE_GATES_FILE), &ablate_gates_csv(&curves)?)?;
    }
    if !args.ks.is_empty() {
        let curve = ablate_pilots(&exp, &args.ks)?;
        write_text(&args.out.join(report::ABLATE_PILOTS_FILE), &ablate_pilots_csv(&curve)?)?;
    }
    Ok(())
}

fn permutations(items: &[GateId]) -> Vec<Vec<GateId>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head.clone());
            out.push(p);
        }
    }
    out
}

const TOO_FEW_LABELS: &str = "fewer than two distinct untied best-gate labels; nothing to train";

fn train_router(args: TrainRouterArgs, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(&args.source, seed)?;
    let inputs = ExperimentInputs::load(&cfg)?;
    let exp = Experiment::new(&inputs, cfg.settings.clone())?;
    let trained = exp.train_routers(&inputs.gate_set, cfg.settings.k, &[args.kind])?;
    let saved = match args.kind {
        RouterKind::Head => SavedRouter::Head(trained.head.trained().context(TOO_FEW_LABELS)?),
        RouterKind::Expert => SavedRouter::Expert(trained.expert.trained().context(TOO_FEW_LABELS)?),
        RouterKind::Dataset => SavedRouter::Dataset {
            metric: cfg.settings.metric,
            index: trained.dataset_index.context("no dataset declares a configured gate")?,
        },
        other => bail!("{other} is not a trainable router; use head, expert or dataset"),
    };
    saved.save(&args.out)?;
    Ok(())
}

/// 2 for filesystem failures, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let io = err.chain().any(|e| {
        e.downcast_ref::<std::io::Error>().is_some() || e.downcast_ref::<pilotroute::Error>().is_some_and(|e| e.is_io())
    });
    if io {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let seed = cli.seed;
    let result = match cli.cmd {
        Cmd::Synth(a) => synth(a, seed),
        Cmd::BuildLibrary(a) => build_library(a, seed),
        Cmd::Route(a) => route(a),
        Cmd::Retrieve(a) => retrieve(a),
        Cmd::Eval(a) => eval(a),
        Cmd::Experiment(a) => experiment(a, seed),
        Cmd::Ablate(a) => ablate(a, seed),
        Cmd::TrainRouter(a) => train_router(a, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
