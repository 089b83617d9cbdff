use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use aqr_core::bench::{self, SweepAxis};
use aqr_core::dataset::{self, gen_clustered, gen_clustered_queries};
use aqr_core::search::search_batch;
use aqr_core::{BuildConfig, Dataset, DensityConfig, GraphIndex, IdMatrix, IndexMode, SearchConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aqr", version, about = "Density-adaptive quantized HNSW: build, query and benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a clustered synthetic dataset (and optionally matching queries).
    Gen(GenArgs),
    /// Brute-force k nearest neighbours of each query.
    Gt(GtArgs),
    /// Build an index and save it.
    Build(BuildArgs),
    /// Run queries and print the result ids.
    Query(QueryArgs),
    /// Measure QPS, latency and recall.
    Bench(BenchArgs),
    /// Measure along one search-parameter axis.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[arg(long, default_value_t = 10)]
    clusters: usize,
    #[arg(long, default_value_t = 20.0)]
    spread: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write this many queries from the same model.
    #[arg(long, requires = "queries_out")]
    queries: Option<usize>,
    #[arg(long)]
    queries_out: Option<PathBuf>,
}

#[derive(Args)]
struct GtArgs {
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value_t = 100)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// baseline, sq or aqr
    #[arg(long, default_value = "aqr")]
    mode: IndexMode,
    #[arg(long, default_value_t = 16)]
    m: usize,
    #[arg(long, default_value_t = 200)]
    ef_construction: usize,
    #[arg(long, default_value_t = 10)]
    k_density: usize,
    #[arg(long, default_value_t = 5.0)]
    p_max: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value = "0.95-0.97")]
    preset: String,
    #[arg(long)]
    no_early_termination: bool,
    #[arg(long)]
    nc: Option<usize>,
    #[arg(long)]
    nrerank: Option<usize>,
    #[arg(long)]
    tau_gap: Option<f64>,
    #[arg(long)]
    tau_ratio: Option<f64>,
    #[arg(long)]
    mef: Option<usize>,
    /// Beam width, replacing nc * mef.
    #[arg(long)]
    ef: Option<usize>,
}

impl SearchArgs {
    fn config(&self) -> Result<SearchConfig> {
        let mut c = bench::preset(&self.preset)?;
        c.k = self.k;
        c.n_coarse = self.nc.unwrap_or(c.n_coarse);
        c.n_rerank = self.nrerank.unwrap_or(c.n_rerank);
        c.tau_gap = self.tau_gap.unwrap_or(c.tau_gap);
        c.tau_ratio = self.tau_ratio.unwrap_or(c.tau_ratio);
        c.m_ef = self.mef.unwrap_or(c.m_ef);
        c.ef_search = self.ef.or(c.ef_search);
        c.early_termination &= !self.no_early_termination;
        // a preset's coarse pool must still cover k
        if self.nc.is_none() {
            c.n_coarse = c.n_coarse.max(c.k);
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[command(flatten)]
    search: SearchArgs,
    /// Write result ids as ivecs instead of printing them.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct MeasureArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long, default_value_t = 100)]
    warmup: usize,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// Cycle the query set this many times (truth rows are cycled alike).
    #[arg(long, default_value_t = 1)]
    repeat_queries: usize,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    measure: MeasureArgs,
}

#[derive(Args)]
struct SweepArgs {
    /// n_coarse, n_rerank, tau_gap, tau_ratio, m_ef or ef_search
    #[arg(long)]
    axis: SweepAxis,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[command(flatten)]
    measure: MeasureArgs,
}

fn load_vectors(path: &Path) -> Result<Dataset> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or_default();
    let data = match ext {
        "bvecs" => dataset::load_bvecs(path),
        _ => dataset::load_fvecs(path),
    };
    data.with_context(|| format!("reading {}", path.display()))
}

fn load_index(path: &Path) -> Result<GraphIndex> {
    GraphIndex::load(path).with_context(|| format!("reading {}", path.display()))
}

fn gen(a: &GenArgs) -> Result<()> {
    let base = gen_clustered(a.n, a.d, a.clusters, a.spread, a.seed)?;
    dataset::save_fvecs(&a.out, &base).with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!("wrote {} vectors of dimension {} to {}", base.len(), base.dim(), a.out.display());
    if let (Some(count), Some(path)) = (a.queries, &a.queries_out) {
        let q = gen_clustered_queries(count, a.d, a.clusters, a.spread, a.seed)?;
        dataset::save_fvecs(path, &q).with_context(|| format!("writing {}", path.display()))?;
        eprintln!("wrote {} queries to {}", q.len(), path.display());
    }
    Ok(())
}

fn gt(a: &GtArgs) -> Result<()> {
    let base = load_vectors(&a.base)?;
    let queries = load_vectors(&a.queries)?;
    let start = Instant::now();
    let truth = bench::ground_truth(&base, &queries, a.k)?;
    dataset::save_ivecs(&a.out, &truth).with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!(
        "ground truth for {} queries (k={}) in {:.2}s",
        queries.len(),
        truth.width(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn build(a: &BuildArgs) -> Result<()> {
    let data = load_vectors(&a.input)?;
    let config = BuildConfig {
        mode: a.mode,
        m0: a.m,
        ef0: a.ef_construction,
        p_max: a.p_max,
        density: DensityConfig {
            k: a.k_density,
            seed: a.seed,
            ..Default::default()
        },
        seed: a.seed,
        ..Default::default()
    };
    let (index, report) = GraphIndex::build_with_report(data, &config)?;
    index.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let p = report.graph_params;
    print!(
        "mode={} n={} d={} M={} ef_construction={} build_seconds={:.3} graph_seconds={:.3} distance_evals={}",
        report.mode,
        index.len(),
        index.dim(),
        p.m,
        p.ef_construction,
        report.total_seconds,
        report.graph_seconds,
        report.distance_evals
    );
    if let (Some(delta), Some(eta)) = (report.delta, report.eta) {
        print!(" delta={delta:.4} eta={eta:.4}");
    }
    println!();
    Ok(())
}

fn query(a: &QueryArgs) -> Result<()> {
    let index = load_index(&a.index)?;
    let queries = load_vectors(&a.queries)?;
    let config = a.search.config()?;
    let results = search_batch(&index, &queries, &config, a.threads)?;
    match &a.out {
        Some(path) => {
            let rows: Vec<Vec<u32>> = results.iter().map(|r| r.ids()).collect();
            if rows.iter().any(|r| r.len() != config.k) {
                bail!("some queries returned fewer than k={} results; cannot write fixed-width ivecs", config.k);
            }
            let ids = IdMatrix::from_rows(&rows)?;
            dataset::save_ivecs(path, &ids).with_context(|| format!("writing {}", path.display()))?;
        }
        None => {
            let mut out = BufWriter::new(io::stdout().lock());
            for (i, r) in results.iter().enumerate() {
                writeln!(out, "{i}\t{r}")?;
            }
            out.flush()?;
        }
    }
    Ok(())
}

struct Workload {
    index: GraphIndex,
    queries: Dataset,
    truth: Option<IdMatrix>,
    name: String,
}

fn workload(a: &MeasureArgs) -> Result<Workload> {
    let index = load_index(&a.index)?;
    let mut queries = load_vectors(&a.queries)?;
    let mut truth = match &a.truth {
        Some(p) => Some(dataset::load_ivecs(p).with_context(|| format!("reading {}", p.display()))?),
        None => None,
    };
    if a.repeat_queries > 1 {
        queries = bench::repeat_queries(&queries, a.repeat_queries)?;
        if let Some(t) = truth.take() {
            let rows: Vec<&[u32]> = (0..a.repeat_queries).flat_map(|_| t.rows()).collect();
            truth = Some(IdMatrix::from_rows(&rows)?);
        }
    }
    let name = a
        .queries
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string();
    Ok(Workload {
        index,
        queries,
        truth,
        name,
    })
}

fn emit(reports: &mut [bench::BenchReport], name: &str, csv: Option<&Path>) -> Result<()> {
    for r in reports.iter_mut() {
        r.dataset = name.to_string();
        println!("{r}");
    }
    if let Some(path) = csv {
        let file = File::create(path).with_context(|| format!("writing {}", path.display()))?;
        bench::write_csv(BufWriter::new(file), reports)?;
    }
    Ok(())
}

fn run_bench(a: &BenchArgs) -> Result<()> {
    let m = &a.measure;
    let w = workload(m)?;
    let config = m.search.config()?;
    let report = bench::measure(&w.index, &w.queries, &config, m.warmup, m.repeats, w.truth.as_ref())?;
    emit(&mut [report], &w.name, m.csv.as_deref())
}

fn run_sweep(a: &SweepArgs) -> Result<()> {
    let m = &a.measure;
    let w = workload(m)?;
    let base = m.search.config()?;
    let mut reports = bench::sweep(
        &w.index,
        &w.queries,
        w.truth.as_ref(),
        &base,
        a.axis,
        &a.values,
        m.warmup,
        m.repeats,
    )?;
    emit(&mut reports, &w.name, m.csv.as_deref())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Gen(a) => gen(a),
        Command::Gt(a) => gt(a),
        Command::Build(a) => build(a),
        Command::Query(a) => query(a),
        Command::Bench(a) => run_bench(a),
        Command::Sweep(a) => run_sweep(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("aqr: {e:#}");
            ExitCode::FAILURE
        }
    }
}
