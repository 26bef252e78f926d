//! The iterative structure-learning loop.
//!
//! Each iteration embeds the attributes, fuses a k-NN similarity overlay into
//! the current graph, builds a height-bounded encoding tree on the fused
//! graph, samples new edges from the tree and rebuilds the graph from them.

use std::fs::{self, File};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use wait_timeout::ChildExt;

use crate::error::{Error, Result};
use crate::graph::{load_attributes, write_attributes, AttributeMatrix, Graph};
use crate::reconstruct::{annotate_probabilities, reconstruct, sample_edges_with, ThetaSchedule};
use crate::rng::iteration_seed;
use crate::similarity::{dense_matrix_bytes, pcc_similarity, select_k, KSelect, DEFAULT_MAX_DENSE_NODES};
use crate::tree::build_optimal_tree;

/// Source of the node representations fed to the similarity stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provider {
    /// Attributes pass through unchanged.
    Identity,
    /// `rounds` steps of weighted neighborhood averaging with self-loops.
    Smoothing { rounds: usize },
    /// An external program speaking the work-directory protocol.
    External { command: String },
}

impl std::fmt::Display for Provider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Provider::Identity => write!(f, "identity"),
            Provider::Smoothing { rounds } => write!(f, "smoothing({rounds})"),
            Provider::External { command } => write!(f, "external({command})"),
        }
    }
}

pub const DEFAULT_PROVIDER_TIMEOUT: Duration = Duration::from_secs(600);

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub iterations: usize,
    /// Encoding tree height.
    pub height: usize,
    pub theta: ThetaSchedule,
    pub seed: u64,
    pub provider: Provider,
    pub provider_timeout: Duration,
    /// Keep the current edges next to the sampled ones.
    pub retain: bool,
    /// Fraction of least-similar edges to drop when retaining; `None` drops
    /// back to the current edge count.
    pub drop_frac: Option<f64>,
    /// `None` means `min(n - 1, 100)`.
    pub k_max: Option<usize>,
    pub plateau_tol: f64,
    pub window: usize,
    /// Feed the raw attributes to every iteration instead of the previous
    /// iteration's embeddings.
    pub reset_features: bool,
    /// Guard for the dense similarity matrix.
    pub max_nodes: usize,
    /// Where `trace.csv` and `graph_iter_<i>.tsv` go; nothing is written
    /// when unset.
    pub output_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            iterations: 1,
            height: 2,
            theta: ThetaSchedule::uniform(1.0),
            seed: 0,
            provider: Provider::Identity,
            provider_timeout: DEFAULT_PROVIDER_TIMEOUT,
            retain: false,
            drop_frac: None,
            k_max: None,
            plateau_tol: 1e-3,
            window: 2,
            reset_features: false,
            max_nodes: DEFAULT_MAX_DENSE_NODES,
            output_dir: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.height < 2 {
            return bad(format!("height must be >= 2, got {}", self.height));
        }
        let ok = |t: f64| t.is_finite() && t > 0.0;
        if !ok(self.theta.theta) || !self.theta.by_depth.values().all(|&t| ok(t)) {
            return bad("theta must be > 0".into());
        }
        if let Some(f) = self.drop_frac {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("drop_frac must lie in [0, 1], got {f}"));
            }
        }
        if matches!(self.k_max, Some(k) if k < 2) {
            return bad("k_max must be >= 2".into());
        }
        if !ok(self.plateau_tol) {
            return bad(format!("plateau_tol must be > 0, got {}", self.plateau_tol));
        }
        if self.window < 1 {
            return bad("window must be >= 1".into());
        }
        if let Provider::External { command } = &self.provider {
            if command.trim().is_empty() {
                return bad("external provider needs a command".into());
            }
        }
        if self.provider_timeout.is_zero() {
            return bad("provider timeout must be positive".into());
        }
        Ok(())
    }
}

/// Per-iteration diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub k: usize,
    /// One-dimensional entropy of the fused graph.
    pub h1: f64,
    /// Tree entropy of the fused graph.
    pub h_tree: f64,
    pub normalized: f64,
    /// Edge count of the reconstructed graph.
    pub edges: usize,
    pub ms_fusion: f64,
    pub ms_tree: f64,
    pub ms_sample: f64,
}

pub const TRACE_HEADER: &str = "iter,k,H1,HT,normalized,edges,ms_fusion,ms_tree,ms_sample";

impl TraceRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{:.9},{:.9},{:.9},{},{:.3},{:.3},{:.3}",
            self.iteration,
            self.k,
            self.h1,
            self.h_tree,
            self.normalized,
            self.edges,
            self.ms_fusion,
            self.ms_tree,
            self.ms_sample
        )
    }
}

/// Applies a provider with a default context (iteration 0, default timeout).
pub fn embed(provider: &Provider, g: &Graph, x: &AttributeMatrix) -> Result<AttributeMatrix> {
    embed_with(provider, g, x, 0, DEFAULT_PROVIDER_TIMEOUT)
}

pub fn embed_with(
    provider: &Provider,
    g: &Graph,
    x: &AttributeMatrix,
    iteration: usize,
    timeout: Duration,
) -> Result<AttributeMatrix> {
    if x.rows() != g.vertex_count() {
        return Err(Error::Validation(format!(
            "{} attribute rows for {} vertices",
            x.rows(),
            g.vertex_count()
        )));
    }
    match provider {
        Provider::Identity => Ok(x.clone()),
        Provider::Smoothing { rounds } => smooth(g, x, *rounds),
        Provider::External { command } => run_external(command, g, x, iteration, timeout),
    }
}

fn smooth(g: &Graph, x: &AttributeMatrix, rounds: usize) -> Result<AttributeMatrix> {
    let (n, d) = (x.rows(), x.cols());
    let mut cur = x.as_slice().to_vec();
    let mut next = vec![0.0; n * d];
    for _ in 0..rounds {
        for i in 0..n {
            let out = &mut next[i * d..(i + 1) * d];
            out.copy_from_slice(&cur[i * d..(i + 1) * d]);
            for &(j, w) in g.neighbors(i) {
                for (o, &v) in out.iter_mut().zip(&cur[j * d..(j + 1) * d]) {
                    *o += w * v;
                }
            }
            let z = 1.0 + g.degree(i);
            out.iter_mut().for_each(|o| *o /= z);
        }
        std::mem::swap(&mut cur, &mut next);
    }
    AttributeMatrix::new(n, d, cur)
}

fn run_external(
    command: &str,
    g: &Graph,
    x: &AttributeMatrix,
    iteration: usize,
    timeout: Duration,
) -> Result<AttributeMatrix> {
    let dir = tempfile::Builder::new()
        .prefix("setree-embed-")
        .tempdir()
        .map_err(|e| Error::Provider(format!("cannot create work dir: {e}")))?;
    let work = dir.path();
    g.write_edge_list(&work.join("graph.tsv"))?;
    write_attributes(&work.join("features.tsv"), x)?;
    let meta = work.join("meta.tsv");
    fs::write(
        &meta,
        format!("iteration\t{iteration}\t{}\t{}\n", x.rows(), x.cols()),
    )
    .map_err(|e| Error::io(&meta, e))?;

    let log_path = work.join("provider.log");
    let log = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(format!("{command} \"$1\""))
        .arg("sh")
        .arg(work)
        .stdin(Stdio::null())
        .stdout(log)
        .spawn()
        .map_err(|e| Error::Provider(format!("cannot start '{command}': {e}")))?;
    let status = match child
        .wait_timeout(timeout)
        .map_err(|e| Error::Provider(format!("waiting for '{command}': {e}")))?
    {
        Some(status) => status,
        None => {
            let _ = child.kill();
            let _ = child.wait();
            return Err(Error::Provider(format!(
                "'{command}' timed out after {:.1} s",
                timeout.as_secs_f64()
            )));
        }
    };
    if !status.success() {
        return Err(Error::Provider(format!("'{command}' exited with {status}")));
    }
    let out = work.join("embeddings.tsv");
    if !out.exists() {
        return Err(Error::Provider(format!("'{command}' wrote no embeddings.tsv")));
    }
    let emb = load_attributes(&out).map_err(|e| Error::Provider(format!("bad embeddings: {e}")))?;
    if emb.rows() != x.rows() {
        return Err(Error::Provider(format!(
            "embeddings have {} rows, expected {}",
            emb.rows(),
            x.rows()
        )));
    }
    Ok(emb)
}

/// Final graph and one trace record per iteration.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub graph: Graph,
    pub trace: Vec<TraceRecord>,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

struct TraceSink {
    file: Option<(PathBuf, File)>,
}

impl TraceSink {
    fn open(dir: Option<&Path>) -> Result<Self> {
        let Some(dir) = dir else {
            return Ok(Self { file: None });
        };
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("trace.csv");
        let mut f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        writeln!(f, "{TRACE_HEADER}").map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            file: Some((path, f)),
        })
    }

    fn push(&mut self, r: &TraceRecord) -> Result<()> {
        if let Some((path, f)) = &mut self.file {
            writeln!(f, "{}", r.csv_line())
                .and_then(|_| f.flush())
                .map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

/// Runs `cfg.iterations` rounds starting from `g0`, which must carry
/// attributes. Errors are tagged with the failing iteration; records of the
/// finished iterations are already in `trace.csv` at that point.
pub fn run_pipeline(cfg: &PipelineConfig, g0: &Graph) -> Result<PipelineOutput> {
    cfg.validate()?;
    let raw = g0
        .attributes()
        .cloned()
        .ok_or_else(|| Error::Validation("pipeline input graph has no attributes".into()))?;
    let n = g0.vertex_count();
    if n > cfg.max_nodes {
        return Err(Error::Config(format!(
            "{n} vertices exceed the dense similarity limit of {} (would need {:.1} GB)",
            cfg.max_nodes,
            dense_matrix_bytes(n) as f64 / 1e9
        )));
    }
    if cfg.iterations > 0 && n < 3 {
        return Err(Error::Validation(format!("pipeline needs at least 3 vertices, got {n}")));
    }
    let k_max = cfg.k_max.unwrap_or(KSelect::for_size(n).k_max);
    if cfg.iterations > 0 && k_max + 1 > n {
        return Err(Error::Config(format!("k_max = {k_max} must be at most {}", n - 1)));
    }

    let mut sink = TraceSink::open(cfg.output_dir.as_deref())?;
    let mut g = g0.clone();
    let mut trace = Vec::with_capacity(cfg.iterations);
    for i in 1..=cfg.iterations {
        let step = || -> Result<(Graph, TraceRecord)> {
            let x = g.attributes().expect("attributes carried between iterations");
            let t0 = Instant::now();
            let emb = embed_with(&cfg.provider, &g, x, i, cfg.provider_timeout)?;
            let s = pcc_similarity(&emb)?;
            let fusion = select_k(&g, &s, k_max, cfg.plateau_tol, cfg.window)?;
            let ms_fusion = ms(t0);

            let t1 = Instant::now();
            let (tree, report) = build_optimal_tree(&fusion.fused, cfg.height)?;
            let ms_tree = ms(t1);

            let t2 = Instant::now();
            let pt = annotate_probabilities(&fusion.fused, &tree)?;
            let sampled = sample_edges_with(&pt, &cfg.theta, iteration_seed(cfg.seed, i as u64))?;
            let next = reconstruct(&g, &sampled, &s, cfg.retain, cfg.drop_frac)?;
            let features = if cfg.reset_features { raw.clone() } else { emb };
            let next = next.without_attributes().with_attributes(features)?;
            let ms_sample = ms(t2);

            let record = TraceRecord {
                iteration: i,
                k: fusion.k_selected,
                h1: report.h1,
                h_tree: report.h_tree,
                normalized: report.normalized,
                edges: next.edge_count(),
                ms_fusion,
                ms_tree,
                ms_sample,
            };
            Ok((next, record))
        };
        let wrap = |e: Error| Error::Iteration {
            iteration: i,
            source: Box::new(e),
        };
        let (next, record) = step().map_err(wrap)?;
        log::info!(
            "iteration {i}: k = {}, H1 = {:.6}, HT = {:.6}, edges = {}",
            record.k,
            record.h1,
            record.h_tree,
            record.edges
        );
        if let Some(dir) = &cfg.output_dir {
            next.write_edge_list(&dir.join(format!("graph_iter_{i}.tsv")))
                .map_err(wrap)?;
        }
        sink.push(&record).map_err(wrap)?;
        trace.push(record);
        g = next;
    }
    Ok(PipelineOutput { graph: g, trace })
}
