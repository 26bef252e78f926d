//! `setree`: command-line front end for structural-entropy graph structure
//! optimization.
//!
//! Exit codes: 0 success, 1 usage error, 2 bad input or parameters,
//! 3 failure while running a stage.

mod config;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use setree_core::tree::DEFAULT_REFINE_SWEEPS;
use setree_core::{
    annotate_probabilities, block_features, build_optimal_tree_with, generate_sbm, load_attributes,
    load_edge_list, load_tree_tsv, pcc_similarity, perturb, reconstruct, run_pipeline,
    sample_edges_with, select_k, tree_entropy, write_attributes, BuildOptions, Graph, KSelect,
    SimilarityMatrix, ThetaSchedule,
};

use config::{parse_theta_depth, RawConfig};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Input(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Input(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<setree_core::Error> for CliError {
    fn from(e: setree_core::Error) -> Self {
        if e.is_input_error() {
            CliError::Input(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

type Outcome = Result<(), CliError>;

#[derive(Parser, Debug)]
#[command(name = "setree", version, about = "Structural-entropy graph structure optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the one-dimensional entropy, and the tree entropy when a tree
    /// is given.
    Entropy {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        tree: Option<PathBuf>,
    },
    /// Build a height-bounded encoding tree; writes <OUTPUT>.tsv and
    /// <OUTPUT>.json.
    Tree {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = 2)]
        height: usize,
        #[arg(short, long, default_value = "tree")]
        output: PathBuf,
        /// Keep merging until the root is binary.
        #[arg(long)]
        force_binary: bool,
        /// Vertex visits per vertex in the final refinement pass; 0 disables it.
        #[arg(long, default_value_t = DEFAULT_REFINE_SWEEPS)]
        refine_sweeps: usize,
    },
    /// Fuse a k-NN similarity overlay into the graph with automatic k.
    Fuse {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        attrs: PathBuf,
        /// Defaults to min(n - 1, 100).
        #[arg(long)]
        k_max: Option<usize>,
        #[arg(long, default_value_t = 1e-3)]
        plateau_tol: f64,
        #[arg(long, default_value_t = 2)]
        window: usize,
        #[arg(short, long, default_value = "fused.tsv")]
        output: PathBuf,
    },
    /// Sample edges from a tree and rebuild the graph.
    Reconstruct {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        theta: f64,
        /// Per-depth overrides, e.g. 0:0.5,1:3 (root = 0).
        #[arg(long)]
        theta_depth: Option<String>,
        #[arg(long)]
        seed: u64,
        /// Keep the input edges and drop the least similar ones.
        #[arg(long)]
        retain: bool,
        #[arg(long, requires = "retain")]
        drop_frac: Option<f64>,
        /// Attributes for similarity ranking; required with --retain.
        #[arg(long)]
        attrs: Option<PathBuf>,
        #[arg(short, long, default_value = "reconstructed.tsv")]
        output: PathBuf,
        /// Also write the sampled pairs with their provenance.
        #[arg(long)]
        sampled: Option<PathBuf>,
    },
    /// Run the iterative loop from a key=value config; flags win over the file.
    Pipeline(PipelineArgs),
    /// Add random noise edges.
    Perturb {
        #[arg(long)]
        graph: PathBuf,
        /// New edges as a fraction of the current edge count.
        #[arg(long)]
        rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long, default_value = "perturbed.tsv")]
        output: PathBuf,
    },
    /// Generate a stochastic block model graph.
    Sbm {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        blocks: usize,
        #[arg(long)]
        p_in: f64,
        #[arg(long)]
        p_out: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long, default_value = "sbm.tsv")]
        output: PathBuf,
        /// Write `vertex<TAB>block` lines here.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Write noisy block features of this dimension to --attrs-output.
        #[arg(long, requires = "attrs_output")]
        features: Option<usize>,
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
        #[arg(long, requires = "features")]
        attrs_output: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    attrs: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    theta_depth: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// identity, smoothing:<rounds> or external:<command>.
    #[arg(long)]
    provider: Option<String>,
    /// Seconds.
    #[arg(long)]
    provider_timeout: Option<f64>,
    #[arg(long)]
    retain: bool,
    #[arg(long)]
    drop_frac: Option<f64>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    plateau_tol: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    /// Feed the raw attributes to every iteration.
    #[arg(long)]
    reset_features: bool,
    #[arg(long)]
    max_nodes: Option<usize>,
}

/// Prints resolved settings to stderr, one `key=value` per line.
fn show(pairs: &[(&str, String)]) {
    for (k, v) in pairs {
        eprintln!("{k}={v}");
    }
}

fn path(p: &Path) -> String {
    p.display().to_string()
}

fn print_value(key: &str, v: f64) {
    println!("{key}\t{v:.9}");
}

fn load_graph_with_attrs(graph: &Path, attrs: &Path) -> Result<Graph, CliError> {
    let g = load_edge_list(graph)?;
    let x = load_attributes(attrs)?;
    Ok(g.with_attributes(x)?)
}

fn theta_schedule(theta: f64, depth: Option<&str>) -> Result<ThetaSchedule, CliError> {
    let mut s = ThetaSchedule::uniform(theta);
    if let Some(text) = depth {
        s.by_depth = parse_theta_depth(text)
            .ok_or_else(|| CliError::Input(format!("--theta-depth needs depth:theta pairs, got '{text}'")))?;
    }
    Ok(s)
}

fn run(command: Command) -> Outcome {
    match command {
        Command::Entropy { graph, tree } => {
            show(&[
                ("graph", path(&graph)),
                ("tree", tree.as_deref().map_or("none".into(), path)),
            ]);
            let g = load_edge_list(&graph)?;
            match tree {
                None => print_value("H1", setree_core::one_dim_entropy(&g)?),
                Some(tp) => {
                    let t = load_tree_tsv(&tp, &g)?;
                    let r = tree_entropy(&g, &t)?;
                    print_value("H1", r.h1);
                    print_value("HT", r.h_tree);
                    print_value("normalized", r.normalized);
                }
            }
        }
        Command::Tree {
            graph,
            height,
            output,
            force_binary,
            refine_sweeps,
        } => {
            show(&[
                ("graph", path(&graph)),
                ("height", height.to_string()),
                ("output", path(&output)),
                ("force_binary", force_binary.to_string()),
                ("refine_sweeps", refine_sweeps.to_string()),
            ]);
            let g = load_edge_list(&graph)?;
            let opts = BuildOptions {
                force_binary,
                refine_sweeps,
                ..BuildOptions::new(height)
            };
            let (t, r) = build_optimal_tree_with(&g, &opts)?;
            t.write_tsv(&output.with_extension("tsv"))?;
            t.write_json(&output.with_extension("json"))?;
            print_value("H1", r.h1);
            print_value("HT", r.h_tree);
            print_value("normalized", r.normalized);
        }
        Command::Fuse {
            graph,
            attrs,
            k_max,
            plateau_tol,
            window,
            output,
        } => {
            let g = load_graph_with_attrs(&graph, &attrs)?;
            let k_max = k_max.unwrap_or(KSelect::for_size(g.vertex_count()).k_max);
            show(&[
                ("graph", path(&graph)),
                ("attrs", path(&attrs)),
                ("k_max", k_max.to_string()),
                ("plateau_tol", plateau_tol.to_string()),
                ("window", window.to_string()),
                ("output", path(&output)),
            ]);
            let s = pcc_similarity(g.attributes().expect("attached above"))?;
            let f = select_k(&g, &s, k_max, plateau_tol, window)?;
            f.fused.write_edge_list(&output)?;
            println!("k\t{}", f.k_selected);
            println!("edges\t{}", f.fused.edge_count());
        }
        Command::Reconstruct {
            graph,
            tree,
            theta,
            theta_depth,
            seed,
            retain,
            drop_frac,
            attrs,
            output,
            sampled,
        } => {
            show(&[
                ("graph", path(&graph)),
                ("tree", path(&tree)),
                ("theta", theta.to_string()),
                ("theta_depth", theta_depth.clone().unwrap_or_else(|| "none".into())),
                ("seed", seed.to_string()),
                ("retain", retain.to_string()),
                ("drop_frac", drop_frac.map_or("auto".into(), |f| f.to_string())),
                ("attrs", attrs.as_deref().map_or("none".into(), path)),
                ("output", path(&output)),
            ]);
            let schedule = theta_schedule(theta, theta_depth.as_deref())?;
            let g = match &attrs {
                Some(a) => load_graph_with_attrs(&graph, a)?,
                None if retain => {
                    return Err(CliError::Usage("--retain needs --attrs to rank edges by similarity".into()))
                }
                None => load_edge_list(&graph)?,
            };
            let t = load_tree_tsv(&tree, &g)?;
            let pt = annotate_probabilities(&g, &t)?;
            let set = sample_edges_with(&pt, &schedule, seed)?;
            if let Some(p) = &sampled {
                set.write_tsv(p)?;
            }
            let next = if retain {
                let s: SimilarityMatrix = pcc_similarity(g.attributes().expect("attached above"))?;
                reconstruct(&g, &set, &s, true, drop_frac)?
            } else {
                set.to_graph()?
            };
            next.write_edge_list(&output)?;
            println!("sampled\t{}", set.len());
            println!("edges\t{}", next.edge_count());
        }
        Command::Pipeline(args) => pipeline(args)?,
        Command::Perturb {
            graph,
            rate,
            seed,
            output,
        } => {
            show(&[
                ("graph", path(&graph)),
                ("rate", rate.to_string()),
                ("seed", seed.to_string()),
                ("output", path(&output)),
            ]);
            let g = load_edge_list(&graph)?;
            let noisy = perturb(&g, rate, seed)?;
            noisy.write_edge_list(&output)?;
            println!("edges\t{}", noisy.edge_count());
        }
        Command::Sbm {
            n,
            blocks,
            p_in,
            p_out,
            seed,
            output,
            labels,
            features,
            noise,
            attrs_output,
        } => {
            show(&[
                ("n", n.to_string()),
                ("blocks", blocks.to_string()),
                ("p_in", p_in.to_string()),
                ("p_out", p_out.to_string()),
                ("seed", seed.to_string()),
                ("output", path(&output)),
                ("features", features.map_or("none".into(), |d| d.to_string())),
                ("noise", noise.to_string()),
            ]);
            let sbm = generate_sbm(n, blocks, p_in, p_out, seed)?;
            if sbm.is_edgeless() {
                return Err(CliError::Input(format!("SBM with p_in = {p_in}, p_out = {p_out} has no edges")));
            }
            sbm.graph.write_edge_list(&output)?;
            if let Some(p) = &labels {
                let text: String = sbm.labels.iter().enumerate().map(|(v, b)| format!("{v}\t{b}\n")).collect();
                std::fs::write(p, text).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
            }
            if let (Some(dim), Some(p)) = (features, &attrs_output) {
                // Feature noise gets its own stream so it does not track the edges.
                let x = block_features(&sbm.labels, dim, noise, seed ^ 0x5EED_F00D)?;
                write_attributes(p, &x)?;
            }
            if !sbm.connected {
                log::warn!("the generated graph is disconnected");
            }
            println!("edges\t{}", sbm.graph.edge_count());
        }
    }
    Ok(())
}

fn pipeline(args: PipelineArgs) -> Outcome {
    let mut raw = match &args.config {
        Some(p) => RawConfig::load(p)?,
        None => RawConfig::default(),
    };
    macro_rules! flag {
        ($($field:ident),*) => {
            $(if let Some(v) = &args.$field {
                raw.set(stringify!($field), v.display_value());
            })*
        };
    }
    flag!(
        graph,
        attrs,
        output_dir,
        iterations,
        height,
        theta,
        theta_depth,
        seed,
        provider,
        provider_timeout,
        drop_frac,
        k_max,
        plateau_tol,
        window,
        max_nodes
    );
    if args.retain {
        raw.set("retain", true);
    }
    if args.reset_features {
        raw.set("reset_features", true);
    }
    let settings = raw.resolve()?;
    eprint!("{}", settings.to_config_text());
    let attrs = settings
        .attrs
        .as_deref()
        .ok_or_else(|| CliError::Usage("attrs is required (config key or --attrs)".into()))?;
    let g = load_graph_with_attrs(&settings.graph, attrs)?;
    let out = run_pipeline(&settings.config, &g)?;
    println!("{}", setree_core::pipeline::TRACE_HEADER);
    for r in &out.trace {
        println!("{}", r.csv_line());
    }
    Ok(())
}

/// Text form of a flag value for the config layer.
trait DisplayValue {
    fn display_value(&self) -> String;
}

impl DisplayValue for PathBuf {
    fn display_value(&self) -> String {
        self.display().to_string()
    }
}

macro_rules! display_via_to_string {
    ($($t:ty),*) => {
        $(impl DisplayValue for $t {
            fn display_value(&self) -> String {
                self.to_string()
            }
        })*
    };
}

display_via_to_string!(usize, u64, f64, String);

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
