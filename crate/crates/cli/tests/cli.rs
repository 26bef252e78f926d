use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use setree_core::{load_attributes, load_edge_list, load_tree_tsv};
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn setree(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_setree"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert_eq!(o.status.code(), Some(0), "stderr: {}", stderr(&o));
    o
}

/// A 60-vertex SBM with 8-dimensional block features in `dir`.
fn sbm_inputs(dir: &Path) {
    ok(setree(
        dir,
        &[
            "sbm", "--n", "60", "--p-in", "0.3", "--p-out", "0.02", "--seed", "3", "-o", "g.tsv",
            "--labels", "labels.tsv", "--features", "8", "--attrs-output", "x.tsv",
        ],
    ));
}

#[test]
fn entropy_of_k2() {
    let dir = TempDir::new().unwrap();
    let k2 = fixture("fix_k2.tsv");
    let o = ok(setree(dir.path(), &["entropy", "--graph", k2.to_str().unwrap()]));
    assert_eq!(stdout(&o), "H1\t1.000000000\n");
    assert!(stderr(&o).contains("tree=none"));
}

#[test]
fn tree_on_barbell_writes_loadable_files() {
    let dir = TempDir::new().unwrap();
    let bb = fixture("fix_barbell6.tsv");
    let o = ok(setree(
        dir.path(),
        &["tree", "--graph", bb.to_str().unwrap(), "--height", "2", "-o", "bb"],
    ));
    assert!(stdout(&o).contains("HT\t1.699513850\n"), "{}", stdout(&o));
    assert!(stderr(&o).contains("refine_sweeps=16"));
    let g = load_edge_list(&bb).unwrap();
    let t = load_tree_tsv(&dir.path().join("bb.tsv"), &g).unwrap();
    assert_eq!(t.top_level_partition(), vec![vec![0, 1, 2], vec![3, 4, 5]]);
    let json = fs::read_to_string(dir.path().join("bb.json")).unwrap();
    assert!(json.trim_start().starts_with('{') && json.contains("\"children\""));

    let o = ok(setree(
        dir.path(),
        &["entropy", "--graph", bb.to_str().unwrap(), "--tree", "bb.tsv"],
    ));
    assert_eq!(
        stdout(&o),
        "H1\t2.556656707\nHT\t1.699513850\nnormalized\t0.664740732\n"
    );
}

#[test]
fn generated_files_round_trip() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    sbm_inputs(d);
    let g = load_edge_list(&d.join("g.tsv")).unwrap();
    assert_eq!(g.vertex_count(), 60);
    assert_eq!(load_attributes(&d.join("x.tsv")).unwrap().rows(), 60);
    assert_eq!(fs::read_to_string(d.join("labels.tsv")).unwrap().lines().count(), 60);

    let o = ok(setree(d, &["perturb", "--graph", "g.tsv", "--rate", "0.5", "--seed", "1", "-o", "noisy.tsv"]));
    let noisy = load_edge_list(&d.join("noisy.tsv")).unwrap();
    assert_eq!(noisy.edge_count(), g.edge_count() + g.edge_count() / 2);
    assert_eq!(stdout(&o), format!("edges\t{}\n", noisy.edge_count()));

    let o = ok(setree(d, &["fuse", "--graph", "noisy.tsv", "--attrs", "x.tsv", "-o", "fused.tsv"]));
    let fused = load_edge_list(&d.join("fused.tsv")).unwrap();
    assert!(fused.edge_count() >= noisy.edge_count());
    assert!(stdout(&o).starts_with("k\t"));

    ok(setree(d, &["tree", "--graph", "fused.tsv", "-o", "t"]));
    let o = ok(setree(
        d,
        &[
            "reconstruct", "--graph", "fused.tsv", "--tree", "t.tsv", "--theta", "3", "--seed", "7",
            "--sampled", "pairs.tsv", "-o", "next.tsv",
        ],
    ));
    let next = load_edge_list(&d.join("next.tsv")).unwrap();
    let pairs = load_edge_list(&d.join("pairs.tsv")).unwrap();
    assert_eq!(next, pairs);
    assert!(stdout(&o).ends_with(&format!("edges\t{}\n", next.edge_count())));

    ok(setree(
        d,
        &[
            "reconstruct", "--graph", "noisy.tsv", "--attrs", "x.tsv", "--tree", "t.tsv", "--theta",
            "1", "--seed", "7", "--retain", "-o", "kept.tsv",
        ],
    ));
    let kept = load_edge_list(&d.join("kept.tsv")).unwrap();
    assert_eq!(kept.edge_count(), noisy.edge_count());
}

#[test]
fn seed_is_mandatory() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    sbm_inputs(d);
    ok(setree(d, &["tree", "--graph", "g.tsv", "-o", "t"]));
    let o = setree(d, &["reconstruct", "--graph", "g.tsv", "--tree", "t.tsv", "--theta", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--seed"));

    fs::write(d.join("run.cfg"), "graph=g.tsv\nattrs=x.tsv\noutput_dir=out\n").unwrap();
    let o = setree(d, &["pipeline", "--config", "run.cfg"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("seed is required"));
    assert!(!d.join("out").exists());
}

#[test]
fn usage_and_input_errors_have_distinct_codes() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    assert_eq!(setree(d, &["frobnicate"]).status.code(), Some(1));
    let bb = fixture("fix_barbell6.tsv");
    assert_eq!(
        setree(d, &["entropy", "--graph", bb.to_str().unwrap(), "--bogus"]).status.code(),
        Some(1)
    );

    fs::write(d.join("bad.tsv"), "0\t1\n1\tx\n").unwrap();
    let o = setree(d, &["entropy", "--graph", "bad.tsv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.tsv:2"), "{}", stderr(&o));

    let o = setree(d, &["tree", "--graph", bb.to_str().unwrap(), "--height", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("height"));

    fs::write(d.join("run.cfg"), "seed=1\nthetta=2\n").unwrap();
    let o = setree(d, &["pipeline", "--config", "run.cfg"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("run.cfg:2"), "{}", stderr(&o));

    let o = setree(
        d,
        &["reconstruct", "--graph", "g.tsv", "--tree", "t.tsv", "--theta", "1", "--seed", "1", "--retain"],
    );
    assert_eq!(o.status.code(), Some(1));
}

fn pipeline_config(d: &Path, extra: &str) {
    sbm_inputs(d);
    let text = format!("graph=g.tsv\nattrs=x.tsv\niterations=2\nheight=2\ntheta=3\nseed=11\n{extra}");
    fs::write(d.join("run.cfg"), text).unwrap();
}

/// Trace lines with the timing columns removed.
fn trace_without_timing(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').take(6).collect::<Vec<_>>().join(","))
        .collect()
}

fn assert_same_run(a: &Path, b: &Path) {
    assert_eq!(trace_without_timing(&a.join("trace.csv")), trace_without_timing(&b.join("trace.csv")));
    for i in 1..=2 {
        let name = format!("graph_iter_{i}.tsv");
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name}");
    }
}

#[test]
fn pipeline_runs_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    pipeline_config(d, "provider=smoothing:1\n");
    let first = ok(setree(d, &["pipeline", "--config", "run.cfg", "--output-dir", "a"]));
    ok(setree(d, &["pipeline", "--config", "run.cfg", "--output-dir", "b"]));
    assert_same_run(&d.join("a"), &d.join("b"));
    assert_eq!(trace_without_timing(&d.join("a/trace.csv")).len(), 3);
    let err = stderr(&first);
    assert!(err.contains("seed=11") && err.contains("max_nodes="), "{err}");
    assert!(stdout(&first).starts_with("iter,k,H1,HT,normalized,edges,ms_fusion,ms_tree,ms_sample\n"));
}

#[test]
fn command_line_wins_over_config() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    pipeline_config(d, "output_dir=out\n");
    let o = ok(setree(d, &["pipeline", "--config", "run.cfg", "--theta", "0.5", "--iterations", "1"]));
    let err = stderr(&o);
    assert!(err.contains("theta=0.5\n") && err.contains("iterations=1\n"), "{err}");
    assert_eq!(trace_without_timing(&d.join("out/trace.csv")).len(), 2);
}

#[cfg(unix)]
fn script(d: &Path, name: &str, body: &str) -> PathBuf {
    use std::os::unix::fs::PermissionsExt;
    let p = d.join(name);
    fs::write(&p, format!("#!/bin/sh\n{body}\n")).unwrap();
    fs::set_permissions(&p, fs::Permissions::from_mode(0o755)).unwrap();
    p
}

#[cfg(unix)]
#[test]
fn external_provider_protocol() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    pipeline_config(d, "");
    // Echoes the features back, so the run must match the identity provider.
    let echo = script(
        d,
        "echo.sh",
        r#"set -e
w="$1"
test -s "$w/graph.tsv"
n=$(cut -f3 "$w/meta.tsv")
test "$(cut -f1 "$w/meta.tsv")" = iteration
test "$(wc -l < "$w/features.tsv")" -eq "$n"
cp "$w/features.tsv" "$w/embeddings.tsv""#,
    );
    let provider = format!("external:{}", echo.display());
    ok(setree(d, &["pipeline", "--config", "run.cfg", "--output-dir", "ext", "--provider", &provider]));
    ok(setree(d, &["pipeline", "--config", "run.cfg", "--output-dir", "id", "--provider", "identity"]));
    assert_same_run(&d.join("ext"), &d.join("id"));

    let fail = script(d, "fail.sh", "exit 4");
    let provider = format!("external:{}", fail.display());
    let o = setree(d, &["pipeline", "--config", "run.cfg", "--output-dir", "f", "--provider", &provider]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("iteration 1"), "{}", stderr(&o));

    let short = script(d, "short.sh", r#"head -n 3 "$1/features.tsv" > "$1/embeddings.tsv""#);
    let provider = format!("external:{}", short.display());
    let o = setree(d, &["pipeline", "--config", "run.cfg", "--output-dir", "s", "--provider", &provider]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("rows"), "{}", stderr(&o));
}
