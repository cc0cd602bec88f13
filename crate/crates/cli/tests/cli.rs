use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pilotroute"));
    c.env_remove("RR_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(args: &[&str]) -> String {
    let o = run(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    stdout(&o)
}

fn small_world(dir: &Path, domains: usize) -> String {
    let cfg = dir.join("synth.in.json");
    fs::write(
        &cfg,
        r#"{"dim": 16, "docs_per_domain": 60, "train_queries_per_domain": 30, "test_queries_per_domain": 15}"#,
    )
    .unwrap();
    let world = dir.join("world");
    ok(&[
        "synth",
        "--config",
        cfg.to_str().unwrap(),
        "--domains",
        &domains.to_string(),
        "--out",
        world.to_str().unwrap(),
    ]);
    world.to_str().unwrap().to_string()
}

#[test]
fn unknown_flag_prints_usage_and_exits_1() {
    let o = run(&["eval", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert!(o.stdout.is_empty());
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn eval_prints_mean_with_four_decimals() {
    let dir = tempfile::tempdir().unwrap();
    let run_path = dir.path().join("run.trec");
    let qrels = dir.path().join("qrels.txt");
    fs::write(&run_path, "q1 Q0 d1 1 0.9 t\nq1 Q0 d2 2 0.5 t\nq2 Q0 d3 1 0.8 t\n").unwrap();
    fs::write(&qrels, "q1 0 d2 1\nq2 0 d3 1\n").unwrap();
    let out = ok(&[
        "eval",
        "--run",
        run_path.to_str().unwrap(),
        "--qrels",
        qrels.to_str().unwrap(),
        "--metric",
        "ndcg@10",
    ]);
    // (1/log2(3) + 1) / 2
    assert_eq!(out, "0.8155\n");
    let bad = run(&[
        "eval",
        "--run",
        run_path.to_str().unwrap(),
        "--qrels",
        qrels.to_str().unwrap(),
        "--metric",
        "map",
    ]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn io_errors_exit_2_and_validation_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.trec");
    let o = run(&[
        "eval",
        "--run",
        missing.to_str().unwrap(),
        "--qrels",
        missing.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));

    let world = small_world(dir.path(), 2);
    let o = run(&["build-library", "--world", &world, "--k", "0", "--out", "x.json"]);
    assert_eq!(o.status.code(), Some(1));
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    let o = run(&["experiment", "--config", bad.to_str().unwrap(), "--out", "x"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn three_gate_library_has_at_most_nine_entries() {
    let dir = tempfile::tempdir().unwrap();
    let world = small_world(dir.path(), 3);
    let lib = dir.path().join("pilots.json");
    let asg = dir.path().join("assignments.csv");
    let out = ok(&[
        "build-library",
        "--world",
        &world,
        "--k",
        "1",
        "--out",
        lib.to_str().unwrap(),
        "--assignments",
        asg.to_str().unwrap(),
    ]);
    let n: usize = out.trim().strip_suffix(" entries").unwrap().parse().unwrap();
    assert!((1..=9).contains(&n));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&lib).unwrap()).unwrap();
    assert_eq!(json["entries"].as_array().unwrap().len(), n);
    assert_eq!(json["k"], 1);
    assert_eq!(json["seed"], 10);
    let header = fs::read_to_string(&asg).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "query_id,source_dataset,max_gate,tied,G0,G1,G2");
}

#[test]
fn experiment_writes_the_four_tables() {
    let dir = tempfile::tempdir().unwrap();
    let world = small_world(dir.path(), 3);
    let out = dir.path().join("results");
    let printed = ok(&["experiment", "--world", &world, "--out", out.to_str().unwrap()]);
    for f in [
        "results.csv",
        "routes.csv",
        "selection_matrix.csv",
        "max_gate_matrix.csv",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let results = fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(printed, results);
    assert!(results.starts_with("router,D0,D1,D2,average\npilot,"));
    let routes = fs::read_to_string(out.join("routes.csv")).unwrap();
    assert!(routes.starts_with("query_id,router,selected_gate,G0,G1,G2\n"));

    let prov: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("provenance.json")).unwrap()).unwrap();
    assert_eq!(prov["seed"], 10);
    let out11 = dir.path().join("results11");
    let o = bin()
        .env("RR_SEED", "11")
        .args(["experiment", "--world", &world, "--out", out11.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(o.status.success());
    let prov: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out11.join("provenance.json")).unwrap()).unwrap();
    assert_eq!(prov["seed"], 11);
}

#[test]
fn route_retrieve_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let world = small_world(dir.path(), 2);
    let w = Path::new(&world);
    let lib = dir.path().join("pilots.json");
    ok(&["build-library", "--world", &world, "--out", lib.to_str().unwrap()]);
    let routes = dir.path().join("routes.csv");
    ok(&[
        "route",
        "--queries",
        w.join("base_queries.emb").to_str().unwrap(),
        "--library",
        lib.to_str().unwrap(),
        "--out",
        routes.to_str().unwrap(),
    ]);
    let text = fs::read_to_string(&routes).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 45);

    let run_path = dir.path().join("routed.trec");
    ok(&[
        "retrieve",
        "--corpus",
        w.join("corpus.emb").to_str().unwrap(),
        "--routes",
        routes.to_str().unwrap(),
        "--gate",
        &format!("G0={}", w.join("gate_G0_queries.emb").display()),
        "--gate",
        &format!("G1={}", w.join("gate_G1_queries.emb").display()),
        "--out",
        run_path.to_str().unwrap(),
    ]);
    let routed: f64 = ok(&[
        "eval",
        "--run",
        run_path.to_str().unwrap(),
        "--qrels",
        w.join("qrels.txt").to_str().unwrap(),
    ])
    .trim()
    .parse()
    .unwrap();

    let base_run = dir.path().join("base.trec");
    ok(&[
        "retrieve",
        "--corpus",
        w.join("corpus.emb").to_str().unwrap(),
        "--queries",
        w.join("base_queries.emb").to_str().unwrap(),
        "--out",
        base_run.to_str().unwrap(),
    ]);
    let base: f64 = ok(&[
        "eval",
        "--run",
        base_run.to_str().unwrap(),
        "--qrels",
        w.join("qrels.txt").to_str().unwrap(),
    ])
    .trim()
    .parse()
    .unwrap();
    assert!(routed > base, "routed {routed} base {base}");
}

#[test]
fn trained_routers_round_trip_through_route() {
    let dir = tempfile::tempdir().unwrap();
    let world = small_world(dir.path(), 3);
    let base = Path::new(&world).join("base_queries.emb");
    for kind in ["head", "expert", "dataset"] {
        let path = dir.path().join(format!("{kind}.json"));
        ok(&[
            "train-router",
            "--world",
            &world,
            "--kind",
            kind,
            "--out",
            path.to_str().unwrap(),
        ]);
        let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(json["router"], kind);
        let routes = ok(&[
            "route",
            "--queries",
            base.to_str().unwrap(),
            "--router",
            path.to_str().unwrap(),
        ]);
        assert!(routes.lines().skip(1).all(|l| l.split(',').nth(1) == Some(kind)));
    }
    let o = run(&["train-router", "--world", &world, "--kind", "oracle", "--out", "x.json"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn ablate_writes_curves() {
    let dir = tempfile::tempdir().unwrap();
    let world = small_world(dir.path(), 3);
    let out = dir.path().join("ablate");
    ok(&[
        "ablate",
        "--world",
        &world,
        "--order",
        "G0,G1,G2",
        "--order",
        "G2,G1,G0",
        "--ks",
        "1,2,4",
        "--out",
        out.to_str().unwrap(),
    ]);
    let gates = fs::read_to_string(out.join("ablate_gates.csv")).unwrap();
    let lines: Vec<&str> = gates.lines().collect();
    assert!(lines[0].starts_with("order,gate_count,gates,pilot,"));
    assert_eq!(lines.len(), 1 + 6);
    let last_a: Vec<&str> = lines[3].split(',').skip(3).collect();
    let last_b: Vec<&str> = lines[6].split(',').skip(3).collect();
    assert_eq!(last_a, last_b);
    let pilots = fs::read_to_string(out.join("ablate_pilots.csv")).unwrap();
    assert_eq!(pilots.lines().count(), 4);
    assert_eq!(
        run(&["ablate", "--world", &world, "--out", out.to_str().unwrap()])
            .status
            .code(),
        Some(1)
    );
}
