//! End-to-end acceptance checks driven through the `deltactl` binary and
//! cross-checked against independent ground truth (the exhaustive grid
//! oracle and direct interval evaluation). Each test prints one
//! `ACCEPT #k PASS` line; tolerances and budgets are named constants.

use deltactl::problem::parse_problem;
use deltactl::run::{build_registry, encode_command, resolve_config, Flags};
use deltactl_core::eval::eval_qf;
use deltactl_core::rational::{parse_rat, rat};
use deltactl_core::{
    grid_oracle, parse_certificate, verify_certificate, CertNode, CheckResult, EvalCtx, Formula,
    Interval, IntervalBox, Mode, OdeRegistry, Rat, SolverConfig, TruthValue,
};
use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_deltactl")
}

fn corpus_files() -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus");
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .expect("corpus directory")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "ds"))
        .collect();
    files.sort();
    files
}

fn run_bin(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env_remove("DELTACTL_WORKERS")
        .output()
        .expect("binary runs")
}

fn run_json(args: &[&str]) -> Value {
    let out = run_bin(args);
    assert!(
        out.status.success(),
        "exit {:?} on {args:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON object")
}

/// Parse a problem file and rebuild the exact sentence and registry the
/// binary solves, through the same library entry points.
fn rebuild(path: &Path) -> (Formula, OdeRegistry, SolverConfig) {
    let text = std::fs::read_to_string(path).unwrap();
    let problem = parse_problem(&text).unwrap();
    let mut registry = build_registry(&problem).unwrap();
    let cfg = resolve_config(&Flags::default(), &problem.command.opts());
    let sentence = encode_command(&problem, &cfg, true, &mut registry).unwrap();
    (sentence, registry, cfg)
}

// ---------------------------------------------------------------------------
// A miniature validator for the shipped report schema. It supports exactly
// the keywords the schema uses: oneOf, type, required, properties,
// additionalProperties, enum, const, items, minimum.
// ---------------------------------------------------------------------------

fn validate(schema: &Value, inst: &Value) -> Result<(), String> {
    if let Some(options) = schema.get("oneOf").and_then(Value::as_array) {
        let hits = options.iter().filter(|s| validate(s, inst).is_ok()).count();
        if hits != 1 {
            return Err(format!("oneOf matched {hits} branches instead of 1"));
        }
        return Ok(());
    }
    if let Some(c) = schema.get("const") {
        if inst != c {
            return Err(format!("expected const {c}, got {inst}"));
        }
    }
    if let Some(allowed) = schema.get("enum").and_then(Value::as_array) {
        if !allowed.contains(inst) {
            return Err(format!("{inst} not in enum"));
        }
    }
    if let Some(ty) = schema.get("type").and_then(Value::as_str) {
        let ok = match ty {
            "object" => inst.is_object(),
            "array" => inst.is_array(),
            "string" => inst.is_string(),
            "integer" => inst.is_i64() || inst.is_u64(),
            other => return Err(format!("unsupported type keyword {other}")),
        };
        if !ok {
            return Err(format!("{inst} is not of type {ty}"));
        }
    }
    if let Some(min) = schema.get("minimum").and_then(Value::as_f64) {
        let v = inst.as_f64().ok_or("minimum on non-number")?;
        if v < min {
            return Err(format!("{v} below minimum {min}"));
        }
    }
    if let Some(obj) = inst.as_object() {
        if let Some(req) = schema.get("required").and_then(Value::as_array) {
            for key in req {
                let key = key.as_str().unwrap();
                if !obj.contains_key(key) {
                    return Err(format!("missing required key {key}"));
                }
            }
        }
        let props = schema.get("properties").and_then(Value::as_object);
        if let Some(props) = props {
            for (key, sub) in props {
                if let Some(v) = obj.get(key) {
                    validate(sub, v).map_err(|e| format!("{key}: {e}"))?;
                }
            }
        }
        if schema.get("additionalProperties") == Some(&Value::Bool(false)) {
            for key in obj.keys() {
                if !props.is_some_and(|p| p.contains_key(key)) {
                    return Err(format!("unexpected key {key}"));
                }
            }
        }
    }
    if let (Some(items), Some(arr)) = (schema.get("items"), inst.as_array()) {
        for (i, v) in arr.iter().enumerate() {
            validate(items, v).map_err(|e| format!("[{i}]: {e}"))?;
        }
    }
    Ok(())
}

fn report_schema() -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../docs/report.schema.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn witness_box(report: &Value) -> IntervalBox {
    let mut env = IntervalBox::new();
    for w in report["witness"].as_array().expect("witness array") {
        let name = w["name"].as_str().unwrap().to_string();
        let value = parse_rat(w["value"].as_str().unwrap()).unwrap();
        env = env.with(name, Interval::from_rat(&value));
    }
    env
}

// ---------------------------------------------------------------------------
// #1 — full corpus against the exhaustive grid oracle
// ---------------------------------------------------------------------------

const CORPUS_TIME_LIMIT_S: f64 = 60.0;
const MIN_CORPUS_FILES: usize = 20;
const ORACLE_RESOLUTION: (i64, i64) = (1, 1000);
const ORACLE_MARGIN: (i64, i64) = (1, 1000);
const CORPUS_DELTA: (i64, i64) = (1, 20);

#[test]
fn accept_01_corpus_against_grid_oracle() {
    let start = Instant::now();
    let schema = report_schema();
    let resolution = rat(ORACLE_RESOLUTION.0, ORACLE_RESOLUTION.1);
    let margin = rat(ORACLE_MARGIN.0, ORACLE_MARGIN.1);
    let files = corpus_files();
    assert!(
        files.len() >= MIN_CORPUS_FILES,
        "corpus holds only {} files",
        files.len()
    );

    let mut counts = std::collections::BTreeMap::new();
    let mut flow_files = 0usize;
    for file in &files {
        let path = file.to_str().unwrap();
        let report = run_json(&["run", path, "--output", "json"]);
        validate(&schema, &report).unwrap_or_else(|e| panic!("{path}: schema violation: {e}"));
        let verdict = report["verdict"].as_str().unwrap().to_string();

        let (sentence, registry, cfg) = rebuild(file);
        assert_eq!(cfg.delta, rat(CORPUS_DELTA.0, CORPUS_DELTA.1), "{path}");
        if !registry.names().is_empty() {
            flow_files += 1;
        }
        let ctx = EvalCtx::new(&registry);

        match verdict.as_str() {
            "delta-sat" => {
                // The reported witness must satisfy the delta-weakened matrix
                // under direct interval evaluation.
                let env = witness_box(&report);
                let (_, matrix) = sentence.prenex().unwrap();
                let tv =
                    eval_qf(&matrix, &env, &ctx, &Mode::Weakened(cfg.delta.clone())).unwrap();
                assert_eq!(
                    tv,
                    TruthValue::CertTrue,
                    "{path}: witness fails the weakened matrix"
                );
            }
            "unsat" => {
                // Never refute a sentence the oracle confirms with margin.
                assert!(
                    !grid_oracle(&sentence.strengthen(&margin), &resolution, &registry).unwrap(),
                    "{path}: oracle satisfies the margin-strengthened sentence"
                );
                assert!(
                    !grid_oracle(&sentence, &resolution, &registry).unwrap(),
                    "{path}: oracle satisfies the original sentence"
                );
            }
            "valid" => {
                assert!(
                    grid_oracle(&sentence, &resolution, &registry).unwrap(),
                    "{path}: oracle refutes a sentence reported valid"
                );
            }
            "delta-false" => {
                assert!(
                    !grid_oracle(&sentence.strengthen(&cfg.delta), &resolution, &registry)
                        .unwrap(),
                    "{path}: oracle satisfies the delta-strengthened sentence"
                );
            }
            other => panic!("{path}: unexpected verdict {other}"),
        }
        *counts.entry(verdict).or_insert(0usize) += 1;
    }

    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        elapsed < CORPUS_TIME_LIMIT_S,
        "corpus sweep took {elapsed:.1}s"
    );
    assert!(flow_files >= 1, "corpus must exercise the flow operator");
    for v in ["delta-sat", "unsat", "valid", "delta-false"] {
        assert!(counts.contains_key(v), "corpus never produced {v}");
    }
    let spread: Vec<String> = counts.iter().map(|(k, n)| format!("{n} {k}")).collect();
    println!(
        "ACCEPT #1 PASS: {} files [{}] agreed with the grid oracle in {elapsed:.1}s",
        files.len(),
        spread.join(", ")
    );
}

// ---------------------------------------------------------------------------
// #3 — the square-root query at a tighter slack
// ---------------------------------------------------------------------------

const SQRT2_DELTA: &str = "1/100";
const SQRT2_TIME_LIMIT_S: f64 = 1.0;

#[test]
fn accept_03_sqrt2_witness_quality() {
    let file = corpus_files()
        .into_iter()
        .find(|p| p.file_name().unwrap().to_str().unwrap().contains("sqrt2"))
        .expect("sqrt2 corpus file");
    let start = Instant::now();
    let report = run_json(&[
        "run",
        file.to_str().unwrap(),
        "--delta",
        SQRT2_DELTA,
        "--output",
        "json",
    ]);
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < SQRT2_TIME_LIMIT_S, "took {elapsed:.3}s");
    assert_eq!(report["verdict"], "delta-sat");
    let w = report["witness"][0]["value"].as_str().unwrap();
    let x = parse_rat(w).unwrap();
    // Exact rational arithmetic: |x² − 2| ≤ 1/100.
    let err = &x * &x - rat(2, 1);
    let err = if err < rat(0, 1) { -err } else { err };
    assert!(
        err <= parse_rat(SQRT2_DELTA).unwrap(),
        "witness {w} misses: |x^2 - 2| = {err}"
    );
    println!("ACCEPT #3 PASS: witness {w} has |x^2 - 2| = {err} within {SQRT2_DELTA} in {elapsed:.3}s");
}

// ---------------------------------------------------------------------------
// #10 — certificate round-trips and mutation rejection
// ---------------------------------------------------------------------------

const MIN_MUTATIONS: usize = 30;

/// Replace the first (root-most) split with one of its children, leaving the
/// kept child to answer for the whole cell.
fn drop_split(node: &mut CertNode, keep_below: bool) -> bool {
    match node {
        CertNode::Split { below, above, .. } => {
            *node = if keep_below {
                (**below).clone()
            } else {
                (**above).clone()
            };
            true
        }
        CertNode::Point { child, .. } => drop_split(child, keep_below),
        CertNode::Facts { .. } => false,
    }
}

/// Move the first split point by `shift` (or clobber it entirely).
fn shift_split(node: &mut CertNode, new_at: Option<Rat>, shift: &Rat) -> bool {
    match node {
        CertNode::Split { at, .. } => {
            *at = new_at.unwrap_or_else(|| &*at + shift);
            true
        }
        CertNode::Point { child, .. } => shift_split(child, new_at, shift),
        CertNode::Facts { .. } => false,
    }
}

/// Perturb the first bound witness coordinate found along the leftmost path,
/// returning its name so the caller can keep it inside the declared range.
fn perturb_witness(node: &mut CertNode, pick: &dyn Fn(&str, &Rat) -> Rat) -> Option<String> {
    match node {
        CertNode::Point { bindings, .. } => {
            let (name, value) = &mut bindings[0];
            *value = pick(name, value);
            Some(name.clone())
        }
        CertNode::Split { below, .. } => perturb_witness(below, pick),
        CertNode::Facts { .. } => None,
    }
}

#[test]
fn accept_10_certificates_round_trip_and_mutants_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let schema = report_schema();
    let mut round_trips = 0usize;
    let mut gap_mutations = 0usize;
    let mut shift_mutations = 0usize;
    let mut witness_mutations = 0usize;

    for file in corpus_files() {
        let path = file.to_str().unwrap();
        let stem = file.file_stem().unwrap().to_str().unwrap();
        let cert_path = dir.path().join(format!("{stem}.crt"));
        let cert_str = cert_path.to_str().unwrap();

        // Emit and verify through the binary.
        let report = run_json(&["run", path, "--output", "json", "--certificate", cert_str]);
        validate(&schema, &report).unwrap_or_else(|e| panic!("{path}: schema violation: {e}"));
        assert_eq!(report["certificate_path"], cert_str, "{path}");
        let out = run_bin(&["verify", cert_str, path]);
        assert!(out.status.success(), "{path}: verify exited nonzero");
        let stdout = String::from_utf8(out.stdout).unwrap();
        assert_eq!(stdout.trim(), "accepted", "{path}: {stdout}");
        round_trips += 1;

        // Mutations, checked through the independent library checker.
        let cert = parse_certificate(&std::fs::read_to_string(&cert_path).unwrap()).unwrap();
        let (sentence, registry, cfg) = rebuild(&file);
        let ctx = EvalCtx::new(&registry);
        let (blocks, _) = sentence.prenex().unwrap();
        let bound_of = |name: &str| {
            blocks
                .iter()
                .flat_map(|b| &b.bindings)
                .find(|b| b.name == name)
                .map(|b| (b.lo.clone(), b.hi.clone()))
                .expect("witness variable is quantified")
        };
        let reject = |label: &str, mutant: &deltactl_core::Certificate| {
            let res = verify_certificate(mutant, &sentence, &cfg.delta, &[], &ctx);
            assert!(
                matches!(res, CheckResult::Rejected(_)),
                "{path}: {label} mutant was accepted"
            );
        };

        // Class one: cover gap — delete half of a split's cover.
        for keep_below in [true, false] {
            let mut mutant = cert.clone();
            if drop_split(&mut mutant.root, keep_below) {
                reject("cover-gap", &mutant);
                gap_mutations += 1;
            }
        }
        // Class two: shifted split — nudge the cut inside the cell, and
        // throw it outside the cell entirely.
        let mut mutant = cert.clone();
        if shift_split(&mut mutant.root, None, &rat(1, 1024)) {
            reject("shifted-split", &mutant);
            shift_mutations += 1;
        }
        let mut mutant = cert.clone();
        if shift_split(&mut mutant.root, Some(rat(1_000_000, 1)), &rat(0, 1)) {
            reject("outside-split", &mutant);
            shift_mutations += 1;
        }
        // Class three: perturbed witness — move a coordinate far enough to
        // break the recorded facts while staying in range (a witness nested
        // under a cover tolerates tiny moves, so the jump must clear the
        // widest tolerance band in the corpus), and push one out of range.
        let mut mutant = cert.clone();
        let nudged = perturb_witness(&mut mutant.root, &|name, v| {
            let (lo, hi) = bound_of(name);
            let step = rat(1, 4);
            if &(v + &step) <= &hi {
                v + &step
            } else if &(v - &step) >= &lo {
                v - &step
            } else {
                hi + rat(1, 1)
            }
        });
        if nudged.is_some() {
            reject("nudged-witness", &mutant);
            witness_mutations += 1;
        }
        let mut mutant = cert.clone();
        let moved = perturb_witness(&mut mutant.root, &|name, _| bound_of(name).1 + rat(1, 1));
        if moved.is_some() {
            reject("escaped-witness", &mutant);
            witness_mutations += 1;
        }
    }

    let total = gap_mutations + shift_mutations + witness_mutations;
    assert_eq!(round_trips, corpus_files().len());
    assert!(
        gap_mutations >= 4 && shift_mutations >= 4 && witness_mutations >= 4,
        "thin mutation classes: gap {gap_mutations}, shift {shift_mutations}, witness {witness_mutations}"
    );
    assert!(total >= MIN_MUTATIONS, "only {total} mutants");
    println!(
        "ACCEPT #10 PASS: {round_trips}/{round_trips} certificates re-verified; {total} mutants rejected ({gap_mutations} cover-gap, {shift_mutations} shifted-split, {witness_mutations} perturbed-witness)"
    );
}

// ---------------------------------------------------------------------------
// #11 — bit-for-bit determinism across runs and worker counts
// ---------------------------------------------------------------------------

const REPEAT_RUNS: usize = 3;
const WORKER_COUNTS: [&str; 2] = ["4", "8"];

#[test]
fn accept_11_deterministic_output() {
    let dir = tempfile::tempdir().unwrap();
    for file in corpus_files() {
        let path = file.to_str().unwrap();
        let stem = file.file_stem().unwrap().to_str().unwrap();

        // Every run writes the same certificate path so stdout (which names
        // it) must agree byte for byte; the bytes are captured after each
        // run, before the next one overwrites the file.
        let cert_path = dir.path().join(format!("{stem}.crt"));
        let cert_str = cert_path.to_str().unwrap().to_string();
        let mut outputs: Vec<(String, Vec<u8>, Vec<u8>)> = Vec::new();
        let mut record = |label: String, extra: &[&str]| {
            let mut args = vec!["run", path, "--certificate", &cert_str];
            args.extend_from_slice(extra);
            let out = run_bin(&args);
            assert!(out.status.success(), "{path} [{label}] exited nonzero");
            let cert = std::fs::read(&cert_path).unwrap_or_default();
            outputs.push((label, out.stdout, cert));
        };
        for i in 0..REPEAT_RUNS {
            record(format!("run {}", i + 1), &[]);
        }
        for w in WORKER_COUNTS {
            record(format!("workers {w}"), &["--workers", w]);
        }
        // The worker-pool environment variable must not change bytes either.
        let out = Command::new(bin())
            .args(["run", path, "--certificate", &cert_str])
            .env("DELTACTL_WORKERS", "8")
            .output()
            .unwrap();
        assert!(out.status.success());
        outputs.push((
            "env workers".into(),
            out.stdout,
            std::fs::read(&cert_path).unwrap_or_default(),
        ));

        let (_, base_stdout, base_cert) = &outputs[0];
        assert!(!base_cert.is_empty(), "{path}: no certificate written");
        for (label, stdout, cert) in &outputs[1..] {
            assert_eq!(stdout, base_stdout, "{path}: stdout drifted on {label}");
            assert_eq!(cert, base_cert, "{path}: certificate drifted on {label}");
        }
    }
    println!(
        "ACCEPT #11 PASS: byte-identical stdout and certificates across {REPEAT_RUNS} runs, workers {{1,4,8}}, and the environment override",
    );
}

// ---------------------------------------------------------------------------
// Error reports: malformed input stays machine-readable
// ---------------------------------------------------------------------------

#[test]
fn malformed_input_reports_validate_against_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ds");
    std::fs::write(&bad, "(declare-var x)\n(assert (>= x 0))\n(check-sat)\n").unwrap();
    let out = run_bin(&["run", bad.to_str().unwrap(), "--output", "json"]);
    assert_eq!(out.status.code(), Some(2), "syntax errors exit with 2");
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    validate(&report_schema(), &report).unwrap();
    assert_eq!(report["verdict"], "error");
    assert_eq!(report["error"]["code"], "E_SYNTAX");
}
