use std::path::PathBuf;
use std::process::Command;

use mvrisk::cli::{run_command, EXIT_INVALID, EXIT_OK, EXIT_VIOLATION};
use serde_json::Value;

fn data(name: &str) -> String {
    let mut p = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    p.push("tests/data");
    p.push(name);
    p.to_string_lossy().into_owned()
}

fn run(args: &[&str]) -> mvrisk::cli::Outcome {
    let mut argv = vec!["mvrisk"];
    argv.extend_from_slice(args);
    run_command(argv)
}

fn report(args: &[&str]) -> (i32, Value) {
    let out = run(args);
    assert!(out.stderr.is_empty(), "unexpected stderr: {}", out.stderr);
    (out.code, serde_json::from_str(&out.stdout).expect("report is JSON"))
}

#[test]
fn scalarize_bin1_reports_one() {
    let (tree, claim) = (data("bin1_tree.json"), data("bin1_claim.json"));
    for arith in ["rational", "f64"] {
        let (code, body) = report(&["scalarize", "--tree", &tree, "--claim", &claim, "--w", "1,1", "--time", "0", "--arith", arith]);
        assert_eq!(code, EXIT_OK);
        let value = &body["result"]["value"]["nodes"][0]["value"];
        assert_eq!(value.to_string().trim_matches('"').parse::<f64>().unwrap(), 1.0, "{arith}: {value}");
        assert_eq!(body["exit_code"], 0);
        assert_eq!(body["config"]["command"], "scalarize");
        assert_eq!(body["config"]["inputs"]["tree"]["sha256"].as_str().unwrap().len(), 64);
    }
}

#[test]
fn check_mptc_bin2_holds() {
    let (code, body) = report(&["check-mptc", "--tree", &data("bin2_tree.json"), "--market", &data("bin2_market.json"), "--mode", "exact", "--arith", "rational"]);
    assert_eq!(code, EXIT_OK);
    let reports = body["result"]["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 3);
    for r in reports {
        assert_eq!(r["verdict"], "holds", "{r}");
        assert_eq!(r["mode"], "exact");
    }
}

#[test]
fn unknown_leaf_is_a_validation_error() {
    let out = run(&["scalarize", "--tree", &data("bin1_tree.json"), "--claim", &data("bin1_bad_claim.json"), "--w", "1,1"]);
    assert_eq!(out.code, EXIT_INVALID);
    assert!(out.stderr.contains("bin1_bad_claim.json"), "{}", out.stderr);
    assert!(out.stderr.contains("leaf id 9"), "{}", out.stderr);
}

#[test]
fn missing_file_and_bad_flags_are_validation_errors() {
    let out = run(&["scalarize", "--tree", "/nonexistent/tree.json"]);
    assert_eq!(out.code, EXIT_INVALID);
    assert!(out.stderr.contains("--tree"));
    let out = run(&["check-mptc", "--tree", &data("bin2_tree.json"), "--tol", "0"]);
    assert_eq!(out.code, EXIT_INVALID);
    let out = run(&["check-mptc", "--tree", &data("bin2_tree.json"), "--directions", "0"]);
    assert_eq!(out.code, EXIT_INVALID);
    let out = run(&["frobnicate"]);
    assert_eq!(out.code, EXIT_INVALID);
}

#[test]
fn reports_are_deterministic() {
    let args = [
        "check-mptc",
        "--tree",
        &data("bin2_tree.json"),
        "--market",
        &data("bin2_market.json"),
        "--mode",
        "sampled",
        "--directions",
        "16",
        "--seed",
        "5",
    ];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.code, EXIT_OK);
    assert_eq!(a.stdout, b.stdout);
    let bin = env!("CARGO_BIN_EXE_mvrisk");
    let p1 = Command::new(bin).args(args).output().unwrap();
    let p2 = Command::new(bin).args(args).output().unwrap();
    assert_eq!(p1.status.code(), Some(EXIT_OK));
    assert_eq!(p1.stdout, p2.stdout);
    assert_eq!(String::from_utf8(p1.stdout).unwrap(), a.stdout);
}

#[test]
fn csv_and_json_outputs_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("chain.csv");
    let json_path = dir.path().join("chain.json");
    let base = ["moving-scalarization", "--tree", &data("bin2_tree.json"), "--claim", &data("bin2_claim.json"), "--market", &data("bin2_market.json"), "--arith", "rational"];
    for path in [&csv_path, &json_path] {
        let mut args = base.to_vec();
        let p = path.to_string_lossy().into_owned();
        args.extend(["--out", &p]);
        let out = run(&args);
        assert_eq!(out.code, EXIT_OK, "{}", out.stderr);
        assert!(out.stdout.is_empty());
    }
    let mut reader = csv::Reader::from_path(&csv_path).unwrap();
    assert_eq!(reader.headers().unwrap(), vec!["time", "node", "value"]);
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 7);
    let body: Value = serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
    assert_eq!(body["exit_code"], 0);
    assert_eq!(rows[0][0].to_string(), "0");
}

#[test]
fn single_eligible_asset_violates_mptc() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(data("bin2_tree.json")).unwrap().replace("\"m\": 2", "\"m\": 1");
    let tree = dir.path().join("bin2_m1.json");
    std::fs::write(&tree, text).unwrap();
    let tree = tree.to_string_lossy().into_owned();
    let (code, body) = report(&["check-mptc", "--tree", &tree, "--market", &data("bin2_market.json"), "--arith", "rational", "--time", "0", "--step", "1"]);
    assert_eq!(code, EXIT_VIOLATION);
    assert_eq!(body["result"]["reports"][0]["verdict"], "violated");
    assert_eq!(body["exit_code"], EXIT_VIOLATION);
}

#[test]
fn recursion_gap_and_builders_succeed() {
    let (tree, claim) = (data("bin2_tree.json"), data("bin2_claim.json"));
    let (code, body) = report(&["recursion-gap", "--tree", &tree, "--claim", &claim, "--market", &data("bin2_market.json"), "--arith", "rational"]);
    assert_eq!(code, EXIT_OK);
    for pair in body["result"]["pairs"].as_array().unwrap() {
        for node in pair["gaps"].as_array().unwrap() {
            assert_eq!(node["value"], "0", "{pair}");
        }
    }
    let (code, body) = report(&["compose-avar", "--tree", &tree, "--claim", &claim, "--avar", &data("bin2_avar.json"), "--arith", "rational"]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(body["system"]["coherent"], true);
    let (code, _) = report(&["superhedge", "--tree", &tree, "--claim", &claim, "--market", &data("bin2_market.json")]);
    assert_eq!(code, EXIT_OK);
    let out = run(&["compose-avar", "--tree", &tree, "--claim", &claim, "--market", &data("bin2_market.json")]);
    assert_eq!(out.code, EXIT_INVALID);
}

#[test]
fn dual_verify_has_zero_gap() {
    let (code, body) = report(&["dual-verify", "--tree", &data("bin1_tree.json"), "--claim", &data("bin1_claim.json"), "--arith", "rational"]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(body["result"]["nodes"][0]["gap"], "0");
}
