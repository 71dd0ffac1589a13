use std::path::Path;
use std::process::{Command, Output};

fn crvb(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crvb"))
        .current_dir(dir)
        .env_remove("CRVB_SEED")
        .env_remove("CRVB_THREADS")
        .args(args)
        .output()
        .expect("failed to launch crvb")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("terminated by signal")
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

const SMALL: &str = r#"{"problem":{"resolution":5}}"#;

#[test]
fn zero_connection_flattens_immediately() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "zero.json", r#"{"problem":{"amplitude":0.0,"resolution":5}}"#);
    let o = crvb(dir.path(), &["flatten", "--config", "zero.json", "--out-dir", "out"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["run"]["steps"], 0);
    assert_eq!(summary["run"]["converged"], true);
}

#[test]
fn unknown_flag_prints_usage_and_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let o = crvb(dir.path(), &["flatten", "--no-such-flag"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(code(&crvb(dir.path(), &["--help"])), 0);
}

#[test]
fn bad_config_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "even.json", r#"{"problem":{"resolution":4}}"#);
    assert_eq!(code(&crvb(dir.path(), &["manufacture", "--config", "even.json"])), 1);
    write(dir.path(), "typo.json", r#"{"problem":{"resolutoin":5}}"#);
    assert_eq!(code(&crvb(dir.path(), &["manufacture", "--config", "typo.json"])), 1);
}

#[test]
fn truncated_and_missing_files_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.json", SMALL);
    assert_eq!(code(&crvb(dir.path(), &["manufacture", "--config", "c.json"])), 0);
    let bytes = std::fs::read(dir.path().join("omega.crvb")).unwrap();
    for cut in [3, 40, bytes.len() / 2, bytes.len() - 1] {
        std::fs::write(dir.path().join("cut.crvb"), &bytes[..cut]).unwrap();
        let o = crvb(dir.path(), &["norms", "--field", "cut.crvb"]);
        assert_eq!(code(&o), 3, "cut at {cut}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(code(&crvb(dir.path(), &["norms", "--field", "absent.crvb"])), 3);
}

#[test]
fn manufacture_flatten_verify_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "c.json", SMALL);
    assert_eq!(code(&crvb(d, &["manufacture", "--config", "c.json"])), 0);
    let o = crvb(d, &["flatten", "--config", "c.json", "--omega", "omega.crvb"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["G.crvb", "trace.csv", "summary.json"] {
        assert!(d.join(f).exists(), "{f} missing");
    }
    let o = crvb(d, &["verify", "--omega", "omega.crvb", "--gauge", "G.crvb"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));

    // The identity gauge does not flatten a nonzero connection.
    let truth = crvb(d, &["verify", "--omega", "omega.crvb", "--gauge", "a_true.crvb", "--tol", "1e-12"]);
    assert_ne!(code(&truth), 0);

    let o = crvb(d, &["norms", "--field", "G.crvb", "--kind", "fs", "--k", "1"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("kind,k,alpha,rho,value"));

    let o = crvb(d, &["trace", "--input", "trace.csv", "--output", "plot.csv"]);
    assert_eq!(code(&o), 0);
    let plot = std::fs::read_to_string(d.join("plot.csv")).unwrap();
    assert!(plot.starts_with("j,log10_delta0,zeta_j"));

    let header = std::fs::read_to_string(d.join("trace.csv")).unwrap();
    assert!(header.starts_with("j,rho,sigma,delta0,eta_hat,alpha_j,zeta_j,normB,normB_holder,residual"));
}

#[test]
fn saves_are_byte_identical_and_runs_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "c.json", SMALL);
    for tag in ["a", "b"] {
        let o = crvb(
            d,
            &["manufacture", "--config", "c.json", "--omega", &format!("o{tag}.crvb"), "--truth", &format!("t{tag}.crvb")],
        );
        assert_eq!(code(&o), 0);
        let o = crvb(d, &["flatten", "--config", "c.json", "--out-dir", tag]);
        assert_eq!(code(&o), 0);
    }
    let same = |a: &str, b: &str| std::fs::read(d.join(a)).unwrap() == std::fs::read(d.join(b)).unwrap();
    assert!(same("oa.crvb", "ob.crvb"));
    assert!(same("ta.crvb", "tb.crvb"));
    assert!(same("a/G.crvb", "b/G.crvb"));
    assert!(same("a/trace.csv", "b/trace.csv"));
}

#[test]
fn seed_override_changes_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "c.json", SMALL);
    assert_eq!(code(&crvb(d, &["manufacture", "--config", "c.json", "--omega", "a.crvb"])), 0);
    let o = Command::new(env!("CARGO_BIN_EXE_crvb"))
        .current_dir(d)
        .env("CRVB_SEED", "99")
        .args(["manufacture", "--config", "c.json", "--omega", "b.crvb"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_ne!(std::fs::read(d.join("a.crvb")).unwrap(), std::fs::read(d.join("b.crvb")).unwrap());
    let bad = Command::new(env!("CARGO_BIN_EXE_crvb"))
        .current_dir(d)
        .env("CRVB_THREADS", "many")
        .args(["manufacture", "--config", "c.json"])
        .output()
        .unwrap();
    assert_eq!(code(&bad), 1);
}

#[test]
fn large_frame_without_normalization_is_a_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // A = [[1 + 0.9 z̄1, 0], [0.9 z̄2, 1]] stays invertible on the unit chart
    // but its connection is far outside the smallness regime.
    write(
        d,
        "frame.json",
        r#"{"m":2,"r":2,"terms":[
            {"exponent":[0,0,0,0,0],"entries":[[1,0],[0,0],[0,0],[1,0]]},
            {"exponent":[0,0,1,0,0],"entries":[[0.9,0],[0,0],[0,0],[0,0]]},
            {"exponent":[0,0,0,1,0],"entries":[[0,0],[0,0],[0.9,0],[0,0]]}]}"#,
    );
    write(
        d,
        "c.json",
        r#"{"problem":{"generator":"custom-file","custom_path":"frame.json","resolution":5},
            "engine":{"normalization":"none"}}"#,
    );
    let o = crvb(d, &["flatten", "--config", "c.json"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("summary.json")).unwrap()).unwrap();
    assert!(summary["error"].as_str().unwrap().contains("smallness"));
}
