//! End-to-end runs of the `privot` binary on small configurations.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use privot::candidates::{AttractionRepulsionParams, CandidateFamily, Provenance};
use privot::cli::{load_dataset, read_points_csv, true_params_for};
use privot::config::RunConfig;
use privot::dp::SeededRng;
use privot::grid::GridSpec;
use privot::metrics::STREAM_DATA;
use privot::models::{generate_samples, ExperimentModel};

const TOY: &str = r#"
[grid]
m = 12
[family]
size = 6
[data]
n = 40
seed = 5
[sweep]
n_values = [40, 80]
epsilons = [1.0, 4.0]
replicates = 2
n_mc = 200
[verify]
trials = 5000
pairs = 4
[packing]
cells_per_h = 16
[covering]
resolutions = [1]
delta = 0.5
"#;

struct Run {
    dir: tempfile::TempDir,
}

impl Run {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("run.toml"), config).unwrap();
        Self { dir }
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn privot(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_privot"))
            .arg("--config")
            .arg(self.dir.path().join("run.toml"))
            .arg("--out")
            .arg(self.out())
            .args(args)
            .env_remove("PRIVOT__DATA__SEED")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) {
        let o = self.privot(args);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }

    fn read(&self, name: &str) -> String {
        std::fs::read_to_string(self.out().join(name)).unwrap()
    }
}

fn ndjson(text: &str) -> Vec<Value> {
    text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

/// Minimal schema: every record is an object with a string `record` tag and
/// the listed keys per tag; the first record is the config echo.
fn check_schema(records: &[Value], command: &str, required: &[(&str, &[&str])]) {
    assert_eq!(records[0]["record"], "config");
    assert_eq!(records[0]["command"], command);
    assert!(records[0]["config"]["grid"]["m"].is_u64());
    for r in &records[1..] {
        let tag = r["record"].as_str().expect("record tag");
        let keys = required
            .iter()
            .find(|(t, _)| *t == tag)
            .unwrap_or_else(|| panic!("unexpected record kind {tag}"))
            .1;
        for k in keys {
            assert!(!r[*k].is_null(), "{tag} record lacks {k}: {r}");
        }
    }
    for (tag, _) in required {
        assert!(records.iter().any(|r| r["record"] == *tag), "no {tag} record");
    }
}

fn config() -> RunConfig {
    RunConfig::from_toml_with_env(TOY, Vec::new()).unwrap()
}

#[test]
fn generate_writes_reloadable_dataset() {
    let run = Run::new(TOY);
    run.ok(&["generate"]);
    let x = run.read("X.csv");
    assert!(x.starts_with("x1,x2\n"));
    assert_eq!(x.lines().count(), 41);
    assert!(!x.contains('\r'));
    let meta: Value = serde_json::from_str(&run.read("X.csv.meta.json")).unwrap();
    assert_eq!(meta["config"]["data"]["n"], 40);
    assert_eq!(meta["details"]["seed"], 5);

    // Serialization oracle: the files reproduce the in-memory samples bit for bit.
    let cfg = config();
    let model = ExperimentModel {
        true_params: true_params_for(&cfg, 5).unwrap(),
        domain: cfg.grid.domain().unwrap(),
        n: 40,
    };
    let (xs, _, ys) = generate_samples(&model, &mut SeededRng::new(5, STREAM_DATA)).unwrap();
    let (x_back, d) = read_points_csv(x.as_bytes()).unwrap();
    let (y_back, _) = read_points_csv(run.read("Y.csv").as_bytes()).unwrap();
    assert_eq!(d, 2);
    assert_eq!(x_back, xs);
    assert_eq!(y_back, ys);
    let params: AttractionRepulsionParams = serde_json::from_value(meta["details"]["true_params"].clone()).unwrap();
    assert_eq!(params, model.true_params);
    let spec = cfg.grid.spec().unwrap();
    assert_eq!(load_dataset(&run.out(), &spec).unwrap().len(), 40);
}

#[test]
fn generate_with_ten_points() {
    let run = Run::new(&TOY.replace("n = 40", "n = 10"));
    run.ok(&["generate"]);
    assert_eq!(run.read("X.csv").lines().count(), 11);
    assert_eq!(run.read("Y.csv").lines().count(), 11);
}

#[test]
fn seed_fixes_outputs() {
    let a = Run::new(TOY);
    let b = Run::new(TOY);
    let c = Run::new(TOY);
    a.ok(&["--seed", "9", "generate"]);
    b.ok(&["--seed", "9", "generate"]);
    c.ok(&["--seed", "10", "generate"]);
    assert_eq!(a.read("X.csv"), b.read("X.csv"));
    assert_ne!(a.read("X.csv"), c.read("X.csv"));
    for r in [&a, &b] {
        r.ok(&["--seed", "9", "fit"]);
    }
    let without_dir = |r: &Run| {
        let mut v: Value = serde_json::from_str(&r.read("fit.json")).unwrap();
        v["config"]["output"].take();
        v
    };
    assert_eq!(without_dir(&a), without_dir(&b));
    assert_eq!(a.read("map.csv"), b.read("map.csv"));
}

#[test]
fn fit_redacts_by_default() {
    let run = Run::new(TOY);
    run.ok(&["generate"]);
    run.ok(&["fit"]);
    let fit: Value = serde_json::from_str(&run.read("fit.json")).unwrap();
    assert!(fit.get("diagnostics").is_none());
    assert!(!run.read("fit.json").contains("raw_scores"));
    assert_eq!(fit["certificate"]["mechanism"], "report-noisy-argmin-laplace");
    assert_eq!(fit["certificate"]["epsilon"], 1.0);
    let scale = fit["noise_scale"].as_f64().unwrap();
    assert!((scale - 4.0 * 0.25 / 40.0).abs() < 1e-15);
    assert_eq!(fit["config"]["family"]["size"], 6);
    let map = run.read("map.csv");
    assert!(map.starts_with("x1,x2,t1,t2\n"));
    assert_eq!(map.lines().count(), 1 + 144);
    assert!(run.out().join("map.csv.meta.json").exists());

    run.ok(&["--unsafe-diagnostics", "fit"]);
    let fit: Value = serde_json::from_str(&run.read("fit.json")).unwrap();
    assert_eq!(fit["diagnostics"]["raw_scores"].as_array().unwrap().len(), 6);
}

#[test]
fn single_member_family_is_selected() {
    let run = Run::new(TOY);
    run.ok(&["generate"]);
    let cfg = config();
    let spec = cfg.grid.spec().unwrap();
    let family = CandidateFamily::from_params(&spec, vec![(true_params_for(&cfg, 5).unwrap(), Provenance::Truth)]).unwrap();
    let path = run.dir.path().join("one.json");
    family.save_labels(&path).unwrap();
    run.ok(&["fit", "--family", path.to_str().unwrap()]);
    let fit: Value = serde_json::from_str(&run.read("fit.json")).unwrap();
    assert_eq!(fit["chosen_index"], 0);
    assert_eq!(fit["chosen_label"]["provenance"], "truth");
}

#[test]
fn fit_rejects_grid_mismatch() {
    let run = Run::new(TOY);
    run.ok(&["generate"]);
    let other = GridSpec::uniform(-0.5, 0.5, 7, 2).unwrap();
    let cfg = config();
    let family = CandidateFamily::from_params(&other, vec![(true_params_for(&cfg, 5).unwrap(), Provenance::Truth)]).unwrap();
    let path = run.dir.path().join("other.json");
    family.save_labels(&path).unwrap();
    let o = run.privot(&["fit", "--family", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid"));

    // A dataset generated on another grid is refused in include-true mode.
    let moved = Run::new(&TOY.replace("m = 12", "m = 10"));
    std::fs::create_dir_all(moved.out()).unwrap();
    for f in ["X.csv", "Y.csv", "X.csv.meta.json", "Y.csv.meta.json"] {
        std::fs::copy(run.out().join(f), moved.out().join(f)).unwrap();
    }
    assert_eq!(moved.privot(&["fit"]).status.code(), Some(2));
}

#[test]
fn missing_input_is_an_io_error() {
    let run = Run::new(&TOY.replace("[family]\nsize = 6", "[family]\nsize = 6\nmode = \"decoys-only\""));
    let o = run.privot(&["fit", "--data", "/nonexistent/dir"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("X.csv"));
    assert_eq!(run.privot(&["kde", "--data", "/nonexistent.csv"]).status.code(), Some(3));
}

#[test]
fn config_errors_exit_two() {
    let run = Run::new("[grid]\nbogus = 1\n");
    assert_eq!(run.privot(&["generate"]).status.code(), Some(2));
    let run = Run::new("[privacy]\nepsilon = -1.0\n");
    assert_eq!(run.privot(&["generate"]).status.code(), Some(2));
    let run = Run::new(TOY);
    assert_eq!(run.privot(&["no-such-command"]).status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_privot"))
        .args(["--config", "/nonexistent.toml", "generate"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn env_override_reaches_command() {
    let run = Run::new(TOY);
    let o = Command::new(env!("CARGO_BIN_EXE_privot"))
        .arg("--config")
        .arg(run.dir.path().join("run.toml"))
        .arg("--out")
        .arg(run.out())
        .arg("generate")
        .env("PRIVOT__DATA__N", "7")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(run.read("X.csv").lines().count(), 8);
}

#[test]
fn sweep_schema() {
    let run = Run::new(TOY);
    run.ok(&["sweep"]);
    let records = ndjson(&run.read("sweep.ndjson"));
    check_schema(
        &records,
        "sweep",
        &[
            (
                "row",
                &["n", "epsilon", "seed", "error_private", "error_nonprivate", "error_identity", "chosen_rank", "runtime_secs"],
            ),
            ("summary", &["n", "epsilon", "median_error_private", "median_error_nonprivate", "median_error_identity"]),
        ],
    );
    assert_eq!(records.iter().filter(|r| r["record"] == "row").count(), 2 * 2 * 2);
    assert_eq!(records.iter().filter(|r| r["record"] == "summary").count(), 4);

    // Deterministic apart from wall-clock fields.
    let again = Run::new(TOY);
    again.ok(&["sweep"]);
    let strip = |mut v: Vec<Value>| {
        for r in &mut v {
            if let Some(o) = r.as_object_mut() {
                o.remove("runtime_secs");
                o.remove("config");
            }
        }
        v
    };
    assert_eq!(strip(records), strip(ndjson(&again.read("sweep.ndjson"))));
}

#[test]
fn verify_dp_schema_and_failure_code() {
    let run = Run::new(TOY);
    run.ok(&["verify-dp"]);
    let records = ndjson(&run.read("verify_dp.ndjson"));
    check_schema(
        &records,
        "verify-dp",
        &[
            ("index", &["pair", "index", "count_d", "count_d_prime", "bound", "pass", "side", "grid_point"]),
            ("summary", &["pairs", "failed_pairs", "max_ratio", "pass"]),
        ],
    );
    assert_eq!(records.last().unwrap()["pass"], true);

    // Far too little noise on many pairs must be caught, with the verification exit code.
    let weak = Run::new(&TOY.replace("pairs = 4", "pairs = 40\nnoise_factor = 0.1\nepsilon = 0.5"));
    let o = weak.privot(&["verify-dp"]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = ndjson(&weak.read("verify_dp.ndjson")).pop().unwrap();
    assert_eq!(summary["pass"], false);
}

#[test]
fn verify_packing_schema() {
    let run = Run::new(TOY);
    run.ok(&["verify-packing"]);
    let records = ndjson(&run.read("verify_packing.ndjson"));
    check_schema(
        &records,
        "verify-packing",
        &[
            ("distance", &["h", "ham", "distance"]),
            ("tv", &["h", "ham", "tv", "ratio"]),
            ("summary", &["distance_slope", "expected_distance_slope", "additivity_rel_err", "pass"]),
        ],
    );
    assert_eq!(records.last().unwrap()["pass"], true);
}

#[test]
fn covering_stats_schema() {
    let run = Run::new(TOY);
    run.ok(&["covering-stats"]);
    let records = ndjson(&run.read("covering_stats.ndjson"));
    check_schema(
        &records,
        "covering-stats",
        &[
            ("resolution", &["resolution", "dimension", "log_exact", "log_bound", "count", "acceptance_rate"]),
            ("selected-resolution", &["n", "epsilon", "resolution"]),
        ],
    );
    let row = &records[1];
    assert_eq!(row["dimension"], 2);
    let count = row["count"].as_f64().unwrap();
    assert!((count.ln() - row["log_exact"].as_f64().unwrap()).abs() < 1e-9);
}

#[test]
fn kde_schema() {
    let run = Run::new(TOY);
    run.ok(&["generate"]);
    let x = run.out().join("X.csv");
    run.ok(&["kde", "--data", x.to_str().unwrap(), "--bandwidth", "0.1"]);
    let text = run.read("kde.csv");
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x1,x2,density"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 144);
    assert!(rows.iter().all(|r| r.len() == 3 && r[2] >= 0.0));
    let meta: Value = serde_json::from_str(&run.read("kde.csv.meta.json")).unwrap();
    assert_eq!(meta["details"]["bandwidth"], 0.1);
    assert!(Path::new(meta["details"]["input"].as_str().unwrap()).ends_with("X.csv"));
}
