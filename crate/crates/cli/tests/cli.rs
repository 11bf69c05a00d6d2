use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mega(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mega"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = mega(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(dir: &Path, args: &[&str]) -> String {
    let out = mega(dir, args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

#[test]
fn gen_data_shapes_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "gen-data",
            "--kind",
            "three_cluster",
            "--n",
            "1500",
            "--seed",
            "7",
            "--out",
            "tc",
        ],
    );
    let csv = fs::read_to_string(d.join("tc/data.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1500);
    assert!(csv.lines().all(|l| l.split(',').count() == 2));
    assert!(d.join("tc/generator.model").exists());

    ok(
        d,
        &[
            "gen-data", "--kind", "moons", "--n", "1000", "--noise", "0.05", "--seed", "1", "--out", "mo",
        ],
    );
    assert_eq!(fs::read_to_string(d.join("mo/data.csv")).unwrap().lines().count(), 1000);

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("tc/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "gen-data");
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["parameters"]["n"], "1500");
    assert_eq!(
        manifest["artifacts"],
        serde_json::json!(["data.csv", "generator.model"])
    );
    assert!(manifest["timestamp"].as_str().unwrap().ends_with('Z'));
}

#[test]
fn mega_routes_agree_and_exact_identity_holds() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-data", "--kind", "moons", "--n", "300", "--out", "data"]);
    ok(d, &["fit", "--data", "data/data.csv", "--k", "2", "--out", "fit"]);
    ok(
        d,
        &[
            "mega",
            "--data",
            "data/data.csv",
            "--model",
            "fit/model.model",
            "--m",
            "800",
            "--save-cms",
            "--out",
            "a",
        ],
    );
    ok(
        d,
        &["mega", "--data", "data/data.csv", "--cms", "a/cms.csv", "--out", "b"],
    );
    assert_eq!(
        fs::read(d.join("a/mega.csv")).unwrap(),
        fs::read(d.join("b/mega.csv")).unwrap()
    );

    // a single component fitted by EM matches the data moments up to the floor
    ok(d, &["fit", "--data", "data/data.csv", "--k", "1", "--out", "one"]);
    let stdout = ok(
        d,
        &[
            "mega",
            "--data",
            "data/data.csv",
            "--model",
            "one/model.model",
            "--exact",
            "--out",
            "c",
        ],
    );
    assert!(stdout.contains("m_used = 0"));
    let mega1: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("1MEGA-F = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(mega1 < 1e-12);
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-data", "--kind", "three_cluster", "--n", "60", "--out", "tc"]);
    fs::write(d.join("one_d.csv"), "0.5\n1.5\n2.0\n").unwrap();

    let err = fails(d, &["mega", "--data", "one_d.csv", "--model", "tc/generator.model"]);
    assert!(err.contains("dimension"), "{err}");
    fails(d, &["mega", "--data", "tc/data.csv"]);
    fails(
        d,
        &[
            "mega",
            "--data",
            "tc/data.csv",
            "--model",
            "tc/generator.model",
            "--exact",
            "--m",
            "10",
        ],
    );
    fails(d, &["gen-data", "--kind", "spiral", "--n", "10"]);
    fails(d, &["fit", "--data", "missing.csv"]);
    fails(
        d,
        &["compare", "--data", "tc/data.csv", "--model", "tc/generator.model"],
    );
    fails(d, &["select", "--data", "tc/data.csv", "--k-min", "3", "--k-max", "2"]);
    fails(d, &["path", "--data", "tc/data.csv", "--alphas", "2,1"]);
    fails(
        d,
        &["variance-study", "--model", "tc/generator.model", "--replications", "1"],
    );

    fs::write(d.join("bad.csv"), "1.0,2.0\n3.0,x\n").unwrap();
    let err = fails(d, &["fit", "--data", "bad.csv"]);
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn compare_ranks_and_writes_scatter() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-data", "--kind", "three_cluster", "--n", "400", "--out", "tc"]);
    ok(d, &["fit", "--data", "tc/data.csv", "--k", "3", "--out", "k3"]);
    ok(
        d,
        &[
            "fit",
            "--data",
            "tc/data.csv",
            "--k",
            "1",
            "--variance-floor",
            "1.0",
            "--out",
            "k1",
        ],
    );
    ok(
        d,
        &[
            "compare",
            "--data",
            "tc/data.csv",
            "--model",
            "k1/model.model",
            "k3/model.model",
            "--out",
            "cmp",
        ],
    );
    let ranking = fs::read_to_string(d.join("cmp/ranking.csv")).unwrap();
    let first = ranking.lines().nth(1).unwrap();
    assert!(first.starts_with("1,1,k3/model.model,"), "{ranking}");
    let svg = fs::read_to_string(d.join("cmp/scatter_0.svg")).unwrap();
    assert_eq!(svg.matches("<circle").count(), 400 + 500);
    assert_eq!(
        fs::read_to_string(d.join("cmp/samples_1.csv")).unwrap().lines().count(),
        500
    );

    // a model against itself: identical reports, input order kept
    ok(
        d,
        &[
            "compare",
            "--data",
            "tc/data.csv",
            "--model",
            "k3/model.model",
            "k3/model.model",
            "--out",
            "self",
        ],
    );
    assert_eq!(
        fs::read(d.join("self/mega_0.csv")).unwrap(),
        fs::read(d.join("self/mega_1.csv")).unwrap()
    );
    let ranking = fs::read_to_string(d.join("self/ranking.csv")).unwrap();
    assert!(ranking.lines().nth(1).unwrap().starts_with("1,0,"));
}

#[test]
fn select_tables_have_the_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-data", "--kind", "three_cluster", "--n", "150", "--out", "tc"]);
    let stdout = ok(
        d,
        &[
            "select",
            "--data",
            "tc/data.csv",
            "--k-max",
            "3",
            "--restarts",
            "2",
            "--out",
            "sel",
        ],
    );
    assert_eq!(stdout.lines().count(), 8);
    let sel = fs::read_to_string(d.join("sel/selection.csv")).unwrap();
    assert_eq!(
        sel.lines().next().unwrap(),
        "k,loglik,aic,mega1_f,mega2_f,alpha,penalized_objective,seed,m_used"
    );
    assert_eq!(sel.lines().count(), 1 + 8 * 3);
    let path = fs::read_to_string(d.join("sel/path.csv")).unwrap();
    assert_eq!(path.lines().next().unwrap(), "alpha,best_by_aic,best_by_penalized");
    assert!(d.join("sel/aic.csv").exists() && d.join("sel/manifest.json").exists());
}
