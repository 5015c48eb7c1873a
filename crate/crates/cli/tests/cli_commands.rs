use std::path::PathBuf;
use std::process::{Command, Output};

fn photocount(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_photocount"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_of(args: &[&str]) -> String {
    let out = photocount(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn num(s: &str) -> f64 {
    s.parse().unwrap()
}

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

#[test]
fn figure_datasets_match_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("fig1.csv", vec!["counts", "--figure", "1"]),
        ("fig2.csv", vec!["counts", "--figure", "2"]),
        ("fig3.csv", vec!["counts", "--figure", "3"]),
        ("fig4.csv", vec!["master", "--figure", "4"]),
    ];
    for (name, args) in cases {
        let path = dir.path().join(name);
        let mut a = args.clone();
        a.extend(["--out", path.to_str().unwrap()]);
        assert!(photocount(&a).status.success());
        let fresh = std::fs::read(&path).unwrap();
        assert_eq!(
            fresh,
            std::fs::read(golden(name)).unwrap(),
            "{name} drifted"
        );
        assert!(!fresh.contains(&b'\r'));
        // stdout and file output are the same bytes
        assert_eq!(photocount(&args).stdout, fresh);
    }
}

#[test]
fn dist_command() {
    let out = rows(&stdout_of(&["dist", "--state", "thermal", "--nbar", "5"]));
    assert_eq!(out[0][0], "0");
    assert!((num(&out[0][1]) - 1.0 / 6.0).abs() < 1e-12);
    let fock = rows(&stdout_of(&["dist", "--state", "fock", "--m", "5"]));
    let nonzero = fock
        .iter()
        .filter(|r| num(&r[1]) != 0.0)
        .collect::<Vec<_>>();
    assert_eq!(nonzero.len(), 1);
    assert_eq!(nonzero[0][0], "5");
    let bad = photocount(&["dist", "--state", "custom", "--p", "0.5,-0.1,0.6"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("p[1]"));
}

#[test]
fn counts_command_limits() {
    let out = rows(&stdout_of(&[
        "counts",
        "--state",
        "fock",
        "--m",
        "5",
        "--gamma-t",
        "60",
        "--k-list",
        "5,6",
    ]));
    assert_eq!(out.len(), 2);
    assert!((num(&out[0][2]) - 1.0).abs() < 1e-11 && (num(&out[0][3]) - 1.0).abs() < 1e-11);
    assert_eq!((num(&out[1][2]), num(&out[1][3])), (0.0, 0.0));
    for r in rows(&stdout_of(&[
        "counts", "--state", "fock", "--m", "5", "--k", "6",
    ])) {
        assert_eq!((num(&r[2]), num(&r[3])), (0.0, 0.0));
    }
    let zero = rows(&stdout_of(&[
        "counts",
        "--state",
        "thermal",
        "--nbar",
        "5",
        "--gamma-t",
        "0",
    ]));
    assert_eq!(num(&zero[0][2]), 1.0);
    assert_eq!(num(&zero[0][3]), 1.0);
    let one = stdout_of(&[
        "counts",
        "--state",
        "thermal",
        "--nbar",
        "5",
        "--model",
        "ep",
        "--gamma-t",
        "1",
    ]);
    assert!(one.starts_with("gamma_t,k,P_ep\n"));
}

#[test]
fn master_command() {
    let out = rows(&stdout_of(&[
        "master",
        "--state",
        "thermal",
        "--nbar",
        "5",
        "--model",
        "ep",
        "--gamma-t",
        "6",
    ]));
    assert!((num(&out[0][4]) - (-1.0f64).exp()).abs() < 1e-11);
    let fig = rows(&std::fs::read_to_string(golden("fig4.csv")).unwrap());
    let curve = |state: &str, nbar0: &str, model: &str| {
        fig.iter()
            .filter(|r| r[0] == state && r[1] == nbar0 && r[2] == model)
            .map(|r| num(&r[4]))
            .collect::<Vec<_>>()
    };
    let (ep, sd) = (curve("fock", "1", "ep"), curve("fock", "1", "sd"));
    assert_eq!(ep.len(), 101);
    for (a, b) in ep.iter().zip(&sd) {
        assert!((a - b).abs() <= 1e-12 * b.max(1e-300) + 1e-300);
    }
    for r in fig.iter().filter(|r| num(&r[3]) == 0.0) {
        assert_eq!(num(&r[4]), 1.0, "{r:?}");
    }
}

#[test]
fn mc_command() {
    let args = [
        "mc",
        "--state",
        "fock",
        "--m",
        "5",
        "--gamma-t",
        "1",
        "--seed",
        "42",
        "--n-traj",
        "100000",
    ];
    let a = stdout_of(&args);
    assert_eq!(a, stdout_of(&args));
    for r in rows(&a) {
        let (f, p) = (num(&r[3]), num(&r[6]));
        let se = (p * (1.0 - p) / 1e5).sqrt();
        assert!((f - p).abs() < 3.0 * se + 1e-12, "{r:?}");
    }
    let zero = photocount(&[
        "mc", "--state", "fock", "--m", "5", "--seed", "1", "--n-traj", "0",
    ]);
    assert_eq!(zero.status.code(), Some(2));
    let no_seed = photocount(&["mc", "--state", "fock", "--m", "5"]);
    assert_eq!(no_seed.status.code(), Some(2));
}

#[test]
fn epd_command() {
    let out = rows(&stdout_of(&[
        "epd", "--state", "thermal", "--nbar", "5", "--times", "0.7",
    ]));
    // single count: both models give gamma e^{-gamma t} p_1
    let want = (-0.7f64).exp() * 5.0 / 36.0;
    for r in &out {
        assert!((num(&r[3]) - want).abs() < 1e-12, "{r:?}");
    }
    let bad = photocount(&[
        "epd", "--state", "thermal", "--nbar", "5", "--times", "0.7,0.2",
    ]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn check_command() {
    let ok = photocount(&["check"]);
    assert_eq!(
        ok.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&ok.stdout)
    );
    let text = String::from_utf8(ok.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.contains("PASS")).count(), 7);
    let cut = photocount(&[
        "check",
        "--truncation",
        "3",
        "--state",
        "thermal",
        "--nbar",
        "5",
    ]);
    assert_eq!(cut.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&cut.stderr).contains("truncation-budget"));
    let list = stdout_of(&["check", "--list"]);
    assert_eq!(list.lines().count(), 7);
    assert!(list.contains("ep-vs-brute-force"));
}

#[test]
fn scenario_files() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, body: &str| {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p.to_str().unwrap().to_string()
    };
    let good = write(
        "good.json",
        r#"{"schema": 1, "state": "thermal", "nbar": 5, "model": "ep", "gamma_t": 6}"#,
    );
    let out = rows(&stdout_of(&["master", "--scenario", &good]));
    assert!((num(&out[0][4]) - (-1.0f64).exp()).abs() < 1e-11);
    // flags override the file
    let out = rows(&stdout_of(&[
        "master",
        "--scenario",
        &good,
        "--gamma-t",
        "0",
    ]));
    assert_eq!(num(&out[0][4]), 1.0);
    let unknown = write(
        "unknown.json",
        r#"{"schema": 1, "state": "thermal", "nbar": 5, "colour": 1}"#,
    );
    assert_eq!(
        photocount(&["dist", "--scenario", &unknown]).status.code(),
        Some(2)
    );
    let unversioned = write("nov.json", r#"{"state": "thermal", "nbar": 5}"#);
    assert_eq!(
        photocount(&["dist", "--scenario", &unversioned])
            .status
            .code(),
        Some(2)
    );
    let future = write("v2.json", r#"{"schema": 2, "state": "thermal", "nbar": 5}"#);
    assert_eq!(
        photocount(&["dist", "--scenario", &future]).status.code(),
        Some(2)
    );
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(
        photocount(&["counts", "--state", "fock"]).status.code(),
        Some(2)
    );
    assert_eq!(
        photocount(&["counts", "--state", "thermal", "--nbar", "-1"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(photocount(&["bogus"]).status.code(), Some(2));
    assert_eq!(
        photocount(&["counts", "--figure", "7"]).status.code(),
        Some(2)
    );
}
