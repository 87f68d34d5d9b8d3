use std::process::{Command, Output};

fn unfitted(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unfitted"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_writes_a_csv_that_table_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("ex1.csv");
    let out = unfitted(&[
        "run",
        "--example",
        "1",
        "--degrees",
        "1",
        "--grids",
        "10,20",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    assert!(text.contains("m=1 fitted order: L2"), "{text}");
    let written = std::fs::read_to_string(&csv).unwrap();
    assert!(written
        .starts_with("m,n,h,dofs,e_l2,e_energy,rate_l2,rate_energy,kappa,cg_iters,wall_ms\n"));
    assert_eq!(written.lines().count(), 3);

    let table = unfitted(&["table", csv.to_str().unwrap()]);
    assert!(table.status.success());
    assert_eq!(
        stdout(&table)
            .lines()
            .filter(|l| l.starts_with("1 "))
            .count(),
        2
    );
}

#[test]
fn run_reads_a_json_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"example": 4, "contrast": 1000.0, "degrees": [1], "grid_sizes": [10]}"#,
    )
    .unwrap();
    let out = unfitted(&["run", "--config", cfg.to_str().unwrap(), "--cond"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let row = stdout(&out)
        .lines()
        .find(|l| l.starts_with("1 "))
        .unwrap()
        .to_string();
    let kappa = row.split_whitespace().nth(8).unwrap();
    assert!(kappa.parse::<f64>().unwrap() > 1.0, "{row}");
}

#[test]
fn invalid_input_is_rejected() {
    assert!(!unfitted(&["run", "--grids", "20,10"]).status.success());
    assert!(!unfitted(&["run", "--example", "9"]).status.success());
    assert!(!unfitted(&["run", "--config", "/nonexistent/cfg.json"])
        .status
        .success());
    assert!(!unfitted(&["cond", "--example", "1", "--contrast", "5"])
        .status
        .success());
    assert!(!unfitted(&["verify-quadrature", "--depths", "5..2"])
        .status
        .success());
}

#[test]
fn verify_quadrature_reports_each_depth() {
    let out = unfitted(&[
        "verify-quadrature",
        "--example",
        "1",
        "--depths",
        "2,4",
        "--n",
        "10",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 3, "{text}");
}

#[test]
fn cond_prints_the_slope() {
    let out = unfitted(&["cond", "--example", "1", "--grids", "10,20"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("slope of log kappa vs log h"));
}
