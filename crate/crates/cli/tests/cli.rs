use std::path::Path;
use std::process::{Command, Output};

fn semrelay(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semrelay"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

const TINY: &str = "
[arch]
scale = \"tiny\"

[run]
seed = 11
trials = 2

[optimize]
grid = 2

[train]
epochs = 3
learning_rate = 0.01
lambda = 1e-5

[data]
synthetic_groups = 2
";

#[test]
fn overhead_table_has_reference_counts() {
    let dir = tempfile::tempdir().unwrap();
    let csv = ok(&semrelay(dir.path(), &["overhead", "--n", "4", "--channels", "60"]));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "scheme,N,C,gamma_p,H,W,shared_index_elements,importance_elements");
    assert_eq!(lines.len(), 4);
    assert!(lines.contains(&"ED-HEM,4,60,0.5,64,128,245760,1228800"), "{csv}");
    assert!(lines.contains(&"HEM,4,60,0.5,64,128,0,1966080"), "{csv}");
}

#[test]
fn error_classes_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = semrelay(dir.path(), &["--set", "channel.sr.nosie=1", "run"]);
    assert_eq!(unknown.status.code(), Some(2));
    let bad_rate = semrelay(dir.path(), &["--set", "run.v1=1.5", "run"]);
    assert_eq!(bad_rate.status.code(), Some(2));
    let no_ckpt = semrelay(dir.path(), &["sweep", "--axis", "P", "--values", "10,20"]);
    assert_eq!(no_ckpt.status.code(), Some(2));
    let no_data = semrelay(dir.path(), &["--set", "paths.data_dir=missing", "train"]);
    assert_eq!(no_data.status.code(), Some(3));
    let bad_axis = semrelay(dir.path(), &["sweep", "--axis", "rho", "--values", "1"]);
    assert_eq!(bad_axis.status.code(), Some(2));
}

#[test]
fn train_then_run_sweep_optimize_inspect() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    let with = |rest: &[&'static str]| -> Vec<&'static str> { [&["--config", "tiny.toml"][..], rest].concat() };

    let summary = ok(&semrelay(dir.path(), &with(&["train", "--curve", "curve.csv"])));
    assert!(summary.contains("saved model.semrelay"));
    let curve = std::fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    assert_eq!(curve.lines().next(), Some("step,rate_bits,mse,total"));
    assert_eq!(curve.lines().count(), 4);

    let a = ok(&semrelay(dir.path(), &with(&["run"])));
    let b = ok(&semrelay(dir.path(), &with(&["run"])));
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 1 + 2 + 1);
    assert!(a.lines().next().unwrap().starts_with("kind,axis,axis_value,trial,seed"));

    let printed = ok(&semrelay(
        dir.path(),
        &with(&["sweep", "--axis", "P", "--values", "10,20,30", "--trials", "2", "--out", "sweep.csv"]),
    ));
    assert!(printed.contains("wrote 9 rows"));
    let sweep = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().filter(|l| l.starts_with("trial,")).count(), 6);
    assert_eq!(sweep.lines().filter(|l| l.starts_with("summary,")).count(), 3);

    let grid = ok(&semrelay(dir.path(), &with(&["optimize"])));
    assert_eq!(grid.lines().next(), Some("v1,v2,mean_psnr,std_psnr"));
    assert_eq!(grid.lines().count(), 5);

    let info = ok(&semrelay(dir.path(), &with(&["inspect"])));
    assert!(info.contains("finite       true"));
}

#[test]
fn help_documents_csv_columns() {
    let dir = tempfile::tempdir().unwrap();
    let help = ok(&semrelay(dir.path(), &["sweep", "--help"]));
    for col in ["snr_sr_db", "psnr_std_db", "deep_fade", "9 significant digits"] {
        assert!(help.contains(col), "{col} missing from help");
    }
}
