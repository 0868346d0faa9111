use std::path::Path;
use std::process::{Command, Output};

use nalgebra::DVector;
use qrlab::erm::generate_linear_data;
use qrlab::NoiseModel;

fn qrlab(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_qrlab"));
    cmd.args(args).env_remove("QRLAB_THREADS");
    if let Some(t) = threads {
        cmd.env("QRLAB_THREADS", t);
    }
    cmd.output().expect("spawn qrlab")
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write_data(path: &Path, n: usize, d: usize) {
    let w = DVector::from_fn(d, |i, _| 0.5 - 0.2 * i as f64);
    generate_linear_data(n, d, &w, &NoiseModel::standard(), 5).unwrap().write_csv(path).unwrap();
}

#[test]
fn theory_prints_one_row() {
    let out = qrlab(&["theory", "--alpha", "0.9", "--kappa", "0.1"], None);
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1);
    let fields: Vec<&str> = lines[0].split(',').collect();
    assert_eq!(fields.len(), 10);
    assert_eq!(fields[0], "0.9");
    let coverage: f64 = fields[5].parse().unwrap();
    assert!(coverage > 0.8 && coverage < 0.9, "{coverage}");
    assert_eq!(fields[9], "false");

    let text = stdout(&qrlab(&["theory", "--alpha", "0.9", "--kappa", "0.1", "--header", "--noise", "gaussian:0:0.25"], None));
    assert!(text.starts_with("alpha,kappa,tau,lambda,b,coverage,c_alpha_kappa,residual,iterations,extrapolated\n"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad_alpha = qrlab(&["theory", "--alpha", "1.5", "--kappa", "0.1"], None);
    assert_eq!(bad_alpha.status.code(), Some(2));

    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "alphas = 0.9\nunknown_key = 3\n").unwrap();
    assert_eq!(qrlab(&["sweep", "--config", cfg.to_str().unwrap()], None).status.code(), Some(2));

    let csv = dir.path().join("bad.csv");
    std::fs::write(&csv, "x0,y\n1.0,2.0\nabc,1.0\n").unwrap();
    let out = qrlab(&["fit", "--csv", csv.to_str().unwrap(), "--alpha", "0.9"], None);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 3"));

    std::fs::write(&csv, "x0,y\n").unwrap();
    assert_eq!(qrlab(&["fit", "--csv", csv.to_str().unwrap(), "--alpha", "0.9"], None).status.code(), Some(3));

    let sweep_cfg = dir.path().join("ok.cfg");
    std::fs::write(&sweep_cfg, "alphas = 0.9\nkappas = 0.5\nd = 4\nseeds = 1\nmax_steps = 10\n").unwrap();
    assert_eq!(qrlab(&["sweep", "--config", sweep_cfg.to_str().unwrap()], Some("zero")).status.code(), Some(2));
}

#[test]
fn fit_then_coverage() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.csv");
    let test = dir.path().join("test.csv");
    let fit = dir.path().join("fit.csv");
    write_data(&train, 400, 3);
    write_data(&test, 300, 3);
    let text = stdout(&qrlab(
        &["fit", "--csv", train.to_str().unwrap(), "--alpha", "0.8", "--max-steps", "3000", "--output", fit.to_str().unwrap()],
        None,
    ));
    assert!(text.starts_with("param,value\nb,"));
    let test_cov: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("test_coverage,"))
        .unwrap()
        .parse()
        .unwrap();
    assert!((test_cov - 0.8).abs() < 0.12, "{test_cov}");

    let text = stdout(&qrlab(&["coverage", "--fit", fit.to_str().unwrap(), "--test", test.to_str().unwrap()], None));
    assert!(text.starts_with("n_test,300\n"));
    let cov: f64 = text.lines().nth(1).unwrap().strip_prefix("coverage,").unwrap().parse().unwrap();
    assert!((cov - 0.8).abs() < 0.1, "{cov}");

    let wide = dir.path().join("wide.csv");
    write_data(&wide, 20, 4);
    let out = qrlab(&["coverage", "--fit", fit.to_str().unwrap(), "--test", wide.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn sweep_outputs_do_not_depend_on_threads() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out_path = dir.path().join(format!("sweep{threads}.csv"));
        let cfg = dir.path().join(format!("sweep{threads}.cfg"));
        std::fs::write(
            &cfg,
            format!(
                "alphas = 0.8, 0.9\nkappas = 0.25, 0.5\nd = 8\nseeds = 2\nmax_steps = 400\ndecay_at = 200\noutput = {}\n",
                out_path.display()
            ),
        )
        .unwrap();
        stdout(&qrlab(&["sweep", "--config", cfg.to_str().unwrap()], Some(threads)));
        let agg = dir.path().join(format!("sweep{threads}_agg.csv"));
        outputs.push((std::fs::read(&out_path).unwrap(), std::fs::read(&agg).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    let cells = String::from_utf8(outputs[0].0.clone()).unwrap();
    assert_eq!(cells.lines().count(), 1 + 2 * 2 * 2);
    let agg = String::from_utf8(outputs[0].1.clone()).unwrap();
    assert_eq!(agg.lines().count(), 1 + 2 * 2);
    let leftovers: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with(".tmp"))
        .collect();
    assert!(leftovers.is_empty());
}

#[test]
fn overparam_and_bias_and_pseudo() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("op.csv");
    stdout(&qrlab(
        &["overparam", "--d", "40", "--n", "10", "--seeds", "2", "--output", out.to_str().unwrap()],
        None,
    ));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().skip(1).all(|l| l.contains(",ok")), "{text}");
    assert_eq!(
        qrlab(&["overparam", "--d", "20", "--n", "10", "--seeds", "2"], None).status.code(),
        Some(2)
    );

    let bias_out = dir.path().join("bias.csv");
    let cfg = dir.path().join("bias.cfg");
    std::fs::write(
        &cfg,
        format!("alphas = 0.9\nkappas = 0.5\nd = 6\nseeds = 3\nmax_steps = 300\ndecay_at = 150\noutput = {}\n", bias_out.display()),
    )
    .unwrap();
    stdout(&qrlab(&["bias", "--config", cfg.to_str().unwrap()], None));
    assert_eq!(std::fs::read_to_string(&bias_out).unwrap().lines().count(), 2);

    let csv = dir.path().join("tab.csv");
    write_data(&csv, 300, 4);
    let pseudo_out = dir.path().join("pseudo.csv");
    let cfg = dir.path().join("pseudo.cfg");
    std::fs::write(
        &cfg,
        format!("alphas = 0.9\nkappas = 0.1\nseeds = 2\nmax_steps = 100\ndecay_at = 50, 80\noutput = {}\n", pseudo_out.display()),
    )
    .unwrap();
    stdout(&qrlab(&["pseudo", "--csv", csv.to_str().unwrap(), "--config", cfg.to_str().unwrap()], None));
    let rows = std::fs::read_to_string(&pseudo_out).unwrap();
    assert_eq!(rows.lines().next().unwrap(), "kappa,seed,arm,n,d,alpha,coverage");
    assert_eq!(rows.lines().count(), 1 + 2 * 2);
    let agg = std::fs::read_to_string(dir.path().join("pseudo_agg.csv")).unwrap();
    assert_eq!(agg.lines().count(), 3);
}
