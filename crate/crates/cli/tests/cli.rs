use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use butterfly_completion::{
    load_model, load_vector, random_network, save_model, save_vector, synthetic_butterfly_network,
    ButterflyNetwork, Model, ObservedEntries, C64,
};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bfcomplete"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn assert_ok(out: &Output) {
    assert_eq!(
        code(out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn radon_entries_have_unit_modulus() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("radon.csv");
    assert_ok(&run(&[
        "generate",
        "--kind",
        "radon",
        "--n",
        "16",
        "--out",
        s(&path),
    ]));
    let data = ObservedEntries::load_triplets(&path, None).unwrap();
    assert_eq!(data.n(), 16);
    assert_eq!(data.len(), 256);
    for (_, _, v) in data.iter() {
        assert!((v.norm() - 1.0).abs() < 1e-14);
    }
}

#[test]
fn green_matrix_is_symmetric_in_original_order() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("green.csv");
    assert_ok(&run(&[
        "generate",
        "--kind",
        "green",
        "--n",
        "16",
        "--leaf",
        "4",
        "--out",
        s(&path),
    ]));
    let perm: Vec<usize> =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("green.perm.json")).unwrap())
            .unwrap();
    let data = ObservedEntries::load_triplets(&path, None).unwrap();
    let mut original = vec![C64::new(f64::NAN, 0.0); 256];
    for (a, b, v) in data.iter() {
        original[perm[a] * 16 + perm[b]] = v;
    }
    for i in 0..16 {
        for j in 0..16 {
            let (x, y) = (original[i * 16 + j], original[j * 16 + i]);
            assert!((x - y).norm() <= 1e-14 * x.norm().max(1.0), "({i},{j})");
        }
    }
}

#[test]
fn generation_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for k in 0..2 {
        let path = dir.path().join(format!("b{k}.csv"));
        assert_ok(&run(&[
            "generate",
            "--kind",
            "butterfly",
            "--n",
            "32",
            "--leaf",
            "4",
            "--rank",
            "2",
            "--seed",
            "9",
            "--out",
            s(&path),
        ]));
        files.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

fn sample_butterfly(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    // n = 64 with |Ω| = 6·n·log₂n, plenty for a rank-2 network.
    assert_ok(&run(&[
        "sample",
        "--kind",
        "butterfly",
        "--n",
        "64",
        "--leaf",
        "4",
        "--rank",
        "2",
        "--seed",
        "3",
        "--count",
        "2304",
        "--test-count",
        "300",
        "--out",
        s(&data),
    ]));
    data
}

fn complete(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let train = data.join("train.csv");
    let test = data.join("test.csv");
    let mut args = vec![
        "complete",
        "--train",
        s(&train),
        "--test",
        s(&test),
        "--levels",
        "4",
        "--leaf",
        "4",
        "--rank",
        "2",
        "--seed",
        "1",
        "--out",
        s(out),
    ];
    args.extend_from_slice(extra);
    run(&args)
}

fn report_without_timings(dir: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(dir.join("report.jsonl"))
        .unwrap()
        .lines()
        .map(|line| {
            let mut v: serde_json::Value = serde_json::from_str(line).unwrap();
            strip_seconds(&mut v);
            v
        })
        .collect()
}

fn strip_seconds(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(map) => {
            map.remove("seconds");
            map.remove("total_seconds");
            map.values_mut().for_each(strip_seconds);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_seconds),
        _ => {}
    }
}

#[test]
fn complete_recovers_synthetic_butterfly() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample_butterfly(dir.path());
    let out = dir.path().join("run");
    let result = complete(&data, &out, &["--csv"]);
    assert_ok(&result);
    for name in ["model.json", "report.jsonl", "summary.json", "report.csv"] {
        assert!(out.join(name).exists(), "{name} missing");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["termination"], "converged");
    assert!(summary["final_train_err"].as_f64().unwrap() < 1e-3);
    assert!(summary["version"].is_string());
    assert_eq!(summary["run_config"]["rank"], 2);
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.starts_with("iteration,train,test,seconds\n"));
}

#[test]
fn rerun_gives_identical_report_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample_butterfly(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_ok(&complete(&data, &a, &["--threads", "1"]));
    assert_ok(&complete(&data, &b, &["--threads", "3"]));
    assert_eq!(report_without_timings(&a), report_without_timings(&b));
    for k in 0..6 {
        let name = format!("model.core{k}.bin");
        assert_eq!(
            std::fs::read(a.join(&name)).unwrap(),
            std::fs::read(b.join(&name)).unwrap()
        );
    }
}

#[test]
fn zero_iterations_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample_butterfly(dir.path());
    let out = complete(&data, &dir.path().join("run"), &["--max-iters", "0"]);
    assert_eq!(code(&out), 64);
}

#[test]
fn nonconvergence_exits_2_and_still_writes_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample_butterfly(dir.path());
    let out_dir = dir.path().join("run");
    let out = complete(&data, &out_dir, &["--max-iters", "1", "--tol", "1e-14"]);
    assert_eq!(code(&out), 2);
    assert!(out_dir.join("report.jsonl").exists());
    assert!(out_dir.join("model.json").exists());
}

#[test]
fn config_file_is_merged_and_unknown_keys_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample_butterfly(dir.path());
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"max_iters": 1, "tol": 1e-14}"#).unwrap();
    let out = complete(&data, &dir.path().join("a"), &["--config", s(&cfg)]);
    assert_eq!(code(&out), 2);
    // Flags win over the file.
    let out = complete(
        &data,
        &dir.path().join("b"),
        &["--config", s(&cfg), "--max-iters", "30", "--tol", "1e-3"],
    );
    assert_ok(&out);
    std::fs::write(&cfg, r#"{"max_iterations": 3}"#).unwrap();
    let out = complete(&data, &dir.path().join("c"), &["--config", s(&cfg)]);
    assert_eq!(code(&out), 64);
}

#[test]
fn adam_and_baseline_formats_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample_butterfly(dir.path());
    for extra in [
        &["--algo", "adam", "--max-iters", "3"][..],
        &["--format", "qtt", "--max-iters", "2"][..],
        &["--format", "lowrank", "--max-iters", "2"][..],
    ] {
        let out_dir = dir.path().join(extra.join("_"));
        let out = complete(&data, &out_dir, extra);
        assert!(
            matches!(code(&out), 0 | 2),
            "{extra:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(load_model(out_dir.join("model.json")).is_ok());
    }
    let out = complete(
        &data,
        &dir.path().join("bad"),
        &["--format", "qtt", "--algo", "adam"],
    );
    assert_eq!(code(&out), 64);
}

#[test]
fn malformed_data_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.csv");
    std::fs::write(&train, "i,j,re,im\n0,0,1.0\n").unwrap();
    let out = run(&[
        "complete",
        "--train",
        s(&train),
        "--levels",
        "2",
        "--leaf",
        "2",
        "--rank",
        "1",
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(code(&out), 65);
}

fn write_network(dir: &Path, net: &ButterflyNetwork) -> PathBuf {
    let path = dir.join("net.json");
    save_model(&path, &Model::Butterfly(net.clone())).unwrap();
    path
}

fn eval(model: &Path, data: &Path) -> f64 {
    let out = run(&["eval", "--model", s(model), "--data", s(data)]);
    assert_ok(&out);
    String::from_utf8(out.stdout)
        .unwrap()
        .trim()
        .parse()
        .unwrap()
}

#[test]
fn eval_of_generating_and_zero_networks() {
    let dir = tempfile::tempdir().unwrap();
    let net = synthetic_butterfly_network(2, 4, 2, 11).unwrap();
    let n = net.n();
    let pairs: Vec<_> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|(i, j)| (i + 2 * j) % 3 == 0)
        .collect();
    let data =
        ObservedEntries::from_fn(n, &pairs, |i, j| net.reconstruct_entry(i, j).unwrap()).unwrap();
    let data_path = dir.path().join("data.csv");
    data.save_triplets(&data_path).unwrap();

    let model = write_network(dir.path(), &net);
    let err = eval(&model, &data_path);
    assert!(err <= 1e-12, "{err}");
    assert_eq!(
        err.to_bits(),
        butterfly_completion::relative_error(&net, &data)
            .unwrap()
            .to_bits()
    );

    let mut zero = net.clone();
    for core in &mut zero.cores {
        core.data.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
    }
    let zdir = dir.path().join("zero");
    std::fs::create_dir(&zdir).unwrap();
    assert_eq!(eval(&write_network(&zdir, &zero), &data_path), 1.0);
}

#[test]
fn eval_rejects_size_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_network(dir.path(), &random_network(2, 2, 1, 0, 1.0).unwrap());
    let data = dir.path().join("d.csv");
    ObservedEntries::new(16, vec![(0, 0, C64::new(1.0, 0.0))])
        .unwrap()
        .save_triplets(&data)
        .unwrap();
    let out = run(&["eval", "--model", s(&model), "--data", s(&data)]);
    assert_eq!(code(&out), 65);
}

fn matvec(model: &Path, v: &[C64], dir: &Path) -> Output {
    let vin = dir.join("v.bin");
    save_vector(&vin, v).unwrap();
    run(&[
        "matvec",
        "--model",
        s(model),
        "--vector",
        s(&vin),
        "--out",
        s(&dir.join("y.bin")),
    ])
}

#[test]
fn matvec_matches_dense_product() {
    let dir = tempfile::tempdir().unwrap();
    let net = random_network(3, 4, 2, 5, 0.7).unwrap();
    let n = net.n();
    let model = write_network(dir.path(), &net);

    let zeros = vec![C64::new(0.0, 0.0); n];
    assert_ok(&matvec(&model, &zeros, dir.path()));
    assert!(load_vector(dir.path().join("y.bin"))
        .unwrap()
        .iter()
        .all(|z| *z == C64::new(0.0, 0.0)));

    let v: Vec<C64> = (0..n)
        .map(|k| C64::new((k as f64).sin(), (k as f64 * 0.3).cos()))
        .collect();
    assert_ok(&matvec(&model, &v, dir.path()));
    let y = load_vector(dir.path().join("y.bin")).unwrap();
    let expected = net.reconstruct_dense().unwrap().matvec(&v).unwrap();
    let num: f64 = y
        .iter()
        .zip(&expected)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    let den: f64 = expected.iter().map(|b| b.norm_sqr()).sum();
    assert!((num / den).sqrt() < 1e-12);

    // Applying the same stored model twice gives the same bytes.
    let first = std::fs::read(dir.path().join("y.bin")).unwrap();
    assert_ok(&matvec(&model, &v, dir.path()));
    assert_eq!(std::fs::read(dir.path().join("y.bin")).unwrap(), first);

    let out = matvec(&model, &v[1..], dir.path());
    assert_eq!(code(&out), 65);
}

#[test]
fn convert_lowrank_model() {
    let dir = tempfile::tempdir().unwrap();
    let pair = butterfly_completion::LowRankPair::random(64, 2, 4, 1.0);
    let input = dir.path().join("lr.json");
    save_model(&input, &Model::LowRank(pair.clone())).unwrap();
    let out_path = dir.path().join("bf.json");
    assert_ok(&run(&[
        "convert",
        "--input",
        s(&input),
        "--levels",
        "4",
        "--leaf",
        "4",
        "--rank",
        "2",
        "--oversampling",
        "2",
        "--out",
        s(&out_path),
    ]));
    let Model::Butterfly(net) = load_model(&out_path).unwrap() else {
        panic!("expected a butterfly model");
    };
    let x = pair.to_dense().unwrap();
    let y = net.reconstruct_dense().unwrap();
    assert!(y.relative_distance(&x) < 1e-8);
}
