use std::f64::consts::PI;
use std::path::Path;
use std::process::{Command, Output};

use subaru_core::audio::{load_wav, save_wav};
use subaru_core::AudioClip;

const TINY: [(&str, &str); 4] = [
    ("--network.sen_channels", "[2, 2, 2, 2, 4]"),
    ("--network.ups_channels", "16"),
    ("--network.ten_channels", "[2, 2, 2, 4]"),
    ("--network.apen_channels", "8"),
];

fn subaru(args: &[&str], env: Option<(&str, &Path)>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_subaru"));
    c.args(args).env_remove("SUBARU_CONFIG");
    if let Some((k, v)) = env {
        c.env(k, v);
    }
    c.output().unwrap()
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn tone(path: &Path, rate: u32, secs: f64, f: f64) {
    let n = (rate as f64 * secs) as usize;
    let x = (0..n).map(|i| 0.5 * (2.0 * PI * f * i as f64 / rate as f64).sin()).collect();
    save_wav(&AudioClip::new(x, rate), path).unwrap();
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn power_report_prints_savings() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = ok(&subaru(&["power-report", "--from", "24000:12", "--to", "4000:8", "--run-dir", s(&run)], None));
    assert!(out.contains("3.31x"), "{out}");
    assert!(out.contains("do not follow"));
    assert!(run.join("config.toml").is_file());
    assert_eq!(std::fs::read_to_string(run.join("power.csv")).unwrap().lines().count(), 13);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let run = s(dir.path());
    assert_eq!(subaru(&["frobnicate"], None).status.code(), Some(2));
    assert_eq!(subaru(&["power-report", "--to", "5000:8", "--run-dir", run], None).status.code(), Some(2));
    assert_eq!(subaru(&["power-report", "--train.lrr", "1", "--run-dir", run], None).status.code(), Some(2));
    assert_eq!(subaru(&["power-report", "--train.lr"], None).status.code(), Some(2));
    assert_eq!(subaru(&["plot", "--run-dir", run], None).status.code(), Some(2));
    assert_eq!(subaru(&["--help"], None).status.code(), Some(0));
}

#[test]
fn degrade_writes_low_rate_capture_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.wav");
    tone(&input, 16000, 1.0, 440.0);
    let a = dir.path().join("a.wav");
    let b = dir.path().join("b.wav");
    let run = dir.path().join("run");
    for out in [&a, &b] {
        ok(&subaru(&["degrade", "--rate", "4000", "--bits", "8", s(&input), s(out), "--run-dir", s(&run)], None));
    }
    let clip = load_wav(&a).unwrap();
    assert_eq!((clip.sample_rate, clip.len()), (4000, 4000));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let cfg = std::fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(cfg.contains("[degrade]") && cfg.contains("rate = 4000"));

    let missing = subaru(&["degrade", s(&dir.path().join("none.wav")), s(&a), "--run-dir", s(&run)], None);
    assert_eq!(missing.status.code(), Some(1));
    let snr_without_noise = subaru(&["degrade", "--snr", "0", s(&input), s(&a), "--run-dir", s(&run)], None);
    assert_eq!(snr_without_noise.status.code(), Some(2));
}

#[test]
fn config_file_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[degrade]\nrate = 8000\nbits = 12\n").unwrap();
    let input = dir.path().join("in.wav");
    tone(&input, 16000, 0.5, 300.0);
    let out = dir.path().join("o.wav");
    let run = dir.path().join("run");
    ok(&subaru(&["degrade", s(&input), s(&out), "--run-dir", s(&run)], Some(("SUBARU_CONFIG", &cfg))));
    assert_eq!(load_wav(&out).unwrap().len(), 4000);
    ok(&subaru(&["degrade", s(&input), s(&out), "--degrade.rate", "4000", "--run-dir", s(&run)], Some(("SUBARU_CONFIG", &cfg))));
    assert_eq!(load_wav(&out).unwrap().len(), 2000);
}

#[test]
fn evaluate_writes_records() {
    let dir = tempfile::tempdir().unwrap();
    let (r, e) = (dir.path().join("ref"), dir.path().join("est"));
    std::fs::create_dir_all(&r).unwrap();
    std::fs::create_dir_all(&e).unwrap();
    for (i, f) in [300.0, 500.0].iter().enumerate() {
        tone(&r.join(format!("c{i}.wav")), 16000, 1.0, *f);
        tone(&e.join(format!("c{i}.wav")), 16000, 1.0, *f);
    }
    let run = dir.path().join("run");
    let out = ok(&subaru(&["evaluate", "--ref", s(&r), "--est", s(&e), "--run-dir", s(&run)], None));
    assert!(out.contains("mean (2 clips)"));
    let report = subaru_core::metrics::MetricReport::read_records(std::fs::File::open(run.join("records.csv")).unwrap()).unwrap();
    assert_eq!(report.records.len(), 2);
    assert!(report.records.iter().all(|r| r.lsd == 0.0));
    std::fs::remove_file(e.join("c1.wav")).unwrap();
    assert_eq!(subaru(&["evaluate", "--ref", s(&r), "--est", s(&e), "--run-dir", s(&run)], None).status.code(), Some(1));
}

#[test]
fn sweep_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("sweep");
    let args = [
        "sweep",
        "--sweep.clips",
        "2",
        "--sweep.source_rate",
        "16000",
        "--sweep.rates",
        "[16000, 8000, 4000]",
        "--sweep.bits",
        "[8, 12]",
        "--run-dir",
        s(&run),
    ];
    let out = ok(&subaru(&args, None));
    assert!(out.contains("8-bit") && out.contains("12-bit"));
    let first = std::fs::read(run.join("sweep.csv")).unwrap();
    ok(&subaru(&args, None));
    assert_eq!(first, std::fs::read(run.join("sweep.csv")).unwrap());
    let plots = dir.path().join("plots");
    ok(&subaru(&["plot", "--sweep", s(&run.join("sweep.csv")), "--run-dir", s(&plots)], None));
    assert!(std::fs::read_to_string(plots.join("sweep.svg")).unwrap().contains("<svg"));
}

#[test]
fn stream_sim_with_injected_latency() {
    let dir = tempfile::tempdir().unwrap();
    let acm = dir.path().join("acm.wav");
    tone(&acm, 4000, 2.0, 300.0);
    let run = dir.path().join("run");
    let mut args = vec!["stream-sim", s(&acm), "--inference-ms", "71", "--run-dir", s(&run)];
    for (k, v) in TINY {
        args.extend([k, v]);
    }
    let out = ok(&subaru(&args, None));
    assert!(out.contains("83.0"));
    assert!(out.contains("one-way budget: yes"));
    assert_eq!(std::fs::read_to_string(run.join("frames.jsonl")).unwrap().lines().count(), 2);
    assert_eq!(load_wav(run.join("enhanced.wav")).unwrap().len(), 16000 * 2);
}

#[test]
fn train_enhance_and_plot_tiny_network() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let small = [
        ("--corpus.speakers", "2"),
        ("--corpus.clips_per_speaker", "3"),
        ("--corpus.seconds", "1.3"),
        ("--corpus.val_fraction", "0.34"),
        ("--corpus.noise_clips", "2"),
    ];
    let synth_run = dir.path().join("synth");
    let mut args = vec!["synth-corpus", s(&corpus), "--run-dir", s(&synth_run)];
    for (k, v) in small {
        args.extend([k, v]);
    }
    ok(&subaru(&args, None));
    let manifest = corpus.join("manifest.csv");
    assert!(manifest.is_file());

    let run = dir.path().join("train");
    let mut args = vec![
        "train",
        "--manifest",
        s(&manifest),
        "--train.epochs",
        "1",
        "--train.batch_size",
        "2",
        "--train.lr",
        "0.001",
        "--run-dir",
        s(&run),
    ];
    for (k, v) in TINY {
        args.extend([k, v]);
    }
    let out = ok(&subaru(&args, None));
    assert!(out.contains("epoch   1"), "{out}");
    for f in ["config.toml", "metrics.csv", "epochs.jsonl", "epoch001.ckpt", "summary.json"] {
        assert!(run.join(f).is_file(), "{f}");
    }

    let acm = dir.path().join("acm.wav");
    tone(&acm, 4000, 1.0, 300.0);
    let enhanced = dir.path().join("enh.wav");
    let ck = run.join("epoch001.ckpt");
    let enh_run = dir.path().join("enh");
    ok(&subaru(&["enhance", "--checkpoint", s(&ck), s(&acm), s(&enhanced), "--run-dir", s(&enh_run)], None));
    let clip = load_wav(&enhanced).unwrap();
    assert_eq!((clip.sample_rate, clip.len()), (16000, 16000));

    let plots = dir.path().join("plots");
    ok(&subaru(&["plot", "--metrics", s(&run.join("metrics.csv")), "--run-dir", s(&plots)], None));
    assert!(plots.join("loss.svg").is_file());
}
