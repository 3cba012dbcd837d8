use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use guided_mel::audiodsp::{write_wav, AudioSignal, SAMPLE_RATE};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_guided-mel"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: &str = "\
# small model for fast tests
model.channels = 12
model.blocks = 1
model.time_embed_dim = 16
model.classifier_channels = 12
data.size = 64
train.batch_size = 4
";

/// Trains a small checkpoint with a classifier once per test.
fn trained(dir: &Path) -> PathBuf {
    let cfg = dir.join("small.cfg");
    std::fs::write(&cfg, SMALL).unwrap();
    let ck = dir.join("model.ckpt");
    let o = run(&["train", "--config", p(&cfg), "--steps", "20", "--classifier-steps", "20", "--out", p(&ck)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    ck
}

fn tone(seconds: f64, freq: f64) -> AudioSignal {
    let n = (seconds * SAMPLE_RATE as f64) as usize;
    let s = (0..n)
        .map(|i| 0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / SAMPLE_RATE as f64).sin())
        .collect();
    AudioSignal::new(s, SAMPLE_RATE).unwrap()
}

#[test]
fn sample_is_reproducible_and_traced() {
    let dir = tempfile::tempdir().unwrap();
    let ck = trained(dir.path());
    let (a, b, tr) = (dir.path().join("a.mel"), dir.path().join("b.mel"), dir.path().join("a.trace"));
    for (out, trace) in [(&a, Some(&tr)), (&b, None)] {
        let mut args = vec!["sample", "--checkpoint", p(&ck), "--label", "1", "--cond-index", "0", "--seed", "5", "--out", p(out)];
        if let Some(t) = trace {
            args.extend(["--trace", p(t)]);
        }
        let o = run(&args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let trace = std::fs::read_to_string(&tr).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines.len(), 400);
    assert!(lines[0].starts_with("400 "));
    assert!(lines[0].ends_with(" 0"));
    assert!(lines[399].starts_with("1 "));
    assert!(lines[399].ends_with(" 1"));
    assert!(lines.iter().all(|l| l.split(' ').count() == 4));
}

#[test]
fn sample_rejects_bad_inputs_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let ck = trained(dir.path());
    let out = dir.path().join("x.mel");

    let o = run(&["sample", "--checkpoint", p(&ck), "--out", p(&out)]);
    assert_eq!(code(&o), 2, "missing label: {}", stderr(&o));
    let o = run(&["sample", "--checkpoint", p(&ck), "--label", "9", "--out", p(&out)]);
    assert_eq!(code(&o), 2, "bad label: {}", stderr(&o));
    let o = run(&["sample", "--checkpoint", p(&ck), "--w2", "0", "--t-start", "401", "--out", p(&out)]);
    assert_eq!(code(&o), 2, "t_start: {}", stderr(&o));
    let o = run(&["sample", "--checkpoint", p(&ck), "--w2", "0", "--shape", "7x8", "--out", p(&out)]);
    assert_eq!(code(&o), 2, "shape: {}", stderr(&o));
    let o = run(&["sample", "--checkpoint", p(&dir.path().join("missing.ckpt")), "--w2", "0", "--out", p(&out)]);
    assert_eq!(code(&o), 3, "missing checkpoint: {}", stderr(&o));
    let o = run(&["sample", "--checkpoint", p(&ck), "--w2", "0", "--out", p(&dir.path().join("no/such/dir/x.mel"))]);
    assert_eq!(code(&o), 3, "missing output dir: {}", stderr(&o));
    assert!(!out.exists());

    let garbage = dir.path().join("garbage.ckpt");
    std::fs::write(&garbage, b"NOPE0000").unwrap();
    let o = run(&["sample", "--checkpoint", p(&garbage), "--w2", "0", "--out", p(&out)]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("bad magic"));
    assert!(!out.exists());
}

#[test]
fn usage_errors_exit_2() {
    let o = run(&["sample", "--no-such-flag"]);
    assert_eq!(code(&o), 2);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "schedule.steps = 400\n\nguidance.w3 = 1\n").unwrap();
    let out = dir.path().join("m.ckpt");
    let o = run(&["train", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
    let o = run(&["train", "--dataset-kind", "speech", "--out", p(&out)]);
    assert_eq!(code(&o), 2);
    let o = run(&["train", "--dropout-p", "1.5", "--steps", "1", "--out", p(&out)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn train_resume_continues_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let ck = trained(dir.path());
    let resumed = dir.path().join("resumed.ckpt");
    let o = run(&["train", "--resume", p(&ck), "--steps", "25", "--out", p(&resumed)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("step 25"));

    let cfg = dir.path().join("small.cfg");
    let straight = dir.path().join("straight.ckpt");
    let o = run(&["train", "--config", p(&cfg), "--steps", "25", "--classifier-steps", "20", "--out", p(&straight)]);
    assert_eq!(code(&o), 0);
    let a = guided_mel::persistence::read_checkpoint(&resumed).unwrap();
    let b = guided_mel::persistence::read_checkpoint(&straight).unwrap();
    for t in a.tensors.iter().filter(|t| t.name.starts_with("denoiser.")) {
        assert_eq!(Some(t), b.tensor(&t.name), "{}", t.name);
    }
}

#[test]
fn sweep_writes_cells_and_flags_unconditional() {
    let dir = tempfile::tempdir().unwrap();
    let ck = trained(dir.path());
    let out = dir.path().join("sweep");
    let o = run(&[
        "sweep", "--checkpoint", p(&ck), "--axis", "w1", "--values", "-1,2", "--seeds", "2", "--jobs", "2", "--out-dir",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("w1\taccuracy\tmean_gamma"));
    assert!(rows[1].starts_with("-1\t") && rows[1].ends_with("unconditional-only"));
    assert!(rows[2].starts_with("2\t") && rows[2].ends_with("-"));
    for stem in ["w1=-1_seed0", "w1=-1_seed1", "w1=2_seed0", "w1=2_seed1"] {
        assert!(out.join(format!("{stem}.mel")).is_file(), "{stem}");
        assert!(out.join(format!("{stem}.trace")).is_file(), "{stem}");
    }
    assert_eq!(std::fs::read_to_string(out.join("summary.tsv")).unwrap(), table);

    let none = dir.path().join("none");
    let o = run(&["sweep", "--checkpoint", p(&ck), "--axis", "w2", "--values", "", "--out-dir", p(&none)]);
    assert_eq!(code(&o), 2);
    assert!(!none.exists());
}

#[test]
fn audio_pipeline_commands() {
    let dir = tempfile::tempdir().unwrap();
    let wavs = dir.path().join("wavs");
    std::fs::create_dir(&wavs).unwrap();
    write_wav(&wavs.join("a.wav"), &tone(0.5, 440.0)).unwrap();
    write_wav(&wavs.join("b.wav"), &tone(0.3, 1000.0)).unwrap();
    std::fs::write(wavs.join("notes.txt"), "ignored").unwrap();

    let stats = dir.path().join("stats.txt");
    let o = run(&["stats", p(&wavs), "--out", p(&stats)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(&stats).unwrap();
    let vals: Vec<f64> = text.split_whitespace().map(|v| v.parse().unwrap()).collect();
    assert_eq!(vals.len(), 2);
    assert!(vals[0] < vals[1]);

    let mel = dir.path().join("a.mel");
    let o = run(&["preprocess", "--wav", p(&wavs.join("a.wav")), "--stats", p(&stats), "--out", p(&mel)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = guided_mel::persistence::read_mel(&mel).unwrap();
    assert_eq!((m.n_mels(), m.n_frames()), (80, (8000 - 640) / 160 + 1));
    assert!(m.as_slice().iter().all(|v| (-1.0 - 1e-9..=1.0 + 1e-9).contains(v)));

    let wav = dir.path().join("gl.wav");
    let o = run(&["griffinlim", "--mel", p(&mel), "--stats", p(&stats), "--out", p(&wav), "--iters", "8"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let back = guided_mel::audiodsp::read_wav(&wav).unwrap();
    assert_eq!(back.len(), 8000);

    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let o = run(&["stats", p(&empty), "--out", p(&dir.path().join("s2.txt"))]);
    assert_eq!(code(&o), 2);
    let o = run(&["preprocess", "--wav", p(&dir.path().join("nope.wav")), "--stats", p(&stats), "--out", p(&dir.path().join("n.mel"))]);
    assert_eq!(code(&o), 3);
    assert!(!dir.path().join("n.mel").exists());
}

#[test]
fn verify_is_deterministic_and_catches_a_bad_schedule() {
    let a = run(&["verify", "--moment-samples", "2000"]);
    let b = run(&["verify", "--moment-samples", "2000"]);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stdout));
    assert_eq!(a.stdout, b.stdout);
    let report = String::from_utf8(a.stdout.clone()).unwrap();
    assert!(report.ends_with("6 checks, 0 failed\n"));
    assert!(stderr(&a).contains("sampling-moments"));

    let bad = run(&["verify", "--moment-samples", "2000", "--corrupt-schedule"]);
    assert_eq!(code(&bad), 1);
    let report = String::from_utf8(bad.stdout).unwrap();
    let line = report.lines().find(|l| l.contains("sampling-moments")).unwrap();
    assert!(line.starts_with("FAIL"));
    assert!(line.contains("mean[") || line.contains("variance["), "{line}");
}
