use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sgmnmf::{optimizer, separate, signal, Hyperparams, SeparationState, StftConfig, Waveform};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sgmnmf"));
    cmd.env_remove("SGMNMF_WORKERS");
    cmd
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn write_json(path: &Path, value: serde_json::Value) -> PathBuf {
    std::fs::write(path, value.to_string()).unwrap();
    path.to_path_buf()
}

/// Simulates a short two-source scene into `dir/scene` and returns that directory.
fn simulate(dir: &Path, seed: u64) -> PathBuf {
    let spec = write_json(
        &dir.join("scene_spec.json"),
        serde_json::json!({ "length": 12000, "seed": seed, "source_kind": "am_tone" }),
    );
    let out = dir.join("scene");
    let o = run(bin().args(["simulate", "--spec"]).arg(&spec).arg("--out").arg(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn separate_cfg(dir: &Path, input: &Path, out: &Path, iterations: usize) -> PathBuf {
    write_json(
        &dir.join(format!("run_{iterations}.json")),
        serde_json::json!({
            "iterations": iterations,
            "n_bases": 4,
            "input": input,
            "output_dir": out,
        }),
    )
}

#[test]
fn simulate_separate_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let scene = simulate(dir.path(), 3);
    for name in ["mixture.wav", "image_0.wav", "image_1.wav", "dry_0.wav", "dry_1.wav", "scene.json"] {
        assert!(scene.join(name).exists(), "missing {name}");
    }
    let sep = dir.path().join("sep");
    let cfg = separate_cfg(dir.path(), &scene.join("mixture.wav"), &sep, 5);
    let o = run(bin().args(["--workers", "2", "separate", "--config"]).arg(&cfg));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = std::fs::read_to_string(sep.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 6);
    assert!(sep.join("state.json").exists());

    let eval = write_json(
        &dir.path().join("eval.json"),
        serde_json::json!({
            "estimates": [sep.join("source_0.wav"), sep.join("source_1.wav")],
            "references": [scene.join("image_0.wav"), scene.join("image_1.wav")],
            "mixture": scene.join("mixture.wav"),
            "output_dir": dir.path().join("metrics"),
        }),
    );
    let o = run(bin().args(["evaluate", "--config"]).arg(&eval));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics/metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["per_source"].as_array().unwrap().len(), 2);
    assert_eq!(metrics["improvement"].as_array().unwrap().len(), 2);
    assert!(metrics["mean_improvement"].as_f64().unwrap().is_finite());
}

#[test]
fn zero_iterations_gives_wiener_output_of_initial_state() {
    let dir = tempfile::tempdir().unwrap();
    let scene = simulate(dir.path(), 5);
    let sep = dir.path().join("sep0");
    let cfg = separate_cfg(dir.path(), &scene.join("mixture.wav"), &sep, 0);
    let o = run(bin().args(["separate", "--config"]).arg(&cfg));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let mix = signal::read_wav(scene.join("mixture.wav")).unwrap();
    let stft = StftConfig::default();
    let x = signal::stft(&mix, &stft).unwrap();
    let hyper = Hyperparams { iterations: 0, n_bases: 4, ..Hyperparams::default() };
    let init = SeparationState::init(x.n_freqs(), x.n_frames(), x.n_channels(), hyper).unwrap();
    let (state, trace) = optimizer::run(init, &x).unwrap();
    assert!(trace.is_empty());
    let want = separate::wiener_separate(&state, &x).unwrap().to_waveforms(&stft, mix.len()).unwrap();
    for (n, w) in want.iter().enumerate() {
        let got = signal::read_wav(sep.join(format!("source_{n}.wav"))).unwrap();
        let peak = w.channels().iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        for (gc, wc) in got.channels().iter().zip(w.channels()) {
            for (a, b) in gc.iter().zip(wc) {
                // Output files are float32.
                assert!((a - b).abs() <= 1e-6 * peak);
            }
        }
    }
}

#[test]
fn single_worker_traces_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let scene = simulate(dir.path(), 7);
    let costs = |name: &str| {
        let out = dir.path().join(name);
        let cfg = separate_cfg(dir.path(), &scene.join("mixture.wav"), &out, 4);
        let o = run(bin().args(["--workers", "1", "separate", "--config"]).arg(&cfg));
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read_to_string(out.join("trace.csv"))
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_owned())
            .collect::<Vec<_>>()
    };
    assert_eq!(costs("a"), costs("b"));
}

#[test]
fn mono_input_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("mono.wav");
    let samples: Vec<f64> = (0..8000).map(|t| (t as f64 * 0.05).sin()).collect();
    signal::write_wav(&input, &Waveform::mono(16_000, samples).unwrap()).unwrap();
    let cfg = separate_cfg(dir.path(), &input, &dir.path().join("out"), 2);
    let o = run(bin().args(["separate", "--config"]).arg(&cfg));
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("2 channels"));
}

#[test]
fn missing_reference_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let scene = simulate(dir.path(), 1);
    let missing = dir.path().join("nowhere.wav");
    let eval = write_json(
        &dir.path().join("eval.json"),
        serde_json::json!({
            "estimates": [scene.join("image_0.wav")],
            "references": [&missing],
            "mixture": scene.join("mixture.wav"),
            "output_dir": dir.path().join("m"),
        }),
    );
    let o = run(bin().args(["evaluate", "--config"]).arg(&eval));
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere.wav"));
}

#[test]
fn perfect_estimates_hit_the_cap() {
    let dir = tempfile::tempdir().unwrap();
    let scene = simulate(dir.path(), 2);
    let images = [scene.join("image_0.wav"), scene.join("image_1.wav")];
    let eval = write_json(
        &dir.path().join("eval.json"),
        serde_json::json!({
            "estimates": images,
            "references": images,
            "mixture": scene.join("mixture.wav"),
            "output_dir": dir.path().join("m"),
        }),
    );
    let o = run(bin().args(["evaluate", "--config"]).arg(&eval));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("m/metrics.json")).unwrap()).unwrap();
    for v in metrics["per_source"].as_array().unwrap() {
        assert_eq!(v.as_f64().unwrap(), sgmnmf::eval::SDR_CAP_DB);
    }
    assert_eq!(metrics["permutation"], serde_json::json!([0, 1]));
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (serde_json::json!({ "beta": 1.5 }), "beta"),
        (serde_json::json!({ "iterations": "many" }), "iterations"),
        (serde_json::json!({ "stft": { "hop_ms": -1 } }), "stft.hop_ms"),
        (serde_json::json!({ "n_sourcez": 2 }), "n_sourcez"),
    ];
    for (i, (doc, field)) in cases.into_iter().enumerate() {
        let cfg = write_json(&dir.path().join(format!("bad{i}.json")), doc);
        let o = run(bin().args(["separate", "--config"]).arg(&cfg));
        assert!(!o.status.success());
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(field), "{err}");
    }
}

#[test]
fn invalid_worker_count_in_environment_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_json(&dir.path().join("s.json"), serde_json::json!({ "length": 4000 }));
    let o = run(bin().env("SGMNMF_WORKERS", "zero").args(["simulate", "--spec"]).arg(&spec).arg("--out").arg(dir.path()));
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("SGMNMF_WORKERS"));
}
