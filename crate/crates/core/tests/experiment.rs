use std::path::Path;
use std::process::Command;

use dip_restore::experiment::{
    checkpoint_path, compare_methods, config_hash, parse_config, run_experiment, write_comparison_csv, ComparisonRow,
    ExperimentConfig, Manifest, MANIFEST_FILE, TRACE_FILE,
};
use dip_restore::generator::{build_generator, load_checkpoint, sample_input, BnMode};
use dip_restore::imaging::psnr;
use dip_restore::Error;

fn config_json(dir: &Path, mode: &str, size: usize, extra_method: &str, profiles: &str) -> String {
    format!(
        r#"{{
  "schema_version": 1,
  "phantom": {{"size": {size}, "seed": 0}},
  "degradation": {{"sigma": 25}},
  "method": {{"mode": "{mode}", "outer_iters": 4, "inner_iters": 2{extra_method}}},
  "generator": {{"levels": 2, "down_channels": [8, 8], "up_channels": [8, 8], "skip_channels": [2, 2], "input_channels": 8}},
  "seeds": {{"noise": 1, "weights": 2, "input": 3}},
  "output_dir": "{}",
  "emit": {{"profiles": {profiles}}}
}}"#,
        dir.display()
    )
}

fn config(dir: &Path, mode: &str) -> ExperimentConfig {
    ExperimentConfig::from_json(&config_json(dir, mode, 64, ", \"mu\": 0.05", "[]")).unwrap()
}

#[test]
fn identical_configs_give_identical_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let a = config(&tmp.path().join("a"), "dip_wtv");
    let b = config(&tmp.path().join("b"), "dip_wtv");
    run_experiment(&a).unwrap();
    run_experiment(&b).unwrap();
    let ta = std::fs::read(a.output_dir.join(TRACE_FILE)).unwrap();
    let tb = std::fs::read(b.output_dir.join(TRACE_FILE)).unwrap();
    assert!(!ta.is_empty());
    assert_eq!(ta, tb);
}

#[test]
fn checkpoints_reproduce_traced_psnr() {
    let tmp = tempfile::tempdir().unwrap();
    let text = config_json(tmp.path(), "dip_wtv", 64, ", \"checkpoint_every\": 2", "[]");
    let cfg = ExperimentConfig::from_json(&text).unwrap();
    let result = run_experiment(&cfg).unwrap();
    let gen_cfg = cfg.generator_config(1);
    let (net, template) = build_generator(&gen_cfg).unwrap();
    let z = sample_input(&gen_cfg, 64, 64, cfg.seeds.input).unwrap();
    for k in [2, 4] {
        let params = load_checkpoint(checkpoint_path(tmp.path(), k), &template).unwrap();
        let img = net.forward(&params, &z, BnMode::Train).unwrap();
        let p = psnr(&img, &result.data.ground_truth).unwrap();
        let traced = result.outcome.trace.records[k - 1].psnr.unwrap();
        assert!((p - traced).abs() <= 1e-6, "{p} vs {traced}");
    }
}

#[test]
fn manifest_lists_every_emitted_file() {
    let tmp = tempfile::tempdir().unwrap();
    let text = config_json(tmp.path(), "dip", 128, ", \"checkpoint_every\": 3", "[90, 0]");
    let cfg = ExperimentConfig::from_json(&text).unwrap();
    run_experiment(&cfg).unwrap();
    let manifest: Manifest =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest.config_hash, config_hash(&cfg));
    let mut on_disk: Vec<String> = walk(tmp.path())
        .into_iter()
        .map(|p| p.strip_prefix(tmp.path()).unwrap().to_string_lossy().into_owned())
        .collect();
    let mut listed = manifest.files.clone();
    on_disk.sort();
    listed.sort();
    assert_eq!(on_disk, listed);
    for name in [
        "restored.png",
        "best.png",
        "noisy.png",
        "trace.csv",
        "profiles_90.csv",
        "checkpoints/iter_000003.bin",
    ] {
        assert!(listed.iter().any(|f| f == name), "{name}");
    }
    let mut rdr = csv::Reader::from_path(tmp.path().join("profiles_90.csv")).unwrap();
    assert_eq!(
        rdr.headers().unwrap().iter().collect::<Vec<_>>(),
        ["column", "ground_truth", "noisy", "restored"]
    );
    assert_eq!(rdr.records().count(), 128);
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn single_config_comparison_equals_its_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(&tmp.path().join("solo"), "dip_tv");
    let rows = compare_methods(std::slice::from_ref(&cfg)).unwrap();
    let summary = run_experiment(&cfg).unwrap().summary;
    assert_eq!(rows, vec![ComparisonRow::from(&summary)]);
    let mut buf = Vec::new();
    write_comparison_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.starts_with("method,best_psnr,best_ssim,final_psnr,final_ssim,best_iteration,stability_gap"));
}

#[test]
fn comparisons_need_a_shared_observation() {
    assert!(matches!(compare_methods(&[]), Err(Error::Protocol(_))));
    let tmp = tempfile::tempdir().unwrap();
    let a = config(&tmp.path().join("a"), "dip");
    let mut b = config(&tmp.path().join("b"), "dip_wtv");
    b.seeds.noise += 1;
    assert!(matches!(compare_methods(&[a.clone(), b]), Err(Error::Protocol(_))));
    let mut c = config(&tmp.path().join("c"), "dip_wtv");
    c.degradation.sigma = 10.0;
    assert!(matches!(compare_methods(&[a, c]), Err(Error::Protocol(_))));
}

#[test]
fn relative_paths_resolve_against_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("cfg.json");
    std::fs::write(&path, config_json(Path::new("runs/x"), "dip", 64, "", "[]")).unwrap();
    let cfg = parse_config(&path).unwrap();
    assert_eq!(cfg.output_dir, tmp.path().join("runs/x"));
}

fn restore(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_restore")).args(args).output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn cli_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let ph = dir.join("ph.png");
    let (code, _) = restore(&["phantom", "--size", "64", "--seed", "1", "--out", ph.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(ph.exists());

    let good = dir.join("good.json");
    std::fs::write(&good, config_json(Path::new("run"), "dip", 64, "", "[40]")).unwrap();
    assert_eq!(restore(&["run", good.to_str().unwrap()]).0, 0);
    assert!(dir.join("run/profiles_40.csv").exists());

    let bad = dir.join("bad.json");
    std::fs::write(&bad, config_json(Path::new("run"), "dip", 64, ", \"muu\": 1", "[]")).unwrap();
    let (code, stderr) = restore(&["run", bad.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(stderr.contains("muu"), "{stderr}");

    let missing_mu = dir.join("tv.json");
    std::fs::write(&missing_mu, config_json(Path::new("run"), "dip_tv", 64, "", "[]")).unwrap();
    assert_eq!(restore(&["run", missing_mu.to_str().unwrap()]).0, 1);

    let blowup = dir.join("blowup.json");
    std::fs::write(
        &blowup,
        config_json(Path::new("run"), "dip", 64, ", \"learning_rate\": 1e300", "[]"),
    )
    .unwrap();
    let (code, stderr) = restore(&["run", blowup.to_str().unwrap()]);
    assert_eq!(code, 2, "{stderr}");
    assert_eq!(
        restore(&["phantom", "--size", "16", "--seed", "1", "--out", ph.to_str().unwrap()]).0,
        1
    );
}
