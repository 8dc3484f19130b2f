use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use augsearch::image::Image;
use augsearch::ops::{MagnitudeLevel, Technique};
use augsearch::policy::{serialize_policies, Policy, PolicyChain, Probability};
use augsearch::synthetic::mirrored_blob_task;
use augsearch::{LabeledDataset, ScoredChain};
use augsearch_cli::commands::{self, Manifest};
use augsearch_cli::formats::{encode_cifar, encode_idx, read_png, write_png};
use augsearch_cli::{run, Cli};
use clap::Parser;

fn cli(args: &[&str]) -> anyhow::Result<()> {
    let mut full = vec!["augsearch"];
    full.extend_from_slice(args);
    run(Cli::try_parse_from(full)?)
}

fn p(path: &Path) -> String {
    path.display().to_string()
}

fn policies_file(dir: &Path, chains: Vec<Vec<Technique>>) -> PathBuf {
    let scored: Vec<ScoredChain> = chains
        .into_iter()
        .enumerate()
        .map(|(i, ts)| ScoredChain {
            chain: PolicyChain::new(ts.into_iter().map(|t| Policy::new(t, Probability::ONE, MagnitudeLevel::new(5).unwrap())).collect()),
            accuracy: 0.9 - i as f64 / 10.0,
            evaluations_used: 1,
        })
        .collect();
    let path = dir.join("policies.json");
    fs::write(&path, serialize_policies(&scored)).unwrap();
    path
}

fn cifar_file(dir: &Path, n: usize) -> PathBuf {
    let data = LabeledDataset::from_pairs(
        (0..n).map(|i| (Image::from_fn(32, 32, |x, y| [(x + i) as u8, (y * 3) as u8, (i % 251) as u8]), i % 10)),
        10,
    )
    .unwrap();
    let path = dir.join("in.bin");
    fs::write(&path, encode_cifar(&data).unwrap()).unwrap();
    path
}

fn manifest(out: &Path) -> Manifest {
    serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn expand_doubles_and_identity() {
    let dir = tempfile::tempdir().unwrap();
    let input = cifar_file(dir.path(), 1000);
    let pol = policies_file(dir.path(), vec![vec![Technique::FlipLR], vec![Technique::Invert]]);
    let out = dir.path().join("x2");
    cli(&["expand", "--dataset", &format!("cifar10-bin:{}", p(&input)), "--policies", &p(&pol), "--out", &p(&out)]).unwrap();
    let m = manifest(&out);
    assert_eq!((m.originals, m.augmented), (1000, 1000));
    assert_eq!(m.chain_use.iter().sum::<usize>(), 1000);
    assert_eq!(fs::metadata(out.join("expanded.bin")).unwrap().len(), 2000 * 3073);
    let raw = fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(raw.starts_with(r#"{"originals":1000,"augmented":1000,"chain_use":["#), "{raw}");

    let same = dir.path().join("x1");
    cli(&["expand", "--dataset", &format!("cifar10-bin:{}", p(&input)), "--policies", &p(&pol), "--out", &p(&same), "--factor", "1.0"]).unwrap();
    assert_eq!(fs::read(same.join("expanded.bin")).unwrap(), fs::read(&input).unwrap());
    assert_eq!(manifest(&same).augmented, 0);
}

#[test]
fn manifest_frequencies_follow_pareto() {
    let dir = tempfile::tempdir().unwrap();
    // 1000 tiny gray images; factor 101 yields 100,000 generated items.
    let data = LabeledDataset::from_pairs((0..1000).map(|i| (Image::filled(2, 2, [(i % 256) as u8; 3]), i % 2)), 2).unwrap();
    let (im, lb) = encode_idx(&data).unwrap();
    let images = dir.path().join("tiny-images-idx3-ubyte");
    fs::write(&images, im).unwrap();
    fs::write(dir.path().join("tiny-labels-idx1-ubyte"), lb).unwrap();
    let pol = policies_file(dir.path(), vec![vec![Technique::FlipUD], vec![Technique::Invert]]);
    let out = dir.path().join("out");
    cli(&["expand", "--dataset", &format!("idx:{}", p(&images)), "--policies", &p(&pol), "--out", &p(&out), "--factor", "101", "--alpha", "2"]).unwrap();
    let m = manifest(&out);
    assert_eq!(m.augmented, 100_000);
    let share = m.chain_use[1] as f64 / m.augmented as f64;
    assert!((share - 0.25).abs() <= 0.004, "{share}");
    assert!(out.join("expanded-images-idx-ubyte").exists() && out.join("expanded-labels-idx1-ubyte").exists());
}

#[test]
fn expand_rejects_format_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let input = cifar_file(dir.path(), 10);
    let pol = policies_file(dir.path(), vec![vec![Technique::FlipLR]]);
    let out = dir.path().join("o");
    let err = cli(&[
        "expand", "--dataset", &format!("cifar10-bin:{}", p(&input)), "--policies", &p(&pol), "--out", &p(&out), "--output-format", "idx",
    ])
    .unwrap_err();
    assert!(format!("{err:#}").contains("differs from input format"), "{err:#}");
    assert!(!out.exists());
}

#[test]
fn apply_flip_twice_and_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let img = Image::from_fn(7, 5, |x, y| [(x * 30) as u8, (y * 40) as u8, 9]);
    let src = dir.path().join("a.png");
    write_png(&img, &src).unwrap();
    let pol = policies_file(dir.path(), vec![vec![Technique::FlipLR], vec![Technique::Cutout]]);
    let once = dir.path().join("b.png");
    let twice = dir.path().join("c.png");
    cli(&["apply", "--image", &p(&src), "--policies", &p(&pol), "--index", "0", "--out", &p(&once)]).unwrap();
    cli(&["apply", "--image", &p(&once), "--policies", &p(&pol), "--index", "0", "--out", &p(&twice)]).unwrap();
    assert_ne!(read_png(&once).unwrap(), img);
    assert_eq!(read_png(&twice).unwrap(), img);

    let err = cli(&["apply", "--image", &p(&src), "--policies", &p(&pol), "--index", "2", "--out", &p(&once)]).unwrap_err();
    assert!(err.to_string().contains("valid indices are 0..=1"), "{err}");
}

#[test]
fn apply_cutout_changes_one_square() {
    let dir = tempfile::tempdir().unwrap();
    let img = Image::from_fn(32, 32, |x, y| [(x * 3) as u8, (y * 5) as u8, 250]);
    let src = dir.path().join("a.png");
    write_png(&img, &src).unwrap();
    let pol = policies_file(dir.path(), vec![vec![Technique::Cutout]]);
    let out = dir.path().join("b.png");
    cli(&["apply", "--image", &p(&src), "--policies", &p(&pol), "--seed", "3", "--out", &p(&out)]).unwrap();
    let got = read_png(&out).unwrap();
    let diff: Vec<(usize, usize)> = (0..32).flat_map(|y| (0..32).map(move |x| (x, y))).filter(|&(x, y)| got.get(x, y) != img.get(x, y)).collect();
    let (x0, x1) = (diff.iter().map(|d| d.0).min().unwrap(), diff.iter().map(|d| d.0).max().unwrap());
    let (y0, y1) = (diff.iter().map(|d| d.1).min().unwrap(), diff.iter().map(|d| d.1).max().unwrap());
    assert_eq!(diff.len(), (x1 - x0 + 1) * (y1 - y0 + 1));
    // level 5 gives side 10, possibly clipped at a border
    assert!(x1 - x0 < 10 && y1 - y0 < 10);
    assert!(diff.iter().all(|&(x, y)| got.get(x, y) == [128, 128, 128]));
}

#[test]
fn search_validates_before_loading() {
    let err = cli(&["search", "--dataset", "cifar10-bin:/nonexistent/data.bin", "--iterations", "25"]).unwrap_err();
    let msg = format!("{err:#}");
    assert!(msg.contains("iterations") && !msg.contains("nonexistent"), "{msg}");
}

#[test]
fn search_writes_artifacts_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (train, _) = mirrored_blob_task(200, 1, 32, 4);
    let data = dir.path().join("blobs.bin");
    fs::write(&data, encode_cifar(&train).unwrap()).unwrap();
    let config = dir.path().join("run.json");
    fs::write(&config, r#"{"holdout": 60, "iterations": 2, "seed": 5, "threads": 1}"#).unwrap();
    let mut bytes = Vec::new();
    for (name, threads) in [("a", "1"), ("b", "3")] {
        let out = dir.path().join(name);
        cli(&["--threads", threads, "search", "--dataset", &format!("cifar10-bin:{}", p(&data)), "--config", &p(&config), "--out", &p(&out)]).unwrap();
        bytes.push(fs::read(out.join("policies.json")).unwrap());
        let report = fs::read_to_string(out.join("report.txt")).unwrap();
        assert!(report.contains("compute ratio vs 15000 evaluations x 120 epochs: "), "{report}");
        assert!(report.lines().any(|l| l.ends_with('x') && l.contains("compute ratio")));
    }
    assert_eq!(bytes[0], bytes[1]);
    let doc: serde_json::Value = serde_json::from_slice(&bytes[0]).unwrap();
    assert_eq!(doc["chains"].as_array().unwrap().len(), 2);
    assert!(doc["ledger"]["child_evaluations"].as_u64().unwrap() >= 40);
}

#[test]
fn inspect_reports_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let input = cifar_file(dir.path(), 30);
    let flags = augsearch_cli::config::RunFlags { dataset: Some(format!("cifar10-bin:{}", p(&input))), ..Default::default() };
    let text = commands::inspect(&augsearch_cli::config::RunConfig::resolve(&flags, None).unwrap()).unwrap();
    assert!(text.contains("images: 30") && text.contains("size: 32x32") && text.contains("  9: 3"), "{text}");
}

#[test]
fn binary_exits_nonzero_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("e.bin");
    fs::write(&empty, []).unwrap();
    let out = Process::new(env!("CARGO_BIN_EXE_augsearch"))
        .args(["inspect", "--dataset", &format!("cifar10-bin:{}", p(&empty))])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("truncated at byte offset 0"), "{stderr}");
}
