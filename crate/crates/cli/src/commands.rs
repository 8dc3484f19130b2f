//! The four subcommands. Each returns what it wrote so tests can inspect it.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use augsearch::eval::ChildEvaluator;
use augsearch::ops::apply_chain;
use augsearch::policy::parse_policies;
use augsearch::rng::{derive_tagged, stream};
use augsearch::search::{compute_ratio, GreedySearch, SearchResult};
use augsearch::selection::{chain_usage, expand_dataset};
use augsearch::ScoredChain;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::formats::{load_dataset, output_source, read_png, write_dataset, write_png, DatasetFormat, DatasetSource, Loaded};

pub const POLICIES_FILE: &str = "policies.json";
pub const REPORT_FILE: &str = "report.txt";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const EXPANDED_STEM: &str = "expanded";

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn load(src: &DatasetSource) -> Result<Loaded> {
    load_dataset(src).with_context(|| format!("loading {}:{}", src.format, src.path.display()))
}

pub struct SearchOutcome {
    pub result: SearchResult,
    pub baseline_accuracy: f64,
    pub ratio: f64,
    pub report: String,
    pub policies_path: PathBuf,
}

pub fn ratio_line(ratio: f64) -> String {
    format!("{ratio:.1}x")
}

pub fn search(cfg: &RunConfig) -> Result<SearchOutcome> {
    cfg.search.validate()?;
    let src = cfg.dataset()?;
    let loaded = load(src)?;
    let data = &loaded.data;
    let evaluator = ChildEvaluator::new(data, cfg.protocol.clone()).context("preparing the child evaluator")?;

    let mut engine = GreedySearch::new(&evaluator, cfg.search.clone())?;
    let baseline_accuracy = engine.baseline()?;
    let result = engine.run()?;
    let ratio = compute_ratio(&result.ledger, cfg.baseline_evals, cfg.baseline_epochs)
        .map_err(|_| anyhow::anyhow!("search spent zero epochs; no ratio to report"))?;

    create_out(&cfg.out)?;
    let policies_path = cfg.out.join(POLICIES_FILE);
    fs::write(&policies_path, result.to_json_bytes()).with_context(|| format!("writing {}", policies_path.display()))?;
    // read back what was written
    let written = fs::read(&policies_path)?;
    let reparsed = parse_policies(&written).context("validating the written policies")?;
    if reparsed != result.chains {
        bail!("{} does not round-trip", policies_path.display());
    }

    let (w, h) = data.image_size();
    let mut report = String::new();
    let _ = writeln!(report, "dataset: {}:{} ({} images, {w}x{h}, {} classes)", src.format, src.path.display(), data.len(), data.class_count());
    let _ = writeln!(
        report,
        "seed {}, {} iterations, holdout {}, {} epochs per child network",
        cfg.seed, cfg.search.iterations, cfg.protocol.holdout_size, cfg.protocol.epochs
    );
    let _ = writeln!(report, "baseline accuracy (no augmentation): {baseline_accuracy:.4}");
    let _ = writeln!(report, "child evaluations: {}", result.ledger.child_evaluations);
    let _ = writeln!(report, "training epochs: {}", result.ledger.total_epochs);
    let _ = writeln!(report, "baseline evaluations (outside the ledger): {}", result.ledger.baseline_evaluations);
    let _ = writeln!(
        report,
        "compute ratio vs {} evaluations x {} epochs: {}",
        cfg.baseline_evals,
        cfg.baseline_epochs,
        ratio_line(ratio)
    );
    let _ = writeln!(report, "chains (best first):");
    for (i, c) in result.chains.iter().enumerate() {
        let _ = writeln!(report, "  {i}: {:.4} {}", c.accuracy, c.chain);
    }
    let report_path = cfg.out.join(REPORT_FILE);
    fs::write(&report_path, &report).with_context(|| format!("writing {}", report_path.display()))?;
    Ok(SearchOutcome { result, baseline_accuracy, ratio, report, policies_path })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub originals: usize,
    pub augmented: usize,
    pub chain_use: Vec<usize>,
}

pub struct ExpandOutcome {
    pub manifest: Manifest,
    pub output: DatasetSource,
}

pub fn read_policies(path: &Path) -> Result<Vec<ScoredChain>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    parse_policies(&bytes).with_context(|| format!("parsing {}", path.display()))
}

/// Expands the dataset with the searched chains and writes it, in the input
/// format, under `<out>/expanded*` together with `<out>/manifest.json`.
pub fn expand(cfg: &RunConfig, policies: &Path, output_format: Option<DatasetFormat>) -> Result<ExpandOutcome> {
    let src = cfg.dataset()?;
    if let Some(f) = output_format {
        if f != src.format {
            bail!("output format {f} differs from input format {}; expanded datasets are written in the input's format", src.format);
        }
    }
    let chains = read_policies(policies)?;
    let loaded = load(src)?;
    let expanded = expand_dataset(&loaded.data, &chains, cfg.alpha, cfg.factor, derive_tagged(cfg.seed, "expand"))?;
    let originals = loaded.data.len();
    let manifest = Manifest {
        originals,
        augmented: expanded.len() - originals,
        chain_use: chain_usage(&expanded, chains.len()),
    };

    create_out(&cfg.out)?;
    let output = output_source(src.format, &cfg.out.join(EXPANDED_STEM));
    let out_loaded = Loaded { data: expanded, class_names: loaded.class_names };
    write_dataset(&out_loaded, &output)?;
    let reread = load_dataset(&output).context("validating the written dataset")?;
    if reread.data.len() != out_loaded.data.len() {
        bail!("written dataset has {} items, expected {}", reread.data.len(), out_loaded.data.len());
    }
    let manifest_path = cfg.out.join(MANIFEST_FILE);
    let mut bytes = serde_json::to_vec(&manifest)?;
    bytes.push(b'\n');
    fs::write(&manifest_path, bytes).with_context(|| format!("writing {}", manifest_path.display()))?;
    Ok(ExpandOutcome { manifest, output })
}

/// Applies chain `index` of the policy file to one PNG.
pub fn apply(image: &Path, policies: &Path, index: usize, seed: u64, out: &Path) -> Result<()> {
    let chains = read_policies(policies)?;
    if chains.is_empty() {
        bail!("{} holds no chains", policies.display());
    }
    if index >= chains.len() {
        bail!("chain index {index} out of range: valid indices are 0..={}", chains.len() - 1);
    }
    let img = read_png(image)?;
    let result = apply_chain(&img, &chains[index].chain, &mut stream(derive_tagged(seed, "apply")));
    write_png(&result, out)?;
    Ok(())
}

pub fn inspect(cfg: &RunConfig) -> Result<String> {
    let src = cfg.dataset()?;
    let loaded = load(src)?;
    let data = &loaded.data;
    let (w, h) = data.image_size();
    let gray = data.items().iter().filter(|it| it.image.is_gray()).count();
    let mut out = String::new();
    let _ = writeln!(out, "format: {}", src.format);
    let _ = writeln!(out, "images: {}", data.len());
    let _ = writeln!(out, "size: {w}x{h}");
    let _ = writeln!(out, "grayscale images: {gray}");
    let _ = writeln!(out, "classes: {}", data.class_count());
    for (name, count) in loaded.class_names.iter().zip(data.class_histogram()) {
        let _ = writeln!(out, "  {name}: {count}");
    }
    Ok(out)
}
