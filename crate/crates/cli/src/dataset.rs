use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use tumorgrade::data::{
    curate, stratified_split, ClassLabel, CurateConfig, DatasetManifest, Split, ValidationReport,
};

use crate::failure::Failure;

#[derive(Debug, Args)]
pub struct CurateArgs {
    /// Sources config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output manifest (JSON lines).
    #[arg(long)]
    pub out: PathBuf,
    /// Report path; defaults to validation_report.txt next to the manifest.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Failure::io(path, e))
}

pub fn cmd_curate(args: &CurateArgs) -> Result<(), Failure> {
    let config = CurateConfig::load(&args.config)?;
    let outcome = curate(&config, &parent_dir(&args.config))?;
    let report = outcome.render();
    print!("{report}");
    write(&args.out, &outcome.manifest.to_jsonl())?;
    let report_path = args
        .report
        .clone()
        .unwrap_or_else(|| parent_dir(&args.out).join("validation_report.txt"));
    write(&report_path, &report)?;
    if outcome.passed() {
        Ok(())
    } else {
        Err(Failure::validation("CountMismatch", "class counts differ from expectations"))
    }
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Curated manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output manifest with split assignments.
    #[arg(long)]
    pub out: PathBuf,
    /// Fraction of each class assigned to train; 1.0 puts everything in train.
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Expected train count per class, e.g. `glioma=1321`; repeatable.
    #[arg(long = "expect-train", value_parser = parse_count)]
    pub expect_train: Vec<(ClassLabel, usize)>,
}

fn parse_count(s: &str) -> Result<(ClassLabel, usize), String> {
    let (label, count) = s.split_once('=').ok_or("expected <class>=<count>")?;
    let label = label.parse::<ClassLabel>().map_err(|e| e.to_string())?;
    let count = count.parse::<usize>().map_err(|e| e.to_string())?;
    Ok((label, count))
}

fn split_table(m: &DatasetManifest) -> String {
    let train = m.split_counts(Split::Train);
    let test = m.split_counts(Split::Test);
    let mut s = format!("{:<12} {:>7} {:>7}\n", "class", "train", "test");
    for label in ClassLabel::ALL {
        let (a, b) = (train.get(&label).copied().unwrap_or(0), test.get(&label).copied().unwrap_or(0));
        s.push_str(&format!("{:<12} {a:>7} {b:>7}\n", label.name()));
    }
    s
}

pub fn cmd_split(args: &SplitArgs) -> Result<(), Failure> {
    let manifest = DatasetManifest::load(&args.manifest)?;
    let split = stratified_split(&manifest, args.train_fraction, args.seed)?;
    print!("{}", split_table(&split));
    write(&args.out, &split.to_jsonl())?;
    if args.expect_train.is_empty() {
        return Ok(());
    }
    let expected: BTreeMap<ClassLabel, usize> = args.expect_train.iter().copied().collect();
    let report =
        ValidationReport::compare("train split", &expected, &split.split_counts(Split::Train));
    println!();
    print!("{}", report.render());
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::validation("CountMismatch", "train split differs from expectations"))
    }
}
