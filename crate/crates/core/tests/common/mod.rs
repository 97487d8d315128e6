#![allow(dead_code)]

use std::path::Path;

use tumorgrade::data::fixture::write_fixture;
use tumorgrade::data::{curate, stratified_split, CurateConfig, DatasetManifest};

/// Curated manifest over a freshly written synthetic fixture under `root`.
pub fn fixture_manifest(root: &Path, per_class: usize, side: u32, seed: u64) -> DatasetManifest {
    let labels = write_fixture(&root.join("images"), per_class, side, seed).unwrap();
    let mut toml = String::from("[sources.synthetic]\nroot = \"images\"\n[sources.synthetic.labels]\n");
    for (folder, class) in &labels {
        toml.push_str(&format!("{folder} = \"{class}\"\n"));
    }
    let config = CurateConfig::from_toml(&toml).unwrap();
    curate(&config, root).unwrap().manifest
}

/// Every image in train; used when the training set is also the validation set.
pub fn all_train(manifest: &DatasetManifest, seed: u64) -> DatasetManifest {
    stratified_split(manifest, 1.0, seed).unwrap()
}
