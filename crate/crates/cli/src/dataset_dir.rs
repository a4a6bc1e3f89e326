//! On-disk dataset layout shared by `synth`, `prepare` and the training commands.
//!
//! A dataset directory holds `dataset.json` plus one `user<TAB>item<TAB>label`
//! file per split, with dense 0-based ids.

use std::fs;
use std::path::{Path, PathBuf};

use astrec::data::{load_triples, Dataset, Interaction, Source, TripleOptions, ValueColumn};
use astrec::numcore::Rng;
use astrec::synth::{SynthConfig, SynthWorld};
use astrec::{Error, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST: &str = "dataset.json";
pub const SPLIT_FILES: [&str; 4] = ["biased_train.tsv", "uniform_train.tsv", "validation.tsv", "test.tsv"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub biased_train: usize,
    pub uniform_train: usize,
    pub validation: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    /// `synth` or `prepare`.
    pub origin: String,
    pub n_users: usize,
    pub n_items: usize,
    pub counts: SplitCounts,
    /// Generating world, present for synthetic datasets.
    pub synth: Option<SynthConfig>,
    /// Seed used for the uniform split.
    pub seed: u64,
}

impl Manifest {
    pub fn new(origin: &str, dataset: &Dataset, synth: Option<SynthConfig>, seed: u64) -> Self {
        Manifest {
            origin: origin.into(),
            n_users: dataset.n_users,
            n_items: dataset.n_items,
            counts: SplitCounts {
                biased_train: dataset.biased_train.len(),
                uniform_train: dataset.uniform_train.len(),
                validation: dataset.validation.len(),
                test: dataset.test.len(),
            },
            synth,
            seed,
        }
    }
}

fn splits(dataset: &Dataset) -> [&[Interaction]; 4] {
    [
        &dataset.biased_train,
        &dataset.uniform_train,
        &dataset.validation,
        &dataset.test,
    ]
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Write the four split files and the manifest.
pub fn write(dir: &Path, dataset: &Dataset, manifest: &Manifest) -> Result<()> {
    dataset.validate()?;
    create_dir(dir)?;
    for (name, part) in SPLIT_FILES.iter().zip(splits(dataset)) {
        astrec::data::write_triples(&dir.join(name), part, ValueColumn::Label)?;
    }
    write_json(&dir.join(MANIFEST), manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.clone(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// A loaded dataset directory.
#[derive(Debug, Clone)]
pub struct DatasetDir {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub dataset: Dataset,
}

impl DatasetDir {
    pub fn read(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::io(
                dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
            ));
        }
        let manifest = read_manifest(dir)?;
        let mut parts = Vec::with_capacity(4);
        for (idx, name) in SPLIT_FILES.iter().enumerate() {
            let source = if idx == 0 { Source::Logged } else { Source::Uniform };
            let opts = TripleOptions {
                separator: '\t',
                one_based: false,
                values: ValueColumn::Label,
                remap: false,
                source,
            };
            parts.push(load_triples(&dir.join(name), &opts)?.interactions);
        }
        let mut parts = parts.into_iter();
        let dataset = Dataset {
            n_users: manifest.n_users,
            n_items: manifest.n_items,
            biased_train: parts.next().unwrap_or_default(),
            uniform_train: parts.next().unwrap_or_default(),
            validation: parts.next().unwrap_or_default(),
            test: parts.next().unwrap_or_default(),
        };
        dataset.validate()?;
        Ok(DatasetDir {
            dir: dir.to_path_buf(),
            manifest,
            dataset,
        })
    }

    /// Files whose content defines the dataset, for input hashing.
    pub fn files(&self) -> Vec<PathBuf> {
        std::iter::once(MANIFEST)
            .chain(SPLIT_FILES)
            .map(|n| self.dir.join(n))
            .collect()
    }

    /// Rebuild the generating world of a synthetic dataset.
    pub fn world(&self) -> Result<Option<SynthWorld>> {
        match &self.manifest.synth {
            Some(cfg) => {
                let world = SynthWorld::build(cfg.clone(), &mut Rng::new(cfg.seed, astrec::synth::stream::WORLD))?;
                Ok(Some(world))
            }
            None => Ok(None),
        }
    }
}
