//! Choice datasets: in-memory representation, the JSONL file format,
//! feature standardization and train/validation/test splitting.
//!
//! An observation is a choice set (an ordered list of item feature vectors)
//! together with the index of the chosen item. Feature vectors are stored
//! contiguously per choice set, and the choice-set mean `x_C` is cached at
//! construction because every context model needs it.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The items of one choice instance, stored row-major (`n_items × d`).
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceSet {
    features: Vec<f64>,
    n_items: usize,
    d: usize,
    mean: Vec<f64>,
}

impl ChoiceSet {
    pub fn new(items: &[Vec<f64>]) -> Result<Self> {
        let first = items.first().ok_or(Error::Empty("choice set"))?;
        let d = first.len();
        let mut features = Vec::with_capacity(items.len() * d);
        for item in items {
            if item.len() != d {
                return Err(Error::dims("item feature vector", d, item.len()));
            }
            features.extend_from_slice(item);
        }
        Self::from_flat(features, d)
    }

    /// Builds a choice set from row-major features of `features.len() / d` items.
    pub fn from_flat(features: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("feature dimension must be positive".into()));
        }
        if features.is_empty() {
            return Err(Error::Empty("choice set"));
        }
        if !features.len().is_multiple_of(d) {
            return Err(Error::dims("flat feature buffer (multiple of d)", d, features.len()));
        }
        if let Some(bad) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature value at flat index {bad}")));
        }
        let n_items = features.len() / d;
        let mut mean = vec![0.0; d];
        for item in features.chunks_exact(d) {
            for (m, v) in mean.iter_mut().zip(item) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n_items as f64;
        }
        Ok(Self {
            features,
            n_items,
            d,
            mean,
        })
    }

    pub fn len(&self) -> usize {
        self.n_items
    }

    pub fn is_empty(&self) -> bool {
        self.n_items == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn item(&self, j: usize) -> &[f64] {
        &self.features[j * self.d..(j + 1) * self.d]
    }

    pub fn items(&self) -> std::slice::ChunksExact<'_, f64> {
        self.features.chunks_exact(self.d)
    }

    /// Mean feature vector `x_C` of the set.
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn flat(&self) -> &[f64] {
        &self.features
    }

    pub fn to_nested(&self) -> Vec<Vec<f64>> {
        self.items().map(<[f64]>::to_vec).collect()
    }

    fn map_features(&self, f: impl Fn(usize, f64) -> f64) -> Self {
        let d = self.d;
        let features: Vec<f64> = self.features.iter().enumerate().map(|(i, &v)| f(i % d, v)).collect();
        Self::from_flat(features, d).expect("mapping preserves shape")
    }
}

/// Componentwise mean of a non-empty list of feature vectors.
pub fn mean_feature_vector(choice_set: &[Vec<f64>]) -> Result<Vec<f64>> {
    Ok(ChoiceSet::new(choice_set)?.mean)
}

/// One `(i, C)` pair: a choice set and the index of the chosen item.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    set: ChoiceSet,
    chosen: usize,
}

impl Observation {
    pub fn new(set: ChoiceSet, chosen: usize) -> Result<Self> {
        if chosen >= set.len() {
            return Err(Error::ChosenOutOfRange {
                chosen,
                size: set.len(),
            });
        }
        Ok(Self { set, chosen })
    }

    pub fn from_items(items: &[Vec<f64>], chosen: usize) -> Result<Self> {
        Self::new(ChoiceSet::new(items)?, chosen)
    }

    pub fn choice_set(&self) -> &ChoiceSet {
        &self.set
    }

    pub fn chosen(&self) -> usize {
        self.chosen
    }

    pub fn chosen_item(&self) -> &[f64] {
        self.set.item(self.chosen)
    }
}

/// A non-empty collection of observations sharing one feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceDataset {
    observations: Vec<Observation>,
    d: usize,
    feature_names: Option<Vec<String>>,
}

impl ChoiceDataset {
    pub fn new(observations: Vec<Observation>, feature_names: Option<Vec<String>>) -> Result<Self> {
        let d = observations.first().ok_or(Error::Empty("dataset"))?.choice_set().dim();
        for obs in &observations {
            if obs.choice_set().dim() != d {
                return Err(Error::dims("observation feature dimension", d, obs.choice_set().dim()));
            }
        }
        if let Some(names) = &feature_names {
            if names.len() != d {
                return Err(Error::dims("feature_names", d, names.len()));
            }
        }
        Ok(Self {
            observations,
            d,
            feature_names,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    /// Dataset made of the given observation indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let observations = indices
            .iter()
            .map(|&i| {
                self.observations.get(i).cloned().ok_or(Error::IndexOutOfRange {
                    index: i,
                    dim: self.len(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(observations, self.feature_names.clone())
    }

    /// Total number of (item, choice set) occurrences.
    pub fn n_occurrences(&self) -> usize {
        self.observations.iter().map(|o| o.choice_set().len()).sum()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ObservationRecord {
    choice_set: Vec<Vec<f64>>,
    chosen: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct HeaderRecord {
    feature_names: Vec<String>,
}

/// Outcome of reading a dataset file.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub dataset: ChoiceDataset,
    /// Observations discarded because their choice set had fewer than two items.
    pub dropped_singletons: usize,
}

/// Reads the JSONL dataset format: an optional `{"feature_names": [...]}`
/// header on the first line, then one `{"choice_set": [[...]], "chosen": i}`
/// object per line. Singleton choice sets carry no information and are dropped.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<LoadedDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_dataset(reader: impl BufRead) -> Result<LoadedDataset> {
    let mut feature_names = None;
    let mut observations = Vec::new();
    let mut d: Option<usize> = None;
    let mut dropped = 0;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if line_no == 1 && trimmed.contains("\"feature_names\"") {
            let header: HeaderRecord = serde_json::from_str(trimmed).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            feature_names = Some(header.feature_names);
            continue;
        }
        let record: ObservationRecord = serde_json::from_str(trimmed).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        for item in &record.choice_set {
            let expected = *d.get_or_insert(item.len());
            if item.len() != expected {
                return Err(Error::InconsistentDimension {
                    line: line_no,
                    expected,
                    got: item.len(),
                });
            }
        }
        if record.chosen >= record.choice_set.len() {
            return Err(Error::Parse {
                line: line_no,
                message: Error::ChosenOutOfRange {
                    chosen: record.chosen,
                    size: record.choice_set.len(),
                }
                .to_string(),
            });
        }
        if record.choice_set.len() < 2 {
            dropped += 1;
            continue;
        }
        let obs = Observation::from_items(&record.choice_set, record.chosen).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        observations.push(obs);
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} observation(s) with fewer than two items");
    }
    let dataset = ChoiceDataset::new(observations, feature_names)?;
    Ok(LoadedDataset {
        dataset,
        dropped_singletons: dropped,
    })
}

pub fn write_dataset(path: impl AsRef<Path>, dataset: &ChoiceDataset) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_dataset_to(&mut w, dataset)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_dataset_to(mut w: impl Write, dataset: &ChoiceDataset) -> Result<()> {
    let io = |e| Error::io("<writer>", e);
    if let Some(names) = dataset.feature_names() {
        let header = HeaderRecord {
            feature_names: names.to_vec(),
        };
        writeln!(w, "{}", serde_json::to_string(&header)?).map_err(io)?;
    }
    for obs in dataset.observations() {
        let record = ObservationRecord {
            choice_set: obs.choice_set().to_nested(),
            chosen: obs.chosen(),
        };
        writeln!(w, "{}", serde_json::to_string(&record)?).map_err(io)?;
    }
    Ok(())
}

/// Per-feature affine map to zero mean and unit (population) variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    pub fn identity(d: usize) -> Self {
        Self {
            means: vec![0.0; d],
            stds: vec![1.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    /// Moments over every (item, choice set) occurrence. Constant features get
    /// std 1 so that they map to 0.
    pub fn fit(dataset: &ChoiceDataset) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        let d = dataset.dim();
        let count = dataset.n_occurrences() as f64;
        let mut means = vec![0.0; d];
        for obs in dataset.observations() {
            for item in obs.choice_set().items() {
                for (m, v) in means.iter_mut().zip(item) {
                    *m += v;
                }
            }
        }
        means.iter_mut().for_each(|m| *m /= count);
        let mut vars = vec![0.0; d];
        for obs in dataset.observations() {
            for item in obs.choice_set().items() {
                for ((s, v), m) in vars.iter_mut().zip(item).zip(&means) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        let stds = vars
            .iter()
            .zip(&means)
            .map(|(s, m)| {
                let std = (s / count).sqrt();
                if std <= 1e-12 * (1.0 + m.abs()) {
                    1.0
                } else {
                    std
                }
            })
            .collect();
        Ok(Self { means, stds })
    }

    pub fn apply(&self, dataset: &ChoiceDataset) -> Result<ChoiceDataset> {
        self.check_dim(dataset.dim())?;
        self.map(dataset, |k, v| (v - self.means[k]) / self.stds[k])
    }

    pub fn invert(&self, dataset: &ChoiceDataset) -> Result<ChoiceDataset> {
        self.check_dim(dataset.dim())?;
        self.map(dataset, |k, v| v * self.stds[k] + self.means[k])
    }

    pub fn apply_set(&self, set: &ChoiceSet) -> Result<ChoiceSet> {
        self.check_dim(set.dim())?;
        Ok(set.map_features(|k, v| (v - self.means[k]) / self.stds[k]))
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if self.dim() != d {
            return Err(Error::dims("standardizer", self.dim(), d));
        }
        Ok(())
    }

    fn map(&self, dataset: &ChoiceDataset, f: impl Fn(usize, f64) -> f64 + Copy) -> Result<ChoiceDataset> {
        let observations = dataset
            .observations()
            .iter()
            .map(|o| Observation::new(o.choice_set().map_features(f), o.chosen()))
            .collect::<Result<Vec<_>>>()?;
        ChoiceDataset::new(observations, dataset.feature_names.clone())
    }
}

pub fn fit_standardizer(dataset: &ChoiceDataset) -> Result<Standardizer> {
    Standardizer::fit(dataset)
}

pub fn apply_standardizer(standardizer: &Standardizer, dataset: &ChoiceDataset) -> Result<ChoiceDataset> {
    standardizer.apply(dataset)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Random,
    Temporal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.6,
            validation: 0.2,
            test: 0.2,
        }
    }
}

impl SplitFractions {
    pub fn new(train: f64, validation: f64, test: f64) -> Result<Self> {
        let f = Self {
            train,
            validation,
            test,
        };
        f.validate()?;
        Ok(f)
    }

    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "split fractions must be positive: {parts:?}"
            )));
        }
        let total: f64 = parts.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("split fractions sum to {total}, not 1")));
        }
        Ok(())
    }
}

/// Observation indices of each part, plus what produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub mode: SplitMode,
    pub seed: u64,
    pub fractions: SplitFractions,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: ChoiceDataset,
    pub validation: ChoiceDataset,
    pub test: ChoiceDataset,
    pub manifest: SplitManifest,
}

/// Partitions a dataset. Part sizes are `floor(n * f)` for train and
/// validation; the remainder goes to test.
pub fn split_dataset(
    dataset: &ChoiceDataset,
    mode: SplitMode,
    fractions: SplitFractions,
    seed: u64,
) -> Result<DatasetSplit> {
    fractions.validate()?;
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    if mode == SplitMode::Random {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
    }
    let n_train = (n as f64 * fractions.train).floor() as usize;
    let n_val = (n as f64 * fractions.validation).floor() as usize;
    let (train, rest) = order.split_at(n_train);
    let (validation, test) = rest.split_at(n_val.min(rest.len()));
    if train.is_empty() || validation.is_empty() || test.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "splitting {n} observations with {fractions:?} leaves an empty part"
        )));
    }
    Ok(DatasetSplit {
        train: dataset.subset(train)?,
        validation: dataset.subset(validation)?,
        test: dataset.subset(test)?,
        manifest: SplitManifest {
            mode,
            seed,
            fractions,
            train: train.to_vec(),
            validation: validation.to_vec(),
            test: test.to_vec(),
        },
    })
}
