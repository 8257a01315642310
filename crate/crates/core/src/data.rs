//! Reproducible datasets of labeled QUBO instances.
//!
//! A dataset directory holds `manifest.json` plus one JSON-lines file per
//! split (`train.jsonl`, `test.jsonl`, `val.jsonl`). Sample ids are global
//! indices across the three splits in that order, and every sample is drawn
//! from its own stream `split_mix(seed, id)`, so generation output does not
//! depend on processing order.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::qubo::{random_qubo, BitVector, QuboMatrix, ValueRange};
use crate::rng::{self, split_mix};
use crate::solve::{self, Method, MAX_BRUTE_FORCE_CITIES};
use crate::tsp::{bits_to_tour, Tour, TourDecode, TspInstance};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Tsp,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
    Val,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Test, Split::Val];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Val => "val",
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.jsonl",
            Split::Test => "test.jsonl",
            Split::Val => "val.jsonl",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "val" => Ok(Split::Val),
            other => Err(CoreError::invalid(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub test: usize,
    pub val: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        SplitCounts {
            train: 11_000,
            test: 1_000,
            val: 1_000,
        }
    }
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Test => self.test,
            Split::Val => self.val,
        }
    }

    fn first_id(&self, split: Split) -> u64 {
        (match split {
            Split::Train => 0,
            Split::Test => self.train,
            Split::Val => self.train + self.test,
        }) as u64
    }
}

/// One labeled instance; field names match the JSON-lines records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u64,
    pub kind: DatasetKind,
    pub n: usize,
    /// Row-major `n x n`, lower triangle zero, unnormalized.
    pub q: Vec<f64>,
    pub offset: f64,
    pub label: BitVector,
    pub label_energy: f64,
    pub tour: Option<Tour>,
    pub m: Option<usize>,
    pub method: Method,
}

impl Sample {
    pub fn qubo(&self) -> Result<QuboMatrix> {
        QuboMatrix::new(self.n, self.q.clone(), self.offset)
    }

    fn validate(&self, manifest: &DatasetManifest) -> Result<()> {
        let fail = |reason: String| CoreError::Validation {
            id: self.id,
            reason,
        };
        if self.kind != manifest.kind {
            return Err(fail(format!(
                "kind {:?} in a {:?} dataset",
                self.kind, manifest.kind
            )));
        }
        if self.n != manifest.n {
            return Err(fail(format!(
                "n = {} but dataset has n = {}",
                self.n, manifest.n
            )));
        }
        let q = self.qubo().map_err(|e| fail(e.to_string()))?;
        if self.label.len() != self.n {
            return Err(fail(format!("label has {} bits", self.label.len())));
        }
        let energy = q.energy_unchecked(self.label.as_slice());
        if (energy - self.label_energy).abs() > 1e-9 * energy.abs().max(1.0) {
            return Err(fail(format!(
                "label_energy {} but energy(q, label) = {energy}",
                self.label_energy
            )));
        }
        if let Err(CoreError::OutOfRange {
            row,
            col,
            value,
            lo,
            hi,
        }) = q.normalize(manifest.normalization)
        {
            return Err(CoreError::SampleOutOfRange {
                id: self.id,
                row,
                col,
                value,
                lo,
                hi,
            });
        }
        if self.kind == DatasetKind::Tsp {
            let m = self.m.ok_or_else(|| fail("tsp sample without m".into()))?;
            if Some(m) != manifest.m || m * m != self.n {
                return Err(fail(format!("m = {m} inconsistent with n = {}", self.n)));
            }
            let tour = self
                .tour
                .as_ref()
                .ok_or_else(|| fail("tsp sample without tour".into()))?;
            match bits_to_tour(&self.label, m).map_err(|e| fail(e.to_string()))? {
                TourDecode::Feasible(t) if &t == tour => {}
                TourDecode::Feasible(t) => {
                    return Err(fail(format!("label decodes to {t}, tour is {tour}")))
                }
                TourDecode::Infeasible(r) => return Err(fail(format!("label is {r}"))),
            }
        }
        Ok(())
    }
}

/// Stored with every tsp dataset: `a = a_factor * max distance` per
/// instance, `b` fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyRecord {
    pub a_factor: f64,
    pub b: f64,
    pub a_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub kind: DatasetKind,
    pub m: Option<usize>,
    pub n: usize,
    pub counts: SplitCounts,
    pub seed: u64,
    pub prng: String,
    pub penalty: Option<PenaltyRecord>,
    pub value_range: Option<ValueRange>,
    pub normalization: ValueRange,
    /// Unix seconds; only present when generation was asked to stamp it,
    /// since it would otherwise break byte-identical regeneration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_unix: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub val: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
            Split::Val => &self.val,
        }
    }

    /// Sample coefficients mapped into `[0, 1]` by the manifest bounds.
    pub fn normalized(&self, sample: &Sample) -> Result<Vec<f64>> {
        sample.qubo()?.normalize(self.manifest.normalization)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
        for split in Split::ALL {
            let path = dir.join(split.file_name());
            let file = fs::File::create(&path).map_err(|e| CoreError::io(&path, e))?;
            let mut w = BufWriter::new(file);
            for s in self.split(split) {
                let line =
                    serde_json::to_string(s).map_err(|e| CoreError::Format(e.to_string()))?;
                writeln!(w, "{line}").map_err(|e| CoreError::io(&path, e))?;
            }
            w.flush().map_err(|e| CoreError::io(&path, e))?;
        }
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&self.manifest)
            .map_err(|e| CoreError::Format(e.to_string()))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| CoreError::io(&path, e))
    }
}

fn tsp_sample(m: usize, id: u64, seed: u64) -> Result<(Sample, f64)> {
    let sub = split_mix(seed, id);
    let t = TspInstance::random(m, sub);
    let (q, tour, res) = solve::encode_and_label(&t)?;
    let a = crate::tsp::PenaltyConfig::default_for(&t).a;
    Ok((
        Sample {
            id,
            kind: DatasetKind::Tsp,
            n: q.n(),
            q: q.coeffs().to_vec(),
            offset: q.offset(),
            label: res.x,
            label_energy: res.energy,
            tour: Some(tour),
            m: Some(m),
            method: res.method,
        },
        a,
    ))
}

fn random_sample(n: usize, range: ValueRange, id: u64, seed: u64) -> Result<Sample> {
    let sub = split_mix(seed, id);
    let q = random_qubo(n, range, sub);
    let res = solve::label(&q, sub)?;
    Ok(Sample {
        id,
        kind: DatasetKind::Random,
        n,
        q: q.coeffs().to_vec(),
        offset: 0.0,
        label: res.x,
        label_energy: res.energy,
        tour: None,
        m: None,
        method: res.method,
    })
}

fn split_ids(counts: SplitCounts, split: Split) -> std::ops::Range<u64> {
    let first = counts.first_id(split);
    first..first + counts.get(split) as u64
}

/// TSP instances on `m` cities, encoded with the default penalty rule and
/// labeled exactly.
pub fn build_tsp_dataset(m: usize, counts: SplitCounts, seed: u64) -> Result<Dataset> {
    if m == 0 {
        return Err(CoreError::invalid("need at least one city"));
    }
    if m > MAX_BRUTE_FORCE_CITIES {
        return Err(CoreError::Capacity(format!(
            "exact labels need m <= {MAX_BRUTE_FORCE_CITIES}, got {m}"
        )));
    }
    let mut a_max: f64 = 0.0;
    let mut splits = Vec::with_capacity(3);
    for split in Split::ALL {
        let mut samples = Vec::with_capacity(counts.get(split));
        for id in split_ids(counts, split) {
            let (s, a) = tsp_sample(m, id, seed)?;
            a_max = a_max.max(a);
            samples.push(s);
        }
        splits.push(samples);
    }
    let val = splits.pop().expect("three splits");
    let test = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    Ok(Dataset {
        manifest: DatasetManifest {
            format_version: DATASET_FORMAT_VERSION,
            kind: DatasetKind::Tsp,
            m: Some(m),
            n: m * m,
            counts,
            seed,
            prng: rng::PRNG_NAME.to_string(),
            penalty: Some(PenaltyRecord {
                a_factor: 2.0,
                b: 1.0,
                a_max,
            }),
            value_range: None,
            normalization: ValueRange::new(-2.0 * a_max, 2.0 * a_max)?,
            created_unix: None,
        },
        train,
        test,
        val,
    })
}

/// Random QUBOs with coefficients uniform over `[-10000, 10000]`.
pub fn build_random_dataset(n: usize, counts: SplitCounts, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(CoreError::invalid("need at least one variable"));
    }
    let range = ValueRange::random_qubo_default();
    let build = |split| {
        split_ids(counts, split)
            .map(|id| random_sample(n, range, id, seed))
            .collect::<Result<Vec<_>>>()
    };
    Ok(Dataset {
        manifest: DatasetManifest {
            format_version: DATASET_FORMAT_VERSION,
            kind: DatasetKind::Random,
            m: None,
            n,
            counts,
            seed,
            prng: rng::PRNG_NAME.to_string(),
            penalty: None,
            value_range: Some(range),
            normalization: range,
            created_unix: None,
        },
        train: build(Split::Train)?,
        test: build(Split::Test)?,
        val: build(Split::Val)?,
    })
}

pub fn generate_tsp_dataset(
    m: usize,
    counts: SplitCounts,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    let ds = build_tsp_dataset(m, counts, seed)?;
    ds.write(out_dir)?;
    Ok(ds.manifest)
}

pub fn generate_random_dataset(
    n: usize,
    counts: SplitCounts,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    let ds = build_random_dataset(n, counts, seed)?;
    ds.write(out_dir)?;
    Ok(ds.manifest)
}

fn read_split(dir: &Path, split: Split) -> Result<Vec<Sample>> {
    let path = dir.join(split.file_name());
    let file = fs::File::open(&path).map_err(|e| CoreError::io(&path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CoreError::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let sample = serde_json::from_str(&line)
            .map_err(|e| CoreError::Format(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        out.push(sample);
    }
    Ok(out)
}

/// Reads and validates a dataset directory. Every sample is checked for
/// shape, triangularity, label energy, normalization bounds and (tsp) tour
/// consistency; sample ids must be unique across splits.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CoreError::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| CoreError::Format(format!("{}: {e}", path.display())))?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(CoreError::Format(format!(
            "unsupported dataset format version {}",
            manifest.format_version
        )));
    }
    let ds = Dataset {
        train: read_split(dir, Split::Train)?,
        test: read_split(dir, Split::Test)?,
        val: read_split(dir, Split::Val)?,
        manifest,
    };
    let mut seen = std::collections::HashSet::new();
    for split in Split::ALL {
        let samples = ds.split(split);
        if samples.len() != ds.manifest.counts.get(split) {
            return Err(CoreError::Format(format!(
                "{} has {} samples, manifest says {}",
                split.file_name(),
                samples.len(),
                ds.manifest.counts.get(split)
            )));
        }
        for s in samples {
            if !seen.insert(s.id) {
                return Err(CoreError::Validation {
                    id: s.id,
                    reason: "duplicate sample id".into(),
                });
            }
            s.validate(&ds.manifest)?;
        }
    }
    Ok(ds)
}

/// Index batches for one epoch: a shuffle keyed by `(epoch_seed, epoch)`,
/// cut into `batch_size` chunks with the short tail kept.
pub fn batches(
    len: usize,
    batch_size: usize,
    epoch_seed: u64,
    epoch: u64,
) -> Result<Vec<Vec<usize>>> {
    if len == 0 {
        return Err(CoreError::invalid("cannot batch an empty split"));
    }
    if batch_size == 0 {
        return Err(CoreError::invalid("batch size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng::stream(epoch_seed, epoch));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}
