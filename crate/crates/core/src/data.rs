//! Labeled multichannel datasets: synthetic generators, the `#medts v1`
//! text format, and subject-level splitting.
//!
//! File layout (one record per sample, `T` value lines per record):
//!
//! ```text
//! #medts v1 T=<T> C=<C> K=<K>
//! <subject_id>,<label>
//! <x[0,0]>,<x[0,1]>,...,<x[0,C-1]>
//! ...
//! <x[T-1,0]>,...,<x[T-1,C-1]>
//! ```
//!
//! Values are written in Rust's shortest round-trip float notation, so a
//! save/load cycle reproduces every bit.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::SeedRng;

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    /// `T×C` values.
    pub x: Tensor,
    pub label: usize,
    pub subject: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub len: usize,
    pub channels: usize,
    pub classes: usize,
    pub samples: Vec<LabeledSample>,
}

impl Dataset {
    pub fn new(len: usize, channels: usize, classes: usize, samples: Vec<LabeledSample>) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if s.x.shape() != [len, channels] {
                return Err(Error::Data(format!(
                    "sample {i} has shape {:?}, expected [{len}, {channels}]",
                    s.x.shape()
                )));
            }
            if s.label >= classes {
                return Err(Error::Label {
                    label: s.label,
                    classes,
                });
            }
            if !s.x.is_finite() {
                return Err(Error::Data(format!("sample {i} has non-finite values")));
            }
        }
        Ok(Self {
            len,
            channels,
            classes,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn subjects(&self) -> BTreeSet<u64> {
        self.samples.iter().map(|s| s.subject).collect()
    }

    pub fn inputs(&self) -> Vec<&Tensor> {
        self.samples.iter().map(|s| &s.x).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    fn subset(&self, keep: impl Fn(&LabeledSample) -> bool) -> Dataset {
        Dataset {
            len: self.len,
            channels: self.channels,
            classes: self.classes,
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("#medts v1 T={} C={} K={}\n", self.len, self.channels, self.classes);
        for s in &self.samples {
            let _ = writeln!(out, "{},{}", s.subject, s.label);
            for row in s.x.data().chunks(self.channels) {
                let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
                out.push_str(&line.join(","));
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Dataset> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty file".into(),
        })?;
        let (len, channels, classes) = parse_header(header)?;
        let mut samples = Vec::new();
        while let Some((ln, line)) = lines.next() {
            if line.trim().is_empty() {
                continue;
            }
            let (subject, label) = line.split_once(',').ok_or_else(|| Error::Parse {
                line: ln,
                msg: format!("expected 'subject_id,label', got '{line}'"),
            })?;
            let subject: u64 = subject.trim().parse().map_err(|e| Error::Parse {
                line: ln,
                msg: format!("bad subject id: {e}"),
            })?;
            let label: usize = label.trim().parse().map_err(|e| Error::Parse {
                line: ln,
                msg: format!("bad label: {e}"),
            })?;
            if label >= classes {
                return Err(Error::Parse {
                    line: ln,
                    msg: format!("label {label} out of range for K={classes}"),
                });
            }
            let mut data = Vec::with_capacity(len * channels);
            for _ in 0..len {
                let (ln, row) = lines.next().ok_or(Error::Parse {
                    line: ln,
                    msg: "truncated record".into(),
                })?;
                let before = data.len();
                for field in row.split(',') {
                    let v: f64 = field.trim().parse().map_err(|e| Error::Parse {
                        line: ln,
                        msg: format!("bad value '{field}': {e}"),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Parse {
                            line: ln,
                            msg: "non-finite value".into(),
                        });
                    }
                    data.push(v);
                }
                if data.len() - before != channels {
                    return Err(Error::Parse {
                        line: ln,
                        msg: format!("expected {channels} values, got {}", data.len() - before),
                    });
                }
            }
            samples.push(LabeledSample {
                x: Tensor::new(vec![len, channels], data)?,
                label,
                subject,
            });
        }
        Dataset::new(len, channels, classes, samples)
    }
}

fn parse_header(header: &str) -> Result<(usize, usize, usize)> {
    let bad = |msg: String| Error::Parse { line: 1, msg };
    let mut parts = header.split_whitespace();
    if parts.next() != Some("#medts") || parts.next() != Some("v1") {
        return Err(bad(format!("expected '#medts v1' header, got '{header}'")));
    }
    let mut field = |key: &str| -> Result<usize> {
        let tok = parts.next().ok_or_else(|| bad(format!("missing {key}=")))?;
        let v = tok
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix('='))
            .ok_or_else(|| bad(format!("expected {key}=<n>, got '{tok}'")))?;
        let n: usize = v.parse().map_err(|e| bad(format!("bad {key}: {e}")))?;
        if n == 0 {
            return Err(bad(format!("{key} must be positive")));
        }
        Ok(n)
    };
    Ok((field("T")?, field("C")?, field("K")?))
}

pub fn save_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    std::fs::write(path, dataset.to_text()).map_err(Error::file(path))?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::from_text(&std::fs::read_to_string(path).map_err(Error::file(path))?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorMode {
    Centralized,
    Decentralized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub mode: GeneratorMode,
    pub subjects: usize,
    pub trials_per_subject: usize,
    pub len: usize,
    pub channels: usize,
    pub classes: usize,
    /// Share of each channel driven by the latent core, in `[0, 1]`.
    pub coupling: f64,
    /// Standard deviation of the per-channel white noise.
    pub noise: f64,
    /// Class-distinguishing frequencies in cycles per step.
    pub freqs: Vec<f64>,
    pub seed: u64,
}

impl GeneratorSpec {
    /// The two-class centralized workload: `f = (0.05, 0.15)`, `a = 0.9`,
    /// `σ = 0.3`, `C = 8`, `T = 128`, 60 subjects.
    pub fn centralized_two_class(seed: u64) -> Self {
        Self {
            mode: GeneratorMode::Centralized,
            subjects: 60,
            trials_per_subject: 6,
            len: 128,
            channels: 8,
            classes: 2,
            coupling: 0.9,
            noise: 0.3,
            freqs: vec![0.05, 0.15],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.subjects == 0 || self.trials_per_subject == 0 {
            return bad("subjects and trials_per_subject must be positive".into());
        }
        if self.len < 2 || self.channels == 0 || self.classes < 2 {
            return bad(format!(
                "need T ≥ 2, C ≥ 1, K ≥ 2; got T={}, C={}, K={}",
                self.len, self.channels, self.classes
            ));
        }
        if self.freqs.len() != self.classes {
            return bad(format!("{} frequencies for {} classes", self.freqs.len(), self.classes));
        }
        if self.freqs.iter().any(|&f| !(f > 0.0 && f < 0.5)) {
            return bad("frequencies must lie in (0, 0.5) cycles/step".into());
        }
        for (i, a) in self.freqs.iter().enumerate() {
            if self.freqs[..i].contains(a) {
                return bad("frequencies must be distinct across classes".into());
            }
        }
        if !(0.0..=1.0).contains(&self.coupling) {
            return bad(format!("coupling must be in [0,1], got {}", self.coupling));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be non-negative, got {}", self.noise));
        }
        Ok(())
    }
}

/// Rescales every channel to zero mean and unit variance; flat channels
/// are only centered.
pub fn standardize_channels(x: &mut Tensor) {
    let (t, c) = (x.rows(), x.cols());
    for j in 0..c {
        let mean = (0..t).map(|i| x.at(i, j)).sum::<f64>() / t as f64;
        let var = (0..t).map(|i| (x.at(i, j) - mean).powi(2)).sum::<f64>() / t as f64;
        let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
        for i in 0..t {
            let v = &mut x.data_mut()[i * c + j];
            *v = (*v - mean) * scale;
        }
    }
}

fn centralized_trial(spec: &GeneratorSpec, rng: &mut SeedRng, amp: f64, gains: &[f64], class: usize) -> Tensor {
    let (t, c) = (spec.len, spec.channels);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let f = spec.freqs[class];
    let noise = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("valid sd");
    let a = spec.coupling;
    let mut data = Vec::with_capacity(t * c);
    for step in 0..t {
        let z = amp * (std::f64::consts::TAU * f * step as f64 + phase).sin();
        for &g in gains {
            let eps = if spec.noise > 0.0 { noise.sample(rng) } else { 0.0 };
            data.push(a * g * z + (1.0 - a) * eps);
        }
    }
    Tensor::new(vec![t, c], data).expect("generator shape")
}

fn decentralized_trial(spec: &GeneratorSpec, rng: &mut SeedRng, class: usize) -> Tensor {
    let (t, c) = (spec.len, spec.channels);
    // AR(1) coefficient tied to the class frequency: low f → smooth, high f → rough.
    let rho = (std::f64::consts::TAU * spec.freqs[class]).cos();
    let innov = Normal::new(0.0, 1.0).expect("unit normal");
    let burn_in = 50;
    let mut state: Vec<f64> = (0..c).map(|_| innov.sample(rng)).collect();
    let mut data = Vec::with_capacity(t * c);
    for step in 0..burn_in + t {
        for s in state.iter_mut() {
            *s = rho * *s + innov.sample(rng);
        }
        if step >= burn_in {
            data.extend_from_slice(&state);
        }
    }
    Tensor::new(vec![t, c], data).expect("generator shape")
}

/// Synthetic dataset, deterministic per `spec.seed`. Each subject draws from
/// its own rng stream; trial `r` of a subject has class `r mod K`.
pub fn generate(spec: &GeneratorSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut samples = Vec::with_capacity(spec.subjects * spec.trials_per_subject);
    for subject in 0..spec.subjects {
        let mut rng = SeedRng::seed_from_u64(spec.seed);
        rng.set_stream(subject as u64);
        let amp = rng.gen_range(0.5..1.5);
        let gains: Vec<f64> = (0..spec.channels)
            .map(|_| {
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                sign * rng.gen_range(0.5..1.5)
            })
            .collect();
        for trial in 0..spec.trials_per_subject {
            let label = trial % spec.classes;
            let mut x = match spec.mode {
                GeneratorMode::Centralized => centralized_trial(spec, &mut rng, amp, &gains, label),
                GeneratorMode::Decentralized => decentralized_trial(spec, &mut rng, label),
            };
            standardize_channels(&mut x);
            samples.push(LabeledSample {
                x,
                label,
                subject: subject as u64,
            });
        }
    }
    Dataset::new(spec.len, spec.channels, spec.classes, samples)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn standard(seed: u64) -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let f = [self.train, self.val, self.test];
        if f.iter().any(|&v| !(v > 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must be positive and sum to 1, got {f:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

fn shuffled_subjects(dataset: &Dataset, seed: u64) -> Vec<u64> {
    let mut subjects: Vec<u64> = dataset.subjects().into_iter().collect();
    subjects.shuffle(&mut SeedRng::seed_from_u64(seed));
    subjects
}

/// Partitions subjects (not samples) into train/val/test. Validation and
/// test get `floor(fraction · n)` subjects (at least one); train takes the rest.
pub fn split_by_subject(dataset: &Dataset, spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    let subjects = shuffled_subjects(dataset, spec.seed);
    let n = subjects.len();
    if n < 3 {
        return Err(Error::Data(format!("need at least 3 subjects to split, got {n}")));
    }
    let take = |f: f64| ((f * n as f64 + 1e-9).floor() as usize).max(1);
    let n_val = take(spec.val);
    let n_test = take(spec.test);
    if n_val + n_test >= n {
        return Err(Error::Data(format!("{n} subjects leave none for training")));
    }
    let val: BTreeSet<u64> = subjects[..n_val].iter().copied().collect();
    let test: BTreeSet<u64> = subjects[n_val..n_val + n_test].iter().copied().collect();
    Ok(Splits {
        train: dataset.subset(|s| !val.contains(&s.subject) && !test.contains(&s.subject)),
        val: dataset.subset(|s| val.contains(&s.subject)),
        test: dataset.subset(|s| test.contains(&s.subject)),
    })
}

/// `k` (train, test) pairs; each subject lands in exactly one test fold.
pub fn kfold_by_subject(dataset: &Dataset, k: usize, seed: u64) -> Result<Vec<(Dataset, Dataset)>> {
    let subjects = shuffled_subjects(dataset, seed);
    if k < 2 || k > subjects.len() {
        return Err(Error::Data(format!(
            "k must be in [2, {}] for {} subjects, got {k}",
            subjects.len(),
            subjects.len()
        )));
    }
    Ok((0..k)
        .map(|fold| {
            let held: BTreeSet<u64> = subjects.iter().skip(fold).step_by(k).copied().collect();
            (
                dataset.subset(|s| !held.contains(&s.subject)),
                dataset.subset(|s| held.contains(&s.subject)),
            )
        })
        .collect())
}
