//! Token-mixer scaling benchmark: forward+backward wall time, MAC count and
//! peak live elements per `(mixer, S)`.

use std::time::Instant;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Accountant, Graph};
use crate::layers::{attention_macs, cotar_macs, CotarLayer, Mixer, MixerKind};
use crate::param::ParamStore;
use crate::tensor::Tensor;
use crate::SeedRng;

pub const DEFAULT_TOKENS: [usize; 5] = [128, 256, 512, 1024, 2048];
pub const DEFAULT_DIM: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub tokens: Vec<usize>,
    pub dim: usize,
    pub core_dim: usize,
    pub repeats: usize,
    pub warmup: usize,
    pub mixers: Vec<MixerKind>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            tokens: DEFAULT_TOKENS.to_vec(),
            dim: DEFAULT_DIM,
            core_dim: CotarLayer::default_core_dim(DEFAULT_DIM),
            repeats: 5,
            warmup: 1,
            mixers: vec![MixerKind::Cotar, MixerKind::Attention],
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() || self.tokens.contains(&0) {
            return Err(Error::Config("bench tokens must be a non-empty list of positive sizes".into()));
        }
        if self.dim == 0 || self.core_dim == 0 || self.repeats == 0 {
            return Err(Error::Config("bench dim, core_dim and repeats must be positive".into()));
        }
        if self.mixers.is_empty() || self.mixers.contains(&MixerKind::None) {
            return Err(Error::Config("bench mixers must be attention and/or cotar".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub mixer: MixerKind,
    pub tokens: usize,
    pub dim: usize,
    pub median_ms: f64,
    /// Closed-form forward multiply-accumulates.
    pub macs: u64,
    /// Forward-pass accountant snapshot.
    pub peak_live_elements: usize,
    pub largest_buffer: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Least-squares slope of log(time) against log(S), per mixer.
    pub slopes: Vec<(MixerKind, f64)>,
}

pub fn closed_form_macs(kind: MixerKind, s: usize, d: usize, dc: usize) -> u64 {
    match kind {
        MixerKind::Attention => attention_macs(s, d),
        MixerKind::Cotar => cotar_macs(s, d, dc),
        MixerKind::None => 0,
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Ordinary least-squares slope of `ln y` on `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// One mixer forward on `S×D` input: returns the forward accountant
/// snapshot, having also run the backward pass.
pub fn run_once(mixer: &Mixer, store: &ParamStore, input: &Tensor) -> Result<Accountant> {
    let mut g = Graph::with_params(store);
    let o = g.variable(input.clone());
    let out = mixer.forward(&mut g, o)?;
    let loss = g.sum_all(out);
    let stats = g.stats();
    g.backward(loss)?;
    Ok(stats)
}

pub fn bench_point(kind: MixerKind, s: usize, cfg: &BenchConfig) -> Result<BenchRow> {
    let mut rng = SeedRng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let mixer = Mixer::new(kind, &mut store, "mixer", cfg.dim, cfg.core_dim, &mut rng)?;
    let input = Tensor::uniform(&[s, cfg.dim], 1.0, &mut rng);
    for _ in 0..cfg.warmup {
        run_once(&mixer, &store, &input)?;
    }
    let mut times = Vec::with_capacity(cfg.repeats);
    let mut stats = Accountant::default();
    for _ in 0..cfg.repeats {
        let t = Instant::now();
        stats = run_once(&mixer, &store, &input)?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(BenchRow {
        mixer: kind,
        tokens: s,
        dim: cfg.dim,
        median_ms: median(&mut times),
        macs: closed_form_macs(kind, s, cfg.dim, cfg.core_dim),
        peak_live_elements: stats.peak_live_elements,
        largest_buffer: stats.largest_buffer,
    })
}

pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    for &kind in &cfg.mixers {
        let mut points = Vec::new();
        for &s in &cfg.tokens {
            let row = bench_point(kind, s, cfg)?;
            log::info!("bench {kind} S={s}: {:.3} ms", row.median_ms);
            points.push((s as f64, row.median_ms.max(1e-9)));
            rows.push(row);
        }
        let slope = if points.len() >= 2 { log_log_slope(&points) } else { f64::NAN };
        slopes.push((kind, slope));
    }
    Ok(BenchReport { rows, slopes })
}

pub const BENCH_HEADER: &str = "mixer,tokens,dim,median_ms,macs,peak_live_elements,largest_buffer";

pub fn bench_csv(report: &BenchReport) -> String {
    let mut out = format!("{BENCH_HEADER}\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.mixer, r.tokens, r.dim, r.median_ms, r.macs, r.peak_live_elements, r.largest_buffer
        ));
    }
    out
}
