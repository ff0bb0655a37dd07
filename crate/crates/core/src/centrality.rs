//! Centralization measures for a multichannel series `J[S×T]`
//! (channels × timestamps) and the last-channel noise-robustness sweep.
//!
//! - SCI: top eigenvalue of the sample covariance over its trace. 1 for
//!   rank-one signals, `1/S` for isotropic ones.
//! - DIC: fit a first-order VAR `x_{t+1} ≈ A x_t`, take out-strengths
//!   `s_i = Σ_j |A_ji|` and report `(max_i s_i − s̄)/s̄`.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{Dataset, Splits};
use crate::error::{Error, Result};
use crate::layers::MixerKind;
use crate::tensor::Tensor;
use crate::SeedRng;

pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITERS: usize = 10_000;
pub const RIDGE: f64 = 1e-8;
pub const DEFAULT_BETAS: [f64; 9] = [0.0, 2.5, 5.0, 7.5, 10.0, 12.5, 15.0, 17.5, 20.0];

fn check_series(x: &Tensor, min_len: usize) -> Result<(usize, usize)> {
    if x.rank() != 2 {
        return Err(Error::Data(format!("series must be S×T, got {:?}", x.shape())));
    }
    let (s, t) = (x.rows(), x.cols());
    if t < min_len {
        return Err(Error::Data(format!("need at least {min_len} timestamps, got {t}")));
    }
    if !x.is_finite() {
        return Err(Error::Data("series contains non-finite values".into()));
    }
    Ok((s, t))
}

/// Sample covariance `(1/(T−1))·X̃X̃ᵀ` of the row-centered series.
pub fn covariance(x: &Tensor) -> Result<Tensor> {
    let (s, t) = check_series(x, 2)?;
    let centered: Vec<Vec<f64>> = (0..s)
        .map(|i| {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / t as f64;
            row.iter().map(|v| v - mean).collect()
        })
        .collect();
    let mut cov = Tensor::zeros(&[s, s]);
    for i in 0..s {
        for j in i..s {
            let v = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum::<f64>() / (t - 1) as f64;
            cov.data_mut()[i * s + j] = v;
            cov.data_mut()[j * s + i] = v;
        }
    }
    Ok(cov)
}

/// Largest eigenvalue of a symmetric positive semi-definite matrix.
pub fn power_iteration(m: &Tensor) -> f64 {
    let n = m.rows();
    let mut rng = SeedRng::seed_from_u64(0);
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    v.iter_mut().for_each(|a| *a /= norm);
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let w: Vec<f64> = (0..n).map(|i| m.row(i).iter().zip(&v).map(|(a, b)| a * b).sum()).collect();
        let next: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        let wn = w.iter().map(|a| a * a).sum::<f64>().sqrt();
        if wn == 0.0 {
            return 0.0;
        }
        v = w.into_iter().map(|a| a / wn).collect();
        let done = (next - lambda).abs() <= POWER_TOL * next.abs();
        lambda = next;
        if done {
            break;
        }
    }
    lambda
}

/// Spectral centralization index of `x[S×T]`.
pub fn sci(x: &Tensor) -> Result<f64> {
    let cov = covariance(x)?;
    let s = cov.rows();
    let trace: f64 = (0..s).map(|i| cov.at(i, i)).sum();
    if !(trace > 0.0) {
        return Err(Error::Data("SCI undefined: series has zero total variance".into()));
    }
    Ok(power_iteration(&cov) / trace)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VarModel {
    /// `S×S` transition matrix.
    pub transition: Vec<Vec<f64>>,
    pub out_strengths: Vec<f64>,
    pub mean_strength: f64,
}

/// Solves `M·X = B` for symmetric positive-definite `M` (Cholesky).
fn cholesky_solve(m: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = m.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = m[i][i] - s;
                if !(d > 0.0) {
                    return Err(Error::Numeric("normal equations are not positive definite".into()));
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (m[i][j] - s) / l[j][j];
            }
        }
    }
    let cols = b[0].len();
    let mut x = vec![vec![0.0; cols]; n];
    for c in 0..cols {
        let mut y = vec![0.0; n];
        for i in 0..n {
            y[i] = (b[i][c] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
        }
        for i in (0..n).rev() {
            x[i][c] = (y[i] - (i + 1..n).map(|k| l[k][i] * x[k][c]).sum::<f64>()) / l[i][i];
        }
    }
    Ok(x)
}

/// Least-squares VAR(1) fit `A = Y Zᵀ (Z Zᵀ + λI)⁻¹` with `Z = x[:, ..T−1]`,
/// `Y = x[:, 1..]`.
pub fn fit_var(x: &Tensor) -> Result<VarModel> {
    let s = x.rows();
    let (_, t) = check_series(x, s + 2)?;
    let z = |i: usize, k: usize| x.at(i, k);
    let y = |i: usize, k: usize| x.at(i, k + 1);
    let energy: f64 = (0..s).flat_map(|i| (0..t - 1).map(move |k| z(i, k) * z(i, k))).sum();
    if energy / ((s * (t - 1)) as f64) < 1e-12 {
        return Err(Error::Data("DIC undefined: lagged series has (near-)zero energy".into()));
    }
    let mut gram = vec![vec![0.0; s]; s];
    let mut cross = vec![vec![0.0; s]; s];
    for i in 0..s {
        for j in 0..s {
            gram[i][j] = (0..t - 1).map(|k| z(i, k) * z(j, k)).sum();
            // (Z Yᵀ)[i][j]
            cross[i][j] = (0..t - 1).map(|k| z(i, k) * y(j, k)).sum();
        }
        gram[i][i] += RIDGE;
    }
    // (ZZᵀ + λI) Aᵀ = Z Yᵀ
    let at = cholesky_solve(&gram, &cross)?;
    let transition: Vec<Vec<f64>> = (0..s).map(|i| (0..s).map(|j| at[j][i]).collect()).collect();
    let out_strengths: Vec<f64> = (0..s).map(|i| (0..s).map(|j| transition[j][i].abs()).sum()).collect();
    let mean_strength = out_strengths.iter().sum::<f64>() / s as f64;
    Ok(VarModel {
        transition,
        out_strengths,
        mean_strength,
    })
}

/// Dynamic influence centralization of `x[S×T]` with its fitted VAR model.
pub fn dic(x: &Tensor) -> Result<(f64, VarModel)> {
    let model = fit_var(x)?;
    if !(model.mean_strength > 0.0) {
        return Err(Error::Data("DIC undefined: all out-strengths are zero".into()));
    }
    let max = model.out_strengths.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(((max - model.mean_strength) / model.mean_strength, model))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CentralityReport {
    pub sci: f64,
    pub dic: f64,
    pub var_model: VarModel,
}

pub fn analyze_series(x: &Tensor) -> Result<CentralityReport> {
    let sci = sci(x)?;
    let (dic, var_model) = dic(x)?;
    Ok(CentralityReport { sci, dic, var_model })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetCentrality {
    pub samples: usize,
    pub sci_mean: f64,
    pub dic_mean: f64,
    /// Mean out-strength per channel across samples.
    pub out_strengths: Vec<f64>,
}

/// Per-sample SCI and DIC (each `T×C` sample read as `C×T`), averaged.
pub fn analyze_dataset(data: &Dataset) -> Result<DatasetCentrality> {
    if data.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    let reports: Vec<CentralityReport> = data
        .samples
        .iter()
        .map(|s| analyze_series(&s.x.transpose()))
        .collect::<Result<_>>()?;
    let n = reports.len() as f64;
    let mut out_strengths = vec![0.0; data.channels];
    for r in &reports {
        for (acc, v) in out_strengths.iter_mut().zip(&r.var_model.out_strengths) {
            *acc += v / n;
        }
    }
    Ok(DatasetCentrality {
        samples: reports.len(),
        sci_mean: reports.iter().map(|r| r.sci).sum::<f64>() / n,
        dic_mean: reports.iter().map(|r| r.dic).sum::<f64>() / n,
        out_strengths,
    })
}

/// Adds `beta · N(0, 1)` to the last channel of every sample.
pub fn perturb_last_channel(data: &Dataset, beta: f64, rng: &mut SeedRng) -> Dataset {
    let mut out = data.clone();
    let c = out.channels;
    for s in &mut out.samples {
        for row in s.x.data_mut().chunks_mut(c) {
            let n: f64 = rng.sample(StandardNormal);
            row[c - 1] += beta * n;
        }
    }
    out
}

/// Seed of the noise realization used at `beta`, shared by all mixers.
pub fn noise_seed(base: u64, beta: f64) -> u64 {
    base ^ beta.to_bits()
}

pub fn perturb_splits(splits: &Splits, beta: f64, base_seed: u64) -> Splits {
    let mut rng = SeedRng::seed_from_u64(noise_seed(base_seed, beta));
    Splits {
        train: perturb_last_channel(&splits.train, beta, &mut rng),
        val: perturb_last_channel(&splits.val, beta, &mut rng),
        test: perturb_last_channel(&splits.test, beta, &mut rng),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub beta: f64,
    pub mixer: MixerKind,
    pub f1: f64,
}

/// For every `beta`, perturbs the last channel of all splits with a noise
/// realization fixed by `(base_seed, beta)` and records the test macro-F1
/// returned by `train_fn` for each mixer.
pub fn noise_sweep<F>(
    splits: &Splits,
    betas: &[f64],
    mixers: &[MixerKind],
    base_seed: u64,
    train_fn: F,
) -> Result<Vec<SweepPoint>>
where
    F: Fn(MixerKind, &Splits) -> Result<f64> + Sync,
{
    if betas.is_empty() {
        return Err(Error::Config("empty beta grid".into()));
    }
    if betas[0] != 0.0 || betas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("betas must start at 0 and increase strictly".into()));
    }
    betas
        .par_iter()
        .map(|&beta| {
            let noisy = perturb_splits(splits, beta, base_seed);
            mixers
                .iter()
                .map(|&mixer| {
                    Ok(SweepPoint {
                        beta,
                        mixer,
                        f1: train_fn(mixer, &noisy)?,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().flatten().collect())
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("beta,mixer,f1\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.beta, p.mixer, p.f1));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    /// Cyclic Jacobi eigenvalue solver for symmetric matrices.
    fn jacobi_eigenvalues(m: &Tensor) -> Vec<f64> {
        let n = m.rows();
        let mut a: Vec<Vec<f64>> = (0..n).map(|i| m.row(i).to_vec()).collect();
        for _ in 0..100 {
            let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[i][j] * a[i][j])
                .sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        (0..n).map(|i| a[i][i]).collect()
    }

    fn random_series(s: usize, t: usize, seed: u64) -> Tensor {
        let mut rng = SeedRng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        let data = (0..s * t).map(|_| n.sample(&mut rng)).collect();
        Tensor::new(vec![s, t], data).unwrap()
    }

    #[test]
    fn rank_one_series_has_unit_sci() {
        let base: Vec<f64> = (0..100).map(|t| (0.3 * t as f64).sin() + 0.01 * t as f64).collect();
        let rows: Vec<Vec<f64>> = [1.0, -2.0, 0.5, 3.0].iter().map(|c| base.iter().map(|v| c * v).collect()).collect();
        assert!((sci(&Tensor::from_rows(&rows)).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn orthogonal_rows_have_sci_one_over_s() {
        // Zero-mean orthogonal cosines of equal energy: covariance ∝ I.
        let t = 64;
        let rows: Vec<Vec<f64>> = (1..=4)
            .map(|k| (0..t).map(|i| (std::f64::consts::TAU * k as f64 * i as f64 / t as f64).cos()).collect())
            .collect();
        assert!((sci(&Tensor::from_rows(&rows)).unwrap() - 0.25).abs() < 1e-6);
    }

    #[test]
    fn power_iteration_matches_jacobi() {
        for seed in 0..5 {
            let x = random_series(4, 200, seed);
            let cov = covariance(&x).unwrap();
            let eig = jacobi_eigenvalues(&cov);
            let top = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let trace: f64 = eig.iter().sum();
            assert!((sci(&x).unwrap() - top / trace).abs() < 1e-8);
        }
    }

    #[test]
    fn sci_scale_invariant_and_bounded() {
        let x = random_series(5, 80, 9);
        let base = sci(&x).unwrap();
        let scaled = Tensor::new(vec![5, 80], x.data().iter().map(|v| -3.7 * v).collect()).unwrap();
        assert!((sci(&scaled).unwrap() - base).abs() < 1e-9);
        assert!(base >= 0.2 - 1e-12 && base <= 1.0 + 1e-12);
    }

    #[test]
    fn zero_series_is_an_error() {
        assert!(sci(&Tensor::zeros(&[3, 10])).is_err());
        assert!(dic(&Tensor::zeros(&[3, 10])).is_err());
    }

    #[test]
    fn exact_var_recovery() {
        let a = [[0.5, 0.0], [0.8, 0.1]];
        let mut x = vec![[1.0, -1.0]];
        for _ in 1..12 {
            let p = *x.last().unwrap();
            x.push([a[0][0] * p[0] + a[0][1] * p[1], a[1][0] * p[0] + a[1][1] * p[1]]);
        }
        let rows = vec![x.iter().map(|v| v[0]).collect(), x.iter().map(|v| v[1]).collect()];
        let (value, model) = dic(&Tensor::from_rows(&rows)).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((model.transition[i][j] - a[i][j]).abs() < 1e-6, "{:?}", model.transition);
            }
        }
        // Out-strengths: column sums of |A| = (1.3, 0.1), mean 0.7.
        assert!((value - (1.3 - 0.7) / 0.7).abs() < 1e-5);
    }

    #[test]
    fn circulant_system_has_balanced_out_strength() {
        let s = 4;
        let mut rng = SeedRng::seed_from_u64(2);
        let n = Normal::new(0.0, 1.0).unwrap();
        let mut x = vec![vec![0.0; 2000]; s];
        for t in 1..2000 {
            for i in 0..s {
                x[i][t] = 0.4 * x[i][t - 1] + 0.3 * x[(i + 1) % s][t - 1] + n.sample(&mut rng);
            }
        }
        let (value, _) = dic(&Tensor::from_rows(&x)).unwrap();
        assert!(value < 0.1, "dic = {value}");
    }

    #[test]
    fn star_system_driver_dominates() {
        let s = 5;
        let mut rng = SeedRng::seed_from_u64(3);
        let n = Normal::new(0.0, 1.0).unwrap();
        let mut x = vec![vec![0.0; 1000]; s];
        for t in 0..1000 {
            x[0][t] = n.sample(&mut rng);
            for i in 1..s {
                let lag = if t > 0 { x[0][t - 1] } else { 0.0 };
                x[i][t] = 0.9 * lag + 0.1 * n.sample(&mut rng);
            }
        }
        let (value, model) = dic(&Tensor::from_rows(&x)).unwrap();
        let argmax = (0..s).max_by(|&a, &b| model.out_strengths[a].total_cmp(&model.out_strengths[b])).unwrap();
        assert_eq!(argmax, 0);
        assert!(value > 1.0, "dic = {value}");
    }

    #[test]
    fn dic_invariant_to_global_scale() {
        let x = random_series(3, 300, 4);
        let (base, _) = dic(&x).unwrap();
        let scaled = Tensor::new(vec![3, 300], x.data().iter().map(|v| 2.5 * v).collect()).unwrap();
        assert!((dic(&scaled).unwrap().0 - base).abs() < 1e-6);
    }

    #[test]
    fn too_short_for_var() {
        assert!(dic(&random_series(4, 5, 0)).is_err());
    }
}
