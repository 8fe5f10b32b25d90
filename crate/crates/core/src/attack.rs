//! Attack lab: quantifies how well an adversary can reconstruct original
//! columns from perturbed data.
//!
//! Effectiveness is measured with NR_MSE, the ratio between the estimation
//! uncertainty range (2 RMSE) and the domain length (4 sigma after
//! normalization). A dataset counts as resilient to an attack when every
//! dimension's NR_MSE stays at or above 20%.
//!
//! PCA-style attacks are not implemented: the projection does not
//! preserve the covariance matrix, so there is no principal structure for
//! them to latch onto.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, NoiseSpec};
use crate::perturb::RaspKey;

/// NR_MSE at or above this makes a dataset resilient to the attack.
pub const RESILIENCE_THRESHOLD: f64 = 0.2;

/// Values above 100% carry no extra meaning; reports cap there.
pub const NR_MSE_CAP: f64 = 1.0;

/// Per-attack outcome: one NR_MSE per original dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackReport {
    pub attack: String,
    pub per_dimension: Vec<f64>,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    pub resilient: bool,
    pub whitening_failed: bool,
}

impl AttackReport {
    pub fn from_dimensions(attack: impl Into<String>, per_dimension: Vec<f64>) -> Self {
        let min = per_dimension.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = per_dimension.iter().cloned().fold(0.0f64, f64::max);
        let mean = per_dimension.iter().sum::<f64>() / per_dimension.len().max(1) as f64;
        AttackReport {
            attack: attack.into(),
            resilient: min >= RESILIENCE_THRESHOLD,
            per_dimension,
            min,
            mean,
            max,
            whitening_failed: false,
        }
    }

    /// The convention for attacks that could not run at all: scored as if
    /// they learned nothing.
    pub fn failed(attack: impl Into<String>, dims: usize) -> Self {
        let mut report = AttackReport::from_dimensions(attack, vec![NR_MSE_CAP; dims]);
        report.whitening_failed = true;
        report
    }
}

fn standardize(series: &[f64], dim: usize) -> Result<Vec<f64>> {
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n as f64;
    let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    // Constant columns accumulate rounding crumbs; compare against a
    // mean-relative floor rather than exact zero.
    if var <= (1e-12 * (1.0 + mean.abs())).powi(2) {
        return Err(Error::ZeroVariance(dim));
    }
    let sd = var.sqrt();
    Ok(series.iter().map(|v| (v - mean) / sd).collect())
}

/// NR_MSE between one original column and one estimated column. Both are
/// z-score normalized first, making the domain length 4 sigma = 4, so the
/// measure reduces to RMSE / 2, capped at 100%.
pub fn nr_mse(original: &[f64], estimate: &[f64]) -> Result<f64> {
    if original.len() != estimate.len() {
        return Err(Error::DimensionMismatch(format!(
            "series lengths differ: {} vs {}",
            original.len(),
            estimate.len()
        )));
    }
    let x = standardize(original, 0)?;
    let e = standardize(estimate, 0)?;
    let mse = x
        .iter()
        .zip(&e)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.len() as f64;
    Ok((mse.sqrt() / 2.0).min(NR_MSE_CAP))
}

/// Attacker-side model of one dimension's value distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum DistributionSpec {
    StdNormal,
    Uniform { lo: f64, hi: f64 },
    /// Resample from an observed sample (an empirical histogram in the
    /// limit).
    Empirical(Vec<f64>),
    /// Degenerate distribution; scoring it fails with a zero-variance
    /// error by construction.
    PointMass(f64),
}

impl DistributionSpec {
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            DistributionSpec::StdNormal => rng.sample(StandardNormal),
            DistributionSpec::Uniform { lo, hi } => lo + (hi - lo) * rng.gen::<f64>(),
            DistributionSpec::Empirical(sample) => sample[rng.gen_range(0..sample.len())],
            DistributionSpec::PointMass(v) => *v,
        }
    }
}

/// The level-2 baseline: the attacker knows each dimension's distribution
/// and simply draws an independent sample as the estimate.
pub fn worst_case_estimator<R: Rng>(
    distributions: &[DistributionSpec],
    n: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| distributions.iter().map(|d| d.sample(rng)).collect())
        .collect()
}

/// Scores a full estimate matrix column by column.
pub fn score_estimate(originals: &[Vec<f64>], estimate: &[Vec<f64>]) -> Result<AttackReport> {
    if originals.len() != estimate.len() {
        return Err(Error::DimensionMismatch(format!(
            "row counts differ: {} vs {}",
            originals.len(),
            estimate.len()
        )));
    }
    let d = originals[0].len();
    let mut per_dim = Vec::with_capacity(d);
    for j in 0..d {
        let x: Vec<f64> = originals.iter().map(|r| r[j]).collect();
        let e: Vec<f64> = estimate.iter().map(|r| r[j]).collect();
        per_dim.push(nr_mse(&x, &e)?);
    }
    Ok(AttackReport::from_dimensions("worst-case-estimator", per_dim))
}

/// Outcome of the white-box audit of the naive-estimation argument.
#[derive(Debug, Clone)]
pub struct NaiveAuditReport {
    /// Largest deviation of `(row d+1 of A^-1) . y` from 1 over all
    /// records.
    pub homogeneous_max_dev: f64,
    /// Candidate inverses generated.
    pub candidates: usize,
    /// Candidates whose reconstruction keeps the homogeneous row at all
    /// ones.
    pub homogeneous_preserved: usize,
    /// Candidates whose minimum-dimension NR_MSE stays resilient.
    pub resilient_candidates: usize,
    /// Smallest minimum-dimension NR_MSE seen across candidates.
    pub min_candidate_nrmse: f64,
}

/// White-box audit (the proxy holds the key): verifies that the perturbed
/// data admits a huge family of equally-valid candidate reconstructions.
/// Keeping the homogeneous row of `A^-1` and randomizing every other row
/// produces candidate datasets that are structurally indistinguishable
/// from the truth yet far from it.
pub fn naive_candidate_audit<R: Rng>(
    key: &RaspKey,
    perturbed: &[Vec<f64>],
    originals: &[Vec<f64>],
    candidates: usize,
    rng: &mut R,
) -> Result<NaiveAuditReport> {
    if perturbed.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = key.dims();
    let ext = d + 2;
    let homog_row = key.matrix_inv().row(d).to_vec();
    let mut homogeneous_max_dev: f64 = 0.0;
    for y in perturbed {
        let dot: f64 = homog_row.iter().zip(y).map(|(a, b)| a * b).sum();
        homogeneous_max_dev = homogeneous_max_dev.max((dot - 1.0).abs());
    }

    let mut homogeneous_preserved = 0usize;
    let mut resilient_candidates = 0usize;
    let mut min_candidate_nrmse = f64::INFINITY;
    let mut produced = 0usize;
    while produced < candidates {
        // Candidate inverse: keep the homogeneous row, randomize the rest.
        let mut b = Mat::zeros(ext, ext);
        for r in 0..ext {
            for c in 0..ext {
                let v = if r == d {
                    homog_row[c]
                } else {
                    rng.sample::<f64, _>(StandardNormal)
                };
                b.set(r, c, v);
            }
        }
        if b.inverse().is_err() {
            continue; // singular draw, measure zero
        }
        produced += 1;

        let reconstructed: Vec<Vec<f64>> = perturbed.iter().map(|y| b.mul_vec(y)).collect();
        let homog_ok = reconstructed
            .iter()
            .all(|z| (z[d] - 1.0).abs() < 1e-9);
        if homog_ok {
            homogeneous_preserved += 1;
        }
        let estimate: Vec<Vec<f64>> = reconstructed
            .iter()
            .map(|z| z[..d].to_vec())
            .collect();
        let report = score_estimate(originals, &estimate)?;
        min_candidate_nrmse = min_candidate_nrmse.min(report.min);
        if report.resilient {
            resilient_candidates += 1;
        }
    }

    Ok(NaiveAuditReport {
        homogeneous_max_dev,
        candidates: produced,
        homogeneous_preserved,
        resilient_candidates,
        min_candidate_nrmse,
    })
}

/// Fixed-point ICA configuration.
#[derive(Debug, Clone, Copy)]
pub struct IcaConfig {
    pub max_iter: usize,
    pub tol: f64,
    pub restarts: usize,
}

impl Default for IcaConfig {
    fn default() -> Self {
        IcaConfig {
            max_iter: 200,
            tol: 1e-4,
            restarts: 3,
        }
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// (eigenvalues, eigenvectors as columns), unsorted.
fn jacobi_eigen(m: &Mat) -> (Vec<f64>, Mat) {
    let n = m.rows();
    let mut a = m.clone();
    let mut v = Mat::identity(n);
    for _sweep in 0..100 {
        let mut off: f64 = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a.get(p, q).powi(2);
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = 0.5 * (aqq - app) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..n {
                    let aip = a.get(i, p);
                    let aiq = a.get(i, q);
                    a.set(i, p, c * aip - s * aiq);
                    a.set(i, q, s * aip + c * aiq);
                }
                for i in 0..n {
                    let api = a.get(p, i);
                    let aqi = a.get(q, i);
                    a.set(p, i, c * api - s * aqi);
                    a.set(q, i, s * api + c * aqi);
                }
                for i in 0..n {
                    let vip = v.get(i, p);
                    let viq = v.get(i, q);
                    v.set(i, p, c * vip - s * viq);
                    v.set(i, q, s * vip + c * viq);
                }
            }
        }
    }
    let eigvals = (0..n).map(|i| a.get(i, i)).collect();
    (eigvals, v)
}

/// Whitened data plus the rank kept.
struct Whitened {
    /// n x r, identity covariance.
    rows: Vec<Vec<f64>>,
    rank: usize,
}

/// Centers the columns and projects onto the unit-variance eigenbasis,
/// dropping near-zero directions (the homogeneous coordinate always
/// contributes one).
fn whiten(data: &[Vec<f64>]) -> Result<Whitened> {
    let n = data.len();
    let m = data[0].len();
    if n < m {
        return Err(Error::WhiteningFailure { rank: 0 });
    }
    let means: Vec<f64> = (0..m)
        .map(|j| data.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let mut cov = Mat::zeros(m, m);
    for row in data {
        for i in 0..m {
            let di = row[i] - means[i];
            for j in i..m {
                let v = cov.get(i, j) + di * (row[j] - means[j]);
                cov.set(i, j, v);
            }
        }
    }
    for i in 0..m {
        for j in i..m {
            let v = cov.get(i, j) / n as f64;
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    let (eigvals, eigvecs) = jacobi_eigen(&cov);
    let max_eig = eigvals.iter().cloned().fold(0.0f64, f64::max);
    if max_eig <= 0.0 {
        return Err(Error::WhiteningFailure { rank: 0 });
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eigvals[b].total_cmp(&eigvals[a]));
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&i| eigvals[i] > max_eig * 1e-10)
        .collect();
    let rank = kept.len();
    if rank == 0 {
        return Err(Error::WhiteningFailure { rank });
    }
    let rows = data
        .iter()
        .map(|row| {
            kept.iter()
                .map(|&e| {
                    let mut acc = 0.0;
                    for j in 0..m {
                        acc += (row[j] - means[j]) * eigvecs.get(j, e);
                    }
                    acc / eigvals[e].sqrt()
                })
                .collect()
        })
        .collect();
    Ok(Whitened { rows, rank })
}

/// Deflationary fixed-point ICA with the tanh contrast. Returns the
/// recovered components as columns of an n x r matrix (each approximately
/// unit variance).
fn fast_ica_components<R: Rng>(
    whitened: &Whitened,
    cfg: &IcaConfig,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let n = whitened.rows.len();
    let r = whitened.rank;
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(r);
    for _comp in 0..r {
        let mut accepted: Option<Vec<f64>> = None;
        for _restart in 0..cfg.restarts.max(1) {
            let mut w: Vec<f64> = (0..r).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            orthonormalize(&mut w, &basis);
            let mut converged = false;
            for _iter in 0..cfg.max_iter {
                // w_new = E[x g(w.x)] - E[g'(w.x)] w
                let mut ex_g = vec![0.0; r];
                let mut mean_gp = 0.0;
                for row in &whitened.rows {
                    let u: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum();
                    let g = u.tanh();
                    let gp = 1.0 - g * g;
                    mean_gp += gp;
                    for (acc, x) in ex_g.iter_mut().zip(row) {
                        *acc += x * g;
                    }
                }
                mean_gp /= n as f64;
                let mut w_new: Vec<f64> = ex_g
                    .iter()
                    .zip(&w)
                    .map(|(eg, wi)| eg / n as f64 - mean_gp * wi)
                    .collect();
                orthonormalize(&mut w_new, &basis);
                let norm: f64 = w_new.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm < 1e-12 {
                    break; // degenerate direction, restart
                }
                let dot: f64 = w_new.iter().zip(&w).map(|(a, b)| a * b).sum();
                w = w_new;
                if (dot.abs() - 1.0).abs() < cfg.tol {
                    converged = true;
                    break;
                }
            }
            accepted = Some(w);
            if converged {
                break;
            }
        }
        basis.push(accepted.expect("at least one restart always runs"));
    }
    // Components are the projections onto the found directions.
    (0..n)
        .map(|i| {
            basis
                .iter()
                .map(|w| w.iter().zip(&whitened.rows[i]).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect()
}

fn orthonormalize(w: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let dot: f64 = w.iter().zip(b).map(|(a, c)| a * c).sum();
        for (wi, bi) in w.iter_mut().zip(b) {
            *wi -= dot * bi;
        }
    }
    let norm: f64 = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 1e-12 {
        for wi in w.iter_mut() {
            *wi /= norm;
        }
    }
}

/// Aligns recovered components to original dimensions by maximal absolute
/// correlation (the attacker-optimistic choice) and scores each dimension.
pub fn score_components(
    originals: &[Vec<f64>],
    components: &[Vec<f64>],
) -> Result<AttackReport> {
    let n = originals.len();
    let d = originals[0].len();
    let r = components[0].len();
    let mut per_dim = Vec::with_capacity(d);
    for j in 0..d {
        let col: Vec<f64> = originals.iter().map(|row| row[j]).collect();
        let x = standardize(&col, j)?;
        let mut best: Option<(f64, usize)> = None;
        for c in 0..r {
            let comp: Vec<f64> = components.iter().map(|row| row[c]).collect();
            let s = match standardize(&comp, c) {
                Ok(s) => s,
                Err(_) => continue, // dead component
            };
            let corr = x.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>() / n as f64;
            if best.is_none_or(|(b, _)| corr.abs() > b.abs()) {
                best = Some((corr, c));
            }
        }
        let value = match best {
            Some((corr, c)) => {
                let comp: Vec<f64> = components.iter().map(|row| row[c]).collect();
                let aligned: Vec<f64> = comp.iter().map(|v| v * corr.signum()).collect();
                nr_mse(&col, &aligned)?
            }
            None => NR_MSE_CAP,
        };
        per_dim.push(value);
    }
    Ok(AttackReport::from_dimensions("ica", per_dim))
}

/// The distributional attack: whiten the perturbed vectors, run
/// deflationary fixed-point ICA, align components to original dimensions,
/// and report per-dimension NR_MSE. The originals are used only for
/// scoring, mirroring an evaluation where ground truth is known.
pub fn ica_attack<R: Rng>(
    perturbed: &[Vec<f64>],
    originals: &[Vec<f64>],
    cfg: &IcaConfig,
    rng: &mut R,
) -> Result<AttackReport> {
    let d = originals[0].len();
    let whitened = match whiten(perturbed) {
        Ok(w) => w,
        Err(Error::WhiteningFailure { .. }) => return Ok(AttackReport::failed("ica", d)),
        Err(e) => return Err(e),
    };
    let components = fast_ica_components(&whitened, cfg, rng);
    let mut report = score_components(originals, &components)?;
    report.attack = "ica".into();
    Ok(report)
}

/// Extends each (normalized) record with the homogeneous 1 and fresh noise
/// and projects through a bare matrix, skipping the OPE layer. This is the
/// weakened scheme the distributional attack experiments compare against.
pub fn project_without_ope<R: Rng>(
    a: &Mat,
    data: &[Vec<f64>],
    noise: NoiseSpec,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    data.iter()
        .map(|row| {
            let mut z = Vec::with_capacity(row.len() + 2);
            z.extend_from_slice(row);
            z.push(1.0);
            z.push(noise.sample(rng));
            a.mul_vec(&z)
        })
        .collect()
}

/// One row of the progressive resilience series: the most resilient,
/// least resilient, and average minimum-dimension NR_MSE across the keys
/// drawn so far.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcaSeriesRow {
    pub round: usize,
    pub best: f64,
    pub worst: f64,
    pub average: f64,
}

/// Repeats the ICA attack over freshly drawn keys and tracks the running
/// best/worst/average of the per-key minimum-dimension NR_MSE.
pub fn ica_attack_series<R: Rng>(
    originals: &[Vec<f64>],
    with_ope: bool,
    keys: usize,
    params: &crate::perturb::KeyParams,
    cfg: &IcaConfig,
    rng: &mut R,
) -> Result<Vec<IcaSeriesRow>> {
    let d = originals[0].len();
    let mut rows = Vec::with_capacity(keys);
    let mut best = f64::NEG_INFINITY;
    let mut worst = f64::INFINITY;
    let mut sum = 0.0;
    for round in 1..=keys {
        let perturbed = if with_ope {
            let key = RaspKey::generate(originals, params, rng)?;
            originals
                .iter()
                .map(|x| {
                    let e = key.ope().encrypt_record(x);
                    let v = key.noise().sample(rng);
                    key.project_extended(&e, v)
                })
                .collect::<Vec<_>>()
        } else {
            let a = linalg::generate_invertible_matrix(d + 2, rng)?;
            project_without_ope(&a, originals, params.noise, rng)
        };
        let report = ica_attack(&perturbed, originals, cfg, rng)?;
        best = best.max(report.min);
        worst = worst.min(report.min);
        sum += report.min;
        rows.push(IcaSeriesRow {
            round,
            best,
            worst,
            average: sum / round as f64,
        });
    }
    Ok(rows)
}
