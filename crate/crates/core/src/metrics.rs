//! Desk-scale evaluation: two-sample distances, mode coverage, shell
//! statistics, view-consistency residuals and a few classical tests.

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, Normal};

use crate::diffrep::{DiffRep, View};
use crate::error::{check_dim, Error, Result};

/// `n x d` samples with a free-form provenance tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleBatch {
    pub tag: String,
    pub samples: Vec<Vec<f64>>,
}

impl SampleBatch {
    pub fn new(tag: impl Into<String>, samples: Vec<Vec<f64>>) -> Result<Self> {
        let b = Self {
            tag: tag.into(),
            samples,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        for s in &self.samples {
            check_dim("sample batch row", d, s.len())?;
            if s.iter().any(|x| !x.is_finite()) {
                return Err(Error::Parameter(format!("batch `{}` has non-finite entries", self.tag)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_pair(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<()> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Parameter("MMD needs at least two samples per batch".into()));
    }
    let d = a[0].len();
    for x in a.iter().chain(b) {
        check_dim("MMD sample", d, x.len())?;
    }
    Ok(())
}

/// Median pairwise distance over the pooled samples.
pub fn median_bandwidth(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let pooled: Vec<&Vec<f64>> = a.iter().chain(b).collect();
    let mut d = Vec::with_capacity(pooled.len() * (pooled.len() - 1) / 2);
    for i in 0..pooled.len() {
        for j in 0..i {
            d.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(|x, y| x.total_cmp(y));
    let m = d[d.len() / 2];
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// Unbiased squared MMD with kernel `exp(-|x - y|^2 / (2 bw^2))`.
pub fn mmd(a: &[Vec<f64>], b: &[Vec<f64>], bandwidth: f64) -> Result<f64> {
    check_pair(a, b)?;
    if !(bandwidth > 0.0) {
        return Err(Error::Parameter(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let c = 1.0 / (2.0 * bandwidth * bandwidth);
    let kern = |x: &[f64], y: &[f64]| (-sq_dist(x, y) * c).exp();
    let within = |s: &[Vec<f64>]| {
        let mut t = 0.0;
        for i in 0..s.len() {
            for j in 0..i {
                t += kern(&s[i], &s[j]);
            }
        }
        2.0 * t / (s.len() * (s.len() - 1)) as f64
    };
    // cross terms summed in sorted order so that swapping the batches is bit-exact
    let mut cross: Vec<f64> = a.iter().flat_map(|x| b.iter().map(move |y| kern(x, y))).collect();
    cross.sort_by(|x, y| x.total_cmp(y));
    let cross_mean = cross.iter().sum::<f64>() / cross.len() as f64;
    Ok(within(a) + within(b) - 2.0 * cross_mean)
}

fn gram_matrix(pooled: &[&[f64]], bw: f64) -> Vec<Vec<f64>> {
    let n = pooled.len();
    let mut k = vec![vec![0.0; n]; n];
    let c = 1.0 / (2.0 * bw * bw);
    for i in 0..n {
        k[i][i] = 1.0;
        for j in 0..i {
            let v = (-sq_dist(pooled[i], pooled[j]) * c).exp();
            k[i][j] = v;
            k[j][i] = v;
        }
    }
    k
}

fn mmd_from_gram(k: &[Vec<f64>], ia: &[usize], ib: &[usize]) -> f64 {
    let within = |idx: &[usize]| {
        let mut s = 0.0;
        for (p, &i) in idx.iter().enumerate() {
            for &j in &idx[..p] {
                s += k[i][j];
            }
        }
        2.0 * s / (idx.len() * (idx.len() - 1)) as f64
    };
    let mut cross = 0.0;
    for &i in ia {
        for &j in ib {
            cross += k[i][j];
        }
    }
    within(ia) + within(ib) - 2.0 * cross / (ia.len() * ib.len()) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmdTest {
    pub statistic: f64,
    pub p_value: f64,
    pub bandwidth: f64,
    pub permutations: usize,
}

/// Permutation test of `H0: a and b come from the same distribution`.
/// `bandwidth = None` uses the median heuristic on the pooled samples.
pub fn mmd_permutation_test(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    bandwidth: Option<f64>,
    permutations: usize,
    rng: &mut dyn RngCore,
) -> Result<MmdTest> {
    check_pair(a, b)?;
    let bw = bandwidth.unwrap_or_else(|| median_bandwidth(a, b));
    let pooled: Vec<&[f64]> = a.iter().chain(b).map(Vec::as_slice).collect();
    let gram = gram_matrix(&pooled, bw);
    let mut idx: Vec<usize> = (0..pooled.len()).collect();
    let stat = mmd_from_gram(&gram, &idx[..a.len()], &idx[a.len()..]);
    let mut exceed = 0;
    for _ in 0..permutations {
        idx.shuffle(rng);
        if mmd_from_gram(&gram, &idx[..a.len()], &idx[a.len()..]) >= stat {
            exceed += 1;
        }
    }
    Ok(MmdTest {
        statistic: stat,
        p_value: (exceed + 1) as f64 / (permutations + 1) as f64,
        bandwidth: bw,
        permutations,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeCoverage {
    pub counts: Vec<usize>,
    pub unassigned: usize,
}

impl ModeCoverage {
    pub fn total(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.unassigned
    }
}

/// Quarter of the smallest distance between two means.
pub fn default_mode_radius(means: &[Vec<f64>]) -> Result<f64> {
    let mut best = f64::INFINITY;
    for i in 0..means.len() {
        for j in 0..i {
            best = best.min(sq_dist(&means[i], &means[j]).sqrt());
        }
    }
    if best.is_finite() && best > 0.0 {
        Ok(best / 4.0)
    } else {
        Err(Error::Parameter("need at least two distinct means".into()))
    }
}

/// Index of the nearest mean, if it lies within `radius`.
pub fn assign_mode(x: &[f64], means: &[Vec<f64>], radius: f64) -> Option<usize> {
    let (k, d2) = means
        .iter()
        .enumerate()
        .map(|(k, m)| (k, sq_dist(x, m)))
        .min_by(|a, b| a.1.total_cmp(&b.1))?;
    (d2.sqrt() < radius).then_some(k)
}

pub fn mode_coverage(batch: &[Vec<f64>], means: &[Vec<f64>], radius: f64) -> Result<ModeCoverage> {
    if batch.is_empty() {
        return Err(Error::Parameter("mode coverage of an empty batch".into()));
    }
    if means.is_empty() {
        return Err(Error::Parameter("mode coverage needs at least one mean".into()));
    }
    if !(radius > 0.0) {
        return Err(Error::Parameter(format!("radius must be positive, got {radius}")));
    }
    let d = means[0].len();
    for x in batch.iter().chain(means) {
        check_dim("mode coverage point", d, x.len())?;
    }
    let mut counts = vec![0; means.len()];
    let mut unassigned = 0;
    for x in batch {
        match assign_mode(x, means, radius) {
            Some(k) => counts[k] += 1,
            None => unassigned += 1,
        }
    }
    Ok(ModeCoverage { counts, unassigned })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShellStats {
    pub mean_norm: f64,
    /// Sample standard deviation (`n - 1` denominator).
    pub std_norm: f64,
}

pub fn shell_stats(batch: &[Vec<f64>]) -> Result<ShellStats> {
    if batch.len() < 2 {
        return Err(Error::Parameter("shell statistics need at least two samples".into()));
    }
    let norms: Vec<f64> = batch.iter().map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let n = norms.len() as f64;
    let mean = norms.iter().sum::<f64>() / n;
    let var = norms.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
    Ok(ShellStats {
        mean_norm: mean,
        std_norm: var.sqrt(),
    })
}

/// Values rendered (or sampled) for one view, keyed by lattice site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSample {
    pub sites: Vec<usize>,
    pub values: Vec<f64>,
}

/// Mean squared discrepancy over lattice sites shared by each pair of views.
/// Pairs without shared sites are skipped; errors if no pair overlaps.
pub fn view_consistency_residual_samples(views: &[ViewSample], pairs: &[(usize, usize)]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for &(i, j) in pairs {
        let (a, b) = match (views.get(i), views.get(j)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::Parameter(format!("view pair ({i}, {j}) out of range"))),
        };
        check_dim("view sample", a.sites.len(), a.values.len())?;
        check_dim("view sample", b.sites.len(), b.values.len())?;
        let lookup: std::collections::HashMap<usize, f64> =
            b.sites.iter().copied().zip(b.values.iter().copied()).collect();
        for (s, v) in a.sites.iter().zip(&a.values) {
            if let Some(w) = lookup.get(s) {
                total += (v - w) * (v - w);
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Parameter("no overlapping sites among the view pairs".into()));
    }
    Ok(total / count as f64)
}

/// The residual for a representation's own renders (zero up to round-off).
pub fn view_consistency_residual(rep: &dyn DiffRep, theta: &[f64], pairs: &[(View, View)]) -> Result<f64> {
    let mut samples = Vec::with_capacity(2 * pairs.len());
    let mut idx = Vec::with_capacity(pairs.len());
    for (a, b) in pairs {
        for v in [a, b] {
            samples.push(ViewSample {
                sites: rep.sites(v)?,
                values: rep.render(theta, v)?,
            });
        }
        idx.push((samples.len() - 2, samples.len() - 1));
    }
    view_consistency_residual_samples(&samples, &idx)
}

/// Mean Euclidean distance over all unordered pairs.
pub fn mean_pairwise_distance(batch: &[Vec<f64>]) -> Result<f64> {
    if batch.len() < 2 {
        return Err(Error::Parameter("pairwise distance needs at least two samples".into()));
    }
    let mut s = 0.0;
    for i in 0..batch.len() {
        for j in 0..i {
            s += sq_dist(&batch[i], &batch[j]).sqrt();
        }
    }
    Ok(s / (batch.len() * (batch.len() - 1) / 2) as f64)
}

/// Mean pairwise distance among samples sharing a group label, averaged over
/// all such pairs. Groups with fewer than two members contribute nothing.
pub fn within_group_pairwise_distance(batch: &[Vec<f64>], groups: &[usize]) -> Result<f64> {
    check_dim("group labels", batch.len(), groups.len())?;
    let mut s = 0.0;
    let mut n = 0usize;
    for i in 0..batch.len() {
        for j in 0..i {
            if groups[i] == groups[j] {
                s += sq_dist(&batch[i], &batch[j]).sqrt();
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Parameter("no group has two members".into()));
    }
    Ok(s / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsTest {
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample Kolmogorov-Smirnov test against `N(mean, sd^2)`, asymptotic p-value.
pub fn ks_test_normal(samples: &[f64], mean: f64, sd: f64) -> Result<KsTest> {
    if samples.is_empty() {
        return Err(Error::Parameter("KS test of an empty sample".into()));
    }
    let dist = Normal::new(mean, sd).map_err(|e| Error::Parameter(e.to_string()))?;
    let mut x = samples.to_vec();
    x.sort_by(|a, b| a.total_cmp(b));
    let n = x.len() as f64;
    let mut d: f64 = 0.0;
    for (i, v) in x.iter().enumerate() {
        let f = dist.cdf(*v);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    Ok(KsTest {
        statistic: d,
        p_value: kolmogorov_survival((n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d),
    })
}

/// `P(K > lambda)` for the Kolmogorov distribution.
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=200 {
        let k = k as f64;
        let term = 2.0 * (-1f64).powi(k as i32 - 1) * (-2.0 * k * k * lambda * lambda).exp();
        s += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    s.clamp(0.0, 1.0)
}

/// Central `level` band `[lo, hi]` for `Binomial(n, p)` counts.
pub fn binomial_band(n: u64, p: f64, level: f64) -> Result<(u64, u64)> {
    let b = Binomial::new(p, n).map_err(|e| Error::Parameter(e.to_string()))?;
    let tail = 0.5 * (1.0 - level);
    Ok((b.inverse_cdf(tail), b.inverse_cdf(1.0 - tail)))
}

/// One-sided sign test: `P(X >= wins)` for `X ~ Binomial(n, 1/2)`.
pub fn sign_test_p(wins: u64, n: u64) -> Result<f64> {
    let b = Binomial::new(0.5, n).map_err(|e| Error::Parameter(e.to_string()))?;
    if wins == 0 {
        return Ok(1.0);
    }
    Ok(b.sf(wins - 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffrep::LinearRep;
    use crate::sampler::{standard_normal_vec, trajectory_rng};

    fn normals(n: usize, d: usize, shift: f64, rng: &mut dyn RngCore) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| standard_normal_vec(d, rng).into_iter().map(|x| x + shift).collect())
            .collect()
    }

    #[test]
    fn mmd_is_symmetric() {
        let mut rng = trajectory_rng(1, 0);
        let a = normals(30, 2, 0.0, &mut rng);
        let b = normals(40, 2, 0.5, &mut rng);
        assert_eq!(mmd(&a, &b, 1.0).unwrap(), mmd(&b, &a, 1.0).unwrap());
        assert!(mmd(&a[..1], &b, 1.0).is_err());
    }

    #[test]
    fn coverage_counts() {
        let means = vec![vec![0.0], vec![10.0]];
        let c = mode_coverage(&vec![vec![0.1]; 5], &means, 2.5).unwrap();
        assert_eq!(c.counts, vec![5, 0]);
        let c = mode_coverage(&[vec![0.1], vec![5.0], vec![9.0]], &means, 2.5).unwrap();
        assert_eq!((c.counts.clone(), c.unassigned, c.total()), (vec![1, 1], 1, 3));
        assert!(mode_coverage(&[], &means, 1.0).is_err());
        assert_eq!(default_mode_radius(&means).unwrap(), 2.5);
    }

    #[test]
    fn zero_batch_shell() {
        let s = shell_stats(&vec![vec![0.0; 3]; 4]).unwrap();
        assert_eq!((s.mean_norm, s.std_norm), (0.0, 0.0));
    }

    #[test]
    fn shell_scales_linearly() {
        let mut rng = trajectory_rng(2, 0);
        let a = normals(50, 5, 0.0, &mut rng);
        let b: Vec<Vec<f64>> = a.iter().map(|x| x.iter().map(|v| 2.5 * v).collect()).collect();
        let (sa, sb) = (shell_stats(&a).unwrap(), shell_stats(&b).unwrap());
        assert!((sb.mean_norm - 2.5 * sa.mean_norm).abs() < 1e-12);
        assert!((sb.std_norm - 2.5 * sa.std_norm).abs() < 1e-12);
    }

    #[test]
    fn diffrep_renders_are_consistent() {
        let rep = LinearRep::identity(3);
        let r = view_consistency_residual(&rep, &[1.0, 2.0, 3.0], &[(View::Whole, View::Whole)]).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn ks_rejects_shifted_sample() {
        let mut rng = trajectory_rng(3, 0);
        let x: Vec<f64> = standard_normal_vec(2000, &mut rng);
        assert!(ks_test_normal(&x, 0.0, 1.0).unwrap().p_value > 0.01);
        assert!(ks_test_normal(&x, 0.3, 1.0).unwrap().p_value < 1e-6);
    }

    #[test]
    fn binomial_band_and_sign_test() {
        let (lo, hi) = binomial_band(200, 0.5, 0.99).unwrap();
        assert!((80..=83).contains(&lo) && (117..=120).contains(&hi), "{lo} {hi}");
        assert!((sign_test_p(15, 20).unwrap() - 0.020_694).abs() < 1e-5);
        assert!(sign_test_p(14, 20).unwrap() > 0.05);
        assert_eq!(sign_test_p(0, 20).unwrap(), 1.0);
    }

    #[test]
    fn within_group_distance() {
        let b = vec![vec![0.0], vec![1.0], vec![10.0], vec![13.0]];
        assert_eq!(within_group_pairwise_distance(&b, &[0, 0, 1, 1]).unwrap(), 2.0);
        assert!(within_group_pairwise_distance(&b, &[0, 1, 2, 3]).is_err());
    }
}
