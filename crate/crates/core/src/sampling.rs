//! Latin hypercube sampling with Gaussian marginals, grouped campaigns and
//! input standardization.

use std::path::Path;

use rand::distributions::Open01;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fom::ParameterPoint;

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("invalid sampling input: {0}")]
    Validation(String),
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, SamplingError>;

/// One Gaussian bulk of samples in (angle of attack [deg], speed [m/s]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleGroup {
    pub size: usize,
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl SampleGroup {
    pub fn new(size: usize, mean: [f64; 2], std: [f64; 2]) -> Result<Self> {
        let g = Self { size, mean, std };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(SamplingError::Validation("group size must be at least 1".into()));
        }
        check_stds(&self.std)?;
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(SamplingError::Validation(format!("non-finite mean {:?}", self.mean)));
        }
        Ok(())
    }
}

/// Affine map between physical inputs and standard-normal coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardization {
    pub fn new(means: Vec<f64>, stds: Vec<f64>) -> Result<Self> {
        if means.len() != stds.len() || means.is_empty() {
            return Err(SamplingError::Validation(format!(
                "standardization needs matching nonempty means/stds, got {} and {}",
                means.len(),
                stds.len()
            )));
        }
        check_stds(&stds)?;
        Ok(Self { means, stds })
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.means).zip(&self.stds).map(|((x, m), s)| (x - m) / s).collect()
    }

    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.means).zip(&self.stds).map(|((z, m), s)| m + s * z).collect()
    }
}

fn check_stds(stds: &[f64]) -> Result<()> {
    if stds.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(SamplingError::Validation(format!("standard deviations must be positive, got {stds:?}")));
    }
    Ok(())
}

/// Sampled parameter points with group provenance and optional standardized
/// coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub points: Vec<ParameterPoint>,
    pub groups: Vec<usize>,
    pub seed: u64,
    pub zeta: Option<Vec<[f64; 2]>>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Physical coordinates (alpha, U) per sample.
    pub fn coordinates(&self) -> Vec<[f64; 2]> {
        self.points.iter().map(|p| [p.alpha_deg, p.speed]).collect()
    }

    /// Contiguous sub-range, keeping provenance.
    pub fn slice(&self, range: std::ops::Range<usize>) -> SampleSet {
        SampleSet {
            points: self.points[range.clone()].to_vec(),
            groups: self.groups[range.clone()].to_vec(),
            seed: self.seed,
            zeta: self.zeta.as_ref().map(|z| z[range].to_vec()),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["index", "group", "alpha_deg", "speed", "zeta_alpha", "zeta_speed"])?;
        for (k, p) in self.points.iter().enumerate() {
            let (za, zu) = match &self.zeta {
                Some(z) => (format!("{:.16e}", z[k][0]), format!("{:.16e}", z[k][1])),
                None => (String::new(), String::new()),
            };
            w.write_record([
                k.to_string(),
                self.groups[k].to_string(),
                format!("{:.16e}", p.alpha_deg),
                format!("{:.16e}", p.speed),
                za,
                zu,
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Stratified uniform draws in (0,1): for every dimension one value per
/// stratum `[i/N, (i+1)/N)`, strata randomly permuted per dimension.
pub fn lhc_unit(n: usize, dims: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; dims]; n];
    for d in 0..dims {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (row, s) in out.iter_mut().zip(strata) {
            let jitter: f64 = rng.sample(Open01);
            row[d] = (s as f64 + jitter) / n as f64;
        }
    }
    out
}

/// Latin hypercube draw of `n` points with independent Gaussian marginals,
/// any number of dimensions.
pub fn lhc_gaussian_matrix(n: usize, means: &[f64], stds: &[f64], seed: u64) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(SamplingError::Validation("sample count must be at least 1".into()));
    }
    let st = Standardization::new(means.to_vec(), stds.to_vec())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(lhc_unit(n, means.len(), &mut rng)
        .into_iter()
        .map(|u| st.inverse(&u.iter().map(|&p| inverse_normal_cdf(p)).collect::<Vec<_>>()))
        .collect())
}

/// Latin hypercube draw in (alpha, U).
pub fn lhc_gaussian(n: usize, means: [f64; 2], stds: [f64; 2], seed: u64) -> Result<SampleSet> {
    let rows = lhc_gaussian_matrix(n, &means, &stds, seed)?;
    let points = rows
        .iter()
        .map(|r| {
            ParameterPoint::new(r[0], r[1]).map_err(|_| {
                SamplingError::Validation(format!(
                    "drew non-positive inflow speed {} (mean {}, std {}); reduce the speed spread",
                    r[1], means[1], stds[1]
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SampleSet { groups: vec![0; n], points, seed, zeta: None })
}

/// Seed of group `g` derived from the campaign seed; group 0 uses the
/// campaign seed itself.
pub fn group_seed(seed: u64, group: usize) -> u64 {
    seed.wrapping_add((group as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Concatenates independent LHC draws of every group.
pub fn merge_groups(groups: &[SampleGroup], seed: u64) -> Result<SampleSet> {
    if groups.is_empty() {
        return Err(SamplingError::Validation("at least one sample group is required".into()));
    }
    let mut set = SampleSet { points: Vec::new(), groups: Vec::new(), seed, zeta: None };
    for (g, group) in groups.iter().enumerate() {
        group.validate()?;
        let draw = lhc_gaussian(group.size, group.mean, group.std, group_seed(seed, g))?;
        set.points.extend(draw.points);
        set.groups.extend(std::iter::repeat(g).take(group.size));
    }
    Ok(set)
}

/// Attaches `zeta = (x - mean) / std` to every sample.
pub fn standardize(set: &SampleSet, st: &Standardization) -> Result<SampleSet> {
    if st.dim() != 2 {
        return Err(SamplingError::Validation(format!("expected a 2-dimensional standardization, got {}", st.dim())));
    }
    let zeta = set
        .coordinates()
        .iter()
        .map(|x| {
            let z = st.forward(x);
            [z[0], z[1]]
        })
        .collect();
    Ok(SampleSet { zeta: Some(zeta), ..set.clone() })
}

/// Physical coordinates recovered from standardized ones.
pub fn unstandardize(zeta: &[[f64; 2]], st: &Standardization) -> Vec<[f64; 2]> {
    zeta.iter()
        .map(|z| {
            let x = st.inverse(z);
            [x[0], x[1]]
        })
        .collect()
}

/// Thirteen-group training design at 100 m/s: 520 samples clustered around
/// angles of attack between -45 and 45 degrees.
pub fn reference_training_groups() -> Vec<SampleGroup> {
    const LAYOUT: [(usize, f64, f64); 13] = [
        (90, 0.0, 20.0),
        (20, -10.0, 2.0),
        (20, 10.0, 2.0),
        (50, -15.0, 2.0),
        (50, 15.0, 2.0),
        (40, -22.0, 5.0),
        (40, 22.0, 5.0),
        (40, -30.0, 10.0),
        (40, 30.0, 10.0),
        (20, -38.0, 2.0),
        (20, 38.0, 2.0),
        (50, -45.0, 5.0),
        (40, 45.0, 5.0),
    ];
    LAYOUT
        .iter()
        .map(|&(size, alpha, sa)| SampleGroup { size, mean: [alpha, 100.0], std: [sa, 20.0] })
        .collect()
}

/// Standard normal quantile function.
///
/// Wichura's algorithm AS 241 (PPND16, Applied Statistics 37, 1988),
/// relative accuracy about 1e-16. Returns +-inf at 0 and 1.
pub fn inverse_normal_cdf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = ((((((2509.0809287301226727 * r + 33430.575583588128105) * r + 67265.770927008700853) * r
            + 45921.953931549871457)
            * r
            + 13731.693765509461125)
            * r
            + 1971.5909503065514427)
            * r
            + 133.14166789178437745)
            * r
            + 3.387132872796366608;
        let den = ((((((5226.495278852545925 * r + 28729.085735721942674) * r + 39307.89580009271061) * r
            + 21213.794301586595867)
            * r
            + 5394.1960214247511077)
            * r
            + 687.1870074920579083)
            * r
            + 42.313330701600911252)
            * r
            + 1.0;
        return q * num / den;
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r + 0.24178072517745061177) * r
            + 1.27045825245236838258)
            * r
            + 3.64784832476320460504)
            * r
            + 5.7694972214606914055)
            * r
            + 4.6303378461565452959)
            * r
            + 1.42343711074968357734;
        let den = ((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r + 0.0151986665636164571966)
            * r
            + 0.14810397642748007459)
            * r
            + 0.68976733498510000455)
            * r
            + 1.6763848301838038494)
            * r
            + 2.05319162663775882187)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r + 0.0012426609473880784386)
            * r
            + 0.026532189526576123093)
            * r
            + 0.29656057182850489123)
            * r
            + 1.7848265399172913358)
            * r
            + 5.4637849111641143699)
            * r
            + 6.6579046435011037772;
        let den = ((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r + 1.8463183175100546818e-5)
            * r
            + 7.868691311456132591e-4)
            * r
            + 0.0148753612908506148525)
            * r
            + 0.13692988092273580531)
            * r
            + 0.59983220655588793769)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strata_ok(values: &[f64], mean: f64, std: f64) -> bool {
        let n = values.len();
        let mut seen = vec![false; n];
        for v in values {
            let p = normal_cdf((v - mean) / std);
            let s = ((p * n as f64).floor() as usize).min(n - 1);
            if seen[s] {
                return false;
            }
            seen[s] = true;
        }
        true
    }

    // bisection on the quantile function
    fn normal_cdf(z: f64) -> f64 {
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if inverse_normal_cdf(mid) < z {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn quantile_known_values() {
        assert_eq!(inverse_normal_cdf(0.5), 0.0);
        assert!((inverse_normal_cdf(0.975) - 1.959963984540054).abs() < 1e-12);
        assert!((inverse_normal_cdf(0.025) + 1.959963984540054).abs() < 1e-12);
        assert!((inverse_normal_cdf(1e-10) + 6.361340902404056).abs() < 1e-9);
        assert!(inverse_normal_cdf(0.0).is_infinite());
    }

    #[test]
    fn single_sample() {
        let s = lhc_gaussian(1, [0.0, 10.0], [1.0, 1.0], 3).unwrap();
        assert_eq!(s.len(), 1);
        assert!(s.points[0].alpha_deg.is_finite());
    }

    #[test]
    fn four_samples_one_per_quartile() {
        let s = lhc_gaussian(4, [0.0, 10.0], [1.0, 1.0], 11).unwrap();
        let a: Vec<f64> = s.points.iter().map(|p| p.alpha_deg).collect();
        let u: Vec<f64> = s.points.iter().map(|p| p.speed).collect();
        assert!(strata_ok(&a, 0.0, 1.0));
        assert!(strata_ok(&u, 10.0, 1.0));
    }

    #[test]
    fn large_sample_moments() {
        let rows = lhc_gaussian_matrix(10_000, &[0.0], &[1.0], 5).unwrap();
        let n = rows.len() as f64;
        let mean = rows.iter().map(|r| r[0]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[0] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() <= 0.05);
        assert!((var.sqrt() - 1.0).abs() <= 0.05);
    }

    #[test]
    fn rejects_bad_std() {
        assert!(lhc_gaussian(4, [0.0, 1.0], [0.0, 1.0], 1).is_err());
        assert!(SampleGroup::new(3, [0.0, 1.0], [1.0, -1.0]).is_err());
        assert!(merge_groups(&[], 1).is_err());
    }

    #[test]
    fn one_group_matches_direct_draw() {
        let g = SampleGroup::new(7, [1.0, 5.0], [2.0, 0.5]).unwrap();
        let merged = merge_groups(&[g], 42).unwrap();
        let direct = lhc_gaussian(7, [1.0, 5.0], [2.0, 0.5], 42).unwrap();
        assert_eq!(merged.points, direct.points);
    }

    #[test]
    fn reference_design_sizes() {
        let groups = reference_training_groups();
        let set = merge_groups(&groups, 2024).unwrap();
        assert_eq!(set.len(), 520);
        let sizes: Vec<usize> = (0..13).map(|g| set.groups.iter().filter(|&&x| x == g).count()).collect();
        assert_eq!(sizes, vec![90, 20, 20, 50, 50, 40, 40, 40, 40, 20, 20, 50, 40]);
    }

    #[test]
    fn separated_groups_are_bimodal() {
        let groups = [
            SampleGroup::new(50, [-38.0, 100.0], [2.0, 20.0]).unwrap(),
            SampleGroup::new(50, [38.0, 100.0], [2.0, 20.0]).unwrap(),
        ];
        let set = merge_groups(&groups, 9).unwrap();
        let near = |c: f64| set.points.iter().filter(|p| (p.alpha_deg - c).abs() < 12.0).count();
        assert_eq!(near(-38.0) + near(38.0), 100);
        assert!(near(-38.0) == 50 && near(38.0) == 50);
        assert!(set.points.iter().all(|p| p.alpha_deg.abs() > 20.0));
    }

    #[test]
    fn standardization_examples() {
        let st = Standardization::new(vec![2.0, 100.0], vec![5.0, 20.0]).unwrap();
        assert_eq!(st.forward(&[2.0, 100.0]), vec![0.0, 0.0]);
        assert_eq!(st.forward(&[7.0, 120.0]), vec![1.0, 1.0]);
        let set = lhc_gaussian(20, [2.0, 100.0], [5.0, 20.0], 4).unwrap();
        let z = standardize(&set, &st).unwrap();
        let back = unstandardize(z.zeta.as_ref().unwrap(), &st);
        for (b, x) in back.iter().zip(set.coordinates()) {
            assert!((b[0] - x[0]).abs() <= 1e-14 * x[0].abs().max(1.0));
            assert!((b[1] - x[1]).abs() <= 1e-14 * x[1].abs().max(1.0));
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let a = merge_groups(&reference_training_groups(), 77).unwrap();
        let b = merge_groups(&reference_training_groups(), 77).unwrap();
        let c = merge_groups(&reference_training_groups(), 78).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
