//! Rank statistics used by the recovery and noise analyses.

use rand::seq::SliceRandom;
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Ranks starting at 1; tied values share their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Invalid("spearman needs two equal-length samples of size >= 2".into()));
    }
    Ok(pearson(&average_ranks(x), &average_ranks(y)))
}

/// Two-sided permutation p-value for Spearman's rho, with the +1 correction.
pub fn spearman_permutation_p<R: Rng + ?Sized>(x: &[f64], y: &[f64], n_perm: usize, rng: &mut R) -> Result<f64> {
    let observed = spearman(x, y)?.abs();
    let rx = average_ranks(x);
    let mut ry = average_ranks(y);
    let mut hits = 0usize;
    for _ in 0..n_perm {
        ry.shuffle(rng);
        if pearson(&rx, &ry).abs() >= observed - 1e-12 {
            hits += 1;
        }
    }
    Ok((hits + 1) as f64 / (n_perm + 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    pub z: f64,
    /// One-sided p-value for the first sample tending to be smaller.
    pub p_less: f64,
}

/// Normal approximation with tie and continuity corrections.
pub fn mann_whitney_less(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Invalid("mann-whitney needs two non-empty samples".into()));
    }
    let n1 = a.len() as f64;
    let n2 = b.len() as f64;
    let all: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = average_ranks(&all);
    let r1: f64 = ranks[..a.len()].iter().sum();
    let u = r1 - n1 * (n1 + 1.0) / 2.0;
    let n = n1 + n2;
    let mut sorted = all.clone();
    sorted.sort_by(|x, y| x.total_cmp(y));
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    let mean = n1 * n2 / 2.0;
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    if var <= 0.0 {
        return Ok(MannWhitney { u, z: 0.0, p_less: 1.0 });
    }
    let z = (u - mean + 0.5) / var.sqrt();
    Ok(MannWhitney {
        u,
        z,
        p_less: normal.cdf(z),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn spearman_of_monotone_map_is_one() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v.powi(3) - 5.0).collect();
        assert!((spearman(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        assert!((spearman(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn permutation_p_small_for_strong_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v + rng.gen::<f64>() * 5.0).collect();
        let p = spearman_permutation_p(&x, &y, 999, &mut rng).unwrap();
        assert!((p - 0.001).abs() < 1e-12);
    }

    #[test]
    fn mann_whitney_known_value() {
        // scipy.stats.mannwhitneyu([1,2,3,4], [5,6,7,8], alternative="less",
        // method="asymptotic") gives U=0, p=0.015191410988288745.
        let r = mann_whitney_less(&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(r.u, 0.0);
        assert!((r.p_less - 0.015_191_410_988_288_745).abs() < 1e-9, "{}", r.p_less);
        let tied = mann_whitney_less(&[1.0, 2.0, 2.0, 4.0, 3.0], &[2.0, 6.0, 7.0, 3.0]).unwrap();
        assert_eq!(tied.u, 4.5);
        assert!((tied.p_less - 0.105_451_463_028_305_21).abs() < 1e-9, "{}", tied.p_less);
        let rev = mann_whitney_less(&[5.0, 6.0, 7.0, 8.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(rev.p_less > 0.98);
    }
}
