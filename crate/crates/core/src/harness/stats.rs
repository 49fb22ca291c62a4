//! Monte Carlo summary statistics.

use serde::Serialize;

use crate::error::{Error, Result};

/// Summary of per-run costs; the costs themselves are kept.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostStatistics {
    pub runs: usize,
    pub mean: f64,
    /// Sample standard deviation (`n - 1` denominator, 0 for a single run).
    pub std_dev: f64,
    pub min: f64,
    pub max: f64,
    #[serde(skip)]
    pub costs: Vec<f64>,
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn sample_std(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

pub fn cost_statistics(costs: &[f64]) -> Result<CostStatistics> {
    if costs.is_empty() {
        return Err(Error::EmptySamples);
    }
    Ok(CostStatistics {
        runs: costs.len(),
        mean: mean(costs),
        std_dev: sample_std(costs),
        min: costs.iter().copied().fold(f64::INFINITY, f64::min),
        max: costs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        costs: costs.to_vec(),
    })
}

/// Shared-edge histogram of several series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    /// One count vector per series.
    pub counts: Vec<Vec<usize>>,
}

/// Bins every series on edges spanning the pooled `[min, max]`. Values equal
/// to the maximum land in the last bin.
pub fn histogram(series: &[&[f64]], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::InvalidParameter("histogram needs at least one bin".into()));
    }
    let pooled = series.iter().flat_map(|s| s.iter().copied());
    let (lo, hi) = pooled.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::EmptySamples);
    }
    let width = (hi - lo) / bins as f64;
    let mut edges: Vec<f64> = (0..bins).map(|i| lo + width * i as f64).collect();
    edges.push(hi);
    let index = |v: f64| {
        if width > 0.0 {
            (((v - lo) / width) as usize).min(bins - 1)
        } else {
            bins - 1
        }
    };
    let counts = series
        .iter()
        .map(|s| {
            let mut c = vec![0; bins];
            for &v in s.iter() {
                c[index(v)] += 1;
            }
            c
        })
        .collect();
    Ok(Histogram { edges, counts })
}

/// Paired comparison of two cost series, `a` (WDRC) against `b` (LQG).
///
/// `mean_z` tests `E[b - a] > 0` through `d_i = b_i - a_i`; `variance_z`
/// tests `Var[b] > Var[a]` through `d_i = (b_i - mean b)^2 - (a_i - mean a)^2`.
/// Both are `mean(d) / (sd(d) / sqrt(n))`. With unpaired runs the pairs are
/// independent and the statistics remain valid, only less powerful.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairedComparison {
    pub runs: usize,
    pub mean_difference: f64,
    pub mean_z: f64,
    pub variance_difference: f64,
    pub variance_z: f64,
}

fn z_score(d: &[f64]) -> f64 {
    let m = mean(d);
    let se = sample_std(d) / (d.len() as f64).sqrt();
    if se > 0.0 {
        m / se
    } else if m == 0.0 {
        0.0
    } else {
        m.signum() * f64::INFINITY
    }
}

pub fn paired_comparison(a: &[f64], b: &[f64]) -> Result<PairedComparison> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch {
            context: "paired cost series",
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::EmptySamples);
    }
    let (ma, mb) = (mean(a), mean(b));
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    let dv: Vec<f64> = a.iter().zip(b).map(|(x, y)| (y - mb).powi(2) - (x - ma).powi(2)).collect();
    Ok(PairedComparison {
        runs: a.len(),
        mean_difference: mean(&d),
        mean_z: z_score(&d),
        variance_difference: mean(&dv),
        variance_z: z_score(&dv),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn single_run() {
        let s = cost_statistics(&[3.5]).unwrap();
        assert_eq!((s.mean, s.std_dev, s.min, s.max), (3.5, 0.0, 3.5, 3.5));
        assert_eq!(cost_statistics(&[]), Err(Error::EmptySamples));
    }

    #[test]
    fn known_sample() {
        let s = cost_statistics(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]).unwrap();
        assert_relative_eq!(s.mean, 5.0);
        assert_relative_eq!(s.std_dev, (32.0f64 / 7.0).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn histogram_edges_and_counts() {
        let a = [0.0, 1.0, 2.0];
        let b = [3.0, 4.0];
        let h = histogram(&[&a, &b], 4).unwrap();
        assert_eq!(h.edges, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(h.counts, vec![vec![1, 1, 1, 0], vec![0, 0, 0, 2]]);

        let h = histogram(&[&a, &b], 1).unwrap();
        assert_eq!(h.edges, vec![0.0, 4.0]);
        assert_eq!(h.counts, vec![vec![3], vec![2]]);

        let h = histogram(&[&[1.0, 1.0]], 3).unwrap();
        assert_eq!(h.counts, vec![vec![0, 0, 2]]);
    }

    #[test]
    fn paired_scores() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [2.0, 3.5, 3.5, 6.0];
        let c = paired_comparison(&a, &b).unwrap();
        let d = [1.0, 1.5, 0.5, 2.0];
        assert_relative_eq!(c.mean_difference, 1.25);
        assert_relative_eq!(c.mean_z, 1.25 / (sample_std(&d) / 2.0), epsilon = 1e-14);
        let same = paired_comparison(&a, &a).unwrap();
        assert_eq!((same.mean_z, same.variance_z), (0.0, 0.0));
    }
}
