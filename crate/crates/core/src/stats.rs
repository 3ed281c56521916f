//! Small statistics helpers: compensated sums and the Kolmogorov-Smirnov
//! statistic.

use serde::{Deserialize, Serialize};

/// Kahan-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    c: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

pub fn kahan_sum<'a>(xs: impl IntoIterator<Item = &'a f64>) -> f64 {
    let mut k = KahanSum::default();
    for x in xs {
        k.add(*x);
    }
    k.value()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_sd(xs: &[f64]) -> MeanSd {
    if xs.is_empty() {
        return MeanSd { mean: f64::NAN, sd: f64::NAN };
    }
    let n = xs.len() as f64;
    let mean = kahan_sum(xs) / n;
    if xs.len() < 2 {
        return MeanSd { mean, sd: 0.0 };
    }
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    MeanSd {
        mean,
        sd: (kahan_sum(&dev) / (n - 1.0)).sqrt(),
    }
}

/// Two-sided KS statistic `sup |F_n(x) - F(x)|` of `samples` against `cdf`.
/// Sorts `samples` in place.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.total_cmp(b));
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((f - lo).abs()).max((hi - f).abs());
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kahan_beats_naive() {
        let xs: Vec<f64> = std::iter::once(1.0).chain(std::iter::repeat_n(1e-16, 10_000)).collect();
        assert!((kahan_sum(&xs) - (1.0 + 1e-12)).abs() < 1e-15);
    }

    #[test]
    fn mean_sd_small() {
        let m = mean_sd(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.sd - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_sd(&[7.0]).sd, 0.0);
    }

    #[test]
    fn ks_of_perfect_grid() {
        let mut xs: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let d = ks_statistic(&mut xs, |x| x);
        assert!((d - 0.0005).abs() < 1e-12);
    }
}
