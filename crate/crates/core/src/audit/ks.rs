//! Kolmogorov-Smirnov statistics and asymptotic p-values.

use std::cmp::Ordering;

fn sorted(samples: &[f64]) -> Vec<f64> {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Sup distance between the empirical CDF of `samples` and the uniform CDF
/// on `[lo, hi)`.
pub fn one_sample_uniform(samples: &[f64], lo: f64, hi: f64) -> f64 {
    let n = samples.len() as f64;
    let width = hi - lo;
    sorted(samples)
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = ((x - lo) / width).clamp(0.0, 1.0);
            ((i as f64 + 1.0) / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Sup distance between two empirical CDFs. Tied values advance both
/// CDFs together before the gap is measured.
pub fn two_sample(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = match a[i].total_cmp(&b[j]) {
            Ordering::Greater => b[j],
            _ => a[i],
        };
        while i < a.len() && a[i] == x {
            i += 1;
        }
        while j < b.len() && b[j] == x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Survival function of the Kolmogorov distribution,
/// `Q(λ) = 2 Σ (-1)^(j-1) exp(-2 j² λ²)`. Small `λ` uses the dual theta
/// series, which converges where the alternating one does not.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        let y = (-std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda)).exp();
        let mut s = 0.0;
        for j in 0..50 {
            let k = (2 * j + 1) as f64;
            let term = y.powf(k * k);
            s += term;
            if term < 1e-17 {
                break;
            }
        }
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0)
    } else {
        let mut s = 0.0;
        for j in 1..=100 {
            let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
            s += if j % 2 == 1 { term } else { -term };
            if term < 1e-17 {
                break;
            }
        }
        (2.0 * s).clamp(0.0, 1.0)
    }
}

/// p-value for statistic `d` with effective sample size `n_e`, with the
/// usual small-sample correction to `λ`.
pub fn p_value(d: f64, n_e: f64) -> f64 {
    let s = n_e.sqrt();
    kolmogorov_q((s + 0.12 + 0.11 / s) * d)
}

pub fn one_sample_p(d: f64, n: usize) -> f64 {
    p_value(d, n as f64)
}

pub fn two_sample_p(d: f64, n: usize, m: usize) -> f64 {
    let (n, m) = (n as f64, m as f64);
    p_value(d, n * m / (n + m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn q_matches_reference_values() {
        // reference values of the Kolmogorov survival function
        for (lambda, q) in [
            (0.5, 0.963_945_243_664_875_1),
            (1.0, 0.269_999_671_677_354_56),
            (1.36, 0.049_485_876_755_377_876),
            (2.0, 0.000_670_925_255_779_695_3),
        ] {
            assert!((kolmogorov_q(lambda) - q).abs() < 1e-9, "λ = {lambda}");
        }
        assert_eq!(kolmogorov_q(0.0), 1.0);
        let below = kolmogorov_q(1.18 - 1e-9);
        let above = kolmogorov_q(1.18 + 1e-9);
        assert!((below - above).abs() < 1e-7);
    }

    #[test]
    fn one_sample_on_grid() {
        let s: Vec<f64> = (0..100).map(|i| i as f64 + 0.5).collect();
        assert!((one_sample_uniform(&s, 0.0, 100.0) - 0.005).abs() < 1e-12);
        assert!((one_sample_uniform(&[3.0; 10], 0.0, 100.0) - 0.97).abs() < 1e-12);
    }

    #[test]
    fn two_sample_handles_ties() {
        assert_eq!(two_sample(&[1.0, 1.0, 2.0], &[1.0, 1.0, 2.0]), 0.0);
        assert_eq!(two_sample(&[1.0; 5], &[2.0; 5]), 1.0);
        assert!((two_sample(&[1.0, 2.0], &[1.0, 3.0]) - 0.5).abs() < 1e-12);
        assert!((two_sample(&[1.0, 2.0, 3.0, 4.0], &[2.5]) - 0.5).abs() < 1e-12);
    }
}
