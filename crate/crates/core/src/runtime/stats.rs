use statrs::function::beta::beta_reg;

/// Exact two-sided Clopper–Pearson upper limit for `successes` out of `trials`.
pub fn clopper_pearson_upper(successes: u64, trials: u64, confidence: f64) -> f64 {
    assert!(trials > 0 && successes <= trials, "invalid binomial counts");
    if successes == trials {
        return 1.0;
    }
    let target = 1.0 - (1.0 - confidence) / 2.0;
    let (a, b) = ((successes + 1) as f64, (trials - successes) as f64);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if beta_reg(a, b, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_successes_closed_form() {
        for n in [1u64, 10, 10_000] {
            let expected = 1.0 - 0.025f64.powf(1.0 / n as f64);
            assert!((clopper_pearson_upper(0, n, 0.95) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn known_value() {
        // Upper 97.5% limit for 5 of 100 (reference tables: 0.1128).
        assert!((clopper_pearson_upper(5, 100, 0.95) - 0.1128).abs() < 5e-4);
        assert_eq!(clopper_pearson_upper(3, 3, 0.95), 1.0);
    }

    #[test]
    fn monotone_in_successes() {
        let mut prev = 0.0;
        for x in 0..20 {
            let u = clopper_pearson_upper(x, 50, 0.95);
            assert!(u > prev);
            prev = u;
        }
    }
}
