use crate::linalg::Vector;
use crate::model::AffineSystem;

/// One Euler–Maruyama step `x + (Ax + Bν + Dw + b)dt + G√dt z`.
pub fn em_step(sys: &AffineSystem, x: &Vector, nu: &Vector, w: &Vector, dt: f64, z: &Vector) -> Vector {
    x + sys.drift(x, nu, w) * dt + &sys.g * z * dt.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval::IntervalBox;
    use crate::linalg::{scalar, Matrix};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn scalar_sys(a: f64, g: f64) -> AffineSystem {
        AffineSystem {
            a: scalar(a),
            b: scalar(1.0),
            c1: scalar(1.0),
            c2: Matrix::zeros(0, 1),
            d: Matrix::zeros(1, 0),
            g: scalar(g),
            offset: Vector::zeros(1),
            state_box: IntervalBox::cube(1, -10.0, 10.0),
            input_box: IntervalBox::cube(1, -10.0, 10.0),
            internal_box: IntervalBox::empty_dim(),
        }
    }

    fn integrate(sys: &AffineSystem, x0: f64, nu: f64, tau: f64, steps: usize) -> f64 {
        let dt = tau / steps as f64;
        let (nu, w, z) = (Vector::from_element(1, nu), Vector::zeros(0), Vector::zeros(1));
        let mut x = Vector::from_element(1, x0);
        for _ in 0..steps {
            x = em_step(sys, &x, &nu, &w, dt, &z);
        }
        x[0]
    }

    #[test]
    fn pure_drift_is_exact() {
        let sys = scalar_sys(0.0, 0.0);
        for steps in [1, 7, 20, 64] {
            assert!((integrate(&sys, 1.0, 0.3, 0.1, steps) - 1.03).abs() < 1e-14);
        }
    }

    #[test]
    fn converges_to_exponential() {
        let sys = scalar_sys(-2.0, 0.0);
        let exact = (-0.2f64).exp();
        let mut prev = f64::INFINITY;
        for steps in [10, 20, 40, 80, 160] {
            let err = (integrate(&sys, 1.0, 0.0, 0.1, steps) - exact).abs();
            assert!(err < 0.05 / steps as f64);
            assert!(err < prev);
            prev = err;
        }
    }

    #[test]
    fn brownian_variance() {
        let (g, tau, steps, trials) = (0.5, 0.1, 20, 20_000);
        let sys = scalar_sys(0.0, g);
        let dt = tau / steps as f64;
        let (nu, w) = (Vector::zeros(1), Vector::zeros(0));
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let samples: Vec<f64> = (0..trials)
            .map(|_| {
                let mut x = Vector::zeros(1);
                for _ in 0..steps {
                    let z = Vector::from_element(1, StandardNormal.sample(&mut rng));
                    x = em_step(&sys, &x, &nu, &w, dt, &z);
                }
                x[0]
            })
            .collect();
        let mean = samples.iter().sum::<f64>() / trials as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
        let expected = g * g * tau;
        // Standard error of a Gaussian sample variance: σ²√(2/(N-1)).
        let se = expected * (2.0 / (trials - 1) as f64).sqrt();
        assert!((var - expected).abs() < 3.0 * se, "var {var} expected {expected}");
    }
}
