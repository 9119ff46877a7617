use crate::error::{Error, Result};
use crate::margin_loss::M_MAX;

/// T_m(x) by the three-term recurrence T_{k} = 2x·T_{k−1} − T_{k−2}.
pub fn chebyshev_t(x: f64, m: u32) -> f64 {
    chebyshev_t_with_derivative(x, m).0
}

/// `(T_m(x), T_m'(x))`, differentiating the recurrence term by term.
pub fn chebyshev_t_with_derivative(x: f64, m: u32) -> (f64, f64) {
    match m {
        0 => (1.0, 0.0),
        _ => {
            let (mut t_prev, mut t) = (1.0, x);
            let (mut d_prev, mut d) = (0.0, 1.0);
            for _ in 1..m {
                let t_next = 2.0 * x * t - t_prev;
                let d_next = 2.0 * t + 2.0 * x * d - d_prev;
                t_prev = t;
                t = t_next;
                d_prev = d;
                d = d_next;
            }
            (t, d)
        }
    }
}

/// `cos(m·α)` from `cos α` without going through `arccos`.
pub fn cos_m_theta(cos_alpha: f64, m: u32) -> Result<f64> {
    if !(1..=M_MAX).contains(&m) {
        return Err(Error::Parameter(format!("margin {m} outside 1..={M_MAX}")));
    }
    if !(-1.0..=1.0).contains(&cos_alpha) {
        return Err(Error::Domain(format!("cos α = {cos_alpha}")));
    }
    Ok(chebyshev_t(cos_alpha, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn examples() {
        assert_eq!(cos_m_theta(0.3, 1).unwrap(), 0.3);
        assert!((cos_m_theta(0.5, 2).unwrap() - (2.0 * PI / 3.0).cos()).abs() < 1e-15);
        assert!((cos_m_theta(0.5, 2).unwrap() + 0.5).abs() < 1e-15);
        for m in 1..=M_MAX {
            assert_eq!(cos_m_theta(1.0, m).unwrap(), 1.0);
        }
        assert!(matches!(cos_m_theta(0.1, 0), Err(Error::Parameter(_))));
        assert!(matches!(cos_m_theta(0.1, M_MAX + 1), Err(Error::Parameter(_))));
    }

    #[test]
    fn matches_trigonometric_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let alpha = rng.random_range(0.0..=PI);
            for m in 1..=M_MAX {
                let got = cos_m_theta(alpha.cos(), m).unwrap();
                assert!((got - (m as f64 * alpha).cos()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn derivative_matches_sine_identity() {
        // d/dx cos(m arccos x) = m sin(mα)/sin α
        for i in 1..100 {
            let alpha = i as f64 * PI / 100.0;
            for m in 1..=M_MAX {
                let (_, d) = chebyshev_t_with_derivative(alpha.cos(), m);
                let want = m as f64 * (m as f64 * alpha).sin() / alpha.sin();
                assert!((d - want).abs() < 1e-9 * (1.0 + want.abs()));
            }
        }
    }
}
