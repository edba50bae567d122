//! Deterministic low-discrepancy samples of a ball in `R^n`.

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while index > 0 {
        out += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    out
}

/// The first `count` Halton points of the cube `[-r, r]^n` that fall inside
/// the closed ball of radius `r`.
pub fn sample_ball(n: usize, radius: f64, count: usize) -> Vec<Vec<f64>> {
    assert!(n <= PRIMES.len(), "sampling supports n <= {}", PRIMES.len());
    let mut out = Vec::with_capacity(count);
    let mut index = 1u64;
    while out.len() < count {
        let p: Vec<f64> = (0..n).map(|d| radius * (2.0 * radical_inverse(index, PRIMES[d]) - 1.0)).collect();
        index += 1;
        if p.iter().map(|v| v * v).sum::<f64>() <= radius * radius {
            out.push(p);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_lie_in_ball_and_are_deterministic() {
        let a = sample_ball(3, 0.2, 256);
        assert_eq!(a.len(), 256);
        assert!(a.iter().all(|p| p.iter().map(|v| v * v).sum::<f64>() <= 0.04 + 1e-15));
        assert_eq!(a, sample_ball(3, 0.2, 256));
    }

    #[test]
    fn van_der_corput() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(3, 2), 0.75);
        assert!((radical_inverse(5, 3) - 7.0 / 9.0).abs() < 1e-15);
    }
}
