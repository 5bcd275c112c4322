//! Special functions behind the p-values.
//!
//! The Student-t tail uses the regularized incomplete beta function,
//! evaluated by its continued fraction (modified Lentz method) after the
//! usual `x > (a+1)/(a+b+2)` symmetry swap. The normal tail uses the
//! regularized incomplete gamma function `Q(1/2, z^2/2)`, evaluated by its
//! power series for small arguments and by its continued fraction otherwise.

const EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;
const MAX_ITER: usize = 10_000;

/// Natural log of the gamma function (Lanczos, g = 7, n = 9), for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    let t = x + 7.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)` for `a, b > 0`, `x` in `[0, 1]`.
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Regularized upper incomplete gamma `Q(a, x)`.
pub fn reg_inc_gamma_upper(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let ln_front = -x + a * x.ln() - ln_gamma(a);
    if x < a + 1.0 {
        // series for P
        let mut ap = a;
        let mut del = 1.0 / a;
        let mut sum = del;
        for _ in 0..MAX_ITER {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        1.0 - sum * ln_front.exp()
    } else {
        // continued fraction for Q
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..MAX_ITER {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < EPS {
                break;
            }
        }
        ln_front.exp() * h
    }
}

/// `P(Z > z)` for a standard normal `Z`.
pub fn normal_sf(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    let q = reg_inc_gamma_upper(0.5, z * z / 2.0);
    if z >= 0.0 {
        0.5 * q
    } else {
        1.0 - 0.5 * q
    }
}

/// `P(T > t)` for Student's t with `dof` degrees of freedom.
pub fn student_t_sf(t: f64, dof: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t == f64::INFINITY {
        return 0.0;
    }
    if t == f64::NEG_INFINITY {
        return 1.0;
    }
    let tail = 0.5 * reg_inc_beta(dof / 2.0, 0.5, dof / (dof + t * t));
    if t >= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!(ln_gamma(2.0).abs() < 1e-14);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
        assert!((ln_gamma(10.0) - 362_880f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn t_tail_matches_reference_library() {
        for &dof in &[1.0, 2.5, 4.0, 7.3, 30.0, 250.0, 9000.0] {
            let dist = StudentsT::new(0.0, 1.0, dof).unwrap();
            for &t in &[-8.0, -3.0, -1.0, -0.2, 0.0, 0.4, 1.5, 2.7, 6.0, 20.0] {
                let ours = student_t_sf(t, dof);
                let theirs = 1.0 - dist.cdf(t);
                assert!((ours - theirs).abs() < 1e-10, "t={t} dof={dof}: {ours} vs {theirs}");
            }
        }
    }

    #[test]
    fn normal_tail_matches_reference_library() {
        let n = Normal::new(0.0, 1.0).unwrap();
        for i in -80..=80 {
            let z = i as f64 / 10.0;
            assert!((normal_sf(z) - (1.0 - n.cdf(z))).abs() < 1e-10, "z={z}");
        }
        let reference = [
            (-2.0, 0.9772498680518208),
            (-1.2, 0.8849303297782917),
            (-1.0, 0.8413447460685429),
            (0.5, 0.3085375387259869),
            (1.0, 0.15865525393145707),
            (2.0, 0.02275013194817922),
            (3.0, 0.0013498980316300957),
            (5.0, 2.866515718791946e-07),
        ];
        for (z, p) in reference {
            assert!((normal_sf(z) - p).abs() <= 1e-15 * (1.0 + p / 1e-7), "z={z}");
        }
        assert!((normal_sf(1.959963984540054) - 0.025).abs() < 1e-12);
    }

    #[test]
    fn inc_beta_edges_and_symmetry() {
        assert_eq!(reg_inc_beta(2.0, 3.0, 0.0), 0.0);
        assert_eq!(reg_inc_beta(2.0, 3.0, 1.0), 1.0);
        // I_x(a, b) = 1 - I_{1-x}(b, a)
        for &x in &[0.1, 0.35, 0.5, 0.8] {
            let lhs = reg_inc_beta(2.5, 4.0, x);
            let rhs = 1.0 - reg_inc_beta(4.0, 2.5, 1.0 - x);
            assert!((lhs - rhs).abs() < 1e-13);
        }
        // I_x(1, 1) = x
        assert!((reg_inc_beta(1.0, 1.0, 0.37) - 0.37).abs() < 1e-14);
    }
}
