use statrs::distribution::{ContinuousCDF, StudentsT};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Standard error of the mean.
pub fn std_error(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    (variance(xs) / xs.len() as f64).sqrt()
}

pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

fn student_sf(t: f64, df: f64) -> f64 {
    match StudentsT::new(0.0, 1.0, df) {
        Ok(d) => d.sf(t),
        Err(_) => f64::NAN,
    }
}

/// Two-sided Welch t-test for a difference in means.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> TTest {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (variance(a) / na, variance(b) / nb);
    let se = (va + vb).sqrt();
    let t = (mean(a) - mean(b)) / se;
    let df = (va + vb).powi(2) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    if se == 0.0 {
        let p = if mean(a) == mean(b) { 1.0 } else { 0.0 };
        return TTest {
            t: if p == 1.0 { 0.0 } else { t },
            df,
            p,
        };
    }
    TTest {
        t,
        df,
        p: 2.0 * student_sf(t.abs(), df),
    }
}

/// One-tailed paired t-test of `after > before`.
pub fn paired_t_test_greater(after: &[f64], before: &[f64]) -> TTest {
    let d: Vec<f64> = after.iter().zip(before).map(|(a, b)| a - b).collect();
    let n = d.len() as f64;
    let se = std_error(&d);
    let df = n - 1.0;
    if se == 0.0 {
        let m = mean(&d);
        let p = if m > 0.0 { 0.0 } else { 1.0 };
        return TTest {
            t: if m == 0.0 {
                0.0
            } else {
                m.signum() * f64::INFINITY
            },
            df,
            p,
        };
    }
    let t = mean(&d) / se;
    TTest {
        t,
        df,
        p: student_sf(t, df),
    }
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|a, b| xs[*a].total_cmp(&xs[*b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties; 0 when a side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, my) = (mean(&rx), mean(&ry));
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welch_matches_reference_values() {
        // reference from a hand computation: means 2 and 4, variances 2.5 and 2.5, n = 5
        let a = [0.0, 1.0, 2.0, 3.0, 4.0];
        let b = [2.0, 3.0, 4.0, 5.0, 6.0];
        let r = welch_t_test(&a, &b);
        assert!((r.t + 2.0).abs() < 1e-12);
        assert!((r.df - 8.0).abs() < 1e-12);
        // two-sided p for t = 2 with 8 df
        assert!((r.p - 0.080516).abs() < 1e-5, "{}", r.p);
    }

    #[test]
    fn paired_one_tailed() {
        let before = [1.0, 2.0, 3.0, 4.0];
        let after = [2.0, 2.5, 4.0, 4.5];
        let r = paired_t_test_greater(&after, &before);
        // d = (1, .5, 1, .5): mean .75, se = sqrt(1/12) / 2, t = 3 * sqrt(3) with 3 df
        assert!((r.t - 3.0 * 3f64.sqrt()).abs() < 1e-12);
        assert!((r.p - 0.006923).abs() < 1e-5, "{}", r.p);
        assert!(paired_t_test_greater(&before, &after).p > 0.9);
    }

    #[test]
    fn spearman_and_median() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 40.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 2.0], &[5.0, 5.0]), 0.0);
        assert!(
            (spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0, 2.0, 3.0]) - 0.9486832980505138).abs()
                < 1e-12
        );
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
