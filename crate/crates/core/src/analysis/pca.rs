use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Pca3 {
    pub coords: Vec<[f64; 3]>,
    /// Unit-length principal axes, strongest first.
    pub axes: Vec<Vec<f64>>,
    /// Fraction of total variance along each axis.
    pub explained: [f64; 3],
    /// Fewer than three nonzero components; missing ones are zero-padded.
    pub rank_deficient: bool,
}

/// Projects mean-centered points onto the top three eigenvectors of their covariance.
pub fn pca3(points: &[Vec<f64>]) -> Result<Pca3> {
    let n = points.len();
    if n < 4 {
        return Err(Error::Contract(format!(
            "pca3 needs at least 4 states, got {n}"
        )));
    }
    let d = points[0].len();
    if d == 0 || points.iter().any(|p| p.len() != d) {
        return Err(Error::shape(
            "pca3",
            "points must share a nonzero dimension",
        ));
    }
    let mut centered = DMatrix::<f64>::zeros(n, d);
    for j in 0..d {
        let m = points.iter().map(|p| p[j]).sum::<f64>() / n as f64;
        for i in 0..n {
            centered[(i, j)] = points[i][j] - m;
        }
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let scale = total.max(f64::MIN_POSITIVE);
    let mut axes = Vec::with_capacity(3);
    let mut explained = [0.0; 3];
    let mut rank_deficient = false;
    for k in 0..3 {
        let (axis, var) = match order.get(k) {
            Some(&c) => (
                eig.eigenvectors
                    .column(c)
                    .iter()
                    .copied()
                    .collect::<Vec<f64>>(),
                eig.eigenvalues[c].max(0.0),
            ),
            None => (vec![0.0; d], 0.0),
        };
        if var <= 1e-12 * scale {
            rank_deficient = true;
        }
        explained[k] = if total > 0.0 { var / total } else { 0.0 };
        // fix sign so the largest-magnitude entry is positive
        let pivot = axis
            .iter()
            .copied()
            .fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        axes.push(axis.iter().map(|v| v * sign).collect::<Vec<f64>>());
    }
    let coords = (0..n)
        .map(|i| {
            let mut c = [0.0; 3];
            for (k, axis) in axes.iter().enumerate() {
                c[k] = (0..d).map(|j| centered[(i, j)] * axis[j]).sum();
            }
            c
        })
        .collect();
    Ok(Pca3 {
        coords,
        axes,
        explained,
        rank_deficient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    /// Box-Muller standard normal.
    fn normal(rng: &mut impl Rng) -> f64 {
        let u: f64 = rng.gen_range(f64::EPSILON..1.0);
        let v: f64 = rng.gen();
        (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
    }

    #[test]
    fn planar_data_has_no_third_component() {
        let pts: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![i as f64, (i * i % 7) as f64, 0.0, 0.0])
            .collect();
        let p = pca3(&pts).unwrap();
        assert!(p.explained[2] < 1e-12);
        assert!(p.rank_deficient);
    }

    #[test]
    fn isotropic_cloud_has_equal_ratios() {
        let mut rng = seed::stream(11, "pca");
        let pts: Vec<Vec<f64>> = (0..20_000)
            .map(|_| (0..3).map(|_| normal(&mut rng)).collect())
            .collect();
        let p = pca3(&pts).unwrap();
        for r in p.explained {
            assert!((r - 1.0 / 3.0).abs() < 0.1 / 3.0, "{:?}", p.explained);
        }
    }

    #[test]
    fn axes_orthonormal_ratios_sorted_projection_contracts() {
        let mut rng = seed::stream(12, "pca");
        let pts: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..6).map(|k| normal(&mut rng) * (k + 1) as f64).collect())
            .collect();
        let p = pca3(&pts).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = p.axes[a].iter().zip(&p.axes[b]).map(|(x, y)| x * y).sum();
                assert!((dot - if a == b { 1.0 } else { 0.0 }).abs() < 1e-9);
            }
        }
        assert!(p.explained[0] >= p.explained[1] && p.explained[1] >= p.explained[2]);
        assert!(p.explained.iter().sum::<f64>() <= 1.0 + 1e-12);
        for i in 0..pts.len() {
            for j in 0..i {
                let orig: f64 = pts[i]
                    .iter()
                    .zip(&pts[j])
                    .map(|(x, y)| (x - y).powi(2))
                    .sum();
                let proj: f64 = p.coords[i]
                    .iter()
                    .zip(&p.coords[j])
                    .map(|(x, y)| (x - y).powi(2))
                    .sum();
                assert!(proj <= orig + 1e-9);
            }
        }
        assert!(pca3(&pts[..3]).is_err());
    }
}
