use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Thin SVD with singular values sorted non-increasing.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl ThinSvd {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&self.s) * self.v.transpose()
    }
}

pub fn thin_svd(g: &DMatrix<f64>) -> Result<ThinSvd> {
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("SVD input has non-finite entries".into()));
    }
    let (n, m) = g.shape();
    let p = n.min(m);
    if p == 0 {
        return Ok(ThinSvd {
            u: DMatrix::zeros(n, 0),
            s: DVector::zeros(0),
            v: DMatrix::zeros(m, 0),
        });
    }
    let f = faer::Mat::<f64>::from_fn(n, m, |i, j| g[(i, j)]);
    let svd = f
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("SVD did not converge: {e:?}")))?;
    let (fu, fs, fv) = (svd.U(), svd.S(), svd.V());
    let mut idx: Vec<usize> = (0..p).collect();
    idx.sort_by(|&a, &b| fs[b].total_cmp(&fs[a]));
    let s = DVector::from_iterator(p, idx.iter().map(|&i| fs[i].max(0.0)));
    let u = DMatrix::from_fn(n, p, |r, c| fu[(r, idx[c])]);
    let v = DMatrix::from_fn(m, p, |r, c| fv[(r, idx[c])]);
    Ok(ThinSvd { u, s, v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn identity_has_unit_spectrum() {
        let svd = thin_svd(&DMatrix::identity(3, 3)).unwrap();
        assert!(svd.s.iter().all(|&s| (s - 1.0).abs() < 1e-14));
    }

    #[test]
    fn rank_one_outer_product() {
        let u = DVector::from_vec(vec![1.0, 2.0, 2.0]);
        let v = DVector::from_vec(vec![3.0, 0.0, 4.0, 0.0]);
        let svd = thin_svd(&(&u * v.transpose())).unwrap();
        assert!((svd.s[0] - 15.0).abs() < 1e-12);
        assert!(svd.s.iter().skip(1).all(|&s| s.abs() < 1e-12));
    }

    #[test]
    fn random_reconstruction_and_orthogonality() {
        let mut rng = Rng::new(9);
        for (n, m) in [(5, 4), (4, 5), (7, 7)] {
            let g = DMatrix::from_fn(n, m, |_, _| rng.gaussian(0.0, 1.0));
            let svd = thin_svd(&g).unwrap();
            assert!((svd.reconstruct() - &g).norm() <= 1e-10 * g.norm());
            let p = n.min(m);
            assert!((svd.u.transpose() * &svd.u - DMatrix::identity(p, p)).amax() <= 1e-10);
            assert!((svd.v.transpose() * &svd.v - DMatrix::identity(p, p)).amax() <= 1e-10);
            assert!(svd.s.as_slice().windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn spectrum_invariant_under_permutation() {
        let mut rng = Rng::new(13);
        let g = DMatrix::from_fn(6, 5, |_, _| rng.gaussian(0.0, 1.0));
        let rows = [3, 0, 5, 1, 4, 2];
        let cols = [4, 2, 0, 3, 1];
        let gp = DMatrix::from_fn(6, 5, |i, j| g[(rows[i], cols[j])]);
        let a = thin_svd(&g).unwrap().s;
        let b = thin_svd(&gp).unwrap().s;
        assert!((a - b).amax() <= 1e-12);
    }

    #[test]
    fn rank_deficient_tall_and_wide() {
        let mut rng = Rng::new(21);
        for _ in 0..2000 {
            let (n, m) = (1 + rng.below(8), 1 + rng.below(8));
            let r = 1 + rng.below(n.min(m));
            let a = DMatrix::from_fn(n, r, |_, _| rng.gaussian(0.0, 1.0));
            let g = a * DMatrix::from_fn(r, m, |_, _| rng.gaussian(0.0, 1.0));
            let svd = thin_svd(&g).unwrap();
            assert!((svd.reconstruct() - &g).norm() <= 1e-12 * g.norm());
        }
    }

    #[test]
    fn rejects_nan() {
        let mut g = DMatrix::zeros(2, 2);
        g[(0, 1)] = f64::NAN;
        assert!(thin_svd(&g).is_err());
    }
}
