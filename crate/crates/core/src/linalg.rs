//! Small dense linear algebra helpers: matrix exponential, log-determinants,
//! PSD factorization and a deterministic summation.

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

// Largest 1-norms for which each Padé degree meets unit roundoff.
const THETA3: f64 = 1.495585217958292e-2;
const THETA5: f64 = 2.539_398_330_063_23e-1;
const THETA7: f64 = 9.504178996162932e-1;
const THETA9: f64 = 2.097847961257068e0;
const THETA13: f64 = 5.371920351148152e0;

pub fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with a Padé approximant of
/// degree 3, 5, 7, 9 or 13 chosen from the 1-norm.
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Argument("expm needs a square matrix".into()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("expm of a non-finite matrix".into()));
    }
    if n == 0 {
        return Ok(a.clone());
    }
    let nrm = norm1(a);
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;

    let (u, v, squarings) = if nrm <= THETA9 {
        let coeffs: &[f64] = if nrm <= THETA3 {
            &PADE3
        } else if nrm <= THETA5 {
            &PADE5
        } else if nrm <= THETA7 {
            &PADE7
        } else {
            &PADE9
        };
        let (u, v) = pade_low(a, &a2, coeffs, &id);
        (u, v, 0)
    } else {
        let s = ((nrm / THETA13).log2().ceil()).max(0.0) as i32;
        let scale = 0.5f64.powi(s);
        let a = a * scale;
        let a2 = &a2 * (scale * scale);
        let a4 = &a2 * &a2;
        let a6 = &a4 * &a2;
        let b = &PADE13;
        let inner_u = &a6 * b[13] + &a4 * b[11] + &a2 * b[9];
        let u = &a * (&a6 * inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1]);
        let inner_v = &a6 * b[12] + &a4 * b[10] + &a2 * b[8];
        let v = &a6 * inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];
        (u, v, s)
    };

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .ok_or_else(|| Error::Numeric("singular Padé denominator in expm".into()))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("expm overflowed".into()));
    }
    Ok(r)
}

fn pade_low(
    a: &DMatrix<f64>,
    a2: &DMatrix<f64>,
    b: &[f64],
    id: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut odd = DMatrix::<f64>::zeros(n, n);
    let mut even = DMatrix::<f64>::zeros(n, n);
    let mut pow = id.clone();
    for j in 0..b.len() / 2 {
        even += &pow * b[2 * j];
        odd += &pow * b[2 * j + 1];
        pow = &pow * a2;
    }
    (a * odd, even)
}

/// (M + Mᵀ)/2.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Cholesky factorization together with log det.
pub fn cholesky_logdet(m: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let chol = Cholesky::new(m.clone())
        .ok_or_else(|| Error::Numeric("matrix is not positive definite".into()))?;
    let logdet = 2.0
        * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| d.ln())
            .sum::<f64>();
    if !logdet.is_finite() {
        return Err(Error::Numeric("non-finite log-determinant".into()));
    }
    Ok((chol, logdet))
}

/// Inverse and log det of a symmetric positive definite matrix.
pub fn spd_inverse_logdet(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let (chol, logdet) = cholesky_logdet(m)?;
    Ok((symmetrize(&chol.inverse()), logdet))
}

/// Repairs round-off negativity in a symmetric PSD matrix. Eigenvalues in
/// [-1e-12·‖M‖, 0) are clipped to zero; anything more negative is an error.
pub fn psd_repair(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = symmetrize(m);
    if Cholesky::new(m.clone()).is_some() {
        return Ok(m);
    }
    let scale = m.norm();
    let eig = SymmetricEigen::new(m.clone());
    let min = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min < -1e-12 * scale {
        return Err(Error::Numeric(format!(
            "matrix has eigenvalue {min:e}, below the PSD tolerance"
        )));
    }
    if min >= 0.0 {
        return Ok(m);
    }
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let q = &eig.eigenvectors;
    Ok(symmetrize(
        &(q * DMatrix::from_diagonal(&clipped) * q.transpose()),
    ))
}

/// A square-root factor L with L Lᵀ = M for a PSD matrix, via Cholesky when
/// possible and the eigendecomposition otherwise.
pub fn psd_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = psd_repair(m)?;
    if let Some(ch) = Cholesky::new(m.clone()) {
        return Ok(ch.l());
    }
    let eig = SymmetricEigen::new(m);
    let sq = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sq))
}

/// Moore–Penrose pseudo-inverse of a symmetric matrix, plus whether the
/// matrix was judged singular (condition number above 1e12).
pub fn symmetric_pinv(m: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let max = eig.eigenvalues.iter().map(|l| l.abs()).fold(0.0, f64::max);
    let cutoff = max * 1e-12;
    let mut singular = max == 0.0;
    let inv = eig.eigenvalues.map(|l| {
        if l.abs() > cutoff && max > 0.0 {
            1.0 / l
        } else {
            singular = true;
            0.0
        }
    });
    let q = &eig.eigenvectors;
    (
        symmetrize(&(q * DMatrix::from_diagonal(&inv) * q.transpose())),
        singular,
    )
}

/// xᵀ M x for a dense row-major n×n matrix stored in a slice.
#[inline]
pub fn quad_form(m: &[f64], x: &[f64]) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for i in 0..n {
        let row = &m[i * n..(i + 1) * n];
        let mut s = 0.0;
        for j in 0..n {
            s += row[j] * x[j];
        }
        acc += x[i] * s;
    }
    acc
}

/// y ← M x for a row-major n×m matrix stored in a slice.
#[inline]
pub fn mat_vec(m: &[f64], x: &[f64], y: &mut [f64]) {
    let cols = x.len();
    for (i, yi) in y.iter_mut().enumerate() {
        let row = &m[i * cols..(i + 1) * cols];
        *yi = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

pub fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Pairwise (tree) summation. The grouping depends only on the length, so
/// the result is reproducible regardless of how the inputs were produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn taylor_expm(a: &DMatrix<f64>) -> DMatrix<f64> {
        // Independent oracle: scale to norm < 0.5, 30-term Taylor, square back.
        let n = a.nrows();
        let s = (norm1(a) / 0.5).log2().ceil().max(0.0) as i32;
        let a = a * 0.5f64.powi(s);
        let mut term = DMatrix::<f64>::identity(n, n);
        let mut sum = term.clone();
        for k in 1..30 {
            term = &term * &a / k as f64;
            sum += &term;
        }
        for _ in 0..s {
            sum = &sum * &sum;
        }
        sum
    }

    #[test]
    fn expm_of_zero_is_identity() {
        let z = DMatrix::<f64>::zeros(3, 3);
        assert_eq!(expm(&z).unwrap(), DMatrix::identity(3, 3));
    }

    #[test]
    fn expm_nilpotent_closed_form() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let e = expm(&(&a * 0.7)).unwrap();
        assert_relative_eq!(
            e,
            DMatrix::from_row_slice(2, 2, &[1.0, 0.7, 0.0, 1.0]),
            epsilon = 1e-15
        );
    }

    #[test]
    fn expm_matches_taylor_across_norm_regimes() {
        let base = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.0, 1.0, 0.2, 0.0, -2.0, -6.5, 0.0, 0.3, 0.1, 0.0, -0.5, 1.0, 0.0, 0.4, -1.0, -0.2,
            ],
        );
        for scale in [1e-3, 0.1, 0.5, 1.0, 3.0, 10.0, 40.0] {
            let a = &base * scale;
            let e = expm(&a).unwrap();
            let t = taylor_expm(&a);
            let rel = (&e - &t).norm() / t.norm();
            assert!(rel < 1e-12, "scale {scale}: rel {rel}");
        }
    }

    #[test]
    fn expm_diagonal() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-20.0, 0.5, 3.0]));
        let e = expm(&a).unwrap();
        for (i, l) in [-20.0f64, 0.5, 3.0].iter().enumerate() {
            assert_relative_eq!(e[(i, i)], l.exp(), max_relative = 1e-13);
        }
    }

    #[test]
    fn pinv_flags_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (p, singular) = symmetric_pinv(&m);
        assert!(singular);
        assert_relative_eq!(&m * &p * &m, m, epsilon = 1e-12);
    }

    #[test]
    fn psd_repair_clips_noise_and_rejects_negative() {
        let noisy = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0 - 1e-15]);
        let fixed = psd_repair(&noisy).unwrap();
        let eig = SymmetricEigen::new(fixed);
        assert!(eig.eigenvalues.iter().all(|l| *l >= 0.0));
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.1]);
        assert!(psd_repair(&bad).is_err());
    }

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let xs: Vec<f64> = (0..10_000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 49_995_000.0);
    }
}
