use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn matmul_dims<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    if a.rank() != b.rank() || a.rank() < 2 || a.rank() > 3 {
        return Err(Error::config(format!(
            "matmul expects equal rank 2 or 3, got {} and {}",
            a.rank(),
            b.rank()
        )));
    }
    let batch = if a.rank() == 3 { a.dim(0) } else { 1 };
    if a.rank() == 3 && b.dim(0) != batch {
        return Err(Error::config(format!(
            "matmul batch extents differ: {} vs {}",
            batch,
            b.dim(0)
        )));
    }
    let (m, k) = (a.dim(a.rank() - 2), a.dim(a.rank() - 1));
    let (kb, n) = (b.dim(b.rank() - 2), b.dim(b.rank() - 1));
    if k != kb {
        return Err(Error::config(format!(
            "matmul inner extents differ: {k} vs {kb}"
        )));
    }
    Ok((batch, m, k, n))
}

/// Batched matrix product. Rows are computed independently with a fixed
/// accumulation order over `k`, so the result is bitwise reproducible at any
/// thread count.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, m, k, n) = matmul_dims(a, b)?;
    let mut shape = a.shape().to_vec();
    let r = shape.len();
    shape[r - 2] = m;
    shape[r - 1] = n;
    let mut out = Tensor::zeros(&shape);
    let ad = a.data();
    let bd = b.data();
    out.data_mut()
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(row, out_row)| {
            let bi = row / m;
            let i = row % m;
            let a_row = &ad[(bi * m + i) * k..][..k];
            let b_mat = &bd[bi * k * n..][..k * n];
            for (kk, &aik) in a_row.iter().enumerate() {
                let b_row = &b_mat[kk * n..][..n];
                for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                    *o += aik * bkj;
                }
            }
        });
    let _ = batch;
    Ok(out)
}

/// Cache-tiled transpose of one `m x n` plane.
fn transpose_plane<T: Scalar>(src: &[T], dst: &mut [T], m: usize, n: usize) {
    const TILE: usize = 32;
    for i0 in (0..m).step_by(TILE) {
        let i1 = (i0 + TILE).min(m);
        for j0 in (0..n).step_by(TILE) {
            let j1 = (j0 + TILE).min(n);
            for i in i0..i1 {
                for j in j0..j1 {
                    dst[j * m + i] = src[i * n + j];
                }
            }
        }
    }
}

/// Transpose the trailing two axes (batched when rank 3).
fn transpose_last2<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let r = t.rank();
    let batch = if r == 3 { t.dim(0) } else { 1 };
    let (m, n) = (t.dim(r - 2), t.dim(r - 1));
    let mut shape = t.shape().to_vec();
    shape[r - 2] = n;
    shape[r - 1] = m;
    let x = t.data();
    let mut out = Tensor::zeros(&shape);
    let o = out.data_mut();
    for bi in 0..batch {
        let src = &x[bi * m * n..][..m * n];
        let dst = &mut o[bi * m * n..][..m * n];
        transpose_plane(src, dst, m, n);
    }
    out
}

/// Gradient of matmul w.r.t. `a`: `g . b^T`, evaluated through the fast
/// row-accumulating product.
pub fn matmul_grad_a<T: Scalar>(grad_out: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let bt = transpose_last2(b);
    matmul(grad_out, &bt).expect("shapes agree by construction")
}

/// Gradient of matmul w.r.t. `b`: `a^T . g`.
pub fn matmul_grad_b<T: Scalar>(grad_out: &Tensor<T>, a: &Tensor<T>) -> Tensor<T> {
    let at = transpose_last2(a);
    matmul(&at, grad_out).expect("shapes agree by construction")
}

/// Transpose of a rank-2 tensor.
pub fn transpose2<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    if input.rank() != 2 {
        return Err(Error::config("transpose2 expects rank 2"));
    }
    let (m, n) = (input.dim(0), input.dim(1));
    let mut out = Tensor::zeros(&[n, m]);
    transpose_plane(input.data(), out.data_mut(), m, n);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn identity_map() {
        let eye = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = matmul(&eye, &x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn closed_form_2x2_times_2x1() {
        let a = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(&[2, 1], vec![1.0, 1.0]).unwrap();
        let y = matmul(&a, &b).unwrap();
        assert_eq!(y.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matches_triple_loop_oracle() {
        let mut rng = Rng::from_seed(8);
        let a = Tensor::generate(&[5, 7], || rng.uniform_in(-1.0, 1.0));
        let b = Tensor::generate(&[7, 3], || rng.uniform_in(-1.0, 1.0));
        let got = matmul(&a, &b).unwrap();
        let mut want = Tensor::zeros(&[5, 3]);
        for i in 0..5 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..7 {
                    acc += a.at2(i, k) * b.at2(k, j);
                }
                want.data_mut()[i * 3 + j] = acc;
            }
        }
        assert!(got.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn extent_mismatch_is_config_error() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[4, 2]);
        assert!(matmul(&a, &b).is_err());
    }

    #[test]
    fn batched_matches_per_slice() {
        let mut rng = Rng::from_seed(9);
        let a = Tensor::generate(&[3, 2, 4], || rng.uniform_in(-1.0, 1.0));
        let b = Tensor::generate(&[3, 4, 5], || rng.uniform_in(-1.0, 1.0));
        let y = matmul(&a, &b).unwrap();
        for bi in 0..3 {
            let ai = Tensor::from_vec(&[2, 4], a.data()[bi * 8..(bi + 1) * 8].to_vec()).unwrap();
            let bb = Tensor::from_vec(&[4, 5], b.data()[bi * 20..(bi + 1) * 20].to_vec()).unwrap();
            let yi = matmul(&ai, &bb).unwrap();
            assert_eq!(&y.data()[bi * 10..(bi + 1) * 10], yi.data());
        }
    }

    #[test]
    fn grads_are_adjoint() {
        let mut rng = Rng::from_seed(10);
        let a = Tensor::generate(&[2, 4, 3], || rng.uniform_in(-1.0, 1.0));
        let b = Tensor::generate(&[2, 3, 5], || rng.uniform_in(-1.0, 1.0));
        let y = matmul(&a, &b).unwrap();
        let g = Tensor::generate(y.shape(), || rng.uniform_in(-1.0, 1.0));
        let da = matmul_grad_a(&g, &b);
        let db = matmul_grad_b(&g, &a);
        let e: f64 = y.data().iter().zip(g.data()).map(|(x, y)| x * y).sum();
        let ea: f64 = a.data().iter().zip(da.data()).map(|(x, y)| x * y).sum();
        let eb: f64 = b.data().iter().zip(db.data()).map(|(x, y)| x * y).sum();
        assert!((e - ea).abs() < 1e-12);
        assert!((e - eb).abs() < 1e-12);
    }

    #[test]
    fn transpose_roundtrip() {
        let mut rng = Rng::from_seed(12);
        let a = Tensor::generate(&[4, 6], || rng.uniform());
        let t = transpose2(&a).unwrap();
        assert_eq!(t.shape(), &[6, 4]);
        assert_eq!(transpose2(&t).unwrap().data(), a.data());
    }
}
