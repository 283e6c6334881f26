//! Stateless dense kernels. The tape calls these for both the forward and
//! the backward pass.

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `a[m×k] · b[k×n]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    if k != k2 {
        return Err(Error::dim(format!(
            "matmul: [{m}x{k}] · [{k2}x{n}] inner dimensions differ"
        )));
    }
    let mut out = vec![T::zero(); m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::from_rows(m, n, out)
}

/// `a[m×k] · b[n×k]ᵀ`.
pub fn matmul_nt<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = (a.rows(), a.cols());
    let (n, k2) = (b.rows(), b.cols());
    if k != k2 {
        return Err(Error::dim(format!(
            "matmul_nt: [{m}x{k}] · [{n}x{k2}]ᵀ inner dimensions differ"
        )));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &bd[j * k..(j + 1) * k];
            out.push(dot(arow, brow));
        }
    }
    Tensor::from_rows(m, n, out)
}

/// `a[k×m]ᵀ · b[k×n]`.
pub fn matmul_tn<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (k, m) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    if k != k2 {
        return Err(Error::dim(format!(
            "matmul_tn: [{k}x{m}]ᵀ · [{k2}x{n}] inner dimensions differ"
        )));
    }
    let mut out = vec![T::zero(); m * n];
    let (ad, bd) = (a.data(), b.data());
    for p in 0..k {
        let arow = &ad[p * m..(p + 1) * m];
        let brow = &bd[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::from_rows(m, n, out)
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    // Four accumulators let the compiler vectorize without reassociating.
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Row-wise softmax over the last dimension, stabilized by subtracting the
/// row maximum.
pub fn softmax_lastdim<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    softmax_masked(x, None)
}

/// Row-wise softmax where `mask[r * cols + c] == false` removes the entry.
/// A fully masked row yields zeros.
pub fn softmax_masked<T: Scalar>(x: &Tensor<T>, mask: Option<&[bool]>) -> Tensor<T> {
    let cols = x.cols();
    let mut out = x.clone().with_requires_grad(false);
    for (r, row) in out.data_mut().chunks_mut(cols).enumerate() {
        let visible = |c: usize| mask.is_none_or(|m| m[r * cols + c]);
        let mut mx = T::neg_infinity();
        for (c, &v) in row.iter().enumerate() {
            if visible(c) && v > mx {
                mx = v;
            }
        }
        if mx == T::neg_infinity() {
            row.iter_mut().for_each(|v| *v = T::zero());
            continue;
        }
        let mut total = T::zero();
        for (c, v) in row.iter_mut().enumerate() {
            *v = if visible(c) { (*v - mx).exp() } else { T::zero() };
            total += *v;
        }
        let inv = T::one() / total;
        row.iter_mut().for_each(|v| *v *= inv);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::from_rows(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let id = Tensor::<f64>::identity(2);
        let col = t(2, 1, &[3.0, 4.0]);
        assert_eq!(matmul(&id, &col).unwrap(), col);

        let row = t(1, 2, &[1.0, 2.0]);
        assert_eq!(matmul(&row, &col).unwrap().data(), &[11.0]);

        let z = Tensor::<f64>::zeros(&[2, 3]);
        let any = t(3, 2, &[1.0, -2.0, 3.5, 4.0, 5.0, 6.0]);
        assert_eq!(matmul(&z, &any).unwrap(), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        assert!(matches!(matmul(&a, &a), Err(Error::Dimension(_))));
        assert!(matmul_nt(&a, &Tensor::zeros(&[2, 2])).is_err());
        assert!(matmul_tn(&a, &Tensor::zeros(&[3, 2])).is_err());
    }

    #[test]
    fn transposed_variants_agree() {
        let a = Tensor::<f64>::from_fn(&[3, 4], |i| (i as f64 * 0.7).sin());
        let b = Tensor::<f64>::from_fn(&[5, 4], |i| (i as f64 * 1.3).cos());
        let bt = Tensor::from_fn(&[4, 5], |i| b.get2(i % 5, i / 5));
        let nt = matmul_nt(&a, &b).unwrap();
        let nn = matmul(&a, &bt).unwrap();
        assert!(nt.max_abs_diff(&nn).unwrap() < 1e-12);

        let at = Tensor::from_fn(&[4, 3], |i| a.get2(i % 3, i / 3));
        let tn = matmul_tn(&at, &bt).unwrap();
        assert!(tn.max_abs_diff(&nn).unwrap() < 1e-12);
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_lastdim(&t(1, 2, &[0.0, 0.0]));
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax_lastdim(&t(1, 2, &[0.0, 2f64.ln()]));
        assert!((s.data()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((s.data()[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn masked_softmax_zeroes_hidden_entries() {
        let x = t(2, 3, &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let mask = [true, false, true, false, false, false];
        let s = softmax_masked(&x, Some(&mask));
        assert_eq!(s.data()[1], 0.0);
        assert!((s.data()[0] + s.data()[2] - 1.0).abs() < 1e-15);
        assert_eq!(&s.data()[3..], &[0.0, 0.0, 0.0]);
    }
}
