use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from raw data, rejecting length mismatches, zero
    /// dimensions and non-finite values.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) || shape.iter().product::<usize>() != data.len() {
            return Err(Error::Length {
                shape,
                len: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor data"));
        }
        Ok(Self { shape, data })
    }

    /// Unchecked constructor for results of arithmetic, which may legitimately
    /// overflow during a diverging run.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; len])
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(vec![1], vec![value])
    }

    pub fn vector(values: &[f64]) -> Result<Self> {
        Self::new(vec![values.len()], values.to_vec())
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        self.is_scalar().then(|| self.data[0])
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn scale_in_place(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    /// `self += factor * other`; shapes must already agree.
    pub fn axpy(&mut self, factor: f64, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
    }

    /// Row range `[start, end)` of a matrix as a new tensor.
    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor {
        let cols = self.cols();
        Self::from_parts(vec![end - start, cols], self.data[start * cols..end * cols].to_vec())
    }

    /// Gathers the given rows of a matrix.
    pub fn select_rows(&self, rows: &[usize]) -> Tensor {
        let cols = self.cols();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            data.extend_from_slice(&self.data[r * cols..(r + 1) * cols]);
        }
        Self::from_parts(vec![rows.len(), cols], data)
    }
}

/// Below this size in any dimension, plain loops beat packing.
const SMALL_DIM: usize = 4;

fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (xc, yc) = (x.chunks_exact(4), y.chunks_exact(4));
    let tail: f64 = xc.remainder().iter().zip(yc.remainder()).map(|(u, v)| u * v).sum();
    for (u, v) in xc.zip(yc) {
        for l in 0..4 {
            acc[l] += u[l] * v[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Loop kernels for products with a thin dimension, adding into `out`.
/// Element `(i, p)` of A is `a[i * sa[0] + p * sa[1]]`, likewise for B;
/// `out` is row-major `m x n`. Each branch keeps its inner loop on
/// contiguous memory.
fn small_gemm(a: &[f64], sa: [usize; 2], b: &[f64], sb: [usize; 2], (m, k, n): (usize, usize, usize), out: &mut [f64]) {
    let axpy = |acc: &mut [f64], f: f64, x: &[f64]| acc.iter_mut().zip(x).for_each(|(o, v)| *o += f * v);
    if n <= SMALL_DIM && sa[1] == 1 && sb[0] == 1 {
        // Rows of A against columns of B.
        for i in 0..m {
            let row = &a[i * sa[0]..i * sa[0] + k];
            for j in 0..n {
                out[i * n + j] += dot(row, &b[j * sb[1]..j * sb[1] + k]);
            }
        }
    } else if n <= SMALL_DIM && sa[0] == 1 {
        // Columns of A are contiguous: build C^T one row at a time.
        let mut ct = vec![0.0; m];
        for j in 0..n {
            ct.iter_mut().for_each(|v| *v = 0.0);
            for p in 0..k {
                axpy(&mut ct, b[p * sb[0] + j * sb[1]], &a[p * sa[1]..p * sa[1] + m]);
            }
            for (i, v) in ct.iter().enumerate() {
                out[i * n + j] += *v;
            }
        }
    } else if sb[1] == 1 || n == 1 {
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                axpy(row, a[i * sa[0] + p * sa[1]], &b[p * sb[0]..p * sb[0] + n]);
            }
        }
    } else {
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] += (0..k).map(|p| a[i * sa[0] + p * sa[1]] * b[p * sb[0] + j * sb[1]]).sum::<f64>();
            }
        }
    }
}

/// `C = op(A) * op(B)` for row-major matrices, with optional transposes.
pub(crate) fn gemm(a: &Tensor, trans_a: bool, b: &Tensor, trans_b: bool) -> Tensor {
    let m = if trans_a { a.cols() } else { a.rows() };
    let n = if trans_b { b.rows() } else { b.cols() };
    let mut out = vec![0.0; m * n];
    gemm_acc(a, trans_a, b, trans_b, &mut out);
    Tensor::from_parts(vec![m, n], out)
}

/// `C += op(A) * op(B)` into a row-major buffer of the product's shape.
pub(crate) fn gemm_acc(a: &Tensor, trans_a: bool, b: &Tensor, trans_b: bool, out: &mut [f64]) {
    let (ar, ac) = (a.rows(), a.cols());
    let (br, bc) = (b.rows(), b.cols());
    let (m, k) = if trans_a { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if trans_b { (bc, br) } else { (br, bc) };
    debug_assert_eq!(k, k2);
    assert_eq!(out.len(), m * n, "gemm output buffer");
    let (rsa, csa) = if trans_a { (1, ac) } else { (ac, 1) };
    let (rsb, csb) = if trans_b { (1, bc) } else { (bc, 1) };
    if m.min(n).min(k) <= SMALL_DIM {
        small_gemm(&a.data, [rsa, csa], &b.data, [rsb, csb], (m, k, n), out);
        return;
    }
    // SAFETY: strides describe exactly the row-major buffers of `a` and `b`,
    // and `out` holds m*n elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa as isize,
            csa as isize,
            b.data.as_ptr(),
            rsb as isize,
            csb as isize,
            1.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_construction() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
        assert!(matches!(
            Tensor::new(vec![2], vec![1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(Tensor::new(vec![1], vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn gemm_transposes() {
        let a = Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::matrix(3, 2, vec![1., 0., 0., 1., 1., 1.]).unwrap();
        assert_eq!(gemm(&a, false, &b, false).data(), &[4., 5., 10., 11.]);
        // a^T a
        let ata = gemm(&a, true, &a, false);
        assert_eq!(ata.shape(), &[3, 3]);
        assert_eq!(ata.data()[0], 17.0);
        assert_eq!(ata.data()[1], 22.0);
        // a a^T
        let aat = gemm(&a, false, &a, true);
        assert_eq!(aat.data(), &[14., 32., 32., 77.]);
    }

    #[test]
    fn small_and_packed_paths_agree() {
        let fill = |r: usize, c: usize, k: f64| {
            Tensor::matrix(r, c, (0..r * c).map(|i| ((i as f64 + k) * 0.37).sin()).collect()).unwrap()
        };
        for (m, k, n) in [(30, 20, 1), (30, 1, 20), (1, 20, 30), (30, 20, 25)] {
            for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
                let a = if ta { fill(k, m, 1.0) } else { fill(m, k, 1.0) };
                let b = if tb { fill(n, k, 2.0) } else { fill(k, n, 2.0) };
                let c = gemm(&a, ta, &b, tb);
                assert_eq!(c.shape(), &[m, n]);
                for i in 0..m {
                    for j in 0..n {
                        let want: f64 = (0..k)
                            .map(|p| {
                                let x = if ta { a.data[p * m + i] } else { a.data[i * k + p] };
                                let y = if tb { b.data[j * k + p] } else { b.data[p * n + j] };
                                x * y
                            })
                            .sum();
                        assert!((c.data[i * n + j] - want).abs() < 1e-12, "{m}x{k}x{n} {ta} {tb}");
                    }
                }
            }
        }
    }
}
