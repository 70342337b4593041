use crate::{Error, Result};

/// Dense row-major matrix of f64. All math in this crate runs through it.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2D {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2D {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimMismatch(format!(
                "expected {}x{}={} values, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        Ok(Tensor2D { rows, cols, data })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let c = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(n * c);
        for r in &rows {
            if r.len() != c {
                return Err(Error::DimMismatch("ragged row lengths".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Tensor2D { rows: n, cols: c, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor2D {
        Tensor2D {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// self (m x k) * rhs (k x n). Loop order keeps both inner accesses
    /// contiguous so the compiler can vectorize.
    pub fn matmul(&self, rhs: &Tensor2D) -> Tensor2D {
        assert_eq!(self.cols, rhs.rows, "matmul dims {}x{} * {}x{}", self.rows, self.cols, rhs.rows, rhs.cols);
        let mut out = Tensor2D::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let o_row = out.row_mut(i);
            for (k, &a) in a_row.iter().enumerate() {
                let b_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// self^T (cols x rows) * rhs, without materializing the transpose.
    pub fn matmul_tn(&self, rhs: &Tensor2D) -> Tensor2D {
        assert_eq!(self.rows, rhs.rows, "matmul_tn dims");
        let mut out = Tensor2D::zeros(self.cols, rhs.cols);
        for r in 0..self.rows {
            let a_row = self.row(r);
            let b_row = rhs.row(r);
            for (k, &a) in a_row.iter().enumerate() {
                let o_row = out.row_mut(k);
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// self (m x k) * rhs^T (k x n) where rhs is (n x k).
    pub fn matmul_nt(&self, rhs: &Tensor2D) -> Tensor2D {
        assert_eq!(self.cols, rhs.cols, "matmul_nt dims");
        let mut out = Tensor2D::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let o_row = out.row_mut(i);
            for j in 0..rhs.rows {
                let b_row = rhs.row(j);
                let mut acc = 0.0;
                for (&a, &b) in a_row.iter().zip(b_row) {
                    acc += a * b;
                }
                o_row[j] = acc;
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Tensor2D) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// Adds `row` (1 x cols) to every row of self.
    pub fn add_row_broadcast(&mut self, row: &Tensor2D) {
        assert_eq!(row.rows, 1);
        assert_eq!(row.cols, self.cols);
        for r in 0..self.rows {
            let dst = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (d, &s) in dst.iter_mut().zip(&row.data) {
                *d += s;
            }
        }
    }

    /// Sum over rows, yielding 1 x cols.
    pub fn column_sums(&self) -> Tensor2D {
        let mut out = Tensor2D::zeros(1, self.cols);
        for r in 0..self.rows {
            let src = self.row(r);
            for (o, &s) in out.data.iter_mut().zip(src) {
                *o += s;
            }
        }
        out
    }

    pub fn concat_cols(&self, other: &Tensor2D) -> Result<Tensor2D> {
        if self.rows != other.rows {
            return Err(Error::DimMismatch(format!(
                "concat rows {} vs {}",
                self.rows, other.rows
            )));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(other.row(r));
        }
        Ok(Tensor2D {
            rows: self.rows,
            cols,
            data,
        })
    }

    /// Splits columns at `at`, inverse of concat_cols.
    pub fn split_cols(&self, at: usize) -> (Tensor2D, Tensor2D) {
        assert!(at <= self.cols);
        let mut left = Tensor2D::zeros(self.rows, at);
        let mut right = Tensor2D::zeros(self.rows, self.cols - at);
        for r in 0..self.rows {
            let src = self.row(r);
            left.row_mut(r).copy_from_slice(&src[..at]);
            right.row_mut(r).copy_from_slice(&src[at..]);
        }
        (left, right)
    }

    /// Copy of columns start..start+width.
    pub fn slice_cols(&self, start: usize, width: usize) -> Tensor2D {
        assert!(start + width <= self.cols);
        let mut out = Tensor2D::zeros(self.rows, width);
        for r in 0..self.rows {
            out.row_mut(r)
                .copy_from_slice(&self.row(r)[start..start + width]);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Tensor2D::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor2D::from_rows(vec![vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        let c = a.matmul(&b);
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_variants_agree() {
        let a = Tensor2D::from_rows(vec![vec![1.0, -2.0, 0.5], vec![3.0, 4.0, -1.0]]).unwrap();
        let b = Tensor2D::from_rows(vec![vec![2.0, 1.0], vec![0.0, -1.0], vec![5.0, 2.0]]).unwrap();
        let ab = a.matmul(&b);

        // a^T via matmul_tn on a transposed copy should reproduce ab
        let mut at = Tensor2D::zeros(3, 2);
        for r in 0..2 {
            for c in 0..3 {
                at.set(c, r, a.get(r, c));
            }
        }
        assert_eq!(at.matmul_tn(&b).data(), ab.data());

        let mut bt = Tensor2D::zeros(2, 3);
        for r in 0..3 {
            for c in 0..2 {
                bt.set(c, r, b.get(r, c));
            }
        }
        assert_eq!(a.matmul_nt(&bt).data(), ab.data());
    }

    #[test]
    fn concat_and_split_round_trip() {
        let a = Tensor2D::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor2D::from_rows(vec![vec![5.0], vec![6.0]]).unwrap();
        let joined = a.concat_cols(&b).unwrap();
        assert_eq!(joined.cols(), 3);
        let (l, r) = joined.split_cols(2);
        assert_eq!(l, a);
        assert_eq!(r, b);
    }

    #[test]
    fn from_vec_rejects_bad_len() {
        assert!(Tensor2D::from_vec(2, 2, vec![1.0; 3]).is_err());
    }
}
