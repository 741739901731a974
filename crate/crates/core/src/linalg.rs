//! Small dense and row-sparse matrix helpers used by the projection code.

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data has wrong length");
        DenseMatrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        DenseMatrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
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

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `Aᵀ y`
    pub fn transpose_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            if yr != 0.0 {
                axpy(yr, self.row(r), &mut out);
            }
        }
        out
    }

    /// `A Aᵀ`, an `rows x rows` symmetric matrix.
    pub fn gram(&self) -> DenseMatrix {
        let m = self.rows;
        let mut g = DenseMatrix::zeros(m, m);
        for a in 0..m {
            for b in 0..=a {
                let v = dot(self.row(a), self.row(b));
                g.set(a, b, v);
                g.set(b, a, v);
            }
        }
        g
    }
}

/// Matrix stored as sorted, duplicate-free sparse rows. Constraint Jacobians
/// touch only a few time slices per row, so this is how they are assembled.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseRows {
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseRows {
    pub fn builder(cols: usize) -> SparseRowsBuilder {
        SparseRowsBuilder {
            rows: SparseRows {
                cols,
                indptr: vec![0],
                indices: Vec::new(),
                values: Vec::new(),
            },
            pending: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.indptr[r]..self.indptr[r + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.rows(), self.cols);
        for r in 0..self.rows() {
            let (idx, val) = self.row(r);
            for (&c, &v) in idx.iter().zip(val) {
                d.set(r, c, v);
            }
        }
        d
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows())
            .map(|r| {
                let (idx, val) = self.row(r);
                idx.iter().zip(val).map(|(&c, &v)| v * x[c]).sum()
            })
            .collect()
    }

    /// `Aᵀ y`
    pub fn transpose_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows());
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            let (idx, val) = self.row(r);
            for (&c, &v) in idx.iter().zip(val) {
                out[c] += v * yr;
            }
        }
        out
    }

    /// `A Aᵀ` as a dense symmetric matrix.
    pub fn gram(&self) -> DenseMatrix {
        let m = self.rows();
        let mut g = DenseMatrix::zeros(m, m);
        let mut scratch = vec![0.0; self.cols];
        for a in 0..m {
            let (ia, va) = self.row(a);
            for (&c, &v) in ia.iter().zip(va) {
                scratch[c] = v;
            }
            for b in 0..=a {
                let (ib, vb) = self.row(b);
                let s: f64 = ib.iter().zip(vb).map(|(&c, &v)| v * scratch[c]).sum();
                g.set(a, b, s);
                g.set(b, a, s);
            }
            for &c in ia {
                scratch[c] = 0.0;
            }
        }
        g
    }
}

pub struct SparseRowsBuilder {
    rows: SparseRows,
    pending: Vec<(usize, f64)>,
}

impl SparseRowsBuilder {
    /// Adds `v` at column `c` of the row being built; repeated columns sum.
    pub fn add(&mut self, c: usize, v: f64) {
        debug_assert!(c < self.rows.cols);
        self.pending.push((c, v));
    }

    pub fn finish_row(&mut self) {
        self.pending.sort_by_key(|&(c, _)| c);
        let mut last: Option<usize> = None;
        for &(c, v) in &self.pending {
            if last == Some(c) {
                *self.rows.values.last_mut().expect("previous entry") += v;
            } else {
                self.rows.indices.push(c);
                self.rows.values.push(v);
                last = Some(c);
            }
        }
        self.pending.clear();
        self.rows.indptr.push(self.rows.indices.len());
    }

    pub fn finish(self) -> SparseRows {
        assert!(self.pending.is_empty(), "unfinished row");
        self.rows
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Pivot that stopped a Cholesky factorization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FailedPivot {
    pub index: usize,
    pub value: f64,
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    /// Factors `a`. A pivot at or below `n * eps * max_diag` counts as a
    /// breakdown; the smallest pivot seen is reported.
    pub fn factor(a: &DenseMatrix) -> Result<Self, FailedPivot> {
        let n = a.rows();
        assert_eq!(n, a.cols(), "Cholesky needs a square matrix");
        let max_diag = (0..n).map(|i| a.get(i, i).abs()).fold(0.0f64, f64::max);
        let threshold = n as f64 * f64::EPSILON * max_diag;
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = a.get(j, j);
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > threshold) {
                return Err(FailedPivot { index: j, value: d });
            }
            let djj = d.sqrt();
            l[j * n + j] = djj;
            for i in j + 1..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / djj;
            }
        }
        Ok(Cholesky { n, l })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[i * n + k] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        y
    }
}
