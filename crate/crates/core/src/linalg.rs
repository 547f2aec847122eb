//! Dense complex matrices in split (re, im) storage, and the kernels the
//! network needs: strided complex products and an LU factorization with
//! partial pivoting that solves against both `A` and `Aᴴ`.
//!
//! Matrices are column-major. A complex product is four real products on the
//! split planes, which keeps every hot loop inside the real `gemm` backend.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Block width for the blocked factorization and triangular solves.
const BLOCK: usize = 48;

#[derive(Clone, Debug, PartialEq)]
pub struct CMat<T> {
    rows: usize,
    cols: usize,
    re: Vec<T>,
    im: Vec<T>,
}

impl<T: Scalar> CMat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMat {
            rows,
            cols,
            re: vec![T::zero(); rows * cols],
            im: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.re[i + i * n] = T::one();
        }
        m
    }

    /// Builds from column-major planes.
    pub fn from_parts(rows: usize, cols: usize, re: Vec<T>, im: Vec<T>) -> Result<Self> {
        let expected = rows * cols;
        if re.len() != expected {
            return Err(Error::LengthMismatch { expected, actual: re.len() });
        }
        if im.len() != expected {
            return Err(Error::LengthMismatch { expected, actual: im.len() });
        }
        Ok(CMat { rows, cols, re, im })
    }

    /// Real matrix from column-major data; imaginary plane zero.
    pub fn from_real(rows: usize, cols: usize, re: Vec<T>) -> Result<Self> {
        let im = vec![T::zero(); re.len()];
        Self::from_parts(rows, cols, re, im)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex<T>) -> Self {
        let mut m = Self::zeros(rows, cols);
        for j in 0..cols {
            for i in 0..rows {
                let z = f(i, j);
                m.re[i + j * rows] = z.re;
                m.im[i + j * rows] = z.im;
            }
        }
        m
    }

    pub fn column_vector(values: &[Complex<T>]) -> Self {
        Self::from_fn(values.len(), 1, |i, _| values[i])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn re(&self) -> &[T] {
        &self.re
    }

    pub fn im(&self) -> &[T] {
        &self.im
    }

    pub fn re_mut(&mut self) -> &mut [T] {
        &mut self.re
    }

    pub fn im_mut(&mut self) -> &mut [T] {
        &mut self.im
    }

    pub fn planes_mut(&mut self) -> (&mut [T], &mut [T]) {
        (&mut self.re, &mut self.im)
    }

    pub fn into_parts(self) -> (Vec<T>, Vec<T>) {
        (self.re, self.im)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex<T> {
        let k = i + j * self.rows;
        Complex::new(self.re[k], self.im[k])
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, z: Complex<T>) {
        let k = i + j * self.rows;
        self.re[k] = z.re;
        self.im[k] = z.im;
    }

    /// Index of the first non-finite real slot (re plane first, then im).
    pub fn first_non_finite(&self) -> Option<usize> {
        if let Some(k) = self.re.iter().position(|v| !v.is_finite()) {
            return Some(k);
        }
        self.im.iter().position(|v| !v.is_finite()).map(|k| k + self.len())
    }

    pub fn view(&self) -> CView<'_, T> {
        CView {
            re: &self.re,
            im: &self.im,
            rows: self.rows,
            cols: self.cols,
            rs: 1,
            cs: self.rows,
            conj: false,
        }
    }

    pub fn view_mut(&mut self) -> CViewMut<'_, T> {
        CViewMut {
            rows: self.rows,
            cols: self.cols,
            ld: self.rows,
            re: &mut self.re,
            im: &mut self.im,
        }
    }

    pub fn max_modulus(&self) -> T {
        self.re
            .iter()
            .zip(&self.im)
            .fold(T::zero(), |acc, (&r, &i)| acc.max(r.hypot(i)))
    }

    /// Frobenius norm.
    pub fn norm(&self) -> T {
        self.re
            .iter()
            .chain(&self.im)
            .fold(T::zero(), |acc, &v| acc + v * v)
            .sqrt()
    }

    /// Copy of columns `c0..c1`.
    pub fn columns(&self, c0: usize, c1: usize) -> Self {
        let r = self.rows;
        CMat {
            rows: r,
            cols: c1 - c0,
            re: self.re[c0 * r..c1 * r].to_vec(),
            im: self.im[c0 * r..c1 * r].to_vec(),
        }
    }

    /// Copy of rows `r0..r1`.
    pub fn row_range(&self, r0: usize, r1: usize) -> Self {
        let mut out = Self::zeros(r1 - r0, self.cols);
        for j in 0..self.cols {
            let src = j * self.rows;
            let dst = j * out.rows;
            out.re[dst..dst + r1 - r0].copy_from_slice(&self.re[src + r0..src + r1]);
            out.im[dst..dst + r1 - r0].copy_from_slice(&self.im[src + r0..src + r1]);
        }
        out
    }

    pub fn hcat(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::ShapeMismatch {
                op: "hcat",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut re = self.re.clone();
        re.extend_from_slice(&other.re);
        let mut im = self.im.clone();
        im.extend_from_slice(&other.im);
        Ok(CMat { rows: self.rows, cols: self.cols + other.cols, re, im })
    }

    pub fn vcat(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::ShapeMismatch {
                op: "vcat",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let rows = self.rows + other.rows;
        let mut out = Self::zeros(rows, self.cols);
        for j in 0..self.cols {
            let a = j * self.rows;
            let b = j * other.rows;
            let o = j * rows;
            out.re[o..o + self.rows].copy_from_slice(&self.re[a..a + self.rows]);
            out.im[o..o + self.rows].copy_from_slice(&self.im[a..a + self.rows]);
            out.re[o + self.rows..o + rows].copy_from_slice(&other.re[b..b + other.rows]);
            out.im[o + self.rows..o + rows].copy_from_slice(&other.im[b..b + other.rows]);
        }
        Ok(out)
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        cgemm(T::one(), self.view(), other.view(), T::zero(), &mut out.view_mut());
        Ok(out)
    }

    /// `self ← self + alpha·other`, shapes must match.
    pub fn axpy(&mut self, alpha: T, other: &Self) {
        assert_eq!(self.shape(), other.shape(), "axpy shape mismatch");
        for (a, &b) in self.re.iter_mut().zip(&other.re) {
            *a += alpha * b;
        }
        for (a, &b) in self.im.iter_mut().zip(&other.im) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: T) {
        for v in self.re.iter_mut().chain(self.im.iter_mut()) {
            *v *= alpha;
        }
    }

    pub fn cast<U: Scalar>(&self) -> CMat<U> {
        CMat {
            rows: self.rows,
            cols: self.cols,
            re: self.re.iter().map(|v| U::lit(v.as_f64())).collect(),
            im: self.im.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    /// Largest entrywise modulus of `self − other`.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape(), other.shape());
        self.re
            .iter()
            .zip(&self.im)
            .zip(other.re.iter().zip(&other.im))
            .fold(T::zero(), |acc, ((&a, &b), (&c, &d))| acc.max((a - c).hypot(b - d)))
    }
}

/// Read-only strided view, optionally conjugated.
///
/// Element `(i, j)` lives at `i·rs + j·cs` in both planes. A conjugate
/// transpose is a stride swap plus the `conj` flag, so `Aᴴ` costs nothing.
#[derive(Clone, Copy, Debug)]
pub struct CView<'a, T> {
    re: &'a [T],
    im: &'a [T],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
    conj: bool,
}

impl<'a, T: Scalar> CView<'a, T> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Conjugate transpose.
    pub fn h(self) -> Self {
        CView {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            conj: !self.conj,
            ..self
        }
    }

    pub fn sub(self, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        assert!(r0 + rows <= self.rows && c0 + cols <= self.cols, "sub-view out of bounds");
        if rows == 0 || cols == 0 {
            return CView { rows, cols, re: &[], im: &[], ..self };
        }
        let off = r0 * self.rs + c0 * self.cs;
        CView {
            re: &self.re[off..],
            im: &self.im[off..],
            rows,
            cols,
            ..self
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex<T> {
        let k = i * self.rs + j * self.cs;
        let im = self.im[k];
        Complex::new(self.re[k], if self.conj { -im } else { im })
    }

    fn check_extent(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.re.len() && last < self.im.len(), "view exceeds storage");
        }
    }
}

/// Mutable column-major view with leading dimension `ld`.
#[derive(Debug)]
pub struct CViewMut<'a, T> {
    re: &'a mut [T],
    im: &'a mut [T],
    rows: usize,
    cols: usize,
    ld: usize,
}

impl<'a, T: Scalar> CViewMut<'a, T> {
    pub fn sub(&mut self, r0: usize, c0: usize, rows: usize, cols: usize) -> CViewMut<'_, T> {
        assert!(r0 + rows <= self.rows && c0 + cols <= self.cols, "sub-view out of bounds");
        let off = if rows == 0 || cols == 0 { 0 } else { r0 + c0 * self.ld };
        CViewMut {
            re: &mut self.re[off..],
            im: &mut self.im[off..],
            rows,
            cols,
            ld: self.ld,
        }
    }

    fn check_extent(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = (self.rows - 1) + (self.cols - 1) * self.ld;
            assert!(last < self.re.len() && last < self.im.len(), "view exceeds storage");
        }
    }

    fn scale(&mut self, beta: T) {
        for j in 0..self.cols {
            let col = j * self.ld;
            for i in 0..self.rows {
                if beta == T::zero() {
                    self.re[col + i] = T::zero();
                    self.im[col + i] = T::zero();
                } else {
                    self.re[col + i] *= beta;
                    self.im[col + i] *= beta;
                }
            }
        }
    }
}

/// `C ← α·A·B + β·C` for complex views, with real `α`, `β`.
pub fn cgemm<T: Scalar>(alpha: T, a: CView<'_, T>, b: CView<'_, T>, beta: T, c: &mut CViewMut<'_, T>) {
    assert_eq!(a.rows, c.rows, "cgemm: rows of A and C differ");
    assert_eq!(b.cols, c.cols, "cgemm: cols of B and C differ");
    assert_eq!(a.cols, b.rows, "cgemm: inner dimensions differ");
    a.check_extent();
    b.check_extent();
    c.check_extent();
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.scale(beta);
        return;
    }
    let sa = if a.conj { -T::one() } else { T::one() };
    let sb = if b.conj { -T::one() } else { T::one() };
    let (rsa, csa) = (a.rs as isize, a.cs as isize);
    let (rsb, csb) = (b.rs as isize, b.cs as isize);
    let ld = c.ld as isize;
    // SAFETY: all four views were checked against their storage above, and C
    // is a unique borrow so it cannot alias A or B.
    unsafe {
        let cre = c.re.as_mut_ptr();
        let cim = c.im.as_mut_ptr();
        T::gemm(m, k, n, alpha, a.re.as_ptr(), rsa, csa, b.re.as_ptr(), rsb, csb, beta, cre, 1, ld);
        T::gemm(m, k, n, -alpha * sa * sb, a.im.as_ptr(), rsa, csa, b.im.as_ptr(), rsb, csb, T::one(), cre, 1, ld);
        T::gemm(m, k, n, alpha * sb, a.re.as_ptr(), rsa, csa, b.im.as_ptr(), rsb, csb, beta, cim, 1, ld);
        T::gemm(m, k, n, alpha * sa, a.im.as_ptr(), rsa, csa, b.re.as_ptr(), rsb, csb, T::one(), cim, 1, ld);
    }
}

/// Row `i` of `x` multiplied by the complex scalar `d[i]`; `d` is a column.
pub fn scale_rows<T: Scalar>(d: &CMat<T>, x: &CMat<T>) -> CMat<T> {
    assert_eq!(d.rows, x.rows, "scale_rows: length mismatch");
    let mut out = CMat::zeros(x.rows, x.cols);
    for j in 0..x.cols {
        for i in 0..x.rows {
            let k = i + j * x.rows;
            let (dr, di) = (d.re[i], d.im[i]);
            let (xr, xi) = (x.re[k], x.im[k]);
            out.re[k] = dr * xr - di * xi;
            out.im[k] = dr * xi + di * xr;
        }
    }
    out
}

/// `tanh` applied separately to the real and imaginary parts of rows `0..n`.
pub fn split_tanh_in_place<T: Scalar>(x: &mut CMat<T>, n: usize) {
    let rows = x.rows;
    for j in 0..x.cols {
        let col = j * rows;
        for k in col..col + n {
            x.re[k] = x.re[k].tanh();
            x.im[k] = x.im[k].tanh();
        }
    }
}

/// `PA = LU` with unit-lower `L` and upper `U` packed into one matrix.
#[derive(Clone, Debug)]
pub struct Lu<T> {
    lu: CMat<T>,
    piv: Vec<usize>,
}

impl<T: Scalar> Lu<T> {
    /// Relative pivot threshold: a pivot below `1e-12·max|a|` is singular.
    pub const RELATIVE_PIVOT_TOL: f64 = 1e-12;

    pub fn factor(a: &CMat<T>) -> Result<Self> {
        let n = a.rows();
        if n != a.cols() {
            return Err(Error::ShapeMismatch { op: "lu", left: a.shape(), right: (n, n) });
        }
        if n == 0 {
            return Err(Error::EmptyShape { rows: 0, cols: 0 });
        }
        let tol = T::lit(Self::RELATIVE_PIVOT_TOL) * a.max_modulus();
        let mut lu = a.clone();
        let mut piv = vec![0; n];
        let mut k0 = 0;
        while k0 < n {
            let k1 = (k0 + BLOCK).min(n);
            factor_panel(&mut lu, &mut piv, k0, k1, tol)?;
            if k1 < n {
                update_trailing(&mut lu, k0, k1);
            }
            k0 = k1;
        }
        Ok(Lu { lu, piv })
    }

    pub fn dim(&self) -> usize {
        self.lu.rows()
    }

    /// Packed factors; strictly lower part is `L`, upper part is `U`.
    pub fn packed(&self) -> &CMat<T> {
        &self.lu
    }

    pub fn pivots(&self) -> &[usize] {
        &self.piv
    }

    /// Solves `A·X = B`.
    pub fn solve(&self, b: &CMat<T>) -> Result<CMat<T>> {
        self.check_rhs(b)?;
        let mut x = b.clone();
        for (j, &p) in self.piv.iter().enumerate() {
            swap_rows(&mut x, j, p);
        }
        trsm(&self.lu, Tri::UnitLower, &mut x);
        trsm(&self.lu, Tri::Upper, &mut x);
        Ok(x)
    }

    /// Solves `Aᴴ·X = B`.
    pub fn solve_adjoint(&self, b: &CMat<T>) -> Result<CMat<T>> {
        self.check_rhs(b)?;
        let mut x = b.clone();
        trsm(&self.lu, Tri::UpperAdjoint, &mut x);
        trsm(&self.lu, Tri::UnitLowerAdjoint, &mut x);
        for (j, &p) in self.piv.iter().enumerate().rev() {
            swap_rows(&mut x, j, p);
        }
        Ok(x)
    }

    fn check_rhs(&self, b: &CMat<T>) -> Result<()> {
        if b.rows() != self.dim() {
            return Err(Error::ShapeMismatch {
                op: "solve",
                left: self.lu.shape(),
                right: b.shape(),
            });
        }
        Ok(())
    }
}

fn swap_rows<T: Scalar>(m: &mut CMat<T>, a: usize, b: usize) {
    if a == b {
        return;
    }
    let r = m.rows;
    for j in 0..m.cols {
        m.re.swap(a + j * r, b + j * r);
        m.im.swap(a + j * r, b + j * r);
    }
}

/// Unblocked right-looking elimination of columns `k0..k1`, pivoting over
/// rows `j..n` and swapping whole rows.
fn factor_panel<T: Scalar>(lu: &mut CMat<T>, piv: &mut [usize], k0: usize, k1: usize, tol: T) -> Result<()> {
    let n = lu.rows;
    for j in k0..k1 {
        let col = j * n;
        let mut p = j;
        let mut best = T::zero();
        for i in j..n {
            let m2 = lu.re[col + i] * lu.re[col + i] + lu.im[col + i] * lu.im[col + i];
            if m2 > best {
                best = m2;
                p = i;
            }
        }
        if !(best.sqrt() >= tol) || best == T::zero() {
            return Err(Error::SingularBasis { pivot: j });
        }
        piv[j] = p;
        swap_rows(lu, j, p);
        let d = Complex::new(lu.re[col + j], lu.im[col + j]);
        let inv = d.inv();
        for i in j + 1..n {
            let z = Complex::new(lu.re[col + i], lu.im[col + i]) * inv;
            lu.re[col + i] = z.re;
            lu.im[col + i] = z.im;
        }
        for c in j + 1..k1 {
            let cc = c * n;
            let (fr, fi) = (lu.re[cc + j], lu.im[cc + j]);
            if fr == T::zero() && fi == T::zero() {
                continue;
            }
            for i in j + 1..n {
                let (lr, li) = (lu.re[col + i], lu.im[col + i]);
                lu.re[cc + i] -= lr * fr - li * fi;
                lu.im[cc + i] -= lr * fi + li * fr;
            }
        }
    }
    Ok(())
}

/// After factoring panel `k0..k1`: form `U12 = L11⁻¹·A12` and update
/// `A22 ← A22 − L21·U12`.
fn update_trailing<T: Scalar>(lu: &mut CMat<T>, k0: usize, k1: usize) {
    let n = lu.rows;
    let kb = k1 - k0;
    for c in k1..n {
        let cc = c * n;
        for j in k0..k1 {
            let (xr, xi) = (lu.re[cc + j], lu.im[cc + j]);
            if xr == T::zero() && xi == T::zero() {
                continue;
            }
            let lc = j * n;
            for i in j + 1..k1 {
                let (lr, li) = (lu.re[lc + i], lu.im[lc + i]);
                lu.re[cc + i] -= lr * xr - li * xi;
                lu.im[cc + i] -= lr * xi + li * xr;
            }
        }
    }
    let rest = n - k1;
    let l21 = lu.view().sub(k1, k0, rest, kb);
    let l21 = CMat::from_fn(rest, kb, |i, j| l21.get(i, j));
    let u12 = lu.view().sub(k0, k1, kb, rest);
    let u12 = CMat::from_fn(kb, rest, |i, j| u12.get(i, j));
    let mut all = lu.view_mut();
    let mut a22 = all.sub(k1, k1, rest, rest);
    cgemm(-T::one(), l21.view(), u12.view(), T::one(), &mut a22);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Tri {
    /// `L`, unit diagonal, forward substitution.
    UnitLower,
    /// `U`, backward substitution.
    Upper,
    /// `Uᴴ`, lower triangular, forward substitution.
    UpperAdjoint,
    /// `Lᴴ`, unit upper triangular, backward substitution.
    UnitLowerAdjoint,
}

/// Blocked in-place triangular solve `op(T)·X = B` against packed LU factors.
fn trsm<T: Scalar>(lu: &CMat<T>, tri: Tri, b: &mut CMat<T>) {
    let n = lu.rows;
    let r = b.cols;
    let forward = matches!(tri, Tri::UnitLower | Tri::UpperAdjoint);
    let starts: Vec<usize> = (0..n).step_by(BLOCK).collect();
    let order: Box<dyn Iterator<Item = &usize>> = if forward {
        Box::new(starts.iter())
    } else {
        Box::new(starts.iter().rev())
    };
    for &k0 in order {
        let k1 = (k0 + BLOCK).min(n);
        for c in 0..r {
            solve_diag_block(lu, tri, b, c, k0, k1);
        }
        let block = b.row_range(k0, k1);
        let kb = k1 - k0;
        // Operator entries coupling the solved block to the rows still pending.
        let (r0, rows) = if forward { (k1, n - k1) } else { (0, k0) };
        if rows == 0 {
            continue;
        }
        let coupling = match tri {
            Tri::UnitLower | Tri::Upper => lu.view().sub(r0, k0, rows, kb),
            Tri::UpperAdjoint | Tri::UnitLowerAdjoint => lu.view().sub(k0, r0, kb, rows).h(),
        };
        let mut bv = b.view_mut();
        let mut target = bv.sub(r0, 0, rows, r);
        cgemm(-T::one(), coupling, block.view(), T::one(), &mut target);
    }
}

fn solve_diag_block<T: Scalar>(lu: &CMat<T>, tri: Tri, b: &mut CMat<T>, c: usize, k0: usize, k1: usize) {
    let n = lu.rows;
    let bc = c * b.rows;
    let (lre, lim) = (&lu.re, &lu.im);
    let (bre, bim) = (&mut b.re, &mut b.im);
    match tri {
        Tri::UnitLower => {
            for j in k0..k1 {
                let (xr, xi) = (bre[bc + j], bim[bc + j]);
                let lc = j * n;
                for i in j + 1..k1 {
                    let (lr, li) = (lre[lc + i], lim[lc + i]);
                    bre[bc + i] -= lr * xr - li * xi;
                    bim[bc + i] -= lr * xi + li * xr;
                }
            }
        }
        Tri::Upper => {
            for j in (k0..k1).rev() {
                let uc = j * n;
                let x = Complex::new(bre[bc + j], bim[bc + j]) / Complex::new(lre[uc + j], lim[uc + j]);
                bre[bc + j] = x.re;
                bim[bc + j] = x.im;
                for i in k0..j {
                    let (ur, ui) = (lre[uc + i], lim[uc + i]);
                    bre[bc + i] -= ur * x.re - ui * x.im;
                    bim[bc + i] -= ur * x.im + ui * x.re;
                }
            }
        }
        Tri::UpperAdjoint => {
            // Row i of Uᴴ is the conjugate of column i of U.
            for i in k0..k1 {
                let uc = i * n;
                let mut acc = Complex::new(bre[bc + i], bim[bc + i]);
                for j in k0..i {
                    let u = Complex::new(lre[uc + j], -lim[uc + j]);
                    acc -= u * Complex::new(bre[bc + j], bim[bc + j]);
                }
                let x = acc / Complex::new(lre[uc + i], -lim[uc + i]);
                bre[bc + i] = x.re;
                bim[bc + i] = x.im;
            }
        }
        Tri::UnitLowerAdjoint => {
            // Row i of Lᴴ is the conjugate of column i of L below the diagonal.
            for i in (k0..k1).rev() {
                let lc = i * n;
                let mut acc = Complex::new(bre[bc + i], bim[bc + i]);
                for j in i + 1..k1 {
                    let l = Complex::new(lre[lc + j], -lim[lc + j]);
                    acc -= l * Complex::new(bre[bc + j], bim[bc + j]);
                }
                bre[bc + i] = acc.re;
                bim[bc + i] = acc.im;
            }
        }
    }
}
