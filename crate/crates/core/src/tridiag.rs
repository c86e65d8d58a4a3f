//! Thomas algorithm for complex tridiagonal systems with a pre-factored
//! matrix, so that repeated solves against the same operator only pay for
//! the substitution sweeps.

use num_complex::Complex64;

/// LU factors of a tridiagonal matrix with sub-diagonal `lower`, diagonal
/// `diag` and super-diagonal `upper`, stored so that the forward sweep reads
/// `x[k] = b[k] inv[k] - mult[k] x[k-1]` with `mult[k] = lower[k] inv[k]`.
///
/// A row with a zero pivot reciprocal is a pinned Dirichlet row: the solve
/// writes zero there whatever the right-hand side.
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagFactors {
    mult: Vec<Complex64>,
    inv_pivot: Vec<Complex64>,
    upper_scaled: Vec<Complex64>,
}

impl TridiagFactors {
    /// Factors the system. `pinned[k]` forces row `k` to the identity with a
    /// zero right-hand side and decouples it from its neighbours.
    pub fn new(lower: &[Complex64], diag: &[Complex64], upper: &[Complex64], pinned: &[bool]) -> Self {
        let n = diag.len();
        assert!(lower.len() == n && upper.len() == n && pinned.len() == n);
        let zero = Complex64::new(0.0, 0.0);
        let mut mult = vec![zero; n];
        let mut inv = vec![zero; n];
        let mut up = vec![zero; n];
        let mut prev_up = zero;
        for k in 0..n {
            if pinned[k] {
                prev_up = zero;
                continue;
            }
            let l = if k > 0 && !pinned[k - 1] { lower[k] } else { zero };
            let u = if k + 1 < n && !pinned[k + 1] { upper[k] } else { zero };
            let r = 1.0 / (diag[k] - l * prev_up);
            mult[k] = l * r;
            inv[k] = r;
            up[k] = u * r;
            prev_up = up[k];
        }
        Self {
            mult,
            inv_pivot: inv,
            upper_scaled: up,
        }
    }

    pub fn len(&self) -> usize {
        self.inv_pivot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inv_pivot.is_empty()
    }

    pub(crate) fn mult(&self) -> &[Complex64] {
        &self.mult
    }

    pub(crate) fn inv_pivot(&self) -> &[Complex64] {
        &self.inv_pivot
    }

    pub(crate) fn upper_scaled(&self) -> &[Complex64] {
        &self.upper_scaled
    }

    /// Solves in place: `rhs` becomes the solution.
    pub fn solve(&self, rhs: &mut [Complex64]) {
        let n = rhs.len();
        assert_eq!(n, self.len());
        if n == 0 {
            return;
        }
        let (m, inv, up) = (&self.mult[..n], &self.inv_pivot[..n], &self.upper_scaled[..n]);
        let mut prev = rhs[0] * inv[0];
        rhs[0] = prev;
        for k in 1..n {
            prev = rhs[k] * inv[k] - m[k] * prev;
            rhs[k] = prev;
        }
        for k in (0..n - 1).rev() {
            prev = rhs[k] - up[k] * prev;
            rhs[k] = prev;
        }
    }
}

/// Solves four independent systems of equal length in lockstep. The
/// substitution recurrences are latency bound; interleaving four of them
/// lets consecutive iterations overlap. Each line gets exactly the
/// arithmetic of [`TridiagFactors::solve`].
pub fn solve4(f: [&TridiagFactors; 4], lines: [&mut [Complex64]; 4]) {
    let n = lines[0].len();
    assert!(lines.iter().all(|l| l.len() == n) && f.iter().all(|f| f.len() == n));
    if n == 0 {
        return;
    }
    let [a, b, c, d] = lines;
    let (ma, ia, ua) = (&f[0].mult[..n], &f[0].inv_pivot[..n], &f[0].upper_scaled[..n]);
    let (mb, ib, ub) = (&f[1].mult[..n], &f[1].inv_pivot[..n], &f[1].upper_scaled[..n]);
    let (mc, ic, uc) = (&f[2].mult[..n], &f[2].inv_pivot[..n], &f[2].upper_scaled[..n]);
    let (md, id, ud) = (&f[3].mult[..n], &f[3].inv_pivot[..n], &f[3].upper_scaled[..n]);
    let (a, b, c, d) = (&mut a[..n], &mut b[..n], &mut c[..n], &mut d[..n]);
    let (mut pa, mut pb, mut pc, mut pd) = (a[0] * ia[0], b[0] * ib[0], c[0] * ic[0], d[0] * id[0]);
    a[0] = pa;
    b[0] = pb;
    c[0] = pc;
    d[0] = pd;
    for k in 1..n {
        pa = a[k] * ia[k] - ma[k] * pa;
        pb = b[k] * ib[k] - mb[k] * pb;
        pc = c[k] * ic[k] - mc[k] * pc;
        pd = d[k] * id[k] - md[k] * pd;
        a[k] = pa;
        b[k] = pb;
        c[k] = pc;
        d[k] = pd;
    }
    for k in (0..n - 1).rev() {
        pa = a[k] - ua[k] * pa;
        pb = b[k] - ub[k] * pb;
        pc = c[k] - uc[k] * pc;
        pd = d[k] - ud[k] * pd;
        a[k] = pa;
        b[k] = pb;
        c[k] = pc;
        d[k] = pd;
    }
}

/// Solves the consecutive length-`n` lines stored in `data`, line `q`
/// using `factors(q)`. Groups of four go through [`solve4`].
pub fn solve_lines<'f>(data: &mut [Complex64], n: usize, factors: impl Fn(usize) -> &'f TridiagFactors) {
    let m = data.len() / n;
    let mut q = 0;
    let mut rest = data;
    while m - q >= 4 {
        let (head, tail) = rest.split_at_mut(4 * n);
        let (l0, h) = head.split_at_mut(n);
        let (l1, h) = h.split_at_mut(n);
        let (l2, l3) = h.split_at_mut(n);
        solve4([factors(q), factors(q + 1), factors(q + 2), factors(q + 3)], [l0, l1, l2, l3]);
        rest = tail;
        q += 4;
    }
    for line in rest.chunks_mut(n) {
        factors(q).solve(line);
        q += 1;
    }
}

/// Dense matrix-vector product with the unfactored tridiagonal operator;
/// used by tests as an independent check on the solver.
pub fn tridiag_apply(lower: &[Complex64], diag: &[Complex64], upper: &[Complex64], x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            let mut s = diag[k] * x[k];
            if k > 0 {
                s += lower[k] * x[k - 1];
            }
            if k + 1 < n {
                s += upper[k] * x[k + 1];
            }
            s
        })
        .collect()
}
