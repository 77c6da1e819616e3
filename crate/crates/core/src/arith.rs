//! Sequential recursive H-arithmetic: multiplication, LU factorization and
//! triangular solves.
//!
//! `L` and `U` are separate H-matrices over the block tree of `A`; `A` is
//! overwritten by the updates of the factorization.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::hmatrix::{add_into, product, Ctx, HRef, HMatrix, Leaf, LowRank, ZERO_CUTOFF};
use crate::trees::BlockId;

fn conformal(what: &str, ok: bool) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::NonConformal(what.to_string()))
    }
}

/// `C := C + alpha * A * B`.
pub fn hmul(alpha: f64, a: HRef<'_>, b: HRef<'_>, c: HRef<'_>, ctx: &Ctx) -> Result<()> {
    conformal(
        "hmul operands",
        a.rows() == c.rows() && a.cols() == b.rows() && b.cols() == c.cols(),
    )?;
    if alpha == 0.0 {
        return Ok(());
    }
    hmul_rec(alpha, a, b, c, ctx);
    Ok(())
}

fn hmul_rec(alpha: f64, a: HRef<'_>, b: HRef<'_>, c: HRef<'_>, ctx: &Ctx) {
    if a.is_leaf() || b.is_leaf() || c.is_leaf() {
        if let Some(upd) = product(alpha, a, b) {
            add_into(c, upd, ctx);
        }
        return;
    }
    let cn = c.node();
    let inner = a.node().col_sons;
    for i in 0..cn.row_sons() {
        for j in 0..cn.col_sons {
            for l in 0..inner {
                hmul_rec(alpha, a.child(i, l), b.child(l, j), c.child(i, j), ctx);
            }
        }
    }
}

/// Factorizes the diagonal block `t x t` of `A` into `L * U`.
pub fn hlu(a: &HMatrix, l: &HMatrix, u: &HMatrix, b: BlockId, ctx: &Ctx) -> Result<()> {
    let node = a.block(b);
    conformal("hlu needs a diagonal block", node.rows == node.cols)?;
    if node.is_leaf() {
        return leaf_lu(a, l, u, b);
    }
    let blk = |i, j| a.tree().child(b, i, j);
    hlu(a, l, u, blk(0, 0), ctx)?;
    htrsu(HRef::new(u, blk(0, 0)), HRef::new(a, blk(1, 0)), HRef::new(l, blk(1, 0)), ctx)?;
    htrsl(HRef::new(l, blk(0, 0)), HRef::new(a, blk(0, 1)), HRef::new(u, blk(0, 1)), ctx)?;
    hmul(-1.0, HRef::new(l, blk(1, 0)), HRef::new(u, blk(0, 1)), HRef::new(a, blk(1, 1)), ctx)?;
    hlu(a, l, u, blk(1, 1), ctx)
}

/// Dense LU of a leaf diagonal block without pivoting.
pub(crate) fn leaf_lu(a: &HMatrix, l: &HMatrix, u: &HMatrix, b: BlockId) -> Result<()> {
    let dense = match a.leaf(b).as_ref() {
        Some(Leaf::Dense(d)) => d.clone(),
        Some(Leaf::LowRank(r)) => r.to_dense(),
        None => DMatrix::zeros(a.block(b).rows.size(), a.block(b).cols.size()),
    };
    let (lf, uf) = dense_lu(dense)?;
    l.set_leaf(b, Some(Leaf::Dense(lf)))?;
    u.set_leaf(b, Some(Leaf::Dense(uf)))?;
    Ok(())
}

/// Unpivoted LU: unit lower `L` and upper `U`. A pivot below
/// `1e-14 * ||A||_F` is reported as singular.
pub fn dense_lu(mut m: DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::DimensionMismatch(format!("LU of {}x{}", n, m.ncols())));
    }
    let threshold = ZERO_CUTOFF * m.norm();
    for k in 0..n {
        let pivot = m[(k, k)];
        if pivot.abs() < threshold || pivot == 0.0 {
            return Err(Error::SingularPivot { index: k, pivot, threshold });
        }
        for i in k + 1..n {
            m[(i, k)] /= pivot;
        }
        for j in k + 1..n {
            let ukj = m[(k, j)];
            if ukj != 0.0 {
                for i in k + 1..n {
                    let lik = m[(i, k)];
                    m[(i, j)] -= lik * ukj;
                }
            }
        }
    }
    let l = DMatrix::from_fn(n, n, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Greater => m[(i, j)],
        std::cmp::Ordering::Equal => 1.0,
        std::cmp::Ordering::Less => 0.0,
    });
    let u = DMatrix::from_fn(n, n, |i, j| if i <= j { m[(i, j)] } else { 0.0 });
    Ok((l, u))
}

/// Solves `L * X = M` with unit lower triangular `L` on `t x t`.
pub fn htrsl(l: HRef<'_>, m: HRef<'_>, x: HRef<'_>, ctx: &Ctx) -> Result<()> {
    conformal(
        "htrsl operands",
        l.rows() == l.cols() && l.cols() == m.rows() && m.rows() == x.rows() && m.cols() == x.cols(),
    )?;
    if m.is_leaf() {
        return leaf_solve_lower(l, m, x);
    }
    htrsl(l.child(0, 0), m.child(0, 0), x.child(0, 0), ctx)?;
    htrsl(l.child(0, 0), m.child(0, 1), x.child(0, 1), ctx)?;
    hmul(-1.0, l.child(1, 0), x.child(0, 0), m.child(1, 0), ctx)?;
    hmul(-1.0, l.child(1, 0), x.child(0, 1), m.child(1, 1), ctx)?;
    htrsl(l.child(1, 1), m.child(1, 0), x.child(1, 0), ctx)?;
    htrsl(l.child(1, 1), m.child(1, 1), x.child(1, 1), ctx)
}

/// Solves `X * U = M` with upper triangular `U` on `t x t`.
pub fn htrsu(u: HRef<'_>, m: HRef<'_>, x: HRef<'_>, ctx: &Ctx) -> Result<()> {
    conformal(
        "htrsu operands",
        u.rows() == u.cols() && u.rows() == m.cols() && m.rows() == x.rows() && m.cols() == x.cols(),
    )?;
    if m.is_leaf() {
        return leaf_solve_upper(u, m, x);
    }
    htrsu(u.child(0, 0), m.child(0, 0), x.child(0, 0), ctx)?;
    htrsu(u.child(0, 0), m.child(1, 0), x.child(1, 0), ctx)?;
    hmul(-1.0, x.child(0, 0), u.child(0, 1), m.child(0, 1), ctx)?;
    hmul(-1.0, x.child(1, 0), u.child(0, 1), m.child(1, 1), ctx)?;
    htrsu(u.child(1, 1), m.child(0, 1), x.child(0, 1), ctx)?;
    htrsu(u.child(1, 1), m.child(1, 1), x.child(1, 1), ctx)
}

/// Forward substitution on a leaf `M`; for low-rank `M` only the `U`
/// factor is solved.
pub(crate) fn leaf_solve_lower(l: HRef<'_>, m: HRef<'_>, x: HRef<'_>) -> Result<()> {
    let solved = match m.mat.leaf(m.block).clone() {
        None => None,
        Some(Leaf::Dense(mut d)) => {
            solve_lower_in_place(l, &mut d);
            Some(Leaf::Dense(d))
        }
        Some(Leaf::LowRank(LowRank { mut u, v })) => {
            solve_lower_in_place(l, &mut u);
            Some(Leaf::LowRank(LowRank { u, v }))
        }
    };
    x.mat.set_leaf(x.block, solved)
}

/// Column-wise back substitution on a leaf `M`; for low-rank `M` only the
/// `V` factor is solved.
pub(crate) fn leaf_solve_upper(u: HRef<'_>, m: HRef<'_>, x: HRef<'_>) -> Result<()> {
    let solved = match m.mat.leaf(m.block).clone() {
        None => None,
        Some(Leaf::Dense(mut d)) => {
            solve_upper_right_in_place(u, &mut d);
            Some(Leaf::Dense(d))
        }
        Some(Leaf::LowRank(LowRank { u: left, v })) => {
            // X U = W Z^T  <=>  (Z^T U^-1)^T = U^-T Z
            let mut zt = v.transpose();
            solve_upper_right_in_place(u, &mut zt);
            Some(Leaf::LowRank(LowRank { u: left, v: zt.transpose() }))
        }
    };
    x.mat.set_leaf(x.block, solved)
}

/// `B := L^-1 B` for unit lower triangular H-matrix block `L`.
pub(crate) fn solve_lower_in_place(l: HRef<'_>, b: &mut DMatrix<f64>) {
    let node = l.node();
    if node.is_leaf() {
        if let Some(Leaf::Dense(d)) = l.mat.leaf(l.block).as_ref() {
            d.solve_lower_triangular_with_diag_mut(b, 1.0);
        }
        return;
    }
    let n0 = l.mat.block(l.mat.tree().child(l.block, 0, 0)).rows.size();
    let mut top = b.rows(0, n0).into_owned();
    solve_lower_in_place(l.child(0, 0), &mut top);
    let l10 = l.child(1, 0);
    let corr = l.mat.mul_dense(l10.block, top.as_view());
    let mut bottom = b.rows(n0, b.nrows() - n0) - corr;
    solve_lower_in_place(l.child(1, 1), &mut bottom);
    b.rows_mut(0, n0).copy_from(&top);
    b.rows_mut(n0, bottom.nrows()).copy_from(&bottom);
}

/// `B := B U^-1` for upper triangular H-matrix block `U`.
pub(crate) fn solve_upper_right_in_place(u: HRef<'_>, b: &mut DMatrix<f64>) {
    let node = u.node();
    if node.is_leaf() {
        if let Some(Leaf::Dense(d)) = u.mat.leaf(u.block).as_ref() {
            // X U = B  <=>  U^T X^T = B^T
            let mut bt = b.transpose();
            d.tr_solve_upper_triangular_mut(&mut bt);
            *b = bt.transpose();
        }
        return;
    }
    let n0 = u.mat.block(u.mat.tree().child(u.block, 0, 0)).cols.size();
    let mut left = b.columns(0, n0).into_owned();
    solve_upper_right_in_place(u.child(0, 0), &mut left);
    let corr = u.mat.dense_mul(left.as_view(), u.child(0, 1).block);
    let mut right = b.columns(n0, b.ncols() - n0) - corr;
    solve_upper_right_in_place(u.child(1, 1), &mut right);
    b.columns_mut(0, n0).copy_from(&left);
    b.columns_mut(n0, right.ncols()).copy_from(&right);
}

/// `||A - L U||_F / ||A||_F` with `L U` formed by products of `L` with the
/// dense `U`.
pub fn lu_residual(a: &HMatrix, l: &HMatrix, u: &HMatrix) -> f64 {
    let root = a.tree().root();
    let ud = u.to_dense();
    let lu = l.mul_dense(root, ud.as_view());
    crate::hmatrix::rel_error(&a.to_dense(), &lu)
}
