//! Small dense linear algebra helpers, numeric and symbolic.

use nalgebra::DMatrix;

use crate::expr::Expression;

/// Number of singular values above `rel_tol × σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}

/// Cofactor expansion along the first row. Intended for n ≤ 5.
pub fn symbolic_det(m: &[Vec<Expression>]) -> Expression {
    let n = m.len();
    match n {
        0 => Expression::one(),
        1 => m[0][0].clone(),
        2 => &m[0][0] * &m[1][1] - &m[0][1] * &m[1][0],
        _ => {
            let mut acc = Expression::zero();
            for j in 0..n {
                if m[0][j].is_zero() {
                    continue;
                }
                let term = &m[0][j] * symbolic_det(&minor(m, 0, j));
                acc = if j % 2 == 0 { acc + term } else { acc - term };
            }
            acc
        }
    }
}

fn minor(m: &[Vec<Expression>], row: usize, col: usize) -> Vec<Vec<Expression>> {
    m.iter()
        .enumerate()
        .filter(|(i, _)| *i != row)
        .map(|(_, r)| r.iter().enumerate().filter(|(j, _)| *j != col).map(|(_, e)| e.clone()).collect())
        .collect()
}

/// The adjugate, so that `m · adj(m) = det(m) · Id`.
pub fn symbolic_adjugate(m: &[Vec<Expression>]) -> Vec<Vec<Expression>> {
    let n = m.len();
    if n == 1 {
        return vec![vec![Expression::one()]];
    }
    let mut adj = vec![vec![Expression::zero(); n]; n];
    for (i, row) in adj.iter_mut().enumerate() {
        for (j, entry) in row.iter_mut().enumerate() {
            // adj[i][j] = (-1)^{i+j} det(minor(m, j, i))
            let c = symbolic_det(&minor(m, j, i));
            *entry = if (i + j) % 2 == 0 { c } else { -c };
        }
    }
    adj
}
