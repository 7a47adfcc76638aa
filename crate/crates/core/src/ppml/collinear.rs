use nalgebra::DMatrix;

use super::fe::{demean, FeDimension, GroupIndex};

/// Partition of design columns into kept and dropped sets (column indices
/// into the original matrix, ascending).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ColumnSelection {
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
}

/// Drops columns that are (numerically) constant within the fixed effects or
/// in the span of earlier kept columns after the within transformation.
///
/// Both tests are relative to the squared norm of the raw column, so scaling
/// a column never changes the partition.
pub fn drop_collinear(x: &DMatrix<f64>, fe: &[FeDimension], tol_rank: f64) -> ColumnSelection {
    let rows: Vec<usize> = (0..x.nrows()).collect();
    let groups: Vec<GroupIndex> = fe.iter().map(|d| GroupIndex::build(d, &rows)).collect();
    select_columns(x, &rows, &groups, tol_rank, 1e-12, 100_000)
}

pub(crate) fn select_columns(
    x: &DMatrix<f64>,
    rows: &[usize],
    groups: &[GroupIndex],
    tol_rank: f64,
    tol_project: f64,
    max_sweeps: usize,
) -> ColumnSelection {
    let raw: Vec<Vec<f64>> = (0..x.ncols())
        .map(|j| rows.iter().map(|&r| x[(r, j)]).collect())
        .collect();
    let mut within = raw.clone();
    let ones = vec![1.0; rows.len()];
    // Project to a tolerance relative to each column's scale.
    for col in within.iter_mut() {
        let scale = col.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        col.iter_mut().for_each(|v| *v /= scale);
        demean(std::slice::from_mut(col), &ones, groups, tol_project, max_sweeps);
        col.iter_mut().for_each(|v| *v *= scale);
    }

    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut sel = ColumnSelection::default();
    for (j, (r, w)) in raw.iter().zip(within).enumerate() {
        let raw_sq: f64 = r.iter().map(|v| v * v).sum();
        if raw_sq == 0.0 || !raw_sq.is_finite() {
            sel.dropped.push(j);
            continue;
        }
        let mut v = w;
        let within_sq: f64 = v.iter().map(|a| a * a).sum();
        if within_sq < tol_rank * raw_sq {
            sel.dropped.push(j);
            continue;
        }
        // Modified Gram-Schmidt with one re-orthogonalization pass.
        for _ in 0..2 {
            for q in &basis {
                let dot: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let resid_sq: f64 = v.iter().map(|a| a * a).sum();
        if resid_sq < tol_rank * within_sq {
            sel.dropped.push(j);
            continue;
        }
        let norm = resid_sq.sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        basis.push(v);
        sel.kept.push(j);
    }
    sel
}
