use super::ApprVector;
use crate::error::{DparError, Result};
use crate::graph::Graph;

/// Largest graph accepted by [`solve_ppr_dense`].
pub const DENSE_SIZE_LIMIT: usize = 2_000;

/// Exact PPR of `source` by solving `(I − (1−α)W) π = α e_source` with a dense
/// LU factorization. `W = ½(I + A D⁻¹)`; a degree-0 column of `W` is `e_j`,
/// which keeps `W` column-stochastic. Intended as a reference for tests.
pub fn solve_ppr_dense(g: &Graph, source: usize, alpha: f64) -> Result<ApprVector> {
    let n = g.n_nodes();
    if n > DENSE_SIZE_LIMIT {
        return Err(DparError::Config(format!(
            "dense PPR limited to {DENSE_SIZE_LIMIT} nodes, graph has {n}"
        )));
    }
    if source >= n {
        return Err(DparError::Dimension(format!("source {source} beyond {n} nodes")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(DparError::Config(format!("alpha must be in (0, 1), got {alpha}")));
    }

    // a = I − (1−α) W, row-major.
    let mut a = vec![0.0; n * n];
    for j in 0..n {
        let d = g.degree(j);
        if d == 0 {
            a[j * n + j] = alpha;
            continue;
        }
        a[j * n + j] = 1.0 - 0.5 * (1.0 - alpha);
        for &i in g.neighbors(j) {
            a[i * n + j] -= 0.5 * (1.0 - alpha) / d as f64;
        }
    }
    let mut rhs = vec![0.0; n];
    rhs[source] = alpha;
    let x = lu_solve(&mut a, &mut rhs, n)?;

    let entries = x
        .into_iter()
        .enumerate()
        .filter(|&(_, v)| v != 0.0)
        .collect();
    Ok(ApprVector::from_entries(source, entries))
}

/// Gaussian elimination with partial pivoting, in place.
fn lu_solve(a: &mut [f64], b: &mut [f64], n: usize) -> Result<Vec<f64>> {
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&r, &s| a[r * n + col].abs().total_cmp(&a[s * n + col].abs()))
            .expect("non-empty range");
        if a[pivot * n + col].abs() < 1e-300 {
            return Err(DparError::Numeric("singular system in dense PPR".into()));
        }
        if pivot != col {
            for k in 0..n {
                a.swap(pivot * n + k, col * n + k);
            }
            b.swap(pivot, col);
        }
        let diag = a[col * n + col];
        for row in (col + 1)..n {
            let factor = a[row * n + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = ((row + 1)..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row * n + row];
    }
    Ok(x)
}
