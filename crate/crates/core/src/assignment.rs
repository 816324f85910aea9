//! Rectangular minimum-cost assignment and the cost matrices fusion feeds it.
//!
//! The solver is the shortest-augmenting-path form of the Hungarian method
//! with row and column potentials: each row is inserted in turn and a
//! Dijkstra-like search over reduced costs finds the cheapest augmenting
//! path. It runs in `O(rows² · cols)` and handles `rows ≤ cols` directly.

use crate::expfam::{kl_divergence, ExpFamComponent, PosteriorBundle};
use crate::{Error, Result};

/// Cost of forbidden cells in augmented matrices.
pub const FORBIDDEN_COST: f64 = 1e18;

/// Largest column count accepted by [`brute_force_assignment`].
pub const BRUTE_FORCE_MAX_COLS: usize = 8;

/// Dense row-major cost matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Value(format!(
                "entry ({}, {}) is not finite",
                i / cols.max(1),
                i % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn entries(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    /// Multiplies every entry by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.rows, self.cols, self.data.iter().map(|v| v * factor).collect())
    }
}

/// Injective map from rows to columns: every row is assigned exactly once,
/// every column at most once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentMatrix {
    row_to_col: Vec<usize>,
    cols: usize,
}

impl AssignmentMatrix {
    pub fn new(row_to_col: Vec<usize>, cols: usize) -> Result<Self> {
        let mut seen = vec![false; cols];
        for (row, &col) in row_to_col.iter().enumerate() {
            if col >= cols {
                return Err(Error::Consistency(format!("row {row} assigned to column {col} of {cols}")));
            }
            if std::mem::replace(&mut seen[col], true) {
                return Err(Error::Consistency(format!("column {col} assigned twice")));
            }
        }
        Ok(Self { row_to_col, cols })
    }

    pub fn rows(&self) -> usize {
        self.row_to_col.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row_to_col(&self) -> &[usize] {
        &self.row_to_col
    }

    pub fn col_of(&self, row: usize) -> usize {
        self.row_to_col[row]
    }

    /// Dense 0/1 view, `rows × cols`.
    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        self.row_to_col
            .iter()
            .map(|&c| (0..self.cols).map(|j| u8::from(j == c)).collect())
            .collect()
    }

    pub fn cost(&self, c: &CostMatrix) -> f64 {
        self.row_to_col.iter().enumerate().map(|(r, &col)| c.get(r, col)).sum()
    }
}

/// Exact minimum-cost assignment of every row to a distinct column.
///
/// Among columns with equal reduced cost the search always takes the lowest
/// index, so results are deterministic.
pub fn solve_rectangular_assignment(c: &CostMatrix) -> Result<(AssignmentMatrix, f64)> {
    let (n, m) = (c.rows(), c.cols());
    if n > m {
        return Err(Error::Shape(format!("{n} rows exceed {m} columns")));
    }
    if n == 0 {
        return Ok((AssignmentMatrix::new(Vec::new(), m)?, 0.0));
    }
    const NONE: usize = usize::MAX;
    // potentials; column index m is the virtual source column
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; m + 1];
    let mut row_of_col = vec![NONE; m + 1];
    let mut prev_col = vec![NONE; m + 1];
    let mut min_slack = vec![f64::INFINITY; m];
    let mut used = vec![false; m + 1];

    for row in 0..n {
        row_of_col[m] = row;
        let mut col = m;
        min_slack.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[col] = true;
            let r = row_of_col[col];
            let mut delta = f64::INFINITY;
            let mut next = NONE;
            for j in 0..m {
                if used[j] {
                    continue;
                }
                let reduced = c.get(r, j) - u[r] - v[j];
                if reduced < min_slack[j] {
                    min_slack[j] = reduced;
                    prev_col[j] = col;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    next = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    let rr = row_of_col[j];
                    u[rr] += delta;
                    if j != m {
                        v[j] -= delta;
                    }
                } else if j != m {
                    min_slack[j] -= delta;
                }
            }
            col = next;
            if row_of_col[col] == NONE {
                break;
            }
        }
        // augment along the alternating path back to the source
        while col != m {
            let p = prev_col[col];
            row_of_col[col] = row_of_col[p];
            col = p;
        }
    }

    let mut row_to_col = vec![NONE; n];
    for (j, &r) in row_of_col[..m].iter().enumerate() {
        if r != NONE {
            row_to_col[r] = j;
        }
    }
    let a = AssignmentMatrix::new(row_to_col, m)?;
    let cost = a.cost(c);
    Ok((a, cost))
}

/// Exhaustive minimum over all injective row→column maps, enumerated in
/// lexicographic order; the first minimum found wins ties.
pub fn brute_force_assignment(c: &CostMatrix) -> Result<(AssignmentMatrix, f64)> {
    let (n, m) = (c.rows(), c.cols());
    if m > BRUTE_FORCE_MAX_COLS {
        return Err(Error::Value(format!("{m} columns exceed the brute-force limit of {BRUTE_FORCE_MAX_COLS}")));
    }
    if n > m {
        return Err(Error::Shape(format!("{n} rows exceed {m} columns")));
    }

    fn search(c: &CostMatrix, row: usize, used: &mut [bool], current: &mut Vec<usize>, acc: f64, best: &mut Option<(Vec<usize>, f64)>) {
        if row == c.rows() {
            if best.as_ref().is_none_or(|(_, b)| acc < *b) {
                *best = Some((current.clone(), acc));
            }
            return;
        }
        for col in 0..c.cols() {
            if !used[col] {
                used[col] = true;
                current.push(col);
                search(c, row + 1, used, current, acc + c.get(row, col), best);
                current.pop();
                used[col] = false;
            }
        }
    }

    let mut best = None;
    search(c, 0, &mut vec![false; m], &mut Vec::with_capacity(n), 0.0, &mut best);
    let (cols, _) = best.expect("rows <= cols admits an assignment");
    let a = AssignmentMatrix::new(cols, m)?;
    let cost = a.cost(c);
    Ok((a, cost))
}

/// Entry `(l, g) = KL(global_g ‖ local_l)`.
pub fn build_cost_matrix(locals: &PosteriorBundle, globals: &[ExpFamComponent]) -> Result<CostMatrix> {
    let mut data = Vec::with_capacity(locals.len() * globals.len());
    for local in &locals.components {
        for global in globals {
            data.push(kl_divergence(global, local)?);
        }
    }
    CostMatrix::new(locals.len(), globals.len(), data)
}

/// Appends the regularizer's marginal cost and one new-component column per row.
///
/// Column `g < G` costs `base(l, g) + λ(√(n_g + 1) − √n_g)`, where `n_g`
/// counts the other datasets using global `g`. Column `G + l` is available
/// only to row `l` and costs `λ`: a fresh global placed exactly on the local
/// factor contributes zero KL and one unit of the column norm.
pub fn build_augmented_cost_matrix(base: &CostMatrix, usage_counts: &[i64], lambda: f64) -> Result<CostMatrix> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Value(format!("lambda = {lambda} must be finite and nonnegative")));
    }
    if usage_counts.len() != base.cols() {
        return Err(Error::Shape(format!(
            "{} usage counts for {} global columns",
            usage_counts.len(),
            base.cols()
        )));
    }
    if let Some(g) = usage_counts.iter().position(|&n| n < 0) {
        return Err(Error::Value(format!("usage count of global {g} is negative")));
    }
    let marginal: Vec<f64> = usage_counts
        .iter()
        .map(|&n| lambda * (((n + 1) as f64).sqrt() - (n as f64).sqrt()))
        .collect();
    let (rows, g) = (base.rows(), base.cols());
    let cols = g + rows;
    let mut data = Vec::with_capacity(rows * cols);
    for l in 0..rows {
        data.extend(base.row(l).iter().zip(&marginal).map(|(c, m)| c + m));
        data.extend((0..rows).map(|k| if k == l { lambda } else { FORBIDDEN_COST }));
    }
    CostMatrix::new(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expfam::DiagGaussian;
    use crate::rng::{stream, Purpose};
    use proptest::prelude::*;
    use rand::Rng;

    fn m(rows: &[&[f64]]) -> CostMatrix {
        CostMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn small_examples() {
        let (a, cost) = solve_rectangular_assignment(&m(&[&[0.0, 1.0], &[1.0, 0.0]])).unwrap();
        assert_eq!(a.row_to_col(), &[0, 1]);
        assert_eq!(cost, 0.0);

        let c = m(&[&[4.0, 1.0, 3.0], &[2.0, 0.0, 5.0], &[3.0, 2.0, 2.0]]);
        let (a, cost) = solve_rectangular_assignment(&c).unwrap();
        assert_eq!(a.row_to_col(), &[1, 0, 2]);
        assert_eq!(cost, 5.0);
        let (b, bcost) = brute_force_assignment(&c).unwrap();
        assert_eq!(b.row_to_col(), &[1, 0, 2]);
        assert_eq!(bcost, 5.0);
    }

    #[test]
    fn brute_force_examples() {
        let (a, cost) = brute_force_assignment(&m(&[&[7.5]])).unwrap();
        assert_eq!(a.row_to_col(), &[0]);
        assert_eq!(cost, 7.5);
        let (a, cost) = brute_force_assignment(&m(&[&[1.0, 2.0], &[2.0, 1.0]])).unwrap();
        assert_eq!(a.row_to_col(), &[0, 1]);
        assert_eq!(cost, 2.0);
        let wide = CostMatrix::new(1, 9, vec![0.0; 9]).unwrap();
        assert!(matches!(brute_force_assignment(&wide), Err(Error::Value(_))));
    }

    #[test]
    fn rejects_bad_shapes_and_values() {
        let tall = m(&[&[1.0], &[2.0]]);
        assert!(matches!(solve_rectangular_assignment(&tall), Err(Error::Shape(_))));
        assert!(matches!(CostMatrix::new(1, 2, vec![0.0, f64::NAN]), Err(Error::Value(_))));
        assert!(matches!(CostMatrix::new(1, 2, vec![0.0, f64::INFINITY]), Err(Error::Value(_))));
    }

    #[test]
    fn rectangular_matrices_pick_cheapest_columns() {
        let c = m(&[&[5.0, 1.0, 9.0, 2.0], &[5.0, 1.5, 9.0, 0.5]]);
        let (a, cost) = solve_rectangular_assignment(&c).unwrap();
        assert_eq!(a.row_to_col(), &[1, 3]);
        assert_eq!(cost, 1.5);
    }

    #[test]
    fn agrees_with_brute_force_on_random_integer_matrices() {
        let mut rng = stream(3, Purpose::Test, 0);
        for _ in 0..200 {
            let cols = rng.random_range(1..=7);
            let rows = rng.random_range(1..=cols);
            let data = (0..rows * cols).map(|_| rng.random_range(0..20) as f64).collect();
            let c = CostMatrix::new(rows, cols, data).unwrap();
            let (_, fast) = solve_rectangular_assignment(&c).unwrap();
            let (_, slow) = brute_force_assignment(&c).unwrap();
            assert_eq!(fast, slow);
        }
    }

    proptest! {
        #[test]
        fn assignment_is_feasible_and_scale_equivariant(
            rows in 1usize..6,
            extra in 0usize..3,
            seed in any::<u64>(),
            factor in prop::sample::select(vec![0.25, 2.0, 3.0, 7.0, 1024.0]),
        ) {
            let cols = rows + extra;
            let mut rng = stream(seed, Purpose::Test, 1);
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(0..6) as f64).collect();
            let c = CostMatrix::new(rows, cols, data).unwrap();
            let (a, cost) = solve_rectangular_assignment(&c).unwrap();
            prop_assert_eq!(a.rows(), rows);
            let mut cols_used = a.row_to_col().to_vec();
            cols_used.sort_unstable();
            cols_used.dedup();
            prop_assert_eq!(cols_used.len(), rows);
            let (b, scaled_cost) = solve_rectangular_assignment(&c.scaled(factor).unwrap()).unwrap();
            prop_assert_eq!(a, b);
            prop_assert_eq!(cost * factor, scaled_cost);
        }
    }

    #[test]
    fn cost_matrix_from_components() {
        let n01 = ExpFamComponent::from(DiagGaussian::new(vec![0.0], vec![1.0]).unwrap());
        let n11 = ExpFamComponent::from(DiagGaussian::new(vec![1.0], vec![1.0]).unwrap());
        let locals = PosteriorBundle::new("a", vec![n11.clone()]);
        let c = build_cost_matrix(&locals, &[n01.clone()]).unwrap();
        assert_eq!(c.rows(), 1);
        assert!((c.get(0, 0) - 0.5).abs() < 1e-14);

        let same = PosteriorBundle::new("b", vec![n01.clone(), n11.clone()]);
        let c = build_cost_matrix(&same, &same.components).unwrap();
        assert_eq!(c.get(0, 0), 0.0);
        assert_eq!(c.get(1, 1), 0.0);
        assert!(c.entries().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn augmented_matrix_examples() {
        let base = m(&[&[0.5]]);
        let aug = build_augmented_cost_matrix(&base, &[0], 0.1).unwrap();
        assert_eq!(aug.cols(), 2);
        assert!((aug.get(0, 0) - 0.6).abs() < 1e-15);
        assert!((aug.get(0, 1) - 0.1).abs() < 1e-15);

        let aug = build_augmented_cost_matrix(&m(&[&[0.0]]), &[3], 1.0).unwrap();
        assert!((aug.get(0, 0) - (2.0 - 3f64.sqrt())).abs() < 1e-15);
        assert!((aug.get(0, 0) - 0.2679).abs() < 1e-4);

        let aug = build_augmented_cost_matrix(&m(&[&[1.0, 2.0], &[3.0, 4.0]]), &[0, 1], 0.5).unwrap();
        assert_eq!(aug.cols(), 4);
        assert_eq!(aug.get(0, 2), 0.5);
        assert_eq!(aug.get(0, 3), FORBIDDEN_COST);
        assert_eq!(aug.get(1, 2), FORBIDDEN_COST);
        assert_eq!(aug.get(1, 3), 0.5);

        assert!(build_augmented_cost_matrix(&base, &[0], -0.1).is_err());
        assert!(build_augmented_cost_matrix(&base, &[-1], 0.1).is_err());
    }

    #[test]
    fn assignment_matrix_validates_constraints() {
        assert!(AssignmentMatrix::new(vec![0, 0], 2).is_err());
        assert!(AssignmentMatrix::new(vec![2], 2).is_err());
        let a = AssignmentMatrix::new(vec![1, 0], 3).unwrap();
        assert_eq!(a.to_dense(), vec![vec![0, 1, 0], vec![1, 0, 0]]);
    }
}
