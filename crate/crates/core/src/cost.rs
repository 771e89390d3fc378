//! Validation cost model: closed-form expectations for the number of bad
//! inner nodes under random leaf failures, a Monte Carlo cross-check, and
//! the tree-versus-linear cost comparison with its break-even fraction.
//!
//! The model: failed leaves are i.i.d. uniform draws from the `2^d` leaves
//! of a full binary tree, and every inner node on a path from a drawn leaf
//! to the root is *colored* (bad). After `k` draws the expected number of
//! colored nodes among `N` at one level is `E_k^N = N (1 - (1 - 1/N)^k)`;
//! summing over the levels gives the expected number of bad inner nodes.
//! The draw count reproducing an expected leaf fraction `f` is
//! `k = ln(1-f) / ln(1 - 2^-d)`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Errors from the cost-model operations.
#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("fraction must lie in [0, 1], got {0}")]
    FractionOutOfRange(f64),
    #[error("draw count is unbounded at fraction 1")]
    UnboundedDraws,
    #[error("depth must be in 1..=62, got {0}")]
    BadDepth(u32),
    #[error("invalid cost parameters: {0}")]
    BadParams(String),
}

/// Unit costs at the validator: `h` per hash operation, `c` per digest
/// comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParams {
    hash_cost: f64,
    compare_cost: f64,
}

impl CostParams {
    pub fn new(hash_cost: f64, compare_cost: f64) -> Result<Self, CostError> {
        if hash_cost <= 0.0 || !hash_cost.is_finite() {
            return Err(CostError::BadParams(format!(
                "hash cost must be positive, got {hash_cost}"
            )));
        }
        if compare_cost < 0.0 || !compare_cost.is_finite() {
            return Err(CostError::BadParams(format!(
                "comparison cost must be non-negative, got {compare_cost}"
            )));
        }
        Ok(CostParams {
            hash_cost,
            compare_cost,
        })
    }

    /// Unit costs from the comparison-to-hash ratio `λ = c/h`, with `h = 1`.
    pub fn from_lambda(lambda: f64) -> Result<Self, CostError> {
        CostParams::new(1.0, lambda)
    }

    pub fn hash_cost(&self) -> f64 {
        self.hash_cost
    }

    pub fn compare_cost(&self) -> f64 {
        self.compare_cost
    }

    /// `λ = c/h`.
    pub fn lambda(&self) -> f64 {
        self.compare_cost / self.hash_cost
    }
}

fn check_depth(depth: u32) -> Result<(), CostError> {
    if (1..=62).contains(&depth) {
        Ok(())
    } else {
        Err(CostError::BadDepth(depth))
    }
}

fn check_fraction(f: f64) -> Result<(), CostError> {
    if (0.0..=1.0).contains(&f) {
        Ok(())
    } else {
        Err(CostError::FractionOutOfRange(f))
    }
}

/// Expected number of distinct nodes colored among `n` after `k` i.i.d.
/// uniform draws: `n (1 - (1 - 1/n)^k)`. Real-valued `k` is the analytic
/// continuation used when a target fraction dictates the draw count.
pub fn expected_colored(n: u64, k: f64) -> f64 {
    assert!(n >= 1, "node count must be positive");
    assert!(k >= 0.0, "draw count must be non-negative");
    let n = n as f64;
    n * (1.0 - (1.0 - 1.0 / n).powf(k))
}

/// Number of i.i.d. leaf draws after which the expected fraction of colored
/// leaves reaches `f`: `ln(1-f) / ln(1 - 2^-d)`. Unbounded at `f = 1`.
pub fn choices_for_fraction(depth: u32, f: f64) -> Result<f64, CostError> {
    check_depth(depth)?;
    check_fraction(f)?;
    if f >= 1.0 {
        return Err(CostError::UnboundedDraws);
    }
    if f == 0.0 {
        return Ok(0.0);
    }
    let leaves = (1u64 << depth) as f64;
    Ok((1.0 - f).ln() / (1.0 - 1.0 / leaves).ln())
}

/// Expected number of bad inner nodes (root included, leaves excluded) after
/// `k` draws: the sum of [`expected_colored`] over the levels of
/// `1, 2, 4, …, 2^(d-1)` nodes.
pub fn expected_bad_inner_at_draws(depth: u32, k: f64) -> Result<f64, CostError> {
    check_depth(depth)?;
    Ok((0..depth).map(|level| expected_colored(1u64 << level, k)).sum())
}

/// Expected number of bad inner nodes when a fraction `f` of the leaves is
/// bad. At `f = 1` this is the limit `2^d - 1`: every inner node.
pub fn expected_bad_inner(depth: u32, f: f64) -> Result<f64, CostError> {
    check_depth(depth)?;
    check_fraction(f)?;
    if f >= 1.0 {
        return Ok(((1u64 << depth) - 1) as f64);
    }
    expected_bad_inner_at_draws(depth, choices_for_fraction(depth, f)?)
}

/// Monte Carlo estimate of the number of bad inner nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    /// Standard error of the mean.
    pub stderr: f64,
    pub trials: u64,
    pub draws: u64,
}

/// Samples the coloring process directly: per trial, `draws` uniform leaf
/// choices are marked in a full binary tree of depth `depth` and the
/// distinct inner nodes on their root paths are counted.
///
/// Deterministic for a given seed: trials run sequentially on a seeded
/// ChaCha stream.
pub fn monte_carlo_bad_inner(
    depth: u32,
    draws: u64,
    trials: u64,
    seed: u64,
) -> Result<MonteCarloEstimate, CostError> {
    check_depth(depth)?;
    if depth > 26 {
        return Err(CostError::BadDepth(depth));
    }
    if trials == 0 {
        return Err(CostError::BadParams("at least one trial required".into()));
    }
    let leaves = 1usize << depth;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut marks = vec![false; 2 * leaves];
    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    for _ in 0..trials {
        marks.fill(false);
        for _ in 0..draws {
            let leaf = rng.random_range(0..leaves);
            marks[leaves + leaf] = true;
        }
        // Heap order: node i has children 2i and 2i+1; inner nodes are
        // 1..leaves.
        for node in (1..leaves).rev() {
            marks[node] = marks[2 * node] | marks[2 * node + 1];
        }
        let colored = marks[1..leaves].iter().filter(|&&m| m).count() as f64;
        sum += colored;
        sum_sq += colored * colored;
    }
    let t = trials as f64;
    let mean = sum / t;
    let stderr = if trials > 1 {
        let variance = ((sum_sq - sum * sum / t) / (t - 1.0)).max(0.0);
        (variance / t).sqrt()
    } else {
        0.0
    };
    Ok(MonteCarloEstimate {
        mean,
        stderr,
        trials,
        draws,
    })
}

/// Expected cost of diagnostic tree validation with a fraction `f` of bad
/// leaves: `(E_inner(f) + 1)(2c + h)` — one hash and two comparisons at
/// every bad inner node and at the root.
pub fn tree_validation_cost(depth: u32, f: f64, params: &CostParams) -> Result<f64, CostError> {
    let inner = expected_bad_inner(depth, f)?;
    Ok((inner + 1.0) * (2.0 * params.compare_cost + params.hash_cost))
}

/// Cost of validating a linear log of `2^d` measurements:
/// `(2^d + 1) h + 2^d c`, always more than `2^d (h + c)`.
pub fn linear_validation_cost(depth: u32, params: &CostParams) -> Result<f64, CostError> {
    check_depth(depth)?;
    let leaves = (1u64 << depth) as f64;
    Ok((leaves + 1.0) * params.hash_cost + leaves * params.compare_cost)
}

/// Largest bad-leaf fraction for which diagnostic tree validation is still
/// cheaper than the linear recalculation:
/// `(E_inner(f) + 1) / 2^d ≤ (λ + 1) / (2λ + 1)`.
///
/// Found by bisection to an absolute tolerance of `1e-4`; the left side is
/// monotone in `f`. Returns 1 when the inequality holds for every fraction.
pub fn breakeven_fraction(depth: u32, lambda: f64) -> Result<f64, CostError> {
    check_depth(depth)?;
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(CostError::BadParams(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    let rhs = (lambda + 1.0) / (2.0 * lambda + 1.0);
    let leaves = (1u64 << depth) as f64;
    let lhs = |f: f64| -> Result<f64, CostError> {
        Ok((expected_bad_inner(depth, f)? + 1.0) / leaves)
    };
    if lhs(1.0)? <= rhs {
        return Ok(1.0);
    }
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    while hi - lo > 1e-4 {
        let mid = 0.5 * (lo + hi);
        if lhs(mid)? <= rhs {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// One row of the cost table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostRow {
    pub depth: u32,
    pub fraction_bad: f64,
    pub expected_inner: f64,
    /// `expected_inner` relative to the `2^d - 1` inner nodes.
    pub inner_fraction: f64,
    pub tree_cost: f64,
    pub linear_cost: f64,
}

/// Evaluates the cost model over a grid of depths and bad-leaf fractions.
pub fn cost_table(
    depths: &[u32],
    fractions: &[f64],
    params: &CostParams,
) -> Result<Vec<CostRow>, CostError> {
    let mut rows = Vec::with_capacity(depths.len() * fractions.len());
    for &depth in depths {
        check_depth(depth)?;
        let inner_nodes = ((1u64 << depth) - 1) as f64;
        for &f in fractions {
            let expected_inner = expected_bad_inner(depth, f)?;
            rows.push(CostRow {
                depth,
                fraction_bad: f,
                expected_inner,
                inner_fraction: expected_inner / inner_nodes,
                tree_cost: tree_validation_cost(depth, f, params)?,
                linear_cost: linear_validation_cost(depth, params)?,
            });
        }
    }
    Ok(rows)
}

/// CSV rendering of a cost table: header
/// `d,f,e_inner,fraction,tree_cost,linear_cost`, one row per grid point,
/// `.` decimal separator, LF line endings.
pub fn cost_table_csv(rows: &[CostRow]) -> String {
    use std::fmt::Write as _;
    let mut out = String::from("d,f,e_inner,fraction,tree_cost,linear_cost\n");
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.6}",
            row.depth,
            row.fraction_bad,
            row.expected_inner,
            row.inner_fraction,
            row.tree_cost,
            row.linear_cost
        );
    }
    out
}

/// Inclusive fraction grid from `start` to `stop` in steps of `step`.
pub fn fraction_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>, CostError> {
    check_fraction(start)?;
    check_fraction(stop)?;
    if step <= 0.0 || !step.is_finite() {
        return Err(CostError::BadParams(format!(
            "step must be positive, got {step}"
        )));
    }
    if stop < start {
        return Err(CostError::BadParams("empty fraction range".into()));
    }
    let count = ((stop - start) / step).round() as usize;
    let mut grid: Vec<f64> = (0..=count)
        .map(|i| (start + i as f64 * step).min(stop))
        .collect();
    grid.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Exhaustive enumeration of all n^k equiprobable draw sequences,
    // averaging the number of distinct outcomes. Independent of the closed
    // form it checks.
    fn enumerated_expected_colored(n: u64, k: u32) -> f64 {
        let mut total = 0u64;
        let sequences = n.pow(k);
        for mut code in 0..sequences {
            let mut seen = vec![false; n as usize];
            for _ in 0..k {
                seen[(code % n) as usize] = true;
                code /= n;
            }
            total += seen.iter().filter(|&&s| s).count() as u64;
        }
        total as f64 / sequences as f64
    }

    #[test]
    fn expected_colored_base_cases() {
        assert_eq!(expected_colored(8, 0.0), 0.0);
        assert_eq!(expected_colored(1, 1.0), 1.0);
        assert_eq!(expected_colored(1, 7.0), 1.0);
        assert!((expected_colored(4, 2.0) - 1.75).abs() < 1e-12);
    }

    #[test]
    fn expected_colored_matches_exhaustive_enumeration() {
        for n in [1u64, 2, 4, 8] {
            for k in 0..=4u32 {
                let enumerated = enumerated_expected_colored(n, k);
                let closed = expected_colored(n, k as f64);
                assert!(
                    (enumerated - closed).abs() < 1e-9,
                    "n={n} k={k}: {enumerated} vs {closed}"
                );
            }
        }
    }

    #[test]
    fn expected_colored_satisfies_the_recurrence() {
        // E_{k+1} = 1 + E_k - E_k / N
        for n in [2u64, 16, 1024] {
            for k in 0..50 {
                let e_k = expected_colored(n, k as f64);
                let e_next = expected_colored(n, (k + 1) as f64);
                assert!(
                    (e_next - (1.0 + e_k - e_k / n as f64)).abs() < 1e-9,
                    "n={n} k={k}"
                );
            }
        }
    }

    #[test]
    fn choices_for_fraction_examples() {
        assert_eq!(choices_for_fraction(4, 0.0).unwrap(), 0.0);
        assert!((choices_for_fraction(1, 0.5).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(
            choices_for_fraction(4, 1.0).unwrap_err(),
            CostError::UnboundedDraws
        );
        assert!(choices_for_fraction(4, 1.5).is_err());
    }

    #[test]
    fn expected_bad_inner_limits() {
        assert_eq!(expected_bad_inner(10, 0.0).unwrap(), 0.0);
        assert_eq!(expected_bad_inner(10, 1.0).unwrap(), 1023.0);
        for d in [1u32, 4, 10] {
            let cap = ((1u64 << d) - 1) as f64;
            let mut last = -1.0;
            for i in 0..=20 {
                let f = i as f64 / 20.0;
                let e = expected_bad_inner(d, f).unwrap();
                assert!(e >= last - 1e-12, "monotone in f at d={d}");
                assert!(e <= cap + 1e-9);
                last = e;
            }
        }
    }

    #[test]
    fn monte_carlo_degenerate_cases() {
        let zero = monte_carlo_bad_inner(5, 0, 100, 7).unwrap();
        assert_eq!(zero.mean, 0.0);
        assert_eq!(zero.stderr, 0.0);
        // Depth 1 has a single inner node (the root): any draw colors it.
        let one = monte_carlo_bad_inner(1, 1, 500, 7).unwrap();
        assert_eq!(one.mean, 1.0);
        assert_eq!(one.stderr, 0.0);
    }

    #[test]
    fn monte_carlo_is_seed_deterministic() {
        let a = monte_carlo_bad_inner(6, 40, 200, 42).unwrap();
        let b = monte_carlo_bad_inner(6, 40, 200, 42).unwrap();
        assert_eq!(a, b);
        let c = monte_carlo_bad_inner(6, 40, 200, 43).unwrap();
        assert_ne!(a.mean, c.mean);
    }

    #[test]
    fn monte_carlo_agrees_with_the_closed_form() {
        let depth = 6;
        for draws in [5u64, 20, 80] {
            let mc = monte_carlo_bad_inner(depth, draws, 4000, 11).unwrap();
            let closed = expected_bad_inner_at_draws(depth, draws as f64).unwrap();
            assert!(
                (mc.mean - closed).abs() <= 3.0 * mc.stderr.max(1e-3),
                "draws={draws}: mc {} vs closed {closed} (stderr {})",
                mc.mean,
                mc.stderr
            );
        }
    }

    #[test]
    fn validation_cost_formulas() {
        let unit = CostParams::new(1.0, 0.0).unwrap();
        assert_eq!(tree_validation_cost(4, 0.0, &unit).unwrap(), 1.0);
        let both = CostParams::new(1.0, 1.0).unwrap();
        // f = 1/4 at depth 2 corresponds to one draw, which colors the root
        // and one level-1 node: E_inner = 2, so (2 + 1)(2c + h) = 9.
        assert!((tree_validation_cost(2, 0.25, &both).unwrap() - 9.0).abs() < 1e-9);
        // Linear: (2^d + 1) h + 2^d c.
        assert_eq!(linear_validation_cost(1, &both).unwrap(), 5.0);
        assert_eq!(linear_validation_cost(16, &unit).unwrap(), 65537.0);
        for d in [1u32, 4, 16] {
            let leaves = (1u64 << d) as f64;
            assert!(
                linear_validation_cost(d, &both).unwrap()
                    > leaves * (both.hash_cost() + both.compare_cost())
            );
        }
    }

    #[test]
    fn expected_bad_inner_is_monotone_in_depth() {
        for f in [0.05, 0.3, 0.5, 0.9] {
            let mut last = 0.0;
            for d in 1..=12u32 {
                let e = expected_bad_inner(d, f).unwrap();
                assert!(e >= last - 1e-12, "f={f} d={d}");
                last = e;
            }
        }
    }

    #[test]
    fn tree_cost_stays_below_linear_up_to_the_breakeven() {
        let lambda = 0.01;
        let params = CostParams::from_lambda(lambda).unwrap();
        for d in [4u32, 10, 16] {
            let f_star = breakeven_fraction(d, lambda).unwrap();
            for row in cost_table(&[d], &fraction_grid(0.0, 1.0, 0.05).unwrap(), &params)
                .unwrap()
            {
                if row.fraction_bad <= f_star {
                    assert!(
                        row.tree_cost <= row.linear_cost,
                        "d={d} f={}: tree {} > linear {}",
                        row.fraction_bad,
                        row.tree_cost,
                        row.linear_cost
                    );
                }
            }
        }
    }

    #[test]
    fn breakeven_limit_and_monotonicity() {
        // λ = 0 makes the right side 1, which only the f → 1 limit attains.
        assert_eq!(breakeven_fraction(8, 0.0).unwrap(), 1.0);
        let mut last = f64::INFINITY;
        for lambda in [0.0, 0.01, 0.1, 1.0] {
            let f = breakeven_fraction(8, lambda).unwrap();
            assert!(f <= last + 1e-9, "breakeven not monotone at λ={lambda}");
            last = f;
        }
    }

    #[test]
    fn cost_table_shape() {
        let params = CostParams::from_lambda(0.01).unwrap();
        let grid = fraction_grid(0.0, 1.0, 0.25).unwrap();
        assert_eq!(grid.len(), 5);
        let rows = cost_table(&[4], &grid, &params).unwrap();
        assert_eq!(rows.len(), 5);
        assert_eq!(rows[0].inner_fraction, 0.0);
        assert_eq!(rows[4].inner_fraction, 1.0);
        let csv = cost_table_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "d,f,e_inner,fraction,tree_cost,linear_cost"
        );
        assert_eq!(csv.lines().count(), 6);
        assert!(csv.ends_with('\n'));
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(CostParams::new(0.0, 1.0).is_err());
        assert!(CostParams::new(1.0, -0.5).is_err());
        assert!(monte_carlo_bad_inner(0, 1, 1, 0).is_err());
        assert!(monte_carlo_bad_inner(4, 1, 0, 0).is_err());
        assert!(expected_bad_inner(0, 0.5).is_err());
        assert!(breakeven_fraction(4, -1.0).is_err());
    }
}
