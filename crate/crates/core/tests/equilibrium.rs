use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use state_auction::clearing::lp::{solve_lp, Cmp, LinearProgram, LpStatus, Sense};
use state_auction::clearing::{clear, welfare_equivalence_check};
use state_auction::market::{assemble_welfare, AgentBid, MarketDimensions, RiskFunctional, UtilityCurve};

/// Solves a square system by Gaussian elimination with partial pivoting.
fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in 0..n {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

/// Best objective over all basic feasible solutions of a boxed LP with
/// `Le` rows, by brute-force choice of active constraints.
fn vertex_oracle(lp: &LinearProgram) -> Option<f64> {
    let n = lp.num_vars();
    // every constraint as (coefficients, rhs) for `a·x <= b`
    let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
    for row in &lp.rows {
        let mut a = vec![0.0; n];
        for &(j, v) in &row.coeffs {
            a[j] += v;
        }
        planes.push((a, row.rhs));
    }
    for j in 0..n {
        let mut up = vec![0.0; n];
        up[j] = 1.0;
        planes.push((up, lp.upper[j]));
        let mut down = vec![0.0; n];
        down[j] = -1.0;
        planes.push((down, -lp.lower[j]));
    }
    let m = planes.len();
    let mut best: Option<f64> = None;
    let mut chosen = Vec::new();
    fn recurse(
        start: usize,
        n: usize,
        m: usize,
        planes: &[(Vec<f64>, f64)],
        chosen: &mut Vec<usize>,
        c: &[f64],
        best: &mut Option<f64>,
    ) {
        if chosen.len() == n {
            let a = chosen.iter().map(|&i| planes[i].0.clone()).collect();
            let b = chosen.iter().map(|&i| planes[i].1).collect();
            if let Some(x) = solve_square(a, b) {
                let feasible = planes
                    .iter()
                    .all(|(a, b)| a.iter().zip(&x).map(|(p, q)| p * q).sum::<f64>() <= b + 1e-9);
                if feasible {
                    let value: f64 = c.iter().zip(&x).map(|(p, q)| p * q).sum();
                    *best = Some(best.map_or(value, |b: f64| b.max(value)));
                }
            }
            return;
        }
        for i in start..m {
            chosen.push(i);
            recurse(i + 1, n, m, planes, chosen, c, best);
            chosen.pop();
        }
    }
    recurse(0, n, m, &planes, &mut chosen, &lp.objective, &mut best);
    best
}

fn random_lp(rng: &mut ChaCha8Rng) -> LinearProgram {
    let mut lp = LinearProgram::new(Sense::Maximize);
    let n = rng.gen_range(2..=3);
    for _ in 0..n {
        let lo = rng.gen_range(-5..=0) as f64;
        let hi = lo + rng.gen_range(1..=6) as f64;
        lp.add_var(lo, hi, rng.gen_range(-5..=5) as f64);
    }
    for _ in 0..rng.gen_range(1..=3) {
        let coeffs = (0..n).map(|j| (j, rng.gen_range(-4..=4) as f64)).collect();
        lp.add_row(coeffs, Cmp::Le, rng.gen_range(-3..=6) as f64);
    }
    lp
}

#[test]
fn simplex_matches_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut feasible = 0;
    for _ in 0..300 {
        let lp = random_lp(&mut rng);
        let sol = solve_lp(&lp).unwrap();
        match vertex_oracle(&lp) {
            Some(best) => {
                feasible += 1;
                assert_eq!(sol.status, LpStatus::Optimal, "{lp:?}");
                assert!((sol.objective - best).abs() <= 1e-7, "{} vs {best}", sol.objective);
                assert!(sol.complementarity_residual(&lp) <= 1e-7);
                // c·x = b·y + d·x at optimum
                let dual_value: f64 = lp.rows.iter().zip(&sol.duals).map(|(r, y)| r.rhs * y).sum::<f64>()
                    + sol.reduced_costs.iter().zip(&sol.primal).map(|(d, x)| d * x).sum::<f64>();
                assert!((dual_value - sol.objective).abs() <= 1e-7);
            }
            None => assert_eq!(sol.status, LpStatus::Infeasible, "{lp:?}"),
        }
    }
    assert!(feasible > 100);
}

/// Greedy merit order per contract: start every agent at the left end of
/// its domain and hand out the missing withdrawal to the highest weighted
/// marginal values first. Exact for separable concave markets.
fn merit_order_welfare(bids: &[AgentBid], dims: &MarketDimensions) -> f64 {
    let mut total = 0.0;
    for c in 0..dims.contracts() {
        let (n, t, s) = dims.coordinates(c);
        let mut base = 0.0;
        let mut deficit = 0.0;
        let mut pieces: Vec<(f64, f64)> = Vec::new();
        for bid in bids {
            if let Some(curve) = bid.curve_on(n, t, s) {
                let f = &curve.curve;
                let p = bid.beliefs[s];
                deficit -= f.lower();
                let mut left_value = 0.0;
                for (k, &slope) in f.slopes.iter().enumerate() {
                    let (a, b) = (f.breakpoints[k], f.breakpoints[k + 1]);
                    left_value -= slope * (b.min(0.0) - a.min(0.0));
                    pieces.push((p * slope, b - a));
                }
                base += p * left_value;
            }
        }
        pieces.sort_by(|x, y| y.0.total_cmp(&x.0));
        for (slope, len) in pieces {
            if deficit <= 0.0 {
                break;
            }
            let take = len.min(deficit);
            base += slope * take;
            deficit -= take;
        }
        total += base;
    }
    total
}

fn random_market(rng: &mut ChaCha8Rng) -> (Vec<AgentBid>, MarketDimensions) {
    let states = rng.gen_range(2..=4);
    let dims = MarketDimensions::new(1, 1, states).unwrap();
    let agents = rng.gen_range(2..=5);
    let bids = (0..agents)
        .map(|i| {
            let raw: Vec<f64> = (0..states).map(|_| rng.gen_range(1..=9) as f64).collect();
            let mass: f64 = raw.iter().sum();
            let mut bid = AgentBid::new(&format!("a{i}"), raw.iter().map(|r| r / mass).collect(), RiskFunctional::Expectation);
            for s in 0..states {
                let lo = -(rng.gen_range(0..=8) as f64);
                let hi = rng.gen_range(0..=8) as f64;
                if lo == hi {
                    continue;
                }
                let mut breakpoints = vec![lo];
                if lo < 0.0 && hi > 0.0 && rng.gen_bool(0.5) {
                    breakpoints.push(0.0);
                }
                breakpoints.push(hi);
                let mut slopes: Vec<f64> = (0..breakpoints.len() - 1).map(|_| rng.gen_range(0..=60) as f64).collect();
                slopes.sort_by(|a, b| b.total_cmp(a));
                bid.curves.push(UtilityCurve::new(0, 0, s, breakpoints, slopes).unwrap());
            }
            bid
        })
        .collect();
    (bids, dims)
}

#[test]
fn random_convex_markets_clear_to_the_merit_order_welfare() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..60 {
        let (bids, dims) = random_market(&mut rng);
        let oracle = merit_order_welfare(&bids, &dims);
        let program = assemble_welfare(bids, dims).unwrap();
        let result = clear(&program).unwrap();
        assert!((result.welfare - oracle).abs() <= 1e-6, "{} vs {oracle}", result.welfare);
        assert!(result.verification.equilibrium, "{:?}", result.verification);
        assert!(result.verification.budget_residual <= 1e-6);
        assert!(result.agents.iter().all(|a| a.surplus >= -1e-6));
        assert!(welfare_equivalence_check(&program, &result));
    }
}
