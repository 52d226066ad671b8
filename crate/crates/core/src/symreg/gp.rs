use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::expr::{BinOp, Expr};
use super::front::ParetoFront;
use crate::{Error, Result};

const GOLDEN: f64 = 0.618_033_988_749_894_9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GPConfig {
    pub population: usize,
    pub generations: usize,
    pub tournament: usize,
    pub p_crossover: f64,
    pub p_mutation: f64,
    pub max_depth: usize,
    /// Offspring above this node count are discarded in favour of a parent.
    pub max_complexity: usize,
    /// Coordinate passes per constant optimization.
    pub const_opt_iters: usize,
    /// Best individuals whose constants are refined every generation.
    pub const_opt_top: usize,
    /// Probability that a fresh offspring gets its constants refined.
    pub p_const_opt: f64,
    pub elites: usize,
    pub seed: u64,
}

impl Default for GPConfig {
    fn default() -> Self {
        Self {
            population: 500,
            generations: 100,
            tournament: 5,
            p_crossover: 0.6,
            p_mutation: 0.5,
            max_depth: 8,
            max_complexity: 31,
            const_opt_iters: 4,
            const_opt_top: 8,
            p_const_opt: 0.02,
            elites: 4,
            seed: 0,
        }
    }
}

impl GPConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, p) in [
            ("p_crossover", self.p_crossover),
            ("p_mutation", self.p_mutation),
            ("p_const_opt", self.p_const_opt),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if self.population < 2 {
            return bad("population must be at least 2".into());
        }
        if self.tournament == 0 || self.max_depth < 2 || self.max_complexity == 0 {
            return bad("tournament, max_depth and max_complexity must be positive (depth ≥ 2)".into());
        }
        Ok(())
    }
}

/// Column-major regression inputs with one target column.
#[derive(Clone, Debug, PartialEq)]
pub struct SymDataset {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    pub target: Vec<f64>,
}

impl SymDataset {
    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>], target: Vec<f64>) -> Result<Self> {
        if rows.len() != target.len() {
            return Err(Error::Shape(format!(
                "{} rows but {} targets",
                rows.len(),
                target.len()
            )));
        }
        if let Some(row) = rows.iter().find(|r| r.len() != names.len()) {
            return Err(Error::Shape(format!(
                "row of {} values for {} features",
                row.len(),
                names.len()
            )));
        }
        let columns = (0..names.len())
            .map(|j| rows.iter().map(|r| r[j]).collect())
            .collect();
        Ok(Self {
            names,
            columns,
            target,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    pub fn n_vars(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }
}

/// Mean squared error of `expr` on `data`; infinite when any sample is
/// invalid or non-finite.
pub fn mse(expr: &Expr, data: &SymDataset) -> f64 {
    let n = data.n_rows();
    if n == 0 {
        return f64::INFINITY;
    }
    let pred = expr.eval_columns(&data.columns, n);
    let mut sum = 0.0;
    for (p, t) in pred.iter().zip(&data.target) {
        let d = p - t;
        sum += d * d;
    }
    let m = sum / n as f64;
    if m.is_finite() {
        m
    } else {
        f64::INFINITY
    }
}

fn random_op(rng: &mut impl Rng) -> BinOp {
    BinOp::ALL[rng.random_range(0..4)]
}

fn random_const(rng: &mut impl Rng) -> f64 {
    rng.random_range(-2.0..2.0)
}

fn random_leaf(n_vars: usize, rng: &mut impl Rng) -> Expr {
    if n_vars > 0 && rng.random_bool(0.75) {
        Expr::Var(rng.random_range(0..n_vars))
    } else {
        Expr::Const(random_const(rng))
    }
}

/// A random tree no deeper than `depth`. `full` trees branch down to the
/// depth limit; otherwise leaves may stop early.
pub fn random_tree(n_vars: usize, depth: usize, full: bool, rng: &mut impl Rng) -> Expr {
    if depth <= 1 || (!full && rng.random_bool(0.3)) {
        return random_leaf(n_vars, rng);
    }
    Expr::bin(
        random_op(rng),
        random_tree(n_vars, depth - 1, full, rng),
        random_tree(n_vars, depth - 1, full, rng),
    )
}

fn random_node_index(expr: &Expr, rng: &mut impl Rng) -> usize {
    rng.random_range(0..expr.complexity())
}

/// Point mutation, constant jitter, subtree replacement, node insertion or
/// node deletion, followed by depth repair.
pub fn mutate(expr: &Expr, n_vars: usize, config: &GPConfig, rng: &mut impl Rng) -> Expr {
    let mut out = expr.clone();
    let idx = random_node_index(&out, rng);
    let choice = rng.random_range(0..10);
    let node = out.node_mut(idx).expect("index within tree");
    match choice {
        // point mutation of node kind
        0..=2 => {
            *node = match node {
                Expr::Bin(op, a, b) => {
                    let mut new_op = random_op(rng);
                    while new_op == *op {
                        new_op = random_op(rng);
                    }
                    Expr::Bin(new_op, a.clone(), b.clone())
                }
                Expr::Var(i) if n_vars > 1 && rng.random_bool(0.8) => {
                    let mut j = rng.random_range(0..n_vars);
                    while j == *i {
                        j = rng.random_range(0..n_vars);
                    }
                    Expr::Var(j)
                }
                Expr::Var(_) => Expr::Const(random_const(rng)),
                Expr::Const(_) if n_vars > 0 => Expr::Var(rng.random_range(0..n_vars)),
                Expr::Const(_) => Expr::Const(random_const(rng)),
            };
        }
        // constant jitter, on a random constant if the chosen node is not one
        3..=4 => {
            let mut consts = out.constants_mut();
            if consts.is_empty() {
                let target = out.node_mut(idx).expect("index within tree");
                *target = random_tree(n_vars, 3, false, rng);
            } else {
                let k = rng.random_range(0..consts.len());
                let z1: f64 = StandardNormal.sample(rng);
                let z2: f64 = StandardNormal.sample(rng);
                *consts[k] = *consts[k] * (1.0 + 0.3 * z1) + 0.1 * z2;
            }
        }
        // subtree replacement
        5..=6 => *node = random_tree(n_vars, rng.random_range(1..=3), false, rng),
        // insertion: wrap the node in a new operator with a fresh leaf
        7..=8 => {
            let leaf = random_leaf(n_vars, rng);
            let old = std::mem::replace(node, Expr::Const(0.0));
            *node = if rng.random_bool(0.5) {
                Expr::bin(random_op(rng), old, leaf)
            } else {
                Expr::bin(random_op(rng), leaf, old)
            };
        }
        // deletion: replace an operator by one of its operands
        _ => {
            if let Expr::Bin(_, a, b) = node {
                *node = if rng.random_bool(0.5) {
                    (**a).clone()
                } else {
                    (**b).clone()
                };
            } else {
                *node = random_leaf(n_vars, rng);
            }
        }
    }
    out.truncate(config.max_depth);
    out
}

/// Replaces a uniformly chosen subtree of `a` by a uniformly chosen subtree
/// of `b`, then repairs depth.
pub fn crossover(a: &Expr, b: &Expr, config: &GPConfig, rng: &mut impl Rng) -> Expr {
    let mut child = a.clone();
    let donor = b
        .node(random_node_index(b, rng))
        .expect("index within tree")
        .clone();
    let idx = random_node_index(&child, rng);
    *child.node_mut(idx).expect("index within tree") = donor;
    child.truncate(config.max_depth);
    child
}

/// Minimizes `f` along one coordinate starting from `x0` (with `f(x0) = f0`)
/// by bracketing then golden-section search. Returns the best point seen.
fn line_minimize(mut f: impl FnMut(f64) -> f64, x0: f64, f0: f64) -> (f64, f64) {
    let mut best = (x0, f0);
    let mut eval = |x: f64, best: &mut (f64, f64)| {
        let v = f(x);
        if v < best.1 {
            *best = (x, v);
        }
        v
    };
    let step = (0.1 * x0.abs()).max(1e-3);
    let fp = eval(x0 + step, &mut best);
    let fm = eval(x0 - step, &mut best);
    let (mut lo, mut hi) = if fp >= f0 && fm >= f0 {
        (x0 - step, x0 + step)
    } else {
        let dir = if fp < fm { 1.0 } else { -1.0 };
        let mut a = x0;
        let mut b = x0 + dir * step;
        let mut fb = fp.min(fm);
        let mut width = step;
        let mut c = b;
        for _ in 0..60 {
            width *= 2.0;
            c = b + dir * width;
            let fc = eval(c, &mut best);
            if !(fc < fb) {
                break;
            }
            a = b;
            b = c;
            fb = fc;
        }
        (a.min(c), a.max(c))
    };
    let mut x1 = hi - GOLDEN * (hi - lo);
    let mut x2 = lo + GOLDEN * (hi - lo);
    let mut f1 = eval(x1, &mut best);
    let mut f2 = eval(x2, &mut best);
    for _ in 0..80 {
        if (hi - lo).abs() <= 1e-12 * (1.0 + best.0.abs()) {
            break;
        }
        if f1 < f2 || (f1 == f2 && f2.is_infinite()) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - GOLDEN * (hi - lo);
            f1 = eval(x1, &mut best);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + GOLDEN * (hi - lo);
            f2 = eval(x2, &mut best);
        }
    }
    best
}

/// Refines constants by coordinate-wise line searches. The result's MSE is
/// never higher than the input's.
pub fn optimize_constants(expr: &Expr, data: &SymDataset, config: &GPConfig) -> Expr {
    let mut current = expr.clone();
    let mut values = current.constants();
    if values.is_empty() || data.n_rows() == 0 {
        return current;
    }
    let mut best = mse(&current, data);
    let mut trial = current.clone();
    for _ in 0..config.const_opt_iters.max(1) {
        let start = best;
        for k in 0..values.len() {
            let (x, fx) = line_minimize(
                |x| {
                    let mut v = values.clone();
                    v[k] = x;
                    trial.set_constants(&v);
                    mse(&trial, data)
                },
                values[k],
                best,
            );
            if fx < best {
                values[k] = x;
                best = fx;
            }
        }
        if !(best < start) {
            break;
        }
    }
    current.set_constants(&values);
    current
}

#[derive(Clone, Debug)]
struct Individual {
    expr: Expr,
    mse: f64,
    complexity: usize,
}

impl Individual {
    fn new(expr: Expr, data: &SymDataset) -> Self {
        Self {
            mse: mse(&expr, data),
            complexity: expr.complexity(),
            expr,
        }
    }

    /// Lower MSE wins; equal MSE goes to the simpler expression.
    fn beats(&self, other: &Individual) -> bool {
        (self.mse, self.complexity) < (other.mse, other.complexity)
    }
}

fn tournament<'a>(pop: &'a [Individual], k: usize, rng: &mut impl Rng) -> &'a Individual {
    let mut best = &pop[rng.random_range(0..pop.len())];
    for _ in 1..k {
        let cand = &pop[rng.random_range(0..pop.len())];
        if cand.beats(best) {
            best = cand;
        }
    }
    best
}

fn sort_by_fitness(pop: &mut [Individual]) {
    pop.sort_by(|a, b| {
        a.mse
            .total_cmp(&b.mse)
            .then(a.complexity.cmp(&b.complexity))
    });
}

/// Tournament-selection genetic programming with elitism. Every evaluated
/// expression is offered to the returned Pareto front; the run is a pure
/// function of `data` and `config`.
pub fn search(data: &SymDataset, config: &GPConfig) -> Result<ParetoFront> {
    config.validate()?;
    if data.n_rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let n_vars = data.n_vars();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut front = ParetoFront::new();
    let offer = |front: &mut ParetoFront, ind: &Individual| {
        if front.accepts(ind.complexity, ind.mse) {
            front.insert(&ind.expr, ind.mse);
        }
    };

    // ramped half-and-half
    let max_init = config.max_depth.min(5);
    let mut pop: Vec<Individual> = (0..config.population)
        .map(|i| {
            let depth = 2 + i % (max_init - 1).max(1);
            let expr = random_tree(n_vars, depth, i % 2 == 0, &mut rng);
            Individual::new(expr, data)
        })
        .collect();
    for ind in &pop {
        offer(&mut front, ind);
    }

    for _ in 0..config.generations {
        sort_by_fitness(&mut pop);
        for ind in pop.iter_mut().take(config.const_opt_top) {
            if ind.expr.has_constants() {
                let tuned = Individual::new(optimize_constants(&ind.expr, data, config), data);
                offer(&mut front, &tuned);
                *ind = tuned;
            }
        }
        sort_by_fitness(&mut pop);

        let mut next: Vec<Individual> = pop.iter().take(config.elites).cloned().collect();
        // keep the front's building blocks in circulation
        for e in front.entries() {
            if next.len() >= config.population / 10 + config.elites {
                break;
            }
            next.push(Individual {
                expr: e.expr.clone(),
                mse: e.mse,
                complexity: e.complexity,
            });
        }
        while next.len() < config.population {
            let parent = tournament(&pop, config.tournament, &mut rng);
            let mut child = if rng.random_bool(config.p_crossover) {
                let other = tournament(&pop, config.tournament, &mut rng);
                crossover(&parent.expr, &other.expr, config, &mut rng)
            } else {
                parent.expr.clone()
            };
            if rng.random_bool(config.p_mutation) {
                child = mutate(&child, n_vars, config, &mut rng);
            }
            child = child.fold_constants();
            if child.complexity() > config.max_complexity {
                child = parent.expr.clone();
            }
            if child.has_constants() && rng.random_bool(config.p_const_opt) {
                child = optimize_constants(&child, data, config);
            }
            let ind = Individual::new(child, data);
            offer(&mut front, &ind);
            next.push(ind);
        }
        pop = next;
    }
    Ok(front)
}
