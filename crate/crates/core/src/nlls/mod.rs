//! Sparse Levenberg–Marquardt for nonlinear least squares.
//!
//! A problem is a set of residual blocks, each touching a few variables and
//! contributing `weight² · ‖r‖²` to the cost. The solver assembles the
//! normal equations `(JᵀJ + μ D²) δ = −Jᵀr` with Marquardt's column-norm
//! scaling `D` (diagonal of `JᵀJ`, floored), factors them with a fill-reducing
//! LDLᵀ, and runs the standard accept/reject damping schedule: μ is doubled
//! on a rejected step and divided by 3 on an accepted one. Everything is
//! sequential and allocation-stable, so two solves of the same system from
//! the same start produce bit-identical trajectories.

pub mod sparse;

use sparse::{LdlSymbolic, SymCscUpper};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("residual block {block} produced a non-finite value at the start point")]
    NonFiniteStart { block: usize },
}

/// One term of the least-squares objective.
///
/// Implementations must write Jacobian entries only for their declared
/// variables; the solver gathers variable values for them, so a block cannot
/// even read anything else.
pub trait ResidualBlock {
    /// Global indices of the variables this block touches.
    fn variables(&self) -> &[usize];
    /// Number of residual components.
    fn dimension(&self) -> usize;
    /// Evaluate the residual (length [`Self::dimension`]) at the gathered
    /// variable values. When `jacobian` is `Some`, also write
    /// `∂residual_r / ∂vars_k` to `jacobian[r * vars.len() + k]` (row-major).
    fn evaluate(&self, vars: &[f64], residual: &mut [f64], jacobian: Option<&mut [f64]>);
    /// Multiplier applied to this block's residual vector. Must be ≥ 0 and
    /// constant over a solve.
    fn weight(&self) -> f64 {
        1.0
    }
}

pub struct ResidualSystem {
    variable_count: usize,
    blocks: Vec<Box<dyn ResidualBlock>>,
}

impl ResidualSystem {
    pub fn new(variable_count: usize) -> Self {
        Self {
            variable_count,
            blocks: Vec::new(),
        }
    }

    pub fn add_block(&mut self, block: impl ResidualBlock + 'static) {
        assert!(
            block.variables().iter().all(|&v| v < self.variable_count),
            "block references a variable past variable_count"
        );
        assert!(block.weight() >= 0.0, "block weights must be non-negative");
        self.blocks.push(Box::new(block));
    }

    pub fn variable_count(&self) -> usize {
        self.variable_count
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn residual_dimension(&self) -> usize {
        self.blocks.iter().map(|b| b.dimension()).sum()
    }

    /// Total cost `Σ weight² ‖r‖²` at `x`; NaN-poisoned if any block is.
    pub fn cost(&self, x: &[f64]) -> f64 {
        let mut scratch = Scratch::default();
        self.blocks
            .iter()
            .map(|b| scratch.block_cost(b.as_ref(), x))
            .sum()
    }
}

#[derive(Default)]
struct Scratch {
    vars: Vec<f64>,
    residual: Vec<f64>,
    jacobian: Vec<f64>,
}

impl Scratch {
    fn gather<'s>(&'s mut self, block: &dyn ResidualBlock, x: &[f64]) -> (&'s [f64], usize, usize) {
        let nv = block.variables().len();
        let dim = block.dimension();
        self.vars.clear();
        self.vars
            .extend(block.variables().iter().map(|&v| x[v]));
        self.residual.resize(dim, 0.0);
        (&self.vars, nv, dim)
    }

    fn block_cost(&mut self, block: &dyn ResidualBlock, x: &[f64]) -> f64 {
        self.gather(block, x);
        block.evaluate(&self.vars, &mut self.residual, None);
        let w2 = block.weight() * block.weight();
        w2 * self.residual.iter().map(|r| r * r).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    pub initial_damping: f64,
    /// μ multiplier on a rejected step.
    pub damping_increase: f64,
    /// μ divisor on an accepted step.
    pub damping_decrease: f64,
    pub use_jacobian_scaling: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-10,
            step_tolerance: 1e-12,
            initial_damping: 1e-4,
            damping_increase: 2.0,
            damping_decrease: 3.0,
            use_jacobian_scaling: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    StepTolerance,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub termination: Termination,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_log: Vec<f64>,
}

/// Minimum squared column norm used for the scaling diagonal.
const SCALING_FLOOR_SQ: f64 = 1e-16;
/// Lower clamp for the damping parameter.
const DAMPING_FLOOR: f64 = 1e-16;

pub fn solve(
    system: &ResidualSystem,
    x0: &[f64],
    config: &SolverConfig,
) -> Result<(Vec<f64>, SolveReport), SolverError> {
    solve_with_hook(system, x0, config, |_| {})
}

/// Like [`solve`], invoking `on_accept` with the variables after every
/// accepted step. The hook may move external state that residual blocks read
/// (e.g. barrier anchors); costs are always compared within the model that
/// was current when the step was proposed.
pub fn solve_with_hook(
    system: &ResidualSystem,
    x0: &[f64],
    config: &SolverConfig,
    mut on_accept: impl FnMut(&[f64]),
) -> Result<(Vec<f64>, SolveReport), SolverError> {
    let n = system.variable_count();
    assert_eq!(x0.len(), n, "x0 length must match variable_count");

    // Fill-reducing order over the variable-interaction graph.
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for block in &system.blocks {
        let vars = block.variables();
        for (a, &va) in vars.iter().enumerate() {
            for &vb in &vars[a + 1..] {
                if va != vb {
                    adj[va].push(vb);
                    adj[vb].push(va);
                }
            }
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    let perm = sparse::reverse_cuthill_mckee(&adj);
    let mut to_new = vec![0usize; n];
    for (new, &old) in perm.iter().enumerate() {
        to_new[old] = new;
    }

    let mut pairs = Vec::new();
    for (old, nbrs) in adj.iter().enumerate() {
        for &nbr in nbrs {
            let (a, b) = (to_new[old], to_new[nbr]);
            if a < b {
                pairs.push((a, b));
            }
        }
    }
    let mut ata = SymCscUpper::from_pairs(n, pairs);
    let diag_slots = ata.diagonal_slots();
    let mut symbolic = LdlSymbolic::analyze(&ata);

    let mut x = x0.to_vec();
    let mut scratch = Scratch::default();
    let mut gradient = vec![0.0f64; n];
    let mut base_values = vec![0.0f64; ata.values.len()];
    let mut scaling_sq = vec![0.0f64; n];
    let mut rhs = vec![0.0f64; n];
    let mut x_try = vec![0.0f64; n];

    let mut cost = assemble(
        system,
        &x,
        &to_new,
        &ata,
        &mut gradient,
        &mut base_values,
        &mut scratch,
    )
    .map_err(|block| SolverError::NonFiniteStart { block })?;

    let initial_cost = cost;
    let mut cost_log = vec![cost];
    let mut mu = config.initial_damping;
    let mut iterations = 0;
    let gradient_norm =
        |g: &[f64]| g.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));

    let termination = loop {
        if gradient_norm(&gradient) <= config.gradient_tolerance {
            break Termination::GradientTolerance;
        }
        if iterations >= config.max_iterations {
            break Termination::MaxIterations;
        }
        iterations += 1;

        for j in 0..n {
            scaling_sq[j] = if config.use_jacobian_scaling {
                base_values[diag_slots[j]].max(SCALING_FLOOR_SQ)
            } else {
                1.0
            };
        }
        ata.values.copy_from_slice(&base_values);
        for j in 0..n {
            ata.values[diag_slots[j]] += mu * scaling_sq[j];
        }

        let factor = match symbolic.factor(&ata) {
            Ok(f) => f,
            Err(_) => {
                // Singular normal equations: damp harder and try again.
                mu *= config.damping_increase;
                continue;
            }
        };
        for j in 0..n {
            rhs[to_new[j]] = -gradient[j];
        }
        factor.solve_in_place(&mut rhs);
        let mut step_norm_sq = 0.0;
        for j in 0..n {
            let d = rhs[to_new[j]];
            x_try[j] = x[j] + d;
            step_norm_sq += d * d;
        }
        let step_norm = step_norm_sq.sqrt();
        let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let small_step =
            step_norm <= config.step_tolerance * (x_norm + config.step_tolerance);

        let try_cost = system.cost(&x_try);
        if try_cost.is_finite() && try_cost < cost {
            x.copy_from_slice(&x_try);
            cost = try_cost;
            cost_log.push(cost);
            mu = (mu / config.damping_decrease).max(DAMPING_FLOOR);
            on_accept(&x);
            if small_step {
                break Termination::StepTolerance;
            }
            match assemble(
                system,
                &x,
                &to_new,
                &ata,
                &mut gradient,
                &mut base_values,
                &mut scratch,
            ) {
                // The accept hook may have moved model state (e.g. barrier
                // anchors), so the cost is refreshed from this evaluation.
                Ok(c) => cost = c,
                Err(_) => break Termination::StepTolerance,
            }
        } else {
            mu *= config.damping_increase;
            if small_step {
                // Even the damped step is negligible; no progress possible.
                break Termination::StepTolerance;
            }
        }
    };

    Ok((
        x,
        SolveReport {
            iterations,
            initial_cost,
            final_cost: cost,
            termination,
            cost_log,
        },
    ))
}

/// Assemble the weighted `JᵀJ` (upper triangle, in permuted coordinates)
/// into `base_values`, the gradient `Jᵀr` into `gradient`, and return the
/// cost; `Err(block)` if some residual is non-finite.
fn assemble(
    system: &ResidualSystem,
    x: &[f64],
    to_new: &[usize],
    ata: &SymCscUpper,
    gradient: &mut [f64],
    base_values: &mut [f64],
    scratch: &mut Scratch,
) -> Result<f64, usize> {
    gradient.fill(0.0);
    base_values.fill(0.0);
    let mut cost = 0.0;
    for (bi, block) in system.blocks.iter().enumerate() {
        let (_, nv, dim) = scratch.gather(block.as_ref(), x);
        scratch.jacobian.resize(dim * nv, 0.0);
        block.evaluate(
            &scratch.vars,
            &mut scratch.residual,
            Some(&mut scratch.jacobian),
        );
        let w2 = block.weight() * block.weight();
        for r in 0..dim {
            let res = scratch.residual[r];
            if !res.is_finite() {
                return Err(bi);
            }
            cost += w2 * res * res;
            let row = &scratch.jacobian[r * nv..(r + 1) * nv];
            for (k, &vk) in block.variables().iter().enumerate() {
                gradient[vk] += w2 * row[k] * res;
            }
            for a in 0..nv {
                let ja = row[a];
                if ja == 0.0 {
                    continue;
                }
                for b in a..nv {
                    let (va, vb) = (block.variables()[a], block.variables()[b]);
                    let contribution = w2 * ja * row[b];
                    let (pa, pb) = (to_new[va], to_new[vb]);
                    let slot = ata.slot(pa.min(pb), pa.max(pb));
                    // A variable listed twice contributes to the diagonal
                    // from both (a,b) and (b,a).
                    base_values[slot] += if pa == pb && a != b {
                        2.0 * contribution
                    } else {
                        contribution
                    };
                }
            }
        }
    }
    Ok(cost)
}

/// Compare every block's analytic Jacobian against central finite
/// differences with step `h`; returns the maximum relative discrepancy over
/// entries whose magnitude exceeds 1e-8.
pub fn check_jacobian(system: &ResidualSystem, x: &[f64], h: f64) -> f64 {
    let mut worst = 0.0f64;
    let mut scratch = Scratch::default();
    let mut plus = Vec::new();
    let mut minus = Vec::new();
    for block in &system.blocks {
        let (_, nv, dim) = scratch.gather(block.as_ref(), x);
        scratch.jacobian.resize(dim * nv, 0.0);
        block.evaluate(
            &scratch.vars,
            &mut scratch.residual,
            Some(&mut scratch.jacobian),
        );
        let base_vars = scratch.vars.clone();
        plus.resize(dim, 0.0);
        minus.resize(dim, 0.0);
        // Entries far below the block's dominant magnitude are swamped by
        // finite-difference noise (roundoff cancellation scales with the
        // residual magnitude, not the entry); skip them rather than report
        // noise. 0.1% of the block max keeps every entry a bug could
        // plausibly hide in while staying ~4 orders above the noise floor.
        let block_max = scratch.jacobian.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let cutoff = (1e-3 * block_max).max(1e-8);
        for k in 0..nv {
            let mut vars = base_vars.clone();
            vars[k] = base_vars[k] + h;
            block.evaluate(&vars, &mut plus, None);
            vars[k] = base_vars[k] - h;
            block.evaluate(&vars, &mut minus, None);
            for r in 0..dim {
                let fd = (plus[r] - minus[r]) / (2.0 * h);
                let analytic = scratch.jacobian[r * nv + k];
                let scale = analytic.abs().max(fd.abs());
                if scale > cutoff {
                    worst = worst.max((analytic - fd).abs() / scale);
                }
            }
        }
    }
    worst
}
