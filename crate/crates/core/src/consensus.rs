//! Decentralised regression by consensus ADMM: agent n holds `(X_n, y_n)`
//! and exchanges `θ` only with its graph neighbours, converging to
//! `argmin ½‖y − Xθ‖² + ψ(θ)` over the pooled data.

use std::collections::VecDeque;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{min_norm_lstsq, soft_threshold};
use crate::parametric::lasso;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regularizer {
    None,
    /// `λ_r ‖θ‖²`
    SquaredNorm { lambda_r: f64 },
    /// `λ_r ‖θ‖₁`
    L1 { lambda_r: f64 },
}

impl Regularizer {
    fn validate(&self) -> Result<()> {
        match *self {
            Regularizer::SquaredNorm { lambda_r } | Regularizer::L1 { lambda_r } if !(lambda_r >= 0.0) => {
                invalid("regularization weight must be non-negative")
            }
            _ => Ok(()),
        }
    }

    pub fn value(&self, theta: &DVector<f64>) -> f64 {
        match *self {
            Regularizer::None => 0.0,
            Regularizer::SquaredNorm { lambda_r } => lambda_r * theta.norm_squared(),
            Regularizer::L1 { lambda_r } => lambda_r * theta.lp_norm(1),
        }
    }
}

/// `argmin_θ w ψ(θ) + ½‖θ − a‖²`
pub fn prox_psi(reg: &Regularizer, a: &DVector<f64>, weight: f64) -> DVector<f64> {
    match *reg {
        Regularizer::None => a.clone(),
        Regularizer::SquaredNorm { lambda_r } => a / (1.0 + 2.0 * lambda_r * weight),
        Regularizer::L1 { lambda_r } => a.map(|v| soft_threshold(v, lambda_r * weight)),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentData {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentState {
    pub theta: DVector<f64>,
    pub gamma: DVector<f64>,
    pub u: DVector<f64>,
    pub lambda: DVector<f64>,
}

impl AgentState {
    pub fn zeros(dim: usize) -> Self {
        let z = DVector::zeros(dim);
        Self { theta: z.clone(), gamma: z.clone(), u: z.clone(), lambda: z }
    }
}

#[derive(Clone, Debug)]
pub struct ConsensusProblem {
    neighbors: Vec<Vec<usize>>,
    agents: Vec<AgentData>,
    regularizer: Regularizer,
    rho: f64,
    dim: usize,
    // Cholesky of ρI + X_nᵀX_n per agent.
    gamma_factors: Vec<Cholesky<f64, Dyn>>,
}

impl ConsensusProblem {
    pub fn new(edges: &[(usize, usize)], agents: Vec<AgentData>, regularizer: Regularizer, rho: f64) -> Result<Self> {
        if !(rho > 0.0) || !rho.is_finite() {
            return invalid("ADMM step ρ must be positive");
        }
        regularizer.validate()?;
        let n = agents.len();
        if n == 0 {
            return invalid("at least one agent is required");
        }
        let dim = agents[0].x.ncols();
        for a in &agents {
            if a.x.ncols() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: a.x.ncols() });
            }
            if a.x.nrows() != a.y.len() {
                return Err(Error::DimensionMismatch { expected: a.x.nrows(), found: a.y.len() });
            }
        }
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n || a == b {
                return invalid("edges must join two distinct existing agents");
            }
            if !neighbors[a].contains(&b) {
                neighbors[a].push(b);
                neighbors[b].push(a);
            }
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
        }
        if !connected(&neighbors) {
            return Err(Error::Disconnected);
        }
        let gamma_factors = agents
            .iter()
            .map(|a| {
                let m = DMatrix::identity(dim, dim) * rho + a.x.tr_mul(&a.x);
                Cholesky::new(m).ok_or_else(|| Error::Factorization("ρI + XᵀX is not positive definite".into()))
            })
            .collect::<Result<_>>()?;
        Ok(Self { neighbors, agents, regularizer, rho, dim, gamma_factors })
    }

    pub fn agents(&self) -> &[AgentData] {
        &self.agents
    }

    pub fn neighbors(&self, n: usize) -> &[usize] {
        &self.neighbors[n]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn regularizer(&self) -> Regularizer {
        self.regularizer
    }

    pub fn is_edge(&self, a: usize, b: usize) -> bool {
        self.neighbors[a].binary_search(&b).is_ok()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.neighbors.len())
            .flat_map(|a| self.neighbors[a].iter().filter(move |&&b| b > a).map(move |&b| (a, b)))
            .collect()
    }

    /// Pooled `(X, y)`.
    pub fn stacked(&self) -> (DMatrix<f64>, DVector<f64>) {
        let rows: usize = self.agents.iter().map(|a| a.x.nrows()).sum();
        let mut x = DMatrix::zeros(rows, self.dim);
        let mut y = DVector::zeros(rows);
        let mut r = 0;
        for a in &self.agents {
            x.view_mut((r, 0), (a.x.nrows(), self.dim)).copy_from(&a.x);
            y.rows_mut(r, a.y.len()).copy_from(&a.y);
            r += a.x.nrows();
        }
        (x, y)
    }

    /// Residual of `(ρI + X_nᵀX_n) γ = X_nᵀy_n + ρθ_n + λ_n`.
    pub fn gamma_residual(&self, n: usize, state: &AgentState) -> f64 {
        let a = &self.agents[n];
        let lhs = (DMatrix::identity(self.dim, self.dim) * self.rho + a.x.tr_mul(&a.x)) * &state.gamma;
        let rhs = a.x.tr_mul(&a.y) + &state.theta * self.rho + &state.lambda;
        (lhs - rhs).norm()
    }
}

fn connected(neighbors: &[Vec<usize>]) -> bool {
    let mut seen = vec![false; neighbors.len()];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(v) = queue.pop_front() {
        for &w in &neighbors[v] {
            if !seen[w] {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Cross-agent reads of one round: `(reader, neighbour)` pairs.
pub type MessageLog = Vec<(usize, usize)>;

/// One synchronous round. Every agent reads only its own state and its
/// neighbours' previous-round `θ`.
pub fn admm_round(problem: &ConsensusProblem, states: &[AgentState]) -> Result<(Vec<AgentState>, MessageLog)> {
    let n_agents = problem.agents.len();
    if states.len() != n_agents {
        return Err(Error::DimensionMismatch { expected: n_agents, found: states.len() });
    }
    let rho = problem.rho;
    let results: Vec<(AgentState, MessageLog)> = (0..n_agents)
        .into_par_iter()
        .map(|n| {
            let own = &states[n];
            let nb = &problem.neighbors[n];
            let mut log = Vec::with_capacity(nb.len());
            let mut diff = DVector::zeros(problem.dim);
            let mut sum = DVector::zeros(problem.dim);
            for &m in nb {
                log.push((n, m));
                let theta_m = &states[m].theta;
                diff += &own.theta - theta_m;
                sum += &own.theta + theta_m;
            }
            let u = &own.u + diff * rho;
            let lambda = &own.lambda + (&own.theta - &own.gamma) * rho;
            let c = rho * (1.0 + 2.0 * nb.len() as f64);
            let a = (sum * rho + &own.gamma * rho - &u - &lambda) / c;
            let theta = prox_psi(&problem.regularizer, &a, 1.0 / (n_agents as f64 * c));
            let data = &problem.agents[n];
            let gamma = problem.gamma_factors[n].solve(&(data.x.tr_mul(&data.y) + &theta * rho + &lambda));
            (AgentState { theta, gamma, u, lambda }, log)
        })
        .collect();
    let mut log = Vec::new();
    let mut next = Vec::with_capacity(n_agents);
    for (s, l) in results {
        next.push(s);
        log.extend(l);
    }
    Ok((next, log))
}

#[derive(Clone, Debug)]
pub struct ConsensusRun {
    pub states: Vec<AgentState>,
    pub rounds: usize,
    pub converged: bool,
    /// Largest `‖θ_n − θ_n′‖` over edges, per round.
    pub disagreement: Vec<f64>,
    /// Largest per-agent change of `θ`, per round.
    pub change: Vec<f64>,
    /// Largest `‖θ_n − γ_n‖`, per round.
    pub residual: Vec<f64>,
    pub messages: Vec<MessageLog>,
}

impl ConsensusRun {
    /// Average of the agents' `θ`.
    pub fn mean_theta(&self) -> DVector<f64> {
        let n = self.states.len() as f64;
        self.states.iter().fold(DVector::zeros(self.states[0].theta.len()), |acc, s| acc + &s.theta) / n
    }
}

/// Runs rounds from the all-zero state until the edge disagreement, the
/// per-round change and the `θ`/`γ` gap are all at most `tol`.
pub fn run_to_consensus(problem: &ConsensusProblem, tol: f64, max_rounds: usize) -> Result<ConsensusRun> {
    if tol.is_nan() || tol < 0.0 {
        return invalid("tolerance must be non-negative");
    }
    let mut states = vec![AgentState::zeros(problem.dim); problem.agents.len()];
    let mut run = ConsensusRun { states: Vec::new(), rounds: 0, converged: false, disagreement: Vec::new(), change: Vec::new(), residual: Vec::new(), messages: Vec::new() };
    let edges = problem.edges();
    for k in 1..=max_rounds {
        let (next, log) = admm_round(problem, &states)?;
        let change = next
            .iter()
            .zip(&states)
            .map(|(a, b)| (&a.theta - &b.theta).norm())
            .fold(0.0, f64::max);
        let disagreement = edges
            .iter()
            .map(|&(a, b)| (&next[a].theta - &next[b].theta).norm())
            .fold(0.0, f64::max);
        let residual = next.iter().map(|s| (&s.theta - &s.gamma).norm()).fold(0.0, f64::max);
        states = next;
        run.rounds = k;
        run.residual.push(residual);
        run.change.push(change);
        run.disagreement.push(disagreement);
        run.messages.push(log);
        if disagreement <= tol && change <= tol && residual <= tol {
            run.converged = true;
            break;
        }
    }
    if !run.converged {
        log::warn!("consensus ADMM did not reach tolerance {tol:e} in {max_rounds} rounds");
    }
    run.states = states;
    Ok(run)
}

/// Centralised solution of `½‖y − Xθ‖² + ψ(θ)`.
pub fn centralized_solution(problem: &ConsensusProblem) -> Result<DVector<f64>> {
    let (x, y) = problem.stacked();
    match problem.regularizer {
        Regularizer::None => Ok(min_norm_lstsq(&x, &y)),
        Regularizer::SquaredNorm { lambda_r } => {
            let a = x.tr_mul(&x) + DMatrix::identity(problem.dim, problem.dim) * (2.0 * lambda_r);
            let rhs = x.tr_mul(&y);
            match Cholesky::new(a.clone()) {
                Some(c) => Ok(c.solve(&rhs)),
                None => Ok(min_norm_lstsq(&a, &rhs)),
            }
        }
        Regularizer::L1 { lambda_r } => Ok(lasso(&x, &y, 2.0 * lambda_r, 200_000)?.alpha),
    }
}

/// Norm of the smallest element of `Xᵀ(Xθ − y) + ∂ψ(θ)`.
pub fn optimality_residual(problem: &ConsensusProblem, theta: &DVector<f64>) -> f64 {
    let (x, y) = problem.stacked();
    let g = x.tr_mul(&(&x * theta - &y));
    match problem.regularizer {
        Regularizer::None => g.norm(),
        Regularizer::SquaredNorm { lambda_r } => (g + theta * (2.0 * lambda_r)).norm(),
        Regularizer::L1 { lambda_r } => g
            .iter()
            .zip(theta.iter())
            .map(|(gi, ti)| if *ti != 0.0 { gi + lambda_r * ti.signum() } else { (gi.abs() - lambda_r).max(0.0) })
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt(),
    }
}
