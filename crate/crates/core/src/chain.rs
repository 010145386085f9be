//! Exact long-run evaluation of a fixed policy through the Markov chain it
//! induces on the state grid.

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{State, SystemParams};
use crate::policy::Policy;
use crate::solver::Kernel;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainEvaluation {
    /// Long-run average VAoI from the start state.
    pub average_vaoi: f64,
    /// Long-run fraction of time spent in each state, canonical order.
    pub occupancy: Vec<f64>,
    /// Closed classes of the induced chain over the whole grid.
    pub recurrent_classes: usize,
    /// Closed classes reachable from the start state.
    pub reachable_classes: usize,
    /// More than one closed class exists, so the average may depend on the
    /// start state.
    pub reducible: bool,
}

/// Long-run average VAoI of `policy` started from (0, 0).
pub fn exact_policy_evaluation(params: &SystemParams, policy: &Policy) -> Result<f64> {
    let kernel = Kernel::new(params)?;
    Ok(evaluate_chain(&kernel, policy, State::new(0, 0))?.average_vaoi)
}

/// Computes the limiting occupancy of the policy-induced chain from `start`:
/// stationary distributions of each reachable closed class, weighted by the
/// probability of being absorbed into it.
pub fn evaluate_chain(kernel: &Kernel, policy: &Policy, start: State) -> Result<ChainEvaluation> {
    let shape = kernel.shape();
    if policy.shape() != shape {
        return Err(Error::PolicyShape {
            expected: shape.num_states(),
            got: policy.actions().len(),
        });
    }
    if !policy.is_feasible() {
        let bad = shape
            .states()
            .find(|s| s.battery == 0 && policy.action(*s) != crate::model::Action::Idle)
            .expect("infeasible policy has an offending state");
        return Err(Error::InfeasibleAction(bad));
    }
    let start = shape.checked_index(start)?;
    let n = shape.num_states();
    let rows: Vec<&[(usize, f64)]> = (0..n).map(|i| kernel.successors(i, policy.action_at(i))).collect();

    let mut graph = DiGraph::<(), ()>::with_capacity(n, n * 8);
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for (i, row) in rows.iter().enumerate() {
        for &(j, p) in row.iter() {
            if p > 0.0 {
                graph.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    let mut class_of = vec![usize::MAX; n];
    let sccs = tarjan_scc(&graph);
    for (c, comp) in sccs.iter().enumerate() {
        for node in comp {
            class_of[node.index()] = c;
        }
    }
    let closed: Vec<bool> = sccs
        .iter()
        .enumerate()
        .map(|(c, comp)| {
            comp.iter()
                .all(|node| rows[node.index()].iter().all(|&(j, p)| p == 0.0 || class_of[j] == c))
        })
        .collect();
    let recurrent_classes = closed.iter().filter(|&&c| c).count();

    // states reachable from start
    let mut reachable = vec![false; n];
    let mut stack = vec![start];
    reachable[start] = true;
    while let Some(i) = stack.pop() {
        for &(j, p) in rows[i] {
            if p > 0.0 && !reachable[j] {
                reachable[j] = true;
                stack.push(j);
            }
        }
    }

    // Absorption weight for each reachable closed class.
    let transient: Vec<usize> = (0..n)
        .filter(|&i| reachable[i] && !closed[class_of[i]])
        .collect();
    let mut class_weight = vec![0.0; sccs.len()];
    if transient.is_empty() {
        class_weight[class_of[start]] = 1.0;
    } else {
        // Expected visits y to transient states: y^T (I - P_TT) = e_start^T.
        let m = transient.len();
        let mut pos = vec![usize::MAX; n];
        for (k, &i) in transient.iter().enumerate() {
            pos[i] = k;
        }
        let mut a = DMatrix::<f64>::identity(m, m);
        for (k, &i) in transient.iter().enumerate() {
            for &(j, p) in rows[i] {
                if pos[j] != usize::MAX {
                    // transposed system
                    a[(pos[j], k)] -= p;
                }
            }
        }
        let mut rhs = DVector::<f64>::zeros(m);
        rhs[pos[start]] = 1.0;
        let visits = a.lu().solve(&rhs).ok_or(Error::SingularChain)?;
        for (k, &i) in transient.iter().enumerate() {
            for &(j, p) in rows[i] {
                if pos[j] == usize::MAX {
                    class_weight[class_of[j]] += visits[k] * p;
                }
            }
        }
    }

    let mut occupancy = vec![0.0; n];
    let mut reachable_classes = 0;
    for (c, comp) in sccs.iter().enumerate() {
        if !closed[c] || class_weight[c] <= 0.0 {
            continue;
        }
        reachable_classes += 1;
        let members: Vec<usize> = comp.iter().map(|node| node.index()).collect();
        let mu = stationary(&members, &rows)?;
        for (&i, p) in members.iter().zip(mu.iter()) {
            occupancy[i] += class_weight[c] * p;
        }
    }

    let average_vaoi = occupancy
        .iter()
        .enumerate()
        .map(|(i, mu)| mu * kernel.cost(i, policy.action_at(i)))
        .sum();
    Ok(ChainEvaluation {
        average_vaoi,
        occupancy,
        recurrent_classes,
        reachable_classes,
        reducible: recurrent_classes > 1,
    })
}

/// Stationary distribution of a closed class: solves `mu^T (P - I) = 0` with
/// one equation replaced by normalization.
fn stationary(members: &[usize], rows: &[&[(usize, f64)]]) -> Result<Vec<f64>> {
    let m = members.len();
    if m == 1 {
        return Ok(vec![1.0]);
    }
    let mut pos = std::collections::HashMap::with_capacity(m);
    for (k, &i) in members.iter().enumerate() {
        pos.insert(i, k);
    }
    // a = (P - I)^T
    let mut a = DMatrix::<f64>::zeros(m, m);
    for (k, &i) in members.iter().enumerate() {
        a[(k, k)] -= 1.0;
        for &(j, p) in rows[i] {
            if let Some(&kj) = pos.get(&j) {
                a[(kj, k)] += p;
            }
        }
    }
    for k in 0..m {
        a[(m - 1, k)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(m);
    rhs[m - 1] = 1.0;
    let mu = a.lu().solve(&rhs).ok_or(Error::SingularChain)?;
    Ok(mu.iter().map(|x| x.max(0.0)).collect())
}
