//! Restarting anytime weighted A* and a plain Dijkstra oracle over the same graph.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use rustc_hash::FxHashMap;

use crate::costmap::CostMap;
use crate::error::{Error, Result};
use crate::heuristics::Heuristic;
use crate::robot::{RobotSpec, RobotState};

use super::lattice::{successors_with, Lattice};
use super::{Action, Goal, IterationRecord, PlanStats, StepPolicy};

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub states: Vec<RobotState>,
    pub actions: Vec<Action>,
    pub action_costs: Vec<f64>,
    pub cost: f64,
    pub epsilon: f64,
    pub stats: PlanStats,
}

struct Node {
    key: u64,
    g: f64,
    h: f64,
    edge: f64,
    parent: u32,
    action: Action,
    closed: bool,
}

struct Entry {
    f: f64,
    g: f64,
    seq: u64,
    idx: u32,
}

impl PartialEq for Entry {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Entry {
    // min-heap on f, FIFO on ties
    fn cmp(&self, o: &Self) -> Ordering {
        o.f.total_cmp(&self.f).then(o.seq.cmp(&self.seq))
    }
}

enum Iteration {
    Found(Vec<u32>),
    NoPath,
    OutOfBudget,
}

struct Search<'a> {
    costmap: &'a CostMap,
    spec: &'a RobotSpec,
    lattice: &'a Lattice,
    goal: &'a Goal,
    heuristic: &'a dyn crate::heuristics::Heuristic,
    policy: StepPolicy,
    nodes: Vec<Node>,
    index: FxHashMap<u64, u32>,
}

impl Search<'_> {
    fn node(&mut self, key: u64, state: &RobotState) -> u32 {
        if let Some(&i) = self.index.get(&key) {
            return i;
        }
        let i = self.nodes.len() as u32;
        let h = self.heuristic.estimate(state);
        self.nodes.push(Node { key, g: f64::INFINITY, h, edge: 0.0, parent: u32::MAX, action: Action::Turn { dtheta: 0 }, closed: false });
        self.index.insert(key, i);
        i
    }

    fn run(&mut self, start: &RobotState, eps: f64, budget: &mut u64, deadline: Instant) -> Iteration {
        self.nodes.clear();
        self.index.clear();
        let reopen = eps <= 1.0;
        let skey = self.lattice.key(start).expect("start on lattice");
        if self.heuristic.dead_end(start) {
            return Iteration::NoPath;
        }
        let s = self.node(skey, start);
        self.nodes[s as usize].g = 0.0;
        let mut open = BinaryHeap::new();
        let mut seq = 0u64;
        open.push(Entry { f: eps * self.nodes[s as usize].h, g: 0.0, seq, idx: s });
        let mut since_clock = 0u32;
        while let Some(e) = open.pop() {
            let n = &self.nodes[e.idx as usize];
            if e.g > n.g || (n.closed && !reopen) {
                continue;
            }
            if n.closed && e.g >= n.g {
                continue;
            }
            let key = n.key;
            let g = n.g;
            let state = self.lattice.state(key, self.costmap, self.spec);
            if self.goal.reached(&state) {
                return Iteration::Found(self.trace(e.idx));
            }
            if *budget == 0 {
                return Iteration::OutOfBudget;
            }
            *budget -= 1;
            since_clock += 1;
            if since_clock >= 256 {
                since_clock = 0;
                if Instant::now() >= deadline {
                    return Iteration::OutOfBudget;
                }
            }
            self.nodes[e.idx as usize].closed = true;
            for succ in successors_with(&state, self.costmap, self.spec, self.lattice, self.policy) {
                let Some(k) = self.lattice.key(&succ.state) else {
                    debug_assert!(false, "successor left the lattice");
                    continue;
                };
                if !self.index.contains_key(&k) && self.heuristic.dead_end(&succ.state) {
                    continue;
                }
                let c = self.node(k, &succ.state);
                let ng = g + succ.cost;
                let child = &mut self.nodes[c as usize];
                if ng < child.g {
                    if child.closed && !reopen {
                        continue;
                    }
                    child.g = ng;
                    child.edge = succ.cost;
                    child.parent = e.idx;
                    child.action = succ.action;
                    child.closed = false;
                    seq += 1;
                    open.push(Entry { f: ng + eps * child.h, g: ng, seq, idx: c });
                }
            }
        }
        Iteration::NoPath
    }

    fn trace(&self, mut idx: u32) -> Vec<u32> {
        let mut path = vec![idx];
        while self.nodes[idx as usize].parent != u32::MAX {
            idx = self.nodes[idx as usize].parent;
            path.push(idx);
        }
        path.reverse();
        path
    }

    fn outcome(&self, path: &[u32]) -> (Vec<RobotState>, Vec<Action>, Vec<f64>) {
        let states = path.iter().map(|&i| self.lattice.state(self.nodes[i as usize].key, self.costmap, self.spec)).collect();
        let actions = path[1..].iter().map(|&i| self.nodes[i as usize].action).collect();
        let costs = path[1..].iter().map(|&i| self.nodes[i as usize].edge).collect();
        (states, actions, costs)
    }
}

/// Restarting anytime weighted A*: one full search per ε of `schedule`, in
/// order, while the expansion and time budgets last. The returned plan is the
/// cheapest found, reported with the smallest ε whose search completed.
#[allow(clippy::too_many_arguments)]
pub fn anytime_search(
    start: &RobotState,
    goal: &Goal,
    costmap: &CostMap,
    spec: &RobotSpec,
    lattice: &Lattice,
    heuristic: &dyn Heuristic,
    schedule: &[f64],
    policy: StepPolicy,
    max_expansions: u64,
    time_budget: f64,
) -> Result<SearchOutcome> {
    let t0 = Instant::now();
    let deadline = t0 + Duration::from_secs_f64(time_budget.min(1e6));
    let mut search =
        Search { costmap, spec, lattice, goal, heuristic, policy, nodes: Vec::new(), index: FxHashMap::default() };
    let mut budget = max_expansions;
    let mut stats = PlanStats::default();
    let mut best: Option<SearchOutcome> = None;
    for &eps in schedule {
        let before = budget;
        let result = search.run(start, eps, &mut budget, deadline);
        let used = before - budget;
        stats.expansions += used;
        match result {
            Iteration::Found(path) => {
                let (states, actions, action_costs) = search.outcome(&path);
                let cost: f64 = action_costs.iter().sum();
                stats.iterations.push(IterationRecord { epsilon: eps, cost: Some(cost), expansions: used });
                if stats.first_solution_expansions == 0 {
                    stats.first_solution_expansions = used.max(1);
                }
                match &mut best {
                    Some(b) if b.cost <= cost => b.epsilon = eps,
                    _ => {
                        best = Some(SearchOutcome {
                            states,
                            actions,
                            action_costs,
                            cost,
                            epsilon: eps,
                            stats: PlanStats::default(),
                        })
                    }
                }
            }
            Iteration::NoPath => {
                stats.iterations.push(IterationRecord { epsilon: eps, cost: None, expansions: used });
                if best.is_none() {
                    return Err(Error::NoPath);
                }
                break;
            }
            Iteration::OutOfBudget => {
                stats.iterations.push(IterationRecord { epsilon: eps, cost: None, expansions: used });
                break;
            }
        }
    }
    stats.elapsed = t0.elapsed().as_secs_f64();
    let mut best = best.ok_or(Error::BudgetExhausted)?;
    best.stats = stats;
    Ok(best)
}

/// Optimal cost from `start` to the goal region by Dijkstra over the full
/// lattice graph (`None` when unreachable or the expansion cap is hit).
pub fn dijkstra_oracle(
    start: &RobotState,
    goal: &Goal,
    costmap: &CostMap,
    spec: &RobotSpec,
    lattice: &Lattice,
    policy: StepPolicy,
    max_expansions: u64,
) -> Option<f64> {
    let skey = lattice.key(start)?;
    let mut dist: FxHashMap<u64, f64> = FxHashMap::default();
    let mut heap = BinaryHeap::new();
    dist.insert(skey, 0.0);
    heap.push(Entry { f: 0.0, g: 0.0, seq: 0, idx: 0 });
    let mut keys = vec![skey];
    let mut expansions = 0u64;
    while let Some(e) = heap.pop() {
        let key = keys[e.idx as usize];
        if e.g > dist[&key] {
            continue;
        }
        let state = lattice.state(key, costmap, spec);
        if goal.reached(&state) {
            return Some(e.g);
        }
        expansions += 1;
        if expansions > max_expansions {
            return None;
        }
        for succ in successors_with(&state, costmap, spec, lattice, policy) {
            let k = lattice.key(&succ.state)?;
            let ng = e.g + succ.cost;
            if dist.get(&k).is_none_or(|d| ng < *d) {
                dist.insert(k, ng);
                keys.push(k);
                heap.push(Entry { f: ng, g: ng, seq: keys.len() as u64, idx: (keys.len() - 1) as u32 });
            }
        }
    }
    None
}
