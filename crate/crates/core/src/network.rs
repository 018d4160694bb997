//! Small labeled tensor networks.
//!
//! Every leg carries an integer label. A label shared by two nodes is
//! summed over; labels listed as open survive in the requested order. Each
//! label must appear on at most two nodes and at most once per node.
//!
//! Contraction proceeds pairwise. For up to 16 nodes the order minimizing
//! the total multiply-add count is found by dynamic programming over node
//! subsets and memoized per network structure; larger networks fall back to
//! merging the cheapest label-sharing pair first. Either way the order is a
//! deterministic function of the shapes alone and can be planned without
//! data.

use std::borrow::Cow;
use std::cell::RefCell;
use std::collections::HashMap;

use crate::tensor::{contract, Result, Tensor, TensorError};

pub type Label = u32;

#[derive(Clone, Debug)]
struct Node<'a> {
    labels: Vec<Label>,
    dims: Vec<usize>,
    data: Option<Cow<'a, Tensor>>,
}

#[derive(Clone, Debug, Default)]
pub struct Network<'a> {
    nodes: Vec<Node<'a>>,
}

/// Pairwise merge sequence and its total multiply-add count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Plan {
    pub steps: Vec<(usize, usize)>,
    pub flops: u64,
}

impl<'a> Network<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn push(&mut self, tensor: &'a Tensor, labels: Vec<Label>) -> &mut Self {
        self.push_cow(Cow::Borrowed(tensor), labels)
    }

    pub fn push_owned(&mut self, tensor: Tensor, labels: Vec<Label>) -> &mut Self {
        self.push_cow(Cow::Owned(tensor), labels)
    }

    fn push_cow(&mut self, tensor: Cow<'a, Tensor>, labels: Vec<Label>) -> &mut Self {
        self.nodes.push(Node {
            dims: tensor.dims().to_vec(),
            labels,
            data: Some(tensor),
        });
        self
    }

    /// Adds a node that only carries a shape; such networks can be planned
    /// but not contracted.
    pub fn push_shape(&mut self, dims: Vec<usize>, labels: Vec<Label>) -> &mut Self {
        self.nodes.push(Node {
            labels,
            dims,
            data: None,
        });
        self
    }

    fn check(&self, open: &[Label]) -> Result<()> {
        let mut counts: Vec<(Label, usize, usize)> = Vec::new();
        for n in &self.nodes {
            if n.labels.len() != n.dims.len() {
                return Err(TensorError::Network(format!(
                    "node has {} labels for {} legs",
                    n.labels.len(),
                    n.dims.len()
                )));
            }
            for (k, &l) in n.labels.iter().enumerate() {
                if n.labels[..k].contains(&l) {
                    return Err(TensorError::Network(format!("label {l} repeated on one node")));
                }
                match counts.iter_mut().find(|c| c.0 == l) {
                    Some(c) => {
                        if c.2 != n.dims[k] {
                            return Err(TensorError::Network(format!(
                                "label {l} joins legs of dimension {} and {}",
                                c.2, n.dims[k]
                            )));
                        }
                        c.1 += 1
                    }
                    None => counts.push((l, 1, n.dims[k])),
                }
            }
        }
        for &(l, c, _) in &counts {
            let is_open = open.contains(&l);
            if c > 2 || (c == 2 && is_open) || (c == 1 && !is_open) {
                return Err(TensorError::Network(format!(
                    "label {l} appears {c} times (open: {is_open})"
                )));
            }
        }
        if let Some(&l) = open.iter().find(|l| !counts.iter().any(|c| c.0 == **l)) {
            return Err(TensorError::Network(format!("open label {l} not in network")));
        }
        Ok(())
    }

    /// Plans the contraction using shapes only.
    pub fn plan(&self, open: &[Label]) -> Result<Plan> {
        self.check(open)?;
        let shapes: Vec<(Vec<Label>, Vec<usize>)> =
            self.nodes.iter().map(|n| (n.labels.clone(), n.dims.clone())).collect();
        let steps = if shapes.len() <= MAX_OPTIMAL_NODES {
            let key = canonical_key(&shapes, open);
            let cached = PLANS.with(|p| p.borrow().get(&key).cloned());
            match cached {
                Some(steps) => steps,
                None => {
                    let steps = optimal_steps(&shapes, open).unwrap_or_else(|| greedy_steps(&shapes));
                    PLANS.with(|p| p.borrow_mut().insert(key, steps.clone()));
                    steps
                }
            }
        } else {
            greedy_steps(&shapes)
        };
        let mut items = shapes;
        let mut flops = 0u64;
        for &(i, j) in &steps {
            flops = flops.saturating_add(pair_cost(&items[i], &items[j]).0);
            items[i] = merged_shape(&items[i], &items[j]);
            items.remove(j);
        }
        Ok(Plan { steps, flops })
    }

    /// Contracts the whole network; the result's legs follow `open`.
    pub fn contract(self, open: &[Label]) -> Result<Tensor> {
        if self.nodes.is_empty() {
            return Err(TensorError::Network("empty network".into()));
        }
        let plan = self.plan(open)?;
        let mut items: Vec<(Vec<Label>, Cow<'a, Tensor>)> = Vec::with_capacity(self.nodes.len());
        for n in self.nodes {
            let data = n
                .data
                .ok_or_else(|| TensorError::Network("shape-only node cannot be contracted".into()))?;
            items.push((n.labels, data));
        }
        for (i, j) in plan.steps {
            let (lj, tj) = items.remove(j);
            let (li, ti) = &items[i];
            let pairs: Vec<(usize, usize)> = li
                .iter()
                .enumerate()
                .filter_map(|(a, l)| lj.iter().position(|m| m == l).map(|b| (a, b)))
                .collect();
            let mut labels: Vec<Label> = li.iter().filter(|l| !lj.contains(l)).copied().collect();
            labels.extend(lj.iter().filter(|l| !li.contains(l)));
            let t = contract(ti, &tj, &pairs)?;
            items[i] = (labels, Cow::Owned(t));
        }
        let (labels, t) = items.pop().expect("non-empty network");
        let perm: Vec<usize> = open
            .iter()
            .map(|l| labels.iter().position(|m| m == l).expect("checked open label"))
            .collect();
        t.permute(&perm)
    }
}

const MAX_OPTIMAL_NODES: usize = 16;

type PlanKey = (Vec<(Vec<u32>, Vec<usize>)>, Vec<u32>);

thread_local! {
    static PLANS: RefCell<HashMap<PlanKey, Vec<(usize, usize)>>> = RefCell::new(HashMap::new());
}

/// Structure of a network with labels renamed by first appearance.
fn canonical_key(items: &[(Vec<Label>, Vec<usize>)], open: &[Label]) -> PlanKey {
    let mut names: HashMap<Label, u32> = HashMap::new();
    let mut rename = |l: Label| {
        let next = names.len() as u32;
        *names.entry(l).or_insert(next)
    };
    let nodes = items
        .iter()
        .map(|(ls, ds)| (ls.iter().map(|&l| rename(l)).collect(), ds.clone()))
        .collect();
    let open = open.iter().map(|&l| rename(l)).collect();
    (nodes, open)
}

/// Minimum-cost pairwise order over all contraction trees, or `None` when
/// the network has more than 64 distinct labels.
fn optimal_steps(items: &[(Vec<Label>, Vec<usize>)], open: &[Label]) -> Option<Vec<(usize, usize)>> {
    let n = items.len();
    if n < 2 {
        return Some(Vec::new());
    }
    let mut labels: Vec<(Label, usize)> = Vec::new();
    for (ls, ds) in items {
        for (&l, &d) in ls.iter().zip(ds) {
            if !labels.iter().any(|e| e.0 == l) {
                labels.push((l, d));
            }
        }
    }
    if labels.len() > 64 {
        return None;
    }
    let bit = |l: Label| 1u64 << labels.iter().position(|e| e.0 == l).expect("known label");
    let node_mask: Vec<u64> = items
        .iter()
        .map(|(ls, _)| ls.iter().fold(0, |m, &l| m | bit(l)))
        .collect();
    let open_mask = open.iter().fold(0u64, |m, &l| m | bit(l));
    // Per-byte tables of log2 dimension sums.
    let mut table = vec![[0f64; 256]; 8];
    for (b, t) in table.iter_mut().enumerate() {
        for (v, slot) in t.iter_mut().enumerate() {
            *slot = (0..8)
                .filter(|k| v >> k & 1 == 1)
                .filter_map(|k| labels.get(b * 8 + k))
                .map(|e| (e.1 as f64).log2())
                .sum();
        }
    }
    let log_size = |m: u64| -> f64 { (0..8).map(|b| table[b][((m >> (8 * b)) & 0xff) as usize]).sum() };

    let full = (1usize << n) - 1;
    let mut inside = vec![0u64; full + 1];
    for s in 1..=full {
        let low = s.trailing_zeros() as usize;
        inside[s] = inside[s & (s - 1)] | node_mask[low];
    }
    let ext = |s: usize| inside[s] & (inside[full & !s] | open_mask);
    let mut best = vec![f64::INFINITY; full + 1];
    let mut split = vec![0usize; full + 1];
    for k in 0..n {
        best[1 << k] = 0.0;
    }
    for s in 1..=full {
        if s.count_ones() < 2 {
            continue;
        }
        let low = s & s.wrapping_neg();
        // Enumerate splits whose first part holds the lowest node.
        let rest = s & !low;
        let mut sub = rest;
        loop {
            let a = sub | low;
            if a != s {
                let b = s & !a;
                let total = best[a] + best[b];
                if total < best[s] {
                    let cost = log_size(ext(a) | ext(b)).exp2();
                    if total + cost < best[s] {
                        best[s] = total + cost;
                        split[s] = a;
                    }
                }
            }
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & rest;
        }
    }
    // Replay the tree bottom-up against a shrinking item list.
    let mut masks: Vec<usize> = (0..n).map(|k| 1 << k).collect();
    let mut steps = Vec::with_capacity(n - 1);
    fn emit(s: usize, split: &[usize], masks: &mut Vec<usize>, steps: &mut Vec<(usize, usize)>) {
        if s.count_ones() < 2 {
            return;
        }
        let a = split[s];
        let b = s & !a;
        emit(a, split, masks, steps);
        emit(b, split, masks, steps);
        let ia = masks.iter().position(|&m| m == a).expect("built subtree");
        let ib = masks.iter().position(|&m| m == b).expect("built subtree");
        let (i, j) = (ia.min(ib), ia.max(ib));
        masks[i] = s;
        masks.remove(j);
        steps.push((i, j));
    }
    emit(full, &split, &mut masks, &mut steps);
    Some(steps)
}

fn greedy_steps(shapes: &[(Vec<Label>, Vec<usize>)]) -> Vec<(usize, usize)> {
    let mut items = shapes.to_vec();
    let mut steps = Vec::new();
    while items.len() > 1 {
        let (i, j, _) = choose_pair(&items);
        items[i] = merged_shape(&items[i], &items[j]);
        items.remove(j);
        steps.push((i, j));
    }
    steps
}

fn choose_pair(items: &[(Vec<Label>, Vec<usize>)]) -> (usize, usize, u64) {
    let mut best: Option<(u64, u64, usize, usize)> = None;
    let mut fallback: Option<(u64, u64, usize, usize)> = None;
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            let shares = items[i].0.iter().any(|l| items[j].0.contains(l));
            let (cost, size) = pair_cost(&items[i], &items[j]);
            let key = (cost, size, i, j);
            let slot = if shares { &mut best } else { &mut fallback };
            if slot.is_none_or(|b| (key.0, key.1) < (b.0, b.1)) {
                *slot = Some(key);
            }
        }
    }
    let (cost, _, i, j) = best.or(fallback).expect("at least two items");
    (i, j, cost)
}

fn pair_cost(a: &(Vec<Label>, Vec<usize>), b: &(Vec<Label>, Vec<usize>)) -> (u64, u64) {
    let mut cost = 1u64;
    let mut size = 1u64;
    for (l, &d) in a.0.iter().zip(&a.1) {
        cost = cost.saturating_mul(d as u64);
        if !b.0.contains(l) {
            size = size.saturating_mul(d as u64);
        }
    }
    for (l, &d) in b.0.iter().zip(&b.1) {
        if !a.0.contains(l) {
            cost = cost.saturating_mul(d as u64);
            size = size.saturating_mul(d as u64);
        }
    }
    (cost, size)
}

fn merged_shape(a: &(Vec<Label>, Vec<usize>), b: &(Vec<Label>, Vec<usize>)) -> (Vec<Label>, Vec<usize>) {
    let mut labels = Vec::new();
    let mut dims = Vec::new();
    for (l, &d) in a.0.iter().zip(&a.1) {
        if !b.0.contains(l) {
            labels.push(*l);
            dims.push(d);
        }
    }
    for (l, &d) in b.0.iter().zip(&b.1) {
        if !a.0.contains(l) {
            labels.push(*l);
            dims.push(d);
        }
    }
    (labels, dims)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{flops, C64};

    fn seq(dims: &[usize], start: f64) -> Tensor {
        let mut x = start;
        Tensor::from_fn(dims, |_| {
            x += 0.25;
            C64::new(x, -0.5 * x)
        })
    }

    #[test]
    fn chain_matches_pairwise_contraction() {
        let a = seq(&[2, 3], 0.0);
        let b = seq(&[3, 4], 1.0);
        let c = seq(&[4, 2], 2.0);
        let mut net = Network::new();
        net.push(&a, vec![0, 1]).push(&b, vec![1, 2]).push(&c, vec![2, 3]);
        let r = net.contract(&[3, 0]).unwrap();
        let ab = contract(&a, &b, &[(1, 0)]).unwrap();
        let abc = contract(&ab, &c, &[(1, 0)]).unwrap();
        let expect = abc.permute(&[1, 0]).unwrap();
        assert!(r.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn full_trace_gives_scalar() {
        let a = seq(&[3, 3], 0.0);
        let id = Tensor::identity(&[3]);
        let mut net = Network::new();
        net.push(&a, vec![0, 1]).push(&id, vec![1, 0]);
        let r = net.contract(&[]).unwrap();
        let tr: C64 = (0..3).map(|i| a.get(&[i, i])).sum();
        assert!((r.data()[0] - tr).norm() < 1e-12);
    }

    #[test]
    fn planned_cost_equals_counted_cost() {
        let a = seq(&[2, 3, 4], 0.0);
        let b = seq(&[4, 5], 0.0);
        let c = seq(&[5, 3, 2], 0.0);
        let mut shapes = Network::new();
        shapes
            .push_shape(vec![2, 3, 4], vec![0, 1, 2])
            .push_shape(vec![4, 5], vec![2, 3])
            .push_shape(vec![5, 3, 2], vec![3, 1, 4]);
        let plan = shapes.plan(&[0, 4]).unwrap();
        let mut net = Network::new();
        net.push(&a, vec![0, 1, 2]).push(&b, vec![2, 3]).push(&c, vec![3, 1, 4]);
        flops::reset();
        net.contract(&[0, 4]).unwrap();
        assert_eq!(flops::read(), plan.flops);
    }

    #[test]
    fn malformed_networks_are_rejected() {
        let a = Tensor::zeros(&[2, 2]);
        let b = Tensor::zeros(&[3, 2]);
        let mut net = Network::new();
        net.push(&a, vec![0, 1]).push(&b, vec![1, 2]);
        assert!(net.clone().contract(&[0, 2]).is_err());
        let mut net = Network::new();
        net.push(&a, vec![0, 1]);
        assert!(net.contract(&[0]).is_err());
    }

    #[test]
    fn optimal_order_beats_greedy_on_a_ring() {
        // Small matrices first would be cheapest step by step, but the
        // greedy sequence ends with a large outer product.
        let dims = [vec![8, 2], vec![2, 8], vec![8, 8, 8], vec![8, 8, 8]];
        let labels = [vec![0, 1], vec![1, 2], vec![0, 3, 4], vec![2, 3, 4]];
        let mut net = Network::new();
        for (d, l) in dims.iter().zip(&labels) {
            net.push_shape(d.clone(), l.clone());
        }
        let shapes: Vec<_> = labels.iter().cloned().zip(dims.iter().cloned()).collect();
        let plan = net.plan(&[]).unwrap();
        let mut items = shapes.clone();
        let mut greedy = 0u64;
        for (i, j) in greedy_steps(&shapes) {
            greedy += pair_cost(&items[i], &items[j]).0;
            items[i] = merged_shape(&items[i], &items[j]);
            items.remove(j);
        }
        assert!(plan.flops <= greedy);
        assert_eq!(plan.steps.len(), 3);
    }
}
