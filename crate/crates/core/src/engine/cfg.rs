use std::collections::{BTreeMap, BTreeSet};

use crate::il::{Label, Program, Stmt};

/// Successors of a label over constant jump targets. Computed jumps
/// contribute no edges.
pub fn successors(p: &Program, l: Label) -> Vec<Label> {
    let konst = |e: &crate::il::Expr| e.as_word_const().map(|w| w.value());
    match p.stmt(l) {
        None => vec![],
        Some(Stmt::Assign(..)) | Some(Stmt::Assert(_)) => vec![p.next_label(l)],
        Some(Stmt::Jmp(t)) => konst(t).into_iter().collect(),
        Some(Stmt::CJmp(_, t, f)) => konst(t).into_iter().chain(konst(f)).collect(),
    }
}

/// Reverse post-order index of every label reachable from `entry`.
pub fn topological_order(p: &Program, entry: Label) -> BTreeMap<Label, usize> {
    let mut post = Vec::new();
    let mut seen = BTreeSet::from([entry]);
    // Iterative depth-first search with an explicit successor cursor.
    let mut stack = vec![(entry, successors(p, entry), 0usize)];
    while let Some((l, succ, i)) = stack.last_mut() {
        if let Some(&n) = succ.get(*i) {
            *i += 1;
            if seen.insert(n) {
                let s = successors(p, n);
                stack.push((n, s, 0));
            }
        } else {
            post.push(*l);
            stack.pop();
        }
    }
    post.into_iter().rev().enumerate().map(|(i, l)| (l, i)).collect()
}

/// Labels reachable from `entry` with at least two incoming edges.
pub fn join_points(p: &Program, entry: Label) -> BTreeSet<Label> {
    let reach = topological_order(p, entry);
    let mut incoming: BTreeMap<Label, usize> = BTreeMap::new();
    for l in reach.keys() {
        for s in successors(p, *l) {
            *incoming.entry(s).or_default() += 1;
        }
    }
    incoming
        .into_iter()
        .filter(|(_, n)| *n >= 2)
        .map(|(l, _)| l)
        .collect()
}
