//! Exhaustive tree edit distance for tiny trees: the minimum over every valid
//! ordered mapping of (renames + unmapped nodes on both sides).

use vstp_core::metrics::TedsTree;

struct Indexed<'a> {
    nodes: Vec<&'a TedsTree>,
    pre: Vec<usize>,
    size: Vec<usize>,
}

fn index(t: &TedsTree) -> Indexed<'_> {
    fn walk<'a>(t: &'a TedsTree, out: &mut Indexed<'a>) -> usize {
        let me = out.nodes.len();
        out.nodes.push(t);
        out.pre.push(me);
        out.size.push(0);
        let mut size = 1;
        for c in &t.children {
            size += walk(c, out);
        }
        out.size[me] = size;
        size
    }
    let mut ix = Indexed { nodes: vec![], pre: vec![], size: vec![] };
    walk(t, &mut ix);
    ix
}

fn ancestor(ix: &Indexed, a: usize, b: usize) -> bool {
    ix.pre[a] < ix.pre[b] && ix.pre[b] < ix.pre[a] + ix.size[a]
}

fn left_of(ix: &Indexed, a: usize, b: usize) -> bool {
    ix.pre[a] < ix.pre[b] && !ancestor(ix, a, b)
}

fn edit(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    fn go(a: &[char], b: &[char]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((x, ra)), Some((y, rb))) => {
                let sub = go(ra, rb) + (x != y) as usize;
                sub.min(go(ra, b) + 1).min(go(a, rb) + 1)
            }
        }
    }
    go(&a, &b)
}

pub fn relabel(a: &TedsTree, b: &TedsTree) -> f64 {
    if a.tag != b.tag || a.rowspan != b.rowspan || a.colspan != b.colspan {
        return 1.0;
    }
    match (&a.content, &b.content) {
        (None, None) => 0.0,
        (Some(x), Some(y)) => {
            let m = x.chars().count().max(y.chars().count());
            if m == 0 {
                0.0
            } else {
                edit(x, y) as f64 / m as f64
            }
        }
        _ => 1.0,
    }
}

pub fn brute_force_ted(a: &TedsTree, b: &TedsTree) -> f64 {
    let (ia, ib) = (index(a), index(b));
    let (n, m) = (ia.nodes.len(), ib.nodes.len());
    let mut best = f64::INFINITY;
    let mut assign: Vec<Option<usize>> = vec![None; n];
    let mut used = vec![false; m];

    fn valid(ia: &Indexed, ib: &Indexed, assign: &[Option<usize>], i: usize, j: usize) -> bool {
        assign.iter().enumerate().take(i).all(|(k, aj)| match aj {
            None => true,
            Some(l) => {
                ancestor(ia, k, i) == ancestor(ib, *l, j)
                    && ancestor(ia, i, k) == ancestor(ib, j, *l)
                    && left_of(ia, k, i) == left_of(ib, *l, j)
                    && left_of(ia, i, k) == left_of(ib, j, *l)
            }
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn rec(
        i: usize,
        ia: &Indexed,
        ib: &Indexed,
        assign: &mut Vec<Option<usize>>,
        used: &mut Vec<bool>,
        cost: f64,
        mapped: usize,
        best: &mut f64,
    ) {
        let (n, m) = (ia.nodes.len(), ib.nodes.len());
        if i == n {
            let total = cost + (n - mapped) as f64 + (m - mapped) as f64;
            if total < *best {
                *best = total;
            }
            return;
        }
        assign[i] = None;
        rec(i + 1, ia, ib, assign, used, cost, mapped, best);
        for j in 0..m {
            if !used[j] && valid(ia, ib, assign, i, j) {
                used[j] = true;
                assign[i] = Some(j);
                let c = relabel(ia.nodes[i], ib.nodes[j]);
                rec(i + 1, ia, ib, assign, used, cost + c, mapped + 1, best);
                used[j] = false;
                assign[i] = None;
            }
        }
    }

    rec(0, &ia, &ib, &mut assign, &mut used, 0.0, 0, &mut best);
    best
}

/// Tree from a parent array (`parents[i] < i + 1` indexes earlier nodes;
/// node 0 is the root) with per-node labels.
pub fn tree_from_parents(parents: &[usize], labels: &[(String, u32, Option<String>)]) -> TedsTree {
    fn build(i: usize, parents: &[usize], labels: &[(String, u32, Option<String>)]) -> TedsTree {
        let children = (1..labels.len()).filter(|&c| parents[c - 1] == i).map(|c| build(c, parents, labels)).collect();
        let (tag, span, content) = &labels[i];
        TedsTree { tag: tag.clone(), rowspan: 1, colspan: *span, content: content.clone(), children }
    }
    build(0, parents, labels)
}
