//! Server-side index over perturbed vectors.
//!
//! An R*-style tree (overlap-aware subtree choice, margin-driven splits,
//! forced reinsertion) holds the `(d+2)`-space points. Transformed query
//! boxes carry a lot of dead space in the projected geometry, so split
//! quality directly decides how far below a linear scan the block counts
//! land. Leaves store the records themselves (one leaf = one data block),
//! internal nodes are index blocks, and every query tallies simulated
//! block accesses so index efficiency can be measured without filesystem
//! noise.
//!
//! Query execution is two-stage: the tree answers the query's bounding
//! box, then the secured quadratic conditions filter the candidates
//! in memory, short-circuiting on the first failed condition.

use crate::error::{Error, Result};
use crate::perturb::PerturbedRecord;
use crate::query::{Mbr, SecureRangeQuery};

/// Entries per node; 20 mimics 4KB blocks in a large database.
pub const DEFAULT_CAPACITY: usize = 20;

/// Simulated disk accesses, split the way the index stores data: internal
/// nodes are index blocks, leaves are data blocks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BlockCounter {
    pub index_blocks: u64,
    pub data_blocks: u64,
}

impl BlockCounter {
    pub fn total(&self) -> u64 {
        self.index_blocks + self.data_blocks
    }
}

/// Outcome of a two-stage range query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub ids: Vec<u64>,
    pub envelopes: Vec<Vec<u8>>,
    pub counters: BlockCounter,
    pub stage1_count: usize,
}

enum Node {
    Internal { mbr: Mbr, children: Vec<Node> },
    Leaf { mbr: Mbr, entries: Vec<u32> },
}

impl Node {
    fn mbr(&self) -> &Mbr {
        match self {
            Node::Internal { mbr, .. } | Node::Leaf { mbr, .. } => mbr,
        }
    }

    fn height(&self) -> usize {
        match self {
            Node::Leaf { .. } => 1,
            Node::Internal { children, .. } => 1 + children[0].height(),
        }
    }
}

/// Flattened node for persistence and structural audits. `children` holds
/// indices into the flat node list; `entries` holds record ids.
#[derive(Debug, Clone, PartialEq)]
pub enum ExportNode {
    Internal { mbr: Mbr, children: Vec<usize> },
    Leaf { mbr: Mbr, entries: Vec<u64> },
}

/// The immutable server-side store: records plus the R-tree over them.
pub struct IndexStore {
    records: Vec<PerturbedRecord>,
    root: Node,
    capacity: usize,
    dims: usize,
}

fn area(mbr: &Mbr) -> f64 {
    mbr.bounds().iter().map(|(lo, hi)| hi - lo).product()
}

fn margin(mbr: &Mbr) -> f64 {
    mbr.bounds().iter().map(|(lo, hi)| hi - lo).sum()
}

fn union_area(a: &Mbr, b: &Mbr) -> f64 {
    a.bounds()
        .iter()
        .zip(b.bounds())
        .map(|((alo, ahi), (blo, bhi))| ahi.max(*bhi) - alo.min(*blo))
        .product()
}

fn enlargement(host: &Mbr, add: &Mbr) -> f64 {
    union_area(host, add) - area(host)
}

fn overlap_area(a: &Mbr, b: &Mbr) -> f64 {
    a.bounds()
        .iter()
        .zip(b.bounds())
        .map(|((alo, ahi), (blo, bhi))| (ahi.min(*bhi) - alo.max(*blo)).max(0.0))
        .product()
}

fn union_of(mbrs: &[Mbr], group: &[usize]) -> Mbr {
    let mut out = mbrs[group[0]].clone();
    for &i in &group[1..] {
        out.expand_mbr(&mbrs[i]);
    }
    out
}

/// R*-style split: pick the axis with the smallest margin sum over all
/// legal distributions of the sorted entries, then the distribution with
/// the least overlap (ties by area). Returns the two index groups.
fn rstar_split(mbrs: &[Mbr], min_fill: usize) -> (Vec<usize>, Vec<usize>) {
    let n = mbrs.len();
    let dims = mbrs[0].dims();
    let min_fill = min_fill.clamp(1, n / 2);

    let mut best_axis = 0;
    let mut best_axis_margin = f64::INFINITY;
    let mut axis_orders: Vec<Vec<Vec<usize>>> = Vec::with_capacity(dims);
    for axis in 0..dims {
        let mut by_lo: Vec<usize> = (0..n).collect();
        by_lo.sort_by(|&a, &b| mbrs[a].bounds()[axis].0.total_cmp(&mbrs[b].bounds()[axis].0));
        let mut by_hi: Vec<usize> = (0..n).collect();
        by_hi.sort_by(|&a, &b| mbrs[a].bounds()[axis].1.total_cmp(&mbrs[b].bounds()[axis].1));
        let mut margin_sum = 0.0;
        for order in [&by_lo, &by_hi] {
            for k in min_fill..=(n - min_fill) {
                margin_sum += margin(&union_of(mbrs, &order[..k]))
                    + margin(&union_of(mbrs, &order[k..]));
            }
        }
        if margin_sum < best_axis_margin {
            best_axis_margin = margin_sum;
            best_axis = axis;
        }
        axis_orders.push(vec![by_lo, by_hi]);
    }

    let mut best: Option<(f64, f64, Vec<usize>, Vec<usize>)> = None;
    for order in &axis_orders[best_axis] {
        for k in min_fill..=(n - min_fill) {
            let g1 = &order[..k];
            let g2 = &order[k..];
            let b1 = union_of(mbrs, g1);
            let b2 = union_of(mbrs, g2);
            let overlap = overlap_area(&b1, &b2);
            let total_area = area(&b1) + area(&b2);
            let better = match &best {
                None => true,
                Some((bo, ba, _, _)) => {
                    overlap < *bo || (overlap == *bo && total_area < *ba)
                }
            };
            if better {
                best = Some((overlap, total_area, g1.to_vec(), g2.to_vec()));
            }
        }
    }
    let (_, _, g1, g2) = best.expect("at least one distribution exists");
    (g1, g2)
}

impl IndexStore {
    /// Builds the tree by sequential insertion.
    pub fn build(records: Vec<PerturbedRecord>, capacity: usize) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let capacity = capacity.max(2);
        let dims = records[0].y.len();
        for r in &records {
            if r.y.len() != dims {
                return Err(Error::DimensionMismatch(format!(
                    "record {} has {} dimensions, expected {dims}",
                    r.id,
                    r.y.len()
                )));
            }
        }
        let mut store = IndexStore {
            root: Node::Leaf {
                mbr: Mbr::of_point(&records[0].y),
                entries: Vec::new(),
            },
            records,
            capacity,
            dims,
        };
        for pos in 0..store.records.len() {
            store.insert(pos as u32);
        }
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn height(&self) -> usize {
        self.root.height()
    }

    pub fn records(&self) -> &[PerturbedRecord] {
        &self.records
    }

    /// Blocks a full linear scan of the data would read.
    pub fn linear_scan_blocks(&self) -> u64 {
        (self.records.len() as u64).div_ceil(self.capacity as u64)
    }

    fn insert(&mut self, pos: u32) {
        let mut queue = std::collections::VecDeque::new();
        queue.push_back(InsertItem::Point {
            pos,
            mbr: Mbr::of_point(&self.records[pos as usize].y),
        });
        // Levels that already ran a forced reinsertion during this
        // insertion; further overflows there split instead.
        let mut reinserted_levels: u64 = 0;
        while let Some(item) = queue.pop_front() {
            let root_height = self.root.height();
            let records = &self.records;
            let capacity = self.capacity;
            match insert_rec(
                &mut self.root,
                root_height,
                item,
                records,
                capacity,
                &mut reinserted_levels,
                true,
            ) {
                Outcome::Fit => {}
                Outcome::Evict(items) => queue.extend(items),
                Outcome::Split(sibling) => {
                    let old_root = std::mem::replace(
                        &mut self.root,
                        Node::Leaf {
                            mbr: Mbr::empty(self.dims),
                            entries: Vec::new(),
                        },
                    );
                    let mut mbr = old_root.mbr().clone();
                    mbr.expand_mbr(sibling.mbr());
                    self.root = Node::Internal {
                        mbr,
                        children: vec![old_root, sibling],
                    };
                }
            }
        }
    }

    /// Stage 1: record positions inside the box, plus the block accesses
    /// the walk performed.
    fn stage1_positions(&self, mbr: &Mbr) -> (Vec<u32>, BlockCounter) {
        let mut counter = BlockCounter::default();
        let mut hits = Vec::new();
        let mut stack = vec![&self.root];
        while let Some(node) = stack.pop() {
            match node {
                Node::Internal { children, .. } => {
                    counter.index_blocks += 1;
                    for child in children {
                        if child.mbr().intersects(mbr) {
                            stack.push(child);
                        }
                    }
                }
                Node::Leaf { entries, .. } => {
                    counter.data_blocks += 1;
                    for &pos in entries {
                        if mbr.contains_point(&self.records[pos as usize].y) {
                            hits.push(pos);
                        }
                    }
                }
            }
        }
        (hits, counter)
    }

    /// Stage-1 search by bounding box: exactly the enclosed records.
    pub fn stage1_search(&self, mbr: &Mbr) -> Result<(Vec<u64>, BlockCounter)> {
        if mbr.dims() != self.dims {
            return Err(Error::DimensionMismatch(format!(
                "query box has {} dimensions, index has {}",
                mbr.dims(),
                self.dims
            )));
        }
        let (positions, counter) = self.stage1_positions(mbr);
        let mut ids: Vec<u64> = positions
            .iter()
            .map(|&p| self.records[p as usize].id)
            .collect();
        ids.sort_unstable();
        Ok((ids, counter))
    }

    fn validate_query(&self, q: &SecureRangeQuery) -> Result<()> {
        if q.mbr.dims() != self.dims {
            return Err(Error::DimensionMismatch(format!(
                "query box has {} dimensions, index has {}",
                q.mbr.dims(),
                self.dims
            )));
        }
        let expected = 2 * (self.dims - 2);
        if q.thetas.len() != expected {
            return Err(Error::ThetaMismatch(format!(
                "expected {expected} conditions, got {}",
                q.thetas.len()
            )));
        }
        Ok(())
    }

    /// Full two-stage execution: index walk on the MBR, then quadratic
    /// filtering, short-circuiting per record on the first failed
    /// condition.
    pub fn two_stage_query(&self, q: &SecureRangeQuery) -> Result<QueryResult> {
        self.validate_query(q)?;
        let (candidates, counters) = self.stage1_positions(&q.mbr);
        let stage1_count = candidates.len();
        let mut matched: Vec<&PerturbedRecord> = candidates
            .into_iter()
            .map(|p| &self.records[p as usize])
            .filter(|r| q.thetas.iter().all(|t| t.accepts(&r.y)))
            .collect();
        matched.sort_unstable_by_key(|r| r.id);
        Ok(QueryResult {
            ids: matched.iter().map(|r| r.id).collect(),
            envelopes: matched.iter().map(|r| r.envelope.clone()).collect(),
            counters,
            stage1_count,
        })
    }

    /// Cardinality-only variant used by the kNN range search.
    pub fn count_in_range(&self, q: &SecureRangeQuery) -> Result<(usize, BlockCounter)> {
        self.validate_query(q)?;
        let (candidates, counters) = self.stage1_positions(&q.mbr);
        let count = candidates
            .into_iter()
            .filter(|&p| {
                let y = &self.records[p as usize].y;
                q.thetas.iter().all(|t| t.accepts(y))
            })
            .count();
        Ok((count, counters))
    }

    /// Record lookup by id (results travel as ids + envelopes).
    pub fn record_by_id(&self, id: u64) -> Option<&PerturbedRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Flattens the tree in preorder for persistence and audits.
    pub fn export_nodes(&self) -> Vec<ExportNode> {
        let mut out = Vec::new();
        self.export_rec(&self.root, &mut out);
        out
    }

    fn export_rec(&self, node: &Node, out: &mut Vec<ExportNode>) -> usize {
        let slot = out.len();
        match node {
            Node::Leaf { mbr, entries } => {
                out.push(ExportNode::Leaf {
                    mbr: mbr.clone(),
                    entries: entries
                        .iter()
                        .map(|&p| self.records[p as usize].id)
                        .collect(),
                });
            }
            Node::Internal { mbr, children } => {
                out.push(ExportNode::Internal {
                    mbr: mbr.clone(),
                    children: Vec::new(),
                });
                let idx: Vec<usize> = children.iter().map(|c| self.export_rec(c, out)).collect();
                if let ExportNode::Internal { children, .. } = &mut out[slot] {
                    *children = idx;
                }
            }
        }
        slot
    }

    /// Rebuilds a store from exported nodes and the record list. The node
    /// layout is trusted as written; hulls are re-derived defensively.
    pub fn from_export(
        nodes: &[ExportNode],
        records: Vec<PerturbedRecord>,
        capacity: usize,
    ) -> Result<Self> {
        if records.is_empty() || nodes.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let dims = records[0].y.len();
        let mut id_to_pos = std::collections::HashMap::new();
        for (pos, r) in records.iter().enumerate() {
            id_to_pos.insert(r.id, pos as u32);
        }
        let root = build_from_export(nodes, 0, &id_to_pos)?;
        Ok(IndexStore {
            records,
            root,
            capacity: capacity.max(2),
            dims,
        })
    }
}

fn build_from_export(
    nodes: &[ExportNode],
    at: usize,
    id_to_pos: &std::collections::HashMap<u64, u32>,
) -> Result<Node> {
    match &nodes[at] {
        ExportNode::Leaf { mbr, entries } => {
            let mut positions = Vec::with_capacity(entries.len());
            for id in entries {
                let pos = id_to_pos.get(id).ok_or(Error::DimensionMismatch(format!(
                    "index references unknown record id {id}"
                )))?;
                positions.push(*pos);
            }
            Ok(Node::Leaf {
                mbr: mbr.clone(),
                entries: positions,
            })
        }
        ExportNode::Internal { mbr, children } => {
            let kids = children
                .iter()
                .map(|&c| build_from_export(nodes, c, id_to_pos))
                .collect::<Result<Vec<_>>>()?;
            Ok(Node::Internal {
                mbr: mbr.clone(),
                children: kids,
            })
        }
    }
}

/// One thing on its way into the tree: a data point, or a whole subtree
/// displaced by a forced reinsertion.
enum InsertItem {
    Point { pos: u32, mbr: Mbr },
    Subtree { node: Node, height: usize },
}

impl InsertItem {
    fn mbr(&self) -> &Mbr {
        match self {
            InsertItem::Point { mbr, .. } => mbr,
            InsertItem::Subtree { node, .. } => node.mbr(),
        }
    }

    /// Height of the node this item becomes a child of.
    fn target_height(&self) -> usize {
        match self {
            InsertItem::Point { .. } => 1,
            InsertItem::Subtree { height, .. } => height + 1,
        }
    }
}

/// Outcome of inserting into a subtree: placed cleanly, a split-off
/// sibling for the caller, or items evicted for reinsertion from the top.
enum Outcome {
    Fit,
    Split(Node),
    Evict(Vec<InsertItem>),
}

fn min_fill(capacity: usize) -> usize {
    (capacity * 2).div_ceil(5).max(1)
}

/// Entries displaced on the first overflow per level per insertion (30%).
fn reinsert_count(capacity: usize) -> usize {
    (capacity * 3 / 10).max(1)
}

fn mbr_center(m: &Mbr) -> Vec<f64> {
    m.bounds().iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect()
}

fn center_dist_sq(c: &[f64], p: &[f64]) -> f64 {
    c.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Overlap-aware subtree choice: parents of leaves minimize the overlap
/// enlargement their siblings would suffer; higher levels minimize area
/// enlargement. Ties fall through to area enlargement, then area.
fn choose_subtree(children: &[Node], point: &Mbr) -> usize {
    let leaf_parent = matches!(children[0], Node::Leaf { .. });
    let mut best = 0;
    let mut best_key = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    for (i, child) in children.iter().enumerate() {
        let mut host = child.mbr().clone();
        host.expand_mbr(point);
        let overlap_enl = if leaf_parent {
            let mut delta = 0.0;
            for (j, other) in children.iter().enumerate() {
                if i == j {
                    continue;
                }
                delta += overlap_area(&host, other.mbr())
                    - overlap_area(child.mbr(), other.mbr());
            }
            delta
        } else {
            0.0
        };
        let key = (
            overlap_enl,
            enlargement(child.mbr(), point),
            area(child.mbr()),
        );
        if key < best_key {
            best_key = key;
            best = i;
        }
    }
    best
}

/// Splits an overflowing internal node's children into two nodes.
fn split_internal(mbr: &mut Mbr, children: &mut Vec<Node>, capacity: usize) -> Node {
    let boxes: Vec<Mbr> = children.iter().map(|c| c.mbr().clone()).collect();
    let (g1, g2) = rstar_split(&boxes, min_fill(capacity));
    let mut moved: Vec<Option<Node>> = children.drain(..).map(Some).collect();
    let mut collect = |group: &[usize]| -> (Mbr, Vec<Node>) {
        let m = union_of(&boxes, group);
        let kids = group
            .iter()
            .map(|&i| moved[i].take().expect("group indices are disjoint"))
            .collect();
        (m, kids)
    };
    let (m1, k1) = collect(&g1);
    let (m2, k2) = collect(&g2);
    *mbr = m1;
    *children = k1;
    Node::Internal { mbr: m2, children: k2 }
}

fn insert_rec(
    node: &mut Node,
    node_height: usize,
    item: InsertItem,
    records: &[PerturbedRecord],
    capacity: usize,
    reinserted_levels: &mut u64,
    is_root: bool,
) -> Outcome {
    // Forced reinsertion runs once per level per insertion, never at the
    // root.
    fn may_reinsert(levels: &mut u64, height: usize, is_root: bool) -> bool {
        if is_root || height >= 64 || *levels >> height & 1 == 1 {
            return false;
        }
        *levels |= 1 << height;
        true
    }
    match node {
        Node::Leaf { mbr, entries } => {
            let InsertItem::Point { pos, mbr: point } = item else {
                unreachable!("subtrees never target leaf nodes");
            };
            if entries.is_empty() {
                *mbr = point.clone();
            } else {
                mbr.expand_mbr(&point);
            }
            entries.push(pos);
            if entries.len() <= capacity {
                return Outcome::Fit;
            }
            if may_reinsert(reinserted_levels, node_height, is_root) {
                // Evict the entries farthest from the node center and let
                // the top re-place them; this is what keeps sibling
                // overlap down as the tree ages.
                let center = mbr_center(mbr);
                let mut order: Vec<usize> = (0..entries.len()).collect();
                order.sort_by(|&a, &b| {
                    let da = center_dist_sq(&center, &records[entries[a] as usize].y);
                    let db = center_dist_sq(&center, &records[entries[b] as usize].y);
                    db.total_cmp(&da)
                });
                let k = reinsert_count(capacity);
                let evict: Vec<InsertItem> = order[..k]
                    .iter()
                    .map(|&i| InsertItem::Point {
                        pos: entries[i],
                        mbr: Mbr::of_point(&records[entries[i] as usize].y),
                    })
                    .collect();
                let keep: Vec<u32> = order[k..].iter().map(|&i| entries[i]).collect();
                *entries = keep;
                let mut tight = Mbr::of_point(&records[entries[0] as usize].y);
                for &e in &entries[1..] {
                    tight.expand_point(&records[e as usize].y);
                }
                *mbr = tight;
                return Outcome::Evict(evict);
            }
            // Split the entries into two leaves.
            let boxes: Vec<Mbr> = entries
                .iter()
                .map(|&p| Mbr::of_point(&records[p as usize].y))
                .collect();
            let (g1, g2) = rstar_split(&boxes, min_fill(capacity));
            let take = |group: &[usize]| -> (Mbr, Vec<u32>) {
                (union_of(&boxes, group), group.iter().map(|&i| entries[i]).collect())
            };
            let (m1, e1) = take(&g1);
            let (m2, e2) = take(&g2);
            *mbr = m1;
            *entries = e1;
            Outcome::Split(Node::Leaf { mbr: m2, entries: e2 })
        }
        Node::Internal { mbr, children } => {
            if item.target_height() == node_height {
                // A displaced subtree re-attaches at its original level.
                children.push(match item {
                    InsertItem::Subtree { node, .. } => node,
                    InsertItem::Point { .. } => unreachable!("points attach at leaves"),
                });
            } else {
                let best = choose_subtree(children, item.mbr());
                let item_mbr = item.mbr().clone();
                match insert_rec(
                    &mut children[best],
                    node_height - 1,
                    item,
                    records,
                    capacity,
                    reinserted_levels,
                    false,
                ) {
                    Outcome::Fit => {
                        mbr.expand_mbr(&item_mbr);
                        return Outcome::Fit;
                    }
                    Outcome::Evict(evicted) => {
                        // The child shrank; recompute the tight hull.
                        let mut tight = children[0].mbr().clone();
                        for c in &children[1..] {
                            tight.expand_mbr(c.mbr());
                        }
                        *mbr = tight;
                        return Outcome::Evict(evicted);
                    }
                    Outcome::Split(sibling) => children.push(sibling),
                }
            }
            let mut tight = children[0].mbr().clone();
            for c in &children[1..] {
                tight.expand_mbr(c.mbr());
            }
            *mbr = tight;
            if children.len() <= capacity {
                return Outcome::Fit;
            }
            if may_reinsert(reinserted_levels, node_height, is_root) {
                let center = mbr_center(mbr);
                let mut order: Vec<usize> = (0..children.len()).collect();
                order.sort_by(|&a, &b| {
                    let da = center_dist_sq(&center, &mbr_center(children[a].mbr()));
                    let db = center_dist_sq(&center, &mbr_center(children[b].mbr()));
                    db.total_cmp(&da)
                });
                let k = reinsert_count(capacity);
                let evict_idx: Vec<usize> = order[..k].to_vec();
                let mut moved: Vec<Option<Node>> = children.drain(..).map(Some).collect();
                let evict: Vec<InsertItem> = evict_idx
                    .iter()
                    .map(|&i| InsertItem::Subtree {
                        node: moved[i].take().expect("evicted once"),
                        height: node_height - 1,
                    })
                    .collect();
                *children = moved.into_iter().flatten().collect();
                let mut tight = children[0].mbr().clone();
                for c in &children[1..] {
                    tight.expand_mbr(c.mbr());
                }
                *mbr = tight;
                return Outcome::Evict(evict);
            }
            Outcome::Split(split_internal(mbr, children, capacity))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturb::{normalize_dataset, perturb_dataset, KeyParams, PlainRecord, RaspKey};
    use crate::query::{transform_query, RangeQuerySpec};
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn synthetic_records(n: usize, dims: usize, seed: u64) -> Vec<PerturbedRecord> {
        let mut r = rng(seed);
        (0..n)
            .map(|i| PerturbedRecord {
                id: i as u64,
                y: (0..dims).map(|_| r.gen::<f64>() * 20.0 - 10.0).collect(),
                envelope: Vec::new(),
            })
            .collect()
    }

    fn brute_force_in_mbr(records: &[PerturbedRecord], mbr: &Mbr) -> Vec<u64> {
        let mut ids: Vec<u64> = records
            .iter()
            .filter(|r| mbr.contains_point(&r.y))
            .map(|r| r.id)
            .collect();
        ids.sort_unstable();
        ids
    }

    #[test]
    fn single_record_is_a_point_leaf() {
        let records = synthetic_records(1, 4, 1);
        let y = records[0].y.clone();
        let store = IndexStore::build(records, 20).unwrap();
        assert_eq!(store.height(), 1);
        let nodes = store.export_nodes();
        assert_eq!(nodes.len(), 1);
        match &nodes[0] {
            ExportNode::Leaf { mbr, entries } => {
                assert_eq!(entries, &vec![0u64]);
                for ((lo, hi), v) in mbr.bounds().iter().zip(&y) {
                    assert_eq!(lo, v);
                    assert_eq!(hi, v);
                }
            }
            _ => panic!("expected a leaf root"),
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(matches!(
            IndexStore::build(Vec::new(), 20),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn twenty_thousand_records_make_at_least_a_thousand_leaves() {
        let records = synthetic_records(20_000, 7, 2);
        let store = IndexStore::build(records, 20).unwrap();
        let leaves = store
            .export_nodes()
            .iter()
            .filter(|n| matches!(n, ExportNode::Leaf { .. }))
            .count();
        assert!(leaves >= 1000, "only {leaves} leaves");
        assert_eq!(store.linear_scan_blocks(), 1000);
        // Height stays logarithmic.
        assert!(store.height() <= 6, "height {} too tall", store.height());
    }

    #[test]
    fn every_node_mbr_is_the_hull_of_its_children() {
        let records = synthetic_records(3000, 5, 3);
        let store = IndexStore::build(records, 10).unwrap();
        let nodes = store.export_nodes();
        let recs = store.records();
        for node in &nodes {
            match node {
                ExportNode::Leaf { mbr, entries } => {
                    assert!(!entries.is_empty());
                    let mut hull = Mbr::of_point(&recs[entries[0] as usize].y);
                    for &id in entries {
                        hull.expand_point(&recs[id as usize].y);
                    }
                    assert_eq!(&hull, mbr, "leaf hull mismatch");
                }
                ExportNode::Internal { mbr, children } => {
                    assert!(!children.is_empty());
                    let mut hull = nodes[children[0]].mbr_ref().clone();
                    for &c in children {
                        hull.expand_mbr(nodes[c].mbr_ref());
                    }
                    assert_eq!(&hull, mbr, "internal hull mismatch");
                }
            }
        }
    }

    impl ExportNode {
        fn mbr_ref(&self) -> &Mbr {
            match self {
                ExportNode::Internal { mbr, .. } | ExportNode::Leaf { mbr, .. } => mbr,
            }
        }
    }

    #[test]
    fn stage1_equals_brute_force_on_random_boxes() {
        let records = synthetic_records(4000, 5, 4);
        let store = IndexStore::build(records.clone(), 20).unwrap();
        let mut r = rng(5);
        for _ in 0..50 {
            let bounds: Vec<(f64, f64)> = (0..5)
                .map(|_| {
                    let a = r.gen::<f64>() * 20.0 - 10.0;
                    let b = r.gen::<f64>() * 20.0 - 10.0;
                    (a.min(b), a.max(b))
                })
                .collect();
            let mbr = Mbr::from_bounds(bounds);
            let (ids, _) = store.stage1_search(&mbr).unwrap();
            assert_eq!(ids, brute_force_in_mbr(&records, &mbr));
        }
    }

    #[test]
    fn full_domain_box_returns_everything_and_visits_all_blocks() {
        let records = synthetic_records(2000, 4, 6);
        let store = IndexStore::build(records, 20).unwrap();
        let mbr = Mbr::from_bounds(vec![(-1e12, 1e12); 4]);
        let (ids, counter) = store.stage1_search(&mbr).unwrap();
        assert_eq!(ids.len(), 2000);
        let nodes = store.export_nodes();
        let leaves = nodes.iter().filter(|n| matches!(n, ExportNode::Leaf { .. })).count() as u64;
        let internals = nodes.len() as u64 - leaves;
        assert_eq!(counter.data_blocks, leaves);
        assert_eq!(counter.index_blocks, internals);
    }

    #[test]
    fn disjoint_box_costs_at_most_the_height() {
        let records = synthetic_records(2000, 4, 7);
        let store = IndexStore::build(records, 20).unwrap();
        let mbr = Mbr::from_bounds(vec![(1e6, 2e6); 4]);
        let (ids, counter) = store.stage1_search(&mbr).unwrap();
        assert!(ids.is_empty());
        assert!(counter.total() <= store.height() as u64);
    }

    /// End-to-end fixture: normalized data, key, perturbed records, store.
    fn secured_fixture(
        n: usize,
        d: usize,
        seed: u64,
    ) -> (RaspKey, Vec<Vec<f64>>, IndexStore) {
        let mut r = rng(seed);
        let raw: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| r.gen::<f64>()).collect())
            .collect();
        let (normalized, _) = normalize_dataset(&raw).unwrap();
        let key = RaspKey::generate(
            &normalized,
            &KeyParams {
                buckets: 64,
                ..KeyParams::default()
            },
            &mut r,
        )
        .unwrap();
        let plain: Vec<PlainRecord> = normalized
            .iter()
            .map(|v| PlainRecord::new(v.clone()))
            .collect();
        let perturbed = perturb_dataset(&key, &plain, &mut r);
        let store = IndexStore::build(perturbed, 20).unwrap();
        (key, normalized, store)
    }

    fn random_range_spec<R: Rng>(d: usize, frac: f64, r: &mut R) -> RangeQuerySpec {
        // Normalized uniform data spans about [-1.73, 1.73]; take a window
        // of the requested fractional width at a random position.
        let span = 2.0 * 1.7320508;
        let width = frac * span;
        let intervals = (0..d)
            .map(|_| {
                let lo = -1.7320508 + r.gen::<f64>() * (span - width);
                (lo, lo + width)
            })
            .collect();
        RangeQuerySpec::from_intervals(intervals).unwrap()
    }

    #[test]
    fn two_stage_query_matches_plaintext_linear_scan() {
        let (key, plain, store) = secured_fixture(2000, 3, 10);
        let mut r = rng(11);
        for _ in 0..100 {
            let spec = random_range_spec(3, 0.4, &mut r);
            let sq = transform_query(&key, &spec).unwrap();
            let result = store.two_stage_query(&sq).unwrap();
            let expected: Vec<u64> = plain
                .iter()
                .enumerate()
                .filter(|(_, x)| spec.contains(x))
                .map(|(i, _)| i as u64)
                .collect();
            assert_eq!(result.ids, expected);
            assert!(result.stage1_count >= result.ids.len());
        }
    }

    #[test]
    fn count_matches_query_cardinality() {
        let (key, plain, store) = secured_fixture(1500, 2, 20);
        let mut r = rng(21);
        // Trivial cases first.
        let empty = transform_query(
            &key,
            &RangeQuerySpec::from_intervals(vec![(5.0, 5.1), (5.0, 5.1)]).unwrap(),
        )
        .unwrap();
        assert_eq!(store.count_in_range(&empty).unwrap().0, 0);
        let full = transform_query(&key, &RangeQuerySpec::full_domain(2)).unwrap();
        assert_eq!(store.count_in_range(&full).unwrap().0, 1500);
        // Random ranges agree with the oracle count.
        for _ in 0..50 {
            let spec = random_range_spec(2, 0.3, &mut r);
            let sq = transform_query(&key, &spec).unwrap();
            let (count, _) = store.count_in_range(&sq).unwrap();
            let expected = plain.iter().filter(|x| spec.contains(x)).count();
            assert_eq!(count, expected);
        }
    }

    #[test]
    fn results_independent_of_insertion_order() {
        let (key, _, store) = secured_fixture(1200, 2, 30);
        let mut shuffled = store.records().to_vec();
        shuffled.shuffle(&mut rng(31));
        let store2 = IndexStore::build(shuffled, 20).unwrap();
        let mut r = rng(32);
        for _ in 0..30 {
            let spec = random_range_spec(2, 0.35, &mut r);
            let sq = transform_query(&key, &spec).unwrap();
            let a = store.two_stage_query(&sq).unwrap();
            let b = store2.two_stage_query(&sq).unwrap();
            assert_eq!(a.ids, b.ids);
        }
    }

    #[test]
    fn malformed_theta_list_rejected() {
        let (key, _, store) = secured_fixture(500, 2, 40);
        let spec = RangeQuerySpec::full_domain(2);
        let mut sq = transform_query(&key, &spec).unwrap();
        sq.thetas.pop();
        assert!(matches!(
            store.two_stage_query(&sq),
            Err(Error::ThetaMismatch(_))
        ));
    }

    #[test]
    fn export_round_trip_preserves_query_results() {
        let (key, _, store) = secured_fixture(800, 2, 50);
        let nodes = store.export_nodes();
        let rebuilt =
            IndexStore::from_export(&nodes, store.records().to_vec(), store.capacity()).unwrap();
        let mut r = rng(51);
        for _ in 0..20 {
            let spec = random_range_spec(2, 0.4, &mut r);
            let sq = transform_query(&key, &spec).unwrap();
            assert_eq!(
                store.two_stage_query(&sq).unwrap().ids,
                rebuilt.two_stage_query(&sq).unwrap().ids
            );
        }
    }

    #[test]
    fn linear_scan_block_count_is_ceil_n_over_capacity() {
        let records = synthetic_records(101, 3, 60);
        let store = IndexStore::build(records, 20).unwrap();
        assert_eq!(store.linear_scan_blocks(), 6);
    }
}
