//! Assembly combinatorics and the integer genome.
//!
//! A design is a rooted tree of identical modules. Module 0 is the root;
//! connection `k` attaches module `k + 1` to an earlier module through a
//! (parent dock, child dock, orientation) triple. The flat integer form
//! ([`GenomeSeq`]) is the lingua franca between sampling, the autoencoder,
//! and the file formats.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, ModuleGeometry};

/// Docking sites per module: 4 on the sphere, 6 per link side, 1 per link tip.
pub const DOCKS_PER_MODULE: usize = 18;
/// Discrete mating orientations (three-fold dock symmetry).
pub const ORIENTATIONS: usize = 3;
/// Side docks per module (6 per link).
pub const SIDE_DOCKS_PER_MODULE: usize = 12;
/// Largest assembly handled by the flat genome.
pub const MAX_MODULES: usize = 5;
/// Connection slots in a genome.
pub const MAX_CONNECTIONS: usize = MAX_MODULES - 1;
/// Tokens per genome: 4 per connection slot.
pub const GENOME_LEN: usize = 4 * MAX_CONNECTIONS;

/// Absent-connection sentinel for the parent-module token.
pub const NULL_PARENT: u16 = MAX_MODULES as u16;
/// Absent-connection sentinel for dock tokens.
pub const NULL_DOCK: u16 = DOCKS_PER_MODULE as u16;
/// Absent-connection sentinel for the orientation token.
pub const NULL_ORIENT: u16 = ORIENTATIONS as u16;

/// Which of a module's two links a dock sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LinkSide {
    A,
    B,
}

/// Structural class of a dock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DockKind {
    /// On the joint sphere's equator.
    Sphere { azimuth_slot: u8 },
    /// Along a link's outward face; `slot` runs 0..6 from sphere to tip.
    Side { link: LinkSide, slot: u8 },
    /// At a link's distal end.
    Tip { link: LinkSide },
}

/// Dock index on a module: 0..=3 sphere, 4..=9 link-A side, 10 link-A tip,
/// 11..=16 link-B side, 17 link-B tip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DockId(u8);

impl DockId {
    pub fn new(index: u8) -> Option<Self> {
        (usize::from(index) < DOCKS_PER_MODULE).then_some(Self(index))
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn kind(self) -> DockKind {
        match self.0 {
            0..=3 => DockKind::Sphere { azimuth_slot: self.0 },
            4..=9 => DockKind::Side { link: LinkSide::A, slot: self.0 - 4 },
            10 => DockKind::Tip { link: LinkSide::A },
            11..=16 => DockKind::Side { link: LinkSide::B, slot: self.0 - 11 },
            17 => DockKind::Tip { link: LinkSide::B },
            _ => unreachable!("DockId constructed out of range"),
        }
    }

    pub fn is_side(self) -> bool {
        matches!(self.kind(), DockKind::Side { .. })
    }

    /// Link carrying this dock; sphere docks ride with link A's body.
    pub fn body_side(self) -> LinkSide {
        match self.kind() {
            DockKind::Sphere { .. } => LinkSide::A,
            DockKind::Side { link, .. } | DockKind::Tip { link } => link,
        }
    }

    pub fn all() -> impl Iterator<Item = DockId> {
        (0..DOCKS_PER_MODULE as u8).map(DockId)
    }
}

/// One docked joint between a parent module and the module it introduces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Connection {
    /// Index of the parent module (child index is implicit: slot + 1).
    pub parent: u8,
    pub parent_dock: DockId,
    pub child_dock: DockId,
    /// Mating roll about the dock normal, in 120 degree steps: 0..=2.
    pub orientation: u8,
}

/// Rooted assembly tree. Structure is validated at construction; geometric
/// validity (interference, overlap) is a separate concern checked by
/// [`validate_tree`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfigTree {
    connections: Vec<Connection>,
}

/// Structural errors for trees and genome sequences.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MalformedError {
    #[error("token {value} at slot {slot} outside vocabulary (max {max})")]
    TokenOutOfRange { slot: usize, value: u16, max: u16 },
    #[error("connection group {group} mixes NULL and non-NULL tokens")]
    PartialNullGroup { group: usize },
    #[error("non-NULL connection group {group} follows a NULL group")]
    GapAfterNull { group: usize },
    #[error("connection {slot} names parent {parent} but only {available} modules exist yet")]
    ParentOutOfOrder { slot: usize, parent: u8, available: usize },
    #[error("too many connections: {got} exceeds {max}")]
    TooManyConnections { got: usize, max: usize },
    #[error("genome text holds {got} integers, expected {expected}")]
    WrongTokenCount { got: usize, expected: usize },
    #[error("unparsable integer in genome text: {text:?}")]
    BadInteger { text: String },
}

/// A structurally sound tree that is not a buildable machine.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InvalidDesignError {
    #[error("connection {slot}: side-to-side docking at orientation {orientation} leaves links parallel")]
    Interference { slot: usize, orientation: u8 },
    #[error("assembly overlaps itself at neutral pose")]
    SelfCollision,
}

/// Any failure turning tokens into a validated tree.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("malformed genome: {0}")]
    Malformed(#[from] MalformedError),
    #[error("invalid design: {0}")]
    InvalidDesign(#[from] InvalidDesignError),
}

/// Parameter errors for the counting closed form.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CountError {
    #[error("side docks ({side}) exceed total docks ({docks})")]
    SideExceedsDocks { docks: u64, side: u64 },
    #[error("at least one orientation required")]
    NoOrientations,
    #[error("odd numerator {numerator}: dock model inconsistent")]
    OddNumerator { numerator: i128 },
}

impl ConfigTree {
    /// Single module, no connections.
    pub fn single() -> Self {
        Self { connections: Vec::new() }
    }

    pub fn new(connections: Vec<Connection>) -> Result<Self, MalformedError> {
        if connections.len() > MAX_CONNECTIONS {
            return Err(MalformedError::TooManyConnections {
                got: connections.len(),
                max: MAX_CONNECTIONS,
            });
        }
        for (slot, c) in connections.iter().enumerate() {
            let available = slot + 1;
            if usize::from(c.parent) >= available {
                return Err(MalformedError::ParentOutOfOrder {
                    slot,
                    parent: c.parent,
                    available,
                });
            }
        }
        Ok(Self { connections })
    }

    pub fn connections(&self) -> &[Connection] {
        &self.connections
    }

    pub fn n_modules(&self) -> usize {
        self.connections.len() + 1
    }

    /// Parent module of `module`, or None for the root.
    pub fn parent_of(&self, module: usize) -> Option<usize> {
        (module > 0).then(|| usize::from(self.connections[module - 1].parent))
    }

    /// Modules with no children.
    pub fn leaves(&self) -> Vec<usize> {
        let mut has_child = vec![false; self.n_modules()];
        for c in &self.connections {
            has_child[usize::from(c.parent)] = true;
        }
        (0..self.n_modules()).filter(|&m| !has_child[m]).collect()
    }

    /// Flat token form, NULL-padded to [`GENOME_LEN`].
    pub fn to_genome(&self) -> GenomeSeq {
        let mut tokens = [0u16; GENOME_LEN];
        for slot in 0..MAX_CONNECTIONS {
            let group = &mut tokens[4 * slot..4 * slot + 4];
            match self.connections.get(slot) {
                Some(c) => {
                    group[0] = u16::from(c.parent);
                    group[1] = u16::from(c.parent_dock.index());
                    group[2] = u16::from(c.child_dock.index());
                    group[3] = u16::from(c.orientation);
                }
                None => {
                    group.copy_from_slice(&[NULL_PARENT, NULL_DOCK, NULL_DOCK, NULL_ORIENT]);
                }
            }
        }
        GenomeSeq(tokens)
    }

    /// Decodes tokens and checks the docking interference rule. Geometry
    /// overlap is a separate pass ([`validate_tree`]): a decoded tree can be
    /// structurally sound yet self-colliding.
    pub fn from_genome(seq: &GenomeSeq) -> Result<Self, DecodeError> {
        let tree = Self::from_genome_structural(seq)?;
        let geom = ModuleGeometry::<f64>::default();
        for (slot, c) in tree.connections.iter().enumerate() {
            if geometry::interference_forbidden(&geom, c.parent_dock, c.child_dock, c.orientation) {
                return Err(InvalidDesignError::Interference {
                    slot,
                    orientation: c.orientation,
                }
                .into());
            }
        }
        Ok(tree)
    }

    /// Token-level decode only: vocabulary, NULL-group shape, parent order.
    pub fn from_genome_structural(seq: &GenomeSeq) -> Result<Self, MalformedError> {
        let mut connections = Vec::new();
        let mut null_seen = false;
        for group in 0..MAX_CONNECTIONS {
            let g = &seq.0[4 * group..4 * group + 4];
            let max = [NULL_PARENT, NULL_DOCK, NULL_DOCK, NULL_ORIENT];
            for (offset, (&value, &m)) in g.iter().zip(&max).enumerate() {
                if value > m {
                    return Err(MalformedError::TokenOutOfRange {
                        slot: 4 * group + offset,
                        value,
                        max: m,
                    });
                }
            }
            let nulls = [g[0] == NULL_PARENT, g[1] == NULL_DOCK, g[2] == NULL_DOCK, g[3] == NULL_ORIENT];
            if nulls.iter().any(|&n| n) {
                if !nulls.iter().all(|&n| n) {
                    return Err(MalformedError::PartialNullGroup { group });
                }
                null_seen = true;
                continue;
            }
            if null_seen {
                return Err(MalformedError::GapAfterNull { group });
            }
            let available = group + 1;
            if usize::from(g[0]) >= available {
                return Err(MalformedError::ParentOutOfOrder {
                    slot: group,
                    parent: g[0] as u8,
                    available,
                });
            }
            connections.push(Connection {
                parent: g[0] as u8,
                parent_dock: DockId::new(g[1] as u8).expect("checked above"),
                child_dock: DockId::new(g[2] as u8).expect("checked above"),
                orientation: g[3] as u8,
            });
        }
        Self::new(connections)
    }

    /// Lexicographically smallest genome over every relabeling of this tree:
    /// every choice of root and every parent-before-child numbering. Two
    /// trees describe the same physical assembly iff these are equal.
    ///
    /// Reversing a connection's direction swaps its dock roles and keeps the
    /// orientation index: the mating transform satisfies
    /// `mate(a, b, o)^-1 = mate(b, a, o)` (checked in geometry tests).
    pub fn canonical_genome(&self) -> GenomeSeq {
        let n = self.n_modules();
        if n == 1 {
            return self.to_genome();
        }
        // Undirected adjacency: (neighbor, dock here, dock there, orientation).
        let mut adj: Vec<Vec<(usize, DockId, DockId, u8)>> = vec![Vec::new(); n];
        for (slot, c) in self.connections.iter().enumerate() {
            let child = slot + 1;
            let parent = usize::from(c.parent);
            adj[parent].push((child, c.parent_dock, c.child_dock, c.orientation));
            adj[child].push((parent, c.child_dock, c.parent_dock, c.orientation));
        }

        let mut best: Option<GenomeSeq> = None;
        for root in 0..n {
            // Rooted parent/edge tables via DFS from `root`.
            let mut parent_edge: Vec<Option<(usize, DockId, DockId, u8)>> = vec![None; n];
            let mut order_stack = vec![root];
            let mut seen = vec![false; n];
            seen[root] = true;
            while let Some(u) = order_stack.pop() {
                for &(v, du, dv, o) in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        // For child v: parent u, parent-side dock du, child-side dock dv.
                        parent_edge[v] = Some((u, du, dv, o));
                        order_stack.push(v);
                    }
                }
            }
            let children: Vec<Vec<usize>> = {
                let mut ch = vec![Vec::new(); n];
                for v in 0..n {
                    if let Some((u, ..)) = parent_edge[v] {
                        ch[u].push(v);
                    }
                }
                ch
            };
            // Enumerate parent-before-child numberings.
            let mut placed = vec![root];
            let mut frontier: Vec<usize> = children[root].clone();
            enumerate_orders(&children, &mut placed, &mut frontier, &mut |order| {
                let mut new_index = vec![0usize; n];
                for (idx, &old) in order.iter().enumerate() {
                    new_index[old] = idx;
                }
                let mut connections = Vec::with_capacity(n - 1);
                for &old in order.iter().skip(1) {
                    let (u, du, dv, o) = parent_edge[old].expect("non-root has a parent edge");
                    connections.push(Connection {
                        parent: new_index[u] as u8,
                        parent_dock: du,
                        child_dock: dv,
                        orientation: o,
                    });
                }
                let genome = ConfigTree { connections }.to_genome();
                if best.as_ref().is_none_or(|b| genome.0 < b.0) {
                    best = Some(genome);
                }
            });
        }
        best.expect("at least one labeling exists")
    }
}

/// Recursively visits every ordering of the rooted tree in which each node
/// appears after its parent.
fn enumerate_orders(
    children: &[Vec<usize>],
    placed: &mut Vec<usize>,
    frontier: &mut Vec<usize>,
    visit: &mut impl FnMut(&[usize]),
) {
    if frontier.is_empty() {
        visit(placed);
        return;
    }
    for i in 0..frontier.len() {
        let node = frontier.swap_remove(i);
        placed.push(node);
        let added = children[node].len();
        frontier.extend_from_slice(&children[node]);
        enumerate_orders(children, placed, frontier, visit);
        frontier.truncate(frontier.len() - added);
        placed.pop();
        frontier.push(node);
        let last = frontier.len() - 1;
        frontier.swap(i, last);
    }
}

/// Flat integer genome: 4 tokens per connection slot, NULL-padded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GenomeSeq(pub [u16; GENOME_LEN]);

impl GenomeSeq {
    pub fn tokens(&self) -> &[u16; GENOME_LEN] {
        &self.0
    }
}

impl fmt::Display for GenomeSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

impl FromStr for GenomeSeq {
    type Err = MalformedError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut tokens = [0u16; GENOME_LEN];
        let mut count = 0;
        for word in s.split_whitespace() {
            if count == GENOME_LEN {
                count += 1;
                break;
            }
            tokens[count] = word
                .parse::<u16>()
                .map_err(|_| MalformedError::BadInteger { text: word.to_string() })?;
            count += 1;
        }
        if count != GENOME_LEN {
            return Err(MalformedError::WrongTokenCount { got: count, expected: GENOME_LEN });
        }
        Ok(Self(tokens))
    }
}

/// Distinct two-module assemblies for a module with `docks` docks, `orientations`
/// mating orientations, and `side_docks` side docks, counting unordered module
/// pairs and dropping the one parallel side-to-side orientation per dock pair.
pub fn count_two_module(docks: u64, orientations: u64, side_docks: u64) -> Result<u64, CountError> {
    if side_docks > docks {
        return Err(CountError::SideExceedsDocks { docks, side: side_docks });
    }
    if orientations == 0 {
        return Err(CountError::NoOrientations);
    }
    let d = docks as i128;
    let o = orientations as i128;
    let s = side_docks as i128;
    // Ordered labeled pairs minus interference, plus swap-fixed configurations,
    // halved: orbit count under the module-swap involution.
    let numerator = d * d * o - s * s + d * o - s;
    if numerator % 2 != 0 {
        return Err(CountError::OddNumerator { numerator });
    }
    Ok((numerator / 2) as u64)
}

/// Estimated distinct assemblies with `n` modules: each added module brings
/// 864 attachment choices before symmetry, divided by the label symmetry `n`.
pub fn estimate_unique(n: u32) -> f64 {
    assert!(n >= 1, "need at least one module");
    864f64.powi(n as i32 - 1) / f64::from(n)
}

/// Same estimate built from the growth recurrence
/// `m(n+1) = 864 n m(n) / (n+1)`, for cross-checking the closed form.
pub fn estimate_unique_recurrence(n: u32) -> f64 {
    assert!(n >= 1, "need at least one module");
    let mut m = 1.0f64;
    for k in 1..n {
        m = 864.0 * f64::from(k) * m / f64::from(k + 1);
    }
    m
}

/// Geometric validation of a structurally sound tree: neutral-pose overlap.
pub fn validate_tree(tree: &ConfigTree, geom: &ModuleGeometry<f64>) -> Result<(), InvalidDesignError> {
    if geometry::self_collides(tree, geom) {
        return Err(InvalidDesignError::SelfCollision);
    }
    Ok(())
}

/// Sampling failure: the rejection budget ran out before a buildable tree.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("no valid connection for module {module} within {budget} draws")]
pub struct SampleBudgetError {
    pub module: usize,
    pub budget: usize,
}

/// Draws a random tree with `n_modules` modules, rejecting connections that
/// hit the interference rule or overlap the assembly at neutral pose.
pub fn sample_tree<R: Rng>(
    rng: &mut R,
    n_modules: usize,
    geom: &ModuleGeometry<f64>,
    budget: usize,
) -> Result<ConfigTree, SampleBudgetError> {
    assert!(
        (1..=MAX_MODULES).contains(&n_modules),
        "module count {n_modules} outside 1..={MAX_MODULES}"
    );
    let mut tree = ConfigTree::single();
    for module in 1..n_modules {
        let mut accepted = false;
        for _ in 0..budget {
            let candidate = Connection {
                parent: rng.gen_range(0..module) as u8,
                parent_dock: DockId::new(rng.gen_range(0..DOCKS_PER_MODULE as u8)).expect("in range"),
                child_dock: DockId::new(rng.gen_range(0..DOCKS_PER_MODULE as u8)).expect("in range"),
                orientation: rng.gen_range(0..ORIENTATIONS as u8),
            };
            if geometry::interference_forbidden(geom, candidate.parent_dock, candidate.child_dock, candidate.orientation)
            {
                continue;
            }
            let mut grown = tree.connections.clone();
            grown.push(candidate);
            let grown = ConfigTree::new(grown).expect("structurally valid by construction");
            if geometry::self_collides(&grown, geom) {
                // The coarse rule and the overlap check can disagree near
                // grazing contact; surface it for diagnosis instead of hiding it.
                log::debug!(
                    "connection passed interference rule but overlaps: {candidate:?}"
                );
                continue;
            }
            tree = grown;
            accepted = true;
            break;
        }
        if !accepted {
            return Err(SampleBudgetError { module, budget });
        }
    }
    Ok(tree)
}

/// On-disk design document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignFile {
    pub n_modules: usize,
    pub connections: Vec<Connection>,
    /// Tool version and generation parameters; no wall-clock content, so
    /// identical runs serialize identically.
    pub provenance: String,
    pub seed: Option<u64>,
}

impl DesignFile {
    pub fn new(tree: &ConfigTree, provenance: impl Into<String>, seed: Option<u64>) -> Self {
        Self {
            n_modules: tree.n_modules(),
            connections: tree.connections().to_vec(),
            provenance: provenance.into(),
            seed,
        }
    }

    pub fn tree(&self) -> Result<ConfigTree, MalformedError> {
        let tree = ConfigTree::new(self.connections.clone())?;
        if tree.n_modules() != self.n_modules {
            return Err(MalformedError::WrongTokenCount {
                got: tree.n_modules(),
                expected: self.n_modules,
            });
        }
        Ok(tree)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::{prop_assert_eq, proptest};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    /// Brute-force oracle for the two-module count: enumerate every labeled
    /// (dock, dock, orientation) triple, drop interfering ones, and count
    /// orbits under swapping the two modules. Toy semantics: the first `s`
    /// docks are side docks and exactly one orientation per side-side pair
    /// interferes, mirroring the geometric rule.
    fn brute_force_two_module(d: u64, o: u64, s: u64) -> u64 {
        let mut orbits = HashSet::new();
        for d1 in 0..d {
            for d2 in 0..d {
                for ori in 0..o {
                    let interferes = d1 < s && d2 < s && ori == 0;
                    if interferes {
                        continue;
                    }
                    let key = if d1 <= d2 { (d1, d2, ori) } else { (d2, d1, ori) };
                    orbits.insert(key);
                }
            }
        }
        orbits.len() as u64
    }

    #[test]
    fn closed_form_matches_brute_force_enumeration() {
        for d in 1..=6 {
            for o in 1..=4 {
                for s in 0..=d {
                    assert_eq!(
                        count_two_module(d, o, s).unwrap(),
                        brute_force_two_module(d, o, s),
                        "mismatch at d={d} o={o} s={s}"
                    );
                }
            }
        }
    }

    #[test]
    fn production_parameters_count() {
        assert_eq!(count_two_module(18, 3, 12).unwrap(), 435);
        assert_eq!(count_two_module(18, 3, 0).unwrap(), 513);
        assert_eq!(count_two_module(2, 1, 0).unwrap(), 3);
    }

    #[test]
    fn count_rejects_bad_parameters() {
        assert!(matches!(
            count_two_module(4, 3, 5),
            Err(CountError::SideExceedsDocks { .. })
        ));
        assert!(matches!(count_two_module(4, 0, 2), Err(CountError::NoOrientations)));
    }

    #[test]
    fn estimate_matches_recurrence_and_reference_point() {
        for n in 1..=10 {
            let direct = estimate_unique(n);
            let rec = estimate_unique_recurrence(n);
            let rel = ((direct - rec) / direct).abs();
            assert!(rel < 1e-12, "n={n}: direct={direct} recurrence={rec}");
        }
        let five = estimate_unique(5);
        assert!((five - 864f64.powi(4) / 5.0).abs() / five < 1e-15);
        assert!((five / 1.114512e11 - 1.0).abs() < 1e-4);
    }

    fn arbitrary_tree(seed: u64, n_modules: usize) -> ConfigTree {
        let geom = ModuleGeometry::<f64>::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_tree(&mut rng, n_modules, &geom, 10_000).expect("sampling within budget")
    }

    proptest! {
        #[test]
        fn genome_roundtrip(seed in 0u64..1000, n in 1usize..=5) {
            let tree = arbitrary_tree(seed, n);
            let genome = tree.to_genome();
            let back = ConfigTree::from_genome(&genome).expect("own encoding decodes");
            prop_assert_eq!(back, tree);
        }

        #[test]
        fn genome_text_roundtrip(seed in 0u64..500, n in 1usize..=5) {
            let tree = arbitrary_tree(seed, n);
            let genome = tree.to_genome();
            let text = genome.to_string();
            let parsed: GenomeSeq = text.parse().expect("own text parses");
            prop_assert_eq!(parsed, genome);
        }

        #[test]
        fn canonical_form_invariant_under_relabeling(seed in 0u64..300, n in 2usize..=5) {
            let tree = arbitrary_tree(seed, n);
            let canon = tree.canonical_genome();
            // Relabel: rebuild from an arbitrary root with an arbitrary
            // parent-before-child order, then canonicalize again.
            let relabeled = relabel(&tree, seed);
            prop_assert_eq!(relabeled.canonical_genome(), canon);
            // Idempotence: canonicalizing the canonical decode changes nothing.
            let canon_tree = ConfigTree::from_genome(&canon).expect("canonical decodes");
            prop_assert_eq!(canon_tree.canonical_genome(), canon);
        }
    }

    /// Rebuilds `tree` rooted at a seed-chosen module with a seed-chosen
    /// valid numbering.
    fn relabel(tree: &ConfigTree, seed: u64) -> ConfigTree {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
        let n = tree.n_modules();
        let mut adj: Vec<Vec<(usize, DockId, DockId, u8)>> = vec![Vec::new(); n];
        for (slot, c) in tree.connections().iter().enumerate() {
            let child = slot + 1;
            let parent = usize::from(c.parent);
            adj[parent].push((child, c.parent_dock, c.child_dock, c.orientation));
            adj[child].push((parent, c.child_dock, c.parent_dock, c.orientation));
        }
        let root = rng.gen_range(0..n);
        let mut new_index = vec![usize::MAX; n];
        new_index[root] = 0;
        let mut connections = Vec::new();
        let mut frontier = vec![root];
        let mut placed = 1;
        while placed < n {
            let pick = rng.gen_range(0..frontier.len());
            let u = frontier[pick];
            let unvisited: Vec<_> = adj[u]
                .iter()
                .filter(|&&(v, ..)| new_index[v] == usize::MAX)
                .copied()
                .collect();
            if unvisited.is_empty() {
                frontier.swap_remove(pick);
                continue;
            }
            let (v, du, dv, o) = unvisited[rng.gen_range(0..unvisited.len())];
            new_index[v] = placed;
            connections.push(Connection {
                parent: new_index[u] as u8,
                parent_dock: du,
                child_dock: dv,
                orientation: o,
            });
            frontier.push(v);
            placed += 1;
        }
        ConfigTree::new(connections).expect("relabeled tree is well formed")
    }

    #[test]
    fn two_module_swap_symmetry() {
        let a = ConfigTree::new(vec![Connection {
            parent: 0,
            parent_dock: DockId::new(2).unwrap(),
            child_dock: DockId::new(10).unwrap(),
            orientation: 1,
        }])
        .unwrap();
        let b = ConfigTree::new(vec![Connection {
            parent: 0,
            parent_dock: DockId::new(10).unwrap(),
            child_dock: DockId::new(2).unwrap(),
            orientation: 1,
        }])
        .unwrap();
        assert_eq!(a.canonical_genome(), b.canonical_genome());
    }

    #[test]
    fn decode_rejects_malformed_token_patterns() {
        let mut null = ConfigTree::single().to_genome();
        // Token out of vocabulary.
        let mut bad = null;
        bad.0[1] = 19;
        bad.0[0] = 0;
        assert!(matches!(
            ConfigTree::from_genome(&bad),
            Err(DecodeError::Malformed(MalformedError::TokenOutOfRange { .. }))
        ));
        // Partial NULL group.
        let mut partial = null;
        partial.0[0] = 0;
        assert!(matches!(
            ConfigTree::from_genome(&partial),
            Err(DecodeError::Malformed(MalformedError::PartialNullGroup { .. }))
        ));
        // Non-NULL group after a NULL group.
        let valid = arbitrary_tree(7, 2).to_genome();
        let mut gapped = null;
        gapped.0[8..12].copy_from_slice(&valid.0[0..4]);
        assert!(matches!(
            ConfigTree::from_genome(&gapped),
            Err(DecodeError::Malformed(MalformedError::GapAfterNull { .. }))
        ));
        // Parent not yet introduced.
        let mut disordered = null;
        disordered.0[0..4].copy_from_slice(&valid.0[0..4]);
        disordered.0[0] = 1;
        assert!(matches!(
            ConfigTree::from_genome(&disordered),
            Err(DecodeError::Malformed(MalformedError::ParentOutOfOrder { .. }))
        ));
        // All-NULL genome is the single module.
        null.0.copy_from_slice(ConfigTree::single().to_genome().tokens());
        assert_eq!(ConfigTree::from_genome(&null).unwrap().n_modules(), 1);
    }

    #[test]
    fn decode_flags_interference_as_invalid_design() {
        // Side dock to side dock at the parallel orientation.
        let seq = ConfigTree::new(vec![Connection {
            parent: 0,
            parent_dock: DockId::new(4).unwrap(),
            child_dock: DockId::new(12).unwrap(),
            orientation: 0,
        }])
        .unwrap()
        .to_genome();
        assert!(matches!(
            ConfigTree::from_genome(&seq),
            Err(DecodeError::InvalidDesign(InvalidDesignError::Interference { .. }))
        ));
    }

    #[test]
    fn sampler_respects_module_count_and_determinism() {
        let geom = ModuleGeometry::<f64>::default();
        for n in 1..=5 {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let tree = sample_tree(&mut rng, n, &geom, 10_000).unwrap();
            assert_eq!(tree.n_modules(), n);
            let mut rng2 = ChaCha8Rng::seed_from_u64(42);
            let tree2 = sample_tree(&mut rng2, n, &geom, 10_000).unwrap();
            assert_eq!(tree, tree2);
        }
    }

    #[test]
    fn genome_text_rejects_wrong_counts_and_garbage() {
        assert!(matches!(
            "1 2 3".parse::<GenomeSeq>(),
            Err(MalformedError::WrongTokenCount { .. })
        ));
        let long = (0..17).map(|i| i.to_string()).collect::<Vec<_>>().join(" ");
        assert!(matches!(
            long.parse::<GenomeSeq>(),
            Err(MalformedError::WrongTokenCount { .. })
        ));
        assert!(matches!(
            "a b c d e f g h i j k l m n o p".parse::<GenomeSeq>(),
            Err(MalformedError::BadInteger { .. })
        ));
    }

    #[test]
    fn leaves_and_parents() {
        let tree = arbitrary_tree(3, 4);
        assert_eq!(tree.parent_of(0), None);
        for m in 1..tree.n_modules() {
            assert!(tree.parent_of(m).unwrap() < m);
        }
        let leaves = tree.leaves();
        assert!(!leaves.is_empty());
        for leaf in leaves {
            assert!(tree.connections().iter().all(|c| usize::from(c.parent) != leaf));
        }
    }
}
