// SPDX-License-Identifier: Apache-2.0

//! Label hierarchy, ancestor closure, domain selection and expert slicing.
//!
//! The hierarchy is a DAG of "is-a" edges (`child -> parent`). An example's
//! closed label set is its own labels plus every ancestor, so an image of a
//! lion also counts as felidae, carnivore, animal and organism. Expert
//! domains are labels picked by image count; the slice of an expert is every
//! example whose closed label set contains the domain label. Slices overlap
//! whenever one domain is an ancestor of another.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::{Error, ExampleId, ExpertId, LabelId, Result};

/// Domain threshold used for the JFT experts (240 domains there).
pub const JFT_MIN_IMAGES: u64 = 850_000;
/// Number of domains used for the ImageNet21k experts.
pub const IMAGENET21K_TOP_N: usize = 50;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelHierarchy {
    names: BTreeMap<LabelId, String>,
    edges: Vec<(LabelId, LabelId)>,
    parents: BTreeMap<LabelId, Vec<LabelId>>,
    counts: BTreeMap<LabelId, u64>,
}

impl LabelHierarchy {
    /// Builds and validates a hierarchy. Duplicate edges are collapsed.
    pub fn new(
        labels: impl IntoIterator<Item = (LabelId, String)>,
        edges: impl IntoIterator<Item = (LabelId, LabelId)>,
        counts: BTreeMap<LabelId, u64>,
    ) -> Result<Self> {
        let mut names = BTreeMap::new();
        for (id, name) in labels {
            if names.insert(id, name).is_some() {
                return Err(Error::Validation(format!("label {id} declared twice")));
            }
        }
        let mut edge_set = BTreeSet::new();
        for (child, parent) in edges {
            for label in [child, parent] {
                if !names.contains_key(&label) {
                    return Err(Error::DanglingEdge { line: 0, label });
                }
            }
            edge_set.insert((child, parent));
        }
        for label in counts.keys() {
            if !names.contains_key(label) {
                return Err(Error::UnknownLabel(*label));
            }
        }
        let edges: Vec<_> = edge_set.into_iter().collect();
        let mut parents: BTreeMap<LabelId, Vec<LabelId>> = BTreeMap::new();
        for &(child, parent) in &edges {
            parents.entry(child).or_default().push(parent);
        }
        let h = LabelHierarchy {
            names,
            edges,
            parents,
            counts,
        };
        h.check_acyclic()?;
        Ok(h)
    }

    /// Parses the line-oriented hierarchy format (`L`, `E` and `C` records).
    /// Blank lines and lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut labels = Vec::new();
        let mut declared = BTreeSet::new();
        let mut edges = Vec::new();
        let mut counts = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let record = raw.trim();
            if record.is_empty() || record.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = record.split_whitespace().collect();
            let bad = |msg: &str| Error::Parse {
                line,
                msg: format!("{msg}: `{record}`"),
            };
            match fields.as_slice() {
                ["L", id, name] => {
                    let id = parse_int::<LabelId>(id, line)?;
                    if !declared.insert(id) {
                        return Err(bad("duplicate label declaration"));
                    }
                    labels.push((id, (*name).to_owned()));
                }
                ["E", child, parent] => {
                    edges.push((
                        parse_int::<LabelId>(child, line)?,
                        parse_int::<LabelId>(parent, line)?,
                        line,
                    ));
                }
                ["C", id, count] => {
                    let id = parse_int::<LabelId>(id, line)?;
                    let count = parse_int::<u64>(count, line)?;
                    if counts.insert(id, (count, line)).is_some() {
                        return Err(bad("duplicate count record"));
                    }
                }
                _ => return Err(bad("expected `L <id> <name>`, `E <child> <parent>` or `C <id> <count>`")),
            }
        }
        // Endpoint checks need every declaration, which may come after the edge.
        for &(child, parent, line) in &edges {
            for label in [child, parent] {
                if !declared.contains(&label) {
                    return Err(Error::DanglingEdge { line, label });
                }
            }
        }
        for (&label, &(_, line)) in &counts {
            if !declared.contains(&label) {
                return Err(Error::Parse {
                    line,
                    msg: format!("count for undeclared label {label}"),
                });
            }
        }
        LabelHierarchy::new(
            labels,
            edges.into_iter().map(|(c, p, _)| (c, p)),
            counts.into_iter().map(|(k, (v, _))| (k, v)).collect(),
        )
    }

    fn check_acyclic(&self) -> Result<()> {
        // Kahn's algorithm on child -> parent edges.
        let mut indegree: BTreeMap<LabelId, usize> = self.names.keys().map(|&k| (k, 0)).collect();
        for &(_, parent) in &self.edges {
            *indegree.get_mut(&parent).expect("validated endpoint") += 1;
        }
        let mut ready: VecDeque<LabelId> = indegree
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&k, _)| k)
            .collect();
        let mut seen = 0usize;
        while let Some(label) = ready.pop_front() {
            seen += 1;
            for &parent in self.parents_of(label) {
                let d = indegree.get_mut(&parent).expect("validated endpoint");
                *d -= 1;
                if *d == 0 {
                    ready.push_back(parent);
                }
            }
        }
        if seen == self.names.len() {
            return Ok(());
        }
        let stuck = indegree
            .into_iter()
            .find(|&(_, d)| d > 0)
            .map(|(k, _)| k)
            .expect("some label keeps a positive indegree");
        Err(Error::Cycle(stuck))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn contains(&self, label: LabelId) -> bool {
        self.names.contains_key(&label)
    }

    pub fn name(&self, label: LabelId) -> Option<&str> {
        self.names.get(&label).map(String::as_str)
    }

    pub fn labels(&self) -> impl Iterator<Item = (LabelId, &str)> {
        self.names.iter().map(|(&k, v)| (k, v.as_str()))
    }

    /// `(child, parent)` pairs, sorted and deduplicated.
    pub fn edges(&self) -> &[(LabelId, LabelId)] {
        &self.edges
    }

    pub fn parents_of(&self, label: LabelId) -> &[LabelId] {
        self.parents.get(&label).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Image count of a label; labels without a count record have 0.
    pub fn count(&self, label: LabelId) -> u64 {
        self.counts.get(&label).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &BTreeMap<LabelId, u64> {
        &self.counts
    }

    /// Replaces the counts table. Every key must be a declared label.
    pub fn set_counts(&mut self, counts: BTreeMap<LabelId, u64>) -> Result<()> {
        if let Some(&bad) = counts.keys().find(|k| !self.names.contains_key(k)) {
            return Err(Error::UnknownLabel(bad));
        }
        self.counts = counts;
        Ok(())
    }

    /// A label together with all of its ancestors.
    pub fn ancestors(&self, label: LabelId) -> Result<BTreeSet<LabelId>> {
        self.close_labels(std::iter::once(label))
    }

    /// Union of the given labels and all their ancestors under "is-a".
    pub fn close_labels(&self, labels: impl IntoIterator<Item = LabelId>) -> Result<BTreeSet<LabelId>> {
        let mut closed = BTreeSet::new();
        let mut stack = Vec::new();
        for label in labels {
            if !self.contains(label) {
                return Err(Error::UnknownLabel(label));
            }
            if closed.insert(label) {
                stack.push(label);
            }
        }
        while let Some(label) = stack.pop() {
            for &parent in self.parents_of(label) {
                if closed.insert(parent) {
                    stack.push(parent);
                }
            }
        }
        Ok(closed)
    }

    /// Per-label image counts derived from an example corpus.
    pub fn counts_from_examples(
        &self,
        examples: &[MultiLabelExample],
        basis: CountBasis,
    ) -> Result<BTreeMap<LabelId, u64>> {
        let mut counts: BTreeMap<LabelId, u64> = BTreeMap::new();
        for ex in examples {
            ex.validate(self)?;
            let labels = match basis {
                CountBasis::Closed => self.close_labels(ex.labels.iter().copied())?,
                CountBasis::Raw => ex.labels.clone(),
            };
            for label in labels {
                *counts.entry(label).or_default() += 1;
            }
        }
        Ok(counts)
    }
}

impl fmt::Display for LabelHierarchy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (id, name) in &self.names {
            writeln!(f, "L {id} {name}")?;
        }
        for (child, parent) in &self.edges {
            writeln!(f, "E {child} {parent}")?;
        }
        for (id, count) in &self.counts {
            writeln!(f, "C {id} {count}")?;
        }
        Ok(())
    }
}

fn parse_int<T: FromStr>(field: &str, line: usize) -> Result<T> {
    field.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("invalid integer `{field}`"),
    })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_hierarchy(path: impl AsRef<Path>) -> Result<LabelHierarchy> {
    LabelHierarchy::parse(&read_text(path.as_ref())?)
}

/// Whether label counts include ancestors of the labels an example carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CountBasis {
    /// Count an example under every label of its closed label set.
    #[default]
    Closed,
    /// Count an example only under the labels it was annotated with.
    Raw,
}

impl FromStr for CountBasis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "closed" => Ok(CountBasis::Closed),
            "raw" => Ok(CountBasis::Raw),
            other => Err(Error::InvalidArgument(format!(
                "count basis must be `closed` or `raw`, got `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiLabelExample {
    pub example_id: ExampleId,
    pub labels: BTreeSet<LabelId>,
}

impl MultiLabelExample {
    pub fn new(example_id: ExampleId, labels: impl IntoIterator<Item = LabelId>) -> Self {
        MultiLabelExample {
            example_id,
            labels: labels.into_iter().collect(),
        }
    }

    pub fn validate(&self, h: &LabelHierarchy) -> Result<()> {
        if self.labels.is_empty() {
            return Err(Error::Validation(format!(
                "example {} has no labels",
                self.example_id
            )));
        }
        match self.labels.iter().find(|&&l| !h.contains(l)) {
            Some(&l) => Err(Error::Validation(format!(
                "example {} carries unknown label {l}",
                self.example_id
            ))),
            None => Ok(()),
        }
    }
}

/// Parses `X <example_id> <label>[,<label>...]` records.
pub fn parse_examples(text: &str) -> Result<Vec<MultiLabelExample>> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let record = raw.trim();
        if record.is_empty() || record.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = record.split_whitespace().collect();
        let ["X", id, labels] = fields.as_slice() else {
            return Err(Error::Parse {
                line,
                msg: format!("expected `X <example_id> <label>[,<label>...]`: `{record}`"),
            });
        };
        let id = parse_int::<ExampleId>(id, line)?;
        if !seen.insert(id) {
            return Err(Error::Parse {
                line,
                msg: format!("duplicate example id {id}"),
            });
        }
        let labels = labels
            .split(',')
            .map(|l| parse_int::<LabelId>(l, line))
            .collect::<Result<BTreeSet<_>>>()?;
        out.push(MultiLabelExample { example_id: id, labels });
    }
    Ok(out)
}

pub fn load_examples(path: impl AsRef<Path>) -> Result<Vec<MultiLabelExample>> {
    parse_examples(&read_text(path.as_ref())?)
}

/// Loads a hierarchy and optionally an example corpus. When examples are
/// given, counts are recomputed from them so that every parent counts at
/// least as many images as each of its children.
pub fn load_corpus(
    hierarchy: impl AsRef<Path>,
    examples: Option<&Path>,
    basis: CountBasis,
) -> Result<(LabelHierarchy, Vec<MultiLabelExample>)> {
    let mut h = load_hierarchy(hierarchy)?;
    let Some(path) = examples else {
        return Ok((h, Vec::new()));
    };
    let examples = load_examples(path)?;
    let counts = h.counts_from_examples(&examples, basis)?;
    h.set_counts(counts)?;
    Ok((h, examples))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainMode {
    /// Every label with strictly more than this many images.
    Threshold(u64),
    /// The `n` labels with the most images.
    TopN(usize),
}

impl DomainMode {
    pub const JFT: DomainMode = DomainMode::Threshold(JFT_MIN_IMAGES);
    pub const IMAGENET21K: DomainMode = DomainMode::TopN(IMAGENET21K_TOP_N);
}

impl FromStr for DomainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("domain mode must be `threshold:<n>` or `topn:<n>`, got `{s}`"));
        let (kind, value) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "threshold" => value.parse().map(DomainMode::Threshold).map_err(|_| bad()),
            "topn" => value.parse().map(DomainMode::TopN).map_err(|_| bad()),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for DomainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DomainMode::Threshold(n) => write!(f, "threshold:{n}"),
            DomainMode::TopN(n) => write!(f, "topn:{n}"),
        }
    }
}

/// Picks expert domains by image count. The result is sorted by descending
/// count; equal counts are ordered by lower label id.
pub fn select_domains(h: &LabelHierarchy, mode: DomainMode) -> Vec<LabelId> {
    let mut ranked: Vec<(LabelId, u64)> = h.names.keys().map(|&l| (l, h.count(l))).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let picked: Vec<LabelId> = match mode {
        DomainMode::Threshold(min) => ranked
            .into_iter()
            .take_while(|&(_, c)| c > min)
            .map(|(l, _)| l)
            .collect(),
        DomainMode::TopN(n) => ranked.into_iter().take(n).map(|(l, _)| l).collect(),
    };
    if picked.is_empty() {
        log::warn!("domain selection `{mode}` produced no domains");
    }
    picked
}

/// The upstream examples one expert is trained on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpertSlice {
    pub expert_id: ExpertId,
    pub root_label: LabelId,
    pub member_ids: BTreeSet<ExampleId>,
}

/// Hard-coded upstream routing: which experts see each example.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RoutingTable {
    routes: BTreeMap<ExampleId, Vec<ExpertId>>,
}

impl RoutingTable {
    pub fn from_slices(slices: &[ExpertSlice]) -> Self {
        let mut routes: BTreeMap<ExampleId, Vec<ExpertId>> = BTreeMap::new();
        for slice in slices {
            for &id in &slice.member_ids {
                routes.entry(id).or_default().push(slice.expert_id);
            }
        }
        for experts in routes.values_mut() {
            experts.sort_unstable();
        }
        RoutingTable { routes }
    }

    pub fn experts_for(&self, example: ExampleId) -> &[ExpertId] {
        self.routes.get(&example).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn iter(&self) -> impl Iterator<Item = (ExampleId, &[ExpertId])> {
        self.routes.iter().map(|(&k, v)| (k, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.routes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.routes.is_empty()
    }
}

/// Builds one slice per domain; expert `i` is rooted at `domains[i]`.
///
/// A slice holds every example whose closed label set contains its root.
/// Domains that match no example are dropped with a warning, so expert ids
/// in the result may have gaps. Slices are ordered by expert id.
pub fn build_slices(
    examples: &[MultiLabelExample],
    domains: &[LabelId],
    h: &LabelHierarchy,
) -> Result<(Vec<ExpertSlice>, RoutingTable)> {
    if domains.is_empty() {
        return Err(Error::Empty("domain list"));
    }
    if let Some(&bad) = domains.iter().find(|&&d| !h.contains(d)) {
        return Err(Error::UnknownLabel(bad));
    }
    let closed: Vec<(ExampleId, BTreeSet<LabelId>)> = examples
        .par_iter()
        .map(|ex| {
            ex.validate(h)?;
            Ok((ex.example_id, h.close_labels(ex.labels.iter().copied())?))
        })
        .collect::<Result<_>>()?;

    let mut slices = Vec::with_capacity(domains.len());
    for (idx, &root) in domains.iter().enumerate() {
        let member_ids: BTreeSet<ExampleId> = closed
            .iter()
            .filter(|(_, labels)| labels.contains(&root))
            .map(|&(id, _)| id)
            .collect();
        if member_ids.is_empty() {
            log::warn!("domain {root} matches no examples; its slice is dropped");
            continue;
        }
        slices.push(ExpertSlice {
            expert_id: idx as ExpertId,
            root_label: root,
            member_ids,
        });
    }
    let routing = RoutingTable::from_slices(&slices);
    Ok((slices, routing))
}

/// Draws `total` (example, expert) training pairs so that every expert is
/// seen equally often: per-expert counts differ by at most one and the
/// experts receiving the remainder are chosen at random. Within a slice,
/// examples are drawn uniformly with replacement. Output is grouped by
/// slice in input order.
pub fn balanced_resample(slices: &[ExpertSlice], total: usize, seed: u64) -> Result<Vec<(ExampleId, ExpertId)>> {
    if slices.is_empty() {
        return Err(Error::Empty("slice list"));
    }
    if total < slices.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot spread {total} samples over {} experts",
            slices.len()
        )));
    }
    if let Some(s) = slices.iter().find(|s| s.member_ids.is_empty()) {
        return Err(Error::Validation(format!("slice of expert {} is empty", s.expert_id)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = total / slices.len();
    let mut order: Vec<usize> = (0..slices.len()).collect();
    order.shuffle(&mut rng);
    let mut quota = vec![base; slices.len()];
    for &i in &order[..total % slices.len()] {
        quota[i] += 1;
    }

    let mut pairs = Vec::with_capacity(total);
    for (slice, &n) in slices.iter().zip(&quota) {
        let members: Vec<ExampleId> = slice.member_ids.iter().copied().collect();
        pairs.extend((0..n).map(|_| (members[rng.random_range(0..members.len())], slice.expert_id)));
    }
    Ok(pairs)
}

/// Text form of slices and routing: `S <expert> <root> <id>,<id>,...` per
/// slice, then `R <example> <expert>,<expert>,...` per routed example.
pub fn format_slices(slices: &[ExpertSlice], routing: &RoutingTable) -> String {
    let mut out = String::new();
    for s in slices {
        let members = join(s.member_ids.iter());
        let _ = writeln!(out, "S {} {} {}", s.expert_id, s.root_label, members);
    }
    for (example, experts) in routing.iter() {
        let _ = writeln!(out, "R {} {}", example, join(experts.iter()));
    }
    out
}

/// Inverse of [`format_slices`].
pub fn parse_slices(text: &str) -> Result<(Vec<ExpertSlice>, RoutingTable)> {
    let mut slices = Vec::new();
    let mut routes = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        match fields.as_slice() {
            [] => {}
            ["S", expert, root, members] => slices.push(ExpertSlice {
                expert_id: parse_int(expert, line)?,
                root_label: parse_int(root, line)?,
                member_ids: members
                    .split(',')
                    .map(|m| parse_int(m, line))
                    .collect::<Result<_>>()?,
            }),
            ["R", example, experts] => {
                let experts = experts
                    .split(',')
                    .map(|e| parse_int(e, line))
                    .collect::<Result<Vec<ExpertId>>>()?;
                routes.insert(parse_int::<ExampleId>(example, line)?, experts);
            }
            _ => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unrecognized slice record `{}`", raw.trim()),
                })
            }
        }
    }
    Ok((slices, RoutingTable { routes }))
}

fn join<T: fmt::Display>(items: impl Iterator<Item = T>) -> String {
    let mut s = String::new();
    for (i, item) in items.enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{item}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const CHAIN: &str = "\
L 1 lion
L 2 felidae
L 3 carnivore
L 4 animal
L 5 organism
E 1 2
E 2 3
E 3 4
E 4 5
";

    #[test]
    fn loads_minimal_hierarchy() {
        let h = LabelHierarchy::parse("L 0 lion\nL 1 felidae\nL 2 carnivore\nE 0 1\nE 1 2\n").unwrap();
        assert_eq!(h.len(), 3);
        assert_eq!(h.edges().len(), 2);
        assert_eq!(h.count(0), 0);
    }

    #[test]
    fn rejects_two_cycle() {
        let err = LabelHierarchy::parse("L 0 a\nL 1 b\nE 0 1\nE 1 0\n").unwrap_err();
        assert!(matches!(err, Error::Cycle(_)));
        assert!(err.to_string().contains("cycle"));
    }

    #[test]
    fn rejects_self_loop_and_dangling_edge() {
        assert!(matches!(LabelHierarchy::parse("L 0 a\nE 0 0\n"), Err(Error::Cycle(0))));
        let err = LabelHierarchy::parse("L 0 a\nE 0 7\n").unwrap_err();
        assert!(matches!(err, Error::DanglingEdge { line: 2, label: 7 }));
    }

    #[test]
    fn empty_file_is_empty_hierarchy() {
        let h = LabelHierarchy::parse("").unwrap();
        assert!(h.is_empty());
    }

    #[test]
    fn parse_errors_name_the_line() {
        let err = LabelHierarchy::parse("L 0 a\nQ 1 2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(LabelHierarchy::parse("L x a\n").is_err());
        assert!(LabelHierarchy::parse("L 0 a\nL 0 b\n").is_err());
        assert!(LabelHierarchy::parse("L 0 a\nC 3 10\n").is_err());
    }

    #[test]
    fn closes_lion_to_organism() {
        let h = LabelHierarchy::parse(CHAIN).unwrap();
        let closed = h.close_labels([1]).unwrap();
        assert_eq!(closed, BTreeSet::from([1, 2, 3, 4, 5]));
        assert_eq!(h.close_labels([5]).unwrap(), BTreeSet::from([5]));
        assert!(matches!(h.close_labels([9]), Err(Error::UnknownLabel(9))));
    }

    #[test]
    fn top_n_orders_by_count_then_id() {
        let counts = BTreeMap::from([(0, 10), (1, 5), (2, 1)]);
        let h = LabelHierarchy::new(
            [(0, "a".into()), (1, "b".into()), (2, "c".into())],
            [],
            counts,
        )
        .unwrap();
        assert_eq!(select_domains(&h, DomainMode::TopN(2)), vec![0, 1]);

        let tied = LabelHierarchy::new(
            [(4, "a".into()), (2, "b".into()), (9, "c".into())],
            [],
            BTreeMap::from([(4, 3), (2, 3), (9, 7)]),
        )
        .unwrap();
        assert_eq!(select_domains(&tied, DomainMode::TopN(3)), vec![9, 2, 4]);
        assert_eq!(select_domains(&tied, DomainMode::Threshold(3)), vec![9]);
        assert!(select_domains(&tied, DomainMode::Threshold(100)).is_empty());
    }

    #[test]
    fn domain_mode_parses() {
        assert_eq!("threshold:850000".parse::<DomainMode>().unwrap(), DomainMode::JFT);
        assert_eq!("topn:50".parse::<DomainMode>().unwrap(), DomainMode::IMAGENET21K);
        assert!("topn:".parse::<DomainMode>().is_err());
        assert!("best:3".parse::<DomainMode>().is_err());
    }

    #[test]
    fn lion_lands_in_both_ancestor_slices() {
        let h = LabelHierarchy::parse(CHAIN).unwrap();
        let examples = vec![MultiLabelExample::new(7, [1])];
        let (slices, routing) = build_slices(&examples, &[4, 3], &h).unwrap();
        assert_eq!(slices.len(), 2);
        assert!(slices.iter().all(|s| s.member_ids.contains(&7)));
        assert_eq!(routing.experts_for(7), &[0, 1]);
    }

    #[test]
    fn empty_slice_is_dropped() {
        let h = LabelHierarchy::parse(CHAIN).unwrap();
        let examples = vec![MultiLabelExample::new(0, [3])];
        let (slices, _) = build_slices(&examples, &[1, 4], &h).unwrap();
        assert_eq!(slices.len(), 1);
        assert_eq!(slices[0].expert_id, 1);
        assert_eq!(slices[0].root_label, 4);
        assert!(matches!(build_slices(&examples, &[], &h), Err(Error::Empty(_))));
        assert!(matches!(build_slices(&examples, &[42], &h), Err(Error::UnknownLabel(42))));
    }

    #[test]
    fn counts_recomputed_from_examples_respect_edges() {
        let h = LabelHierarchy::parse(CHAIN).unwrap();
        let examples = vec![
            MultiLabelExample::new(0, [1]),
            MultiLabelExample::new(1, [3]),
            MultiLabelExample::new(2, [5]),
        ];
        let closed = h.counts_from_examples(&examples, CountBasis::Closed).unwrap();
        assert_eq!(closed[&1], 1);
        assert_eq!(closed[&3], 2);
        assert_eq!(closed[&5], 3);
        for &(child, parent) in h.edges() {
            assert!(closed.get(&parent) >= closed.get(&child));
        }
        let raw = h.counts_from_examples(&examples, CountBasis::Raw).unwrap();
        assert_eq!(raw.get(&4), None);
        assert_eq!(raw[&5], 1);
    }

    #[test]
    fn resample_balances_uneven_slices() {
        let slices = vec![
            ExpertSlice {
                expert_id: 0,
                root_label: 0,
                member_ids: (0..10).collect(),
            },
            ExpertSlice {
                expert_id: 1,
                root_label: 1,
                member_ids: (100..190).collect(),
            },
        ];
        let pairs = balanced_resample(&slices, 100, 3).unwrap();
        assert_eq!(pairs.len(), 100);
        assert_eq!(pairs.iter().filter(|p| p.1 == 0).count(), 50);
        assert!(pairs.iter().all(|&(ex, e)| slices[e as usize].member_ids.contains(&ex)));
        assert_eq!(pairs, balanced_resample(&slices, 100, 3).unwrap());

        let single = &slices[..1];
        let pairs = balanced_resample(single, 7, 0).unwrap();
        assert_eq!(pairs.len(), 7);
        assert!(pairs.iter().all(|p| p.1 == 0 && p.0 < 10));

        assert!(matches!(balanced_resample(&[], 3, 0), Err(Error::Empty(_))));
        assert!(balanced_resample(&slices, 1, 0).is_err());
    }

    #[test]
    fn slice_text_round_trips() {
        let h = LabelHierarchy::parse(CHAIN).unwrap();
        let examples = vec![MultiLabelExample::new(0, [1]), MultiLabelExample::new(1, [3, 5])];
        let (slices, routing) = build_slices(&examples, &[5, 2], &h).unwrap();
        let text = format_slices(&slices, &routing);
        assert_eq!(parse_slices(&text).unwrap(), (slices, routing));
    }

    #[test]
    fn parses_examples() {
        let ex = parse_examples("X 3 1,2\n\nX 4 5\n").unwrap();
        assert_eq!(ex.len(), 2);
        assert_eq!(ex[0].labels, BTreeSet::from([1, 2]));
        assert!(parse_examples("X 3 1\nX 3 2\n").is_err());
        assert!(parse_examples("X 3\n").is_err());
    }
}
