//! External knowledge graphs over category labels: Wu-Palmer similarity on a
//! hypernym taxonomy, and normalized co-occurrence counts from a labeled
//! corpus.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Edge threshold for co-occurrence graphs.
pub const COOCCURRENCE_THRESHOLD: f64 = 0.3;
/// Edge threshold for taxonomy (Wu-Palmer) graphs.
pub const WUP_THRESHOLD: f64 = 0.5;

/// Rooted hypernym hierarchy. Nodes may list several parents; depth is the
/// longest path from the root, counted inclusively (the root has depth 1).
#[derive(Debug, Clone)]
pub struct Taxonomy {
    labels: Vec<String>,
    index: HashMap<String, usize>,
    parents: Vec<Vec<usize>>,
    root: usize,
    depth: Vec<usize>,
}

impl Taxonomy {
    /// Builds from `(child, parent)` edges; a `None` parent declares the root.
    pub fn from_edges<'a, I>(edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, Option<&'a str>)>,
    {
        let mut labels: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut intern = |s: &str, labels: &mut Vec<String>| -> usize {
            *index.entry(s.to_string()).or_insert_with(|| {
                labels.push(s.to_string());
                labels.len() - 1
            })
        };
        let mut raw: Vec<(usize, Option<usize>)> = Vec::new();
        for (child, parent) in edges {
            let c = intern(child, &mut labels);
            let p = parent.map(|p| intern(p, &mut labels));
            raw.push((c, p));
        }
        let index: HashMap<String, usize> = labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();

        let mut parents = vec![Vec::new(); labels.len()];
        let mut roots = BTreeSet::new();
        for (c, p) in raw {
            match p {
                Some(p) if p == c => return Err(Error::invalid(format!("`{}` is its own parent", labels[c]))),
                Some(p) => {
                    if !parents[c].contains(&p) {
                        parents[c].push(p);
                    }
                }
                None => {
                    roots.insert(c);
                }
            }
        }
        if roots.len() != 1 {
            return Err(Error::invalid(format!(
                "taxonomy needs exactly one root, found {}",
                roots.len()
            )));
        }
        let root = *roots.iter().next().expect("one root");
        if !parents[root].is_empty() {
            return Err(Error::invalid("the root cannot have a parent"));
        }
        if let Some(orphan) = (0..labels.len()).find(|&i| i != root && parents[i].is_empty()) {
            return Err(Error::invalid(format!(
                "`{}` is not connected to the root",
                labels[orphan]
            )));
        }

        // depth via memoized DFS with cycle detection
        let mut depth = vec![0usize; labels.len()];
        let mut state = vec![0u8; labels.len()]; // 0 new, 1 on stack, 2 done
        fn visit(
            n: usize,
            parents: &[Vec<usize>],
            depth: &mut [usize],
            state: &mut [u8],
            labels: &[String],
        ) -> Result<usize> {
            match state[n] {
                2 => return Ok(depth[n]),
                1 => return Err(Error::invalid(format!("cycle through `{}`", labels[n]))),
                _ => {}
            }
            state[n] = 1;
            let mut d = 1;
            for &p in &parents[n] {
                d = d.max(1 + visit(p, parents, depth, state, labels)?);
            }
            state[n] = 2;
            depth[n] = d;
            Ok(d)
        }
        for n in 0..labels.len() {
            visit(n, &parents, &mut depth, &mut state, &labels)?;
        }

        Ok(Self {
            labels,
            index,
            parents,
            root,
            depth,
        })
    }

    /// Parses `child<TAB>parent` lines; `name<TAB>-` declares the root.
    pub fn parse(text: &str) -> Result<Self> {
        let mut edges = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (child, parent) = line
                .split_once('\t')
                .ok_or_else(|| Error::format("taxonomy", format!("line {}: expected child<TAB>parent", n + 1)))?;
            let (child, parent) = (child.trim(), parent.trim());
            if child.is_empty() || parent.is_empty() {
                return Err(Error::format("taxonomy", format!("line {}: empty field", n + 1)));
            }
            edges.push((child, (parent != "-").then_some(parent)));
        }
        Self::from_edges(edges)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{}\t-\n", self.labels[self.root]);
        for (c, ps) in self.parents.iter().enumerate() {
            for &p in ps {
                let _ = writeln!(s, "{}\t{}", self.labels[c], self.labels[p]);
            }
        }
        s
    }

    pub fn root(&self) -> &str {
        &self.labels[self.root]
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index.contains_key(label)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    fn id(&self, label: &str) -> Result<usize> {
        self.index
            .get(label)
            .copied()
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn depth(&self, label: &str) -> Result<usize> {
        Ok(self.depth[self.id(label)?])
    }

    fn ancestors(&self, n: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![n];
        while let Some(x) = stack.pop() {
            if seen.insert(x) {
                stack.extend(&self.parents[x]);
            }
        }
        seen
    }

    /// Deepest common ancestor (inclusive of the nodes themselves).
    pub fn lowest_common_subsumer(&self, a: &str, b: &str) -> Result<&str> {
        let (ia, ib) = (self.id(a)?, self.id(b)?);
        let common = self.ancestors(ia);
        let other = self.ancestors(ib);
        let lcs = common
            .intersection(&other)
            .copied()
            .max_by_key(|&n| (self.depth[n], std::cmp::Reverse(n)))
            .expect("the root is a common ancestor");
        Ok(&self.labels[lcs])
    }

    /// `2·depth(lcs) / (depth(a) + depth(b))`.
    pub fn wup_similarity(&self, a: &str, b: &str) -> Result<f64> {
        let lcs = self.lowest_common_subsumer(a, b)?;
        let d_lcs = self.depth(lcs)? as f64;
        let (da, db) = (self.depth(a)? as f64, self.depth(b)? as f64);
        Ok(2.0 * d_lcs / (da + db))
    }
}

/// Per-image category-label multisets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CooccurrenceCorpus {
    pub records: Vec<Vec<String>>,
}

impl CooccurrenceCorpus {
    pub fn new(records: Vec<Vec<String>>) -> Self {
        Self { records }
    }

    /// One record per non-blank line, comma-separated labels.
    pub fn parse(text: &str) -> Self {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect()
            })
            .collect();
        Self { records }
    }

    pub fn to_text(&self) -> String {
        self.records.iter().map(|r| r.join(",") + "\n").collect()
    }
}

/// Symmetric weighted adjacency over an ordered label list, with the
/// threshold that turns weights into edges.
#[derive(Debug, Clone, PartialEq)]
pub struct ProximityGraph {
    labels: Vec<String>,
    adjacency: Vec<f64>,
    theta: f64,
}

const SYMMETRY_TOL: f64 = 1e-12;

impl ProximityGraph {
    /// Validates symmetry, the unit diagonal and the `[0,1]` range.
    pub fn new(labels: Vec<String>, adjacency: Vec<f64>, theta: f64) -> Result<Self> {
        let q = labels.len();
        if q == 0 {
            return Err(Error::invalid("graph needs at least one label"));
        }
        let unique: BTreeSet<&String> = labels.iter().collect();
        if unique.len() != q {
            return Err(Error::invalid("graph labels must be unique"));
        }
        if adjacency.len() != q * q {
            return Err(Error::shape(format!(
                "{q} labels need {} adjacency entries, got {}",
                q * q,
                adjacency.len()
            )));
        }
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::invalid(format!("threshold {theta} outside [0,1]")));
        }
        for i in 0..q {
            if adjacency[i * q + i] != 1.0 {
                return Err(Error::invalid(format!("diagonal entry {i} is not 1")));
            }
            for j in 0..q {
                let v = adjacency[i * q + j];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::invalid(format!("entry ({i},{j}) = {v} outside [0,1]")));
                }
                if (v - adjacency[j * q + i]).abs() > SYMMETRY_TOL {
                    return Err(Error::invalid(format!("entries ({i},{j}) and ({j},{i}) differ")));
                }
            }
        }
        Ok(Self {
            labels,
            adjacency,
            theta,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn with_theta(mut self, theta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::invalid(format!("threshold {theta} outside [0,1]")));
        }
        self.theta = theta;
        Ok(self)
    }

    pub fn adjacency(&self) -> &[f64] {
        &self.adjacency
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[i * self.labels.len() + j]
    }

    pub fn weight_between(&self, a: &str, b: &str) -> Result<f64> {
        Ok(self.weight(self.index_of(a)?, self.index_of(b)?))
    }

    pub fn is_edge(&self, i: usize, j: usize) -> bool {
        self.weight(i, j) > self.theta
    }

    /// Entrywise mean of graphs over the same labels (threshold averaged too).
    pub fn mean_of(graphs: &[&ProximityGraph]) -> Result<Self> {
        let first = graphs.first().ok_or_else(|| Error::invalid("no graphs to average"))?;
        if graphs.iter().any(|g| g.labels != first.labels) {
            return Err(Error::invalid("graphs cover different labels"));
        }
        let k = graphs.len() as f64;
        let adjacency = (0..first.adjacency.len())
            .map(|i| {
                if i % (first.len() + 1) == 0 {
                    1.0
                } else {
                    graphs.iter().map(|g| g.adjacency[i]).sum::<f64>() / k
                }
            })
            .collect();
        let theta = graphs.iter().map(|g| g.theta).sum::<f64>() / k;
        Self::new(first.labels.clone(), adjacency, theta)
    }

    /// `GRAPH1` text: header, labels, `theta=`, then one row per label.
    pub fn to_text(&self) -> String {
        let q = self.labels.len();
        let mut s = String::from("GRAPH1\n");
        s.push_str(&self.labels.join(","));
        let _ = write!(s, "\ntheta={}\n", self.theta);
        for row in self.adjacency.chunks(q) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |d: String| Error::format("GRAPH1 file", d);
        let mut lines = text.lines().map(|l| l.trim_end_matches('\r'));
        if lines.next() != Some("GRAPH1") {
            return Err(bad("missing GRAPH1 header".into()));
        }
        let labels: Vec<String> = lines
            .next()
            .ok_or_else(|| bad("missing label line".into()))?
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        if labels.iter().any(String::is_empty) {
            return Err(bad("empty label".into()));
        }
        let theta = lines
            .next()
            .and_then(|l| l.strip_prefix("theta="))
            .ok_or_else(|| bad("missing theta= line".into()))?
            .trim()
            .parse::<f64>()
            .map_err(|e| bad(format!("theta: {e}")))?;
        let q = labels.len();
        let mut adjacency = Vec::with_capacity(q * q);
        let mut rows = 0;
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let row: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(format!("row {}: {e}", rows + 1)))?;
            if row.len() != q {
                return Err(bad(format!("row {} has {} entries, expected {q}", rows + 1, row.len())));
            }
            adjacency.extend(row);
            rows += 1;
        }
        if rows != q {
            return Err(bad(format!("expected {q} rows, found {rows}")));
        }
        Self::new(labels, adjacency, theta)
    }

    /// Errors unless the graph covers exactly `labels`, in order.
    pub fn expect_labels(&self, labels: &[String]) -> Result<()> {
        if self.labels != labels {
            return Err(Error::invalid(format!(
                "graph labels {:?} do not match expected {:?}",
                self.labels, labels
            )));
        }
        Ok(())
    }
}

/// Pairwise Wu-Palmer similarities; threshold 0.5.
pub fn build_wup_graph(taxonomy: &Taxonomy, categories: &[String]) -> Result<ProximityGraph> {
    let q = categories.len();
    let mut adjacency = vec![0.0; q * q];
    for i in 0..q {
        adjacency[i * q + i] = 1.0;
        taxonomy.depth(&categories[i])?;
        for j in i + 1..q {
            let s = taxonomy.wup_similarity(&categories[i], &categories[j])?;
            adjacency[i * q + j] = s;
            adjacency[j * q + i] = s;
        }
    }
    ProximityGraph::new(categories.to_vec(), adjacency, WUP_THRESHOLD)
}

/// Raw `q×q` pair counts; a record adds at most one to each pair, and the
/// diagonal stays zero.
pub fn cooccurrence_counts(corpus: &CooccurrenceCorpus, categories: &[String]) -> Result<Vec<u64>> {
    let q = categories.len();
    let index: HashMap<&str, usize> = categories.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut counts = vec![0u64; q * q];
    for record in &corpus.records {
        let present: BTreeSet<usize> = record
            .iter()
            .map(|l| {
                index
                    .get(l.as_str())
                    .copied()
                    .ok_or_else(|| Error::UnknownLabel(l.clone()))
            })
            .collect::<Result<_>>()?;
        let present: Vec<usize> = present.into_iter().collect();
        for (k, &i) in present.iter().enumerate() {
            for &j in &present[k + 1..] {
                counts[i * q + j] += 1;
                counts[j * q + i] += 1;
            }
        }
    }
    Ok(counts)
}

/// Pair counts divided by the largest off-diagonal count; threshold 0.3.
pub fn build_cooccurrence_graph(corpus: &CooccurrenceCorpus, categories: &[String]) -> Result<ProximityGraph> {
    if corpus.records.is_empty() {
        return Err(Error::invalid("co-occurrence corpus is empty"));
    }
    let q = categories.len();
    let counts = cooccurrence_counts(corpus, categories)?;
    let max = counts.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return Err(Error::invalid(
            "no category pair co-occurs; the normalizer would be zero",
        ));
    }
    let mut adjacency: Vec<f64> = counts.iter().map(|&c| c as f64 / max as f64).collect();
    for i in 0..q {
        adjacency[i * q + i] = 1.0;
    }
    ProximityGraph::new(categories.to_vec(), adjacency, COOCCURRENCE_THRESHOLD)
}

/// Category list: one label per line, or comma separated.
pub fn parse_categories(text: &str) -> Vec<String> {
    text.lines()
        .flat_map(|l| l.split(','))
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn chain() -> Taxonomy {
        Taxonomy::parse("root\t-\nanimal\troot\ndog\tanimal\ncat\tanimal\n").unwrap()
    }

    #[test]
    fn wup_hand_cases() {
        let t = chain();
        assert_eq!(t.wup_similarity("dog", "dog").unwrap(), 1.0);
        assert_eq!(t.wup_similarity("dog", "cat").unwrap(), 4.0 / 6.0);
        assert_eq!(t.wup_similarity("dog", "root").unwrap(), 0.5);
        assert_eq!(t.wup_similarity("root", "root").unwrap(), 1.0);
        assert_eq!(t.depth("root").unwrap(), 1);
        assert!(matches!(t.wup_similarity("dog", "fish"), Err(Error::UnknownLabel(_))));
    }

    #[test]
    fn taxonomy_validation() {
        assert!(Taxonomy::parse("a\t-\nb\t-\n").is_err(), "two roots");
        assert!(Taxonomy::parse("a\tb\nb\ta\n").is_err(), "no root");
        assert!(Taxonomy::parse("r\t-\na\tb\nb\ta\n").is_err(), "cycle");
        assert!(Taxonomy::parse("r\t-\na r\n").is_err(), "no tab");
    }

    #[test]
    fn multi_parent_uses_deepest_subsumer() {
        // spoon sits under both cutlery (depth 3) and tool (depth 2)
        let t = Taxonomy::parse(
            "root\t-\nartifact\troot\ncutlery\tartifact\ntool\troot\nspoon\tcutlery\nspoon\ttool\nfork\tcutlery\nhammer\ttool\n",
        )
        .unwrap();
        assert_eq!(t.depth("spoon").unwrap(), 4);
        assert_eq!(t.lowest_common_subsumer("spoon", "fork").unwrap(), "cutlery");
        assert_eq!(t.lowest_common_subsumer("spoon", "hammer").unwrap(), "tool");
    }

    #[test]
    fn wup_graph_cases() {
        let t = chain();
        let g = build_wup_graph(&t, &labels(&["dog"])).unwrap();
        assert_eq!(g.adjacency(), &[1.0]);
        let g = build_wup_graph(&t, &labels(&["dog", "cat"])).unwrap();
        assert_eq!(g.adjacency(), &[1.0, 4.0 / 6.0, 4.0 / 6.0, 1.0]);
        assert_eq!(g.theta(), 0.5);
        assert!(build_wup_graph(&t, &labels(&["dog", "emu"])).is_err());
    }

    #[test]
    fn cooccurrence_hand_count() {
        let corpus = CooccurrenceCorpus::parse("person,dog\nperson,dog\nperson,cup\n");
        let cats = labels(&["person", "dog", "cup"]);
        let g = build_cooccurrence_graph(&corpus, &cats).unwrap();
        assert_eq!(g.weight_between("person", "dog").unwrap(), 1.0);
        assert_eq!(g.weight_between("person", "cup").unwrap(), 0.5);
        assert_eq!(g.weight_between("dog", "cup").unwrap(), 0.0);
        assert_eq!(g.theta(), 0.3);
    }

    #[test]
    fn cooccurrence_edge_cases() {
        let cats = labels(&["a", "b", "c"]);
        let uniform = CooccurrenceCorpus::parse("a,b,c\na,b,c\n");
        let g = build_cooccurrence_graph(&uniform, &cats).unwrap();
        assert!(g.adjacency().iter().all(|&v| v == 1.0));

        let disjoint = CooccurrenceCorpus::parse("a\nb\n");
        assert!(build_cooccurrence_graph(&disjoint, &cats).is_err());
        assert!(build_cooccurrence_graph(&CooccurrenceCorpus::default(), &cats).is_err());
        let unknown = CooccurrenceCorpus::parse("a,zebra\n");
        assert!(matches!(
            build_cooccurrence_graph(&unknown, &cats),
            Err(Error::UnknownLabel(_))
        ));

        // duplicates inside a record count once
        let dup = CooccurrenceCorpus::parse("a,a,b\na,b\na,c\n");
        let g = build_cooccurrence_graph(&dup, &cats).unwrap();
        assert_eq!(g.weight_between("a", "b").unwrap(), 1.0);
        assert_eq!(g.weight_between("a", "c").unwrap(), 0.5);
    }

    #[test]
    fn graph_file_round_trip_and_validation() {
        let corpus = CooccurrenceCorpus::parse("x,y\nx,y,z\ny,z\nx,z\nx,y\n");
        let g = build_cooccurrence_graph(&corpus, &labels(&["x", "y", "z"])).unwrap();
        let back = ProximityGraph::parse(&g.to_text()).unwrap();
        assert_eq!(back, g);

        let asym = "GRAPH1\na,b\ntheta=0.5\n1,0.2\n0.3,1\n";
        assert!(ProximityGraph::parse(asym).is_err());
        let range = "GRAPH1\na,b\ntheta=0.5\n1,1.2\n1.2,1\n";
        assert!(ProximityGraph::parse(range).is_err());
        let short = "GRAPH1\na,b\ntheta=0.5\n1,0.2\n";
        assert!(ProximityGraph::parse(short).is_err());
        let header = "GRAPH2\na\ntheta=0.5\n1\n";
        assert!(ProximityGraph::parse(header).is_err());
        let ok = ProximityGraph::parse("GRAPH1\na,b\ntheta=0.5\n1,0.2\n0.2,1\n").unwrap();
        assert!(ok.expect_labels(&labels(&["b", "a"])).is_err());
    }
}
