//! Built-in 8-category world: taxonomy, scene corpus and appearances.

use grassnet_core::knowledge::{
    build_cooccurrence_graph, build_wup_graph, CooccurrenceCorpus, ProximityGraph, Taxonomy,
};
use grassnet_core::Result;

pub const TAXONOMY: &str = "\
entity\t-
animal\tentity
tableware\tentity
vehicle\tentity
dog\tanimal
cat\tanimal
horse\tanimal
cup\ttableware
fork\ttableware
spoon\ttableware
car\tvehicle
bus\tvehicle
";

pub const CATEGORIES: [&str; 8] = ["dog", "cat", "horse", "cup", "fork", "spoon", "car", "bus"];

/// Scene types of the reference corpus and how often each appears.
const SCENES: [(&[&str], usize); 4] = [
    (&["cup", "fork", "spoon"], 20),
    (&["car", "bus", "dog"], 10),
    (&["horse", "dog", "cat"], 10),
    (&["cat", "cup"], 10),
];

pub fn categories() -> Vec<String> {
    CATEGORIES.iter().map(|s| s.to_string()).collect()
}

pub fn taxonomy() -> Taxonomy {
    Taxonomy::parse(TAXONOMY).expect("built-in taxonomy is valid")
}

pub fn corpus() -> CooccurrenceCorpus {
    let records = SCENES
        .iter()
        .flat_map(|(labels, n)| std::iter::repeat_n(labels.iter().map(|s| s.to_string()).collect(), *n))
        .collect();
    CooccurrenceCorpus::new(records)
}

pub fn cooccurrence_graph() -> Result<ProximityGraph> {
    build_cooccurrence_graph(&corpus(), &categories())
}

pub fn wup_graph() -> Result<ProximityGraph> {
    build_wup_graph(&taxonomy(), &categories())
}

/// Relatedness used to assign saliency in synthetic scenes: the mean of the
/// two knowledge graphs.
pub fn ground_truth_graph() -> Result<ProximityGraph> {
    ProximityGraph::mean_of(&[&cooccurrence_graph()?, &wup_graph()?])
}

/// Fill texture of a category.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    Solid,
    Rows,
    Columns,
    Checker,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Appearance {
    pub color: [f64; 3],
    pub pattern: Pattern,
}

const PALETTE: [[f64; 3]; 8] = [
    [0.85, 0.2, 0.15],
    [0.2, 0.75, 0.25],
    [0.2, 0.3, 0.9],
    [0.9, 0.85, 0.2],
    [0.8, 0.25, 0.8],
    [0.2, 0.8, 0.85],
    [0.95, 0.55, 0.1],
    [0.45, 0.2, 0.6],
];

const PATTERNS: [Pattern; 4] = [Pattern::Solid, Pattern::Rows, Pattern::Columns, Pattern::Checker];

/// Appearance of the `i`-th category; wraps after 8 colors with a shifted
/// pattern so the first 32 categories stay distinct.
pub fn appearance(i: usize) -> Appearance {
    Appearance {
        color: PALETTE[i % PALETTE.len()],
        pattern: PATTERNS[(i + i / PALETTE.len()) % PATTERNS.len()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_graphs_have_expected_structure() {
        let c = cooccurrence_graph().unwrap();
        let w = wup_graph().unwrap();
        assert_eq!(c.weight_between("cup", "fork").unwrap(), 1.0);
        assert_eq!(c.weight_between("car", "dog").unwrap(), 0.5);
        assert_eq!(c.weight_between("dog", "fork").unwrap(), 0.0);
        assert!((w.weight_between("dog", "cat").unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((w.weight_between("dog", "cup").unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let g = ground_truth_graph().unwrap();
        assert!((g.weight_between("cup", "spoon").unwrap() - 5.0 / 6.0).abs() < 1e-12);
        for i in 0..8 {
            for j in 0..8 {
                if i != j {
                    assert!(g.weight(i, j) < 1.0);
                }
            }
        }
    }

    #[test]
    fn appearances_distinct() {
        let a: Vec<Appearance> = (0..32).map(appearance).collect();
        for i in 0..32 {
            for j in i + 1..32 {
                assert_ne!(a[i], a[j]);
            }
        }
    }
}
