//! Bipartite user-news click graph and mean-aggregation message passing.

use std::collections::{BTreeMap, BTreeSet};

use super::layers::NeighborAggregator;
use super::ModelError;
use crate::corpus::{ImpressionLog, PAD_NEWS_ID};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Node {
    User(String),
    News(String),
}

/// Undirected user-news edges. Adjacency lists are sorted and free of duplicates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClickGraph {
    user_adj: BTreeMap<String, Vec<String>>,
    news_adj: BTreeMap<String, Vec<String>>,
}

impl ClickGraph {
    pub fn from_edges<I: IntoIterator<Item = (String, String)>>(edges: I) -> Self {
        let set: BTreeSet<(String, String)> = edges.into_iter().collect();
        let mut g = ClickGraph::default();
        for (u, n) in set {
            g.user_adj.entry(u.clone()).or_default().push(n.clone());
            g.news_adj.entry(n).or_default().push(u);
        }
        for list in g.news_adj.values_mut() {
            list.sort();
        }
        g
    }

    /// `(user, news)` pairs in sorted order.
    pub fn edges(&self) -> Vec<(String, String)> {
        self.user_adj.iter().flat_map(|(u, ns)| ns.iter().map(move |n| (u.clone(), n.clone()))).collect()
    }

    pub fn edge_count(&self) -> usize {
        self.user_adj.values().map(Vec::len).sum()
    }

    pub fn users(&self) -> impl Iterator<Item = &String> {
        self.user_adj.keys()
    }

    pub fn news(&self) -> impl Iterator<Item = &String> {
        self.news_adj.keys()
    }

    pub fn nodes(&self) -> Vec<Node> {
        self.users().map(|u| Node::User(u.clone())).chain(self.news().map(|n| Node::News(n.clone()))).collect()
    }

    pub fn user_neighbors(&self, user: &str) -> &[String] {
        self.user_adj.get(user).map_or(&[], Vec::as_slice)
    }

    pub fn news_neighbors(&self, news: &str) -> &[String] {
        self.news_adj.get(news).map_or(&[], Vec::as_slice)
    }

    pub fn neighbors(&self, node: &Node) -> Vec<Node> {
        match node {
            Node::User(u) => self.user_neighbors(u).iter().map(|n| Node::News(n.clone())).collect(),
            Node::News(n) => self.news_neighbors(n).iter().map(|u| Node::User(u.clone())).collect(),
        }
    }
}

/// One edge per (user, clicked news): history items and positive candidates.
pub fn build_click_graph(impressions: &[ImpressionLog]) -> ClickGraph {
    let mut edges = Vec::new();
    for imp in impressions {
        for n in imp.history.iter().filter(|n| n.as_str() != PAD_NEWS_ID) {
            edges.push((imp.user_id.clone(), n.clone()));
        }
        for c in imp.positives() {
            edges.push((imp.user_id.clone(), c.news_id.clone()));
        }
    }
    ClickGraph::from_edges(edges)
}

/// Runs one aggregation round per layer over every node of `graph`.
/// `embeddings` must cover every node.
pub fn aggregate_neighbors(
    graph: &ClickGraph,
    embeddings: &BTreeMap<Node, Vec<f64>>,
    layers: &[NeighborAggregator],
) -> Result<BTreeMap<Node, Vec<f64>>, ModelError> {
    if !(1..=2).contains(&layers.len()) {
        return Err(ModelError::Config(format!("hops must be 1 or 2, got {}", layers.len())));
    }
    let mut current = embeddings.clone();
    for layer in layers {
        let mut next = BTreeMap::new();
        for (node, own) in &current {
            let neighbors = graph.neighbors(node);
            let vecs = neighbors
                .iter()
                .map(|n| current.get(n).map(Vec::as_slice).ok_or_else(|| ModelError::UnknownNode(format!("{n:?}"))))
                .collect::<Result<Vec<_>, _>>()?;
            next.insert(node.clone(), layer.forward(own, &vecs)?.0);
        }
        current = next;
    }
    Ok(current)
}
