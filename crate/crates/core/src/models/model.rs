//! The three reference models behind one interface.
//!
//! News are addressed by index: 0 is the PAD news (always the zero vector),
//! corpus news follow in sorted id order.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::embeddings::{load_precomputed_embeddings, CoverageReport, EmbeddingTable};
use super::graph::build_click_graph;
use super::layers::{
    AdditiveAttentionPool, AggregateCache, AttentionCache, Embedding, Linear, MultiHeadSelfAttention,
    NeighborAggregator, PoolCache,
};
use super::loss::{score_candidates, softmax_cross_entropy};
use super::matrix::axpy;
use super::params::{prefixed, prefixed_mut, Parameterized};
use super::{DenseMatrix, ModelError};
use crate::configuration::{ExperimentConfig, ModelFamily};
use crate::corpus::sampling::fit_history;
use crate::corpus::vocab::PAD_INDEX;
use crate::corpus::{encode_tokens, ImpressionLog, Split, TrainingSample, UnifiedCorpus, PAD_NEWS_ID};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout masks are keyed on `(seed, step, news index)`.
    Train { seed: u64, step: u64 },
}

/// Architecture and parameter shapes, all derived from the config and corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub family: ModelFamily,
    pub news_encoder: String,
    pub user_encoder: String,
    pub scorer: String,
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub attention_heads: usize,
    pub title_len: usize,
    pub history_len: usize,
    /// Width of precomputed embeddings (embedding family only).
    pub external_dim: usize,
    /// User-id embedding rows including row 0 for unknown users (graph family only).
    pub user_rows: usize,
    pub hops: usize,
    pub dropout: f64,
}

impl ModelSpec {
    pub fn from_config(config: &ExperimentConfig, inputs: &ModelInputs) -> Self {
        let family = config.family();
        let (news_encoder, user_encoder) = match family {
            ModelFamily::Attention => ("title_attention", "history_attention"),
            ModelFamily::Graph => ("title_attention", "graph_mean_aggregation"),
            ModelFamily::PrecomputedEmbedding => ("precomputed_projection", "history_attention"),
        };
        ModelSpec {
            name: config.model_name.clone(),
            family,
            news_encoder: news_encoder.into(),
            user_encoder: user_encoder.into(),
            scorer: "dot_product".into(),
            vocab_size: inputs.vocab_size,
            embedding_dim: config.embedding_dim,
            attention_heads: config.attention_heads,
            title_len: config.title_len,
            history_len: config.history_len,
            external_dim: inputs.external.first().map_or(0, Vec::len),
            user_rows: inputs.graph.as_ref().map_or(0, |g| g.user_news.len()),
            hops: if family == ModelFamily::Graph { config.gnn_hops() } else { 0 },
            dropout: config.dropout,
        }
    }

    /// Parameter names and shapes the spec implies.
    pub fn parameter_shapes(&self) -> BTreeMap<String, (usize, usize)> {
        let d = self.embedding_dim;
        let mut shapes = BTreeMap::new();
        let attention = |prefix: &str, shapes: &mut BTreeMap<String, (usize, usize)>| {
            for w in ["wq", "wk", "wv"] {
                shapes.insert(format!("{prefix}.attention.{w}"), (d, d));
            }
            shapes.insert(format!("{prefix}.pool.w"), (d, d));
            shapes.insert(format!("{prefix}.pool.b"), (1, d));
            shapes.insert(format!("{prefix}.pool.query"), (1, d));
        };
        match self.family {
            ModelFamily::Attention | ModelFamily::Graph => {
                shapes.insert("news.embedding.table".into(), (self.vocab_size, d));
                attention("news", &mut shapes);
            }
            ModelFamily::PrecomputedEmbedding => {
                shapes.insert("news.projection.w".into(), (self.external_dim, d));
                shapes.insert("news.projection.b".into(), (1, d));
            }
        }
        match self.family {
            ModelFamily::Attention | ModelFamily::PrecomputedEmbedding => attention("user", &mut shapes),
            ModelFamily::Graph => {
                shapes.insert("user.ids.table".into(), (self.user_rows, d));
                for hop in 1..=self.hops {
                    shapes.insert(format!("user.hop{hop}.w"), (2 * d, d));
                }
            }
        }
        shapes
    }
}

struct GraphContext {
    user_index: HashMap<String, usize>,
    /// By user row; row 0 (unknown user) has no neighbours.
    user_news: Vec<Vec<usize>>,
    /// By news index.
    news_users: Vec<Vec<usize>>,
}

/// Corpus-derived model inputs: news indexing, encoded titles, precomputed
/// vectors and the training click graph.
pub struct ModelInputs {
    news_ids: Vec<String>,
    index: HashMap<String, usize>,
    titles: Vec<Vec<usize>>,
    external: Vec<Vec<f64>>,
    vocab_size: usize,
    graph: Option<GraphContext>,
    pub coverage: Option<CoverageReport>,
}

impl ModelInputs {
    /// Reads the embedding file named in the config for the embedding family.
    pub fn build(config: &ExperimentConfig, corpus: &UnifiedCorpus) -> Result<Self, ModelError> {
        let table = match config.family() {
            ModelFamily::PrecomputedEmbedding => {
                let path = config
                    .embedding_file()
                    .ok_or_else(|| ModelError::Config("model_extras.embedding_file is required".into()))?;
                Some(load_precomputed_embeddings(&path, None)?)
            }
            _ => None,
        };
        Self::with_table(config, corpus, table)
    }

    pub fn with_table(
        config: &ExperimentConfig,
        corpus: &UnifiedCorpus,
        table: Option<EmbeddingTable>,
    ) -> Result<Self, ModelError> {
        let family = config.family();
        let mut news_ids = vec![PAD_NEWS_ID.to_string()];
        news_ids.extend(corpus.news.keys().cloned());
        let index: HashMap<String, usize> = news_ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();

        let mut titles = Vec::new();
        if family != ModelFamily::PrecomputedEmbedding {
            titles.push(vec![PAD_INDEX as usize; config.title_len]);
            for item in corpus.news.values() {
                let encoded = encode_tokens(&item.title_tokens, &corpus.vocabulary, config.title_len);
                titles.push(encoded.into_iter().map(|t| t as usize).collect());
            }
        }

        let mut external = Vec::new();
        let mut coverage = None;
        if family == ModelFamily::PrecomputedEmbedding {
            let table = table.ok_or_else(|| ModelError::Config("the embedding model needs a precomputed table".into()))?;
            coverage = Some(table.coverage(corpus.news.keys()));
            external.push(vec![0.0; table.dim()]);
            external.extend(corpus.news.keys().map(|id| table.vector_or_zero(id)));
        }

        let graph = (family == ModelFamily::Graph).then(|| {
            let g = build_click_graph(corpus.split(Split::Train));
            let mut user_index = HashMap::new();
            let mut user_news = vec![Vec::new()];
            let mut news_users = vec![Vec::new(); news_ids.len()];
            for user in g.users() {
                let row = user_news.len();
                user_index.insert(user.clone(), row);
                let mut ns: Vec<usize> = g.user_neighbors(user).iter().filter_map(|n| index.get(n).copied()).collect();
                ns.sort_unstable();
                for &n in &ns {
                    news_users[n].push(row);
                }
                user_news.push(ns);
            }
            GraphContext { user_index, user_news, news_users }
        });

        Ok(ModelInputs { news_ids, index, titles, external, vocab_size: corpus.vocabulary.size(), graph, coverage })
    }

    pub fn news_count(&self) -> usize {
        self.news_ids.len()
    }

    pub fn news_index(&self, id: &str) -> Result<usize, ModelError> {
        self.index.get(id).copied().ok_or_else(|| ModelError::UnknownNews(id.to_string()))
    }

    pub fn news_id(&self, index: usize) -> &str {
        &self.news_ids[index]
    }

    pub fn title(&self, index: usize) -> &[usize] {
        &self.titles[index]
    }

    fn user_row(&self, user: &str) -> usize {
        self.graph.as_ref().and_then(|g| g.user_index.get(user).copied()).unwrap_or(0)
    }

    /// Graph neighbourhood of an impression's user: click-graph neighbours
    /// plus the impression history, minus `exclude`.
    fn neighborhood(&self, user_row: usize, history: &[usize], exclude: &[usize]) -> Vec<usize> {
        let mut set: BTreeSet<usize> = history.iter().copied().filter(|&n| n != 0).collect();
        if let Some(g) = &self.graph {
            set.extend(g.user_news[user_row].iter().copied());
        }
        for e in exclude {
            set.remove(e);
        }
        set.into_iter().collect()
    }

    fn news_users(&self, news: usize) -> &[usize] {
        self.graph.as_ref().map_or(&[], |g| g.news_users[news].as_slice())
    }

    fn indices(&self, ids: &[String]) -> Result<Vec<usize>, ModelError> {
        ids.iter().map(|id| self.news_index(id)).collect()
    }
}

/// Title pathway: token embedding, self-attention, additive pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct TitleEncoder {
    pub embedding: Embedding,
    pub attention: MultiHeadSelfAttention,
    pub pool: AdditiveAttentionPool,
}

pub struct TitleCache {
    tokens: Vec<usize>,
    dropout: Option<Vec<f64>>,
    attention: AttentionCache,
    pool: PoolCache,
}

impl TitleEncoder {
    fn new(vocab: usize, d: usize, heads: usize, rng: &mut ChaCha8Rng) -> Result<Self, ModelError> {
        Ok(Self {
            embedding: Embedding::new(vocab, d, rng),
            attention: MultiHeadSelfAttention::new(d, heads, rng)?,
            pool: AdditiveAttentionPool::new(d, d, rng),
        })
    }

    fn zeros_like(&self) -> Self {
        Self { embedding: self.embedding.zeros_like(), attention: self.attention.zeros_like(), pool: self.pool.zeros_like() }
    }

    /// `dropout` holds the rate and a keyed generator in training mode.
    pub fn forward(&self, tokens: &[usize], dropout: Option<(f64, ChaCha8Rng)>) -> Result<(Vec<f64>, TitleCache), ModelError> {
        let mask: Vec<bool> = tokens.iter().map(|&t| t != PAD_INDEX as usize).collect();
        let mut x = self.embedding.forward(tokens)?;
        let drop_mask = dropout.filter(|(p, _)| *p > 0.0).map(|(p, mut rng)| {
            let keep = 1.0 / (1.0 - p);
            let m: Vec<f64> = (0..x.data().len()).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
            for (v, s) in x.data_mut().iter_mut().zip(&m) {
                *v *= s;
            }
            m
        });
        let (h, attention) = self.attention.forward(&x, &mask)?;
        let (out, pool) = self.pool.forward(&h, &mask)?;
        Ok((out, TitleCache { tokens: tokens.to_vec(), dropout: drop_mask, attention, pool }))
    }

    pub fn backward(&self, cache: &TitleCache, d_out: &[f64], grad: &mut TitleEncoder) {
        let dh = self.pool.backward(&cache.pool, d_out, &mut grad.pool);
        let mut dx = self.attention.backward(&cache.attention, &dh, &mut grad.attention);
        if let Some(m) = &cache.dropout {
            for (v, s) in dx.data_mut().iter_mut().zip(m) {
                *v *= s;
            }
        }
        self.embedding.backward(&cache.tokens, &dx, &mut grad.embedding);
    }
}

impl Parameterized for TitleEncoder {
    fn params(&self) -> Vec<(String, &DenseMatrix)> {
        let mut out = prefixed("embedding", self.embedding.params());
        out.extend(prefixed("attention", self.attention.params()));
        out.extend(prefixed("pool", self.pool.params()));
        out
    }
    fn params_mut(&mut self) -> Vec<(String, &mut DenseMatrix)> {
        let mut out = prefixed_mut("embedding", self.embedding.params_mut());
        out.extend(prefixed_mut("attention", self.attention.params_mut()));
        out.extend(prefixed_mut("pool", self.pool.params_mut()));
        out
    }
}

/// User pathway over clicked-news vectors: self-attention then pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEncoder {
    pub attention: MultiHeadSelfAttention,
    pub pool: AdditiveAttentionPool,
}

pub struct HistoryCache {
    attention: AttentionCache,
    pool: PoolCache,
}

impl HistoryEncoder {
    fn new(d: usize, heads: usize, rng: &mut ChaCha8Rng) -> Result<Self, ModelError> {
        Ok(Self { attention: MultiHeadSelfAttention::new(d, heads, rng)?, pool: AdditiveAttentionPool::new(d, d, rng) })
    }

    fn zeros_like(&self) -> Self {
        Self { attention: self.attention.zeros_like(), pool: self.pool.zeros_like() }
    }

    pub fn forward(&self, history: &DenseMatrix, mask: &[bool]) -> Result<(Vec<f64>, HistoryCache), ModelError> {
        let (h, attention) = self.attention.forward(history, mask)?;
        let (out, pool) = self.pool.forward(&h, mask)?;
        Ok((out, HistoryCache { attention, pool }))
    }

    pub fn backward(&self, cache: &HistoryCache, d_out: &[f64], grad: &mut HistoryEncoder) -> DenseMatrix {
        let dh = self.pool.backward(&cache.pool, d_out, &mut grad.pool);
        self.attention.backward(&cache.attention, &dh, &mut grad.attention)
    }
}

impl Parameterized for HistoryEncoder {
    fn params(&self) -> Vec<(String, &DenseMatrix)> {
        let mut out = prefixed("attention", self.attention.params());
        out.extend(prefixed("pool", self.pool.params()));
        out
    }
    fn params_mut(&mut self) -> Vec<(String, &mut DenseMatrix)> {
        let mut out = prefixed_mut("attention", self.attention.params_mut());
        out.extend(prefixed_mut("pool", self.pool.params_mut()));
        out
    }
}

/// User pathway of the graph model: a learned user-id embedding refined by
/// one or two rounds of neighbour aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphUserEncoder {
    pub ids: Embedding,
    pub hops: Vec<NeighborAggregator>,
}

struct GraphUserCache {
    user_row: usize,
    neighbors: Vec<usize>,
    first: AggregateCache,
    /// Second hop only: per-neighbour first-hop caches and the final step.
    news_first: Vec<AggregateCache>,
    second: Option<AggregateCache>,
}

impl GraphUserEncoder {
    fn zeros_like(&self) -> Self {
        Self { ids: self.ids.zeros_like(), hops: self.hops.iter().map(NeighborAggregator::zeros_like).collect() }
    }

    fn forward<'a>(
        &self,
        inputs: &ModelInputs,
        user_row: usize,
        neighbors: Vec<usize>,
        news: &dyn Fn(usize) -> &'a [f64],
    ) -> Result<(Vec<f64>, GraphUserCache), ModelError> {
        let own = self.ids.table.row(user_row);
        let neighbor_vecs: Vec<&[f64]> = neighbors.iter().map(|&n| news(n)).collect();
        let (first_out, first) = self.hops[0].forward(own, &neighbor_vecs)?;
        if self.hops.len() == 1 {
            return Ok((first_out, GraphUserCache { user_row, neighbors, first, news_first: Vec::new(), second: None }));
        }
        let mut news_first = Vec::with_capacity(neighbors.len());
        let mut news_out = Vec::with_capacity(neighbors.len());
        for &n in &neighbors {
            let users: Vec<&[f64]> = inputs.news_users(n).iter().map(|&u| self.ids.table.row(u)).collect();
            let (o, c) = self.hops[0].forward(news(n), &users)?;
            news_out.push(o);
            news_first.push(c);
        }
        let refs: Vec<&[f64]> = news_out.iter().map(Vec::as_slice).collect();
        let (out, second) = self.hops[1].forward(&first_out, &refs)?;
        Ok((out, GraphUserCache { user_row, neighbors, first, news_first, second: Some(second) }))
    }

    fn backward(
        &self,
        inputs: &ModelInputs,
        cache: &GraphUserCache,
        d_out: &[f64],
        grad: &mut GraphUserEncoder,
        d_news: &mut BTreeMap<usize, Vec<f64>>,
    ) {
        let d = d_out.len();
        let mut add_news = |n: usize, g: &[f64]| axpy(d_news.entry(n).or_insert_with(|| vec![0.0; d]), 1.0, g);
        let d_first = match &cache.second {
            None => d_out.to_vec(),
            Some(second) => {
                let (d_first, d_each) = self.hops[1].backward(second, d_out, &mut grad.hops[1]);
                for (&n, c) in cache.neighbors.iter().zip(&cache.news_first) {
                    let (d_own, d_user) = self.hops[0].backward(c, &d_each, &mut grad.hops[0]);
                    add_news(n, &d_own);
                    for &u in inputs.news_users(n) {
                        axpy(grad.ids.table.row_mut(u), 1.0, &d_user);
                    }
                }
                d_first
            }
        };
        let (d_own, d_each) = self.hops[0].backward(&cache.first, &d_first, &mut grad.hops[0]);
        axpy(grad.ids.table.row_mut(cache.user_row), 1.0, &d_own);
        for &n in &cache.neighbors {
            add_news(n, &d_each);
        }
    }
}

impl Parameterized for GraphUserEncoder {
    fn params(&self) -> Vec<(String, &DenseMatrix)> {
        let mut out = prefixed("ids", self.ids.params());
        for (i, h) in self.hops.iter().enumerate() {
            out.extend(prefixed(&format!("hop{}", i + 1), h.params()));
        }
        out
    }
    fn params_mut(&mut self) -> Vec<(String, &mut DenseMatrix)> {
        let mut out = prefixed_mut("ids", self.ids.params_mut());
        for (i, h) in self.hops.iter_mut().enumerate() {
            out.extend(prefixed_mut(&format!("hop{}", i + 1), h.params_mut()));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NewsEncoder {
    Title(TitleEncoder),
    Projection(Linear),
}

#[derive(Debug, Clone, PartialEq)]
pub enum UserEncoder {
    History(HistoryEncoder),
    Graph(GraphUserEncoder),
}

/// All trainable parameters. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub news: NewsEncoder,
    pub user: UserEncoder,
}

impl Weights {
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = spec.embedding_dim;
        let news = match spec.family {
            ModelFamily::PrecomputedEmbedding => NewsEncoder::Projection(Linear::new(spec.external_dim, d, &mut rng)),
            _ => NewsEncoder::Title(TitleEncoder::new(spec.vocab_size, d, spec.attention_heads, &mut rng)?),
        };
        let user = match spec.family {
            ModelFamily::Graph => {
                if !(1..=2).contains(&spec.hops) {
                    return Err(ModelError::Config(format!("hops must be 1 or 2, got {}", spec.hops)));
                }
                UserEncoder::Graph(GraphUserEncoder {
                    ids: Embedding::new(spec.user_rows.max(1), d, &mut rng),
                    hops: (0..spec.hops).map(|_| NeighborAggregator::new(d, &mut rng)).collect(),
                })
            }
            _ => UserEncoder::History(HistoryEncoder::new(d, spec.attention_heads, &mut rng)?),
        };
        Ok(Weights { news, user })
    }

    pub fn zeros_like(&self) -> Self {
        let news = match &self.news {
            NewsEncoder::Title(t) => NewsEncoder::Title(t.zeros_like()),
            NewsEncoder::Projection(l) => NewsEncoder::Projection(l.zeros_like()),
        };
        let user = match &self.user {
            UserEncoder::History(h) => UserEncoder::History(h.zeros_like()),
            UserEncoder::Graph(g) => UserEncoder::Graph(g.zeros_like()),
        };
        Weights { news, user }
    }

    pub fn named(&self) -> BTreeMap<String, DenseMatrix> {
        self.params().into_iter().map(|(n, m)| (n, m.clone())).collect()
    }

    /// Replaces every parameter from `named`; names and shapes must match exactly.
    pub fn load_named(&mut self, named: &BTreeMap<String, DenseMatrix>) -> Result<(), ModelError> {
        let mut seen = 0;
        for (name, m) in self.params_mut() {
            let src = named.get(&name).ok_or_else(|| ModelError::MissingParameter(name.clone()))?;
            if src.shape() != m.shape() {
                return Err(ModelError::ShapeMismatch { name, expected: m.shape(), found: src.shape() });
            }
            *m = src.clone();
            seen += 1;
        }
        if seen != named.len() {
            let known: BTreeSet<String> = self.params().into_iter().map(|(n, _)| n).collect();
            let extra = named.keys().find(|k| !known.contains(*k)).cloned().unwrap_or_default();
            return Err(ModelError::UnexpectedParameter(extra));
        }
        Ok(())
    }
}

impl Parameterized for Weights {
    fn params(&self) -> Vec<(String, &DenseMatrix)> {
        let mut out = match &self.news {
            NewsEncoder::Title(t) => prefixed("news", t.params()),
            NewsEncoder::Projection(l) => prefixed("news.projection", l.params()),
        };
        out.extend(match &self.user {
            UserEncoder::History(h) => prefixed("user", h.params()),
            UserEncoder::Graph(g) => prefixed("user", g.params()),
        });
        out
    }
    fn params_mut(&mut self) -> Vec<(String, &mut DenseMatrix)> {
        let mut out = match &mut self.news {
            NewsEncoder::Title(t) => prefixed_mut("news", t.params_mut()),
            NewsEncoder::Projection(l) => prefixed_mut("news.projection", l.params_mut()),
        };
        out.extend(match &mut self.user {
            UserEncoder::History(h) => prefixed_mut("user", h.params_mut()),
            UserEncoder::Graph(g) => prefixed_mut("user", g.params_mut()),
        });
        out
    }
}

enum UserCache {
    History(HistoryCache),
    Graph(GraphUserCache),
}

enum NewsCache {
    Pad,
    Title(TitleCache),
    Projection(Vec<f64>),
}

/// Loss and gradient sums over a batch (not divided by the batch size).
pub struct BatchGradients {
    pub loss_sum: f64,
    pub samples: usize,
    pub grads: Weights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewsRecModel {
    pub spec: ModelSpec,
    pub weights: Weights,
}

fn check_finite(v: &[f64], context: &'static str) -> Result<(), ModelError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NonFinite(context))
    }
}

fn dropout_rng(seed: u64, step: u64, news: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&step.to_le_bytes());
    key[16..24].copy_from_slice(&(news as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

impl NewsRecModel {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self, ModelError> {
        let weights = Weights::init(&spec, seed)?;
        let model = Self { spec, weights };
        model.check_shapes()?;
        Ok(model)
    }

    pub fn from_config(config: &ExperimentConfig, inputs: &ModelInputs) -> Result<Self, ModelError> {
        Self::new(ModelSpec::from_config(config, inputs), config.seed)
    }

    pub fn check_shapes(&self) -> Result<(), ModelError> {
        let want = self.spec.parameter_shapes();
        let have: BTreeMap<String, (usize, usize)> = self.weights.params().into_iter().map(|(n, m)| (n, m.shape())).collect();
        for (name, shape) in &want {
            match have.get(name) {
                None => return Err(ModelError::MissingParameter(name.clone())),
                Some(s) if s != shape => {
                    return Err(ModelError::ShapeMismatch { name: name.clone(), expected: *shape, found: *s })
                }
                _ => {}
            }
        }
        if let Some(extra) = have.keys().find(|k| !want.contains_key(*k)) {
            return Err(ModelError::UnexpectedParameter(extra.clone()));
        }
        Ok(())
    }

    fn news_forward(&self, inputs: &ModelInputs, index: usize, mode: Mode) -> Result<(Vec<f64>, NewsCache), ModelError> {
        if index == 0 {
            return Ok((vec![0.0; self.spec.embedding_dim], NewsCache::Pad));
        }
        let (v, cache) = match &self.weights.news {
            NewsEncoder::Title(enc) => {
                let dropout = match mode {
                    Mode::Train { seed, step } if self.spec.dropout > 0.0 => {
                        Some((self.spec.dropout, dropout_rng(seed, step, index)))
                    }
                    _ => None,
                };
                let (v, c) = enc.forward(inputs.title(index), dropout)?;
                (v, NewsCache::Title(c))
            }
            NewsEncoder::Projection(lin) => {
                let x = inputs.external[index].clone();
                (lin.forward(&x)?, NewsCache::Projection(x))
            }
        };
        check_finite(&v, "news vector")?;
        Ok((v, cache))
    }

    fn news_backward(&self, cache: &NewsCache, d_out: &[f64], grads: &mut Weights) {
        match (cache, &self.weights.news, &mut grads.news) {
            (NewsCache::Title(c), NewsEncoder::Title(enc), NewsEncoder::Title(g)) => enc.backward(c, d_out, g),
            (NewsCache::Projection(x), NewsEncoder::Projection(lin), NewsEncoder::Projection(g)) => {
                lin.backward(x, d_out, g);
            }
            _ => {}
        }
    }

    /// News vector in evaluation mode; the PAD news is the zero vector.
    pub fn encode_news(&self, inputs: &ModelInputs, index: usize) -> Result<Vec<f64>, ModelError> {
        Ok(self.news_forward(inputs, index, Mode::Eval)?.0)
    }

    /// Every news vector by index.
    pub fn news_vectors(&self, inputs: &ModelInputs) -> Result<Vec<Vec<f64>>, ModelError> {
        (0..inputs.news_count()).map(|i| self.encode_news(inputs, i)).collect()
    }

    /// History-attention user encoder over `H×d` clicked-news vectors.
    pub fn encode_user(&self, history: &DenseMatrix, mask: &[bool]) -> Result<Vec<f64>, ModelError> {
        match &self.weights.user {
            UserEncoder::History(h) => Ok(h.forward(history, mask)?.0),
            UserEncoder::Graph(_) => Err(ModelError::Config("the graph model encodes users from the click graph".into())),
        }
    }

    fn history_matrix<'a>(&self, history: &[usize], news: &dyn Fn(usize) -> &'a [f64]) -> (DenseMatrix, Vec<bool>) {
        let d = self.spec.embedding_dim;
        let mut m = DenseMatrix::zeros(history.len(), d);
        for (i, &n) in history.iter().enumerate() {
            m.row_mut(i).copy_from_slice(news(n));
        }
        (m, history.iter().map(|&n| n != 0).collect())
    }

    /// User vector for `user_id` with the given (already fitted) history.
    pub fn user_vector(
        &self,
        inputs: &ModelInputs,
        user_id: &str,
        history: &[usize],
        news_vectors: &[Vec<f64>],
    ) -> Result<Vec<f64>, ModelError> {
        let lookup = |n: usize| news_vectors[n].as_slice();
        let u = match &self.weights.user {
            UserEncoder::History(h) => {
                let (m, mask) = self.history_matrix(history, &lookup);
                h.forward(&m, &mask)?.0
            }
            UserEncoder::Graph(g) => {
                let row = inputs.user_row(user_id);
                g.forward(inputs, row, inputs.neighborhood(row, history, &[]), &lookup)?.0
            }
        };
        check_finite(&u, "user vector")?;
        Ok(u)
    }

    pub fn score_impression(
        &self,
        inputs: &ModelInputs,
        impression: &ImpressionLog,
        news_vectors: &[Vec<f64>],
    ) -> Result<Vec<f64>, ModelError> {
        let history = inputs.indices(&fit_history(&impression.history, self.spec.history_len))?;
        let u = self.user_vector(inputs, &impression.user_id, &history, news_vectors)?;
        let rows = impression
            .candidates
            .iter()
            .map(|c| inputs.news_index(&c.news_id).map(|i| news_vectors[i].clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let cands = DenseMatrix::from_rows(&rows)?;
        let scores = score_candidates(&u, &cands)?;
        check_finite(&scores, "scores")?;
        Ok(scores)
    }

    /// Candidate scores for each impression, in order.
    pub fn score_impressions(&self, inputs: &ModelInputs, impressions: &[ImpressionLog]) -> Result<Vec<Vec<f64>>, ModelError> {
        let vectors = self.news_vectors(inputs)?;
        impressions.iter().map(|imp| self.score_impression(inputs, imp, &vectors)).collect()
    }

    /// Summed loss and parameter gradients over `samples`.
    pub fn batch_gradients(
        &self,
        inputs: &ModelInputs,
        samples: &[TrainingSample],
        mode: Mode,
    ) -> Result<BatchGradients, ModelError> {
        let d = self.spec.embedding_dim;
        struct Prepared {
            user_row: usize,
            history: Vec<usize>,
            candidates: Vec<usize>,
            neighbors: Vec<usize>,
        }
        let graph = matches!(self.weights.user, UserEncoder::Graph(_));
        let mut needed = BTreeSet::new();
        let mut prepared = Vec::with_capacity(samples.len());
        for s in samples {
            let history = inputs.indices(&s.history)?;
            let mut candidates = vec![inputs.news_index(&s.positive)?];
            candidates.extend(inputs.indices(&s.negatives)?);
            let user_row = inputs.user_row(&s.user_id);
            let neighbors = if graph {
                let exclude = inputs.indices(&s.impression_positives)?;
                inputs.neighborhood(user_row, &history, &exclude)
            } else {
                Vec::new()
            };
            needed.extend(candidates.iter().copied());
            if graph {
                needed.extend(neighbors.iter().copied());
            } else {
                needed.extend(history.iter().copied());
            }
            prepared.push(Prepared { user_row, history, candidates, neighbors });
        }

        let mut forward: BTreeMap<usize, (Vec<f64>, NewsCache)> = BTreeMap::new();
        for &n in &needed {
            forward.insert(n, self.news_forward(inputs, n, mode)?);
        }
        let zero = vec![0.0; d];
        let lookup = |n: usize| forward.get(&n).map_or(zero.as_slice(), |(v, _)| v.as_slice());

        let mut grads = self.weights.zeros_like();
        let mut d_news: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut loss_sum = 0.0;
        for p in prepared {
            let (u, cache) = match &self.weights.user {
                UserEncoder::History(enc) => {
                    let (m, mask) = self.history_matrix(&p.history, &lookup);
                    let (u, c) = enc.forward(&m, &mask)?;
                    (u, UserCache::History(c))
                }
                UserEncoder::Graph(enc) => {
                    let (u, c) = enc.forward(inputs, p.user_row, p.neighbors, &lookup)?;
                    (u, UserCache::Graph(c))
                }
            };
            check_finite(&u, "user vector")?;
            let rows: Vec<Vec<f64>> = p.candidates.iter().map(|&c| lookup(c).to_vec()).collect();
            let cands = DenseMatrix::from_rows(&rows)?;
            let scores = score_candidates(&u, &cands)?;
            check_finite(&scores, "scores")?;
            let (loss, d_scores) = softmax_cross_entropy(&scores);
            loss_sum += loss;
            let mut du = vec![0.0; d];
            for (i, &c) in p.candidates.iter().enumerate() {
                axpy(&mut du, d_scores[i], cands.row(i));
                axpy(d_news.entry(c).or_insert_with(|| vec![0.0; d]), d_scores[i], &u);
            }
            match (&cache, &self.weights.user, &mut grads.user) {
                (UserCache::History(c), UserEncoder::History(enc), UserEncoder::History(g)) => {
                    let dm = enc.backward(c, &du, g);
                    for (i, &n) in p.history.iter().enumerate() {
                        axpy(d_news.entry(n).or_insert_with(|| vec![0.0; d]), 1.0, dm.row(i));
                    }
                }
                (UserCache::Graph(c), UserEncoder::Graph(enc), UserEncoder::Graph(g)) => {
                    enc.backward(inputs, c, &du, g, &mut d_news);
                }
                _ => unreachable!("gradient container mirrors the weights"),
            }
        }
        for (n, g) in &d_news {
            if let Some((_, cache)) = forward.get(n) {
                self.news_backward(cache, g, &mut grads);
            }
        }
        Ok(BatchGradients { loss_sum, samples: samples.len(), grads })
    }

    /// Summed loss only, used by finite-difference checks.
    pub fn batch_loss(&self, inputs: &ModelInputs, samples: &[TrainingSample], mode: Mode) -> Result<f64, ModelError> {
        Ok(self.batch_gradients(inputs, samples, mode)?.loss_sum)
    }
}
