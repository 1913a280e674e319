//! Analytic versus central-difference gradients, one function per component.
//! Each returns the worst relative error over every parameter and input entry.

use newsrec::configuration::{ConfigValue, ExperimentConfig};
use newsrec::corpus::{sample_training_pairs, Split};
use newsrec::models::{
    softmax_cross_entropy, training_loss, AdditiveAttentionPool, DenseMatrix, Embedding, Mode, ModelInputs,
    MultiHeadSelfAttention, NeighborAggregator, NewsRecModel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_params, check_vector, random_vec, small_planted, attach_category_embeddings};

fn weighted_sum(m: &DenseMatrix, r: &DenseMatrix) -> f64 {
    m.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_vec(rows, cols, random_vec(rng, rows * cols)).unwrap()
}

fn random_mask(rng: &mut ChaCha8Rng, len: usize) -> Vec<bool> {
    let mut mask: Vec<bool> = (0..len).map(|_| rng.random_bool(0.7)).collect();
    let keep = rng.random_range(0..len);
    mask[keep] = true;
    mask
}

pub fn embedding(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let emb = Embedding::new(7, 3, &mut rng);
    // repeated indices exercise the scatter-add
    let idx: Vec<usize> = (0..6).map(|_| rng.random_range(0..7)).collect();
    let r = random_matrix(&mut rng, idx.len(), 3);
    let mut grad = emb.zeros_like();
    emb.backward(&idx, &r, &mut grad);
    check_params(&emb, &grad, |e| weighted_sum(&e.forward(&idx).unwrap(), &r)).0
}

pub fn attention(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (len, dim, heads) = (rng.random_range(1..=4), 4, 2);
    let att = MultiHeadSelfAttention::new(dim, heads, &mut rng).unwrap();
    let x = random_matrix(&mut rng, len, dim);
    let mask = random_mask(&mut rng, len);
    let r = random_matrix(&mut rng, len, dim);
    let (_, cache) = att.forward(&x, &mask).unwrap();
    let mut grad = att.zeros_like();
    let dx = att.backward(&cache, &r, &mut grad);
    let params = check_params(&att, &grad, |a| weighted_sum(&a.forward(&x, &mask).unwrap().0, &r)).0;
    let inputs = check_vector(x.data(), dx.data(), |v| {
        let xv = DenseMatrix::from_vec(len, dim, v.to_vec()).unwrap();
        weighted_sum(&att.forward(&xv, &mask).unwrap().0, &r)
    });
    params.max(inputs)
}

pub fn pooling(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (len, dim, query) = (rng.random_range(1..=5), 4, 3);
    let mut pool = AdditiveAttentionPool::new(dim, query, &mut rng);
    // non-zero bias so its gradient is checked away from the origin
    pool.b = random_matrix(&mut rng, 1, query);
    let x = random_matrix(&mut rng, len, dim);
    let mask = random_mask(&mut rng, len);
    let r = random_vec(&mut rng, dim);
    let dot = |v: &[f64]| v.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
    let (_, cache) = pool.forward(&x, &mask).unwrap();
    let mut grad = pool.zeros_like();
    let dx = pool.backward(&cache, &r, &mut grad);
    let params = check_params(&pool, &grad, |p| dot(&p.forward(&x, &mask).unwrap().0)).0;
    let inputs = check_vector(x.data(), dx.data(), |v| {
        let xv = DenseMatrix::from_vec(len, dim, v.to_vec()).unwrap();
        dot(&pool.forward(&xv, &mask).unwrap().0)
    });
    params.max(inputs)
}

pub fn aggregation(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 3;
    let agg = NeighborAggregator::new(dim, &mut rng);
    let own = random_vec(&mut rng, dim);
    let count = rng.random_range(0..=3);
    let neighbors: Vec<Vec<f64>> = (0..count).map(|_| random_vec(&mut rng, dim)).collect();
    let r = random_vec(&mut rng, dim);
    let dot = |v: &[f64]| v.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
    let run = |a: &NeighborAggregator, own: &[f64], ns: &[Vec<f64>]| {
        let refs: Vec<&[f64]> = ns.iter().map(Vec::as_slice).collect();
        dot(&a.forward(own, &refs).unwrap().0)
    };
    let refs: Vec<&[f64]> = neighbors.iter().map(Vec::as_slice).collect();
    let (_, cache) = agg.forward(&own, &refs).unwrap();
    let mut grad = agg.zeros_like();
    let (d_own, d_each) = agg.backward(&cache, &r, &mut grad);
    let mut worst = check_params(&agg, &grad, |a| run(a, &own, &neighbors)).0;
    worst = worst.max(check_vector(&own, &d_own, |v| run(&agg, v, &neighbors)));
    for i in 0..neighbors.len() {
        worst = worst.max(check_vector(&neighbors[i], &d_each, |v| {
            let mut ns = neighbors.clone();
            ns[i] = v.to_vec();
            run(&agg, &own, &ns)
        }));
    }
    worst
}

pub fn loss(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(1..=6);
    let scores: Vec<f64> = (0..=k).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
    let (value, grad) = softmax_cross_entropy(&scores);
    assert!((value - training_loss(scores[0], &scores[1..])).abs() < 1e-12);
    check_vector(&scores, &grad, |s| training_loss(s[0], &s[1..]))
}

/// The whole model on a few training samples of a tiny planted corpus.
pub fn full_model(model_name: &str, hops: usize, seed: u64) -> f64 {
    let data = small_planted(seed);
    let dir = tempfile::tempdir().unwrap();
    let mut config = ExperimentConfig::defaults(model_name, "planted");
    config.seed = seed;
    config.embedding_dim = 4;
    config.attention_heads = 2;
    config.title_len = 5;
    config.history_len = 3;
    config.negatives = 2;
    if hops > 1 {
        config.model_extras.insert("hops".into(), ConfigValue::Int(hops as i64));
    }
    if model_name.starts_with("llm") {
        attach_category_embeddings(&mut config, &data, dir.path());
    }
    let inputs = ModelInputs::build(&config, &data.corpus).unwrap();
    let mut model = NewsRecModel::from_config(&config, &inputs).unwrap();
    // move the attention query and biases away from zero
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    for (_, m) in newsrec::models::Parameterized::params_mut(&mut model.weights) {
        for v in m.data_mut() {
            *v += 0.1 * (rng.random::<f64>() - 0.5);
        }
    }
    let train = data.corpus.split(Split::Train);
    let (samples, _) = sample_training_pairs(&train[..3], config.negatives, config.history_len, seed);
    let grads = model.batch_gradients(&inputs, &samples, Mode::Eval).unwrap().grads;
    let probe = model.clone();
    check_params(&model.weights, &grads, |w| {
        let mut m = probe.clone();
        m.weights = w.clone();
        m.batch_loss(&inputs, &samples, Mode::Eval).unwrap()
    })
    .0
}
