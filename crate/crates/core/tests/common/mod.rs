//! Oracles and fixtures shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use cocoon::corpus::{CategoryMap, Corpus, Event};
use cocoon::embedding::{example_gradient, example_loss, EmbeddingModel, EmbeddingSpace};
use cocoon::linalg::{cosine, dot, Matrix};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rows: usize, cols: usize, sd: f64, rng: &mut impl Rng) -> Matrix {
    let normal = Normal::new(0.0, sd).unwrap();
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| normal.sample(rng)).collect())
}

/// Model with Gaussian parameters and uniform noise.
pub fn random_model(vocab: usize, dim: usize, rng: &mut impl Rng) -> EmbeddingModel {
    EmbeddingModel {
        user_vectors: gaussian_matrix(1, dim, 0.5, rng),
        item_vectors: gaussian_matrix(vocab, dim, 0.5, rng),
        output: gaussian_matrix(vocab, dim, 0.5, rng),
        noise: vec![1.0 / vocab as f64; vocab],
    }
}

/// `−ln σ(c·o_t) − Σ ln σ(−c·o_j)` evaluated term by term.
pub fn scalar_loss(context: &[f64], target: usize, negatives: &[usize], model: &EmbeddingModel) -> f64 {
    let logit = |row: usize| {
        let mut s = 0.0;
        for (k, c) in context.iter().enumerate() {
            s += c * model.output.get(row, k);
        }
        s
    };
    let mut loss = (1.0 + (-logit(target)).exp()).ln();
    for &n in negatives {
        loss += (1.0 + logit(n).exp()).ln();
    }
    loss
}

/// Relative error between the analytic gradient and central differences
/// for one random case, over every participating parameter.
pub fn gradient_check_case(dim: usize, h: f64, rng: &mut impl Rng) -> f64 {
    let vocab = 12;
    let model = random_model(vocab, dim, rng);
    let context: Vec<f64> = model.item_vectors.row(0).to_vec();
    let target = rng.random_range(0..vocab);
    let negatives: Vec<usize> = (0..5).map(|_| rng.random_range(0..vocab)).collect();
    let grad = example_gradient(&context, target, &negatives, &model);

    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for k in 0..dim {
        let mut plus = context.clone();
        let mut minus = context.clone();
        plus[k] += h;
        minus[k] -= h;
        let fd = (example_loss(&plus, target, &negatives, &model) - example_loss(&minus, target, &negatives, &model))
            / (2.0 * h);
        analytic.push(grad.context[k]);
        numeric.push(fd);
    }
    for (&row, g) in &grad.outputs {
        for (k, &gk) in g.iter().enumerate() {
            let mut m = model.clone();
            let v = m.output.get(row, k);
            m.output.set(row, k, v + h);
            let up = example_loss(&context, target, &negatives, &m);
            m.output.set(row, k, v - h);
            let down = example_loss(&context, target, &negatives, &m);
            analytic.push(gk);
            numeric.push((up - down) / (2.0 * h));
        }
    }
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale = dot(&analytic, &analytic).sqrt() + dot(&numeric, &numeric).sqrt();
    diff / scale.max(1e-12)
}

/// Orthogonal matrix from Gram-Schmidt on Gaussian columns.
pub fn random_rotation(dim: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while basis.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let p = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

pub fn rotate(space: &EmbeddingSpace, q: &[Vec<f64>]) -> EmbeddingSpace {
    space.map_vectors(|v| q.iter().map(|row| dot(row, v)).collect())
}

/// Every distinct ordering of `items`.
pub fn arrangements<T: Clone + Ord>(items: &[T]) -> Vec<Vec<T>> {
    let mut current = items.to_vec();
    current.sort();
    let mut out = vec![current.clone()];
    // Lexicographic next permutation visits each distinct ordering once.
    loop {
        let Some(i) = (1..current.len()).rev().find(|&i| current[i - 1] < current[i]) else {
            return out;
        };
        let j = (i..current.len()).rev().find(|&j| current[j] > current[i - 1]).unwrap();
        current.swap(i - 1, j);
        current[i..].reverse();
        out.push(current.clone());
    }
}

/// Upper-tail p of Pearson's statistic against equal expected counts.
pub fn chi_square_uniform_p(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    ChiSquared::new((counts.len() - 1) as f64).unwrap().sf(stat)
}

/// Genre prefix of a synthetic item id such as `g03_i017`.
pub fn genre_of(item: &str) -> &str {
    item.split('_').next().unwrap()
}

/// Mean cosine over same-genre item pairs minus the mean over cross-genre pairs.
pub fn block_gap(space: &EmbeddingSpace) -> f64 {
    let ids = space.item_ids();
    let (mut within, mut nw, mut cross, mut nc) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..ids.len() {
        for j in i + 1..ids.len() {
            let c = cosine(space.items().row(i), space.items().row(j));
            if genre_of(&ids[i]) == genre_of(&ids[j]) {
                within += c;
                nw += 1;
            } else {
                cross += c;
                nc += 1;
            }
        }
    }
    within / nw as f64 - cross / nc as f64
}

/// Small random corpus and unnormalized space with known categories.
pub struct MetricCase {
    pub corpus: Corpus,
    pub space: EmbeddingSpace,
}

pub fn metric_case(rng: &mut impl Rng) -> MetricCase {
    let dim = rng.random_range(2..=6);
    let n_genres = rng.random_range(2..=4);
    let n_ent = rng.random_range(1..n_genres);
    let mut item_ids = Vec::new();
    let mut assignments = BTreeMap::new();
    let mut flags = BTreeMap::new();
    for g in 0..n_genres {
        let genre = format!("g{g}");
        flags.insert(genre.clone(), g < n_ent);
        for i in 0..rng.random_range(1..=4) {
            let id = format!("g{g}_i{i}");
            assignments.insert(id.clone(), genre.clone());
            item_ids.push(id);
        }
    }
    let n_users = rng.random_range(1..=3);
    let user_ids: Vec<String> = (0..n_users).map(|u| format!("u{u}")).collect();
    let mut events = Vec::new();
    for u in &user_ids {
        for t in 0..rng.random_range(1..=10) {
            events.push(Event {
                user_id: u.clone(),
                timestamp: t,
                item_id: item_ids.choose(rng).unwrap().clone(),
                category: None,
                duration: rng.random_bool(0.5).then(|| rng.random_range(1.0..100.0)),
            });
        }
    }
    let mut corpus = Corpus::from_events(events);
    corpus.set_category_map(CategoryMap::new(assignments, flags).unwrap());
    let items = gaussian_matrix(item_ids.len(), dim, 1.0, rng);
    let users = gaussian_matrix(n_users, dim, 1.0, rng);
    let space = EmbeddingSpace::new(item_ids, items, user_ids, users).unwrap();
    MetricCase { corpus, space }
}

/// Runs the `cocoon` binary with `args` and returns stdout, panicking with
/// stderr on failure.
pub fn cocoon(args: &[&str]) -> String {
    let output = std::process::Command::new(env!("CARGO_BIN_EXE_cocoon"))
        .args(args)
        .env_remove("COCOON_SEED")
        .output()
        .expect("cocoon binary runs");
    assert!(
        output.status.success(),
        "cocoon {args:?} failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8(output.stdout).unwrap()
}

/// Every stage in order against `out`, with `flags` applied to each.
pub fn run_pipeline(out: &std::path::Path, flags: &[&str]) {
    let out = out.to_str().unwrap();
    for stage in ["synth", "ingest", "train", "metrics", "null", "test", "regress", "report"] {
        let mut args = vec![stage, "--out", out];
        args.extend_from_slice(flags);
        cocoon(&args);
    }
}
