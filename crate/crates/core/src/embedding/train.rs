use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;

use super::model::sgd_step;
use super::{init_model, EmbeddingModel, EmbeddingSpace, TrainingConfig};
use crate::corpus::{build_vocabulary, Corpus, Vocabulary};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Result of a training run with its diagnostics.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub vocabulary: Vocabulary,
    pub user_ids: Vec<String>,
    pub model: EmbeddingModel,
    /// Mean per-example loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainedModel {
    pub fn space(&self) -> EmbeddingSpace {
        EmbeddingSpace::new(
            self.vocabulary.ids().to_vec(),
            self.model.item_vectors.clone(),
            self.user_ids.clone(),
            self.model.user_vectors.clone(),
        )
        .expect("vocabulary and user ids are unique")
    }
}

/// Trains the corpus and returns the user/item space.
pub fn train(corpus: &Corpus, config: &TrainingConfig) -> Result<EmbeddingSpace> {
    train_model(corpus, config).map(|t| t.space())
}

/// Matrix rows shared between worker threads without locking.
///
/// Concurrent workers may read and write the same row; lost or torn
/// updates are accepted, as in Hogwild SGD. With a single worker there
/// is no concurrent access.
struct SharedRows {
    ptr: *mut f64,
    rows: usize,
    cols: usize,
}

unsafe impl Send for SharedRows {}
unsafe impl Sync for SharedRows {}

impl SharedRows {
    fn new(m: &mut Matrix) -> Self {
        Self { rows: m.rows(), cols: m.cols(), ptr: m.as_mut_slice().as_mut_ptr() }
    }

    /// # Safety
    /// The backing matrix must outlive the returned slice, and the caller
    /// must not hold another slice of the same row on this thread.
    #[allow(clippy::mut_from_ref)]
    #[inline]
    unsafe fn row(&self, r: usize) -> &mut [f64] {
        assert!(r < self.rows);
        std::slice::from_raw_parts_mut(self.ptr.add(r * self.cols), self.cols)
    }
}

struct Shared<'a> {
    users: SharedRows,
    items: SharedRows,
    output: SharedRows,
    noise: &'a WeightedAliasIndex<f64>,
    config: &'a TrainingConfig,
    sequences: &'a [Vec<usize>],
    processed: AtomicU64,
    total: u64,
    abort: AtomicBool,
}

impl Shared<'_> {
    fn learning_rate(&self) -> f64 {
        let done = self.processed.load(Ordering::Relaxed) as f64;
        let progress = (done / self.total as f64).min(1.0);
        self.config.lr_start - (self.config.lr_start - self.config.lr_end) * progress
    }
}

#[derive(Default, Clone, Copy)]
struct EpochLoss {
    sum: f64,
    examples: u64,
}

pub fn train_model(corpus: &Corpus, config: &TrainingConfig) -> Result<TrainedModel> {
    config.validate()?;
    let vocabulary = build_vocabulary(corpus, config.min_count)?;
    if vocabulary.len() < 2 {
        return Err(Error::InvalidArgument(
            "negative sampling needs at least two vocabulary items".into(),
        ));
    }
    let sequences: Vec<Vec<usize>> = corpus
        .users
        .iter()
        .map(|u| {
            let seq: Vec<usize> = u.items.iter().filter_map(|i| vocabulary.index_of(i)).collect();
            if seq.is_empty() {
                Err(Error::InvalidArgument(format!(
                    "user `{}` has no items with frequency >= {}",
                    u.user_id, config.min_count
                )))
            } else {
                Ok(seq)
            }
        })
        .collect::<Result<_>>()?;
    let user_ids = corpus.users.iter().map(|u| u.user_id.clone()).collect();

    let mut model = init_model(&vocabulary, sequences.len(), config);
    let noise = WeightedAliasIndex::new(model.noise.clone())
        .map_err(|e| Error::InvalidArgument(format!("noise distribution: {e}")))?;
    let positions: u64 = sequences.iter().map(|s| s.len() as u64).sum();

    let shared = Shared {
        users: SharedRows::new(&mut model.user_vectors),
        items: SharedRows::new(&mut model.item_vectors),
        output: SharedRows::new(&mut model.output),
        noise: &noise,
        config,
        sequences: &sequences,
        processed: AtomicU64::new(0),
        total: positions * config.epochs as u64,
        abort: AtomicBool::new(false),
    };

    let shards = shard_users(&sequences, config.workers);
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    let per_worker: Vec<Vec<EpochLoss>> = std::thread::scope(|scope| {
        let handles: Vec<_> = shards
            .iter()
            .enumerate()
            .map(|(w, shard)| {
                let shared = &shared;
                let failure = &failure;
                scope.spawn(move || match run_worker(shared, shard, w) {
                    Ok(losses) => losses,
                    Err(e) => {
                        shared.abort.store(true, Ordering::Relaxed);
                        failure.lock().unwrap().get_or_insert(e);
                        Vec::new()
                    }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("training worker panicked")).collect()
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    if !model.all_finite() {
        return Err(Error::NonFinite { epoch: config.epochs, lr: config.lr_end });
    }

    let epoch_losses = (0..config.epochs)
        .map(|e| {
            let (sum, n) = per_worker
                .iter()
                .filter_map(|l| l.get(e))
                .fold((0.0, 0u64), |(s, n), l| (s + l.sum, n + l.examples));
            sum / n.max(1) as f64
        })
        .collect();

    Ok(TrainedModel { vocabulary, user_ids, model, epoch_losses })
}

/// Contiguous user ranges with roughly equal event counts.
fn shard_users(sequences: &[Vec<usize>], workers: usize) -> Vec<std::ops::Range<usize>> {
    let workers = workers.min(sequences.len()).max(1);
    let total: usize = sequences.iter().map(Vec::len).sum();
    let mut shards = Vec::with_capacity(workers);
    let mut start = 0;
    let mut acc = 0;
    for (u, seq) in sequences.iter().enumerate() {
        acc += seq.len();
        if shards.len() + 1 == workers {
            break;
        }
        let users_left = sequences.len() - (u + 1);
        let shards_left = workers - shards.len() - 1;
        if acc >= total * (shards.len() + 1) / workers || users_left == shards_left {
            shards.push(start..u + 1);
            start = u + 1;
        }
    }
    shards.push(start..sequences.len());
    shards
}

fn run_worker(shared: &Shared<'_>, shard: &std::ops::Range<usize>, worker: usize) -> Result<Vec<EpochLoss>> {
    let config = shared.config;
    let dim = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1 + worker as u64);
    let mut negatives = vec![0usize; config.negative];
    let mut work = vec![0.0; dim];
    let mut losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut epoch_loss = EpochLoss::default();
        for u in shard.clone() {
            if shared.abort.load(Ordering::Relaxed) {
                return Ok(losses);
            }
            let seq = &shared.sequences[u];
            for pos in 0..seq.len() {
                let lr = shared.learning_rate();
                let target = seq[pos];

                // The user vector predicts the item.
                draw_negatives(&mut rng, shared.noise, target, &mut negatives);
                // SAFETY: user, item and output rows live in three distinct
                // matrices that outlive the scope; rows of one matrix are
                // never borrowed twice on this thread.
                unsafe {
                    let ctx = shared.users.row(u);
                    epoch_loss.sum += sgd_step(ctx, |i| shared.output.row(i), target, &negatives, lr, &mut work);
                }
                epoch_loss.examples += 1;

                // The item predicts its neighbors within a reduced window.
                let reach = config.window - rng.random_range(0..config.window);
                let lo = pos.saturating_sub(reach);
                let hi = (pos + reach).min(seq.len() - 1);
                for (j, &neighbor) in seq.iter().enumerate().take(hi + 1).skip(lo) {
                    if j == pos {
                        continue;
                    }
                    draw_negatives(&mut rng, shared.noise, neighbor, &mut negatives);
                    // SAFETY: as above.
                    unsafe {
                        let ctx = shared.items.row(target);
                        epoch_loss.sum +=
                            sgd_step(ctx, |i| shared.output.row(i), neighbor, &negatives, lr, &mut work);
                    }
                    epoch_loss.examples += 1;
                }
                shared.processed.fetch_add(1, Ordering::Relaxed);
            }
            // SAFETY: read-only check of a row this worker owns.
            let user_row = unsafe { shared.users.row(u) };
            if !user_row.iter().all(|v| v.is_finite()) || !epoch_loss.sum.is_finite() {
                return Err(Error::NonFinite { epoch: epoch + 1, lr: shared.learning_rate() });
            }
        }
        losses.push(epoch_loss);
    }
    Ok(losses)
}

#[inline]
fn draw_negatives(rng: &mut ChaCha8Rng, noise: &WeightedAliasIndex<f64>, target: usize, out: &mut [usize]) {
    for slot in out.iter_mut() {
        *slot = loop {
            let candidate = noise.sample(rng);
            if candidate != target {
                break candidate;
            }
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Event;
    use crate::embedding::default_config;

    fn toy_corpus() -> Corpus {
        let mut events = Vec::new();
        for u in 0..6 {
            for t in 0..30 {
                let block = if u < 3 { 0 } else { 1 };
                events.push(Event {
                    user_id: format!("u{u}"),
                    timestamp: t,
                    item_id: format!("b{block}_{}", (t * 7 + u) % 5),
                    category: None,
                    duration: None,
                });
            }
        }
        Corpus::from_events(events)
    }

    fn small_config() -> TrainingConfig {
        TrainingConfig { dim: 8, epochs: 12, ..default_config() }
    }

    #[test]
    fn shapes_and_finiteness() {
        let t = train_model(&toy_corpus(), &small_config()).unwrap();
        let space = t.space();
        assert_eq!(space.users().rows(), 6);
        assert_eq!(space.items().rows(), 10);
        assert_eq!(space.dim(), 8);
        assert!(t.model.all_finite());
        assert_eq!(t.epoch_losses.len(), 12);
    }

    #[test]
    fn single_worker_is_bit_deterministic() {
        let a = train(&toy_corpus(), &small_config()).unwrap();
        let b = train(&toy_corpus(), &small_config()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn loss_decreases() {
        let t = train_model(&toy_corpus(), &small_config()).unwrap();
        assert!(t.epoch_losses[9] < t.epoch_losses[0], "{:?}", t.epoch_losses);
    }

    #[test]
    fn multi_worker_runs() {
        let cfg = TrainingConfig { workers: 3, ..small_config() };
        let t = train_model(&toy_corpus(), &cfg).unwrap();
        assert!(t.model.all_finite());
        assert_eq!(t.epoch_losses.len(), 12);
    }

    #[test]
    fn rejects_zero_epochs() {
        let cfg = TrainingConfig { epochs: 0, ..small_config() };
        assert!(matches!(train(&toy_corpus(), &cfg), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn huge_learning_rate_is_caught() {
        let cfg = TrainingConfig { lr_start: 1e300, lr_end: 1e300, ..small_config() };
        assert!(matches!(train(&toy_corpus(), &cfg), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn shards_cover_users() {
        let seqs: Vec<Vec<usize>> = (0..10).map(|i| vec![0; i + 1]).collect();
        for w in 1..=12 {
            let shards = shard_users(&seqs, w);
            assert_eq!(shards.len(), w.min(10));
            assert_eq!(shards.first().unwrap().start, 0);
            assert_eq!(shards.last().unwrap().end, 10);
            assert!(shards.windows(2).all(|p| p[0].end == p[1].start));
        }
    }
}
