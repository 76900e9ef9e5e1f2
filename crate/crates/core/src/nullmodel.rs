//! Constrained-shuffle null model and the paired cocoon test.
//!
//! Each user's sequence is permuted so that no two adjacent items are
//! equal, the embedding is retrained on the shuffled corpus, and each
//! user's radius of gyration in that space becomes one draw of their
//! expected radius.

use std::collections::HashMap;
use std::hash::Hash;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::embedding::{normalize_space, train, EmbeddingSpace, TrainingConfig};
use crate::error::{Error, Result};
use crate::geometry::{user_radius, MetricOptions};
use crate::stats::{describe, paired_t_test};

/// Shuffle attempts before switching to the constructive fallback.
pub const MAX_REJECTIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShuffleStatus {
    /// Drawn uniformly over all valid arrangements.
    Uniform,
    /// Valid, but built greedily after repeated rejections; not uniform.
    Fallback,
    /// No arrangement without adjacent duplicates exists; input returned.
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shuffled<T> {
    pub items: Vec<T>,
    pub status: ShuffleStatus,
}

/// Whether some arrangement of `items` has no two equal neighbors: the most
/// frequent value may occupy at most `⌈L/2⌉` positions.
pub fn is_feasible<T: Eq + Hash>(items: &[T]) -> bool {
    let mut counts: HashMap<&T, usize> = HashMap::new();
    for it in items {
        *counts.entry(it).or_default() += 1;
    }
    let max = counts.values().copied().max().unwrap_or(0);
    max <= items.len().div_ceil(2)
}

pub fn has_adjacent_duplicates<T: PartialEq>(items: &[T]) -> bool {
    items.windows(2).any(|w| w[0] == w[1])
}

/// Permutes `items` so that no two adjacent entries are equal.
pub fn constrained_shuffle<T, R>(items: &[T], rng: &mut R) -> Shuffled<T>
where
    T: Clone + Eq + Hash,
    R: Rng + ?Sized,
{
    if !is_feasible(items) {
        return Shuffled { items: items.to_vec(), status: ShuffleStatus::Infeasible };
    }
    let mut out = items.to_vec();
    for _ in 0..MAX_REJECTIONS {
        out.shuffle(rng);
        if !has_adjacent_duplicates(&out) {
            return Shuffled { items: out, status: ShuffleStatus::Uniform };
        }
    }
    Shuffled { items: interleave(items, rng), status: ShuffleStatus::Fallback }
}

/// Builds a valid arrangement one position at a time, choosing among the
/// values that keep the remainder arrangeable, weighted by multiplicity.
fn interleave<T, R>(items: &[T], rng: &mut R) -> Vec<T>
where
    T: Clone + Eq + Hash,
    R: Rng + ?Sized,
{
    let mut values: Vec<&T> = Vec::new();
    let mut index: HashMap<&T, usize> = HashMap::new();
    let mut counts: Vec<usize> = Vec::new();
    for it in items {
        let id = *index.entry(it).or_insert_with(|| {
            values.push(it);
            counts.push(0);
            values.len() - 1
        });
        counts[id] += 1;
    }

    let mut out = Vec::with_capacity(items.len());
    let mut prev: Option<usize> = None;
    let mut remaining = items.len();
    let mut candidates: Vec<(usize, usize)> = Vec::new();
    while remaining > 0 {
        // Two largest counts, to evaluate the remainder after each choice.
        let (mut top, mut second) = ((usize::MAX, 0), 0);
        for (v, &c) in counts.iter().enumerate() {
            if top.0 == usize::MAX || c > top.1 {
                second = if top.0 == usize::MAX { 0 } else { top.1 };
                top = (v, c);
            } else if c > second {
                second = c;
            }
        }
        let after = remaining - 1;
        let limit = after.div_ceil(2);
        candidates.clear();
        for (v, &c) in counts.iter().enumerate() {
            if c == 0 || Some(v) == prev {
                continue;
            }
            let left = c - 1;
            let other_max = if v == top.0 { second } else { top.1 };
            // The remainder must start with something other than `v`: when
            // `v` would need every other slot starting at the first, it fails.
            let ok = left.max(other_max) <= limit && !(after % 2 == 1 && left == limit);
            if ok {
                candidates.push((v, c));
            }
        }
        debug_assert!(!candidates.is_empty(), "feasible multiset must admit a choice");
        let total: usize = candidates.iter().map(|&(_, c)| c).sum();
        let mut pick = rng.random_range(0..total);
        let chosen = candidates
            .iter()
            .find(|&&(_, c)| {
                if pick < c {
                    true
                } else {
                    pick -= c;
                    false
                }
            })
            .map(|&(v, _)| v)
            .expect("pick lies within total");
        counts[chosen] -= 1;
        remaining -= 1;
        prev = Some(chosen);
        out.push(values[chosen].clone());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullConfig {
    /// Number of shuffle-and-retrain repetitions.
    pub reps: usize,
    pub seed: u64,
    pub metrics: MetricOptions,
}

impl Default for NullConfig {
    fn default() -> Self {
        Self { reps: 10, seed: 1, metrics: MetricOptions::default() }
    }
}

#[derive(Debug, Clone)]
pub struct NullEnsemble {
    pub user_ids: Vec<String>,
    /// Normalized space of each repetition.
    pub spaces: Vec<EmbeddingSpace>,
    /// `radii[r][u]`: radius of user `u` in repetition `r` (`None` when infeasible).
    pub radii: Vec<Vec<Option<f64>>>,
    /// Mean over repetitions; `None` for infeasible users.
    pub expected: Vec<Option<f64>>,
    pub infeasible: Vec<bool>,
    /// Shuffles that needed the non-uniform fallback, summed over repetitions.
    pub fallback_shuffles: usize,
}

impl NullEnsemble {
    pub fn reps(&self) -> usize {
        self.spaces.len()
    }

    pub fn infeasible_count(&self) -> usize {
        self.infeasible.iter().filter(|&&x| x).count()
    }

    /// Mean over feasible users of SD/mean of their per-repetition radius.
    pub fn mean_coefficient_of_variation(&self) -> Option<f64> {
        if self.reps() < 2 {
            return None;
        }
        let cvs: Vec<f64> = (0..self.user_ids.len())
            .filter(|&u| !self.infeasible[u])
            .filter_map(|u| {
                let draws: Vec<f64> = self.radii.iter().filter_map(|r| r[u]).collect();
                let d = describe(&draws).ok()?;
                Some(d.sd? / d.mean)
            })
            .collect();
        (!cvs.is_empty()).then(|| cvs.iter().sum::<f64>() / cvs.len() as f64)
    }

    /// `user_id,expected_r_g,infeasible`
    pub fn write_expected_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["user_id", "expected_r_g", "infeasible"])?;
        for (u, id) in self.user_ids.iter().enumerate() {
            out.write_record([
                id.clone(),
                self.expected[u].map(|v| format!("{v:.12}")).unwrap_or_default(),
                self.infeasible[u].to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Shuffles every user `null.reps` times, retrains with `config` and
/// records each user's radius in every shuffled space.
pub fn build_null_ensemble(corpus: &Corpus, config: &TrainingConfig, null: &NullConfig) -> Result<NullEnsemble> {
    if null.reps < 1 {
        return Err(Error::InvalidArgument("null ensemble needs at least one repetition".into()));
    }
    let mut ensemble = NullEnsemble {
        user_ids: corpus.users.iter().map(|u| u.user_id.clone()).collect(),
        spaces: Vec::with_capacity(null.reps),
        radii: Vec::with_capacity(null.reps),
        expected: Vec::new(),
        infeasible: corpus.users.iter().map(|u| !is_feasible(&u.items)).collect(),
        fallback_shuffles: 0,
    };
    ensemble.extend(corpus, config, null)?;
    Ok(ensemble)
}

impl NullEnsemble {
    /// Runs the repetitions missing between `self.reps()` and `null.reps`.
    /// Repetition `r` always draws from stream `r`, so an extended ensemble
    /// equals one built at the larger size directly.
    pub fn extend(&mut self, corpus: &Corpus, config: &TrainingConfig, null: &NullConfig) -> Result<()> {
        let ids_match = corpus.users.len() == self.user_ids.len()
            && corpus.users.iter().zip(&self.user_ids).all(|(u, id)| &u.user_id == id);
        if !ids_match {
            return Err(Error::InvalidArgument("corpus users differ from the ensemble's".into()));
        }
        for rep in self.reps()..null.reps {
            let wrap = |e: Error| Error::Repetition { repetition: rep, source: Box::new(e) };
            let (shuffled, fallbacks) = shuffle_corpus(corpus, null.seed, rep as u64);
            let space = train(&shuffled, config).and_then(|s| normalize_space(&s)).map_err(wrap)?;
            let rep_radii = shuffled
                .users
                .iter()
                .zip(&self.infeasible)
                .map(|(u, &skip)| {
                    if skip {
                        Ok(None)
                    } else {
                        user_radius(&space, u, null.metrics.distance).map(Some)
                    }
                })
                .collect::<Result<Vec<_>>>()
                .map_err(wrap)?;
            self.fallback_shuffles += fallbacks;
            self.radii.push(rep_radii);
            self.spaces.push(space);
        }
        let reps = self.reps() as f64;
        self.expected = (0..self.user_ids.len())
            .map(|u| (!self.infeasible[u]).then(|| self.radii.iter().map(|r| r[u].unwrap()).sum::<f64>() / reps))
            .collect();
        Ok(())
    }
}

/// Shuffled copy of the corpus for one repetition. Durations travel with
/// their events; timestamps keep their positions.
pub fn shuffle_corpus(corpus: &Corpus, seed: u64, repetition: u64) -> (Corpus, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(repetition);
    let mut out = corpus.clone();
    let mut fallbacks = 0;
    for user in &mut out.users {
        let shuffled = constrained_shuffle(&user.items, &mut rng);
        if shuffled.status == ShuffleStatus::Fallback {
            fallbacks += 1;
        }
        // Each item's durations are handed out in their original order.
        let mut pools: HashMap<&str, Vec<Option<f64>>> = HashMap::new();
        for (item, d) in user.items.iter().zip(&user.durations).rev() {
            pools.entry(item).or_default().push(*d);
        }
        let durations: Vec<Option<f64>> = shuffled
            .items
            .iter()
            .map(|it| pools.get_mut(it.as_str()).and_then(Vec::pop).flatten())
            .collect();
        user.items = shuffled.items;
        user.durations = durations;
    }
    (out, fallbacks)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CocoonTestResult {
    pub t: f64,
    pub df: usize,
    pub p: f64,
    /// Mean of observed − expected.
    pub mean_diff: f64,
    pub n: usize,
}

/// Paired two-sided t test of observed against expected radii.
pub fn paired_cocoon_test(observed: &[f64], expected: &[f64]) -> Result<CocoonTestResult> {
    let r = paired_t_test(observed, expected)?;
    let n = observed.len();
    let mean_diff = observed.iter().zip(expected).map(|(o, e)| o - e).sum::<f64>() / n as f64;
    Ok(CocoonTestResult { t: r.t, df: r.df, p: r.p, mean_diff, n })
}

/// The JSON report written by the `test` stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoonReport {
    pub n: usize,
    #[serde(rename = "R")]
    pub reps: usize,
    pub t: f64,
    pub df: usize,
    pub p: f64,
    pub mean_observed: f64,
    pub mean_expected: f64,
    pub infeasible_count: usize,
}

/// Aligns observed radii with the ensemble by user id, drops infeasible
/// users, and runs the paired test.
pub fn cocoon_report(
    observed: &HashMap<String, f64>,
    user_ids: &[String],
    expected: &[Option<f64>],
    reps: usize,
) -> Result<(CocoonReport, Vec<f64>, Vec<f64>)> {
    let mut obs = Vec::new();
    let mut exp = Vec::new();
    let mut infeasible_count = 0;
    for (id, e) in user_ids.iter().zip(expected) {
        match e {
            Some(e) => {
                let o = observed
                    .get(id)
                    .ok_or_else(|| Error::UnknownId(format!("no observed radius for user {id}")))?;
                obs.push(*o);
                exp.push(*e);
            }
            None => infeasible_count += 1,
        }
    }
    let test = paired_cocoon_test(&obs, &exp)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let report = CocoonReport {
        n: test.n,
        reps,
        t: test.t,
        df: test.df,
        p: test.p,
        mean_observed: mean(&obs),
        mean_expected: mean(&exp),
        infeasible_count,
    };
    Ok((report, obs, exp))
}

/// `bin_lo,bin_hi,observed_count,expected_count` over a shared range.
pub fn write_radius_histogram<W: Write>(writer: W, observed: &[f64], expected: &[f64], bins: usize) -> Result<()> {
    let bins = bins.max(1);
    let all = observed.iter().chain(expected);
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() { (lo, if hi > lo { hi } else { lo + 1.0 }) } else { (0.0, 1.0) };
    let width = (hi - lo) / bins as f64;
    let bin_of = |v: f64| (((v - lo) / width) as usize).min(bins - 1);
    let mut counts = vec![(0usize, 0usize); bins];
    observed.iter().for_each(|&v| counts[bin_of(v)].0 += 1);
    expected.iter().for_each(|&v| counts[bin_of(v)].1 += 1);
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["bin_lo", "bin_hi", "observed_count", "expected_count"])?;
    for (b, (o, e)) in counts.into_iter().enumerate() {
        out.write_record([
            format!("{:.10}", lo + width * b as f64),
            format!("{:.10}", lo + width * (b + 1) as f64),
            o.to_string(),
            e.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn single_element() {
        let s = constrained_shuffle(&["A"], &mut rng(1));
        assert_eq!(s.items, ["A"]);
        assert_eq!(s.status, ShuffleStatus::Uniform);
    }

    #[test]
    fn unique_arrangement() {
        for seed in 0..20 {
            let s = constrained_shuffle(&["A", "A", "B"], &mut rng(seed));
            assert_eq!(s.items, ["A", "B", "A"]);
        }
    }

    #[test]
    fn infeasible_returns_input() {
        let s = constrained_shuffle(&["A", "A", "A", "B"], &mut rng(3));
        assert_eq!(s.status, ShuffleStatus::Infeasible);
        assert_eq!(s.items, ["A", "A", "A", "B"]);
        assert!(!is_feasible(&[1, 1]));
        assert!(is_feasible(&[1, 1, 2, 2]));
        assert!(is_feasible::<u8>(&[]));
    }

    #[test]
    fn fallback_builds_valid_arrangements() {
        // 5 of 9 positions forced: rejection almost never hits one.
        let items = [0, 0, 0, 0, 0, 1, 2, 3, 4];
        for seed in 0..200 {
            let out = interleave(&items, &mut rng(seed));
            assert!(!has_adjacent_duplicates(&out), "{out:?}");
            let mut sorted = out.clone();
            sorted.sort();
            assert_eq!(sorted, items);
        }
        let long: Vec<u32> = (0..60).map(|i| if i % 2 == 0 { 7 } else { i % 5 }).collect();
        for seed in 0..50 {
            let out = interleave(&long, &mut rng(seed));
            assert!(!has_adjacent_duplicates(&out));
            assert_eq!(out.len(), long.len());
        }
    }

    #[test]
    fn cocoon_test_cases() {
        let r = paired_cocoon_test(&[0.0, 0.0, 2.0], &[1.0, 2.0, 2.0]).unwrap();
        assert!((r.t + 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(r.df, 2);
        assert_eq!(r.n, 3);
        assert!((r.mean_diff + 1.0).abs() < 1e-15);
        let r = paired_cocoon_test(&[1.0, 3.0], &[2.0, 2.0]).unwrap();
        assert_eq!((r.t, r.p), (0.0, 1.0));
    }

    #[test]
    fn report_excludes_infeasible() {
        let observed: HashMap<String, f64> =
            [("a", 1.0), ("b", 2.0), ("c", 0.5), ("d", 9.0)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
        let ids: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let (report, obs, exp) =
            cocoon_report(&observed, &ids, &[Some(2.0), Some(2.5), Some(1.5), None], 4).unwrap();
        assert_eq!(report.n, 3);
        assert_eq!(report.infeasible_count, 1);
        assert_eq!(obs, [1.0, 2.0, 0.5]);
        assert_eq!(exp, [2.0, 2.5, 1.5]);
        assert!(report.t < 0.0);
        let json = serde_json::to_value(&report).unwrap();
        for key in ["n", "R", "t", "df", "p", "mean_observed", "mean_expected", "infeasible_count"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn histogram_counts_everything() {
        let mut buf = Vec::new();
        write_radius_histogram(&mut buf, &[0.1, 0.2, 0.9], &[0.5, 1.0], 4).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
        assert_eq!(rows.len(), 4);
        let obs: usize = rows.iter().map(|r| r[2].parse::<usize>().unwrap()).sum();
        let exp: usize = rows.iter().map(|r| r[3].parse::<usize>().unwrap()).sum();
        assert_eq!((obs, exp), (3, 2));
    }

    #[test]
    fn shuffled_corpus_keeps_durations_with_items() {
        use crate::corpus::Event;
        let events = (0..8).map(|t| Event {
            user_id: "u".into(),
            timestamp: t,
            item_id: format!("i{}", t % 4),
            category: None,
            duration: Some((t % 4) as f64 * 10.0),
        });
        let c = Corpus::from_events(events);
        let (s, _) = shuffle_corpus(&c, 5, 0);
        let u = &s.users[0];
        assert!(!has_adjacent_duplicates(&u.items));
        for (item, d) in u.items.iter().zip(&u.durations) {
            let k: f64 = item[1..].parse().unwrap();
            assert_eq!(*d, Some(k * 10.0));
        }
        let (again, _) = shuffle_corpus(&c, 5, 0);
        assert_eq!(again, s);
        let (other, _) = shuffle_corpus(&c, 5, 1);
        assert_ne!(other.users[0].items, s.users[0].items);
    }

    #[test]
    fn extended_ensemble_matches_direct_build() {
        use crate::corpus::Event;
        let events = (0..60).map(|t| Event {
            user_id: format!("u{}", t % 3),
            timestamp: t,
            item_id: format!("i{}", (t * 7) % 11),
            category: None,
            duration: None,
        });
        let c = Corpus::from_events(events);
        let config = TrainingConfig { dim: 4, epochs: 2, ..TrainingConfig::default() };
        let null = |reps| NullConfig { reps, ..NullConfig::default() };
        let mut grown = build_null_ensemble(&c, &config, &null(1)).unwrap();
        grown.extend(&c, &config, &null(3)).unwrap();
        let direct = build_null_ensemble(&c, &config, &null(3)).unwrap();
        assert_eq!(grown.radii, direct.radii);
        assert_eq!(grown.expected, direct.expected);
    }

    proptest! {
        #[test]
        fn shuffle_preserves_multiset(items in prop::collection::vec(0u8..5, 1..40), seed in any::<u64>()) {
            let s = constrained_shuffle(&items, &mut rng(seed));
            let mut a = items.clone();
            let mut b = s.items.clone();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
            if s.status == ShuffleStatus::Infeasible {
                prop_assert!(!is_feasible(&items));
                prop_assert_eq!(&s.items, &items);
            } else {
                prop_assert!(!has_adjacent_duplicates(&s.items));
            }
        }
    }
}
