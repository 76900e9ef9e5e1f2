//! Synthetic corpora with planted genre stickiness and class covariates.
//!
//! Users belong to groups. Each user draws a home genre and starts there.
//! Under the default Markov process every later event stays in the genre
//! of the previous event with the group's stickiness `s`; otherwise the
//! user returns home with probability `home_bias` when away, or moves to
//! another genre of their repertoire uniformly. Items are uniform within
//! the chosen genre and never repeat the previous item.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{CategoryMap, Corpus, Event};
use crate::error::{Error, Result};

/// Covariate holding the noisy class level.
pub const CLASS_PROXY: &str = "class_proxy";

/// How the genre of each event is chosen.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum GenreProcess {
    /// Stay in the previous event's genre with probability `s`.
    #[default]
    Markov,
    /// Draw every event independently: home genre with probability `s`.
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserGroup {
    pub label: String,
    pub count: usize,
    pub stickiness: f64,
    /// Under [`GenreProcess::Markov`], probability that a genre change
    /// returns to the home genre instead of a uniform other genre.
    pub home_bias: f64,
    /// Mean of the class proxy for the group.
    pub class_level: f64,
    /// Candidate home genres; empty means any genre in the repertoire.
    pub home_genres: Vec<usize>,
    /// Genres the group ever visits; empty means all genres.
    pub repertoire: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub groups: Vec<UserGroup>,
    pub n_genres: usize,
    pub items_per_genre: usize,
    /// Inclusive bounds of the uniform sequence length.
    pub min_length: usize,
    pub max_length: usize,
    pub entertainment_genres: Vec<usize>,
    /// Standard deviation of the Gaussian noise on the class proxy.
    pub class_noise: f64,
    pub process: GenreProcess,
    /// When nonzero, a user staying in the same genre steps to an item at
    /// most this far from the previous one (cyclically) with probability
    /// `s`, instead of drawing uniformly.
    pub item_step: usize,
    pub seed: u64,
}

impl SynthParams {
    /// 500 users on 10 genres of 50 items, lengths 100 to 300. 250 sticky
    /// users (s = 0.9, low class) live in one of the three entertainment
    /// genres and return there after every excursion; 250 omnivores
    /// (s = 0.1, high class) roam all genres.
    pub fn cocoon(seed: u64) -> Self {
        let entertainment = vec![0, 1, 2];
        Self {
            groups: vec![
                UserGroup {
                    label: "sticky".into(),
                    count: 250,
                    stickiness: 0.9,
                    home_bias: 1.0,
                    class_level: 1.0,
                    home_genres: entertainment.clone(),
                    repertoire: Vec::new(),
                },
                UserGroup {
                    label: "omnivore".into(),
                    count: 250,
                    stickiness: 0.1,
                    home_bias: 0.0,
                    class_level: 3.0,
                    home_genres: Vec::new(),
                    repertoire: Vec::new(),
                },
            ],
            n_genres: 10,
            items_per_genre: 50,
            min_length: 100,
            max_length: 300,
            entertainment_genres: entertainment,
            class_noise: 0.5,
            process: GenreProcess::Markov,
            item_step: 0,
            seed,
        }
    }

    /// Two genres; every user stays in a home genre drawn uniformly, so
    /// each block of items is consumed by its own users only.
    pub fn two_block(seed: u64) -> Self {
        Self {
            groups: vec![UserGroup {
                label: "block".into(),
                count: 200,
                stickiness: 1.0,
                home_bias: 0.0,
                class_level: 0.0,
                home_genres: Vec::new(),
                repertoire: Vec::new(),
            }],
            n_genres: 2,
            items_per_genre: 50,
            min_length: 50,
            max_length: 150,
            entertainment_genres: vec![0],
            class_noise: 0.0,
            process: GenreProcess::Markov,
            item_step: 0,
            seed,
        }
    }

    pub fn user_count(&self) -> usize {
        self.groups.iter().map(|g| g.count).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_genres < 2 {
            return bad(format!("need at least two genres, got {}", self.n_genres));
        }
        if self.items_per_genre < 2 {
            return bad("need at least two items per genre to avoid repeats".into());
        }
        if self.min_length < 1 || self.min_length > self.max_length {
            return bad(format!("invalid length range {}..={}", self.min_length, self.max_length));
        }
        if let Some(&g) = self.entertainment_genres.iter().find(|&&g| g >= self.n_genres) {
            return bad(format!("entertainment genre {g} out of range"));
        }
        if (0..self.n_genres).all(|g| self.entertainment_genres.contains(&g)) {
            return bad("at least one genre must be non-entertainment".into());
        }
        if !(self.class_noise >= 0.0 && self.class_noise.is_finite()) {
            return bad(format!("class noise {} must be finite and >= 0", self.class_noise));
        }
        if self.user_count() == 0 {
            return bad("no users requested".into());
        }
        for g in &self.groups {
            if !(0.0..=1.0).contains(&g.stickiness) || !(0.0..=1.0).contains(&g.home_bias) {
                return bad(format!("stickiness or home bias of group `{}` outside [0, 1]", g.label));
            }
            if let Some(&h) = g.home_genres.iter().chain(&g.repertoire).find(|&&h| h >= self.n_genres) {
                return bad(format!("genre {h} of group `{}` out of range", g.label));
            }
            if !g.repertoire.is_empty() && g.home_genres.iter().any(|h| !g.repertoire.contains(h)) {
                return bad(format!("home genres of group `{}` lie outside its repertoire", g.label));
            }
            let mut sorted = g.repertoire.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != g.repertoire.len() {
                return bad(format!("repertoire of group `{}` repeats a genre", g.label));
            }
        }
        Ok(())
    }

    pub fn genre_name(&self, genre: usize) -> String {
        format!("genre_{genre:02}")
    }

    pub fn item_name(&self, genre: usize, item: usize) -> String {
        format!("g{genre:02}_i{item:03}")
    }

    /// Every item with its genre, plus the entertainment flags.
    pub fn category_map(&self) -> Result<CategoryMap> {
        let mut items = BTreeMap::new();
        let mut flags = BTreeMap::new();
        for g in 0..self.n_genres {
            flags.insert(self.genre_name(g), self.entertainment_genres.contains(&g));
            for i in 0..self.items_per_genre {
                items.insert(self.item_name(g, i), self.genre_name(g));
            }
        }
        CategoryMap::new(items, flags)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserTruth {
    pub user_id: String,
    pub stickiness: f64,
    pub home_genre: String,
    pub class: String,
}

/// Planted parameters, aligned with the corpus users.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub users: Vec<UserTruth>,
}

impl GroundTruth {
    /// `user_id,stickiness,home_genre,class`
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["user_id", "stickiness", "home_genre", "class"])?;
        for u in &self.users {
            out.write_record([u.user_id.as_str(), &u.stickiness.to_string(), &u.home_genre, &u.class])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Draws a corpus with category map and class-proxy covariate attached.
pub fn generate_corpus(params: &SynthParams) -> Result<(Corpus, GroundTruth)> {
    params.validate()?;
    let noise = Normal::new(0.0, params.class_noise).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let width = params.user_count().to_string().len().max(4);
    let mut events = Vec::new();
    let mut truth = Vec::with_capacity(params.user_count());
    let mut covariates = BTreeMap::new();
    let mut index = 0u64;
    for group in &params.groups {
        for _ in 0..group.count {
            // One stream per user keeps users independent of generation order.
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(index);
            let user_id = format!("u{index:0width$}");
            let repertoire: Vec<usize> = if group.repertoire.is_empty() {
                (0..params.n_genres).collect()
            } else {
                group.repertoire.clone()
            };
            let homes = if group.home_genres.is_empty() { &repertoire } else { &group.home_genres };
            let home = homes[rng.random_range(0..homes.len())];
            let length = rng.random_range(params.min_length..=params.max_length);
            for (t, (genre, item)) in user_sequence(params, group.stickiness, group.home_bias, &repertoire, home, length, &mut rng)
                .into_iter()
                .enumerate()
            {
                events.push(Event {
                    user_id: user_id.clone(),
                    timestamp: t as i64,
                    item_id: params.item_name(genre, item),
                    category: Some(params.genre_name(genre)),
                    duration: None,
                });
            }
            let proxy = group.class_level + noise.sample(&mut rng);
            covariates.insert(user_id.clone(), BTreeMap::from([(CLASS_PROXY.to_owned(), proxy)]));
            truth.push(UserTruth {
                user_id,
                stickiness: group.stickiness,
                home_genre: params.genre_name(home),
                class: group.label.clone(),
            });
            index += 1;
        }
    }
    let mut corpus = Corpus::from_events(events);
    corpus.set_category_map(params.category_map()?);
    corpus.set_covariates(covariates);
    Ok((corpus, GroundTruth { users: truth }))
}

/// `(genre, item)` pairs for one user.
fn user_sequence(
    params: &SynthParams,
    stickiness: f64,
    home_bias: f64,
    repertoire: &[usize],
    home: usize,
    length: usize,
    rng: &mut impl Rng,
) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::with_capacity(length);
    let mut genre = home;
    for t in 0..length {
        if t > 0 {
            // Uniform over the repertoire without `anchor`.
            let other = |rng: &mut dyn rand::RngCore, anchor: usize| {
                if repertoire.len() < 2 {
                    return anchor;
                }
                let k = rng.random_range(0..repertoire.len() - 1);
                let g = repertoire[k];
                if g == anchor || repertoire[..k].contains(&anchor) {
                    repertoire[k + 1]
                } else {
                    g
                }
            };
            genre = match params.process {
                GenreProcess::Markov if rng.random::<f64>() >= stickiness => {
                    if genre != home && rng.random::<f64>() < home_bias {
                        home
                    } else {
                        other(rng, genre)
                    }
                }
                GenreProcess::Independent => {
                    if rng.random::<f64>() < stickiness {
                        home
                    } else {
                        other(rng, home)
                    }
                }
                _ => genre,
            };
        }
        let n = params.items_per_genre;
        let item = match out.last() {
            Some(&(g, prev)) if g == genre && params.item_step > 0 && rng.random::<f64>() < stickiness => {
                let step = rng.random_range(1..=params.item_step.min(n - 1));
                if rng.random::<bool>() {
                    (prev + step) % n
                } else {
                    (prev + n - step) % n
                }
            }
            Some(&(g, prev)) if g == genre => {
                let i = rng.random_range(0..params.items_per_genre - 1);
                if i >= prev {
                    i + 1
                } else {
                    i
                }
            }
            _ => rng.random_range(0..params.items_per_genre),
        };
        out.push((genre, item));
    }
    out
}

/// `user_id,class_proxy`
pub fn write_covariates<W: Write>(writer: W, corpus: &Corpus) -> Result<()> {
    let names: std::collections::BTreeSet<&str> =
        corpus.users.iter().flat_map(|u| u.covariates.keys().map(String::as_str)).collect();
    let mut out = csv::Writer::from_writer(writer);
    let mut header = vec!["user_id"];
    header.extend(names.iter());
    out.write_record(&header)?;
    for u in &corpus.users {
        let mut rec = vec![u.user_id.clone()];
        rec.extend(names.iter().map(|n| u.covariates.get(*n).map(|v| format!("{v:.12}")).unwrap_or_default()));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}
