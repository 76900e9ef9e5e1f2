//! Per-user cocoon metrics computed from a trained space.
//!
//! All distances default to Euclidean distance between L2-normalized
//! vectors, which is a monotone function of cosine distance.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{CategoryMap, Corpus, UserSequence};
use crate::embedding::{normalize_space, EmbeddingSpace};
use crate::error::{Error, Result};
use crate::linalg::{cosine, dot, squared_distance, symmetric_eigen, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Distance {
    #[default]
    Euclidean,
    /// `1 − cos(a, b)`
    Cosine,
}

impl Distance {
    #[inline]
    pub fn between(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Distance::Euclidean => squared_distance(a, b).sqrt(),
            Distance::Cosine => 1.0 - cosine(a, b),
        }
    }

    #[inline]
    fn squared(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Distance::Euclidean => squared_distance(a, b),
            Distance::Cosine => (1.0 - cosine(a, b)).powi(2),
        }
    }
}

impl std::str::FromStr for Distance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Distance::Euclidean),
            "cosine" => Ok(Distance::Cosine),
            other => Err(Error::InvalidArgument(format!("unknown distance `{other}`"))),
        }
    }
}

impl std::fmt::Display for Distance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Distance::Euclidean => "euclidean",
            Distance::Cosine => "cosine",
        })
    }
}

/// Root-mean-square Euclidean distance of `positions` from `center`.
pub fn radius_of_gyration(positions: &[&[f64]], center: &[f64]) -> Result<f64> {
    radius_of_gyration_with(Distance::Euclidean, positions, center)
}

pub fn radius_of_gyration_with(distance: Distance, positions: &[&[f64]], center: &[f64]) -> Result<f64> {
    if positions.is_empty() {
        return Err(Error::InvalidArgument("radius of gyration needs at least one position".into()));
    }
    if let Some(p) = positions.iter().find(|p| p.len() != center.len()) {
        return Err(Error::InvalidArgument(format!(
            "position has dimension {}, center has {}",
            p.len(),
            center.len()
        )));
    }
    let sum: f64 = positions.iter().map(|p| distance.squared(p, center)).sum();
    Ok((sum / positions.len() as f64).sqrt())
}

/// Mean of the genre's item vectors (not re-normalized).
pub fn genre_centroid(space: &EmbeddingSpace, map: &CategoryMap, genre: &str) -> Result<Vec<f64>> {
    let mut sum = vec![0.0; space.dim()];
    let mut count = 0usize;
    for (i, id) in space.item_ids().iter().enumerate() {
        if map.category_of(id) == Some(genre) {
            crate::linalg::axpy(1.0, space.items().row(i), &mut sum);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InvalidArgument(format!("genre `{genre}` has no items in the space")));
    }
    sum.iter_mut().for_each(|v| *v /= count as f64);
    Ok(sum)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extremes {
    pub min: f64,
    pub max: f64,
}

impl Extremes {
    fn push(slot: &mut Option<Extremes>, d: f64) {
        match slot {
            Some(e) => {
                e.min = e.min.min(d);
                e.max = e.max.max(d);
            }
            None => *slot = Some(Extremes { min: d, max: d }),
        }
    }

    pub fn span(&self) -> f64 {
        self.max - self.min
    }
}

/// Distances from one user to genre centroids and the item-level extremes
/// per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenreDistanceProfile {
    pub centroid_distances: BTreeMap<String, f64>,
    pub entertainment: Option<Extremes>,
    pub non_entertainment: Option<Extremes>,
    pub all: Extremes,
}

/// Which items feed the item-level extremes.
#[derive(Debug, Clone, Copy, Default)]
pub enum ItemScope<'a> {
    /// Every vocabulary item with a known category.
    #[default]
    Vocabulary,
    /// Only items the user consumed.
    Consumed(&'a HashSet<&'a str>),
}

/// Space items grouped by class, with genre centroids precomputed.
#[derive(Debug, Clone)]
pub struct GenreIndex {
    /// (row, is_entertainment) for every item with a known category.
    items: Vec<(usize, bool)>,
    centroids: BTreeMap<String, Vec<f64>>,
}

impl GenreIndex {
    pub fn new(space: &EmbeddingSpace, map: &CategoryMap) -> Result<Self> {
        let mut items = Vec::new();
        let mut sums: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
        for (row, id) in space.item_ids().iter().enumerate() {
            let class = map.classify(id);
            if let Some(category) = class.category() {
                items.push((row, class.is_entertainment()));
                let (sum, n) = sums.entry(category).or_insert_with(|| (vec![0.0; space.dim()], 0));
                crate::linalg::axpy(1.0, space.items().row(row), sum);
                *n += 1;
            }
        }
        if !items.iter().any(|&(_, e)| e) || !items.iter().any(|&(_, e)| !e) {
            return Err(Error::InvalidArgument(
                "need at least one entertainment and one non-entertainment item in the space".into(),
            ));
        }
        let centroids = sums
            .into_iter()
            .map(|(c, (mut sum, n))| {
                sum.iter_mut().for_each(|v| *v /= n as f64);
                (c.to_owned(), sum)
            })
            .collect();
        Ok(Self { items, centroids })
    }

    pub fn profile(
        &self,
        user_vector: &[f64],
        space: &EmbeddingSpace,
        distance: Distance,
        scope: ItemScope<'_>,
    ) -> Result<GenreDistanceProfile> {
        let centroid_distances = self
            .centroids
            .iter()
            .map(|(g, c)| (g.clone(), distance.between(user_vector, c)))
            .collect();
        let (mut ent, mut nonent, mut all) = (None, None, None);
        for &(row, is_ent) in &self.items {
            if let ItemScope::Consumed(set) = scope {
                if !set.contains(space.item_ids()[row].as_str()) {
                    continue;
                }
            }
            let d = distance.between(user_vector, space.items().row(row));
            Extremes::push(if is_ent { &mut ent } else { &mut nonent }, d);
            Extremes::push(&mut all, d);
        }
        let all = all.ok_or_else(|| Error::InvalidArgument("user consumed no categorized items".into()))?;
        Ok(GenreDistanceProfile { centroid_distances, entertainment: ent, non_entertainment: nonent, all })
    }
}

pub fn genre_distance_profile(
    user_vector: &[f64],
    space: &EmbeddingSpace,
    map: &CategoryMap,
    distance: Distance,
    scope: ItemScope<'_>,
) -> Result<GenreDistanceProfile> {
    GenreIndex::new(space, map)?.profile(user_vector, space, distance, scope)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntertainmentDistance {
    /// In `[−1, 0]`; closer to 0 means farther from entertainment.
    pub value: f64,
    /// Set when the all-item span is zero or no entertainment item was in scope.
    pub degenerate: bool,
}

/// `−(D_max^ent − D_min^ent) / (D_max^all − D_min^all)`.
pub fn distance_to_entertainment(profile: &GenreDistanceProfile) -> EntertainmentDistance {
    let span_all = profile.all.span();
    match profile.entertainment {
        Some(ent) if span_all > 0.0 => EntertainmentDistance {
            value: (-(ent.span() / span_all)).clamp(-1.0, 0.0) + 0.0,
            degenerate: false,
        },
        _ => EntertainmentDistance { value: 0.0, degenerate: true },
    }
}

/// Spread of distances to non-entertainment items.
pub fn range_of_cocoon(profile: &GenreDistanceProfile) -> Result<f64> {
    profile
        .non_entertainment
        .map(|e| e.span())
        .ok_or_else(|| Error::InvalidArgument("no non-entertainment items in scope".into()))
}

/// Share of consumption time spent on entertainment. Events with unknown
/// categories are left out of both sums.
pub fn relative_entertainment_preference(seq: &UserSequence, map: &CategoryMap) -> Result<f64> {
    let (mut ent, mut total) = (0.0, 0.0);
    for (i, item) in seq.items.iter().enumerate() {
        let class = map.classify(item);
        if class.is_known() {
            let w = seq.weight(i);
            total += w;
            if class.is_entertainment() {
                ent += w;
            }
        }
    }
    if !(total > 0.0) {
        return Err(Error::Degenerate(format!(
            "user `{}` has zero categorized consumption time",
            seq.user_id
        )));
    }
    Ok(ent / total)
}

/// Number of distinct known categories in the sequence.
pub fn category_count(seq: &UserSequence, map: &CategoryMap) -> usize {
    seq.items
        .iter()
        .filter_map(|i| map.category_of(i))
        .collect::<BTreeSet<_>>()
        .len()
}

/// Equal-frequency quintile ranks 1..=5; ties keep input order.
pub fn quintile_rank(values: &[f64]) -> Result<Vec<u8>> {
    let n = values.len();
    if n < 5 {
        return Err(Error::InvalidArgument(format!("quintile ranks need at least 5 values, got {n}")));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("quintile ranks of NaN are undefined".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0u8; n];
    for (pos, &i) in order.iter().enumerate() {
        ranks[i] = (pos * 5 / n) as u8 + 1;
    }
    Ok(ranks)
}

/// The `k` items most cosine-similar to `item_id`, excluding itself.
pub fn nearest_items(space: &EmbeddingSpace, item_id: &str, k: usize) -> Result<Vec<(String, f64)>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let query = space.item_index(item_id).ok_or_else(|| Error::UnknownId(item_id.to_owned()))?;
    let q = space.items().row(query);
    let mut scored: Vec<(usize, f64)> = (0..space.item_ids().len())
        .filter(|&i| i != query)
        .map(|i| (i, cosine(q, space.items().row(i))))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(i, s)| (space.item_ids()[i].clone(), s))
        .collect())
}

/// PCA projection of the stacked item and user vectors.
#[derive(Debug, Clone)]
pub struct Projection {
    /// Item ids, then user ids prefixed with `user:`.
    pub ids: Vec<String>,
    pub coordinates: Matrix,
    /// `k × dim`, orthonormal rows.
    pub components: Matrix,
    /// Every covariance eigenvalue, descending.
    pub eigenvalues: Vec<f64>,
    pub mean: Vec<f64>,
}

impl Projection {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let k = self.coordinates.cols();
        let mut header = vec!["id".to_owned()];
        header.extend((1..=k).map(|i| format!("pc{i}")));
        out.write_record(&header)?;
        for (id, row) in self.ids.iter().zip(self.coordinates.iter_rows()) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| format!("{v:.10}")));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Projects items and users onto the top `k` principal components.
pub fn project(space: &EmbeddingSpace, k: usize) -> Result<Projection> {
    if !(2..=3).contains(&k) {
        return Err(Error::InvalidArgument(format!("projection dimension must be 2 or 3, got {k}")));
    }
    let rows: Vec<&[f64]> = space.items().iter_rows().chain(space.users().iter_rows()).collect();
    let n = rows.len();
    let dim = space.dim();
    if n < k || dim < k {
        return Err(Error::InvalidArgument(format!("need at least {k} vectors of dimension {k}")));
    }
    let mut mean = vec![0.0; dim];
    for r in &rows {
        crate::linalg::axpy(1.0 / n as f64, r, &mut mean);
    }
    let centered: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().zip(&mean).map(|(a, m)| a - m).collect()).collect();
    let mut cov = Matrix::zeros(dim, dim);
    for r in &centered {
        for i in 0..dim {
            for j in i..dim {
                cov.set(i, j, cov.get(i, j) + r[i] * r[j]);
            }
        }
    }
    let denom = (n.max(2) - 1) as f64;
    for i in 0..dim {
        for j in i..dim {
            let v = cov.get(i, j) / denom;
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    let (eigenvalues, vectors) = symmetric_eigen(&cov);
    let top = eigenvalues[0].max(0.0);
    if !(eigenvalues[k - 1] > 1e-12 * top.max(f64::MIN_POSITIVE)) {
        return Err(Error::Degenerate(format!("centered data has rank below {k}")));
    }
    let mut components = Matrix::zeros(k, dim);
    for c in 0..k {
        for d in 0..dim {
            components.set(c, d, vectors.get(d, c));
        }
    }
    let mut coordinates = Matrix::zeros(n, k);
    for (i, r) in centered.iter().enumerate() {
        for c in 0..k {
            coordinates.set(i, c, dot(r, components.row(c)));
        }
    }
    let ids = space
        .item_ids()
        .iter()
        .cloned()
        .chain(space.user_ids().iter().map(|u| format!("user:{u}")))
        .collect();
    Ok(Projection { ids, coordinates, components, eigenvalues, mean })
}

/// Options shared by observed and null-model metric computation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricOptions {
    pub distance: Distance,
    /// Restrict item-level extremes to items the user consumed.
    pub consumed_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoonMetrics {
    pub user_id: String,
    /// Event count.
    pub length: usize,
    pub radius: f64,
    /// Absent when no non-entertainment item is in scope.
    pub range: Option<f64>,
    pub dist_entertainment: f64,
    pub dist_entertainment_degenerate: bool,
    /// Quintile of `dist_entertainment` within the cohort (needs ≥ 5 users).
    pub ent_rank: Option<u8>,
    pub category_count: usize,
    /// Absent when the user has no categorized consumption.
    pub rel_ent_pref: Option<f64>,
    pub covariates: BTreeMap<String, f64>,
}

/// Radius of gyration of one user's trajectory around their own vector.
/// Events whose items are missing from the space are skipped.
pub fn user_radius(space: &EmbeddingSpace, user: &UserSequence, distance: Distance) -> Result<f64> {
    let center = space
        .user_vector(&user.user_id)
        .ok_or_else(|| Error::UnknownId(user.user_id.clone()))?;
    let positions: Vec<&[f64]> = user.items.iter().filter_map(|i| space.item_vector(i)).collect();
    radius_of_gyration_with(distance, &positions, center)
}

/// Computes every metric for every user in corpus order. The space is
/// L2-normalized first when it is not already.
pub fn compute_metrics(corpus: &Corpus, space: &EmbeddingSpace, options: MetricOptions) -> Result<Vec<CocoonMetrics>> {
    let normalized;
    let space = if space.is_normalized() {
        space
    } else {
        normalized = normalize_space(space)?;
        &normalized
    };
    let map = &corpus.category_map;
    let index = GenreIndex::new(space, map)?;

    let mut metrics = Vec::with_capacity(corpus.users.len());
    for user in &corpus.users {
        let center = space
            .user_vector(&user.user_id)
            .ok_or_else(|| Error::UnknownId(user.user_id.clone()))?;
        let radius = user_radius(space, user, options.distance)?;
        let consumed: HashSet<&str>;
        let scope = if options.consumed_only {
            consumed = user.items.iter().map(String::as_str).collect();
            ItemScope::Consumed(&consumed)
        } else {
            ItemScope::Vocabulary
        };
        let (range, dist) = match index.profile(center, space, options.distance, scope) {
            Ok(profile) => (range_of_cocoon(&profile).ok(), distance_to_entertainment(&profile)),
            Err(_) => (None, EntertainmentDistance { value: 0.0, degenerate: true }),
        };
        metrics.push(CocoonMetrics {
            user_id: user.user_id.clone(),
            length: user.len(),
            radius,
            range,
            dist_entertainment: dist.value,
            dist_entertainment_degenerate: dist.degenerate,
            ent_rank: None,
            category_count: category_count(user, map),
            rel_ent_pref: relative_entertainment_preference(user, map).ok(),
            covariates: user.covariates.clone(),
        });
    }
    if metrics.len() >= 5 {
        let values: Vec<f64> = metrics.iter().map(|m| m.dist_entertainment).collect();
        for (m, r) in metrics.iter_mut().zip(quintile_rank(&values)?) {
            m.ent_rank = Some(r);
        }
    }
    Ok(metrics)
}

/// Writes `user_id,L,r_g,range,dist_ent,ent_rank,category_count,rel_ent_pref,<covariates...>`.
pub fn write_metrics_csv<W: Write>(writer: W, metrics: &[CocoonMetrics]) -> Result<()> {
    let covariates: BTreeSet<&str> =
        metrics.iter().flat_map(|m| m.covariates.keys().map(String::as_str)).collect();
    let mut out = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> =
        vec!["user_id", "L", "r_g", "range", "dist_ent", "ent_rank", "category_count", "rel_ent_pref"];
    header.extend(covariates.iter());
    out.write_record(&header)?;
    let real = |v: f64| format!("{v:.12}");
    for m in metrics {
        let mut rec = vec![
            m.user_id.clone(),
            m.length.to_string(),
            real(m.radius),
            m.range.map(real).unwrap_or_default(),
            real(m.dist_entertainment),
            m.ent_rank.map(|r| r.to_string()).unwrap_or_default(),
            m.category_count.to_string(),
            m.rel_ent_pref.map(real).unwrap_or_default(),
        ];
        rec.extend(covariates.iter().map(|c| m.covariates.get(*c).map(|v| real(*v)).unwrap_or_default()));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}
