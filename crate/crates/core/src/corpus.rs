//! Event-log ingestion, category tables and the item vocabulary.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single consumption record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub user_id: String,
    pub timestamp: i64,
    pub item_id: String,
    #[serde(default)]
    pub category: Option<String>,
    #[serde(default)]
    pub duration: Option<f64>,
}

impl Event {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.user_id.is_empty() {
            return Err("empty user_id".into());
        }
        if self.item_id.is_empty() {
            return Err("empty item_id".into());
        }
        match self.duration {
            Some(d) if !d.is_finite() || d < 0.0 => {
                Err(format!("duration must be a non-negative number, got {d}"))
            }
            _ => Ok(()),
        }
    }
}

/// One user's events in chronological order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSequence {
    pub user_id: String,
    pub items: Vec<String>,
    pub timestamps: Vec<i64>,
    /// Per-event duration; `None` counts as one time unit.
    pub durations: Vec<Option<f64>>,
    pub covariates: BTreeMap<String, f64>,
}

impl UserSequence {
    /// Number of events, `L`.
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Duration of event `i`, defaulting to one unit.
    pub fn weight(&self, i: usize) -> f64 {
        self.durations[i].unwrap_or(1.0)
    }
}

/// How an item resolves against a [`CategoryMap`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ItemClass<'a> {
    Entertainment(&'a str),
    NonEntertainment(&'a str),
    Unknown,
}

impl<'a> ItemClass<'a> {
    pub fn category(&self) -> Option<&'a str> {
        match *self {
            ItemClass::Entertainment(c) | ItemClass::NonEntertainment(c) => Some(c),
            ItemClass::Unknown => None,
        }
    }

    pub fn is_entertainment(&self) -> bool {
        matches!(self, ItemClass::Entertainment(_))
    }

    pub fn is_known(&self) -> bool {
        !matches!(self, ItemClass::Unknown)
    }
}

/// Item → category assignments plus the category → entertainment flag table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryMap {
    items: BTreeMap<String, String>,
    entertainment: BTreeMap<String, bool>,
}

impl CategoryMap {
    /// Every category referenced by `items` must carry a flag, and at least
    /// one flagged category must be non-entertainment.
    pub fn new(
        items: BTreeMap<String, String>,
        entertainment: BTreeMap<String, bool>,
    ) -> Result<Self> {
        for (item, category) in &items {
            if !entertainment.contains_key(category) {
                return Err(Error::CategoryMap(format!(
                    "category `{category}` (item `{item}`) has no entertainment flag"
                )));
            }
        }
        if !entertainment.values().any(|&ent| !ent) {
            return Err(Error::CategoryMap(
                "every category is flagged as entertainment; at least one non-entertainment category is required"
                    .into(),
            ));
        }
        Ok(Self { items, entertainment })
    }

    /// Total lookup: items without a category resolve to [`ItemClass::Unknown`].
    pub fn classify(&self, item_id: &str) -> ItemClass<'_> {
        match self.items.get(item_id) {
            Some(category) => match self.entertainment.get(category) {
                Some(true) => ItemClass::Entertainment(category),
                Some(false) => ItemClass::NonEntertainment(category),
                None => ItemClass::Unknown,
            },
            None => ItemClass::Unknown,
        }
    }

    pub fn category_of(&self, item_id: &str) -> Option<&str> {
        self.classify(item_id).category()
    }

    pub fn is_category_entertainment(&self, category: &str) -> Option<bool> {
        self.entertainment.get(category).copied()
    }

    /// All flagged categories in sorted order.
    pub fn categories(&self) -> impl Iterator<Item = (&str, bool)> {
        self.entertainment.iter().map(|(c, &e)| (c.as_str(), e))
    }

    pub fn items(&self) -> impl Iterator<Item = (&str, &str)> {
        self.items.iter().map(|(i, c)| (i.as_str(), c.as_str()))
    }

    pub fn is_empty(&self) -> bool {
        self.entertainment.is_empty()
    }

    /// Adds item assignments for categories the flag table knows, leaving
    /// existing assignments untouched. Returns how many items were added.
    pub fn absorb_assignments<'a>(
        &mut self,
        assignments: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> usize {
        let mut added = 0;
        for (item, category) in assignments {
            if self.entertainment.contains_key(category) && !self.items.contains_key(item) {
                self.items.insert(item.to_owned(), category.to_owned());
                added += 1;
            }
        }
        added
    }
}

/// Supported event-log encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogFormat {
    Csv,
    Jsonl,
}

impl std::str::FromStr for LogFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(LogFormat::Csv),
            "jsonl" | "ndjson" => Ok(LogFormat::Jsonl),
            other => Err(Error::InvalidArgument(format!("unknown log format `{other}`"))),
        }
    }
}

/// Users with their sequences, plus the category map used for genre metrics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub users: Vec<UserSequence>,
    pub category_map: CategoryMap,
    /// Categories carried on event rows, first occurrence per item.
    pub event_categories: BTreeMap<String, String>,
}

impl Corpus {
    /// Groups events by user and sorts each group by timestamp (stable on ties).
    pub fn from_events(events: impl IntoIterator<Item = Event>) -> Self {
        let mut grouped: BTreeMap<String, Vec<Event>> = BTreeMap::new();
        let mut event_categories = BTreeMap::new();
        for event in events {
            if let Some(category) = &event.category {
                event_categories
                    .entry(event.item_id.clone())
                    .or_insert_with(|| category.clone());
            }
            grouped.entry(event.user_id.clone()).or_default().push(event);
        }
        let users = grouped
            .into_iter()
            .map(|(user_id, mut events)| {
                events.sort_by_key(|e| e.timestamp);
                UserSequence {
                    user_id,
                    timestamps: events.iter().map(|e| e.timestamp).collect(),
                    durations: events.iter().map(|e| e.duration).collect(),
                    items: events.into_iter().map(|e| e.item_id).collect(),
                    covariates: BTreeMap::new(),
                }
            })
            .collect();
        Corpus {
            users,
            category_map: CategoryMap::default(),
            event_categories,
        }
    }

    pub fn event_count(&self) -> usize {
        self.users.iter().map(UserSequence::len).sum()
    }

    /// Installs a category map; event-row categories fill items the map lacks.
    pub fn set_category_map(&mut self, mut map: CategoryMap) {
        map.absorb_assignments(
            self.event_categories
                .iter()
                .map(|(i, c)| (i.as_str(), c.as_str())),
        );
        self.category_map = map;
    }

    /// Attaches covariates by user id. Users missing from the table keep an
    /// empty covariate map.
    pub fn set_covariates(&mut self, mut table: BTreeMap<String, BTreeMap<String, f64>>) {
        for user in &mut self.users {
            if let Some(cov) = table.remove(&user.user_id) {
                user.covariates = cov;
            }
        }
    }

    /// Flattens the corpus back into events (user order, then sequence order).
    pub fn events(&self) -> impl Iterator<Item = Event> + '_ {
        self.users.iter().flat_map(move |u| {
            (0..u.len()).map(move |i| Event {
                user_id: u.user_id.clone(),
                timestamp: u.timestamps[i],
                item_id: u.items[i].clone(),
                category: self
                    .category_map
                    .category_of(&u.items[i])
                    .or_else(|| self.event_categories.get(&u.items[i]).map(String::as_str))
                    .map(str::to_owned),
                duration: u.durations[i],
            })
        })
    }

    /// Binary snapshot used between pipeline stages.
    pub fn write_binary<W: Write>(&self, writer: W) -> Result<()> {
        ciborium::into_writer(self, writer).map_err(|e| Error::Encoding(e.to_string()))
    }

    pub fn read_binary<R: Read>(reader: R) -> Result<Self> {
        ciborium::from_reader(reader).map_err(|e| Error::Encoding(e.to_string()))
    }
}

const REQUIRED_COLUMNS: [&str; 3] = ["user_id", "timestamp", "item_id"];

/// Parses a CSV or JSONL event log into a corpus.
pub fn parse_event_log<R: Read>(stream: R, format: LogFormat) -> Result<Corpus> {
    let events = match format {
        LogFormat::Csv => parse_csv_events(stream)?,
        LogFormat::Jsonl => parse_jsonl_events(stream)?,
    };
    Ok(Corpus::from_events(events))
}

fn parse_csv_events<R: Read>(stream: R) -> Result<Vec<Event>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(stream);
    let headers = reader.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    for name in REQUIRED_COLUMNS {
        if column(name).is_none() {
            return Err(Error::Schema(format!("missing required column `{name}`")));
        }
    }
    let (user_col, ts_col, item_col) = (
        column("user_id").unwrap(),
        column("timestamp").unwrap(),
        column("item_id").unwrap(),
    );
    let (cat_col, dur_col) = (column("category"), column("duration"));

    let mut events = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let more = reader.read_record(&mut record).map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Malformed { line, message: e.to_string() }
        })?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line());
        let malformed = |message: String| Error::Malformed { line, message };
        let field = |i: usize| record.get(i).unwrap_or("");
        let optional = |col: Option<usize>| col.map(field).filter(|s| !s.is_empty());

        let timestamp = field(ts_col)
            .parse::<i64>()
            .map_err(|e| malformed(format!("timestamp `{}`: {e}", field(ts_col))))?;
        let duration = optional(dur_col)
            .map(|s| s.parse::<f64>().map_err(|e| malformed(format!("duration `{s}`: {e}"))))
            .transpose()?;
        let event = Event {
            user_id: field(user_col).to_owned(),
            timestamp,
            item_id: field(item_col).to_owned(),
            category: optional(cat_col).map(str::to_owned),
            duration,
        };
        event.validate().map_err(malformed)?;
        events.push(event);
    }
    Ok(events)
}

fn parse_jsonl_events<R: Read>(stream: R) -> Result<Vec<Event>> {
    let mut events = Vec::new();
    for (idx, line) in BufReader::new(stream).lines().enumerate() {
        let line_no = idx as u64 + 1;
        let line = line.map_err(|e| Error::Malformed { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| Error::Malformed { line: line_no, message: e.to_string() })?;
        if let Some(obj) = value.as_object() {
            for name in REQUIRED_COLUMNS {
                if !obj.contains_key(name) {
                    return Err(Error::Schema(format!(
                        "line {line_no}: missing required key `{name}`"
                    )));
                }
            }
        }
        let event: Event = serde_json::from_value(value)
            .map_err(|e| Error::Malformed { line: line_no, message: e.to_string() })?;
        event
            .validate()
            .map_err(|message| Error::Malformed { line: line_no, message })?;
        events.push(event);
    }
    Ok(events)
}

/// Writes events as CSV with the standard header.
pub fn write_event_log<W: Write>(writer: W, events: impl IntoIterator<Item = Event>) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["user_id", "timestamp", "item_id", "category", "duration"])?;
    for e in events {
        out.write_record([
            e.user_id.as_str(),
            &e.timestamp.to_string(),
            e.item_id.as_str(),
            e.category.as_deref().unwrap_or(""),
            &e.duration.map(|d| d.to_string()).unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads the two category tables: `item_id,category` and
/// `category,is_entertainment`.
pub fn load_category_map<A: Read, B: Read>(assignments: A, flags: B) -> Result<CategoryMap> {
    let mut items = BTreeMap::new();
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(assignments);
    require_headers(&mut reader, &["item_id", "category"])?;
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let (item, category) = (row.get(0).unwrap_or(""), row.get(1).unwrap_or(""));
        if item.is_empty() || category.is_empty() {
            return Err(Error::Malformed { line, message: "empty item_id or category".into() });
        }
        items.insert(item.to_owned(), category.to_owned());
    }

    let mut entertainment = BTreeMap::new();
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(flags);
    require_headers(&mut reader, &["category", "is_entertainment"])?;
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let category = row.get(0).unwrap_or("");
        let flag = parse_flag(row.get(1).unwrap_or("")).ok_or_else(|| Error::Malformed {
            line,
            message: format!("is_entertainment `{}` is not a boolean", row.get(1).unwrap_or("")),
        })?;
        entertainment.insert(category.to_owned(), flag);
    }
    CategoryMap::new(items, entertainment)
}

fn parse_flag(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "y" => Some(true),
        "0" | "false" | "no" | "n" => Some(false),
        _ => None,
    }
}

fn require_headers<R: Read>(reader: &mut csv::Reader<R>, expected: &[&str]) -> Result<()> {
    let headers = reader.headers()?;
    for (i, name) in expected.iter().enumerate() {
        if headers.get(i) != Some(*name) {
            return Err(Error::Schema(format!(
                "expected column {} to be `{name}`, found `{}`",
                i + 1,
                headers.get(i).unwrap_or("")
            )));
        }
    }
    Ok(())
}

/// Writes the two category tables read by [`load_category_map`].
pub fn write_category_map<A: Write, B: Write>(map: &CategoryMap, assignments: A, flags: B) -> Result<()> {
    let mut out = csv::Writer::from_writer(assignments);
    out.write_record(["item_id", "category"])?;
    for (item, category) in map.items() {
        out.write_record([item, category])?;
    }
    out.flush()?;
    let mut out = csv::Writer::from_writer(flags);
    out.write_record(["category", "is_entertainment"])?;
    for (category, ent) in map.categories() {
        out.write_record([category, if ent { "true" } else { "false" }])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads `user_id,<name>,...` numeric covariates.
pub fn load_covariates<R: Read>(stream: R) -> Result<BTreeMap<String, BTreeMap<String, f64>>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(stream);
    let headers = reader.headers()?.clone();
    if headers.get(0) != Some("user_id") {
        return Err(Error::Schema("covariate table must start with `user_id`".into()));
    }
    let mut table = BTreeMap::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let mut values = BTreeMap::new();
        for (name, raw) in headers.iter().zip(row.iter()).skip(1) {
            if raw.is_empty() {
                continue;
            }
            let v = raw.parse::<f64>().map_err(|e| Error::Malformed {
                line,
                message: format!("covariate `{name}` = `{raw}`: {e}"),
            })?;
            values.insert(name.to_owned(), v);
        }
        table.insert(row.get(0).unwrap_or("").to_owned(), values);
    }
    Ok(table)
}

/// Users sorted by id.
pub fn sequences_by_user(corpus: &Corpus) -> Vec<UserSequence> {
    let mut users = corpus.users.clone();
    users.sort_by(|a, b| a.user_id.cmp(&b.user_id));
    users
}

/// Dense item index with per-item frequency counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    ids: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Items ordered by descending frequency, ties by id.
    pub fn from_counts(counts: impl IntoIterator<Item = (String, u64)>, min_count: u64) -> Result<Self> {
        if min_count == 0 {
            return Err(Error::InvalidArgument("min_count must be positive".into()));
        }
        let mut kept: Vec<(String, u64)> =
            counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
        if kept.is_empty() {
            return Err(Error::EmptyVocabulary { min_count });
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let index = kept.iter().enumerate().map(|(i, (id, _))| (id.clone(), i)).collect();
        let (ids, counts) = kept.into_iter().unzip();
        Ok(Self { ids, counts, index })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, item_id: &str) -> Option<usize> {
        self.index.get(item_id).copied()
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn count(&self, index: usize) -> u64 {
        self.counts[index]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }
}

/// Counts item frequencies across the corpus and drops items below `min_count`.
pub fn build_vocabulary(corpus: &Corpus, min_count: u64) -> Result<Vocabulary> {
    if corpus.users.is_empty() {
        return Err(Error::InvalidArgument("corpus has no users".into()));
    }
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for user in &corpus.users {
        for item in &user.items {
            *counts.entry(item.as_str()).or_default() += 1;
        }
    }
    Vocabulary::from_counts(counts.into_iter().map(|(k, v)| (k.to_owned(), v)), min_count)
}

/// Distinct known categories in the map.
pub fn known_categories(map: &CategoryMap) -> BTreeSet<&str> {
    map.categories().map(|(c, _)| c).collect()
}
