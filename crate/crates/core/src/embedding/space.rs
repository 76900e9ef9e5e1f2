use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};

use crate::error::{Error, Result};
use crate::linalg::{norm, Matrix};

const USER_PREFIX: &str = "user:";

/// Trained user and item coordinates in one space.
#[derive(Debug, Clone)]
pub struct EmbeddingSpace {
    item_ids: Vec<String>,
    items: Matrix,
    user_ids: Vec<String>,
    users: Matrix,
    normalized: bool,
    item_index: HashMap<String, usize>,
    user_index: HashMap<String, usize>,
}

impl PartialEq for EmbeddingSpace {
    fn eq(&self, other: &Self) -> bool {
        self.item_ids == other.item_ids
            && self.user_ids == other.user_ids
            && self.items == other.items
            && self.users == other.users
            && self.normalized == other.normalized
    }
}

impl EmbeddingSpace {
    pub fn new(item_ids: Vec<String>, items: Matrix, user_ids: Vec<String>, users: Matrix) -> Result<Self> {
        if item_ids.len() != items.rows() || user_ids.len() != users.rows() {
            return Err(Error::InvalidArgument("ids and vector rows are not aligned".into()));
        }
        if items.rows() > 0 && users.rows() > 0 && items.cols() != users.cols() {
            return Err(Error::InvalidArgument("item and user dimensions differ".into()));
        }
        let index = |ids: &[String]| -> Result<HashMap<String, usize>> {
            let mut map = HashMap::with_capacity(ids.len());
            for (i, id) in ids.iter().enumerate() {
                if map.insert(id.clone(), i).is_some() {
                    return Err(Error::InvalidArgument(format!("duplicate id `{id}`")));
                }
            }
            Ok(map)
        };
        Ok(Self {
            item_index: index(&item_ids)?,
            user_index: index(&user_ids)?,
            item_ids,
            items,
            user_ids,
            users,
            normalized: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.items.cols().max(self.users.cols())
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn items(&self) -> &Matrix {
        &self.items
    }

    pub fn users(&self) -> &Matrix {
        &self.users
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_index.get(id).copied()
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_index.get(id).copied()
    }

    pub fn item_vector(&self, id: &str) -> Option<&[f64]> {
        self.item_index(id).map(|i| self.items.row(i))
    }

    pub fn user_vector(&self, id: &str) -> Option<&[f64]> {
        self.user_index(id).map(|i| self.users.row(i))
    }

    /// Applies `f` to every vector (items first, then users).
    pub fn map_vectors(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Self {
        let apply = |m: &Matrix, f: &mut dyn FnMut(&[f64]) -> Vec<f64>| {
            let rows: Vec<Vec<f64>> = m.iter_rows().map(f).collect();
            if rows.is_empty() {
                Matrix::zeros(0, m.cols())
            } else {
                Matrix::from_rows(&rows)
            }
        };
        Self {
            items: apply(&self.items, &mut f),
            users: apply(&self.users, &mut f),
            ..self.clone()
        }
    }

    /// Writes the tab-separated text format: header `dim V U`, item rows,
    /// then user rows prefixed with `user:`.
    pub fn write_tsv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = std::io::BufWriter::new(writer);
        writeln!(w, "{} {} {}", self.dim(), self.item_ids.len(), self.user_ids.len())?;
        let rows = self
            .item_ids
            .iter()
            .map(String::as_str)
            .zip(self.items.iter_rows())
            .map(|(id, row)| (String::new(), id, row))
            .chain(
                self.user_ids
                    .iter()
                    .zip(self.users.iter_rows())
                    .map(|(id, row)| (USER_PREFIX.to_owned(), id.as_str(), row)),
            );
        for (prefix, id, row) in rows {
            if id.contains(['\t', '\n', '\r']) {
                return Err(Error::InvalidArgument(format!("id `{id}` contains tab or newline")));
            }
            write!(w, "{prefix}{id}\t")?;
            for (k, v) in row.iter().enumerate() {
                if k > 0 {
                    w.write_all(b" ")?;
                }
                // 17 significant digits round-trip every f64 exactly.
                write!(w, "{v:.16e}")?;
            }
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_tsv<R: Read>(reader: R) -> Result<Self> {
        let mut lines = BufReader::new(reader).lines();
        let header = lines.next().ok_or_else(|| Error::Schema("empty space file".into()))??;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Malformed { line: 1, message: format!("header: {e}") })?;
        let [dim, n_items, n_users] = dims[..] else {
            return Err(Error::Malformed { line: 1, message: "header must be `dim V U`".into() });
        };
        let mut item_ids = Vec::with_capacity(n_items);
        let mut user_ids = Vec::with_capacity(n_users);
        let mut items = Vec::with_capacity(n_items * dim);
        let mut users = Vec::with_capacity(n_users * dim);
        for (i, line) in lines.enumerate() {
            let line_no = i as u64 + 2;
            let line = line?;
            let malformed = |message: String| Error::Malformed { line: line_no, message };
            let (id, values) = line.split_once('\t').ok_or_else(|| malformed("missing tab".into()))?;
            let row: Vec<f64> = values
                .split(' ')
                .map(str::parse::<f64>)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| malformed(e.to_string()))?;
            if row.len() != dim {
                return Err(malformed(format!("expected {dim} values, found {}", row.len())));
            }
            if item_ids.len() < n_items {
                item_ids.push(id.to_owned());
                items.extend(row);
            } else {
                let id = id
                    .strip_prefix(USER_PREFIX)
                    .ok_or_else(|| malformed(format!("expected `{USER_PREFIX}` prefix on `{id}`")))?;
                user_ids.push(id.to_owned());
                users.extend(row);
            }
        }
        if item_ids.len() != n_items || user_ids.len() != n_users {
            return Err(Error::Schema(format!(
                "header announces {n_items} items and {n_users} users, found {} and {}",
                item_ids.len(),
                user_ids.len()
            )));
        }
        Self::new(
            item_ids,
            Matrix::from_vec(n_items, dim, items),
            user_ids,
            Matrix::from_vec(n_users, dim, users),
        )
    }
}

/// Scales every vector to unit Euclidean norm.
pub fn normalize_space(space: &EmbeddingSpace) -> Result<EmbeddingSpace> {
    let rows = space
        .item_ids
        .iter()
        .zip(space.items.iter_rows())
        .chain(space.user_ids.iter().zip(space.users.iter_rows()));
    for (id, row) in rows {
        let n = norm(row);
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroVector(id.clone()));
        }
    }
    let mut out = space.map_vectors(|row| {
        let n = norm(row);
        row.iter().map(|v| v / n).collect()
    });
    out.normalized = true;
    Ok(out)
}
