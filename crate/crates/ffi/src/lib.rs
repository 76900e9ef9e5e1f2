//! C ABI for the cocoon library.
//!
//! Every fallible function returns a [`CocoonStatus`]; on failure the
//! message is available from [`cocoon_last_error`] on the same thread.
//! Spaces are opaque handles released with [`cocoon_space_free`]; strings
//! returned through out-parameters are released with [`cocoon_string_free`].

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use libc::{c_char, c_int, size_t};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cocoon::embedding::{normalize_space, EmbeddingSpace};
use cocoon::geometry::{self, Extremes, GenreDistanceProfile};
use cocoon::nullmodel::{constrained_shuffle, ShuffleStatus};
use cocoon::pipeline::{self, PipelineConfig, Stage};
use cocoon::stats;
use cocoon::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CocoonStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Parse = 5,
    MissingArtifact = 6,
    Degenerate = 7,
    Training = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CocoonShuffleStatus {
    Uniform = 0,
    Fallback = 1,
    Infeasible = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CocoonTTest {
    pub t: f64,
    pub df: size_t,
    pub p: f64,
}

/// Opaque handle to a loaded embedding space.
pub struct CocoonSpace {
    inner: EmbeddingSpace,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs replaced");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CocoonStatus {
    match e {
        Error::InvalidArgument(_)
        | Error::Config(_)
        | Error::UnknownId(_)
        | Error::EmptyVocabulary { .. }
        | Error::CategoryMap(_)
        | Error::ZeroVector(_) => CocoonStatus::InvalidArgument,
        Error::Io(_) => CocoonStatus::Io,
        Error::Malformed { .. } | Error::Schema(_) | Error::Csv(_) | Error::Json(_) | Error::Encoding(_) => {
            CocoonStatus::Parse
        }
        Error::MissingArtifact(_) => CocoonStatus::MissingArtifact,
        Error::Degenerate(_) | Error::RankDeficient(_) => CocoonStatus::Degenerate,
        Error::NonFinite { .. } | Error::Repetition { .. } => CocoonStatus::Training,
    }
}

struct Failure(CocoonStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CocoonStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CocoonStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("panic: {message}"));
            CocoonStatus::Panic
        }
    }
}

fn null_pointer(name: &str) -> Failure {
    Failure(CocoonStatus::NullPointer, format!("`{name}` is NULL"))
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(CocoonStatus::InvalidArgument, message.into())
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null_pointer(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(CocoonStatus::InvalidUtf8, format!("`{name}`: {e}")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null_pointer(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null_pointer(name))
}

unsafe fn space_arg<'a>(p: *const CocoonSpace) -> Result<&'a EmbeddingSpace, Failure> {
    p.as_ref().map(|s| &s.inner).ok_or_else(|| null_pointer("space"))
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cocoon_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cocoon_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a space written by the `train` stage. When `normalize` is nonzero
/// every vector is scaled to unit length.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cocoon_space_load(
    path: *const c_char,
    normalize: c_int,
    out: *mut *mut CocoonSpace,
) -> CocoonStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let file = std::fs::File::open(path).map_err(|e| Failure(CocoonStatus::Io, format!("{path}: {e}")))?;
        let mut space = EmbeddingSpace::read_tsv(std::io::BufReader::new(file))?;
        if normalize != 0 {
            space = normalize_space(&space)?;
        }
        *out = Box::into_raw(Box::new(CocoonSpace { inner: space }));
        Ok(())
    })
}

/// Releases a space. NULL is ignored.
///
/// # Safety
/// `space` must come from [`cocoon_space_load`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cocoon_space_free(space: *mut CocoonSpace) {
    if !space.is_null() {
        drop(Box::from_raw(space));
    }
}

/// Vector length, or 0 for NULL.
///
/// # Safety
/// `space` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cocoon_space_dim(space: *const CocoonSpace) -> size_t {
    space.as_ref().map_or(0, |s| s.inner.dim())
}

/// Number of item vectors, or 0 for NULL.
///
/// # Safety
/// `space` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cocoon_space_item_count(space: *const CocoonSpace) -> size_t {
    space.as_ref().map_or(0, |s| s.inner.item_ids().len())
}

/// Number of user vectors, or 0 for NULL.
///
/// # Safety
/// `space` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cocoon_space_user_count(space: *const CocoonSpace) -> size_t {
    space.as_ref().map_or(0, |s| s.inner.user_ids().len())
}

unsafe fn copy_vector(v: Option<&[f64]>, id: &str, out: *mut f64, len: size_t) -> Result<(), Failure> {
    let v = v.ok_or_else(|| invalid(format!("unknown id `{id}`")))?;
    if len < v.len() {
        return Err(Failure(
            CocoonStatus::BufferTooSmall,
            format!("buffer holds {len} values, vector has {}", v.len()),
        ));
    }
    if out.is_null() {
        return Err(null_pointer("out"));
    }
    ptr::copy_nonoverlapping(v.as_ptr(), out, v.len());
    Ok(())
}

/// Copies a user's vector into `out`, which holds `len` doubles.
///
/// # Safety
/// `space` must be a live handle, `user_id` NUL-terminated and `out` valid
/// for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn cocoon_space_user_vector(
    space: *const CocoonSpace,
    user_id: *const c_char,
    out: *mut f64,
    len: size_t,
) -> CocoonStatus {
    guard(|| {
        let space = space_arg(space)?;
        let id = str_arg(user_id, "user_id")?;
        copy_vector(space.user_vector(id), id, out, len)
    })
}

/// Copies an item's vector into `out`, which holds `len` doubles.
///
/// # Safety
/// As for [`cocoon_space_user_vector`].
#[no_mangle]
pub unsafe extern "C" fn cocoon_space_item_vector(
    space: *const CocoonSpace,
    item_id: *const c_char,
    out: *mut f64,
    len: size_t,
) -> CocoonStatus {
    guard(|| {
        let space = space_arg(space)?;
        let id = str_arg(item_id, "item_id")?;
        copy_vector(space.item_vector(id), id, out, len)
    })
}

/// The `k` items most cosine-similar to `item_id`, as a JSON array of
/// `[id, similarity]` pairs. Free the result with [`cocoon_string_free`].
///
/// # Safety
/// `space` must be a live handle, `item_id` NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cocoon_space_nearest_items_json(
    space: *const CocoonSpace,
    item_id: *const c_char,
    k: size_t,
    out: *mut *mut c_char,
) -> CocoonStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let space = space_arg(space)?;
        let id = str_arg(item_id, "item_id")?;
        let nearest = geometry::nearest_items(space, id, k)?;
        let json = serde_json::to_string(&nearest).map_err(Error::from)?;
        *out = CString::new(json).expect("JSON has no NUL").into_raw();
        Ok(())
    })
}

/// Radius of gyration of `n_positions` row-major vectors of length `dim`
/// around `center`.
///
/// # Safety
/// `positions` must hold `n_positions * dim` doubles, `center` `dim`
/// doubles, and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cocoon_radius_of_gyration(
    positions: *const f64,
    n_positions: size_t,
    dim: size_t,
    center: *const f64,
    out: *mut f64,
) -> CocoonStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let total = n_positions.checked_mul(dim).ok_or_else(|| invalid("positions size overflows"))?;
        let flat = slice_arg(positions, total, "positions")?;
        let center = slice_arg(center, dim, "center")?;
        if dim == 0 {
            return Err(invalid("dim must be positive"));
        }
        let rows: Vec<&[f64]> = flat.chunks_exact(dim).collect();
        *out = geometry::radius_of_gyration(&rows, center)?;
        Ok(())
    })
}

/// Normalized distance to entertainment from the item-distance extremes.
/// `out_degenerate` is set to 1 when the all-item span is zero.
///
/// # Safety
/// Both out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn cocoon_distance_to_entertainment(
    ent_min: f64,
    ent_max: f64,
    all_min: f64,
    all_max: f64,
    out_value: *mut f64,
    out_degenerate: *mut c_int,
) -> CocoonStatus {
    guard(|| {
        let value = out_arg(out_value, "out_value")?;
        let degenerate = out_arg(out_degenerate, "out_degenerate")?;
        let finite = [ent_min, ent_max, all_min, all_max].iter().all(|v| v.is_finite());
        if !finite || ent_min > ent_max || all_min > all_max || all_min > ent_min || ent_max > all_max {
            return Err(invalid("extremes must satisfy all_min <= ent_min <= ent_max <= all_max"));
        }
        let profile = GenreDistanceProfile {
            centroid_distances: Default::default(),
            entertainment: Some(Extremes { min: ent_min, max: ent_max }),
            non_entertainment: None,
            all: Extremes { min: all_min, max: all_max },
        };
        let d = geometry::distance_to_entertainment(&profile);
        *value = d.value;
        *degenerate = c_int::from(d.degenerate);
        Ok(())
    })
}

/// Shuffles `items` in place so that no two neighbors are equal. Infeasible
/// inputs are left untouched and reported through `out_status`.
///
/// # Safety
/// `items` must be valid for `len` reads and writes; `out_status` valid.
#[no_mangle]
pub unsafe extern "C" fn cocoon_constrained_shuffle(
    items: *mut u32,
    len: size_t,
    seed: u64,
    out_status: *mut CocoonShuffleStatus,
) -> CocoonStatus {
    guard(|| {
        let status = out_arg(out_status, "out_status")?;
        if len == 0 {
            return Err(invalid("sequence is empty"));
        }
        if items.is_null() {
            return Err(null_pointer("items"));
        }
        let items = std::slice::from_raw_parts_mut(items, len);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shuffled = constrained_shuffle(items, &mut rng);
        items.copy_from_slice(&shuffled.items);
        *status = match shuffled.status {
            ShuffleStatus::Uniform => CocoonShuffleStatus::Uniform,
            ShuffleStatus::Fallback => CocoonShuffleStatus::Fallback,
            ShuffleStatus::Infeasible => CocoonShuffleStatus::Infeasible,
        };
        Ok(())
    })
}

/// Paired two-sided t test on `a[i] − b[i]`.
///
/// # Safety
/// `a` and `b` must each hold `n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cocoon_paired_t_test(
    a: *const f64,
    b: *const f64,
    n: size_t,
    out: *mut CocoonTTest,
) -> CocoonStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let r = stats::paired_t_test(slice_arg(a, n, "a")?, slice_arg(b, n, "b")?)?;
        *out = CocoonTTest { t: r.t, df: r.df, p: r.p };
        Ok(())
    })
}

/// Two-sided tail probability of Student's t with `df` degrees of freedom.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cocoon_t_tail_p(t: f64, df: f64, out: *mut f64) -> CocoonStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = stats::t_tail_p(t, df)?;
        Ok(())
    })
}

/// Runs one pipeline stage (`synth`, `ingest`, `train`, `metrics`, `null`,
/// `test`, `regress` or `report`). `config_path` and `output_dir` may be
/// NULL; a non-NULL `output_dir` overrides the config file.
///
/// # Safety
/// Non-NULL arguments must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn cocoon_run(
    stage: *const c_char,
    config_path: *const c_char,
    output_dir: *const c_char,
) -> CocoonStatus {
    guard(|| {
        let stage: Stage = str_arg(stage, "stage")?.parse()?;
        let mut config = if config_path.is_null() {
            PipelineConfig::default()
        } else {
            PipelineConfig::from_file(Path::new(str_arg(config_path, "config_path")?))?
        };
        config.apply_env()?;
        if !output_dir.is_null() {
            config.output_dir = str_arg(output_dir, "output_dir")?.into();
        }
        pipeline::run(stage, &config)?;
        Ok(())
    })
}
