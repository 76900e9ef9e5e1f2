use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use cocoon_ffi::*;

const SPACE: &str = "2 3 1\n\
a\t1.0 0.0\n\
b\t0.9 0.1\n\
c\t0.0 2.0\n\
user:u1\t3.0 4.0\n";

fn write_space(dir: &Path) -> CString {
    let path = dir.join("space.tsv");
    std::fs::write(&path, SPACE).unwrap();
    CString::new(path.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = cocoon_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn space_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_space(dir.path());
    let mut space = ptr::null_mut();
    unsafe {
        assert_eq!(cocoon_space_load(path.as_ptr(), 1, &mut space), CocoonStatus::Ok);
        assert_eq!(cocoon_space_dim(space), 2);
        assert_eq!(cocoon_space_item_count(space), 3);
        assert_eq!(cocoon_space_user_count(space), 1);

        let mut v = [0.0; 2];
        let u1 = CString::new("u1").unwrap();
        assert_eq!(cocoon_space_user_vector(space, u1.as_ptr(), v.as_mut_ptr(), 2), CocoonStatus::Ok);
        assert!((v[0] - 0.6).abs() < 1e-12 && (v[1] - 0.8).abs() < 1e-12);

        let mut short = [0.0; 1];
        let c = CString::new("c").unwrap();
        assert_eq!(
            cocoon_space_item_vector(space, c.as_ptr(), short.as_mut_ptr(), 1),
            CocoonStatus::BufferTooSmall
        );
        let missing = CString::new("zz").unwrap();
        assert_eq!(
            cocoon_space_item_vector(space, missing.as_ptr(), v.as_mut_ptr(), 2),
            CocoonStatus::InvalidArgument
        );
        assert!(last_error().contains("zz"));

        let a = CString::new("a").unwrap();
        let mut json = ptr::null_mut();
        assert_eq!(cocoon_space_nearest_items_json(space, a.as_ptr(), 1, &mut json), CocoonStatus::Ok);
        let parsed: Vec<(String, f64)> = serde_json::from_str(CStr::from_ptr(json).to_str().unwrap()).unwrap();
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[0].0, "b");
        cocoon_string_free(json);
        cocoon_space_free(space);
    }
}

#[test]
fn load_failures_map_to_codes() {
    let mut space = ptr::null_mut();
    let missing = CString::new("/nonexistent/space.tsv").unwrap();
    unsafe {
        assert_eq!(cocoon_space_load(missing.as_ptr(), 0, &mut space), CocoonStatus::Io);
        assert!(space.is_null());
        assert_eq!(cocoon_space_load(ptr::null(), 0, &mut space), CocoonStatus::NullPointer);
        let bad = [0xffu8, 0];
        assert_eq!(cocoon_space_load(bad.as_ptr().cast(), 0, &mut space), CocoonStatus::InvalidUtf8);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tsv");
        std::fs::write(&path, "2 x 1\n").unwrap();
        let path = CString::new(path.to_str().unwrap()).unwrap();
        assert_eq!(cocoon_space_load(path.as_ptr(), 0, &mut space), CocoonStatus::Parse);
        assert_eq!(cocoon_space_dim(ptr::null()), 0);
        cocoon_space_free(ptr::null_mut());
        cocoon_string_free(ptr::null_mut());
    }
}

#[test]
fn radius_matches_hand_value() {
    let positions = [0.0, 0.0, 2.0, 0.0];
    let center = [1.0, 0.0];
    let mut r = 0.0;
    unsafe {
        assert_eq!(
            cocoon_radius_of_gyration(positions.as_ptr(), 2, 2, center.as_ptr(), &mut r),
            CocoonStatus::Ok
        );
        assert!((r - 1.0).abs() < 1e-12);
        assert_eq!(
            cocoon_radius_of_gyration(positions.as_ptr(), 0, 2, center.as_ptr(), &mut r),
            CocoonStatus::InvalidArgument
        );
    }
}

#[test]
fn entertainment_distance_flags_degenerate_span() {
    let (mut value, mut degenerate) = (1.0, 0);
    unsafe {
        assert_eq!(
            cocoon_distance_to_entertainment(0.2, 0.6, 0.0, 1.0, &mut value, &mut degenerate),
            CocoonStatus::Ok
        );
        assert!((value + 0.4).abs() < 1e-12);
        assert_eq!(degenerate, 0);
        assert_eq!(
            cocoon_distance_to_entertainment(0.5, 0.5, 0.5, 0.5, &mut value, &mut degenerate),
            CocoonStatus::Ok
        );
        assert_eq!((value, degenerate), (0.0, 1));
        assert_eq!(
            cocoon_distance_to_entertainment(0.0, 2.0, 0.5, 1.0, &mut value, &mut degenerate),
            CocoonStatus::InvalidArgument
        );
    }
}

#[test]
fn shuffle_in_place() {
    let mut items = [1u32, 1, 1, 2, 2, 3];
    let mut status = CocoonShuffleStatus::Infeasible;
    unsafe {
        assert_eq!(
            cocoon_constrained_shuffle(items.as_mut_ptr(), items.len(), 7, &mut status),
            CocoonStatus::Ok
        );
    }
    assert_ne!(status, CocoonShuffleStatus::Infeasible);
    assert!(items.windows(2).all(|w| w[0] != w[1]));
    let mut sorted = items;
    sorted.sort_unstable();
    assert_eq!(sorted, [1, 1, 1, 2, 2, 3]);

    let mut stuck = [5u32, 5, 5, 1];
    unsafe {
        assert_eq!(cocoon_constrained_shuffle(stuck.as_mut_ptr(), 4, 7, &mut status), CocoonStatus::Ok);
    }
    assert_eq!(status, CocoonShuffleStatus::Infeasible);
    assert_eq!(stuck, [5, 5, 5, 1]);
}

#[test]
fn t_test_and_tail() {
    let a = [1.0, 2.0, 3.0, 4.0];
    let b = [0.0, 0.5, 1.0, 2.5];
    let mut r = CocoonTTest { t: 0.0, df: 0, p: 0.0 };
    let mut p = 0.0;
    unsafe {
        assert_eq!(cocoon_paired_t_test(a.as_ptr(), b.as_ptr(), 4, &mut r), CocoonStatus::Ok);
        assert_eq!(r.df, 3);
        assert_eq!(cocoon_t_tail_p(r.t, 3.0, &mut p), CocoonStatus::Ok);
        assert_eq!(p, r.p);
        // One degree of freedom is Cauchy: p(1) = 1/2.
        assert_eq!(cocoon_t_tail_p(1.0, 1.0, &mut p), CocoonStatus::Ok);
        assert!((p - 0.5).abs() < 1e-12);
        assert_eq!(cocoon_paired_t_test(a.as_ptr(), b.as_ptr(), 1, &mut r), CocoonStatus::InvalidArgument);
        assert_eq!(cocoon_paired_t_test(ptr::null(), b.as_ptr(), 4, &mut r), CocoonStatus::NullPointer);
    }
}

#[test]
fn run_reports_missing_artifacts_and_bad_stages() {
    let dir = tempfile::tempdir().unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    let train = CString::new("train").unwrap();
    let bogus = CString::new("bogus").unwrap();
    unsafe {
        assert_eq!(cocoon_run(train.as_ptr(), ptr::null(), out.as_ptr()), CocoonStatus::MissingArtifact);
        assert!(last_error().contains("corpus.bin"));
        assert_eq!(cocoon_run(bogus.as_ptr(), ptr::null(), out.as_ptr()), CocoonStatus::InvalidArgument);
    }
}

#[test]
fn run_synth_and_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    for stage in ["synth", "ingest"] {
        let stage = CString::new(stage).unwrap();
        assert_eq!(unsafe { cocoon_run(stage.as_ptr(), ptr::null(), out.as_ptr()) }, CocoonStatus::Ok);
    }
    assert!(dir.path().join("corpus.bin").is_file());
}

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links_from_c() {
    let header_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    assert!(header_dir.join("cocoon.h").is_file());
    let lib = target_dir().join("libcocoon_ffi.a");
    assert!(lib.is_file(), "static library not found at {}", lib.display());

    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"#include <math.h>
#include <stdio.h>
#include "cocoon.h"
int main(void) {
    double p = 0.0;
    if (cocoon_t_tail_p(1.0, 1.0, &p) != COCOON_STATUS_OK || fabs(p - 0.5) > 1e-12) return 1;
    uint32_t items[4] = {1, 1, 2, 2};
    CocoonShuffleStatus st;
    if (cocoon_constrained_shuffle(items, 4, 3, &st) != COCOON_STATUS_OK) return 2;
    for (int i = 1; i < 4; i++) if (items[i] == items[i - 1]) return 3;
    CocoonSpace *space = NULL;
    if (cocoon_space_load("/nonexistent", 0, &space) != COCOON_STATUS_IO) return 4;
    if (cocoon_last_error() == NULL || space != NULL) return 5;
    puts("ok");
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(cc)
        .arg(&src)
        .arg("-I")
        .arg(&header_dir)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let output = Command::new(&exe).output().unwrap();
    assert!(output.status.success(), "exit {:?}", output.status.code());
    assert_eq!(String::from_utf8_lossy(&output.stdout).trim(), "ok");
}
