use std::ffi::{c_char, CString};
use std::path::PathBuf;
use std::ptr;

use mvrisk_ffi::*;

const BIN1_TREE: &str = r#"{"d": 2, "m": 2, "T": 1, "nodes": [
  {"id": 0, "time": 0, "parent": null, "prob": 1},
  {"id": 1, "time": 1, "parent": 0, "prob": 0.5},
  {"id": 2, "time": 1, "parent": 0, "prob": 0.5}]}"#;
const BIN1_CLAIM: &str = r#"{"values": [{"leaf": 1, "v": [1, 0]}, {"leaf": 2, "v": [-2, 1]}]}"#;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let mut needed = 0usize;
    unsafe {
        assert_eq!(mvr_last_error_message(ptr::null_mut(), 0, &mut needed), MvrStatus::BufferTooSmall);
        let mut buf = vec![0 as c_char; needed];
        assert_eq!(mvr_last_error_message(buf.as_mut_ptr(), buf.len(), &mut needed), MvrStatus::Ok);
        std::ffi::CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn bin1() -> *mut MvrTree {
    let mut tree = ptr::null_mut();
    assert_eq!(unsafe { mvr_tree_from_json(c(BIN1_TREE).as_ptr(), &mut tree) }, MvrStatus::Ok);
    assert!(!tree.is_null());
    tree
}

#[test]
fn scalarize_bin1_frictionless() {
    let tree = bin1();
    let mut system = ptr::null_mut();
    unsafe {
        assert_eq!(mvr_tree_nodes_at(tree, 0), 1);
        assert_eq!(mvr_tree_nodes_at(tree, 1), 2);
        assert_eq!(mvr_tree_nodes_at(tree, 2), 0);
        assert_eq!(mvr_system_superhedging(tree, ptr::null(), &mut system), MvrStatus::Ok);
        let w = [1.0, 1.0];
        let mut out = [0.0f64; 1];
        let mut written = 0usize;
        let status = mvr_scalarize(system, c(BIN1_CLAIM).as_ptr(), 0, w.as_ptr(), 2, out.as_mut_ptr(), 1, &mut written);
        assert_eq!(status, MvrStatus::Ok, "{}", last_error());
        assert_eq!(written, 1);
        assert!((out[0] - 1.0).abs() < 1e-9, "{}", out[0]);
        assert_eq!(last_error(), "");

        let mut gaps = [f64::NAN; 1];
        let status = mvr_recursion_gap(system, c(BIN1_CLAIM).as_ptr(), 0, 1, w.as_ptr(), 2, gaps.as_mut_ptr(), 1, &mut written);
        assert_eq!(status, MvrStatus::Ok, "{}", last_error());
        assert!(gaps[0].abs() < 1e-9);

        let mut verdict = MvrVerdict::Inconclusive;
        assert_eq!(mvr_check_mptc(system, 0, 1, 1, 16, 0, &mut verdict), MvrStatus::Ok);
        assert_eq!(verdict, MvrVerdict::Holds);
        mvr_system_free(system);
        mvr_tree_free(tree);
    }
}

#[test]
fn composed_avar_hand_value() {
    let tree = bin1();
    let mut system = ptr::null_mut();
    unsafe {
        let levels = c(r#"{"levels": [{"time": 0, "lambda": [0.5, 0.5]}]}"#);
        assert_eq!(mvr_system_composed_avar(tree, levels.as_ptr(), &mut system), MvrStatus::Ok, "{}", last_error());
        let w = [1.0, 1.0];
        let mut out = [0.0f64; 1];
        let mut written = 0;
        assert_eq!(mvr_scalarize(system, c(BIN1_CLAIM).as_ptr(), 0, w.as_ptr(), 2, out.as_mut_ptr(), 1, &mut written), MvrStatus::Ok);
        assert!((out[0] - 2.0).abs() < 1e-9);
        mvr_system_free(system);
        mvr_tree_free(tree);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut tree = ptr::null_mut();
        assert_eq!(mvr_tree_from_json(ptr::null(), &mut tree), MvrStatus::NullPointer);
        assert_eq!(mvr_tree_from_json(c("{not json").as_ptr(), &mut tree), MvrStatus::Parse);
        assert!(last_error().contains("invalid JSON"));
        assert_eq!(mvr_tree_from_json(c(r#"{"d": 2}"#).as_ptr(), &mut tree), MvrStatus::Validation);
        assert!(tree.is_null());
        let bad = [0x66u8, 0xff, 0x00];
        assert_eq!(mvr_tree_from_json(bad.as_ptr() as *const c_char, &mut tree), MvrStatus::InvalidUtf8);

        let tree = bin1();
        let mut system = ptr::null_mut();
        assert_eq!(mvr_system_superhedging(tree, ptr::null(), &mut system), MvrStatus::Ok);
        let w = [1.0, 1.0];
        let mut written = 0;
        let bad_claim = c(r#"{"values": [{"leaf": 9, "v": [1, 0]}]}"#);
        let status = mvr_scalarize(system, bad_claim.as_ptr(), 0, w.as_ptr(), 2, ptr::null_mut(), 0, &mut written);
        assert_eq!(status, MvrStatus::Validation);
        assert!(last_error().contains("leaf id 9"), "{}", last_error());

        let mut small: [f64; 1] = [0.0];
        let status = mvr_scalarize(system, c(BIN1_CLAIM).as_ptr(), 1, w.as_ptr(), 2, small.as_mut_ptr(), 1, &mut written);
        assert_eq!(status, MvrStatus::BufferTooSmall);
        assert_eq!(written, 2);
        assert_eq!(mvr_scalarize(system, c(BIN1_CLAIM).as_ptr(), 0, w.as_ptr(), 1, small.as_mut_ptr(), 1, &mut written), MvrStatus::Validation);
        assert_eq!(mvr_scalarize(system, c(BIN1_CLAIM).as_ptr(), 5, w.as_ptr(), 2, small.as_mut_ptr(), 1, &mut written), MvrStatus::Validation);
        assert_eq!(mvr_recursion_gap(system, c(BIN1_CLAIM).as_ptr(), 1, 1, w.as_ptr(), 2, small.as_mut_ptr(), 1, &mut written), MvrStatus::Validation);
        let mut verdict = MvrVerdict::Holds;
        assert_eq!(mvr_check_mptc(ptr::null(), 0, 1, 1, 16, 0, &mut verdict), MvrStatus::NullPointer);
        assert_eq!(mvr_check_mptc(system, 0, 1, 1, 0, 0, &mut verdict), MvrStatus::Validation);
        mvr_system_free(system);
        mvr_tree_free(tree);
        mvr_system_free(ptr::null_mut());
        mvr_tree_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_the_interface() {
    let mut path = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    path.push("include/mvrisk.h");
    let header = std::fs::read_to_string(&path).unwrap();
    for name in [
        "typedef struct MvrTree MvrTree",
        "typedef struct MvrSystem MvrSystem",
        "MVR_STATUS_OK = 0",
        "MVR_STATUS_PANIC = 7",
        "mvr_tree_from_json",
        "mvr_system_superhedging",
        "mvr_system_composed_avar",
        "mvr_scalarize",
        "mvr_recursion_gap",
        "mvr_check_mptc",
        "mvr_last_error_message",
        "mvr_tree_free",
        "mvr_system_free",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
    if let Ok(status) = std::process::Command::new("cc").args(["-fsyntax-only", "-x", "c"]).arg(&path).status() {
        assert!(status.success(), "header does not compile as C");
    }
}
