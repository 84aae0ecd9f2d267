use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use convkb::cli::train_to_checkpoint;
use convkb::eval::{evaluate, EvalConfig, Setting};
use convkb::synthetic::chain_kb;
use convkb::{Scorer, TrainConfig, Triple};
use convkb_ffi::*;

struct Fixture {
    _dir: tempfile::TempDir,
    data: CString,
    ckpt: CString,
    checkpoint: convkb::Checkpoint,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let kb = chain_kb(10, 20);
    let data = dir.path().join("data");
    kb.write_dir(&data).unwrap();
    let mut config = TrainConfig::convkb();
    config.k = 4;
    config.tau = 3;
    config.epochs = 2;
    config.batch_size = 8;
    let (checkpoint, _) = train_to_checkpoint(&kb, config, None, |_| Ok(())).unwrap();
    let ckpt = dir.path().join("model.ckpt");
    checkpoint.save(&ckpt).unwrap();
    Fixture {
        data: c_path(&data),
        ckpt: c_path(&ckpt),
        checkpoint,
        _dir: dir,
    }
}

fn c_path(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = convkb_last_error();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn load(f: &Fixture) -> (*mut ConvkbKb, *mut ConvkbModel) {
    let mut kb = ptr::null_mut();
    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(convkb_kb_load(f.data.as_ptr(), &mut kb), ConvkbStatus::Ok);
        assert_eq!(convkb_model_load(f.ckpt.as_ptr(), &mut model), ConvkbStatus::Ok);
    }
    assert!(convkb_last_error().is_null());
    (kb, model)
}

fn free(kb: *mut ConvkbKb, model: *mut ConvkbModel) {
    unsafe {
        convkb_model_free(model);
        convkb_kb_free(kb);
    }
}

#[test]
fn counts_and_label_lookup() {
    let f = fixture();
    let (kb, model) = load(&f);
    let mut counts = ConvkbKbCounts::default();
    let mut id = usize::MAX;
    unsafe {
        assert_eq!(convkb_kb_counts(kb, &mut counts), ConvkbStatus::Ok);
        let n3 = CString::new("n3").unwrap();
        assert_eq!(convkb_kb_entity_id(kb, n3.as_ptr(), &mut id), ConvkbStatus::Ok);
        let expected = f.checkpoint.vocab.entities.get("n3").unwrap();
        assert_eq!(id, expected);
        let nope = CString::new("nope").unwrap();
        assert_eq!(convkb_kb_relation_id(kb, nope.as_ptr(), &mut id), ConvkbStatus::Usage);
    }
    assert!(last_error().contains("nope"));
    let kb_rust = chain_kb(10, 20);
    assert_eq!(
        counts,
        ConvkbKbCounts {
            entities: kb_rust.num_entities(),
            relations: kb_rust.num_relations(),
            train: kb_rust.train.len(),
            valid: kb_rust.valid.len(),
            test: kb_rust.test.len(),
        }
    );
    free(kb, model);
}

#[test]
fn scores_match_the_library() {
    let f = fixture();
    let (kb, model) = load(&f);
    let rust_model = &f.checkpoint.model;
    let n = rust_model.emb().num_entities();
    let mut tails = vec![0.0; n];
    let mut heads = vec![0.0; n];
    unsafe {
        assert_eq!(convkb_model_check_vocab(model, kb), ConvkbStatus::Ok);
        assert_eq!(
            convkb_model_score_tails(model, 2, 1, tails.as_mut_ptr(), n),
            ConvkbStatus::Ok
        );
        assert_eq!(
            convkb_model_score_heads(model, 1, 5, heads.as_mut_ptr(), n),
            ConvkbStatus::Ok
        );
        for e in 0..n {
            let mut s = 0.0;
            assert_eq!(convkb_model_score(model, 2, 1, e, &mut s), ConvkbStatus::Ok);
            assert_eq!(s.to_bits(), rust_model.score(Triple::new(2, 1, e)).to_bits());
            assert_eq!(s.to_bits(), tails[e].to_bits());
            assert_eq!(heads[e].to_bits(), rust_model.score(Triple::new(e, 1, 5)).to_bits());
        }
        assert_eq!(
            convkb_model_score_tails(model, 2, 1, tails.as_mut_ptr(), n - 1),
            ConvkbStatus::Usage
        );
        let mut s = 0.0;
        assert_eq!(convkb_model_score(model, n, 0, 0, &mut s), ConvkbStatus::Usage);
    }
    assert!(last_error().contains("out of range"));
    free(kb, model);
}

#[test]
fn evaluation_matches_the_library() {
    let f = fixture();
    let (kb, model) = load(&f);
    let kb_rust = chain_kb(10, 20);
    for (flag, setting) in [(1, Setting::Filtered), (0, Setting::Raw)] {
        let want = evaluate(&f.checkpoint.model, &kb_rust, &EvalConfig::with_setting(setting)).unwrap();
        let mut got = ConvkbReport::default();
        assert_eq!(unsafe { convkb_evaluate(model, kb, flag, &mut got) }, ConvkbStatus::Ok);
        assert_eq!(got.mr, want.mr);
        assert_eq!(got.mrr, want.mrr);
        assert_eq!(got.hits10, want.hits_at(10).unwrap());
        assert_eq!(got.hits1, want.hits_at(1).unwrap());
    }
    free(kb, model);
}

#[test]
fn errors_map_to_status_codes() {
    let f = fixture();
    let mut kb = ptr::null_mut();
    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(convkb_kb_load(ptr::null(), &mut kb), ConvkbStatus::Usage);
        assert_eq!(convkb_kb_load(f.data.as_ptr(), ptr::null_mut()), ConvkbStatus::Usage);
        let missing = CString::new("/definitely/not/here").unwrap();
        assert_eq!(convkb_kb_load(missing.as_ptr(), &mut kb), ConvkbStatus::Data);
        assert!(kb.is_null());
        assert_eq!(convkb_model_load(missing.as_ptr(), &mut model), ConvkbStatus::Data);
        assert!(model.is_null());
        let mut counts = ConvkbKbCounts::default();
        assert_eq!(convkb_kb_counts(ptr::null(), &mut counts), ConvkbStatus::Usage);
        convkb_kb_free(ptr::null_mut());
        convkb_model_free(ptr::null_mut());
    }
}

#[test]
fn truncated_checkpoint_and_foreign_vocabulary_are_data_errors() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let bytes = f.checkpoint.to_bytes().unwrap();
    let cut = dir.path().join("cut.ckpt");
    std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(
        unsafe { convkb_model_load(c_path(&cut).as_ptr(), &mut model) },
        ConvkbStatus::Data
    );
    assert!(last_error().contains("truncated"));

    let other = dir.path().join("other");
    chain_kb(11, 20).write_dir(&other).unwrap();
    let mut kb = ptr::null_mut();
    let (_, good_model) = load(&f);
    unsafe {
        assert_eq!(convkb_kb_load(c_path(&other).as_ptr(), &mut kb), ConvkbStatus::Ok);
        assert_eq!(convkb_model_check_vocab(good_model, kb), ConvkbStatus::Data);
        let mut report = ConvkbReport::default();
        assert_eq!(convkb_evaluate(good_model, kb, 1, &mut report), ConvkbStatus::Data);
    }
    free(kb, good_model);
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(convkb_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn generated_header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/convkb.h");
    let text = std::fs::read_to_string(&header).unwrap();
    assert!(text.contains("convkb_evaluate"));
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".to_owned());
    let status = Command::new(&cc)
        .args(["-fsyntax-only", "-std=c99", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .status();
    match status {
        Ok(s) => assert!(s.success(), "{cc} rejected the header"),
        Err(_) => eprintln!("no C compiler found, header syntax not checked"),
    }
}
