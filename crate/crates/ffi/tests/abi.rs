use std::ffi::{CStr, CString};
use std::ptr;

use priu_ffi::*;

fn dataset(n: usize, m: usize) -> *mut PriuDataset {
    // y = x·w* + small deterministic wobble
    let mut x = Vec::with_capacity(n * m);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let mut t = 0.0;
        for j in 0..m {
            let v = (((i * 7 + j * 13) % 17) as f64 - 8.0) / 8.0;
            x.push(v);
            t += v * (j as f64 + 1.0) * 0.1;
        }
        y.push(t + ((i % 5) as f64 - 2.0) * 0.01);
    }
    let mut ds = ptr::null_mut();
    let s = unsafe { priu_dataset_from_dense(x.as_ptr(), n, m, y.as_ptr(), PriuModelKind::Linear, 0, &mut ds) };
    assert_eq!(s, PriuStatus::Ok);
    ds
}

fn hp() -> PriuHyperparams {
    PriuHyperparams {
        eta: 0.05,
        lambda: 0.01,
        batch_size: 10,
        iterations: 40,
        seed: 4,
    }
}

fn last_error() -> String {
    let p = priu_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn train_update_save_load_round_trip() {
    let ds = dataset(100, 4);
    assert_eq!(unsafe { priu_dataset_rows(ds) }, 100);
    assert_eq!(unsafe { priu_dataset_cols(ds) }, 4);

    let mut engine = ptr::null_mut();
    assert_eq!(unsafe { priu_engine_train(ds, &hp(), ptr::null(), &mut engine) }, PriuStatus::Ok);
    let dim = unsafe { priu_engine_param_dim(engine) };
    assert_eq!(dim, 4);

    let mut trained = vec![0.0; dim];
    assert_eq!(unsafe { priu_engine_trained(engine, trained.as_mut_ptr(), dim) }, PriuStatus::Ok);

    let mut same = vec![0.0; dim];
    let s = unsafe { priu_engine_update(engine, PriuMethod::Priu, ptr::null(), 0, same.as_mut_ptr(), dim, ptr::null_mut()) };
    assert_eq!(s, PriuStatus::Ok);
    for (a, b) in same.iter().zip(&trained) {
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }

    let removed = [3u32, 17, 42];
    let (mut fast, mut slow) = (vec![0.0; dim], vec![0.0; dim]);
    let mut ms = -1.0;
    unsafe {
        assert_eq!(priu_engine_update(engine, PriuMethod::Priu, removed.as_ptr(), 3, fast.as_mut_ptr(), dim, &mut ms), PriuStatus::Ok);
        assert_eq!(priu_engine_update(engine, PriuMethod::Basel, removed.as_ptr(), 3, slow.as_mut_ptr(), dim, ptr::null_mut()), PriuStatus::Ok);
    }
    assert!(ms >= 0.0);
    for (a, b) in fast.iter().zip(&slow) {
        assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
    }

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("c.priu").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { priu_engine_save(engine, path.as_ptr()) }, PriuStatus::Ok);
    let mut reloaded = ptr::null_mut();
    assert_eq!(unsafe { priu_engine_load(ds, path.as_ptr(), &mut reloaded) }, PriuStatus::Ok);
    let mut again = vec![0.0; dim];
    let s = unsafe { priu_engine_update(reloaded, PriuMethod::Priu, removed.as_ptr(), 3, again.as_mut_ptr(), dim, ptr::null_mut()) };
    assert_eq!(s, PriuStatus::Ok);
    assert_eq!(again, fast);

    unsafe {
        priu_engine_free(reloaded);
        priu_engine_free(engine);
        priu_dataset_free(ds);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let ds = dataset(50, 3);
    let mut engine = ptr::null_mut();
    unsafe {
        assert_eq!(priu_engine_train(ptr::null(), &hp(), ptr::null(), &mut engine), PriuStatus::NullArgument);
        let mut bad = hp();
        bad.batch_size = 0;
        assert_eq!(priu_engine_train(ds, &bad, ptr::null(), &mut engine), PriuStatus::Config);
        assert!(!last_error().is_empty());
        assert_eq!(priu_engine_train(ds, &hp(), ptr::null(), &mut engine), PriuStatus::Ok);

        let mut w = [0.0; 2];
        assert_eq!(priu_engine_trained(engine, w.as_mut_ptr(), 2), PriuStatus::BufferSize);
        assert!(last_error().contains("2"));
        let mut w = [0.0; 3];
        let out_of_range = [50u32];
        let s = priu_engine_update(engine, PriuMethod::Priu, out_of_range.as_ptr(), 1, w.as_mut_ptr(), 3, ptr::null_mut());
        assert_eq!(s, PriuStatus::Config);
        let s = priu_engine_update(engine, PriuMethod::Priu, ptr::null(), 2, w.as_mut_ptr(), 3, ptr::null_mut());
        assert_eq!(s, PriuStatus::NullArgument);

        let missing = CString::new("/nonexistent/dir/x.priu").unwrap();
        let mut other = ptr::null_mut();
        assert_eq!(priu_engine_load(ds, missing.as_ptr(), &mut other), PriuStatus::Io);

        let mut md = ptr::null_mut();
        let x = [0.0; 4];
        let y = [0.0; 2];
        let s = priu_dataset_from_dense(x.as_ptr(), 2, 2, y.as_ptr(), PriuModelKind::Multinomial, 1, &mut md);
        assert_eq!(s, PriuStatus::Config);

        priu_engine_free(engine);
        priu_dataset_free(ds);
        priu_engine_free(ptr::null_mut());
        priu_dataset_free(ptr::null_mut());
    }
}

#[test]
fn version_matches_package() {
    let v = unsafe { CStr::from_ptr(priu_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
