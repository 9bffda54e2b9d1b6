use std::ffi::{CStr, CString};
use std::ptr;

use simrecon::synthetic::{FaceModel, FaceModelSpec};
use simrecon::{fit_pca, save_basis};
use simrecon_ffi::*;

fn last_error() -> String {
    let p = simrecon_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

struct Setup {
    _dir: tempfile::TempDir,
    basis: *mut SimreconBasis,
    embedder: *mut SimreconEmbedder,
    target: Vec<f32>,
}

impl Drop for Setup {
    fn drop(&mut self) {
        unsafe {
            simrecon_basis_free(self.basis);
            simrecon_embedder_free(self.embedder);
        }
    }
}

fn setup(rank: usize) -> Setup {
    let model = FaceModel::new(FaceModelSpec::default());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("basis.bin");
    save_basis(&fit_pca(&model.training_set(64), rank).unwrap(), &path).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut basis = ptr::null_mut();
    let mut embedder = ptr::null_mut();
    unsafe {
        assert_eq!(simrecon_basis_load(cpath.as_ptr(), &mut basis), SimreconStatus::Ok);
        assert_eq!(
            simrecon_embedder_new(1, 32, 16, 16, 3, false, &mut embedder),
            SimreconStatus::Ok
        );
    }
    Setup {
        _dir: dir,
        basis,
        embedder,
        target: model.heldout(0).into_pixels(),
    }
}

#[test]
fn basis_shape_and_round_trip() {
    let s = setup(8);
    let (mut w, mut h, mut c, mut k) = (0, 0, 0, 0);
    unsafe {
        assert_eq!(
            simrecon_basis_shape(s.basis, &mut w, &mut h, &mut c, &mut k),
            SimreconStatus::Ok
        );
    }
    assert_eq!((w, h, c, k), (16, 16, 3, 8));
    let coords: Vec<f64> = (0..8).map(|i| i as f64 * 0.25 - 1.0).collect();
    let mut px = vec![0f32; 768];
    let mut back = vec![0f64; 8];
    unsafe {
        assert_eq!(
            simrecon_basis_synthesize(s.basis, coords.as_ptr(), 8, px.as_mut_ptr(), 768),
            SimreconStatus::Ok
        );
        assert_eq!(
            simrecon_basis_project(s.basis, px.as_ptr(), 768, back.as_mut_ptr(), 8),
            SimreconStatus::Ok
        );
    }
    for (a, b) in coords.iter().zip(&back) {
        assert!((a - b).abs() < 1e-4);
    }
}

#[test]
fn errors_carry_status_and_message() {
    let mut basis = ptr::null_mut();
    let missing = CString::new("/nonexistent/basis.bin").unwrap();
    unsafe {
        assert_eq!(simrecon_basis_load(missing.as_ptr(), &mut basis), SimreconStatus::Io);
        assert!(basis.is_null());
        assert!(last_error().contains("/nonexistent/basis.bin"));
        assert_eq!(
            simrecon_basis_load(ptr::null(), &mut basis),
            SimreconStatus::NullPointer
        );
        assert!(last_error().contains("path"));
    }
    let s = setup(4);
    let mut px = vec![0f32; 10];
    let coords = [0.0; 4];
    unsafe {
        assert_eq!(
            simrecon_basis_synthesize(s.basis, coords.as_ptr(), 4, px.as_mut_ptr(), 10),
            SimreconStatus::InvalidArgument
        );
    }
}

#[test]
fn embed_and_cosine() {
    let s = setup(4);
    let n = unsafe { simrecon_embedder_output_dim(s.embedder) };
    assert_eq!(n, 32);
    let mut e = vec![0f64; n];
    let mut cos = 0.0;
    unsafe {
        assert_eq!(
            simrecon_embed(s.embedder, s.target.as_ptr(), s.target.len(), e.as_mut_ptr(), n),
            SimreconStatus::Ok
        );
        assert_eq!(simrecon_cosine(e.as_ptr(), e.as_ptr(), n, &mut cos), SimreconStatus::Ok);
    }
    assert_eq!(cos, 1.0);
    let zero = vec![0f64; n];
    unsafe {
        assert_eq!(
            simrecon_cosine(e.as_ptr(), zero.as_ptr(), n, &mut cos),
            SimreconStatus::Oracle
        );
    }
}

#[test]
fn reconstruct_through_the_c_abi() {
    let s = setup(8);
    let id = CString::new("t").unwrap();
    let mut oracle = ptr::null_mut();
    unsafe {
        assert_eq!(
            simrecon_oracle_new_cosine(
                s.embedder,
                id.as_ptr(),
                s.target.as_ptr(),
                s.target.len(),
                SIMRECON_UNLIMITED,
                &mut oracle
            ),
            SimreconStatus::Ok
        );
    }
    let mut cfg = simrecon_optimizer_config_default();
    assert_eq!((cfg.n_restarts, cfg.restart_iters, cfg.main_iters), (10, 500, 15000));
    cfg.n_restarts = 2;
    cfg.restart_iters = 10;
    cfg.main_iters = 200;
    let mut coords = vec![0f64; 8];
    let mut px = vec![0f32; 768];
    let mut used = 0;
    unsafe {
        assert_eq!(
            simrecon_reconstruct(
                s.basis,
                oracle,
                &cfg,
                coords.as_mut_ptr(),
                8,
                px.as_mut_ptr(),
                768,
                &mut used
            ),
            SimreconStatus::Ok
        );
        assert_eq!(used, simrecon_required_queries(2, 10, 200));
        assert_eq!(simrecon_oracle_queries_used(oracle), used);
        let mut score = 0.0;
        assert_eq!(
            simrecon_oracle_query(oracle, 16, 16, 3, px.as_ptr(), &mut score),
            SimreconStatus::Ok
        );
        assert!(score > 0.9, "{score}");
        simrecon_oracle_free(oracle);
    }
}

#[test]
fn budget_shortfall_is_reported() {
    let s = setup(4);
    let id = CString::new("t").unwrap();
    let mut oracle = ptr::null_mut();
    let mut cfg = simrecon_optimizer_config_default();
    cfg.n_restarts = 1;
    cfg.restart_iters = 5;
    cfg.main_iters = 5;
    let mut coords = vec![0f64; 4];
    let mut px = vec![0f32; 768];
    unsafe {
        simrecon_oracle_new_cosine(
            s.embedder,
            id.as_ptr(),
            s.target.as_ptr(),
            s.target.len(),
            10,
            &mut oracle,
        );
        let st = simrecon_reconstruct(
            s.basis,
            oracle,
            &cfg,
            coords.as_mut_ptr(),
            4,
            px.as_mut_ptr(),
            768,
            ptr::null_mut(),
        );
        assert_eq!(st, SimreconStatus::BudgetExhausted);
        assert_eq!(simrecon_oracle_queries_used(oracle), 0);
        simrecon_oracle_free(oracle);
    }
}

#[test]
fn kfold_and_philox_match_the_library() {
    let scores: Vec<f64> = (0..40)
        .map(|i| if i % 2 == 0 { 0.8 } else { 0.1 } + i as f64 * 1e-3)
        .collect();
    let same: Vec<u8> = (0..40).map(|i| u8::from(i % 2 == 0)).collect();
    let mut mean = 0.0;
    let mut per = vec![0f64; 4];
    unsafe {
        assert_eq!(
            simrecon_kfold_accuracy(scores.as_ptr(), same.as_ptr(), 40, 4, &mut mean, per.as_mut_ptr()),
            SimreconStatus::Ok
        );
    }
    assert_eq!(mean, 1.0);
    assert_eq!(per, vec![1.0; 4]);
    let bad = [2u8; 40];
    unsafe {
        assert_eq!(
            simrecon_kfold_accuracy(scores.as_ptr(), bad.as_ptr(), 40, 4, &mut mean, ptr::null_mut()),
            SimreconStatus::InvalidArgument
        );
    }
    assert_eq!(simrecon_philox_normal(3, 4, 5), simrecon::rng::normal(3, 4, 5));
    let v = unsafe { CStr::from_ptr(simrecon_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn remote_oracle_handle() {
    use std::collections::BTreeMap;
    use std::sync::Arc;
    let model = FaceModel::new(FaceModelSpec::default());
    let emb = Arc::new(simrecon::SyntheticEmbedder::new(1, 32, (16, 16, 3), false));
    let mut enrolled = BTreeMap::new();
    enrolled.insert(simrecon::TargetId::new("t").unwrap(), model.heldout(0));
    let served = simrecon::make_cosine_oracle(emb, &enrolled, None).unwrap();
    let server = simrecon::netbox::serve(Arc::new(served), "127.0.0.1:0", Default::default()).unwrap();
    let addr = CString::new(server.addr().to_string()).unwrap();
    let id = CString::new("t").unwrap();
    let mut oracle = ptr::null_mut();
    let px = model.heldout(0).into_pixels();
    let mut score = 0.0;
    unsafe {
        assert_eq!(
            simrecon_oracle_connect(addr.as_ptr(), id.as_ptr(), 5, &mut oracle),
            SimreconStatus::Ok
        );
        assert_eq!(
            simrecon_oracle_query(oracle, 16, 16, 3, px.as_ptr(), &mut score),
            SimreconStatus::Ok
        );
        assert_eq!(score, 1.0);
        simrecon_oracle_free(oracle);
        let unknown = CString::new("nobody").unwrap();
        assert_eq!(
            simrecon_oracle_connect(addr.as_ptr(), unknown.as_ptr(), 5, &mut oracle),
            SimreconStatus::Oracle
        );
    }
    drop(server);
    let mut o2 = ptr::null_mut();
    unsafe {
        assert_eq!(
            simrecon_oracle_connect(addr.as_ptr(), id.as_ptr(), 5, &mut o2),
            SimreconStatus::Connection
        );
    }
}
