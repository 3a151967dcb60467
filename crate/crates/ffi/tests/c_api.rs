use std::ffi::{CStr, CString};
use std::ptr;

use koos_core::features::extract_case;
use koos_core::forest::{save_model_file, train_matrix, ForestParams};
use koos_core::geometry::Side;
use koos_core::grade::Grade;
use koos_core::nifti::write_volume_file;
use koos_core::phantom::{generate_phantom, phantom_atlas, PhantomSpec, PHANTOM_ATLAS_TEXT};
use koos_ffi::*;

fn last_error() -> String {
    let p = koos_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(koos_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn read_volume_and_extract_features() {
    let phantom = generate_phantom(&PhantomSpec::new(Grade::new(3).unwrap(), Side::Left, 4.6, 0.0, 5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("case.nii.gz");
    write_volume_file(&path, &phantom.volume).unwrap();
    let expected = extract_case(&phantom.volume, &phantom_atlas()).unwrap().to_array();

    unsafe {
        let mut vol = ptr::null_mut();
        let p = cstr(path.to_str().unwrap());
        assert_eq!(koos_volume_read(p.as_ptr(), &mut vol), KoosStatus::Ok);
        let mut dims = [0usize; 3];
        assert_eq!(koos_volume_dims(vol, dims.as_mut_ptr()), KoosStatus::Ok);
        assert_eq!(dims, [64, 64, 40]);

        let mut atlas = ptr::null_mut();
        let text = cstr(PHANTOM_ATLAS_TEXT);
        assert_eq!(koos_atlas_parse(text.as_ptr(), &mut atlas), KoosStatus::Ok);
        let mut features = [0.0; KOOS_FEATURE_COUNT];
        assert_eq!(koos_extract_features(vol, atlas, features.as_mut_ptr()), KoosStatus::Ok);
        assert_eq!(features, expected);

        koos_atlas_free(atlas);
        koos_volume_free(vol);
    }
}

#[test]
fn errors_carry_status_and_message() {
    unsafe {
        let mut vol = ptr::null_mut();
        let missing = cstr("/nonexistent/volume.nii");
        assert_eq!(koos_volume_read(missing.as_ptr(), &mut vol), KoosStatus::Io);
        assert!(last_error().contains("/nonexistent/volume.nii"));
        assert!(vol.is_null());

        let dir = tempfile::tempdir().unwrap();
        let junk = dir.path().join("junk.nii");
        std::fs::write(&junk, [0u8; 400]).unwrap();
        let junk = cstr(junk.to_str().unwrap());
        assert_eq!(koos_volume_read(junk.as_ptr(), &mut vol), KoosStatus::Format);

        assert_eq!(koos_volume_read(ptr::null(), &mut vol), KoosStatus::NullArgument);
        assert!(last_error().contains("path"));

        let mut atlas = ptr::null_mut();
        let bad = cstr("VS = 1\nPons = x\n");
        assert_eq!(koos_atlas_parse(bad.as_ptr(), &mut atlas), KoosStatus::Format);
        assert!(last_error().contains("line 2"));

        let mut model = ptr::null_mut();
        let bad = dir.path().join("model.json");
        std::fs::write(&bad, "{\"trees\":[]}").unwrap();
        let bad = cstr(bad.to_str().unwrap());
        assert_eq!(koos_model_load(bad.as_ptr(), &mut model), KoosStatus::Model);

        // Freeing NULL is a no-op.
        koos_volume_free(ptr::null_mut());
        koos_atlas_free(ptr::null_mut());
        koos_model_free(ptr::null_mut());
    }
}

#[test]
fn volume_without_tumour_reports_missing_vs() {
    unsafe {
        let dims = [4usize, 4, 4];
        let spacing = [1.0, 1.0, 1.0];
        let mut labels = [0u16; 64];
        labels[5] = 3;
        let mut vol = ptr::null_mut();
        assert_eq!(
            koos_volume_from_labels(dims.as_ptr(), spacing.as_ptr(), labels.as_ptr(), 64, &mut vol),
            KoosStatus::Ok
        );
        assert_eq!(
            koos_volume_from_labels(dims.as_ptr(), spacing.as_ptr(), labels.as_ptr(), 63, &mut ptr::null_mut()),
            KoosStatus::InvalidArgument
        );
        let mut atlas = ptr::null_mut();
        assert_eq!(koos_atlas_phantom(&mut atlas), KoosStatus::Ok);
        let mut features = [0.0; KOOS_FEATURE_COUNT];
        assert_eq!(koos_extract_features(vol, atlas, features.as_mut_ptr()), KoosStatus::MissingVs);
        koos_atlas_free(atlas);
        koos_volume_free(vol);
    }
}

#[test]
fn model_prediction_matches_the_library() {
    let x: Vec<[f64; 9]> = (0..12).map(|i| [i as f64, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, (i % 3) as f64]).collect();
    let y: Vec<Grade> = (0..12).map(|i| Grade::new(if i < 6 { 1 } else { 4 }).unwrap()).collect();
    let model = train_matrix(&x, &y, &ForestParams { n_trees: 15, seed: 2, ..ForestParams::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json.gz");
    save_model_file(&model, &path).unwrap();

    unsafe {
        let mut handle = ptr::null_mut();
        let p = cstr(path.to_str().unwrap());
        assert_eq!(koos_model_load(p.as_ptr(), &mut handle), KoosStatus::Ok);
        assert_eq!(koos_model_tree_count(handle), 15);
        for row in &x {
            let mut grade = 0u8;
            assert_eq!(koos_model_predict(handle, row.as_ptr(), &mut grade), KoosStatus::Ok);
            assert_eq!(grade, model.predict_sample(row).get());
            let mut dist = [0.0; KOOS_GRADE_COUNT];
            assert_eq!(koos_model_predict_distribution(handle, row.as_ptr(), dist.as_mut_ptr()), KoosStatus::Ok);
            assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        koos_model_free(handle);
    }
}

#[test]
fn evaluate_through_the_c_api() {
    let pred = [2u8, 1, 2];
    let truth = [1u8, 1, 2];
    let mut ma = 0.0;
    let mut per = [0.0; 4];
    unsafe {
        assert_eq!(koos_evaluate(pred.as_ptr(), truth.as_ptr(), 3, &mut ma, per.as_mut_ptr()), KoosStatus::Ok);
        assert_eq!(ma, 0.25);
        assert_eq!(&per[..2], &[0.5, 0.0]);
        assert!(per[2].is_nan() && per[3].is_nan());
        assert_eq!(
            koos_evaluate(pred.as_ptr(), truth.as_ptr(), 0, &mut ma, ptr::null_mut()),
            KoosStatus::InvalidArgument
        );
        let bad = [7u8];
        assert_eq!(
            koos_evaluate(bad.as_ptr(), truth.as_ptr(), 1, &mut ma, ptr::null_mut()),
            KoosStatus::InvalidArgument
        );
        assert!(last_error().contains("outside 1..4"));
    }
}

#[test]
fn header_is_current_and_compiles() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/koos.h")).unwrap();
    for name in [
        "koos_volume_read",
        "koos_extract_features",
        "koos_model_predict",
        "KOOS_STATUS_MISSING_VS",
        "typedef struct KoosModel KoosModel",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
    let Ok(cc) = which_cc() else { return };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"koos.h\"\nint main(void) { KoosModel *m = 0; double f[KOOS_FEATURE_COUNT] = {0}; uint8_t g; \
         return koos_model_predict(m, f, &g) == KOOS_STATUS_NULL_ARGUMENT ? 0 : 1; }\n",
    )
    .unwrap();
    let status = std::process::Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I", concat!(env!("CARGO_MANIFEST_DIR"), "/include")])
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success());
}

fn which_cc() -> Result<&'static str, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if std::process::Command::new(cc).arg("--version").output().is_ok_and(|o| o.status.success()) {
            return Ok(cc);
        }
    }
    Err(())
}
