//! C interface to koos-core.
//!
//! Objects are opaque handles created by `*_read`/`*_parse`/`*_load`
//! functions and released with the matching `*_free`. Every fallible call
//! returns a `KoosStatus`; on failure `koos_last_error_message` describes
//! the most recent error on the calling thread. Handles may be shared
//! between threads for reading.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use koos_core::atlas::{load_atlas, AtlasConfig};
use koos_core::features::{extract_case, FeatureError, FeatureVector, FEATURE_COUNT};
use koos_core::forest::{load_model_file, ForestModel};
use koos_core::metrics::evaluate;
use koos_core::nifti::{read_volume_file, LabelVolume};
use koos_core::phantom::phantom_atlas;

/// Length of a feature vector.
pub const KOOS_FEATURE_COUNT: usize = 9;
const _: () = assert!(KOOS_FEATURE_COUNT == FEATURE_COUNT);
/// Number of grades.
pub const KOOS_GRADE_COUNT: usize = 4;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KoosStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    MissingVs = 5,
    Model = 6,
    Panic = 99,
}

pub struct KoosVolume {
    inner: LabelVolume,
}

pub struct KoosAtlas {
    inner: AtlasConfig,
}

pub struct KoosModel {
    inner: ForestModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    let c = CString::new(msg).expect("interior NULs replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(KoosStatus, String);

impl Fail {
    fn new(status: KoosStatus, msg: impl std::fmt::Display) -> Self {
        Fail(status, msg.to_string())
    }
}

/// Runs `f`, turning errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> KoosStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KoosStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal error (panic)");
            KoosStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail::new(KoosStatus::NullArgument, format!("{name} is NULL")))
    } else {
        Ok(())
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    non_null(p, name)?;
    CStr::from_ptr(p).to_str().map_err(|_| Fail::new(KoosStatus::InvalidArgument, format!("{name} is not valid UTF-8")))
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn koos_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn koos_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Reads a NIfTI-1 label volume (`.nii` or `.nii.gz`).
#[no_mangle]
pub unsafe extern "C" fn koos_volume_read(path: *const c_char, out: *mut *mut KoosVolume) -> KoosStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = str_arg(path, "path")?;
        let inner = read_volume_file(path).map_err(|e| {
            let status = match e {
                koos_core::nifti::NiftiError::Io(_) => KoosStatus::Io,
                _ => KoosStatus::Format,
            };
            Fail::new(status, format!("{path}: {e}"))
        })?;
        *out = Box::into_raw(Box::new(KoosVolume { inner }));
        Ok(())
    })
}

/// Builds a volume from `dims[0]*dims[1]*dims[2]` labels, x fastest, with a
/// diagonal affine from `spacing`.
#[no_mangle]
pub unsafe extern "C" fn koos_volume_from_labels(
    dims: *const usize,
    spacing: *const f64,
    labels: *const u16,
    len: usize,
    out: *mut *mut KoosVolume,
) -> KoosStatus {
    guard(|| {
        non_null(dims, "dims")?;
        non_null(spacing, "spacing")?;
        non_null(labels, "labels")?;
        non_null(out, "out")?;
        let d = [*dims, *dims.add(1), *dims.add(2)];
        let s = [*spacing, *spacing.add(1), *spacing.add(2)];
        let expected = d.iter().try_fold(1usize, |acc, &n| acc.checked_mul(n));
        if expected != Some(len) {
            return Err(Fail::new(KoosStatus::InvalidArgument, format!("{len} labels do not fill dims {d:?}")));
        }
        let labels = std::slice::from_raw_parts(labels, len).to_vec();
        let inner = LabelVolume::with_spacing(d, s, labels).map_err(|e| Fail::new(KoosStatus::InvalidArgument, e))?;
        *out = Box::into_raw(Box::new(KoosVolume { inner }));
        Ok(())
    })
}

/// Writes the three grid dimensions to `dims_out`.
#[no_mangle]
pub unsafe extern "C" fn koos_volume_dims(vol: *const KoosVolume, dims_out: *mut usize) -> KoosStatus {
    guard(|| {
        non_null(vol, "vol")?;
        non_null(dims_out, "dims_out")?;
        for (k, d) in (*vol).inner.dims().into_iter().enumerate() {
            *dims_out.add(k) = d;
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn koos_volume_free(vol: *mut KoosVolume) {
    if !vol.is_null() {
        drop(Box::from_raw(vol));
    }
}

/// Parses an atlas config (`Name = id, id` lines).
#[no_mangle]
pub unsafe extern "C" fn koos_atlas_parse(text: *const c_char, out: *mut *mut KoosAtlas) -> KoosStatus {
    guard(|| {
        non_null(out, "out")?;
        let text = str_arg(text, "text")?;
        let inner = load_atlas(text).map_err(|e| Fail::new(KoosStatus::Format, e))?;
        *out = Box::into_raw(Box::new(KoosAtlas { inner }));
        Ok(())
    })
}

/// The atlas matching volumes written by the phantom generator.
#[no_mangle]
pub unsafe extern "C" fn koos_atlas_phantom(out: *mut *mut KoosAtlas) -> KoosStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = Box::into_raw(Box::new(KoosAtlas { inner: phantom_atlas() }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn koos_atlas_free(atlas: *mut KoosAtlas) {
    if !atlas.is_null() {
        drop(Box::from_raw(atlas));
    }
}

/// Computes the `KOOS_FEATURE_COUNT` features of one case into `out`.
/// Returns `KOOS_STATUS_MISSING_VS` when the volume has no tumour voxels.
#[no_mangle]
pub unsafe extern "C" fn koos_extract_features(
    vol: *const KoosVolume,
    atlas: *const KoosAtlas,
    out: *mut f64,
) -> KoosStatus {
    guard(|| {
        non_null(vol, "vol")?;
        non_null(atlas, "atlas")?;
        non_null(out, "out")?;
        let f = extract_case(&(*vol).inner, &(*atlas).inner).map_err(|e| match e {
            FeatureError::MissingVS => Fail::new(KoosStatus::MissingVs, e),
            e => Fail::new(KoosStatus::Format, e),
        })?;
        std::slice::from_raw_parts_mut(out, FEATURE_COUNT).copy_from_slice(&f.to_array());
        Ok(())
    })
}

/// Loads a model file written by `koos train` (plain or gzip JSON).
#[no_mangle]
pub unsafe extern "C" fn koos_model_load(path: *const c_char, out: *mut *mut KoosModel) -> KoosStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = str_arg(path, "path")?;
        let inner = load_model_file(path.as_ref()).map_err(|e| {
            let status = match e {
                koos_core::forest::ForestError::Io(_) => KoosStatus::Io,
                _ => KoosStatus::Model,
            };
            Fail::new(status, format!("{path}: {e}"))
        })?;
        *out = Box::into_raw(Box::new(KoosModel { inner }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn koos_model_free(model: *mut KoosModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

#[no_mangle]
pub unsafe extern "C" fn koos_model_tree_count(model: *const KoosModel) -> usize {
    if model.is_null() {
        0
    } else {
        (*model).inner.trees().len()
    }
}

unsafe fn features_arg(p: *const f64) -> Result<FeatureVector, Fail> {
    non_null(p, "features")?;
    let mut a = [0.0; FEATURE_COUNT];
    a.copy_from_slice(std::slice::from_raw_parts(p, FEATURE_COUNT));
    Ok(FeatureVector::from_array(a))
}

/// Predicts the grade (1 to 4) of one feature vector.
#[no_mangle]
pub unsafe extern "C" fn koos_model_predict(
    model: *const KoosModel,
    features: *const f64,
    grade_out: *mut u8,
) -> KoosStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(grade_out, "grade_out")?;
        let f = features_arg(features)?;
        *grade_out = (*model).inner.predict(&f).get();
        Ok(())
    })
}

/// Writes the fraction of trees voting for each grade to `out[0..4]`.
#[no_mangle]
pub unsafe extern "C" fn koos_model_predict_distribution(
    model: *const KoosModel,
    features: *const f64,
    out: *mut f64,
) -> KoosStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        let f = features_arg(features)?;
        let d = (*model).inner.predict_distribution(&f);
        std::slice::from_raw_parts_mut(out, KOOS_GRADE_COUNT).copy_from_slice(&d);
        Ok(())
    })
}

/// Macro-averaged MAE of `n` predicted/true grade pairs. When
/// `per_class_out` is not NULL it receives four per-grade MAEs, NaN for
/// grades absent from the truth.
#[no_mangle]
pub unsafe extern "C" fn koos_evaluate(
    predicted: *const u8,
    truth: *const u8,
    n: usize,
    ma_mae_out: *mut f64,
    per_class_out: *mut f64,
) -> KoosStatus {
    guard(|| {
        non_null(ma_mae_out, "ma_mae_out")?;
        if n == 0 {
            return Err(Fail::new(KoosStatus::InvalidArgument, "no cases to evaluate"));
        }
        non_null(predicted, "predicted")?;
        non_null(truth, "truth")?;
        let p = std::slice::from_raw_parts(predicted, n);
        let t = std::slice::from_raw_parts(truth, n);
        let pairs: Vec<(u8, u8)> = p.iter().copied().zip(t.iter().copied()).collect();
        let report = evaluate(&pairs).map_err(|e| Fail::new(KoosStatus::InvalidArgument, e))?;
        *ma_mae_out = report.ma_mae;
        if !per_class_out.is_null() {
            for (k, m) in report.per_class_mae.iter().enumerate() {
                *per_class_out.add(k) = m.unwrap_or(f64::NAN);
            }
        }
        Ok(())
    })
}
