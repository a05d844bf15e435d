//! C ABI over the core library: opaque handles, integer status codes, and a
//! thread-local last-error message. The header is generated into
//! `include/arsq.h` at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use arsq_core::codec::{decode, encode, ActionSpec, ContinuousAction, DiscreteAction};
use arsq_core::config::TrainConfig;
use arsq_core::model::{ArsqModel, RolloutNet, SelectMode};
use arsq_core::trainer;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArsqStatus {
    Ok = 0,
    /// bad argument (null pointer, wrong length, invalid config)
    InvalidArgument = 1,
    /// numerical failure (divergence, non-finite gradients)
    Numerical = 2,
    /// I/O or environment failure
    Io = 3,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &arsq_core::ArsqError) -> ArsqStatus {
    use arsq_core::ArsqError::*;
    match err {
        Divergence(_) | NonFiniteGradient(_) | NonConvergence { .. } => ArsqStatus::Numerical,
        Io(_) => ArsqStatus::Io,
        _ => ArsqStatus::InvalidArgument,
    }
}

/// Last error message for this thread; valid until the next failing call.
#[no_mangle]
pub extern "C" fn arsq_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Opaque discretization lattice handle.
pub struct ArsqActionSpec {
    inner: ActionSpec,
}

/// Opaque trained-policy handle (model plus its sampling stream).
pub struct ArsqPolicy {
    model: ArsqModel,
    rng: ChaCha12Rng,
}

unsafe fn slice_arg<'a, T>(ptr: *const T, len: usize) -> Option<&'a [T]> {
    if ptr.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(ptr, len))
    }
}

unsafe fn path_arg(ptr: *const c_char) -> Option<PathBuf> {
    if ptr.is_null() {
        return None;
    }
    CStr::from_ptr(ptr).to_str().ok().map(PathBuf::from)
}

/// Create a coarse-to-fine action lattice.
///
/// # Safety
/// `low` and `high` must point to `dims` readable f64s; `out` must be a
/// valid location for one pointer.
#[no_mangle]
pub unsafe extern "C" fn arsq_action_spec_new(
    dims: usize,
    low: *const f64,
    high: *const f64,
    bins_per_level: usize,
    levels: usize,
    out: *mut *mut ArsqActionSpec,
) -> ArsqStatus {
    let (Some(low), Some(high)) = (slice_arg(low, dims), slice_arg(high, dims)) else {
        set_error("null bounds pointer");
        return ArsqStatus::InvalidArgument;
    };
    if out.is_null() {
        set_error("null output pointer");
        return ArsqStatus::InvalidArgument;
    }
    match ActionSpec::new(low.to_vec(), high.to_vec(), bins_per_level, levels) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(ArsqActionSpec { inner }));
            ArsqStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            status_of(&e)
        }
    }
}

/// # Safety
/// `spec` must be a pointer from [`arsq_action_spec_new`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn arsq_action_spec_free(spec: *mut ArsqActionSpec) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// Fine bins per dimension (`B^L`).
///
/// # Safety
/// `spec` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn arsq_action_spec_fine_bins(spec: *const ArsqActionSpec) -> usize {
    if spec.is_null() {
        return 0;
    }
    (*spec).inner.fine_bins()
}

/// Discretize a continuous action; writes `dims * levels` digits row-major
/// (dimension outer, level inner).
///
/// # Safety
/// `values` must hold `dims` f64s and `out_indices` room for
/// `dims * levels` u32s; `spec` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn arsq_encode(
    spec: *const ArsqActionSpec,
    values: *const f64,
    values_len: usize,
    out_indices: *mut u32,
    out_len: usize,
) -> ArsqStatus {
    if spec.is_null() || out_indices.is_null() {
        set_error("null pointer");
        return ArsqStatus::InvalidArgument;
    }
    let spec = &(*spec).inner;
    let Some(values) = slice_arg(values, values_len) else {
        set_error("null values pointer");
        return ArsqStatus::InvalidArgument;
    };
    if out_len != spec.dims * spec.levels {
        set_error("output buffer must hold dims * levels entries");
        return ArsqStatus::InvalidArgument;
    }
    match encode(spec, &ContinuousAction::new(values.to_vec())) {
        Ok(action) => {
            let out = std::slice::from_raw_parts_mut(out_indices, out_len);
            for (d, row) in action.indices.iter().enumerate() {
                for (l, &g) in row.iter().enumerate() {
                    out[d * spec.levels + l] = g as u32;
                }
            }
            ArsqStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            status_of(&e)
        }
    }
}

/// Decode multi-level digits back to the fine-bin centers.
///
/// # Safety
/// `indices` must hold `dims * levels` u32s and `out_values` room for
/// `dims` f64s; `spec` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn arsq_decode(
    spec: *const ArsqActionSpec,
    indices: *const u32,
    indices_len: usize,
    out_values: *mut f64,
    out_len: usize,
) -> ArsqStatus {
    if spec.is_null() || out_values.is_null() {
        set_error("null pointer");
        return ArsqStatus::InvalidArgument;
    }
    let spec = &(*spec).inner;
    let Some(indices) = slice_arg(indices, indices_len) else {
        set_error("null indices pointer");
        return ArsqStatus::InvalidArgument;
    };
    if indices_len != spec.dims * spec.levels || out_len != spec.dims {
        set_error("buffer lengths must be dims * levels and dims");
        return ArsqStatus::InvalidArgument;
    }
    let action = DiscreteAction::new(
        (0..spec.dims)
            .map(|d| {
                (0..spec.levels)
                    .map(|l| indices[d * spec.levels + l] as usize)
                    .collect()
            })
            .collect(),
    );
    match decode(spec, &action) {
        Ok(c) => {
            std::slice::from_raw_parts_mut(out_values, out_len).copy_from_slice(&c.values);
            ArsqStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            status_of(&e)
        }
    }
}

fn load_policy(config: &Path, checkpoint: &Path, seed: u64) -> arsq_core::Result<ArsqPolicy> {
    let cfg = TrainConfig::from_file(config)?;
    let model = trainer::load_model(&cfg, checkpoint)?;
    Ok(ArsqPolicy {
        model,
        rng: ChaCha12Rng::seed_from_u64(seed),
    })
}

/// Load a trained policy from a resolved config file and a checkpoint.
///
/// # Safety
/// `config_path` and `checkpoint_path` must be NUL-terminated strings;
/// `out` must be a valid location for one pointer.
#[no_mangle]
pub unsafe extern "C" fn arsq_policy_load(
    config_path: *const c_char,
    checkpoint_path: *const c_char,
    seed: u64,
    out: *mut *mut ArsqPolicy,
) -> ArsqStatus {
    let (Some(config), Some(checkpoint)) = (path_arg(config_path), path_arg(checkpoint_path))
    else {
        set_error("null or non-UTF-8 path");
        return ArsqStatus::InvalidArgument;
    };
    if out.is_null() {
        set_error("null output pointer");
        return ArsqStatus::InvalidArgument;
    }
    match load_policy(&config, &checkpoint, seed) {
        Ok(policy) => {
            *out = Box::into_raw(Box::new(policy));
            ArsqStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            status_of(&e)
        }
    }
}

/// # Safety
/// `policy` must be a pointer from [`arsq_policy_load`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn arsq_policy_free(policy: *mut ArsqPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Observation width the policy expects.
///
/// # Safety
/// `policy` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn arsq_policy_obs_width(policy: *const ArsqPolicy) -> usize {
    if policy.is_null() {
        return 0;
    }
    (*policy).model.layout.obs_width
}

/// Action dimensionality the policy emits.
///
/// # Safety
/// `policy` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn arsq_policy_action_dims(policy: *const ArsqPolicy) -> usize {
    if policy.is_null() {
        return 0;
    }
    (*policy).model.layout.spec.dims
}

/// Select a continuous action for an observation; `greedy = false` samples
/// from the softened policy.
///
/// # Safety
/// `obs` must hold `obs_len` f64s matching the policy's observation width;
/// `out_action` must have room for the policy's action dimensionality.
#[no_mangle]
pub unsafe extern "C" fn arsq_policy_select(
    policy: *mut ArsqPolicy,
    obs: *const f64,
    obs_len: usize,
    greedy: bool,
    out_action: *mut f64,
    out_len: usize,
) -> ArsqStatus {
    if policy.is_null() || out_action.is_null() {
        set_error("null pointer");
        return ArsqStatus::InvalidArgument;
    }
    let policy = &mut *policy;
    let Some(obs) = slice_arg(obs, obs_len) else {
        set_error("null observation pointer");
        return ArsqStatus::InvalidArgument;
    };
    if out_len != policy.model.layout.spec.dims {
        set_error("output buffer must hold one value per action dimension");
        return ArsqStatus::InvalidArgument;
    }
    let mode = if greedy { SelectMode::Greedy } else { SelectMode::Sample };
    let result = policy
        .model
        .select_action(RolloutNet::Current, obs, mode, &mut policy.rng)
        .and_then(|a| decode(&policy.model.layout.spec, &a));
    match result {
        Ok(c) => {
            std::slice::from_raw_parts_mut(out_action, out_len).copy_from_slice(&c.values);
            ArsqStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            status_of(&e)
        }
    }
}

/// Run a full training job from a config file, writing artifacts to
/// `out_dir` (metrics.csv, checkpoint.bin, config_resolved.txt).
///
/// # Safety
/// Both arguments must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn arsq_train_run(
    config_path: *const c_char,
    out_dir: *const c_char,
) -> ArsqStatus {
    let (Some(config), Some(out)) = (path_arg(config_path), path_arg(out_dir)) else {
        set_error("null or non-UTF-8 path");
        return ArsqStatus::InvalidArgument;
    };
    let run = TrainConfig::from_file(&config).and_then(|cfg| trainer::train(&cfg, &out));
    match run {
        Ok(_) => ArsqStatus::Ok,
        Err(e) => {
            set_error(&e.to_string());
            status_of(&e)
        }
    }
}
