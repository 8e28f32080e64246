//! C ABI for rbpasta.
//!
//! Every fallible function returns an [`RbpStatus`]; on failure a message is
//! kept per thread and read with [`rbp_last_error_message`]. Rule matrices
//! are opaque handles released with [`rbp_rules_free`], strings returned by
//! the library are released with [`rbp_string_free`]. Panics never cross
//! the boundary; they surface as `RBP_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use rbpasta::attention::{apply_rules, AttentionVector};
use rbpasta::classes::{load_class_file, partition_by_rarity, ClassId};
use rbpasta::eval::{average_precision, evaluate, iou, BBox, Detection, GtPair, Setting};
use rbpasta::io::read_jsonl;
use rbpasta::parts::NUM_PARTS;
use rbpasta::rules::{booleanize, rule_row_mean, RuleKind, RuleMatrix};
use rbpasta::Error;

/// Number of body parts in every rule row and attention vector.
pub const RBP_NUM_PARTS: usize = 10;

const _: () = assert!(RBP_NUM_PARTS == NUM_PARTS);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RbpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Duplicate = 4,
    NotFound = 5,
    Domain = 6,
    Coverage = 7,
    InvalidKind = 8,
    Shape = 9,
    Fusion = 10,
    EmptyPool = 11,
    Divergence = 12,
    Numeric = 13,
    Undefined = 14,
    Config = 15,
    Io = 16,
    Panic = 17,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RbpRuleKind {
    Decimal = 0,
    Boolean = 1,
    AllOnes = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RbpSetting {
    Default = 0,
    KnownObject = 1,
}

/// Opaque rule matrix handle.
pub struct RbpRuleMatrix {
    inner: RuleMatrix,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(RbpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Parse { .. } => RbpStatus::Parse,
            Error::Duplicate(_) => RbpStatus::Duplicate,
            Error::NotFound(_) => RbpStatus::NotFound,
            Error::Domain(_) => RbpStatus::Domain,
            Error::Coverage(_) => RbpStatus::Coverage,
            Error::InvalidKind(_) => RbpStatus::InvalidKind,
            Error::Shape(_) => RbpStatus::Shape,
            Error::Fusion(_) => RbpStatus::Fusion,
            Error::EmptyPool(_) => RbpStatus::EmptyPool,
            Error::Divergence { .. } => RbpStatus::Divergence,
            Error::Numeric(_) => RbpStatus::Numeric,
            Error::Undefined(_) => RbpStatus::Undefined,
            Error::Config(_) => RbpStatus::Config,
            Error::Io { .. } => RbpStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior nuls removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RbpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RbpStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let what = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {what}"));
            RbpStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(RbpStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(RbpStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn matrix_arg<'a>(p: *const RbpRuleMatrix) -> Result<&'a RuleMatrix, Failure> {
    p.as_ref().map(|m| &m.inner).ok_or_else(|| null("rule matrix"))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|e| Failure(RbpStatus::Numeric, format!("string has an interior nul: {e}")))
}

unsafe fn parts_arg(p: *const f64, what: &str) -> Result<[f64; NUM_PARTS], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let mut row = [0.0; NUM_PARTS];
    row.copy_from_slice(std::slice::from_raw_parts(p, NUM_PARTS));
    Ok(row)
}

unsafe fn box_arg(p: *const f64, what: &str) -> Result<BBox, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let c = std::slice::from_raw_parts(p, 4);
    Ok(BBox::new(c[0], c[1], c[2], c[3]))
}

/// Message of the last failed call on this thread, or null if none has
/// failed yet. Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rbp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Parses a rules file (JSON text) into a new handle.
///
/// # Safety
/// `json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rbp_rules_from_json(json: *const c_char, out: *mut *mut RbpRuleMatrix) -> RbpStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        let inner = RuleMatrix::from_json_str(text, "<ffi>")?;
        write_out(out, Box::into_raw(Box::new(RbpRuleMatrix { inner })), "out")
    })
}

/// Loads a rules file from `path`.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rbp_rules_load(path: *const c_char, out: *mut *mut RbpRuleMatrix) -> RbpStatus {
    guard(|| {
        let inner = RuleMatrix::load(Path::new(str_arg(path, "path")?))?;
        write_out(out, Box::into_raw(Box::new(RbpRuleMatrix { inner })), "out")
    })
}

/// Serializes the matrix; free the result with [`rbp_string_free`].
///
/// # Safety
/// `matrix` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rbp_rules_to_json(matrix: *const RbpRuleMatrix, out: *mut *mut c_char) -> RbpStatus {
    guard(|| {
        let m = matrix_arg(matrix)?;
        write_out(out, c_string(m.to_json())?, "out")
    })
}

/// Thresholds a decimal matrix into a new boolean handle.
///
/// # Safety
/// `matrix` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rbp_rules_booleanize(
    matrix: *const RbpRuleMatrix,
    threshold: f64,
    out: *mut *mut RbpRuleMatrix,
) -> RbpStatus {
    guard(|| {
        let inner = booleanize(matrix_arg(matrix)?, threshold)?;
        write_out(out, Box::into_raw(Box::new(RbpRuleMatrix { inner })), "out")
    })
}

/// # Safety
/// `matrix` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rbp_rules_kind(matrix: *const RbpRuleMatrix, out: *mut RbpRuleKind) -> RbpStatus {
    guard(|| {
        let kind = match matrix_arg(matrix)?.kind {
            RuleKind::Decimal => RbpRuleKind::Decimal,
            RuleKind::Boolean => RbpRuleKind::Boolean,
            RuleKind::AllOnes => RbpRuleKind::AllOnes,
        };
        write_out(out, kind, "out")
    })
}

/// Number of class rows.
///
/// # Safety
/// `matrix` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rbp_rules_len(matrix: *const RbpRuleMatrix, out: *mut usize) -> RbpStatus {
    guard(|| write_out(out, matrix_arg(matrix)?.len(), "out"))
}

/// Copies the row of `class_id` into `out`, which holds [`RBP_NUM_PARTS`] doubles.
///
/// # Safety
/// `matrix` must be a live handle; `out` must point to 10 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn rbp_rules_row(matrix: *const RbpRuleMatrix, class_id: u32, out: *mut f64) -> RbpStatus {
    guard(|| {
        let row = matrix_arg(matrix)?.require_row(ClassId(class_id))?;
        if out.is_null() {
            return Err(null("out"));
        }
        std::slice::from_raw_parts_mut(out, NUM_PARTS).copy_from_slice(row);
        Ok(())
    })
}

/// # Safety
/// `matrix` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rbp_rules_row_mean(matrix: *const RbpRuleMatrix, class_id: u32, out: *mut f64) -> RbpStatus {
    guard(|| write_out(out, rule_row_mean(matrix_arg(matrix)?, ClassId(class_id))?, "out"))
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `matrix` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rbp_rules_free(matrix: *mut RbpRuleMatrix) {
    if !matrix.is_null() {
        drop(Box::from_raw(matrix));
    }
}

/// Releases a string returned by this library; null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rbp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Element-wise product of an attention vector and a rule row, all of
/// length [`RBP_NUM_PARTS`]. Weights outside [0, 1] are a domain error.
///
/// # Safety
/// `attention` and `rule_row` must point to 10 doubles, `out` to 10 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn rbp_apply_rules(attention: *const f64, rule_row: *const f64, out: *mut f64) -> RbpStatus {
    guard(|| {
        let a = AttentionVector(parts_arg(attention, "attention")?);
        let r = parts_arg(rule_row, "rule_row")?;
        let m = apply_rules(&a, &r)?;
        if out.is_null() {
            return Err(null("out"));
        }
        std::slice::from_raw_parts_mut(out, NUM_PARTS).copy_from_slice(&m.0);
        Ok(())
    })
}

/// IoU of two `[x1, y1, x2, y2]` boxes.
///
/// # Safety
/// `a` and `b` must point to 4 doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rbp_iou(a: *const f64, b: *const f64, out: *mut f64) -> RbpStatus {
    guard(|| write_out(out, iou(&box_arg(a, "a")?, &box_arg(b, "b")?)?, "out"))
}

/// All-points interpolated AP of ranked TP flags. `RBP_STATUS_UNDEFINED`
/// when `n_gt` is 0.
///
/// # Safety
/// `flags` must point to `n` bools (may be null when `n` is 0); `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rbp_average_precision(flags: *const bool, n: usize, n_gt: usize, out: *mut f64) -> RbpStatus {
    guard(|| {
        let flags = match n {
            0 => &[][..],
            _ if flags.is_null() => return Err(null("flags")),
            _ => std::slice::from_raw_parts(flags, n),
        };
        let ap = average_precision(flags, n_gt)
            .ok_or_else(|| Failure(RbpStatus::Undefined, "AP is undefined without ground truth".into()))?;
        write_out(out, ap, "out")
    })
}

/// Evaluates a detections file against a GT file and returns the report
/// JSON; free it with [`rbp_string_free`].
///
/// # Safety
/// Paths must be nul-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rbp_evaluate_files(
    classes_csv: *const c_char,
    detections_jsonl: *const c_char,
    gt_jsonl: *const c_char,
    setting: RbpSetting,
    rarity_threshold: u32,
    out: *mut *mut c_char,
) -> RbpStatus {
    guard(|| {
        let table = load_class_file(Path::new(str_arg(classes_csv, "classes_csv")?))?;
        let dets: Vec<Detection> = read_jsonl(Path::new(str_arg(detections_jsonl, "detections_jsonl")?))?;
        let gts: Vec<GtPair> = read_jsonl(Path::new(str_arg(gt_jsonl, "gt_jsonl")?))?;
        let setting = match setting {
            RbpSetting::Default => Setting::Default,
            RbpSetting::KnownObject => Setting::KnownObject,
        };
        let partition = partition_by_rarity(&table, rarity_threshold);
        let report = evaluate(&dets, &gts, &table, &partition, setting)?;
        write_out(out, c_string(report.to_json())?, "out")
    })
}
