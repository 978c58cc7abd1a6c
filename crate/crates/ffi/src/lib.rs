//! C ABI over the hpcsim scenario harness.
//!
//! Handles are opaque and owned by the caller once returned; each has a
//! matching `_free`. Every fallible call returns an `HpcsimStatus` and, on
//! failure, leaves a message for `hpcsim_last_error` on the calling thread.
//! Strings handed out by the library are either borrowed from a handle (valid
//! until it is freed) or owned and released with `hpcsim_string_free`; each
//! function says which.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use hpcsim::harness::config::{self, ScenarioKind};
use hpcsim::harness::scenarios::{self, ScalingRow, ENGINE_VERSION};
use hpcsim::harness::{HarnessError, RunManifest, ScenarioConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HpcsimStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    /// Config failed to parse or validate.
    InvalidConfig = 3,
    Io = 4,
    /// A trace file was malformed.
    Trace = 5,
    /// The simulation itself rejected its inputs.
    Simulation = 6,
    OutOfRange = 7,
    WrongScenario = 8,
    Panic = 9,
}

/// A resolved scenario configuration.
pub struct HpcsimConfig {
    inner: ScenarioConfig,
}

/// The manifest of a finished run.
pub struct HpcsimRun {
    manifest: RunManifest,
    scenario: CString,
    config_sha256: CString,
    output_dir: CString,
    names: Vec<CString>,
}

/// Per-pilot rows of a scaling scenario, kept in memory.
pub struct HpcsimScaling {
    rows: Vec<ScalingRow>,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HpcsimScalingRow {
    pub pilot_nodes: u32,
    pub units_dispatched: u32,
    pub units_done: u32,
    pub generations: u32,
    pub pilot_duration_s: u64,
    pub mean_task_s: f64,
    pub overhead_s: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    // Interior NULs would truncate the message on the C side anyway.
    let msg = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Fail(HpcsimStatus, String);

impl From<HarnessError> for Fail {
    fn from(e: HarnessError) -> Self {
        let status = match &e {
            HarnessError::Invalid(_) | HarnessError::Config { .. } => HpcsimStatus::InvalidConfig,
            HarnessError::Io { .. } => HpcsimStatus::Io,
            HarnessError::Trace { .. } | HarnessError::Csv(_) => HpcsimStatus::Trace,
            HarnessError::Scheduler(_) | HarnessError::Nge(_) => HpcsimStatus::Simulation,
        };
        Fail(status, e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(HpcsimStatus::NullArgument, format!("{what} is null"))
}

/// Run `f`, translating errors and panics into a status plus last-error text.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HpcsimStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HpcsimStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            HpcsimStatus::Panic
        }
    }
}

/// # Safety
/// `s` is null or a NUL-terminated string valid for the call.
unsafe fn str_arg<'a>(s: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Fail(HpcsimStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

fn owned(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map_or(ptr::null_mut(), CString::into_raw)
}

fn cstring(s: &str) -> CString {
    CString::new(s.replace('\0', " ")).expect("no interior nul")
}

/// Message for the most recent failure on this thread, or null. Borrowed;
/// valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn hpcsim_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Engine version string. Static; never free it.
#[no_mangle]
pub extern "C" fn hpcsim_version() -> *const c_char {
    static V: &str = concat!("hpcsim-", env!("CARGO_PKG_VERSION"), "\0");
    debug_assert_eq!(&V[..V.len() - 1], ENGINE_VERSION);
    V.as_ptr().cast()
}

/// # Safety
/// `s` is null or came from this library as an owned string and was not freed.
#[no_mangle]
pub unsafe extern "C" fn hpcsim_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Built-in defaults for a scenario kind such as `"fleet"` or
/// `"weak_scaling"`.
///
/// # Safety
/// `kind` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn hpcsim_config_defaults(
    kind: *const c_char,
    out: *mut *mut HpcsimConfig,
) -> HpcsimStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let name = str_arg(kind, "kind")?;
        let kind = ScenarioKind::ALL
            .into_iter()
            .find(|k| k.as_str() == name.replace('-', "_"))
            .ok_or_else(|| {
                Fail(HpcsimStatus::InvalidConfig, format!("unknown scenario `{name}`"))
            })?;
        *out = Box::into_raw(Box::new(HpcsimConfig {
            inner: ScenarioConfig::defaults_for(kind),
        }));
        Ok(())
    })
}

/// Load and validate a scenario file, following its `extends` chain.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn hpcsim_config_load(
    path: *const c_char,
    out: *mut *mut HpcsimConfig,
) -> HpcsimStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = config::load(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(HpcsimConfig { inner }));
        Ok(())
    })
}

/// Parse and validate TOML text. Relative paths in it resolve against
/// `base_dir`, or the working directory when `base_dir` is null.
///
/// # Safety
/// `text` is a NUL-terminated string, `base_dir` is null or one; `out` is
/// writable.
#[no_mangle]
pub unsafe extern "C" fn hpcsim_config_parse(
    text: *const c_char,
    base_dir: *const c_char,
    out: *mut *mut HpcsimConfig,
) -> HpcsimStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = str_arg(text, "text")?;
        let dir = if base_dir.is_null() {
            PathBuf::from(".")
        } else {
            PathBuf::from(str_arg(base_dir, "base_dir")?)
        };
        let inner = config::load_str(text, &dir.join("<inline>"))?;
        *out = Box::into_raw(Box::new(HpcsimConfig { inner }));
        Ok(())
    })
}

/// Overwrite one dotted key (`broker.n_brokers`) with a TOML value. The
/// result is not validated until `hpcsim_config_validate` or a run.
///
/// # Safety
/// `cfg` is a live handle; `key` and `value` are NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn hpcsim_config_set(
    cfg: *mut HpcsimConfig,
    key: *const c_char,
    value: *const c_char,
) -> HpcsimStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("cfg"))?;
        let key = str_arg(key, "key")?;
        let value = str_arg(value, "value")?;
        let mut table: toml::Table = toml::from_str(&cfg.inner.to_toml())
            .map_err(|e| Fail(HpcsimStatus::InvalidConfig, e.to_string()))?;
        config::set_key(&mut table, key, value)?;
        cfg.inner = config::from_table(table, Path::new("<set>"))?;
        Ok(())
    })
}

/// # Safety
/// `cfg` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn hpcsim_config_validate(cfg: *const HpcsimConfig) -> HpcsimStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        cfg.inner.validate()?;
        Ok(())
    })
}

/// Canonical TOML for the config. Owned; release with `hpcsim_string_free`.
/// Null when `cfg` is null.
///
/// # Safety
/// `cfg` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hpcsim_config_to_toml(cfg: *const HpcsimConfig) -> *mut c_char {
    cfg.as_ref().map_or(ptr::null_mut(), |c| owned(c.inner.to_toml()))
}

/// # Safety
/// `cfg` is null or a handle from this library that was not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hpcsim_config_free(cfg: *mut HpcsimConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Run the scenario, writing its outputs and `manifest.json` under the
/// config's `output_dir`.
///
/// # Safety
/// `cfg` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn hpcsim_run(
    cfg: *const HpcsimConfig,
    out: *mut *mut HpcsimRun,
) -> HpcsimStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let manifest = scenarios::run_scenario(&cfg.inner)?;
        let run = HpcsimRun {
            scenario: cstring(manifest.scenario.as_str()),
            config_sha256: cstring(&manifest.config_sha256),
            output_dir: cstring(&manifest.output_dir.to_string_lossy()),
            names: manifest.outputs.iter().map(|o| cstring(&o.name)).collect(),
            manifest,
        };
        *out = Box::into_raw(Box::new(run));
        Ok(())
    })
}

/// Scenario name of the run. Borrowed from `run`.
///
/// # Safety
/// `run` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hpcsim_run_scenario(run: *const HpcsimRun) -> *const c_char {
    run.as_ref().map_or(ptr::null(), |r| r.scenario.as_ptr())
}

/// Hex SHA-256 of the resolved config. Borrowed from `run`.
///
/// # Safety
/// `run` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hpcsim_run_config_sha256(run: *const HpcsimRun) -> *const c_char {
    run.as_ref().map_or(ptr::null(), |r| r.config_sha256.as_ptr())
}

/// Borrowed from `run`.
///
/// # Safety
/// `run` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hpcsim_run_output_dir(run: *const HpcsimRun) -> *const c_char {
    run.as_ref().map_or(ptr::null(), |r| r.output_dir.as_ptr())
}

/// # Safety
/// `run` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hpcsim_run_seed(run: *const HpcsimRun) -> u64 {
    run.as_ref().map_or(0, |r| r.manifest.seed)
}

/// # Safety
/// `run` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hpcsim_run_output_count(run: *const HpcsimRun) -> usize {
    run.as_ref().map_or(0, |r| r.names.len())
}

/// File name and size of output `index`. The name is borrowed from `run`.
///
/// # Safety
/// `run` is a live handle; `name` and `bytes` are each null or writable.
#[no_mangle]
pub unsafe extern "C" fn hpcsim_run_output(
    run: *const HpcsimRun,
    index: usize,
    name: *mut *const c_char,
    bytes: *mut u64,
) -> HpcsimStatus {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null("run"))?;
        let (Some(n), Some(o)) = (run.names.get(index), run.manifest.outputs.get(index)) else {
            return Err(Fail(
                HpcsimStatus::OutOfRange,
                format!("output {index} of {}", run.names.len()),
            ));
        };
        if !name.is_null() {
            *name = n.as_ptr();
        }
        if !bytes.is_null() {
            *bytes = o.bytes;
        }
        Ok(())
    })
}

/// # Safety
/// `run` is null or a handle from this library that was not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hpcsim_run_free(run: *mut HpcsimRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Run a scaling scenario in memory, writing nothing to disk.
///
/// # Safety
/// `cfg` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn hpcsim_scaling_run(
    cfg: *const HpcsimConfig,
    out: *mut *mut HpcsimScaling,
) -> HpcsimStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        if !cfg.inner.scenario.is_scaling() {
            return Err(Fail(
                HpcsimStatus::WrongScenario,
                format!("`{}` is not a scaling scenario", cfg.inner.scenario),
            ));
        }
        cfg.inner.validate()?;
        let rows = scenarios::run_scaling(&cfg.inner)?;
        *out = Box::into_raw(Box::new(HpcsimScaling { rows }));
        Ok(())
    })
}

/// # Safety
/// `s` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hpcsim_scaling_len(s: *const HpcsimScaling) -> usize {
    s.as_ref().map_or(0, |s| s.rows.len())
}

/// # Safety
/// `s` is a live handle; `row` is writable.
#[no_mangle]
pub unsafe extern "C" fn hpcsim_scaling_row(
    s: *const HpcsimScaling,
    index: usize,
    row: *mut HpcsimScalingRow,
) -> HpcsimStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| null("scaling"))?;
        if row.is_null() {
            return Err(null("row"));
        }
        let r = s.rows.get(index).ok_or_else(|| {
            Fail(HpcsimStatus::OutOfRange, format!("row {index} of {}", s.rows.len()))
        })?;
        *row = HpcsimScalingRow {
            pilot_nodes: r.pilot_nodes,
            units_dispatched: r.units_dispatched,
            units_done: r.units,
            generations: r.generations,
            pilot_duration_s: r.pilot_duration_s,
            mean_task_s: r.mean_task_s,
            overhead_s: r.overhead_s,
        };
        Ok(())
    })
}

/// # Safety
/// `s` is null or a handle from this library that was not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hpcsim_scaling_free(s: *mut HpcsimScaling) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last() -> String {
        let p = hpcsim_last_error();
        assert!(!p.is_null());
        unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
    }

    #[test]
    fn null_arguments_are_reported_not_dereferenced() {
        let mut out = ptr::null_mut();
        let st = unsafe { hpcsim_config_load(ptr::null(), &mut out) };
        assert_eq!(st, HpcsimStatus::NullArgument);
        assert!(last().contains("path"));
        assert!(out.is_null());
        assert_eq!(unsafe { hpcsim_config_validate(ptr::null()) }, HpcsimStatus::NullArgument);
        unsafe {
            hpcsim_config_free(ptr::null_mut());
            hpcsim_run_free(ptr::null_mut());
            hpcsim_string_free(ptr::null_mut());
        }
    }

    #[test]
    fn success_clears_the_last_error() {
        let mut out = ptr::null_mut();
        let bad = c"no_such_kind";
        assert_eq!(
            unsafe { hpcsim_config_defaults(bad.as_ptr(), &mut out) },
            HpcsimStatus::InvalidConfig
        );
        assert!(last().contains("no_such_kind"));
        assert_eq!(
            unsafe { hpcsim_config_defaults(c"strong-scaling".as_ptr(), &mut out) },
            HpcsimStatus::Ok
        );
        assert!(hpcsim_last_error().is_null());
        unsafe { hpcsim_config_free(out) };
    }

    #[test]
    fn invalid_utf8_is_rejected() {
        let bytes = [0xffu8, 0xfe, 0];
        let mut out = ptr::null_mut();
        let st = unsafe { hpcsim_config_parse(bytes.as_ptr().cast(), ptr::null(), &mut out) };
        assert_eq!(st, HpcsimStatus::InvalidUtf8);
    }

    #[test]
    fn version_matches_the_engine() {
        let v = unsafe { CStr::from_ptr(hpcsim_version()) };
        assert_eq!(v.to_str().unwrap(), ENGINE_VERSION);
    }
}
