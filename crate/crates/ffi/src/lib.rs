//! C interface to the in-process simulator.
//!
//! Every function returns an [`RtStatus`]; zero is success. Handles are opaque
//! and must be released with [`rt_sim_free`]. After a failure,
//! [`rt_last_error`] describes it for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use roadtrain::config::ScenarioConfig;
use roadtrain::control::{ControlCommand, ControlError, ControlReply, ControlVerb};
use roadtrain::metrics::RunReport;
use roadtrain::net::NodeId;
use roadtrain::node::Scheme;
use roadtrain::packets::Packet;
use roadtrain::sim::Simulation;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidConfig = 2,
    InvalidArgument = 3,
    IllegalState = 4,
    UnknownNode = 5,
    BufferTooSmall = 6,
    Finished = 7,
    DecodeFailed = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RtMode {
    Rba = 0,
    Mpr = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RtVerb {
    Join = 0,
    Leave = 1,
    Pause = 2,
    Resume = 3,
}

/// Run measures. `avg_latency_ms` is negative when no round trip was measured.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RtReport {
    pub n_vehicles: u32,
    pub avg_latency_ms: f64,
    pub throughput_bps: f64,
    pub loss_rate: f64,
    pub total_tx: u64,
    pub duration_s: f64,
}

/// Opaque simulation handle.
pub struct RtSimulation {
    sim: Simulation,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn fail(status: RtStatus, msg: impl Into<String>) -> RtStatus {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
    status
}

fn guarded(f: impl FnOnce() -> RtStatus) -> RtStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(RtStatus::Panic, "internal panic"))
}

fn to_report(r: &RunReport) -> RtReport {
    RtReport {
        n_vehicles: r.n_vehicles as u32,
        avg_latency_ms: r.avg_latency_ms.unwrap_or(-1.0),
        throughput_bps: r.throughput_bps,
        loss_rate: r.loss_rate,
        total_tx: r.total_tx,
        duration_s: r.duration_s,
    }
}

fn create(cfg: ScenarioConfig, out: *mut *mut RtSimulation) -> RtStatus {
    if let Err(e) = cfg.validate() {
        return fail(RtStatus::InvalidConfig, e.to_string());
    }
    match Simulation::new(cfg) {
        Ok(sim) => {
            let handle = Box::new(RtSimulation { sim });
            // SAFETY: caller checked `out` is non-null.
            unsafe { *out = Box::into_raw(handle) };
            RtStatus::Ok
        }
        Err(e) => fail(RtStatus::InvalidConfig, e.to_string()),
    }
}

/// Creates a scenario with default settings apart from the given ones.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn rt_sim_new(
    mode: RtMode,
    n_followers: u32,
    duration_s: u64,
    seed: u64,
    out: *mut *mut RtSimulation,
) -> RtStatus {
    guarded(|| {
        if out.is_null() {
            return fail(RtStatus::NullPointer, "out is null");
        }
        let cfg = ScenarioConfig {
            mode: match mode {
                RtMode::Rba => Scheme::Rba,
                RtMode::Mpr => Scheme::Mpr,
            },
            n_followers: n_followers as usize,
            duration_s,
            seed,
            log_level: roadtrain::config::LogLevel::Off,
            ..Default::default()
        };
        create(cfg, out)
    })
}

/// Creates a scenario from TOML text using the scenario file field names.
///
/// # Safety
/// `toml` must be a nul-terminated string; `out` as for [`rt_sim_new`].
#[no_mangle]
pub unsafe extern "C" fn rt_sim_new_from_toml(
    toml: *const c_char,
    out: *mut *mut RtSimulation,
) -> RtStatus {
    guarded(|| {
        if toml.is_null() || out.is_null() {
            return fail(RtStatus::NullPointer, "null argument");
        }
        let Ok(text) = unsafe { CStr::from_ptr(toml) }.to_str() else {
            return fail(RtStatus::InvalidArgument, "config is not UTF-8");
        };
        match ScenarioConfig::from_toml(text) {
            Ok(cfg) => create(cfg, out),
            Err(e) => fail(RtStatus::InvalidConfig, e.to_string()),
        }
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `sim` must come from one of the constructors and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rt_sim_free(sim: *mut RtSimulation) {
    if !sim.is_null() {
        drop(unsafe { Box::from_raw(sim) });
    }
}

unsafe fn handle<'a>(sim: *mut RtSimulation) -> Option<&'a mut RtSimulation> {
    unsafe { sim.as_mut() }
}

/// Advances up to `ms` milliseconds. Returns `Finished` once the end is reached.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rt_sim_step(sim: *mut RtSimulation, ms: u64) -> RtStatus {
    guarded(|| {
        let Some(h) = (unsafe { handle(sim) }) else {
            return fail(RtStatus::NullPointer, "sim is null");
        };
        for _ in 0..ms {
            if h.sim.is_done() {
                break;
            }
            h.sim.step();
        }
        if h.sim.is_done() {
            RtStatus::Finished
        } else {
            RtStatus::Ok
        }
    })
}

/// Current virtual time, or 0 for a null handle.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rt_sim_now_ms(sim: *const RtSimulation) -> u64 {
    unsafe { sim.as_ref() }.map_or(0, |h| h.sim.now_ms())
}

/// Operator command. `node` is ignored for PAUSE and RESUME.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rt_sim_command(sim: *mut RtSimulation, verb: RtVerb, node: u16) -> RtStatus {
    guarded(|| {
        let Some(h) = (unsafe { handle(sim) }) else {
            return fail(RtStatus::NullPointer, "sim is null");
        };
        let (verb, needs_node) = match verb {
            RtVerb::Join => (ControlVerb::Join, true),
            RtVerb::Leave => (ControlVerb::Leave, true),
            RtVerb::Pause => (ControlVerb::Pause, false),
            RtVerb::Resume => (ControlVerb::Resume, false),
        };
        let node = if needs_node {
            match NodeId::new(node) {
                Some(n) => Some(n),
                None => return fail(RtStatus::UnknownNode, format!("node {node} does not exist")),
            }
        } else {
            None
        };
        match h.sim.handle_command(ControlCommand::new(verb, node)) {
            ControlReply::Error(e) => {
                let status = match &e {
                    ControlError::UnknownNode(_) => RtStatus::UnknownNode,
                    ControlError::IllegalState(_) | ControlError::Unavailable => RtStatus::IllegalState,
                    ControlError::BadRequest(_) | ControlError::NotAFollower => RtStatus::InvalidArgument,
                };
                fail(status, e.to_string())
            }
            _ => RtStatus::Ok,
        }
    })
}

/// Runs to the end and fills `out` with the report.
///
/// # Safety
/// `sim` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rt_sim_run_to_end(sim: *mut RtSimulation, out: *mut RtReport) -> RtStatus {
    guarded(|| {
        let (Some(h), false) = (unsafe { handle(sim) }, out.is_null()) else {
            return fail(RtStatus::NullPointer, "null argument");
        };
        let r = h.sim.run_to_end();
        unsafe { *out = to_report(&r) };
        RtStatus::Ok
    })
}

/// Report for the run so far.
///
/// # Safety
/// `sim` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rt_sim_report(sim: *const RtSimulation, out: *mut RtReport) -> RtStatus {
    guarded(|| {
        let (Some(h), false) = (unsafe { sim.as_ref() }, out.is_null()) else {
            return fail(RtStatus::NullPointer, "null argument");
        };
        unsafe { *out = to_report(&h.sim.report()) };
        RtStatus::Ok
    })
}

/// Copies the snapshot JSON, nul-terminated, into `buf`. `needed` receives the
/// size including the terminator; with a short buffer nothing is written but
/// `needed` and `BufferTooSmall` is returned.
///
/// # Safety
/// `sim` must be a live handle; `buf` must have `len` writable bytes or be null
/// with `len` zero; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn rt_sim_snapshot_json(
    sim: *const RtSimulation,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> RtStatus {
    guarded(|| {
        let Some(h) = (unsafe { sim.as_ref() }) else {
            return fail(RtStatus::NullPointer, "sim is null");
        };
        let json = serde_json::to_string(&h.sim.snapshot()).expect("snapshot serializes");
        unsafe { copy_out(json.as_bytes(), buf, len, needed) }
    })
}

unsafe fn copy_out(bytes: &[u8], buf: *mut c_char, len: usize, needed: *mut usize) -> RtStatus {
    let total = bytes.len() + 1;
    if !needed.is_null() {
        unsafe { *needed = total };
    }
    if buf.is_null() || len < total {
        return fail(RtStatus::BufferTooSmall, format!("need {total} bytes"));
    }
    unsafe {
        ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), bytes.len());
        *buf.add(bytes.len()) = 0;
    }
    RtStatus::Ok
}

/// Checks one datagram. On success `kind` receives the packet kind byte.
///
/// # Safety
/// `bytes` must point to `len` readable bytes; `kind` may be null.
#[no_mangle]
pub unsafe extern "C" fn rt_packet_validate(bytes: *const u8, len: usize, kind: *mut u8) -> RtStatus {
    guarded(|| {
        if bytes.is_null() {
            return fail(RtStatus::NullPointer, "bytes is null");
        }
        let data = unsafe { std::slice::from_raw_parts(bytes, len) };
        match Packet::decode(data) {
            Ok(p) => {
                if !kind.is_null() {
                    unsafe { *kind = p.kind() as u8 };
                }
                RtStatus::Ok
            }
            Err(e) => fail(RtStatus::DecodeFailed, e.to_string()),
        }
    })
}

/// Message for the calling thread's last failure, copied as for
/// [`rt_sim_snapshot_json`]. Empty when nothing failed yet.
///
/// # Safety
/// As for [`rt_sim_snapshot_json`].
#[no_mangle]
pub unsafe extern "C" fn rt_last_error(buf: *mut c_char, len: usize, needed: *mut usize) -> RtStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().as_ref().map(|m| m.as_bytes().to_vec()));
    let msg = msg.unwrap_or_default();
    let total = msg.len() + 1;
    if !needed.is_null() {
        unsafe { *needed = total };
    }
    if buf.is_null() || len < total {
        return RtStatus::BufferTooSmall;
    }
    unsafe {
        ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), msg.len());
        *buf.add(msg.len()) = 0;
    }
    RtStatus::Ok
}

/// Library version, a static nul-terminated string.
#[no_mangle]
pub extern "C" fn rt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
