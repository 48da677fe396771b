use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use roadtrain::net::NodeId;
use roadtrain::packets::{Dest, Packet, Payload};
use roadtrain_ffi::*;

fn new_sim(mode: RtMode, followers: u32, secs: u64) -> *mut RtSimulation {
    let mut sim = ptr::null_mut();
    assert_eq!(unsafe { rt_sim_new(mode, followers, secs, 3, &mut sim) }, RtStatus::Ok);
    assert!(!sim.is_null());
    sim
}

fn last_error() -> String {
    let mut need = 0;
    unsafe { rt_last_error(ptr::null_mut(), 0, &mut need) };
    let mut buf = vec![0 as c_char; need];
    assert_eq!(unsafe { rt_last_error(buf.as_mut_ptr(), need, ptr::null_mut()) }, RtStatus::Ok);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn snapshot(sim: *const RtSimulation) -> serde_json::Value {
    let mut need = 0;
    let st = unsafe { rt_sim_snapshot_json(sim, ptr::null_mut(), 0, &mut need) };
    assert_eq!(st, RtStatus::BufferTooSmall);
    let mut buf = vec![0 as c_char; need];
    let st = unsafe { rt_sim_snapshot_json(sim, buf.as_mut_ptr(), need, ptr::null_mut()) };
    assert_eq!(st, RtStatus::Ok);
    let text = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap();
    serde_json::from_str(text).unwrap()
}

#[test]
fn stepping_and_commands() {
    let sim = new_sim(RtMode::Mpr, 3, 30);
    assert_eq!(unsafe { rt_sim_step(sim, 250) }, RtStatus::Ok);
    assert_eq!(unsafe { rt_sim_now_ms(sim) }, 250);
    assert_eq!(unsafe { rt_sim_command(sim, RtVerb::Pause, 0) }, RtStatus::Ok);
    assert_eq!(snapshot(sim)["paused"], true);
    assert_eq!(unsafe { rt_sim_command(sim, RtVerb::Resume, 0) }, RtStatus::Ok);

    assert_eq!(unsafe { rt_sim_command(sim, RtVerb::Join, 1) }, RtStatus::InvalidArgument);
    assert_eq!(unsafe { rt_sim_command(sim, RtVerb::Join, 0) }, RtStatus::UnknownNode);
    assert_eq!(unsafe { rt_sim_command(sim, RtVerb::Leave, 77) }, RtStatus::UnknownNode);
    assert!(last_error().contains("77"));

    let mut r = RtReport::default();
    assert_eq!(unsafe { rt_sim_run_to_end(sim, &mut r) }, RtStatus::Ok);
    assert_eq!(r.n_vehicles, 4);
    assert_eq!(r.duration_s, 30.0);
    assert!(r.total_tx > 0 && r.throughput_bps > 0.0);
    assert!((0.0..=1.0).contains(&r.loss_rate));
    assert_eq!(unsafe { rt_sim_step(sim, 10) }, RtStatus::Finished);
    let mut again = RtReport::default();
    assert_eq!(unsafe { rt_sim_report(sim, &mut again) }, RtStatus::Ok);
    assert_eq!(r, again);
    unsafe { rt_sim_free(sim) };
}

#[test]
fn two_vehicle_flood_has_no_latency() {
    let sim = new_sim(RtMode::Rba, 1, 5);
    let mut r = RtReport::default();
    assert_eq!(unsafe { rt_sim_run_to_end(sim, &mut r) }, RtStatus::Ok);
    assert!(r.avg_latency_ms < 0.0);
    unsafe { rt_sim_free(sim) };
}

#[test]
fn config_errors_are_reported() {
    let mut sim = ptr::null_mut();
    assert_eq!(unsafe { rt_sim_new(RtMode::Rba, 11, 10, 1, &mut sim) }, RtStatus::InvalidConfig);
    assert!(sim.is_null());
    assert!(last_error().contains("n_followers"));

    let bad = CString::new("mode = \"carrier-pigeon\"").unwrap();
    assert_eq!(unsafe { rt_sim_new_from_toml(bad.as_ptr(), &mut sim) }, RtStatus::InvalidConfig);

    let good = CString::new("mode = \"rba\"\nn_followers = 2\nduration_s = 2\n").unwrap();
    assert_eq!(unsafe { rt_sim_new_from_toml(good.as_ptr(), &mut sim) }, RtStatus::Ok);
    assert_eq!(snapshot(sim)["mode"], "rba");
    unsafe { rt_sim_free(sim) };
}

#[test]
fn null_handles_are_refused() {
    let null = ptr::null_mut();
    assert_eq!(unsafe { rt_sim_step(null, 1) }, RtStatus::NullPointer);
    assert_eq!(unsafe { rt_sim_now_ms(null) }, 0);
    assert_eq!(unsafe { rt_sim_command(null, RtVerb::Pause, 0) }, RtStatus::NullPointer);
    assert_eq!(unsafe { rt_sim_report(null, ptr::null_mut()) }, RtStatus::NullPointer);
    assert_eq!(unsafe { rt_sim_new(RtMode::Rba, 1, 1, 1, ptr::null_mut()) }, RtStatus::NullPointer);
    assert_eq!(unsafe { rt_packet_validate(ptr::null(), 0, ptr::null_mut()) }, RtStatus::NullPointer);
    unsafe { rt_sim_free(null) };
}

#[test]
fn packet_validation() {
    let p = Packet::new(NodeId::LEAD, 9, Dest::Broadcast, Payload::Leave);
    let bytes = p.encode();
    let mut kind = 0xff;
    assert_eq!(unsafe { rt_packet_validate(bytes.as_ptr(), bytes.len(), &mut kind) }, RtStatus::Ok);
    assert_eq!(kind, p.kind() as u8);
    let st = unsafe { rt_packet_validate(bytes.as_ptr(), bytes.len() - 1, &mut kind) };
    assert_eq!(st, RtStatus::DecodeFailed);
}

#[test]
fn version_matches_the_crate() {
    let v = unsafe { CStr::from_ptr(rt_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

fn artifact_dir() -> PathBuf {
    // target/<profile>/deps/<test binary>
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_the_header_and_static_library() {
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler on PATH; skipping");
        return;
    }
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib = artifact_dir().join("libroadtrain_ffi.a");
    assert!(lib.exists(), "{} missing", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
