use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::Receiver;

use super::Simulation;
use crate::control::Request;
use crate::metrics::RunReport;

/// Runs the simulation against the wall clock, `speedup` virtual ms per real
/// ms, serving control requests between steps. Pausing stops the virtual clock.
pub fn run_live(sim: &mut Simulation, requests: Receiver<Request>, speedup: f64) -> RunReport {
    let mut anchor = Instant::now();
    let mut anchor_ms = sim.now_ms();
    while !sim.is_done() {
        while let Ok((cmd, reply)) = requests.try_recv() {
            let was_paused = sim.is_paused();
            let _ = reply.send(sim.handle_command(cmd));
            if was_paused && !sim.is_paused() {
                anchor = Instant::now();
                anchor_ms = sim.now_ms();
            }
        }
        if sim.is_paused() {
            thread::sleep(Duration::from_millis(5));
            continue;
        }
        let target = anchor_ms + (anchor.elapsed().as_secs_f64() * 1000.0 * speedup) as u64;
        while sim.now_ms() < target && !sim.is_done() {
            sim.step();
        }
        thread::sleep(Duration::from_millis(1));
    }
    sim.finish()
}
