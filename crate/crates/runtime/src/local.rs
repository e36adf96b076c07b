//! Master and Minion in one process, talking the wire protocol over an
//! in-memory stream. Ledgers match a networked run with the same seeds.

use std::thread;
use std::time::Duration;

use log::warn;
use xilrl_protocol::Timings;

use crate::error::RuntimeError;
use crate::master::{local_link, run_training, Link, RunOutcome, TrainingPlan};
use crate::minion::{run_minion, MinionOptions};
use crate::rollout::PlantSetup;

/// How long the Master waits for the in-process Minion to (re)connect.
const LOCAL_ACCEPT_TIMEOUT: Duration = Duration::from_secs(30);

/// Spawns a Minion on `setup`, hands `body` a link to it, and shuts the
/// Minion down afterwards.
pub fn with_local_minion<T>(setup: &PlantSetup, options: MinionOptions, timings: Timings, body: impl FnOnce(&mut Link<'_>) -> Result<T, RuntimeError>) -> Result<T, RuntimeError> {
    let (mut source, dialer) = local_link(timings, LOCAL_ACCEPT_TIMEOUT);
    thread::scope(|scope| {
        let minion = scope.spawn(move || run_minion(|| dialer.dial(), setup, options, 3));
        let mut link = Link::new(&mut source);
        let result = body(&mut link);
        link.shutdown();
        drop(link);
        // without a Master the Minion's next dial fails and it stops
        drop(source);
        let minion_result = minion.join().expect("minion thread panicked");
        match (result, minion_result) {
            (Ok(v), Ok(())) => Ok(v),
            (Ok(v), Err(e)) => {
                warn!("local minion ended with an error after the run finished: {e}");
                Ok(v)
            }
            (Err(e), _) => Err(e),
        }
    })
}

/// One training plan against an in-process Minion.
pub fn run_local(plan: &TrainingPlan, setup: &PlantSetup, options: MinionOptions) -> Result<RunOutcome, RuntimeError> {
    with_local_minion(setup, options, Timings::default(), |link| run_training(plan, link))
}
