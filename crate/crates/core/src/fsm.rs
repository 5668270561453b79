//! Vehicle-synchronized power controller.
//!
//! The controller sleeps until a frame with the wake id appears on the bus,
//! connects power, asks the recorder to shut down once the wake frame has been
//! absent for `absence_timeout_us`, and cuts power `grace_period_us` later.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::can::CanId;
use crate::time::Timestamp;

pub const DEFAULT_GRACE_PERIOD_US: u64 = 60_000_000;
pub const DEFAULT_ABSENCE_TIMEOUT_US: u64 = 3_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FsmConfig {
    pub wake_arbitration_id: CanId,
    pub absence_timeout_us: u64,
    pub grace_period_us: u64,
}

impl FsmConfig {
    pub fn new(wake_arbitration_id: CanId) -> Self {
        FsmConfig {
            wake_arbitration_id,
            absence_timeout_us: DEFAULT_ABSENCE_TIMEOUT_US,
            grace_period_us: DEFAULT_GRACE_PERIOD_US,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PowerState {
    Sleep,
    /// `last_wake` is the most recent wake-id frame.
    Powered { last_wake: Timestamp },
    /// `signal_ts` is when `SignalShutdown` was emitted.
    Draining { signal_ts: Timestamp },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsmEvent {
    FrameSeen { id: CanId, ts: Timestamp },
    Tick { ts: Timestamp },
}

impl FsmEvent {
    pub fn ts(&self) -> Timestamp {
        match *self {
            FsmEvent::FrameSeen { ts, .. } | FsmEvent::Tick { ts } => ts,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FsmAction {
    ConnectPower,
    SignalShutdown,
    DisconnectPower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FsmError {
    #[error("event at {event} precedes last event at {last}")]
    ClockRegression { event: Timestamp, last: Timestamp },
}

/// Power state plus the timestamp of the last processed event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FsmState {
    pub power: PowerState,
    pub last_event: Option<Timestamp>,
}

impl FsmState {
    pub const INITIAL: FsmState = FsmState { power: PowerState::Sleep, last_event: None };

    /// Time at which a `Tick` would next change the state, if any.
    pub fn next_deadline(&self, config: &FsmConfig) -> Option<Timestamp> {
        match self.power {
            PowerState::Sleep => None,
            PowerState::Powered { last_wake } => {
                Some(last_wake.saturating_add_micros(config.absence_timeout_us))
            }
            PowerState::Draining { signal_ts } => {
                Some(signal_ts.saturating_add_micros(config.grace_period_us))
            }
        }
    }
}

impl Default for FsmState {
    fn default() -> Self {
        FsmState::INITIAL
    }
}

/// One transition. Pure: the same inputs always give the same outputs, and
/// every (state, event) pair not listed below is a no-op.
///
/// - Sleep + wake frame: Powered, `ConnectPower`
/// - Powered + wake frame: Powered with refreshed `last_wake`
/// - Powered + tick after the absence timeout: Draining, `SignalShutdown`
/// - Draining + wake frame: Powered again, no action (power is never dropped
///   while the vehicle is back on)
/// - Draining + tick at or after the grace period: Sleep, `DisconnectPower`
pub fn fsm_step(
    state: FsmState,
    event: FsmEvent,
    config: &FsmConfig,
) -> Result<(FsmState, Option<FsmAction>), FsmError> {
    let ts = event.ts();
    if let Some(last) = state.last_event {
        if ts < last {
            return Err(FsmError::ClockRegression { event: ts, last });
        }
    }
    let is_wake = |id: CanId| id == config.wake_arbitration_id;
    let (power, action) = match (state.power, event) {
        (PowerState::Sleep, FsmEvent::FrameSeen { id, ts }) if is_wake(id) => {
            (PowerState::Powered { last_wake: ts }, Some(FsmAction::ConnectPower))
        }
        (PowerState::Powered { .. }, FsmEvent::FrameSeen { id, ts }) if is_wake(id) => {
            (PowerState::Powered { last_wake: ts }, None)
        }
        (PowerState::Powered { last_wake }, FsmEvent::Tick { ts })
            if ts.micros_since(last_wake) >= config.absence_timeout_us =>
        {
            (PowerState::Draining { signal_ts: ts }, Some(FsmAction::SignalShutdown))
        }
        (PowerState::Draining { .. }, FsmEvent::FrameSeen { id, ts }) if is_wake(id) => {
            (PowerState::Powered { last_wake: ts }, None)
        }
        (PowerState::Draining { signal_ts }, FsmEvent::Tick { ts })
            if ts.micros_since(signal_ts) >= config.grace_period_us =>
        {
            (PowerState::Sleep, Some(FsmAction::DisconnectPower))
        }
        (power, _) => (power, None),
    };
    Ok((FsmState { power, last_event: Some(ts) }, action))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimedAction {
    pub ts: Timestamp,
    pub action: FsmAction,
}

/// Timer-driven wrapper around [`fsm_step`].
///
/// Before handling an event it fires a `Tick` at every deadline that falls at
/// or before the event, the way the microcontroller's timer interrupt would.
/// Actions are therefore emitted exactly at their deadlines.
#[derive(Debug, Clone)]
pub struct PowerController {
    config: FsmConfig,
    state: FsmState,
}

impl PowerController {
    pub fn new(config: FsmConfig) -> Self {
        PowerController { config, state: FsmState::INITIAL }
    }

    pub fn state(&self) -> FsmState {
        self.state
    }

    pub fn config(&self) -> &FsmConfig {
        &self.config
    }

    fn apply(&mut self, event: FsmEvent, out: &mut Vec<TimedAction>) -> Result<(), FsmError> {
        let (next, action) = fsm_step(self.state, event, &self.config)?;
        self.state = next;
        if let Some(action) = action {
            out.push(TimedAction { ts: event.ts(), action });
        }
        Ok(())
    }

    /// Fires every deadline up to and including `ts`.
    pub fn advance_to(&mut self, ts: Timestamp) -> Result<Vec<TimedAction>, FsmError> {
        let mut out = Vec::new();
        if let Some(last) = self.state.last_event {
            if ts < last {
                return Err(FsmError::ClockRegression { event: ts, last });
            }
        }
        while let Some(deadline) = self.state.next_deadline(&self.config) {
            if deadline > ts {
                break;
            }
            self.apply(FsmEvent::Tick { ts: deadline }, &mut out)?;
        }
        Ok(out)
    }

    pub fn handle(&mut self, event: FsmEvent) -> Result<Vec<TimedAction>, FsmError> {
        let mut out = self.advance_to(event.ts())?;
        self.apply(event, &mut out)?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    const WAKE: CanId = CanId::from_raw_unchecked(0x3e9);

    fn cfg() -> FsmConfig {
        FsmConfig::new(WAKE)
    }

    fn at(power: PowerState, last: u64) -> FsmState {
        FsmState { power, last_event: Some(Timestamp::from_micros(last)) }
    }

    #[test]
    fn wake_frame_connects_power() {
        let (s, a) = fsm_step(
            FsmState::INITIAL,
            FsmEvent::FrameSeen { id: WAKE, ts: 5.into() },
            &cfg(),
        )
        .unwrap();
        assert_eq!(s.power, PowerState::Powered { last_wake: 5.into() });
        assert_eq!(a, Some(FsmAction::ConnectPower));
    }

    #[test]
    fn other_ids_do_not_wake() {
        let other = CanId::new(0x155).unwrap();
        let (s, a) =
            fsm_step(FsmState::INITIAL, FsmEvent::FrameSeen { id: other, ts: 5.into() }, &cfg())
                .unwrap();
        assert_eq!(s.power, PowerState::Sleep);
        assert_eq!(a, None);
    }

    #[test]
    fn absence_triggers_shutdown_signal() {
        let t_last = 1_000_000u64;
        let state = at(PowerState::Powered { last_wake: t_last.into() }, t_last);
        let (s, a) = fsm_step(state, FsmEvent::Tick { ts: (t_last + 2_999_999).into() }, &cfg()).unwrap();
        assert_eq!(a, None);
        let (s, a) = fsm_step(s, FsmEvent::Tick { ts: (t_last + 3_000_000).into() }, &cfg()).unwrap();
        assert_eq!(a, Some(FsmAction::SignalShutdown));
        assert_eq!(s.power, PowerState::Draining { signal_ts: (t_last + 3_000_000).into() });
    }

    #[test]
    fn grace_period_boundary() {
        let t0 = 10_000_000u64;
        let state = at(PowerState::Draining { signal_ts: t0.into() }, t0);
        let (s, a) = fsm_step(state, FsmEvent::Tick { ts: (t0 + 59_999_999).into() }, &cfg()).unwrap();
        assert_eq!(s.power, PowerState::Draining { signal_ts: t0.into() });
        assert_eq!(a, None);
        let (s, a) = fsm_step(s, FsmEvent::Tick { ts: (t0 + 60_000_000).into() }, &cfg()).unwrap();
        assert_eq!(s.power, PowerState::Sleep);
        assert_eq!(a, Some(FsmAction::DisconnectPower));
    }

    #[test]
    fn wake_during_drain_reopens_cycle() {
        let state = at(PowerState::Draining { signal_ts: 0.into() }, 0);
        let (s, a) = fsm_step(state, FsmEvent::FrameSeen { id: WAKE, ts: 30.into() }, &cfg()).unwrap();
        assert_eq!(s.power, PowerState::Powered { last_wake: 30.into() });
        assert_eq!(a, None);
    }

    #[test]
    fn clock_regression_is_rejected() {
        let state = at(PowerState::Sleep, 100);
        assert_eq!(
            fsm_step(state, FsmEvent::Tick { ts: 99.into() }, &cfg()),
            Err(FsmError::ClockRegression { event: 99.into(), last: 100.into() })
        );
    }

    #[test]
    fn controller_fires_deadlines_exactly() {
        let mut c = PowerController::new(cfg());
        let mut actions = c.handle(FsmEvent::FrameSeen { id: WAKE, ts: 0.into() }).unwrap();
        actions.extend(c.handle(FsmEvent::Tick { ts: 500_000_000.into() }).unwrap());
        assert_eq!(
            actions,
            vec![
                TimedAction { ts: 0.into(), action: FsmAction::ConnectPower },
                TimedAction { ts: 3_000_000.into(), action: FsmAction::SignalShutdown },
                TimedAction { ts: 63_000_000.into(), action: FsmAction::DisconnectPower },
            ]
        );
    }

    fn events() -> impl Strategy<Value = Vec<(bool, bool, u64)>> {
        proptest::collection::vec((any::<bool>(), any::<bool>(), 0u64..20_000_000), 0..200)
    }

    proptest! {
        #[test]
        fn cycle_counts_balance(seq in events()) {
            let mut c = PowerController::new(cfg());
            let mut ts = 0u64;
            let mut connects = 0i64;
            let mut disconnects = 0i64;
            for (is_frame, wake, dt) in seq {
                ts += dt;
                let ev = if is_frame {
                    let id = if wake { WAKE } else { CanId::new(0x100).unwrap() };
                    FsmEvent::FrameSeen { id, ts: ts.into() }
                } else {
                    FsmEvent::Tick { ts: ts.into() }
                };
                for a in c.handle(ev).unwrap() {
                    match a.action {
                        FsmAction::ConnectPower => connects += 1,
                        FsmAction::DisconnectPower => disconnects += 1,
                        FsmAction::SignalShutdown => {}
                    }
                }
                prop_assert!(connects - disconnects == 0 || connects - disconnects == 1);
            }
        }
    }
}
