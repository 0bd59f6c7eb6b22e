use std::fmt;

use serde::{Deserialize, Serialize};

use crate::types::SensorSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PowerState {
    Sleep,
    Sampling,
    Processing,
    Transmitting,
}

impl PowerState {
    pub const ALL: [PowerState; 4] = [
        PowerState::Sleep,
        PowerState::Sampling,
        PowerState::Processing,
        PowerState::Transmitting,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            PowerState::Sleep => "Sleep",
            PowerState::Sampling => "Sampling",
            PowerState::Processing => "Processing",
            PowerState::Transmitting => "Transmitting",
        }
    }
}

impl fmt::Display for PowerState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DeviceEvent {
    MotionDetected,
    WindowFull,
    InferenceDone,
    TxDone,
    IdleTimeout,
}

impl DeviceEvent {
    pub fn name(self) -> &'static str {
        match self {
            DeviceEvent::MotionDetected => "MotionDetected",
            DeviceEvent::WindowFull => "WindowFull",
            DeviceEvent::InferenceDone => "InferenceDone",
            DeviceEvent::TxDone => "TxDone",
            DeviceEvent::IdleTimeout => "IdleTimeout",
        }
    }
}

/// What the firmware does on entering the new state. Note that no action
/// carries sample data: the only thing queued for the radio is the
/// classifier output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    StartSampling,
    RunInference,
    EnqueueData,
    ResumeSampling,
    EnterSleep,
    /// Event not defined for the current state; logged and ignored.
    NoOp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transition {
    pub from: PowerState,
    pub event: DeviceEvent,
    pub to: PowerState,
    pub action: Action,
}

impl Transition {
    pub fn is_noop(&self) -> bool {
        self.action == Action::NoOp
    }
}

pub fn step_state_machine(state: PowerState, event: DeviceEvent) -> Transition {
    use DeviceEvent::*;
    use PowerState::*;
    let (to, action) = match (state, event) {
        (Sleep, MotionDetected) => (Sampling, Action::StartSampling),
        (Sampling, WindowFull) => (Processing, Action::RunInference),
        (Processing, InferenceDone) => (Transmitting, Action::EnqueueData),
        (Transmitting, TxDone) => (Sampling, Action::ResumeSampling),
        (Sampling, IdleTimeout) => (Sleep, Action::EnterSleep),
        (s, _) => (s, Action::NoOp),
    };
    Transition { from: state, event, to, action }
}

/// True iff some sample's |accel| deviates from 1 g by more than
/// `threshold_g`. Fewer than two samples never count as motion.
pub fn motion_detector(samples: &[SensorSample], threshold_g: f64) -> bool {
    samples.len() >= 2
        && samples
            .iter()
            .any(|s| (s.accel_magnitude() - 1.0).abs() > threshold_g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(accel: [f64; 3]) -> SensorSample {
        SensorSample { t_ms: 0, accel, gyro: [0.0; 3], stretch: None }
    }

    #[test]
    fn legal_transitions() {
        use DeviceEvent::*;
        use PowerState::*;
        let cases = [
            (Sleep, MotionDetected, Sampling, Action::StartSampling),
            (Sampling, WindowFull, Processing, Action::RunInference),
            (Processing, InferenceDone, Transmitting, Action::EnqueueData),
            (Transmitting, TxDone, Sampling, Action::ResumeSampling),
            (Sampling, IdleTimeout, Sleep, Action::EnterSleep),
        ];
        for (from, ev, to, action) in cases {
            let t = step_state_machine(from, ev);
            assert_eq!((t.to, t.action), (to, action), "{from} {ev:?}");
        }
    }

    #[test]
    fn undefined_pairs_are_noops() {
        let t = step_state_machine(PowerState::Sleep, DeviceEvent::WindowFull);
        assert_eq!(t.to, PowerState::Sleep);
        assert!(t.is_noop());
        let legal = 5;
        let noops = PowerState::ALL
            .iter()
            .flat_map(|&s| {
                [
                    DeviceEvent::MotionDetected,
                    DeviceEvent::WindowFull,
                    DeviceEvent::InferenceDone,
                    DeviceEvent::TxDone,
                    DeviceEvent::IdleTimeout,
                ]
                .map(|e| step_state_machine(s, e))
            })
            .filter(|t| t.is_noop())
            .count();
        assert_eq!(noops, 20 - legal);
    }

    #[test]
    fn motion_rule() {
        let still = vec![sample([0.0, 0.0, 1.0]); 10];
        assert!(!motion_detector(&still, 0.05));
        let mut spike = still.clone();
        spike[4] = sample([0.0, 0.0, 1.2]);
        assert!(motion_detector(&spike, 0.05));
        assert!(!motion_detector(&spike[4..5], 0.05));
        let varying = vec![sample([0.0, 0.0, 1.0]), sample([0.0, 0.0, 1.001])];
        assert!(motion_detector(&varying, 0.0));
        assert!(!motion_detector(&varying, 0.05));
    }

    proptest! {
        #[test]
        fn any_event_sequence_stays_in_a_state(events in prop::collection::vec(0usize..5, 0..200)) {
            let all = [
                DeviceEvent::MotionDetected,
                DeviceEvent::WindowFull,
                DeviceEvent::InferenceDone,
                DeviceEvent::TxDone,
                DeviceEvent::IdleTimeout,
            ];
            let mut s = PowerState::Sleep;
            for e in events {
                let t = step_state_machine(s, all[e]);
                prop_assert_eq!(t.from, s);
                if t.is_noop() {
                    prop_assert_eq!(t.to, s);
                }
                s = t.to;
            }
        }
    }
}
