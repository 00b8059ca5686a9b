//! Experiment finite-state machine: Start → Impact → Admittance → Detach →
//! Reset, transitions strictly in that order.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Start,
    Impact,
    Admittance,
    Detach,
    Reset,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Start => "start",
            Phase::Impact => "impact",
            Phase::Admittance => "admittance",
            Phase::Detach => "detach",
            Phase::Reset => "reset",
        }
    }
}

/// Phase machine with force-threshold impact detection and timed phases.
#[derive(Debug, Clone)]
pub struct PhaseMachine {
    phase: Phase,
    /// Contact force magnitude that flags the impact, N.
    pub detection_threshold: f64,
    /// Admittance force setpoint, N.
    pub admittance_setpoint: f64,
    /// Velocity-level admittance gain, (m/s)/N.
    pub admittance_gain: f64,
    /// Time spent in Start before the approach begins.
    pub start_duration: f64,
    /// Time force regulation runs before detaching.
    pub admittance_duration: f64,
    /// Time spent retracting before Reset.
    pub detach_duration: f64,
    phase_entered_at: f64,
    /// Set while in Impact once an impact event fired, cleared on transition.
    impact_seen: bool,
}

impl PhaseMachine {
    pub fn new(
        detection_threshold: f64,
        admittance_setpoint: f64,
        admittance_gain: f64,
        start_duration: f64,
        admittance_duration: f64,
        detach_duration: f64,
    ) -> Self {
        Self {
            phase: Phase::Start,
            detection_threshold,
            admittance_setpoint,
            admittance_gain,
            start_duration,
            admittance_duration,
            detach_duration,
            phase_entered_at: 0.0,
            impact_seen: false,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn note_impact_event(&mut self) {
        if self.phase == Phase::Impact {
            self.impact_seen = true;
        }
    }

    /// Advance the machine; `hand_force` is the largest measured contact
    /// force magnitude among the impact-task end-effectors. Returns the new
    /// phase when a transition fired.
    pub fn advance(&mut self, time: f64, hand_force: f64) -> Option<Phase> {
        let next = match self.phase {
            Phase::Start if time - self.phase_entered_at >= self.start_duration => {
                Some(Phase::Impact)
            }
            Phase::Impact if self.impact_seen && hand_force >= self.detection_threshold => {
                Some(Phase::Admittance)
            }
            Phase::Admittance
                if time - self.phase_entered_at >= self.admittance_duration =>
            {
                Some(Phase::Detach)
            }
            Phase::Detach if time - self.phase_entered_at >= self.detach_duration => {
                Some(Phase::Reset)
            }
            _ => None,
        };
        if let Some(phase) = next {
            debug_assert!(phase > self.phase, "phase order is monotone");
            self.phase = phase;
            self.phase_entered_at = time;
            self.impact_seen = false;
        }
        next
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transitions_follow_the_legal_order() {
        let mut fsm = PhaseMachine::new(20.0, 15.0, 2e-3, 0.2, 1.0, 0.5);
        assert_eq!(fsm.phase(), Phase::Start);
        assert_eq!(fsm.advance(0.1, 0.0), None);
        assert_eq!(fsm.advance(0.2, 0.0), Some(Phase::Impact));
        // Force alone does not transition without an impact event.
        assert_eq!(fsm.advance(0.3, 50.0), None);
        fsm.note_impact_event();
        assert_eq!(fsm.advance(0.31, 19.0), None); // below threshold
        assert_eq!(fsm.advance(0.32, 21.0), Some(Phase::Admittance));
        assert_eq!(fsm.advance(1.0, 15.0), None);
        assert_eq!(fsm.advance(1.32, 15.0), Some(Phase::Detach));
        assert_eq!(fsm.advance(1.82, 0.0), Some(Phase::Reset));
        assert_eq!(fsm.advance(10.0, 0.0), None);
    }
}
