use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Step changes of the carried payload: `(time s, mass kg)`, strictly
/// increasing in time. Before the first event the plant's configured payload
/// applies.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PayloadSchedule {
    events: Vec<(f64, f64)>,
}

impl PayloadSchedule {
    pub fn new(events: Vec<(f64, f64)>) -> Result<Self> {
        for w in events.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::InvalidParameter(format!(
                    "payload event times must increase: {} then {}",
                    w[0].0, w[1].0
                )));
            }
        }
        if let Some((t, m)) = events.iter().find(|(t, m)| !(*m >= 0.0) || !t.is_finite()) {
            return Err(Error::InvalidParameter(format!("payload event ({t}, {m})")));
        }
        Ok(Self { events })
    }

    pub fn constant(mass: f64) -> Self {
        Self { events: vec![(f64::NEG_INFINITY, mass)] }
    }

    pub fn events(&self) -> &[(f64, f64)] {
        &self.events
    }

    pub fn mass_at(&self, t: f64, default: f64) -> f64 {
        self.events
            .iter()
            .take_while(|(te, _)| *te <= t)
            .last()
            .map_or(default, |(_, m)| *m)
    }

    /// Scale every event mass, keeping event times.
    pub fn scaled_to(&self, mass: f64) -> Self {
        Self {
            events: self
                .events
                .iter()
                .map(|&(t, m)| (t, if m > 0.0 { mass } else { 0.0 }))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup() {
        let s = PayloadSchedule::new(vec![(1.0, 0.3), (2.0, 0.5)]).unwrap();
        assert_eq!(s.mass_at(0.5, 0.0), 0.0);
        assert_eq!(s.mass_at(1.0, 0.0), 0.3);
        assert_eq!(s.mass_at(5.0, 0.0), 0.5);
    }

    #[test]
    fn rejects_bad_events() {
        assert!(PayloadSchedule::new(vec![(1.0, 0.3), (1.0, 0.5)]).is_err());
        assert!(PayloadSchedule::new(vec![(1.0, -0.1)]).is_err());
    }
}
