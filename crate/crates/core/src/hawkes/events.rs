use std::io::{BufRead, Write};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub time: f64,
    /// 0-based user index.
    pub user: usize,
}

/// Time-ordered activity over `[0, horizon]`. Equal timestamps are ordered by
/// user index.
#[derive(Clone, Debug, PartialEq)]
pub struct EventSequence {
    horizon: f64,
    n: usize,
    events: Vec<Event>,
}

impl EventSequence {
    pub fn new(horizon: f64, n: usize, mut events: Vec<Event>) -> Result<Self> {
        if !(horizon.is_finite() && horizon >= 0.0) {
            return Err(Error::Domain(format!("horizon must be finite and >= 0, got {horizon}")));
        }
        for e in &events {
            if !(e.time >= 0.0 && e.time <= horizon) {
                return Err(Error::Domain(format!("event time {} outside [0, {horizon}]", e.time)));
            }
            if e.user >= n {
                return Err(Error::Domain(format!("event user {} >= n = {n}", e.user)));
            }
        }
        events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.user.cmp(&b.user)));
        Ok(Self { horizon, n, events })
    }

    pub fn empty(horizon: f64, n: usize) -> Self {
        Self {
            horizon,
            n,
            events: Vec::new(),
        }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events with `t_a <= time < t_b`.
    pub fn window(&self, t_a: f64, t_b: f64) -> &[Event] {
        let lo = self.events.partition_point(|e| e.time < t_a);
        let hi = self.events.partition_point(|e| e.time < t_b);
        &self.events[lo..hi.max(lo)]
    }

    /// Appends events that are already sorted and later than every stored event.
    pub fn extend_sorted(&mut self, more: &[Event]) {
        debug_assert!(more.windows(2).all(|w| w[0].time <= w[1].time));
        debug_assert!(match (self.events.last(), more.first()) {
            (Some(a), Some(b)) => a.time <= b.time,
            _ => true,
        });
        self.events.extend_from_slice(more);
    }

    /// Writes `time,user` CSV with 17 significant digits per time stamp.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "time,user")?;
        for e in &self.events {
            writeln!(w, "{:.16e},{}", e.time, e.user)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, horizon: f64, n: usize) -> Result<Self> {
        let mut events = Vec::new();
        for (idx, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let trimmed = line.trim();
            if idx == 0 {
                if trimmed != "time,user" {
                    return Err(Error::Parse {
                        line: 1,
                        field: "header".into(),
                        message: format!("expected `time,user`, found `{trimmed}`"),
                    });
                }
                continue;
            }
            if trimmed.is_empty() {
                continue;
            }
            let (t, u) = trimmed.split_once(',').ok_or_else(|| Error::Parse {
                line: lineno,
                field: "row".into(),
                message: "expected two comma-separated fields".into(),
            })?;
            let time = t.trim().parse::<f64>().map_err(|e| Error::Parse {
                line: lineno,
                field: "time".into(),
                message: e.to_string(),
            })?;
            let user = u.trim().parse::<usize>().map_err(|e| Error::Parse {
                line: lineno,
                field: "user".into(),
                message: e.to_string(),
            })?;
            events.push(Event { time, user });
        }
        Self::new(horizon, n, events)
    }
}
