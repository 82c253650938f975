#![allow(dead_code)]

use ebdevs::{
    Atomic, Context, Family, GlobalContext, HookResult, Input, MacroBehaviour, ModelError, Outbox, Port, QueryError,
    RngStream, SimTime,
};

pub struct Fam;

impl Family for Fam {
    type Msg = String;
    type Up = String;
    type Query = &'static str;
    type Answer = usize;
}

pub const OUT: Port = Port::new("out");
pub const IN: Port = Port::new("in");

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Int(f64),
    Ext { at: f64, elapsed: f64, payloads: Vec<String> },
}

/// Test atomic: cycles through `periods` (INFINITY after the list ends unless
/// `repeat`), emits `name` on `out` before each internal transition, and
/// optionally raises a y_up after each transition.
pub struct Probe {
    pub name: String,
    pub periods: Vec<f64>,
    pub repeat: bool,
    pub next: usize,
    pub emit: bool,
    pub yup: bool,
    pub pending: Option<String>,
    pub log: Vec<Event>,
    pub seen_macro: Vec<Result<usize, QueryError>>,
    pub ta_override: Option<f64>,
}

impl Probe {
    pub fn periodic(name: &str, period: f64) -> Self {
        Self::new(name, vec![period], true)
    }

    pub fn new(name: &str, periods: Vec<f64>, repeat: bool) -> Self {
        Self {
            name: name.into(),
            periods,
            repeat,
            next: 0,
            emit: true,
            yup: false,
            pending: None,
            log: Vec::new(),
            seen_macro: Vec::new(),
            ta_override: None,
        }
    }

    pub fn passive(name: &str) -> Self {
        Self::new(name, vec![], false)
    }

    pub fn with_yup(mut self) -> Self {
        self.yup = true;
        self
    }

    pub fn silent(mut self) -> Self {
        self.emit = false;
        self
    }

    fn current(&self) -> f64 {
        if self.periods.is_empty() {
            return f64::INFINITY;
        }
        if self.repeat {
            self.periods[self.next % self.periods.len()]
        } else {
            self.periods.get(self.next).copied().unwrap_or(f64::INFINITY)
        }
    }
}

impl Atomic<Fam> for Probe {
    fn delta_int(&mut self, ctx: &mut Context<'_, Fam>) -> HookResult {
        self.log.push(Event::Int(ctx.now().value()));
        self.seen_macro.push(ctx.v_down(&"count"));
        self.next += 1;
        if self.yup {
            self.pending = Some(format!("{}:int", self.name));
        }
        Ok(())
    }

    fn delta_ext(&mut self, elapsed: SimTime, inputs: &[Input<String>], ctx: &mut Context<'_, Fam>) -> HookResult {
        self.log.push(Event::Ext {
            at: ctx.now().value(),
            elapsed: elapsed.value(),
            payloads: inputs.iter().map(|i| (*i.payload).clone()).collect(),
        });
        if self.yup {
            self.pending = Some(format!("{}:ext", self.name));
        }
        Ok(())
    }

    fn output(&mut self, _ctx: &mut Context<'_, Fam>, out: &mut Outbox<String>) -> HookResult {
        if self.emit {
            out.send(OUT, self.name.clone());
        }
        Ok(())
    }

    fn time_advance(&self) -> f64 {
        self.ta_override.unwrap_or_else(|| self.current())
    }

    fn take_yup(&mut self) -> Option<String> {
        self.pending.take()
    }
}

/// Macro state that records every batch and counts received values.
#[derive(Default)]
pub struct Recorder {
    pub batches: Vec<(f64, f64, Vec<String>)>,
    pub forward: bool,
}

impl MacroBehaviour<Fam> for Recorder {
    fn global_transition(
        &mut self,
        elapsed: SimTime,
        batch: Vec<String>,
        ctx: &mut GlobalContext<'_, Fam>,
    ) -> Result<Option<String>, ModelError> {
        let up = self.forward.then(|| format!("g{}", batch.len()));
        self.batches.push((ctx.now().value(), elapsed.value(), batch));
        Ok(up)
    }

    fn v_down(&self, query: &&'static str, _rng: &mut RngStream) -> Result<usize, QueryError> {
        match *query {
            "count" => Ok(self.batches.iter().map(|b| b.2.len()).sum()),
            other => Err(QueryError::UnknownProperty(other.into())),
        }
    }
}

pub fn t(x: f64) -> SimTime {
    SimTime::new(x).unwrap()
}
