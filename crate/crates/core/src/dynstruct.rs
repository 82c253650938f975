//! Run-time structure changes.
//!
//! Changes are queued by global or structure transitions and applied in
//! queue order once the step's transitions are over, so routing never sees
//! a half-modified tree. Ids are never reused: a removed atomic's id stays
//! retired.

use std::fmt;

use crate::error::SimError;
use crate::kernel::{Atomic, Family, ModelId, PortRef, Simulation};

pub enum StructureChange<F: Family> {
    /// Inserts an atomic under `parent`. `id` must come from an id
    /// reservation. The new model starts with `last_event = clock`.
    AddAtomic {
        id: ModelId,
        parent: ModelId,
        name: String,
        behaviour: Box<dyn Atomic<F>>,
    },
    /// Removes an atomic together with all couplings touching it.
    RemoveAtomic(ModelId),
    Connect(PortRef, PortRef),
    Disconnect(PortRef, PortRef),
    /// Re-parenting is not supported and always fails.
    MoveModel { model: ModelId, new_parent: ModelId },
}

impl<F: Family> fmt::Debug for StructureChange<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StructureChange::AddAtomic { id, parent, name, .. } => {
                write!(f, "AddAtomic({id} {name:?} in {parent})")
            }
            StructureChange::RemoveAtomic(id) => write!(f, "RemoveAtomic({id})"),
            StructureChange::Connect(a, b) => write!(f, "Connect({a} -> {b})"),
            StructureChange::Disconnect(a, b) => write!(f, "Disconnect({a} -> {b})"),
            StructureChange::MoveModel { model, new_parent } => write!(f, "MoveModel({model} to {new_parent})"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AppliedReport {
    pub added: Vec<ModelId>,
    pub removed: Vec<ModelId>,
    pub connected: usize,
    pub disconnected: usize,
}

impl AppliedReport {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty() && self.connected == 0 && self.disconnected == 0
    }
}

impl<F: Family> Simulation<F> {
    /// Applies `changes` in order at the current clock. The first invalid
    /// change aborts with a structure error; earlier ones stay applied.
    pub fn apply_changes(&mut self, changes: Vec<StructureChange<F>>) -> Result<AppliedReport, SimError> {
        let mut report = AppliedReport::default();
        if changes.is_empty() {
            return Ok(report);
        }
        self.invalidate_routes();
        for change in changes {
            match change {
                StructureChange::AddAtomic {
                    id,
                    parent,
                    name,
                    behaviour,
                } => {
                    self.insert_atomic(id, parent, name, behaviour)?;
                    report.added.push(id);
                }
                StructureChange::RemoveAtomic(id) => {
                    self.drop_atomic(id)?;
                    report.removed.push(id);
                }
                StructureChange::Connect(from, to) => {
                    for end in [from, to] {
                        if !self.contains(end.model) {
                            return Err(SimError::Structure(format!("{end} refers to a missing model")));
                        }
                    }
                    self.validate(from, to)?;
                    if !self.couplings.insert(from, to) {
                        return Err(SimError::Structure(format!("{from} -> {to} is already coupled")));
                    }
                    report.connected += 1;
                }
                StructureChange::Disconnect(from, to) => {
                    if !self.couplings.remove(from, to) {
                        return Err(SimError::Structure(format!("{from} -> {to} is not coupled")));
                    }
                    report.disconnected += 1;
                }
                StructureChange::MoveModel { model, new_parent } => {
                    return Err(SimError::Structure(format!(
                        "moving {model} under {new_parent} is not supported"
                    )));
                }
            }
        }
        Ok(report)
    }
}
