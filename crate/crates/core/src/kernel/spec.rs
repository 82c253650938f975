use std::collections::HashSet;

use super::{Atomic, Couplings, Direction, Family, ModelId, PortRef};
use crate::error::SimError;
use crate::macrolevel::MacroBehaviour;

pub(crate) enum SpecNode<F: Family> {
    Atomic {
        name: String,
        parent: ModelId,
        behaviour: Box<dyn Atomic<F>>,
    },
    Coupled {
        name: String,
        parent: Option<ModelId>,
        children: Vec<ModelId>,
        behaviour: Option<Box<dyn MacroBehaviour<F>>>,
    },
}

/// Declarative description of a coupled model tree, consumed by
/// [`Simulation::initialize`](super::Simulation::initialize).
///
/// Components are kept in insertion order, which is also the tie-breaking
/// order among simultaneous events. The root coupled model always has id 0.
pub struct CoupledSpec<F: Family> {
    pub(crate) nodes: Vec<SpecNode<F>>,
    pub(crate) couplings: Couplings,
    names: HashSet<(ModelId, String)>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct NodeInfo {
    pub parent: Option<ModelId>,
    pub coupled: bool,
}

impl<F: Family> CoupledSpec<F> {
    pub fn new(root_name: impl Into<String>) -> Self {
        Self {
            nodes: vec![SpecNode::Coupled {
                name: root_name.into(),
                parent: None,
                children: Vec::new(),
                behaviour: None,
            }],
            couplings: Couplings::default(),
            names: HashSet::new(),
        }
    }

    pub fn root(&self) -> ModelId {
        ModelId(0)
    }

    pub fn add_atomic(
        &mut self,
        parent: ModelId,
        name: impl Into<String>,
        behaviour: impl Atomic<F>,
    ) -> Result<ModelId, SimError> {
        self.add_atomic_boxed(parent, name.into(), Box::new(behaviour))
    }

    pub fn add_atomic_boxed(
        &mut self,
        parent: ModelId,
        name: String,
        behaviour: Box<dyn Atomic<F>>,
    ) -> Result<ModelId, SimError> {
        let id = self.register(parent, &name)?;
        self.nodes.push(SpecNode::Atomic { name, parent, behaviour });
        Ok(id)
    }

    pub fn add_coupled(&mut self, parent: ModelId, name: impl Into<String>) -> Result<ModelId, SimError> {
        let name = name.into();
        let id = self.register(parent, &name)?;
        self.nodes.push(SpecNode::Coupled {
            name,
            parent: Some(parent),
            children: Vec::new(),
            behaviour: None,
        });
        Ok(id)
    }

    /// Attaches macro-level behaviour (macro state, global transition and
    /// downward information) to a coupled model.
    pub fn set_macro(&mut self, coupled: ModelId, macro_behaviour: impl MacroBehaviour<F>) -> Result<(), SimError> {
        match self.nodes.get_mut(coupled.index()) {
            Some(SpecNode::Coupled { behaviour, .. }) => {
                *behaviour = Some(Box::new(macro_behaviour));
                Ok(())
            }
            _ => Err(SimError::Config(format!("{coupled} is not a coupled model"))),
        }
    }

    pub fn connect(&mut self, from: PortRef, to: PortRef) -> Result<(), SimError> {
        validate_coupling(from, to, |id| self.info(id))?;
        self.couplings.insert(from, to);
        Ok(())
    }

    pub fn component_count(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn coupling_count(&self) -> usize {
        self.couplings.len()
    }

    fn info(&self, id: ModelId) -> Option<NodeInfo> {
        self.nodes.get(id.index()).map(|n| match n {
            SpecNode::Atomic { parent, .. } => NodeInfo {
                parent: Some(*parent),
                coupled: false,
            },
            SpecNode::Coupled { parent, .. } => NodeInfo {
                parent: *parent,
                coupled: true,
            },
        })
    }

    fn register(&mut self, parent: ModelId, name: &str) -> Result<ModelId, SimError> {
        let id = ModelId(self.nodes.len() as u32);
        let Some(SpecNode::Coupled { children, .. }) = self.nodes.get_mut(parent.index()) else {
            return Err(SimError::Config(format!("parent {parent} is not a coupled model")));
        };
        if !self.names.insert((parent, name.to_owned())) {
            return Err(SimError::Config(format!("duplicate model id {name:?} in {parent}")));
        }
        children.push(id);
        Ok(id)
    }
}

/// Checks a coupling against the tree shape and returns the coupled model
/// that owns it. Legal shapes: internal (sibling output to sibling input),
/// external input (parent input to child input) and external output (child
/// output to parent output).
pub(crate) fn validate_coupling(
    from: PortRef,
    to: PortRef,
    info: impl Fn(ModelId) -> Option<NodeInfo>,
) -> Result<ModelId, SimError> {
    let src = info(from.model).ok_or_else(|| SimError::coupling(from, to, "unknown source model"))?;
    let dst = info(to.model).ok_or_else(|| SimError::coupling(from, to, "unknown destination model"))?;
    if from.model == to.model {
        return Err(SimError::coupling(from, to, "self-loop"));
    }
    match (from.direction, to.direction) {
        (Direction::Output, Direction::Input) => match (src.parent, dst.parent) {
            (Some(a), Some(b)) if a == b => Ok(a),
            _ => Err(SimError::coupling(from, to, "internal coupling between non-siblings")),
        },
        (Direction::Input, Direction::Input) => {
            if src.coupled && dst.parent == Some(from.model) {
                Ok(from.model)
            } else {
                Err(SimError::coupling(from, to, "input to input outside an external input coupling"))
            }
        }
        (Direction::Output, Direction::Output) => {
            if dst.coupled && src.parent == Some(to.model) {
                Ok(to.model)
            } else {
                Err(SimError::coupling(from, to, "output to output outside an external output coupling"))
            }
        }
        (Direction::Input, Direction::Output) => Err(SimError::coupling(from, to, "input feeding an output")),
    }
}
