use std::collections::{BTreeMap, BTreeSet};

use super::{ModelId, PortRef};

/// Port-to-port couplings of the whole model tree, indexed in both
/// directions so a model's couplings can be purged without a full scan.
#[derive(Debug, Default, Clone)]
pub struct Couplings {
    forward: BTreeMap<PortRef, BTreeSet<PortRef>>,
    backward: BTreeMap<PortRef, BTreeSet<PortRef>>,
    count: usize,
}

impl Couplings {
    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn contains(&self, from: PortRef, to: PortRef) -> bool {
        self.forward.get(&from).is_some_and(|d| d.contains(&to))
    }

    /// Returns false if the coupling already existed.
    pub(crate) fn insert(&mut self, from: PortRef, to: PortRef) -> bool {
        let fresh = self.forward.entry(from).or_default().insert(to);
        if fresh {
            self.backward.entry(to).or_default().insert(from);
            self.count += 1;
        }
        fresh
    }

    /// Returns false if there was no such coupling.
    pub(crate) fn remove(&mut self, from: PortRef, to: PortRef) -> bool {
        let Some(dests) = self.forward.get_mut(&from) else {
            return false;
        };
        if !dests.remove(&to) {
            return false;
        }
        if dests.is_empty() {
            self.forward.remove(&from);
        }
        if let Some(srcs) = self.backward.get_mut(&to) {
            srcs.remove(&from);
            if srcs.is_empty() {
                self.backward.remove(&to);
            }
        }
        self.count -= 1;
        true
    }

    pub fn destinations(&self, from: PortRef) -> impl Iterator<Item = PortRef> + '_ {
        self.forward.get(&from).into_iter().flatten().copied()
    }

    /// Every coupling with `model` at either end.
    pub fn incident(&self, model: ModelId) -> Vec<(PortRef, PortRef)> {
        let range = PortRef::lowest(model)..PortRef::lowest(ModelId(model.0 + 1));
        let mut out: Vec<(PortRef, PortRef)> = self
            .forward
            .range(range.clone())
            .flat_map(|(from, dests)| dests.iter().map(move |to| (*from, *to)))
            .collect();
        out.extend(
            self.backward
                .range(range)
                .flat_map(|(to, srcs)| srcs.iter().map(move |from| (*from, *to)))
                .filter(|(from, _)| from.model != model),
        );
        out
    }

    /// Removes every coupling touching `model`; returns how many went.
    pub(crate) fn purge(&mut self, model: ModelId) -> usize {
        let doomed = self.incident(model);
        for (from, to) in &doomed {
            self.remove(*from, *to);
        }
        doomed.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (PortRef, PortRef)> + '_ {
        self.forward
            .iter()
            .flat_map(|(from, dests)| dests.iter().map(move |to| (*from, *to)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Port;

    fn out(m: u32) -> PortRef {
        PortRef::output(ModelId(m), Port::new("out"))
    }

    fn inp(m: u32) -> PortRef {
        PortRef::input(ModelId(m), Port::new("in"))
    }

    #[test]
    fn purge_removes_both_directions() {
        let mut c = Couplings::default();
        c.insert(out(1), inp(2));
        c.insert(out(2), inp(1));
        c.insert(out(2), inp(3));
        c.insert(out(3), inp(4));
        assert_eq!(c.incident(ModelId(2)).len(), 3);
        assert_eq!(c.purge(ModelId(2)), 3);
        assert_eq!(c.len(), 1);
        assert!(c.contains(out(3), inp(4)));
        assert!(c.incident(ModelId(2)).is_empty());
    }

    #[test]
    fn duplicate_insert_is_noop() {
        let mut c = Couplings::default();
        assert!(c.insert(out(1), inp(2)));
        assert!(!c.insert(out(1), inp(2)));
        assert_eq!(c.len(), 1);
        assert!(!c.remove(out(2), inp(1)));
    }
}
