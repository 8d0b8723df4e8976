//! Named, code-backed decisions and actions.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use crate::storage::InteractionStorage;
use crate::utterance::Utterance;

pub type Predicate = Arc<dyn Fn(&[Utterance], &InteractionStorage) -> bool + Send + Sync>;
pub type Effect = Arc<dyn Fn(&[Utterance], &mut InteractionStorage) + Send + Sync>;

/// Predicates and effects that machine specs may reference by name.
///
/// Registered functions are shared by every instance and may run
/// concurrently, so they must not rely on per-call mutable state.
#[derive(Clone, Default)]
pub struct Registry {
    predicates: HashMap<String, Predicate>,
    effects: HashMap<String, Effect>,
}

impl Registry {
    /// Registry with `always`/`never` predicates and a `noop` effect.
    pub fn with_builtins() -> Self {
        let mut r = Self::default();
        r.register_predicate("always", |_, _| true);
        r.register_predicate("never", |_, _| false);
        r.register_effect("noop", |_, _| {});
        r
    }

    pub fn register_predicate<F>(&mut self, id: impl Into<String>, f: F) -> &mut Self
    where
        F: Fn(&[Utterance], &InteractionStorage) -> bool + Send + Sync + 'static,
    {
        self.predicates.insert(id.into(), Arc::new(f));
        self
    }

    pub fn register_effect<F>(&mut self, id: impl Into<String>, f: F) -> &mut Self
    where
        F: Fn(&[Utterance], &mut InteractionStorage) + Send + Sync + 'static,
    {
        self.effects.insert(id.into(), Arc::new(f));
        self
    }

    pub fn predicate(&self, id: &str) -> Option<&Predicate> {
        self.predicates.get(id)
    }

    pub fn effect(&self, id: &str) -> Option<&Effect> {
        self.effects.get(id)
    }

    pub fn has_predicate(&self, id: &str) -> bool {
        self.predicates.contains_key(id)
    }

    pub fn has_effect(&self, id: &str) -> bool {
        self.effects.contains_key(id)
    }
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut p: Vec<_> = self.predicates.keys().collect();
        let mut e: Vec<_> = self.effects.keys().collect();
        p.sort();
        e.sort();
        f.debug_struct("Registry")
            .field("predicates", &p)
            .field("effects", &e)
            .finish()
    }
}
