//! Central directory of agent cards.

use std::sync::{Arc, RwLock};

use rcdiag_core::domain::{AgentCard, DomainError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RegistryError {
    #[error(transparent)]
    InvalidCard(#[from] DomainError),
    #[error("agent {name:?} is already registered with a different schema")]
    Conflict { name: String },
}

/// Cards in registration order. Re-registering the same name and version
/// replaces the entry in place; the same name with a different schema is
/// refused.
#[derive(Clone, Default)]
pub struct Registry {
    cards: Arc<RwLock<Vec<AgentCard>>>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&self, card: AgentCard) -> Result<String, RegistryError> {
        card.validate()?;
        let mut cards = self.cards.write().expect("registry poisoned");
        let id = card.id();
        if let Some(pos) = cards.iter().position(|c| c.name == card.name) {
            let old = &cards[pos];
            let same_schema = old.input_schema == card.input_schema && old.output_schema == card.output_schema;
            if old.version == card.version || same_schema {
                cards[pos] = card;
                return Ok(id);
            }
            return Err(RegistryError::Conflict { name: card.name });
        }
        cards.push(card);
        Ok(id)
    }

    pub fn list(&self) -> Vec<AgentCard> {
        self.cards.read().expect("registry poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.cards.read().expect("registry poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cards offering `tag`, in registration order.
    pub fn find_by_capability(&self, tag: &str) -> Vec<AgentCard> {
        self.cards.read().expect("registry poisoned").iter().filter(|c| c.offers(tag)).cloned().collect()
    }

    pub fn get(&self, name: &str) -> Option<AgentCard> {
        self.cards.read().expect("registry poisoned").iter().find(|c| c.name == name).cloned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn card(name: &str, version: &str, tag: &str) -> AgentCard {
        AgentCard::new(name, version, format!("http://127.0.0.1:9/{name}")).with_capability(tag)
    }

    #[test]
    fn register_then_list() {
        let r = Registry::new();
        r.register(card("preprocessing", "1", "preprocessing")).unwrap();
        assert!(r.list().iter().any(|c| c.name == "preprocessing"));
    }

    #[test]
    fn re_register_is_idempotent() {
        let r = Registry::new();
        r.register(card("a", "1", "x")).unwrap();
        r.register(card("a", "1", "x")).unwrap();
        assert_eq!(r.len(), 1);
    }

    #[test]
    fn empty_capabilities_rejected() {
        let r = Registry::new();
        let bad = AgentCard::new("a", "1", "http://h");
        assert!(matches!(r.register(bad), Err(RegistryError::InvalidCard(_))));
    }

    #[test]
    fn schema_conflict() {
        let r = Registry::new();
        r.register(card("a", "1", "x").with_schemas(&["data_ref"], &["out"])).unwrap();
        let other = card("a", "2", "x").with_schemas(&["row"], &["out"]);
        assert_eq!(r.register(other), Err(RegistryError::Conflict { name: "a".into() }));
    }

    #[test]
    fn lookup_by_tag_in_registration_order() {
        let r = Registry::new();
        r.register(card("first", "1", "echo")).unwrap();
        r.register(card("other", "1", "anomaly")).unwrap();
        r.register(card("second", "1", "echo")).unwrap();
        let names: Vec<String> = r.find_by_capability("echo").into_iter().map(|c| c.name).collect();
        assert_eq!(names, ["first", "second"]);
        assert!(r.find_by_capability("nope").is_empty());
    }

    #[test]
    fn concurrent_register_is_visible() {
        let r = Registry::new();
        let hs: Vec<_> = (0..100)
            .map(|i| {
                let r = r.clone();
                std::thread::spawn(move || {
                    r.register(card(&format!("a{i}"), "1", "echo")).unwrap();
                    assert!(r.find_by_capability("echo").iter().any(|c| c.name == format!("a{i}")));
                })
            })
            .collect();
        for h in hs {
            h.join().unwrap();
        }
        assert_eq!(r.find_by_capability("echo").len(), 100);
    }
}
