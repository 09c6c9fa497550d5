//! Entity sets: the unit of encoding, training and inference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub text: String,
}

impl Entity {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }
}

/// Ordered entities sharing one context. Entity ids are unique within a set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySet {
    pub set_id: String,
    pub entities: Vec<Entity>,
}

impl EntitySet {
    pub fn new(set_id: impl Into<String>, entities: Vec<Entity>) -> Result<Self> {
        let set = Self {
            set_id: set_id.into(),
            entities,
        };
        set.validate()?;
        Ok(set)
    }

    /// Builds a set whose entity ids are `"0"`, `"1"`, ... in text order.
    pub fn from_texts<S: AsRef<str>>(set_id: impl Into<String>, texts: &[S]) -> Result<Self> {
        let entities = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Entity::new(i.to_string(), t.as_ref()))
            .collect();
        Self::new(set_id, entities)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entities.is_empty() {
            return Err(Error::Invalid(format!("set `{}` has no entities", self.set_id)));
        }
        let mut seen = std::collections::HashSet::new();
        for e in &self.entities {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Invalid(format!(
                    "set `{}` repeats entity id `{}`",
                    self.set_id, e.id
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.entities.iter().position(|e| e.id == id)
    }

    /// Same set with entities reordered so that new position `i` holds old `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            set_id: self.set_id.clone(),
            entities: perm.iter().map(|&i| self.entities[i].clone()).collect(),
        }
    }
}
