//! Test-data service: a read-only store of user records.
//!
//! Credentials and profile data for test runs come from a JSON file rather
//! than being hardcoded in fragments, so the same suite can run against
//! different user pools. Selection is deterministic: callers pass a cursor
//! and get users matching a maturity filter in round-robin order.

use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Maturity {
    New,
    Intermediate,
    Advanced,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct User {
    pub country: String,
    pub email: String,
    pub maturity: Maturity,
    pub name: String,
    pub password: String,
    pub title: String,
}

#[derive(Debug, thiserror::Error)]
pub enum QtdsError {
    #[error("no user in the store matches filter {filter:?}")]
    NoMatchingUser { filter: Option<Maturity> },
    #[error("cannot read user store {path}: {source}")]
    StoreRead {
        path: String,
        source: std::io::Error,
    },
    #[error("user store does not parse: {0}")]
    StoreParse(#[from] serde_json::Error),
    #[error("duplicate email '{0}' in user store")]
    DuplicateEmail(String),
}

/// An immutable pool of users, loaded once per run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QtdsStore {
    users: Vec<User>,
}

impl QtdsStore {
    pub fn from_json(text: &str) -> Result<Self, QtdsError> {
        let users: Vec<User> = serde_json::from_str(text)?;
        for (i, user) in users.iter().enumerate() {
            if users[..i].iter().any(|u| u.email == user.email) {
                return Err(QtdsError::DuplicateEmail(user.email.clone()));
            }
        }
        Ok(QtdsStore { users })
    }

    pub fn load(path: &Path) -> Result<Self, QtdsError> {
        let text = std::fs::read_to_string(path).map_err(|source| QtdsError::StoreRead {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn users(&self) -> &[User] {
        &self.users
    }

    /// The `cursor`-th user matching `filter`, wrapping around, in store
    /// order. The store itself is never mutated; the caller advances the
    /// cursor.
    pub fn get_user(&self, filter: Option<Maturity>, cursor: u64) -> Result<&User, QtdsError> {
        let matching: Vec<&User> = self
            .users
            .iter()
            .filter(|u| filter.is_none_or(|m| u.maturity == m))
            .collect();
        if matching.is_empty() {
            return Err(QtdsError::NoMatchingUser { filter });
        }
        Ok(matching[(cursor % matching.len() as u64) as usize])
    }
}

/// One-shot convenience: load the store at `path` and pick a user.
pub fn qtds_get_user(
    path: &Path,
    filter: Option<Maturity>,
    cursor: u64,
) -> Result<User, QtdsError> {
    Ok(QtdsStore::load(path)?.get_user(filter, cursor)?.clone())
}
