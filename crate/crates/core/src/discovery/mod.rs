//! Profile search with per-profile visibility.
//!
//! Users publish any number of profiles from an account. Every field is
//! tokenized into an inverted index at publish time and removed at
//! unpublish time, so results never lag behind the owner's intent.

mod rotation;
mod tokenize;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use rotation::{rotate_endpoint_urls, Rotated, RotationError, RotationHook, RotationPolicy, Rotator};
pub use tokenize::tokenize;

use crate::guid::Guid;

pub type AccountId = String;
pub type ProfileId = String;

pub const RESPONSE_FOUND: u16 = 201;
pub const RESPONSE_NOT_FOUND: u16 = 404;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    Public,
    /// Anyone with an account on this discovery instance.
    ImadsUsers,
    /// Only accounts in the profile's favorites list.
    Favorites,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Requester {
    Anonymous,
    Account(AccountId),
}

/// Profile content as submitted by its owner.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileDraft {
    pub headline: String,
    pub description: String,
    /// Each entry `#` followed by at least one non-space character.
    pub hashtags: Vec<String>,
    pub contacts: Vec<String>,
    pub guid: Option<String>,
    pub visibility: Option<Visibility>,
    pub favorites: BTreeSet<AccountId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profile {
    pub profile_id: ProfileId,
    pub owner_account: AccountId,
    pub headline: String,
    pub description: String,
    pub hashtags: Vec<String>,
    pub contacts: Vec<String>,
    pub guid: Option<Guid>,
    pub visibility: Visibility,
    pub favorites: BTreeSet<AccountId>,
    /// Publish order; later is more recent.
    pub published_seq: u64,
}

impl Profile {
    /// Index terms with occurrence counts. Hashtags count both as `#tag`
    /// and as plain `tag`.
    fn terms(&self) -> BTreeMap<String, u32> {
        let mut terms = BTreeMap::new();
        let texts = [&self.headline, &self.description].into_iter().chain(&self.contacts);
        for token in texts.flat_map(|t| tokenize(t)) {
            *terms.entry(token).or_insert(0) += 1;
        }
        for token in self.hashtags.iter().flat_map(|t| tokenize(t)) {
            if let Some(bare) = token.strip_prefix('#') {
                *terms.entry(bare.to_string()).or_insert(0) += 1;
            }
            *terms.entry(token).or_insert(0) += 1;
        }
        terms
    }

    /// Whether `requester` may see this profile. Owners always see their own.
    pub fn visible_to(&self, requester: &Requester, is_account: impl Fn(&str) -> bool) -> bool {
        let account = match requester {
            Requester::Anonymous => None,
            Requester::Account(a) if is_account(a) => Some(a),
            Requester::Account(_) => None,
        };
        if account.is_some_and(|a| *a == self.owner_account) {
            return true;
        }
        match self.visibility {
            Visibility::Public => true,
            Visibility::ImadsUsers => account.is_some(),
            Visibility::Favorites => account.is_some_and(|a| self.favorites.contains(a)),
        }
    }
}

/// Live endpoint attached to a search result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HypertyRef {
    pub url: String,
    #[serde(rename = "userID")]
    pub user_id: String,
    /// Uppercase capability names separated by spaces, e.g. `VIDEO`.
    pub media: String,
    pub provider: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResult {
    #[serde(rename = "resultNo")]
    pub result_no: usize,
    /// Space-separated.
    pub hashtags: String,
    pub description: String,
    /// Empty when the profile links no GUID.
    #[serde(rename = "GUID")]
    pub guid: String,
    pub headline: String,
    /// Space-separated.
    pub contacts: String,
    /// `"true"` or `"false"`.
    #[serde(rename = "hasGUID")]
    pub has_guid: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyperties: Option<Vec<HypertyRef>>,
}

impl SearchResult {
    pub fn guid(&self) -> Option<Guid> {
        (self.has_guid == "true").then(|| Guid::parse(&self.guid).ok()).flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscoveryResponse {
    #[serde(rename = "instanceID")]
    pub instance_id: String,
    #[serde(rename = "responseCode")]
    pub response_code: u16,
    #[serde(rename = "searchString")]
    pub search_string: String,
    pub results: Vec<SearchResult>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryContext {
    pub requester: Requester,
    pub raw_query: String,
    pub resolve_live: bool,
}

impl QueryContext {
    pub fn anonymous(query: impl Into<String>) -> Self {
        QueryContext { requester: Requester::Anonymous, raw_query: query.into(), resolve_live: false }
    }

    pub fn as_account(account: impl Into<AccountId>, query: impl Into<String>) -> Self {
        QueryContext { requester: Requester::Account(account.into()), raw_query: query.into(), resolve_live: false }
    }
}

/// Maps a GUID to its currently reachable endpoints for `resolve_live`
/// searches.
pub trait LiveResolver: Send + Sync {
    fn live_hyperties(&self, guid: &Guid) -> Vec<HypertyRef>;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DiscoveryError {
    #[error("empty search query")]
    EmptyQuery,
    #[error("invalid GUID: {0}")]
    InvalidGuid(String),
    #[error("invalid hashtag {0:?}")]
    InvalidHashtag(String),
    #[error("profile has no searchable content")]
    EmptyProfile,
    #[error("unknown account")]
    UnknownAccount,
    #[error("profile not found")]
    NotFound,
    #[error("profile belongs to another account")]
    Forbidden,
    #[error("account already exists")]
    AccountExists,
}

#[derive(Debug, Default)]
struct State {
    accounts: BTreeMap<AccountId, String>,
    tokens: BTreeMap<String, AccountId>,
    profiles: BTreeMap<ProfileId, (Profile, BTreeMap<String, u32>)>,
    index: BTreeMap<String, BTreeSet<ProfileId>>,
    next_profile: u64,
    next_seq: u64,
}

impl State {
    fn index(&mut self, profile: Profile) {
        let terms = profile.terms();
        for term in terms.keys() {
            self.index.entry(term.clone()).or_default().insert(profile.profile_id.clone());
        }
        self.profiles.insert(profile.profile_id.clone(), (profile, terms));
    }

    fn unindex(&mut self, id: &str) -> Option<Profile> {
        let (profile, terms) = self.profiles.remove(id)?;
        for term in terms.keys() {
            if let Some(ids) = self.index.get_mut(term) {
                ids.remove(id);
                if ids.is_empty() {
                    self.index.remove(term);
                }
            }
        }
        Some(profile)
    }
}

/// One discovery instance. Searches run concurrently under a read lock;
/// publish and unpublish swap a profile in or out under the write lock, so
/// a search sees a profile entirely or not at all.
pub struct DiscoveryService {
    instance_id: String,
    state: RwLock<State>,
    rng: std::sync::Mutex<ChaCha20Rng>,
    resolver: Option<Arc<dyn LiveResolver>>,
}

fn check_hashtag(tag: &str) -> Result<(), DiscoveryError> {
    match tag.strip_prefix('#') {
        Some(rest) if !rest.is_empty() && !rest.chars().any(char::is_whitespace) => Ok(()),
        _ => Err(DiscoveryError::InvalidHashtag(tag.to_string())),
    }
}

impl DiscoveryService {
    pub fn new(instance_id: impl Into<String>) -> Self {
        Self::with_rng(instance_id, ChaCha20Rng::from_entropy())
    }

    /// Uses `rng` for account tokens.
    pub fn with_rng(instance_id: impl Into<String>, rng: ChaCha20Rng) -> Self {
        DiscoveryService { instance_id: instance_id.into(), state: RwLock::default(), rng: std::sync::Mutex::new(rng), resolver: None }
    }

    pub fn with_resolver(mut self, resolver: Arc<dyn LiveResolver>) -> Self {
        self.resolver = Some(resolver);
        self
    }

    pub fn instance_id(&self) -> &str {
        &self.instance_id
    }

    fn read(&self) -> RwLockReadGuard<'_, State> {
        self.state.read().unwrap_or_else(|p| p.into_inner())
    }

    fn write(&self) -> RwLockWriteGuard<'_, State> {
        self.state.write().unwrap_or_else(|p| p.into_inner())
    }

    /// Creates an account and returns its bearer token.
    pub fn create_account(&self, account: impl Into<AccountId>) -> String {
        let account = account.into();
        let token = self.fresh_token();
        let mut state = self.write();
        if let Some(old) = state.accounts.insert(account.clone(), token.clone()) {
            state.tokens.remove(&old);
        }
        state.tokens.insert(token.clone(), account);
        token
    }

    /// Like [`create_account`](Self::create_account) but never replaces an
    /// existing account's token.
    pub fn register_account(&self, account: impl Into<AccountId>) -> Result<String, DiscoveryError> {
        let account = account.into();
        let token = self.fresh_token();
        let mut state = self.write();
        if state.accounts.contains_key(&account) {
            return Err(DiscoveryError::AccountExists);
        }
        state.accounts.insert(account.clone(), token.clone());
        state.tokens.insert(token.clone(), account);
        Ok(token)
    }

    fn fresh_token(&self) -> String {
        let mut bytes = [0u8; 24];
        self.rng.lock().unwrap_or_else(|p| p.into_inner()).fill_bytes(&mut bytes);
        bytes.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn authenticate(&self, token: &str) -> Option<AccountId> {
        self.read().tokens.get(token).cloned()
    }

    pub fn is_account(&self, account: &str) -> bool {
        self.read().accounts.contains_key(account)
    }

    /// Indexes a new profile owned by `account`.
    pub fn publish_profile(&self, account: &str, draft: ProfileDraft) -> Result<ProfileId, DiscoveryError> {
        let guid = draft.guid.as_deref().filter(|g| !g.is_empty()).map(Guid::parse).transpose().map_err(|e| DiscoveryError::InvalidGuid(e.to_string()))?;
        for tag in &draft.hashtags {
            check_hashtag(tag)?;
        }
        let mut state = self.write();
        if !state.accounts.contains_key(account) {
            return Err(DiscoveryError::UnknownAccount);
        }
        let profile_id = format!("p{}", state.next_profile);
        let profile = Profile {
            profile_id: profile_id.clone(),
            owner_account: account.to_string(),
            headline: draft.headline,
            description: draft.description,
            hashtags: draft.hashtags,
            contacts: draft.contacts,
            guid,
            visibility: draft.visibility.unwrap_or(Visibility::Public),
            favorites: draft.favorites,
            published_seq: state.next_seq,
        };
        if profile.terms().is_empty() {
            return Err(DiscoveryError::EmptyProfile);
        }
        state.next_profile += 1;
        state.next_seq += 1;
        state.index(profile);
        Ok(profile_id)
    }

    fn owned<'a>(state: &'a State, account: &str, id: &str) -> Result<&'a Profile, DiscoveryError> {
        let (profile, _) = state.profiles.get(id).ok_or(DiscoveryError::NotFound)?;
        if profile.owner_account != account {
            return Err(DiscoveryError::Forbidden);
        }
        Ok(profile)
    }

    pub fn unpublish_profile(&self, account: &str, id: &str) -> Result<(), DiscoveryError> {
        let mut state = self.write();
        Self::owned(&state, account, id)?;
        state.unindex(id);
        Ok(())
    }

    /// Changes who may see a profile; `favorites` replaces the list when given.
    pub fn set_visibility(&self, account: &str, id: &str, visibility: Visibility, favorites: Option<BTreeSet<AccountId>>) -> Result<(), DiscoveryError> {
        let mut state = self.write();
        let mut profile = Self::owned(&state, account, id)?.clone();
        profile.visibility = visibility;
        if let Some(favorites) = favorites {
            profile.favorites = favorites;
        }
        state.unindex(id);
        state.index(profile);
        Ok(())
    }

    pub fn profile(&self, id: &str) -> Option<Profile> {
        self.read().profiles.get(id).map(|(p, _)| p.clone())
    }

    pub fn profiles_of(&self, account: &str) -> Vec<Profile> {
        self.read().profiles.values().filter(|(p, _)| p.owner_account == account).map(|(p, _)| p.clone()).collect()
    }

    /// Runs a search. Profiles matching at least one query token are ranked
    /// by distinct matched tokens, then total occurrences of those tokens,
    /// then recency, then id.
    pub fn search(&self, ctx: &QueryContext) -> Result<DiscoveryResponse, DiscoveryError> {
        let query: BTreeSet<String> = tokenize(&ctx.raw_query).into_iter().collect();
        if query.is_empty() {
            return Err(DiscoveryError::EmptyQuery);
        }
        let search_string = ctx.raw_query.split(|c: char| c.is_whitespace() || c == '+').find(|s| !s.is_empty()).unwrap_or("").to_string();
        let ranked: Vec<Profile> = {
            let state = self.read();
            let is_account = |a: &str| state.accounts.contains_key(a);
            let candidates: BTreeSet<&ProfileId> = query.iter().filter_map(|t| state.index.get(t)).flatten().collect();
            let mut scored: Vec<((usize, u32, u64), &Profile)> = candidates
                .into_iter()
                .map(|id| &state.profiles[id])
                .filter(|(p, _)| p.visible_to(&ctx.requester, is_account))
                .map(|(p, terms)| {
                    let matched: Vec<u32> = query.iter().filter_map(|t| terms.get(t).copied()).collect();
                    ((matched.len(), matched.iter().sum(), p.published_seq), p)
                })
                .collect();
            scored.sort_by(|(a, pa), (b, pb)| b.cmp(a).then_with(|| pa.profile_id.cmp(&pb.profile_id)));
            scored.into_iter().map(|(_, p)| p.clone()).collect()
        };
        let results: Vec<SearchResult> = ranked
            .into_iter()
            .enumerate()
            .map(|(result_no, p)| {
                let hyperties = match (&self.resolver, &p.guid) {
                    (Some(resolver), Some(guid)) if ctx.resolve_live => Some(resolver.live_hyperties(guid)),
                    _ if ctx.resolve_live => Some(Vec::new()),
                    _ => None,
                };
                SearchResult {
                    result_no,
                    hashtags: p.hashtags.join(" "),
                    description: p.description,
                    guid: p.guid.as_ref().map(|g| g.to_string()).unwrap_or_default(),
                    headline: p.headline,
                    contacts: p.contacts.join(" "),
                    has_guid: p.guid.is_some().to_string(),
                    hyperties,
                }
            })
            .collect();
        Ok(DiscoveryResponse {
            instance_id: self.instance_id.clone(),
            response_code: if results.is_empty() { RESPONSE_NOT_FOUND } else { RESPONSE_FOUND },
            search_string,
            results,
        })
    }
}
