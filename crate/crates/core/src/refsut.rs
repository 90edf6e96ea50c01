//! In-process reference system under test: a small quiz-game service.
//!
//! The service is a pure transition function over [`AppState`]: scenes,
//! sidebar navigation, a login/signup flow with typed credential kinds,
//! simulated games against a scripted opponent, and a chat overlay
//! reachable from two entry paths. Every response carries the current
//! scene's rendered fields, so expectations in mapping tables can assert
//! against them.
//!
//! Behavior is deliberately conformant to a handful of rules:
//! 1. new users see an intro flag in Messages and History,
//! 2. logging out (through Settings) clears session data,
//! 3. profile renames show up in every scene's rendered name,
//! 4. finished games append to the game history,
//! 5. chat messages persist regardless of entry path,
//! 6. the Settings tab depends on how Settings was entered.
//!
//! [`Fault`]s switch on small, documented deviations from those rules so a
//! test pipeline's fault-detection power can be measured end to end.

use std::collections::BTreeMap;

use crate::qtds::{Maturity, QtdsStore, User};
use crate::runner::{
    Driver, DriverConfig, DriverError, DriverSession, Response, Status,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scene {
    Welcome,
    EmailLogin,
    EmailSignup,
    Home,
    Topics,
    History,
    Messages,
    Settings,
    Profile,
    GamePlay,
    GameStats,
}

impl Scene {
    pub fn title(self) -> &'static str {
        match self {
            Scene::Welcome => "Welcome",
            Scene::EmailLogin => "Email Log-in",
            Scene::EmailSignup => "Email Sign-up",
            Scene::Home => "Home",
            Scene::Topics => "Topics",
            Scene::History => "History",
            Scene::Messages => "Messages",
            Scene::Settings => "Settings",
            Scene::Profile => "Profile",
            Scene::GamePlay => "Game-play",
            Scene::GameStats => "Game-stats",
        }
    }

    fn goto_target(name: &str) -> Option<Scene> {
        match name {
            "Home" => Some(Scene::Home),
            "Topics" => Some(Scene::Topics),
            "History" => Some(Scene::History),
            "Messages" => Some(Scene::Messages),
            "Profile" => Some(Scene::Profile),
            "Settings" => Some(Scene::Settings),
            "GameStats" => Some(Scene::GameStats),
            _ => None,
        }
    }

    /// Scenes shown before anyone is logged in.
    #[cfg(test)]
    fn is_auth(self) -> bool {
        matches!(self, Scene::Welcome | Scene::EmailLogin | Scene::EmailSignup)
    }

    /// The five sidebar-equipped scenes.
    fn has_sidebar(self) -> bool {
        matches!(
            self,
            Scene::Home | Scene::Topics | Scene::History | Scene::Messages | Scene::Profile
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SettingsTab {
    Settings,
    Profile,
}

impl SettingsTab {
    fn render(self) -> &'static str {
        match self {
            SettingsTab::Settings => "settings",
            SettingsTab::Profile => "profile",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GameRecord {
    pub opponent: String,
    pub outcome: String,
    pub topic: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Fault {
    NameNotPropagated,
    WrongSettingsTab,
    StaleHistory,
    WrongHeader,
    NoLogoutCleanup,
    WrongLoginError,
}

impl Fault {
    pub const ALL: [Fault; 6] = [
        Fault::NameNotPropagated,
        Fault::WrongSettingsTab,
        Fault::StaleHistory,
        Fault::WrongHeader,
        Fault::NoLogoutCleanup,
        Fault::WrongLoginError,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Fault::NameNotPropagated => "FAULT_NAME_NOT_PROPAGATED",
            Fault::WrongSettingsTab => "FAULT_WRONG_SETTINGS_TAB",
            Fault::StaleHistory => "FAULT_STALE_HISTORY",
            Fault::WrongHeader => "FAULT_WRONG_HEADER",
            Fault::NoLogoutCleanup => "FAULT_NO_LOGOUT_CLEANUP",
            Fault::WrongLoginError => "FAULT_WRONG_LOGIN_ERROR",
        }
    }

    pub fn parse(name: &str) -> Option<Fault> {
        Fault::ALL.into_iter().find(|f| f.name() == name)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FaultSet {
    enabled: std::collections::BTreeSet<Fault>,
}

impl FaultSet {
    pub fn none() -> Self {
        FaultSet::default()
    }

    pub fn one(fault: Fault) -> Self {
        let mut set = FaultSet::default();
        set.enabled.insert(fault);
        set
    }

    pub fn from_names(names: &[String]) -> Result<Self, String> {
        let mut set = FaultSet::default();
        for name in names {
            let fault = Fault::parse(name)
                .ok_or_else(|| format!("unknown fault '{name}'"))?;
            set.enabled.insert(fault);
        }
        Ok(set)
    }

    pub fn has(&self, fault: Fault) -> bool {
        self.enabled.contains(&fault)
    }
}

/// The whole observable and internal state of one app session.
///
/// The first block of fields is what expectations can see through
/// [`render`]; the second block is mechanics: what was typed into the
/// login form, which scene Settings or the game stats screen was entered
/// from, the chat overlay, and the user pool the session was started with.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AppState {
    pub current_scene: Scene,
    pub settings_tab: SettingsTab,
    pub sidebar_open: bool,
    pub session_user: Option<User>,
    pub scene_history: Vec<String>,
    pub game_records: Vec<GameRecord>,
    pub message_log: BTreeMap<String, Vec<String>>,
    pub pending_intro: bool,
    open_chat: Option<String>,
    typed_email: Option<String>,
    typed_password: Option<String>,
    last_error: Option<String>,
    settings_origin: Scene,
    stats_origin: Scene,
    login_name: String,
    records_at_login: usize,
    store: Vec<User>,
}

impl AppState {
    /// A session at the Welcome scene with nobody logged in.
    pub fn fresh(store: Vec<User>) -> Self {
        AppState {
            current_scene: Scene::Welcome,
            settings_tab: SettingsTab::Settings,
            sidebar_open: false,
            session_user: None,
            scene_history: Vec::new(),
            game_records: Vec::new(),
            message_log: BTreeMap::new(),
            pending_intro: false,
            open_chat: None,
            typed_email: None,
            typed_password: None,
            last_error: None,
            settings_origin: Scene::Home,
            stats_origin: Scene::Home,
            login_name: String::new(),
            records_at_login: 0,
            store,
        }
    }

    /// A session already logged in as the store's first user, at Home.
    pub fn logged_in(store: Vec<User>) -> Result<Self, String> {
        let user = store
            .first()
            .cloned()
            .ok_or_else(|| "user store is empty".to_string())?;
        let mut state = AppState::fresh(store);
        state.log_in(user);
        Ok(state)
    }

    fn log_in(&mut self, user: User) {
        self.login_name = user.name.clone();
        self.pending_intro = user.maturity == Maturity::New;
        self.session_user = Some(user);
        self.current_scene = Scene::Home;
        self.sidebar_open = false;
        self.settings_tab = SettingsTab::Settings;
        self.typed_email = None;
        self.typed_password = None;
        self.last_error = None;
        self.scene_history.push("Home".to_string());
        self.records_at_login = self.game_records.len();
    }
}

/// The built-in user pool used when no store file is configured; the same
/// three users ship as a JSON store in the bundled assets.
pub fn default_store() -> Vec<User> {
    vec![
        User {
            country: "IS".to_string(),
            email: "alice@example.com".to_string(),
            maturity: Maturity::New,
            name: "Alice".to_string(),
            password: "alice-pw".to_string(),
            title: "Trivia Novice".to_string(),
        },
        User {
            country: "IS".to_string(),
            email: "bob@example.com".to_string(),
            maturity: Maturity::Intermediate,
            name: "Bob".to_string(),
            password: "bob-pw".to_string(),
            title: "Quiz Knight".to_string(),
        },
        User {
            country: "DE".to_string(),
            email: "carol@example.com".to_string(),
            maturity: Maturity::Advanced,
            name: "Carol".to_string(),
            password: "carol-pw".to_string(),
            title: "Grandmaster".to_string(),
        },
    ]
}

fn signup_user() -> User {
    User {
        country: "IS".to_string(),
        email: "nova@example.com".to_string(),
        maturity: Maturity::New,
        name: "Nova".to_string(),
        password: "nova-pw".to_string(),
        title: "Rookie".to_string(),
    }
}

/// Renders the fields every response carries: the scene header plus the
/// scene's own fields, or the chat overlay's fields when it is open.
pub fn render(state: &AppState, faults: &FaultSet) -> BTreeMap<String, String> {
    let mut fields = BTreeMap::new();
    let header = if faults.has(Fault::WrongHeader) && state.current_scene == Scene::Settings {
        Scene::Home.title()
    } else {
        state.current_scene.title()
    };
    fields.insert("header".to_string(), header.to_string());

    if let Some(opponent) = &state.open_chat {
        fields.insert("chatWith".to_string(), opponent.clone());
        let last = state
            .message_log
            .get(opponent)
            .and_then(|log| log.last())
            .cloned()
            .unwrap_or_default();
        fields.insert("lastMessage".to_string(), last);
        return fields;
    }

    let Some(user) = &state.session_user else {
        if let Some(kind) = &state.last_error {
            fields.insert("errorKind".to_string(), kind.clone());
        }
        return fields;
    };

    // The Settings scene shows the live edit buffer, so the rename fault
    // hides the new name everywhere else only.
    let display = if faults.has(Fault::NameNotPropagated) && state.current_scene != Scene::Settings
    {
        state.login_name.clone()
    } else {
        user.name.clone()
    };
    fields.insert("displayName".to_string(), display);
    fields.insert(
        "sidebar".to_string(),
        if state.sidebar_open { "open" } else { "closed" }.to_string(),
    );
    match state.current_scene {
        Scene::History => {
            let count = if faults.has(Fault::StaleHistory) {
                state.records_at_login
            } else {
                state.game_records.len()
            };
            fields.insert("historyCount".to_string(), count.to_string());
            fields.insert("intro".to_string(), state.pending_intro.to_string());
        }
        Scene::Messages => {
            fields.insert(
                "conversations".to_string(),
                state.message_log.len().to_string(),
            );
            fields.insert("intro".to_string(), state.pending_intro.to_string());
        }
        Scene::Settings => {
            let tab = if faults.has(Fault::WrongSettingsTab) {
                SettingsTab::Settings
            } else {
                state.settings_tab
            };
            fields.insert("tab".to_string(), tab.render().to_string());
        }
        Scene::Profile => {
            fields.insert("title".to_string(), user.title.clone());
        }
        Scene::GameStats => {
            let outcome = state
                .game_records
                .last()
                .map(|r| r.outcome.clone())
                .unwrap_or_default();
            fields.insert("outcome".to_string(), outcome);
        }
        _ => {}
    }
    fields
}

fn arg<'a>(args: &'a BTreeMap<String, String>, name: &str) -> Result<&'a str, String> {
    args.get(name)
        .map(String::as_str)
        .ok_or_else(|| format!("missing argument '{name}'"))
}

const LOGIN_EMAIL_KINDS: [&str; 3] = ["VALID", "NONEXISTENT", "MALFORMED"];
const LOGIN_PASSWORD_KINDS: [&str; 2] = ["VALID", "INVALID"];
const SIGNUP_EMAIL_KINDS: [&str; 3] = ["FRESH", "TAKEN", "MALFORMED"];
const SIGNUP_PASSWORD_KINDS: [&str; 2] = ["VALID", "WEAK"];

/// Applies one command. `Err` means the command was invalid here (unknown
/// name, wrong scene, bad argument); the caller leaves state untouched.
/// `Ok` carries the next state and the response status, which is an error
/// for rejected logins and signups.
fn step(
    state: &AppState,
    command: &str,
    args: &BTreeMap<String, String>,
    faults: &FaultSet,
) -> Result<(AppState, Status), String> {
    let scene = state.current_scene;
    let logged_in = state.session_user.is_some();
    let mut next = state.clone();

    match command {
        "read" => {}
        "open_login" | "open_signup" => {
            if scene != Scene::Welcome {
                return Err(format!("'{command}' is only available on Welcome"));
            }
            next.current_scene = if command == "open_login" {
                Scene::EmailLogin
            } else {
                Scene::EmailSignup
            };
            next.typed_email = None;
            next.typed_password = None;
            next.last_error = None;
        }
        "type_email" => {
            let kind = arg(args, "kind")?;
            let allowed: &[&str] = match scene {
                Scene::EmailLogin => &LOGIN_EMAIL_KINDS,
                Scene::EmailSignup => &SIGNUP_EMAIL_KINDS,
                _ => return Err("no email field on this scene".to_string()),
            };
            if !allowed.contains(&kind) {
                return Err(format!("unknown email kind '{kind}'"));
            }
            next.typed_email = Some(kind.to_string());
            next.last_error = None;
        }
        "type_password" => {
            let kind = arg(args, "kind")?;
            let allowed: &[&str] = match scene {
                Scene::EmailLogin => &LOGIN_PASSWORD_KINDS,
                Scene::EmailSignup => &SIGNUP_PASSWORD_KINDS,
                _ => return Err("no password field on this scene".to_string()),
            };
            if !allowed.contains(&kind) {
                return Err(format!("unknown password kind '{kind}'"));
            }
            next.typed_password = Some(kind.to_string());
            next.last_error = None;
        }
        "submit_login" => {
            if scene != Scene::EmailLogin {
                return Err("not on the log-in form".to_string());
            }
            let email = state.typed_email.as_deref().ok_or("no email typed")?;
            let password = state.typed_password.as_deref().ok_or("no password typed")?;
            let failure = match (email, password) {
                ("MALFORMED", _) => Some("malformed_email"),
                ("NONEXISTENT", _) => Some("unknown_user"),
                ("VALID", "INVALID") => Some("wrong_password"),
                _ => match state.store.first() {
                    // A VALID email means the pool's first user's address;
                    // with an empty pool no such account exists.
                    None => Some("unknown_user"),
                    Some(_) => None,
                },
            };
            match failure {
                Some(kind) => {
                    let reported = if faults.has(Fault::WrongLoginError) {
                        "wrong_password"
                    } else {
                        kind
                    };
                    next.last_error = Some(reported.to_string());
                    return Ok((next, Status::Error("login rejected".to_string())));
                }
                None => {
                    let user = state.store[0].clone();
                    next.log_in(user);
                }
            }
        }
        "submit_signup" => {
            if scene != Scene::EmailSignup {
                return Err("not on the sign-up form".to_string());
            }
            let email = state.typed_email.as_deref().ok_or("no email typed")?;
            let password = state.typed_password.as_deref().ok_or("no password typed")?;
            let failure = match (email, password) {
                ("MALFORMED", _) => Some("malformed_email"),
                ("TAKEN", _) => Some("email_taken"),
                ("FRESH", "WEAK") => Some("weak_password"),
                _ => None,
            };
            match failure {
                Some(kind) => {
                    next.last_error = Some(kind.to_string());
                    return Ok((next, Status::Error("signup rejected".to_string())));
                }
                None => next.log_in(signup_user()),
            }
        }
        "open_sidebar" => {
            if !scene.has_sidebar() || state.open_chat.is_some() {
                return Err("no sidebar on this scene".to_string());
            }
            if state.sidebar_open {
                return Err("sidebar is already open".to_string());
            }
            next.sidebar_open = true;
        }
        "close_sidebar" => {
            if !state.sidebar_open {
                return Err("sidebar is not open".to_string());
            }
            next.sidebar_open = false;
        }
        "goto" => {
            let name = arg(args, "scene")?;
            let target =
                Scene::goto_target(name).ok_or_else(|| format!("unknown scene '{name}'"))?;
            if state.sidebar_open {
                if target == Scene::GameStats {
                    return Err("'GameStats' is not a sidebar entry".to_string());
                }
                if target == Scene::Settings {
                    next.settings_origin = scene;
                    next.current_scene = Scene::Settings;
                    next.settings_tab = SettingsTab::Settings;
                } else {
                    next.current_scene = target;
                    next.scene_history.push(name.to_string());
                }
                next.sidebar_open = false;
            } else if scene == Scene::History
                && target == Scene::GameStats
                && state.open_chat.is_none()
            {
                if state.game_records.is_empty() {
                    return Err("no games recorded yet".to_string());
                }
                next.stats_origin = Scene::History;
                next.current_scene = Scene::GameStats;
            } else {
                return Err(format!("cannot go to '{name}' from here"));
            }
        }
        "back" => {
            if state.open_chat.is_some() {
                next.open_chat = None;
            } else if scene == Scene::Settings {
                next.current_scene = state.settings_origin;
            } else if scene == Scene::GameStats {
                next.current_scene = state.stats_origin;
            } else {
                return Err("nothing to go back from".to_string());
            }
        }
        "open_settings" => {
            if !logged_in || state.sidebar_open || state.open_chat.is_some() {
                return Err("settings are not reachable right now".to_string());
            }
            // Entering Settings from Settings is ignored; in particular the
            // tab and the remembered origin scene stay as they are.
            if scene != Scene::Settings {
                next.settings_origin = scene;
                next.current_scene = Scene::Settings;
                next.settings_tab = SettingsTab::Settings;
            }
        }
        "open_settings_from_profile" => {
            if scene != Scene::Profile || state.sidebar_open || state.open_chat.is_some() {
                return Err("the profile shortcut only exists on Profile".to_string());
            }
            next.settings_origin = Scene::Profile;
            next.current_scene = Scene::Settings;
            next.settings_tab = SettingsTab::Profile;
        }
        "set_name" => {
            if scene != Scene::Settings {
                return Err("names are edited in Settings".to_string());
            }
            let text = arg(args, "text")?;
            let user = next.session_user.as_mut().expect("logged in on Settings");
            // Session-scoped edit: the user pool itself is read-only.
            user.name = text.to_string();
        }
        "play_topic" => {
            if !matches!(scene, Scene::Home | Scene::Topics)
                || state.sidebar_open
                || state.open_chat.is_some()
            {
                return Err("games start from Home or Topics".to_string());
            }
            let topic = arg(args, "topic")?;
            let outcome = arg(args, "outcome")?;
            if !["won", "lost"].contains(&outcome) {
                return Err(format!("unknown outcome '{outcome}'"));
            }
            next.game_records.push(GameRecord {
                opponent: "Bob".to_string(),
                outcome: outcome.to_string(),
                topic: topic.to_string(),
            });
            next.stats_origin = scene;
            next.current_scene = Scene::GameStats;
        }
        "open_chat" => {
            if !matches!(scene, Scene::Messages | Scene::GameStats)
                || state.sidebar_open
                || state.open_chat.is_some()
            {
                return Err("no conversation to open here".to_string());
            }
            next.open_chat = Some(arg(args, "opponent")?.to_string());
        }
        "send_message" => {
            let Some(current) = &state.open_chat else {
                return Err("no chat is open".to_string());
            };
            let opponent = arg(args, "opponent")?;
            if opponent != current {
                return Err(format!("the open chat is with '{current}'"));
            }
            let text = arg(args, "text")?;
            next.message_log
                .entry(opponent.to_string())
                .or_default()
                .push(text.to_string());
        }
        "logout" => {
            if scene != Scene::Settings {
                return Err("logging out happens in Settings".to_string());
            }
            next.session_user = None;
            next.current_scene = Scene::Welcome;
            next.sidebar_open = false;
            next.open_chat = None;
            next.typed_email = None;
            next.typed_password = None;
            next.last_error = None;
            next.pending_intro = false;
            next.login_name = String::new();
            next.records_at_login = 0;
            next.settings_origin = Scene::Home;
            next.stats_origin = Scene::Home;
            if !faults.has(Fault::NoLogoutCleanup) {
                next.scene_history.clear();
                next.game_records.clear();
                next.message_log.clear();
            }
        }
        other => return Err(format!("unknown command '{other}'")),
    }
    Ok((next, Status::Ok))
}

/// The transition function of the reference SUT. Invalid commands return
/// an error response and leave the state unchanged; valid commands return
/// the successor state, and the response always carries the (possibly
/// fault-perturbed) render of the state the session is now in.
pub fn handle(
    state: &AppState,
    command: &str,
    args: &BTreeMap<String, String>,
    faults: &FaultSet,
) -> (AppState, Response) {
    match step(state, command, args, faults) {
        Ok((next, status)) => {
            let fields = render(&next, faults);
            (next, Response { fields, status })
        }
        Err(reason) => {
            let fields = render(state, faults);
            (
                state.clone(),
                Response::error(format!("invalid command: {reason}"), fields),
            )
        }
    }
}

// ---------------------------------------------------------------------------
// Driver binding
// ---------------------------------------------------------------------------

/// The in-process driver: each session is an independent [`AppState`]
/// starting from the configured base.
pub struct RefSutDriver {
    base: AppState,
    faults: FaultSet,
}

impl RefSutDriver {
    pub fn new(base: AppState, faults: FaultSet) -> Self {
        RefSutDriver { base, faults }
    }

    pub fn from_config(config: &DriverConfig) -> Result<Self, DriverError> {
        let faults = FaultSet::from_names(&config.faults).map_err(DriverError::Unavailable)?;
        let store = match &config.qtds_path {
            Some(path) => QtdsStore::load(path)
                .map_err(|e| DriverError::Unavailable(e.to_string()))?
                .users()
                .to_vec(),
            None => default_store(),
        };
        let base = match config.base_state.as_deref().unwrap_or("welcome") {
            "welcome" => AppState::fresh(store),
            "home" => AppState::logged_in(store).map_err(DriverError::Unavailable)?,
            other => {
                return Err(DriverError::Unavailable(format!(
                    "unknown baseState '{other}' (welcome or home)"
                )))
            }
        };
        Ok(RefSutDriver { base, faults })
    }
}

impl Driver for RefSutDriver {
    fn start_session(&self) -> Result<Box<dyn DriverSession>, DriverError> {
        Ok(Box::new(RefSutSession {
            state: self.base.clone(),
            faults: self.faults.clone(),
        }))
    }
}

struct RefSutSession {
    state: AppState,
    faults: FaultSet,
}

impl DriverSession for RefSutSession {
    fn apply(
        &mut self,
        command: &str,
        args: &BTreeMap<String, String>,
    ) -> Result<Response, DriverError> {
        let (next, response) = handle(&self.state, command, args, &self.faults);
        self.state = next;
        Ok(response)
    }
}
