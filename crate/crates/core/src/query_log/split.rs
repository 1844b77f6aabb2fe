use serde::{Deserialize, Serialize};

use super::UserLog;

/// Where the profile-building period ends for a user.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileBoundary {
    /// Sessions starting before this epoch second are profile sessions.
    Timestamp(i64),
    /// The first `floor(f * M)` of the user's `M` sessions are profile sessions.
    SessionFraction(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub boundary: ProfileBoundary,
    /// Train-pool sessions per test session.
    pub train_test_ratio: usize,
    /// One validation session per this many train-pool sessions (rounded up).
    pub validation_divisor: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            boundary: ProfileBoundary::SessionFraction(0.5),
            train_test_ratio: 5,
            validation_divisor: 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionRole {
    Profile,
    Train,
    Validation,
    Test,
}

/// Session indices of one user, by role. Every session has exactly one role.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub profile: Vec<usize>,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl DatasetSplit {
    pub fn roles(&self, n_sessions: usize) -> Vec<SessionRole> {
        let mut roles = vec![SessionRole::Profile; n_sessions];
        for &i in &self.train {
            roles[i] = SessionRole::Train;
        }
        for &i in &self.validation {
            roles[i] = SessionRole::Validation;
        }
        for &i in &self.test {
            roles[i] = SessionRole::Test;
        }
        roles
    }

    /// Whether this user contributes supervised (train/test) sessions.
    pub fn is_supervised(&self) -> bool {
        !self.test.is_empty()
    }
}

pub fn filter_users(logs: Vec<UserLog>, min_sessions: usize) -> Vec<UserLog> {
    assert!(min_sessions >= 1, "min_sessions must be at least 1");
    logs.into_iter()
        .filter(|l| l.sessions.len() >= min_sessions)
        .collect()
}

/// Splits a user's sessions in time order: profile sessions first, then the
/// rest 5:1 into a train pool and test, with the tail fifth of the pool held
/// out for validation. Users with fewer than two post-profile sessions keep
/// everything as profile.
pub fn split_sessions(log: &UserLog, cfg: &SplitConfig) -> DatasetSplit {
    let m = log.sessions.len();
    let n_profile = match cfg.boundary {
        ProfileBoundary::Timestamp(ts) => log.sessions.iter().take_while(|s| s.start() < ts).count(),
        ProfileBoundary::SessionFraction(f) => ((f.clamp(0.0, 1.0) * m as f64).floor() as usize).min(m),
    };
    let rest = m - n_profile;
    if rest < 2 {
        return DatasetSplit {
            profile: (0..m).collect(),
            ..Default::default()
        };
    }
    let parts = cfg.train_test_ratio + 1;
    let n_test = ((rest + parts / 2) / parts).max(1);
    let pool = rest - n_test;
    let n_val = pool.div_ceil(cfg.validation_divisor);
    let n_train = pool - n_val;
    let train_start = n_profile;
    let val_start = train_start + n_train;
    let test_start = val_start + n_val;
    DatasetSplit {
        profile: (0..n_profile).collect(),
        train: (train_start..val_start).collect(),
        validation: (val_start..test_start).collect(),
        test: (test_start..m).collect(),
    }
}
