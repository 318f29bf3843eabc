//! Crash-point injection for durability tests.
//!
//! A crash point is armed either for the current thread ([`arm`]) or for the
//! whole process through `CREDMASK_CRASH_POINT`. Reaching an armed point
//! aborts the operation with [`InjectedCrash`] before any later step runs,
//! which leaves files exactly as a killed process would. Both switches are
//! compiled out unless the crate is built for tests or with the
//! `fault-injection` feature.

use std::fmt;
use std::str::FromStr;

pub const ENV_VAR: &str = "CREDMASK_CRASH_POINT";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashPoint {
    /// Mask: vault committed, store rows not yet deleted.
    AfterVaultCommit,
    /// Mask: store rows deleted, status not yet reported.
    AfterStoreDelete,
    /// Vault commit: temp file written and synced, not yet renamed.
    BeforeVaultRename,
}

impl CrashPoint {
    pub fn name(self) -> &'static str {
        match self {
            CrashPoint::AfterVaultCommit => "after-vault-commit",
            CrashPoint::AfterStoreDelete => "after-store-delete",
            CrashPoint::BeforeVaultRename => "before-vault-rename",
        }
    }
}

impl FromStr for CrashPoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [CrashPoint::AfterVaultCommit, CrashPoint::AfterStoreDelete, CrashPoint::BeforeVaultRename]
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown crash point {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InjectedCrash(pub CrashPoint);

impl fmt::Display for InjectedCrash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "injected crash at {}", self.0.name())
    }
}

impl std::error::Error for InjectedCrash {}

#[cfg(any(test, feature = "fault-injection"))]
mod armed {
    use super::CrashPoint;
    use std::cell::Cell;

    thread_local! {
        pub(super) static ARMED: Cell<Option<CrashPoint>> = const { Cell::new(None) };
    }

    pub(super) fn active(point: CrashPoint) -> bool {
        ARMED.with(|a| a.get()) == Some(point)
            || std::env::var(super::ENV_VAR).ok().and_then(|v| v.parse().ok()) == Some(point)
    }
}

/// Disarms the thread-local crash point when dropped.
#[must_use]
pub struct Armed(());

impl Drop for Armed {
    fn drop(&mut self) {
        #[cfg(any(test, feature = "fault-injection"))]
        armed::ARMED.with(|a| a.set(None));
    }
}

/// Arms `point` for the calling thread until the guard drops.
#[cfg(any(test, feature = "fault-injection"))]
pub fn arm(point: CrashPoint) -> Armed {
    armed::ARMED.with(|a| a.set(Some(point)));
    Armed(())
}

#[cfg(any(test, feature = "fault-injection"))]
pub fn hit(point: CrashPoint) -> Result<(), InjectedCrash> {
    if armed::active(point) {
        Err(InjectedCrash(point))
    } else {
        Ok(())
    }
}

#[cfg(not(any(test, feature = "fault-injection")))]
#[inline(always)]
pub fn hit(_point: CrashPoint) -> Result<(), InjectedCrash> {
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for p in [CrashPoint::AfterVaultCommit, CrashPoint::AfterStoreDelete, CrashPoint::BeforeVaultRename] {
            assert_eq!(p.name().parse::<CrashPoint>(), Ok(p));
        }
        assert!("sometime".parse::<CrashPoint>().is_err());
    }

    #[test]
    fn arming_is_scoped() {
        assert!(hit(CrashPoint::AfterVaultCommit).is_ok());
        {
            let _g = arm(CrashPoint::AfterVaultCommit);
            assert_eq!(hit(CrashPoint::AfterVaultCommit), Err(InjectedCrash(CrashPoint::AfterVaultCommit)));
            assert!(hit(CrashPoint::AfterStoreDelete).is_ok());
        }
        assert!(hit(CrashPoint::AfterVaultCommit).is_ok());
    }
}
