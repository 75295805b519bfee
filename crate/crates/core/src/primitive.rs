use serde::{Deserialize, Serialize};

/// The six short gripper primitives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveType {
    Push,
    PushUp,
    PushLeft,
    Pull,
    PullUp,
    PullLeft,
}

impl PrimitiveType {
    pub const ALL: [PrimitiveType; 6] = [
        PrimitiveType::Push,
        PrimitiveType::PushUp,
        PrimitiveType::PushLeft,
        PrimitiveType::Pull,
        PrimitiveType::PullUp,
        PrimitiveType::PullLeft,
    ];

    pub fn is_pull(self) -> bool {
        matches!(self, PrimitiveType::Pull | PrimitiveType::PullUp | PrimitiveType::PullLeft)
    }

    pub fn name(self) -> &'static str {
        match self {
            PrimitiveType::Push => "push",
            PrimitiveType::PushUp => "push_up",
            PrimitiveType::PushLeft => "push_left",
            PrimitiveType::Pull => "pull",
            PrimitiveType::PullUp => "pull_up",
            PrimitiveType::PullLeft => "pull_left",
        }
    }
}

impl std::fmt::Display for PrimitiveType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PrimitiveType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PrimitiveType::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown primitive `{s}`"))
    }
}
