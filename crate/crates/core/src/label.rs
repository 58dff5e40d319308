use std::fmt;
use std::str::FromStr;

/// Ground-truth class of an utterance.
///
/// The discriminant doubles as the classifier's logit index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Spoof = 0,
    Bonafide = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Spoof => "spoof",
            Label::Bonafide => "bonafide",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "spoof" => Ok(Label::Spoof),
            "bonafide" | "bona-fide" => Ok(Label::Bonafide),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}
