use std::fmt;

use crate::callgraph::CallGraph;

/// Ground-truth class; malware is the positive class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Benign = 0,
    Malware = 1,
}

impl Label {
    pub fn from_bit(b: u8) -> Option<Self> {
        match b {
            0 => Some(Label::Benign),
            1 => Some(Label::Malware),
            _ => None,
        }
    }

    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }

    pub fn is_malware(self) -> bool {
        self == Label::Malware
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Benign => "benign",
            Label::Malware => "malware",
        })
    }
}

/// One application with whichever static views are available.
#[derive(Clone, Debug, PartialEq)]
pub struct ApkSample {
    pub id: String,
    pub label: Label,
    /// Permission/intent presence bits aligned with the corpus feature names.
    pub tabular: Option<Vec<u8>>,
    /// Raw DEX files in multidex order (`classes.dex`, `classes2.dex`, ...).
    pub dex: Option<Vec<Vec<u8>>>,
    pub graph: Option<CallGraph>,
}
