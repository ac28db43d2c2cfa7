//! Task formulations and how suspicion levels map onto class indices.

use serde::{Deserialize, Serialize};

use crate::annotations::{binarize_label, SuspicionLevel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Four classes, Indeterminate excluded.
    Multiclass4,
    /// All five suspicion levels.
    Multiclass5,
    /// Single Dangerous logit.
    Binary,
}

impl Task {
    pub fn num_outputs(self) -> usize {
        match self {
            Task::Multiclass4 => 4,
            Task::Multiclass5 => 5,
            Task::Binary => 1,
        }
    }

    /// Classes a prediction is scored against (2 for the binary task).
    pub fn num_classes(self) -> usize {
        match self {
            Task::Binary => 2,
            t => t.num_outputs(),
        }
    }

    pub fn is_binary(self) -> bool {
        self == Task::Binary
    }

    pub fn keeps_indeterminate(self) -> bool {
        self == Task::Multiclass5
    }

    pub fn levels(self) -> &'static [SuspicionLevel] {
        use SuspicionLevel::*;
        match self {
            Task::Multiclass4 => &[HighlyUnlikely, ModeratelyUnlikely, ModeratelySuspicious, HighlySuspicious],
            Task::Multiclass5 => &SuspicionLevel::ALL,
            Task::Binary => &[],
        }
    }

    pub fn class_names(self) -> Vec<String> {
        match self {
            Task::Binary => vec!["NotDangerous".into(), "Dangerous".into()],
            t => t.levels().iter().map(|l| l.name().to_string()).collect(),
        }
    }

    /// Target class index for an aggregated label, or `None` when the task
    /// has no class for it.
    pub fn target_of(self, level: SuspicionLevel) -> Option<usize> {
        match self {
            Task::Binary => binarize_label(level).ok().map(|b| b.code() as usize),
            t => t.levels().iter().position(|&l| l == level),
        }
    }

    /// Inverse of [`Task::target_of`] for multiclass tasks.
    pub fn level_of(self, class: usize) -> Option<SuspicionLevel> {
        self.levels().get(class).copied()
    }

    pub fn parse(s: &str) -> Option<Task> {
        match s {
            "multiclass4" => Some(Task::Multiclass4),
            "multiclass5" => Some(Task::Multiclass5),
            "binary" => Some(Task::Binary),
            _ => None,
        }
    }
}
