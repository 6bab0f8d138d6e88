//! Publication risk assessment for histopathology image releases.
//!
//! The rules, in the order they are applied:
//!
//! 1. PHI not fully removed → regulatory violation.
//! 2. None of the patients' data was published before → no direct risk.
//! 3. Earlier publication, but from a different tumor → low.
//! 4. Same tumor as published, without linking metadata → elevated.
//! 5. Same tumor as published, with metadata alongside the images → high.
//!
//! A known breach of the earlier dataset raises any level from rule 3 on by
//! one step (capped at high).

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskLevel {
    RegulatoryViolation,
    NoDirectRisk,
    Low,
    Elevated,
    High,
}

impl RiskLevel {
    pub fn name(self) -> &'static str {
        match self {
            RiskLevel::RegulatoryViolation => "regulatory_violation",
            RiskLevel::NoDirectRisk => "no_direct_risk",
            RiskLevel::Low => "low",
            RiskLevel::Elevated => "elevated",
            RiskLevel::High => "high",
        }
    }

    fn escalated(self) -> Self {
        match self {
            RiskLevel::Low => RiskLevel::Elevated,
            RiskLevel::Elevated | RiskLevel::High => RiskLevel::High,
            other => other,
        }
    }
}

/// Answers to the assessment questions. Conditional answers are `None` when
/// the question is not reached; answers to unreached questions are ignored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskQuestionnaire {
    /// File metadata, file names, slide labels and in-image PHI all cleared.
    pub phi_removed: bool,
    /// Data of these patients appeared in an earlier dataset publication.
    pub previously_published: bool,
    /// Asked when previously published.
    #[serde(default)]
    pub same_tumor_as_published: Option<bool>,
    /// Asked when the same tumor was published: could sections of another
    /// tumor of the patient be released instead?
    #[serde(default)]
    pub other_tumor_available: Option<bool>,
    /// Asked when the same tumor was published.
    #[serde(default)]
    pub metadata_published_with_images: Option<bool>,
    /// Asked when previously published.
    #[serde(default)]
    pub prior_dataset_breached: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskVerdict {
    pub level: RiskLevel,
    pub rationale: Vec<String>,
    pub recommendations: Vec<String>,
}

impl RiskVerdict {
    pub fn to_text(&self) -> String {
        let mut s = format!("Risk level: {}\n\nRationale:\n", self.level.name());
        for r in &self.rationale {
            writeln!(s, "  - {r}").unwrap();
        }
        s.push_str("\nRecommendations:\n");
        for r in &self.recommendations {
            writeln!(s, "  - {r}").unwrap();
        }
        s
    }
}

fn required(answer: Option<bool>, question: &str) -> Result<bool> {
    answer.ok_or_else(|| Error::Risk(format!("missing answer: {question}")))
}

const Q_PHI: &str = "phi_removed";
const Q_PUBLISHED: &str = "previously_published";
const Q_SAME: &str = "same_tumor_as_published";
const Q_OTHER: &str = "other_tumor_available";
const Q_META: &str = "metadata_published_with_images";
const Q_BREACH: &str = "prior_dataset_breached";

/// Applies the rules in fixed order. Fails naming the first reachable
/// question that lacks an answer.
pub fn assess(q: &RiskQuestionnaire) -> Result<RiskVerdict> {
    let mut rationale = Vec::new();
    let mut recommendations = Vec::new();
    if !q.phi_removed {
        rationale.push(
            "rule 1: protected health information remains (slide file metadata, file names, slide labels or image \
             content); publishing risks violating GDPR or HIPAA guidelines"
                .to_string(),
        );
        recommendations.push(
            "remove PHI from the slide file metadata, file names, slide labels and image content before release"
                .to_string(),
        );
        return Ok(RiskVerdict {
            level: RiskLevel::RegulatoryViolation,
            rationale,
            recommendations,
        });
    }
    rationale.push("rule 1: PHI has been removed".to_string());
    if !q.previously_published {
        rationale.push(
            "rule 2: no data of these patients was published before, so there is no direct risk to patient privacy"
                .to_string(),
        );
        recommendations.push(
            "register this publication so that later releases of the same patients can be assessed against it"
                .to_string(),
        );
        return Ok(RiskVerdict {
            level: RiskLevel::NoDirectRisk,
            rationale,
            recommendations,
        });
    }
    let same = required(q.same_tumor_as_published, Q_SAME)?;
    let breached = required(q.prior_dataset_breached, Q_BREACH)?;
    let mut level = if !same {
        rationale.push(
            "rule 3: earlier publications used a different tumor; re-identification across tumors is much less likely"
                .to_string(),
        );
        recommendations.push("keep preferring sections from tumors other than the published one".to_string());
        RiskLevel::Low
    } else {
        let other = required(q.other_tumor_available, Q_OTHER)?;
        let metadata = required(q.metadata_published_with_images, Q_META)?;
        if other {
            recommendations.push("publish sections from the patient's other tumor instead of the published one".to_string());
        } else {
            recommendations.push("no other tumor is available; consider controlled access for these slides".to_string());
        }
        if metadata {
            rationale.push(
                "rule 5: the same tumor was published and metadata accompanies the images; the tissue can serve as a \
                 key linking both datasets and their metadata"
                    .to_string(),
            );
            recommendations.push("remove or coarsen the metadata released with the images".to_string());
            RiskLevel::High
        } else {
            rationale.push(
                "rule 4: the same tumor was published; images may be matched across datasets even without metadata"
                    .to_string(),
            );
            RiskLevel::Elevated
        }
    };
    if breached {
        let raised = level.escalated();
        rationale.push(format!(
            "breach: the earlier dataset was breached, raising the level from {} to {}",
            level.name(),
            raised.name()
        ));
        recommendations.push("treat the earlier dataset as potentially linked to identities".to_string());
        level = raised;
    }
    Ok(RiskVerdict {
        level,
        rationale,
        recommendations,
    })
}

/// The questions reachable for the answers given so far, in asking order.
fn next_question(q: &RiskQuestionnaire, asked: &[&str]) -> Option<(&'static str, &'static str)> {
    let plan: [(&str, &str); 6] = [
        (Q_PHI, "Has all PHI been removed (file metadata, file names, slide labels, text in the images)?"),
        (Q_PUBLISHED, "Has data of these patients been included in an earlier dataset publication?"),
        (Q_SAME, "Do the images come from the same tumor as the published ones?"),
        (Q_OTHER, "Are sections of another tumor of the patients available?"),
        (Q_META, "Is metadata (dates, diagnoses, demographics) published together with the images?"),
        (Q_BREACH, "Has the earlier dataset been subject to a privacy breach?"),
    ];
    plan.into_iter().find(|(key, _)| {
        if asked.contains(key) {
            return false;
        }
        match *key {
            Q_PHI => true,
            Q_PUBLISHED => q.phi_removed,
            Q_SAME | Q_BREACH => q.phi_removed && q.previously_published,
            Q_OTHER | Q_META => q.phi_removed && q.previously_published && q.same_tumor_as_published == Some(true),
            _ => false,
        }
    })
}

fn parse_answer(line: &str) -> Option<bool> {
    match line.trim().to_ascii_lowercase().as_str() {
        "y" | "yes" => Some(true),
        "n" | "no" => Some(false),
        _ => None,
    }
}

/// Asks the reachable questions one by one on a text channel, then prints
/// and returns the verdict. Invalid answers are asked again; end of input
/// aborts.
pub fn interactive_assess<R: BufRead, W: Write>(mut input: R, mut output: W) -> Result<RiskVerdict> {
    let io = |e: std::io::Error| Error::Risk(format!("i/o error: {e}"));
    let mut q = RiskQuestionnaire::default();
    let mut asked: Vec<&str> = Vec::new();
    while let Some((key, text)) = next_question(&q, &asked) {
        let answer = loop {
            write!(output, "{text} [y/n] ").map_err(io)?;
            output.flush().map_err(io)?;
            let mut line = String::new();
            if input.read_line(&mut line).map_err(io)? == 0 {
                return Err(Error::Risk("input ended before all questions were answered".into()));
            }
            match parse_answer(&line) {
                Some(a) => break a,
                None => writeln!(output, "please answer y or n").map_err(io)?,
            }
        };
        match key {
            Q_PHI => q.phi_removed = answer,
            Q_PUBLISHED => q.previously_published = answer,
            Q_SAME => q.same_tumor_as_published = Some(answer),
            Q_OTHER => q.other_tumor_available = Some(answer),
            Q_META => q.metadata_published_with_images = Some(answer),
            _ => q.prior_dataset_breached = Some(answer),
        }
        asked.push(key);
    }
    let verdict = assess(&q)?;
    writeln!(output).map_err(io)?;
    write!(output, "{}", verdict.to_text()).map_err(io)?;
    Ok(verdict)
}
