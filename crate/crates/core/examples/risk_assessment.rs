//! Publication risk rules, scripted and interactive.
//!
//!     cargo run --release --example risk_assessment            # scripted cases
//!     cargo run --release --example risk_assessment -- ask     # answer on stdin

use histo_reid::risk::{assess, interactive_assess, RiskQuestionnaire};

fn main() -> histo_reid::Result<()> {
    if std::env::args().nth(1).as_deref() == Some("ask") {
        interactive_assess(std::io::stdin().lock(), std::io::stdout())?;
        return Ok(());
    }
    let published = RiskQuestionnaire {
        phi_removed: true,
        previously_published: true,
        same_tumor_as_published: Some(true),
        other_tumor_available: Some(true),
        metadata_published_with_images: Some(false),
        prior_dataset_breached: Some(false),
    };
    let cases = [
        ("labels still on the slides", RiskQuestionnaire::default()),
        (
            "first publication",
            RiskQuestionnaire {
                phi_removed: true,
                ..Default::default()
            },
        ),
        ("same tumor, images only", published),
        (
            "same tumor, with metadata",
            RiskQuestionnaire {
                metadata_published_with_images: Some(true),
                ..published
            },
        ),
        (
            "other tumor, earlier set breached",
            RiskQuestionnaire {
                same_tumor_as_published: Some(false),
                prior_dataset_breached: Some(true),
                ..published
            },
        ),
    ];
    for (name, q) in cases {
        let v = assess(&q)?;
        println!("== {name}: {}", v.level.name());
        for r in &v.recommendations {
            println!("   - {r}");
        }
    }
    Ok(())
}
