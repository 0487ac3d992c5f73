use std::path::PathBuf;

use anyhow::{Context, Result};

use cgp_core::concept_bank::{
    build_bank, save_bank, BuildOptions, ConceptGenerator, ConceptStatus, Decision,
    FixtureGenerator, LiveGenerator, MinSupport, SynonymMap,
};

use super::read_bank;
use crate::args::BankCommand;

pub fn run(cmd: BankCommand) -> Result<()> {
    match cmd {
        BankCommand::Build {
            mut diseases,
            diseases_file,
            fixture,
            retinal_fixture,
            live,
            repeats,
            min_support,
            synonyms,
            out,
            raw_out,
        } => {
            if let Some(path) = diseases_file {
                let text = std::fs::read_to_string(&path)
                    .with_context(|| format!("reading {}", path.display()))?;
                diseases.extend(
                    text.lines()
                        .map(str::trim)
                        .filter(|l| !l.is_empty())
                        .map(String::from),
                );
            }
            let generator: Box<dyn ConceptGenerator> = if live {
                Box::new(LiveGenerator::from_env()?)
            } else if let Some(path) = fixture {
                let text = std::fs::read_to_string(&path)
                    .with_context(|| format!("reading {}", path.display()))?;
                Box::new(
                    FixtureGenerator::from_json(&text)
                        .with_context(|| path.display().to_string())?,
                )
            } else if retinal_fixture {
                Box::new(FixtureGenerator::retinal())
            } else {
                anyhow::bail!("choose a generator: --fixture FILE, --retinal-fixture or --live");
            };
            let synonyms: SynonymMap = match synonyms {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str(&text)
                        .with_context(|| format!("parsing {}", path.display()))?
                }
                None => SynonymMap::new(),
            };
            let options = BuildOptions {
                repeats_per_template: repeats,
                min_support: min_support
                    .parse::<MinSupport>()
                    .map_err(anyhow::Error::msg)?,
                synonyms,
                ..Default::default()
            };
            let (bank, raw) = build_bank(&diseases, generator.as_ref(), &options)?;
            save_bank(&bank, &out)?;
            let raw_path = raw_out.unwrap_or_else(|| {
                let mut p = out.clone().into_os_string();
                p.push(".raw.json");
                PathBuf::from(p)
            });
            cgp_core::pipeline::write(&raw_path, &serde_json::to_string_pretty(&raw)?)?;
            for d in bank.diseases() {
                println!("{}\t{} concepts", d.name, d.concept_ids.len());
            }
            eprintln!("wrote {} and {}", out.display(), raw_path.display());
            Ok(())
        }
        BankCommand::Review {
            bank: path,
            concepts,
            all_generated,
            decision,
            reviewer,
            force,
        } => {
            let mut bank = read_bank(&path)?;
            let decision: Decision = decision.parse().map_err(anyhow::Error::msg)?;
            let mut ids = concepts;
            if all_generated {
                ids.extend(
                    bank.concepts()
                        .filter(|c| c.status == ConceptStatus::Generated)
                        .map(|c| c.id.clone()),
                );
            }
            for id in &ids {
                bank.validate_concept(id, decision, &reviewer, force)?;
            }
            save_bank(&bank, &path)?;
            println!(
                "{} concept(s) marked {decision:?}; bank version {}",
                ids.len(),
                bank.version
            );
            Ok(())
        }
        BankCommand::Freeze { bank: path } => {
            let mut bank = read_bank(&path)?;
            let dropped = bank.freeze();
            for (d, c) in &dropped {
                println!("dropped\t{d}\t{c}");
            }
            bank.check_invariants()?;
            save_bank(&bank, &path)?;
            println!(
                "frozen at version {} with {} validated concepts",
                bank.version,
                bank.num_validated()
            );
            Ok(())
        }
        BankCommand::Show { bank: path } => {
            let bank = read_bank(&path)?;
            println!("version {}  frozen {}", bank.version, bank.frozen);
            for d in bank.diseases() {
                println!("{}", d.name);
                for id in &d.concept_ids {
                    let c = bank.concept(id).expect("bank invariants hold");
                    println!("  {}\t{}\tsupport={}", c.id, c.status, c.support());
                }
            }
            Ok(())
        }
    }
}
