use anyhow::Result;

use cgp_core::concept_bank::save_bank;
use cgp_core::data::{
    generate_synthetic, sample_episode, split_base_novel, write_manifest, Split, SynthConfig,
};

use super::{emit, read_data};
use crate::args::{DataCommand, Global};

pub fn run(cmd: DataCommand, g: &Global) -> Result<()> {
    match cmd {
        DataCommand::Validate(data) => {
            let (bank, samples, space) = read_data(&data)?;
            let count = |s: Split| samples.iter().filter(|x| x.split == s).count();
            println!(
                "ok: {} images (train {}, val {}, test {}), {} diseases, {} concepts, bank version {}",
                samples.len(),
                count(Split::Train),
                count(Split::Val),
                count(Split::Test),
                space.num_diseases(),
                space.num_concepts(),
                bank.version
            );
            Ok(())
        }
        DataCommand::Episode { data, out } => {
            let (_, samples, space) = read_data(&data)?;
            let shots = g
                .shots
                .as_ref()
                .and_then(|s| s.iter().max().copied())
                .unwrap_or(16);
            let episode = sample_episode(&samples, &space, shots, g.seed.unwrap_or(0));
            for (d, have) in &episode.shortfalls {
                eprintln!("warning: `{d}` has only {have} training images");
            }
            emit(
                out.as_deref(),
                &(serde_json::to_string_pretty(&episode)? + "\n"),
            )
        }
        DataCommand::SplitBaseNovel { data, out } => {
            let (_, samples, space) = read_data(&data)?;
            let split = split_base_novel(&samples, &space)?;
            emit(
                out.as_deref(),
                &(serde_json::to_string_pretty(&split)? + "\n"),
            )
        }
        DataCommand::Synth {
            k,
            concepts_per_disease,
            images_per_disease,
            shared_fraction,
            noise,
            out,
        } => {
            let ds = generate_synthetic(&SynthConfig {
                k,
                concepts_per_disease,
                images_per_disease,
                shared_fraction,
                noise,
                seed: g.seed.unwrap_or(0),
                ..Default::default()
            })?;
            std::fs::create_dir_all(&out)?;
            save_bank(&ds.bank, &out.join("bank.json"))?;
            cgp_core::pipeline::write(&out.join("manifest.csv"), &write_manifest(&ds.samples))?;
            println!("{}", out.display());
            Ok(())
        }
    }
}
