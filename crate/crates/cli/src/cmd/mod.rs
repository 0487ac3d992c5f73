mod bank;
mod data;
mod eval;
mod interpret;
mod stage;

use std::path::Path;

use anyhow::{Context, Result};

use cgp_core::concept_bank::{load_bank, ConceptBank};
use cgp_core::config::{parse_override, DataSource, RunConfig};
use cgp_core::data::{load_manifest, ImageSample, LabelSpace};
use cgp_core::encoders::{load_bundle, EncoderBundle};

use crate::args::{Cli, Command, ConfigArgs, DataArgs, Global, OptionalDataArgs, PipelineCommand};

pub fn dispatch(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Bank(c) => bank::run(c),
        Command::Data(c) => data::run(c, g),
        Command::Stage1(c) => stage::stage1(c, g),
        Command::Stage2(c) => stage::stage2(c, g),
        Command::Eval(c) => eval::run(c, g),
        Command::Interpret(c) => interpret::run(c),
        Command::Pipeline(PipelineCommand::Run { config, data, out }) => {
            let cfg = resolve_config(&config, Some(&data), g)?;
            let output = cgp_core::pipeline::run_pipeline(&cfg, out.as_deref())?;
            println!("{}", output.run_dir.display());
            Ok(())
        }
    }
}

/// Config file or preset, then `--set` overrides, then global flags.
pub fn resolve_config(
    args: &ConfigArgs,
    data: Option<&OptionalDataArgs>,
    g: &Global,
) -> Result<RunConfig> {
    let mut overrides = args
        .set
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(seed) = g.seed {
        overrides.push(("protocol.seeds".into(), format!("[{seed}]")));
    }
    if let Some(shots) = &g.shots {
        let list: Vec<String> = shots.iter().map(usize::to_string).collect();
        overrides.push(("protocol.shots".into(), format!("[{}]", list.join(","))));
    }
    if let Some(enc) = &g.encoder {
        overrides.push(("encoder.name".into(), format!("\"{enc}\"")));
    }
    let mut cfg = RunConfig::load(&args.config, &overrides)?;
    if let Some(OptionalDataArgs {
        manifest: Some(manifest),
        bank: Some(bank),
    }) = data
    {
        cfg.data = DataSource::Files {
            manifest: manifest.clone(),
            bank: bank.clone(),
        };
    }
    Ok(cfg)
}

pub fn read_bank(path: &Path) -> Result<ConceptBank> {
    if !path.exists() {
        anyhow::bail!("bank file not found: {}", path.display());
    }
    Ok(load_bank(path)?)
}

pub fn read_data(args: &DataArgs) -> Result<(ConceptBank, Vec<ImageSample>, LabelSpace)> {
    let bank = read_bank(&args.bank)?;
    if !args.manifest.exists() {
        anyhow::bail!("manifest file not found: {}", args.manifest.display());
    }
    let (samples, space) = load_manifest(&args.manifest, &bank)?;
    Ok((bank, samples, space))
}

pub fn bundle(cfg: &RunConfig) -> Result<EncoderBundle> {
    load_bundle(&cfg.encoder.name, &cfg.encoder.mock)
        .with_context(|| format!("loading encoder `{}`", cfg.encoder.name))
}

/// Writes to `out`, or stdout when `None`.
pub fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            cgp_core::pipeline::write(path, text)?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}
