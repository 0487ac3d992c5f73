use anyhow::Result;

use cgp_core::eval::{run_ablation, run_base_to_novel, run_few_shot, Dataset, Report, Table};
use cgp_core::pipeline::{load_inputs, provenance, write, write_table};

use super::{bundle, resolve_config};
use crate::args::{EvalArgs, EvalCommand, Global};

pub fn run(cmd: EvalCommand, g: &Global) -> Result<()> {
    let (args, task) = match &cmd {
        EvalCommand::FewShot(a) => (a, "few-shot".to_string()),
        EvalCommand::BaseNovel(a) => (a, "base-novel".to_string()),
        EvalCommand::Ablate { eval, sweep } => (eval, format!("ablate-{sweep}")),
    };
    let EvalArgs { config, data, out } = args;
    let cfg = resolve_config(config, Some(data), g)?;
    let (bank, samples, space) = load_inputs(&cfg.data)?;
    let bundle = bundle(&cfg)?;
    let mut report = Report::new(
        &task,
        provenance(&cfg, &bank, &samples, &space, &bundle),
        cfg.protocol.clone(),
    );
    let data = Dataset {
        bank: &bank,
        samples: &samples,
        space: &space,
    };
    let table = match &cmd {
        EvalCommand::FewShot(_) => {
            let results = run_few_shot(data, &bundle, &cfg.protocol)?;
            let t = Table::few_shot(&results);
            report.results.few_shot = results;
            t
        }
        EvalCommand::BaseNovel(_) => {
            let result = run_base_to_novel(data, &bundle, &cfg.protocol)?;
            let t = Table::base_to_novel(&result);
            report.notes.push(result.novel_scoring.clone());
            report.results.base_to_novel = Some(result);
            t
        }
        EvalCommand::Ablate { sweep, .. } => {
            let result = run_ablation(*sweep, data, &bundle, &cfg.protocol)?;
            let t = Table::ablation(&result);
            report.results.ablations.push(result);
            t
        }
    };
    report.collect_warnings();
    std::fs::create_dir_all(out)?;
    write(&out.join("report.json"), &report.to_json())?;
    write(&out.join("config.toml"), &cfg.to_toml())?;
    write_table(out, &task, &table)?;
    print!("{}", table.to_markdown());
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}
