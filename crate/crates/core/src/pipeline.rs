//! End-to-end run: bank-load, episode, Stage 1, Stage 2, evaluation and
//! interpretation, with every artifact written under
//! `<root>/<UTC timestamp>-<digest8>/`.
//!
//! Only the directory name carries a timestamp; everything inside it is a
//! pure function of the resolved config and the input files.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;

use crate::concept_bank::{save_bank, ConceptBank};
use crate::config::{DataSource, RunConfig};
use crate::data::{
    generate_synthetic, load_manifest, manifest_hash, parse_manifest, sample_episode,
    write_manifest, ImageSample, LabelSpace, Split,
};
use crate::encoders::{load_bundle, write_context_checkpoint, EncoderBundle};
use crate::error::{Error, Result};
use crate::eval::{
    run_ablation, run_base_to_novel, run_few_shot, Dataset, Method, Provenance, Report, Table,
};
use crate::interpret::{contributions, export_sankey, ContributionReport, ATTRIBUTION};
use crate::stage1::{self, infer_concepts, write_logits, LogitsFile, TrainConfig};
use crate::stage2::{self, save_model, Stage2Hyper, Stage2Kind};

pub const DEFAULT_RUNS_DIR: &str = "runs";

#[derive(Debug)]
pub struct PipelineOutput {
    pub run_dir: PathBuf,
    pub report: Report,
}

/// Bank, samples and label space for a data source.
pub fn load_inputs(source: &DataSource) -> Result<(ConceptBank, Vec<ImageSample>, LabelSpace)> {
    match source {
        DataSource::Synthetic(cfg) => {
            let ds = generate_synthetic(cfg)?;
            let (samples, space) = parse_manifest(&ds.manifest_csv(), &ds.bank)?;
            Ok((ds.bank, samples, space))
        }
        DataSource::Files { manifest, bank } => {
            if !bank.exists() {
                return Err(Error::io(
                    bank,
                    std::io::Error::from(std::io::ErrorKind::NotFound),
                ));
            }
            let bank = crate::concept_bank::load_bank(bank)?;
            let (samples, space) = load_manifest(manifest, &bank)?;
            Ok((bank, samples, space))
        }
    }
}

pub fn provenance(
    cfg: &RunConfig,
    bank: &ConceptBank,
    samples: &[ImageSample],
    space: &LabelSpace,
    bundle: &EncoderBundle,
) -> Provenance {
    Provenance {
        config_digest: cfg.digest(),
        bank_version: bank.version,
        label_space: space.digest(),
        manifest_hash: manifest_hash(samples),
        encoder: bundle.name.clone(),
        encoder_fingerprint: bundle.fingerprint(),
    }
}

/// Creates `<root>/<timestamp>-<digest8>`, suffixing `-N` on collision.
pub fn create_run_dir(root: &Path, digest: &str) -> Result<PathBuf> {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let base = format!("{stamp}-{}", &digest[..8]);
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut n = 0;
    loop {
        let name = if n == 0 {
            base.clone()
        } else {
            format!("{base}-{n}")
        };
        let dir = root.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
            Err(e) => return Err(Error::io(&dir, e)),
        }
    }
}

/// Writes `text`, creating parent directories.
pub fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `<stem>.tsv` and `<stem>.md` into `dir`.
pub fn write_table(dir: &Path, stem: &str, table: &Table) -> Result<()> {
    write(&dir.join(format!("{stem}.tsv")), &table.to_tsv())?;
    write(&dir.join(format!("{stem}.md")), &table.to_markdown())
}

#[derive(Debug, Serialize)]
struct InterpretSummary {
    seed: u64,
    shots: usize,
    method: Method,
    attribution: &'static str,
    top_k: usize,
    bottom_k: usize,
    reports: Vec<ContributionReport>,
}

/// Runs every enabled task and writes the run directory under `root`
/// (`cfg.output_dir` or [`DEFAULT_RUNS_DIR`] when `None`).
pub fn run_pipeline(cfg: &RunConfig, root: Option<&Path>) -> Result<PipelineOutput> {
    cfg.validate()?;
    let digest = cfg.digest();
    let root = root
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_RUNS_DIR));

    info!("stage bank-load");
    let (bank, samples, space) = load_inputs(&cfg.data)?;
    let bundle = load_bundle(&cfg.encoder.name, &cfg.encoder.mock)?;

    let run_dir = create_run_dir(&root, &digest)?;
    info!("run directory {}", run_dir.display());
    write(&run_dir.join("config.toml"), &cfg.to_toml())?;
    write(&run_dir.join("config.digest"), &format!("{digest}\n"))?;
    let inputs = run_dir.join("inputs");
    std::fs::create_dir_all(&inputs).map_err(|e| Error::io(&inputs, e))?;
    save_bank(&bank, &inputs.join("bank.json"))?;
    write(
        &run_dir.join("inputs/manifest.csv"),
        &write_manifest(&samples),
    )?;

    let mut report = Report::new(
        "pipeline",
        provenance(cfg, &bank, &samples, &space, &bundle),
        cfg.protocol.clone(),
    );
    let data = Dataset {
        bank: &bank,
        samples: &samples,
        space: &space,
    };
    let tables = run_dir.join("tables");

    if cfg.tasks.few_shot {
        info!("stage eval: few-shot");
        let results = run_few_shot(data, &bundle, &cfg.protocol)?;
        write_table(&tables, "few_shot", &Table::few_shot(&results))?;
        report.results.few_shot = results;
    }
    if cfg.tasks.base_novel {
        info!("stage eval: base-to-novel");
        let result = run_base_to_novel(data, &bundle, &cfg.protocol)?;
        write_table(&tables, "base_to_novel", &Table::base_to_novel(&result))?;
        report.results.base_to_novel = Some(result);
    }
    for &sweep in &cfg.tasks.ablations {
        info!("stage eval: ablation {sweep}");
        let table = run_ablation(sweep, data, &bundle, &cfg.protocol)?;
        write_table(
            &tables,
            &format!("ablation_{sweep}"),
            &Table::ablation(&table),
        )?;
        report.results.ablations.push(table);
    }
    if cfg.interpret.enabled {
        let summary = interpret_run(cfg, data, &bundle, &run_dir, &mut report)?;
        report.notes.push(format!(
            "concept contributions: mean over test images of weight x stage-2 input ({ATTRIBUTION}), {:?} normalization",
            summary.reports.first().map(|r| r.normalization).unwrap_or_default()
        ));
        report.results.interpret =
            Some(serde_json::to_value(&summary).expect("summary serializes"));
    }
    report.collect_warnings();
    write(&run_dir.join("report.json"), &report.to_json())?;
    info!(
        "report written to {}",
        run_dir.join("report.json").display()
    );
    Ok(PipelineOutput { run_dir, report })
}

/// Trains one showcase model (first seed, largest shot count) and keeps its
/// artifacts: episode, context checkpoint, logits, Stage 2 model,
/// contribution reports and the Sankey flow.
fn interpret_run(
    cfg: &RunConfig,
    data: Dataset<'_>,
    bundle: &EncoderBundle,
    run_dir: &Path,
    report: &mut Report,
) -> Result<InterpretSummary> {
    let p = &cfg.protocol;
    let seed = p.seeds[0];
    let shots = *p.shots.iter().max().expect("validated non-empty");
    let method = if p.method.kind().is_linear() && p.method != Method::MlpEndToEnd {
        p.method
    } else {
        report.warnings.push(format!(
            "interpret: {} has no concept weights; contributions use lr",
            p.method
        ));
        Method::Lr
    };
    info!("stage episode (seed {seed}, n={shots})");
    let artifacts = run_dir.join("artifacts");
    std::fs::create_dir_all(&artifacts).map_err(|e| Error::io(&artifacts, e))?;
    let episode = sample_episode(data.samples, data.space, shots, seed);
    write(
        &run_dir.join("artifacts/episode.json"),
        &serde_json::to_string_pretty(&episode).expect("episode serializes"),
    )?;
    let ids: BTreeSet<String> = episode.unique_ids().into_iter().collect();
    let train_pool: Vec<ImageSample> = data
        .samples
        .iter()
        .filter(|s| ids.contains(&s.image_id))
        .cloned()
        .collect();
    let val_pool: Vec<ImageSample> = data
        .samples
        .iter()
        .filter(|s| s.split == Split::Val)
        .cloned()
        .collect();
    let test_pool: Vec<ImageSample> = data
        .samples
        .iter()
        .filter(|s| s.split == Split::Test)
        .cloned()
        .collect();
    if test_pool.is_empty() {
        return Err(crate::eval::EvalError::EmptyTestPool.into());
    }

    info!("stage stage1");
    let s1 = TrainConfig {
        seed,
        ..p.stage1.clone()
    };
    let trained = stage1::train(
        bundle,
        data.bank,
        data.space,
        &train_pool,
        &val_pool,
        &s1,
        None,
    )?;
    let label_space = data.space.digest();
    write_context_checkpoint(
        &run_dir.join("artifacts/context.ckpt"),
        &trained.best_context,
        data.bank.version,
        &label_space,
        &bundle.fingerprint(),
    )?;
    let train_logits = infer_concepts(bundle, &trained.best_context, data.space, &train_pool)?;
    let test_logits = infer_concepts(bundle, &trained.best_context, data.space, &test_pool)?;
    for (name, rows) in [("train", &train_logits), ("test", &test_logits)] {
        let file = LogitsFile {
            bank_version: data.bank.version,
            label_space: label_space.clone(),
            concept_ids: data.space.concept_ids.clone(),
            rows: rows.clone(),
        };
        write_logits(&run_dir.join(format!("artifacts/{name}_logits.tsv")), &file)?;
    }

    info!("stage stage2 ({method})");
    let hyper = Stage2Hyper {
        seed,
        ..p.stage2.clone()
    };
    let kind: Stage2Kind = method.kind();
    let model = stage2::fit(
        kind,
        &train_logits,
        &train_pool,
        data.space,
        p.mode,
        &hyper,
        None,
    )?;
    save_model(&run_dir.join("artifacts/stage2_model.json"), &model)?;

    info!("stage interpret");
    let mut reports = Vec::new();
    for disease in &data.space.diseases {
        if model.skipped.contains(disease) {
            report
                .warnings
                .push(format!("interpret: head `{disease}` skipped; no report"));
            continue;
        }
        match contributions(
            &model,
            &test_logits,
            &test_pool,
            disease,
            cfg.interpret.normalization,
        ) {
            Ok(r) => {
                write(
                    &run_dir.join(format!("interpret/{}.tsv", file_stem(disease))),
                    &r.to_tsv(cfg.interpret.top_k, cfg.interpret.bottom_k),
                )?;
                reports.push(r);
            }
            Err(crate::interpret::InterpretError::NoSamples(d)) => {
                report
                    .warnings
                    .push(format!("interpret: no test images for `{d}`; no report"));
            }
            Err(e) => return Err(e.into()),
        }
    }
    let flow = export_sankey(&reports, cfg.interpret.top_k, cfg.interpret.bottom_k);
    write(&run_dir.join("interpret/sankey.json"), &flow.to_json())?;
    Ok(InterpretSummary {
        seed,
        shots,
        method,
        attribution: ATTRIBUTION,
        top_k: cfg.interpret.top_k,
        bottom_k: cfg.interpret.bottom_k,
        reports,
    })
}

/// Disease names as file stems: anything outside `[A-Za-z0-9_-]` becomes `_`.
pub fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_override;

    fn tiny() -> RunConfig {
        let o: Vec<(String, String)> = [
            "protocol.stage1.epochs=4",
            "protocol.stage1.warmup_epochs=1",
            "protocol.stage1.num_tokens=4",
            "protocol.seeds=[1]",
            "protocol.shots=[4]",
        ]
        .iter()
        .map(|s| parse_override(s).unwrap())
        .collect();
        RunConfig::load("quickstart", &o).unwrap()
    }

    fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
        let mut out = Vec::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in std::fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.push((
                        p.strip_prefix(dir).unwrap().to_path_buf(),
                        std::fs::read(&p).unwrap(),
                    ));
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn run_writes_every_artifact_deterministically() {
        let root = tempfile::tempdir().unwrap();
        let cfg = tiny();
        let a = run_pipeline(&cfg, Some(root.path())).unwrap();
        let b = run_pipeline(&cfg, Some(root.path())).unwrap();
        assert_ne!(a.run_dir, b.run_dir);
        assert!(a
            .run_dir
            .file_name()
            .unwrap()
            .to_str()
            .unwrap()
            .contains(&cfg.digest()[..8]));
        let fa = files(&a.run_dir);
        assert_eq!(fa, files(&b.run_dir));
        let names: Vec<String> = fa.iter().map(|(p, _)| p.display().to_string()).collect();
        for want in [
            "report.json",
            "config.toml",
            "artifacts/context.ckpt",
            "artifacts/stage2_model.json",
            "interpret/sankey.json",
            "tables/few_shot.tsv",
            "tables/base_to_novel.md",
        ] {
            assert!(names.iter().any(|n| n == want), "missing {want}: {names:?}");
        }
        assert_eq!(a.report.provenance.config_digest, cfg.digest());
        let parsed =
            Report::from_json(&std::fs::read_to_string(a.run_dir.join("report.json")).unwrap())
                .unwrap();
        assert_eq!(parsed, a.report);
    }

    #[test]
    fn missing_bank_names_the_path() {
        let cfg = RunConfig {
            data: DataSource::Files {
                manifest: "m.csv".into(),
                bank: "/definitely/missing/bank.json".into(),
            },
            ..tiny()
        };
        let err = run_pipeline(&cfg, Some(Path::new("/tmp"))).unwrap_err();
        assert!(err.to_string().contains("/definitely/missing/bank.json"));
    }

    #[test]
    fn unknown_encoder_is_refused() {
        let mut cfg = tiny();
        cfg.encoder.name = "ViT-B/16".into();
        let root = tempfile::tempdir().unwrap();
        assert!(matches!(
            run_pipeline(&cfg, Some(root.path())),
            Err(Error::Encoder(crate::encoders::EncoderError::Unavailable(
                _
            )))
        ));
        assert_eq!(std::fs::read_dir(root.path()).unwrap().count(), 0);
    }
}
