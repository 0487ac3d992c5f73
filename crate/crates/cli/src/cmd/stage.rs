use std::collections::BTreeSet;

use anyhow::{Context, Result};

use cgp_core::data::{sample_episode, Split};
use cgp_core::encoders::{read_context_checkpoint, write_context_checkpoint};
use cgp_core::stage1::{
    self, infer_concepts, read_logits, verify_checkpoint, write_logits, LogitsFile, TrainConfig,
};
use cgp_core::stage2::{self, check_concepts, load_model, save_model, Stage2Hyper};

use super::{bundle, emit, read_data, resolve_config};
use crate::args::{Global, Stage1Command, Stage2Command};

pub fn stage1(cmd: Stage1Command, g: &Global) -> Result<()> {
    match cmd {
        Stage1Command::Train {
            data,
            config,
            out,
            history,
        } => {
            let cfg = resolve_config(&config, None, g)?;
            let (bank, samples, space) = read_data(&data)?;
            let bundle = bundle(&cfg)?;
            let seed = cfg.protocol.seeds[0];
            let shots = *cfg
                .protocol
                .shots
                .iter()
                .max()
                .expect("validated non-empty");
            let episode = sample_episode(&samples, &space, shots, seed);
            let ids: BTreeSet<String> = episode.unique_ids().into_iter().collect();
            let train: Vec<_> = samples
                .iter()
                .filter(|s| ids.contains(&s.image_id))
                .cloned()
                .collect();
            let val: Vec<_> = samples
                .iter()
                .filter(|s| s.split == Split::Val)
                .cloned()
                .collect();
            let tc = TrainConfig {
                seed,
                ..cfg.protocol.stage1.clone()
            };
            let outcome = stage1::train(&bundle, &bank, &space, &train, &val, &tc, None)?;
            write_context_checkpoint(
                &out,
                &outcome.best_context,
                bank.version,
                &space.digest(),
                &bundle.fingerprint(),
            )?;
            if let Some(path) = history {
                let h = serde_json::json!({
                    "train_bce": outcome.epoch_train_loss,
                    "val_bce": outcome.val_history,
                    "lr": outcome.lr_history,
                    "best_epoch": outcome.best_epoch,
                });
                cgp_core::pipeline::write(&path, &(serde_json::to_string_pretty(&h)? + "\n"))?;
            }
            println!(
                "n={shots} seed={seed}: {} training images, best epoch {}, final train BCE {:.4}",
                train.len(),
                outcome.best_epoch,
                outcome.epoch_train_loss.last().copied().unwrap_or(f64::NAN)
            );
            eprintln!("wrote {}", out.display());
            Ok(())
        }
        Stage1Command::Infer {
            data,
            config,
            context,
            split,
            out,
        } => {
            let cfg = resolve_config(&config, None, g)?;
            let (bank, samples, space) = read_data(&data)?;
            let bundle = bundle(&cfg)?;
            let ckpt = read_context_checkpoint(&context)?;
            verify_checkpoint(&ckpt.header, bank.version, &space, &bundle)
                .with_context(|| format!("checkpoint {}", context.display()))?;
            let pool: Vec<_> = samples
                .iter()
                .filter(|s| split.split().is_none_or(|sp| s.split == sp))
                .cloned()
                .collect();
            let rows = infer_concepts(&bundle, &ckpt.context, &space, &pool)?;
            let file = LogitsFile {
                bank_version: bank.version,
                label_space: space.digest(),
                concept_ids: space.concept_ids.clone(),
                rows,
            };
            write_logits(&out, &file)?;
            eprintln!("wrote {} ({} images)", out.display(), file.rows.len());
            Ok(())
        }
    }
}

pub fn stage2(cmd: Stage2Command, g: &Global) -> Result<()> {
    match cmd {
        Stage2Command::Fit {
            data,
            config,
            logits,
            method,
            mode,
            out,
        } => {
            let cfg = resolve_config(&config, None, g)?;
            let (_, samples, space) = read_data(&data)?;
            let file = read_logits(&logits)?;
            if file.concept_ids != space.concept_ids {
                anyhow::bail!(
                    "{}: concept axis ({} concepts) does not match the bank ({} concepts)",
                    logits.display(),
                    file.concept_ids.len(),
                    space.num_concepts()
                );
            }
            if method == cgp_core::eval::Method::MlpEndToEnd {
                anyhow::bail!("mlp_e2e trains the context jointly; use `eval ablate --sweep stage2` with protocol.include_end_to_end=true");
            }
            let hyper = Stage2Hyper {
                seed: cfg.protocol.seeds[0],
                ..cfg.protocol.stage2.clone()
            };
            let model = stage2::fit(
                method.kind(),
                &file.rows,
                &samples,
                &space,
                mode.unwrap_or(cfg.protocol.mode),
                &hyper,
                None,
            )?;
            for d in &model.skipped {
                eprintln!("warning: head `{d}` skipped (no positive training images)");
            }
            save_model(&out, &model)?;
            eprintln!("wrote {}", out.display());
            Ok(())
        }
        Stage2Command::Predict { model, logits, out } => {
            let model = load_model(&model)?;
            let file = read_logits(&logits)?;
            check_concepts(&model, &file.concept_ids)?;
            let preds = stage2::predict(&model, &file.rows)?;
            let mut text = format!("image_id\t{}\tpredicted\n", model.diseases.join("\t"));
            for p in preds {
                let scores: Vec<String> = p.scores.iter().map(|s| format!("{s:.6}")).collect();
                let names: Vec<&str> = p
                    .decision
                    .iter()
                    .map(|&d| model.diseases[d].as_str())
                    .collect();
                text.push_str(&format!(
                    "{}\t{}\t{}\n",
                    p.image_id,
                    scores.join("\t"),
                    names.join(";")
                ));
            }
            emit(out.as_deref(), &text)
        }
    }
}
