use anyhow::Result;

use cgp_core::interpret::{contributions, export_sankey, InterpretError};
use cgp_core::stage1::read_logits;
use cgp_core::stage2::{check_concepts, load_model};

use super::{emit, read_data};
use crate::args::{InterpretArgs, InterpretCommand};

pub fn run(cmd: InterpretCommand) -> Result<()> {
    match cmd {
        InterpretCommand::Report {
            inputs,
            disease,
            top,
            bottom,
            out,
        } => {
            let (model, logits, samples) = load(&inputs)?;
            let report = contributions(&model, &logits, &samples, &disease, inputs.normalization)?;
            if report.normalization_skipped {
                eprintln!("warning: every contribution is zero; normalization skipped");
            }
            emit(out.as_deref(), &report.to_tsv(top, bottom))
        }
        InterpretCommand::Sankey {
            inputs,
            diseases,
            top,
            bottom,
            out,
        } => {
            let (model, logits, samples) = load(&inputs)?;
            let names = if diseases.is_empty() {
                model.diseases.clone()
            } else {
                diseases
            };
            let mut reports = Vec::new();
            for d in &names {
                match contributions(&model, &logits, &samples, d, inputs.normalization) {
                    Ok(r) => reports.push(r),
                    Err(InterpretError::NoSamples(_)) => {
                        eprintln!("warning: no images for `{d}`; skipped")
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            if reports.is_empty() {
                anyhow::bail!("no disease had logits rows to explain");
            }
            emit(
                out.as_deref(),
                &export_sankey(&reports, top, bottom).to_json(),
            )
        }
    }
}

fn load(
    inputs: &InterpretArgs,
) -> Result<(
    cgp_core::stage2::Stage2Model,
    Vec<cgp_core::stage1::ConceptLogits>,
    Vec<cgp_core::data::ImageSample>,
)> {
    let (_, samples, _) = read_data(&inputs.data)?;
    let model = load_model(&inputs.model)?;
    let file = read_logits(&inputs.logits)?;
    check_concepts(&model, &file.concept_ids)?;
    Ok((model, file.rows, samples))
}
