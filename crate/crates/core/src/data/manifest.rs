//! Manifest format: UTF-8 CSV with a header row and the columns
//! `image_id,image_ref,disease_labels,split`; multiple labels are joined with `;`.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use crate::concept_bank::ConceptBank;
use crate::digest::Fingerprinter;

use super::{DataError, ImageSample, LabelSpace, Split};

const HEADER: [&str; 4] = ["image_id", "image_ref", "disease_labels", "split"];

pub fn load_manifest(
    path: &Path,
    bank: &ConceptBank,
) -> Result<(Vec<ImageSample>, LabelSpace), DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_manifest(&text, bank)
}

/// Parses and validates a manifest. The label space lists the diseases that
/// occur in the manifest (by name) and every validated bank concept (by id).
pub fn parse_manifest(
    text: &str,
    bank: &ConceptBank,
) -> Result<(Vec<ImageSample>, LabelSpace), DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| DataError::Csv(e.to_string()))?
        .clone();
    if !headers.is_empty() && headers.iter().collect::<Vec<_>>() != HEADER {
        return Err(DataError::Csv(format!(
            "expected header `{}`, found `{}`",
            HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    let mut unknown = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| DataError::Row {
            line,
            message: e.to_string(),
        })?;
        if record.len() != HEADER.len() {
            return Err(DataError::Row {
                line,
                message: format!("expected {} columns, found {}", HEADER.len(), record.len()),
            });
        }
        let image_id = record[0].to_string();
        if image_id.is_empty() {
            return Err(DataError::Row {
                line,
                message: "empty image_id".into(),
            });
        }
        let labels: BTreeSet<String> = record[2]
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        if labels.is_empty() {
            return Err(DataError::Row {
                line,
                message: "no disease labels".into(),
            });
        }
        for label in &labels {
            if bank.disease(label).is_none() {
                unknown.push((line, label.clone()));
            }
        }
        let split: Split = record[3]
            .parse()
            .map_err(|message| DataError::Row { line, message })?;
        if !seen.insert(image_id.clone()) {
            return Err(DataError::DuplicateImage(image_id));
        }
        samples.push(ImageSample {
            image_id,
            image_ref: record[1].to_string(),
            disease_labels: labels,
            split,
        });
    }
    if !unknown.is_empty() {
        return Err(DataError::UnknownDiseases(unknown));
    }

    let label_space = if samples.is_empty() {
        LabelSpace::default()
    } else {
        let diseases: BTreeSet<String> = samples
            .iter()
            .flat_map(|s| s.disease_labels.iter().cloned())
            .collect();
        LabelSpace {
            diseases: diseases.into_iter().collect(),
            concept_ids: bank.validated_ids(),
        }
    };
    Ok((samples, label_space))
}

pub fn write_manifest(samples: &[ImageSample]) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(HEADER).expect("in-memory write");
    for s in samples {
        let labels = s
            .disease_labels
            .iter()
            .cloned()
            .collect::<Vec<_>>()
            .join(";");
        writer
            .write_record([
                s.image_id.as_str(),
                s.image_ref.as_str(),
                labels.as_str(),
                s.split.as_str(),
            ])
            .expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("flush")).expect("utf8 manifest")
}

/// Digest of the manifest content, independent of row order.
pub fn manifest_hash(samples: &[ImageSample]) -> String {
    let mut sorted: Vec<&ImageSample> = samples.iter().collect();
    sorted.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let mut fp = Fingerprinter::new();
    for s in sorted {
        fp.str(&s.image_id).str(&s.image_ref).str(s.split.as_str());
        for l in &s.disease_labels {
            fp.str(l);
        }
    }
    fp.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concept_bank::Concept;

    fn bank() -> ConceptBank {
        let mut bank = ConceptBank::new();
        for d in ["DR", "CRVO", "Normal"] {
            bank.add_concepts(d, vec![Concept::manual(&format!("{d} sign"))])
                .unwrap();
        }
        bank
    }

    #[test]
    fn parses_multi_label_rows() {
        let text =
            "image_id,image_ref,disease_labels,split\na,a.png,DR;CRVO,train\nb,b.png,Normal,test\n";
        let (samples, space) = parse_manifest(text, &bank()).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[0].disease_labels.len(), 2);
        assert_eq!(space.diseases, vec!["CRVO", "DR", "Normal"]);
    }

    #[test]
    fn empty_manifest_is_fine() {
        let (samples, space) =
            parse_manifest("image_id,image_ref,disease_labels,split\n", &bank()).unwrap();
        assert!(samples.is_empty());
        assert_eq!(space, LabelSpace::default());
        let (samples, _) = parse_manifest("", &bank()).unwrap();
        assert!(samples.is_empty());
    }

    #[test]
    fn unknown_diseases_are_listed() {
        let text = "image_id,image_ref,disease_labels,split\na,a,DR;Foo,train\nb,b,Bar,val\n";
        match parse_manifest(text, &bank()) {
            Err(DataError::UnknownDiseases(rows)) => {
                assert_eq!(rows, vec![(2, "Foo".to_string()), (3, "Bar".to_string())]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = "image_id,image_ref,disease_labels,split\na,a,DR,train\na,b,DR,test\n";
        assert!(
            matches!(parse_manifest(text, &bank()), Err(DataError::DuplicateImage(id)) if id == "a")
        );
    }

    #[test]
    fn paper_split_counts() {
        let mut text = String::from("image_id,image_ref,disease_labels,split\n");
        for (split, n) in [("train", 2928), ("val", 727), ("test", 880)] {
            for i in 0..n {
                text.push_str(&format!("{split}{i},x,DR,{split}\n"));
            }
        }
        let (samples, _) = parse_manifest(&text, &bank()).unwrap();
        let count = |s: Split| samples.iter().filter(|x| x.split == s).count();
        assert_eq!(
            (count(Split::Train), count(Split::Val), count(Split::Test)),
            (2928, 727, 880)
        );
    }

    #[test]
    fn write_then_parse() {
        let text = "image_id,image_ref,disease_labels,split\na,a.png,CRVO;DR,train\n";
        let (samples, _) = parse_manifest(text, &bank()).unwrap();
        assert_eq!(write_manifest(&samples), text);
    }
}
