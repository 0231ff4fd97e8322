use std::path::Path;

use super::{quantize_bytes, Dataset, Sample, Vocabulary};
use crate::error::{Error, Result};

/// Reads a headerless CSV whose first column is a 1-based class and whose
/// remaining columns are text. Text columns are joined with one space.
pub fn load_csv(path: &Path, n_classes: usize, vocab: &Vocabulary, s: usize) -> Result<Dataset> {
    let ingest = |line: u64, message: String| Error::Ingest {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| ingest(0, e.to_string()))?;
    let mut samples = Vec::new();
    let mut record = csv::ByteRecord::new();
    loop {
        let line = reader.position().line();
        match reader.read_byte_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                let line = e.position().map_or(line, |p| p.line());
                return Err(ingest(line, e.to_string()));
            }
        }
        let line = record.position().map_or(line, |p| p.line());
        if record.len() < 2 {
            return Err(ingest(
                line,
                format!(
                    "expected a class and at least one text field, found {} field(s)",
                    record.len()
                ),
            ));
        }
        let raw = String::from_utf8_lossy(&record[0]);
        let class: i64 = raw
            .trim()
            .parse()
            .map_err(|_| ingest(line, format!("class {:?} is not an integer", raw.trim())))?;
        if class < 1 || class as u64 > n_classes as u64 {
            return Err(Error::LabelRange {
                path: path.to_path_buf(),
                line,
                class,
                n_classes,
            });
        }
        let mut text = Vec::new();
        for (i, field) in record.iter().skip(1).enumerate() {
            if i > 0 {
                text.push(b' ');
            }
            text.extend_from_slice(field);
        }
        samples.push(Sample {
            indices: quantize_bytes(&text, vocab, s),
            label: (class - 1) as usize,
        });
    }
    if samples.is_empty() {
        return Err(ingest(1, "file contains no rows".into()));
    }
    Dataset::new(samples, n_classes, s, path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn class_first_rows() {
        let f = write("\"3\",\"title\",\"desc\"\n1,\"a, \"\"b\"\"\",c\n");
        let v = Vocabulary::default();
        let d = load_csv(f.path(), 4, &v, 12).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.samples[0].label, 2);
        assert_eq!(d.samples[0].indices, quantize_bytes(b"title desc", &v, 12));
        assert_eq!(d.samples[1].label, 0);
        assert_eq!(d.samples[1].indices, quantize_bytes(b"a, \"b\" c", &v, 12));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let v = Vocabulary::default();
        let f = write("1,ok\n9,bad\n");
        assert!(matches!(
            load_csv(f.path(), 4, &v, 8),
            Err(Error::LabelRange { line: 2, class: 9, .. })
        ));
        let f = write("1,ok\n2,fine\nx,bad\n");
        assert!(matches!(
            load_csv(f.path(), 4, &v, 8),
            Err(Error::Ingest { line: 3, .. })
        ));
        let f = write("1,ok\n2\n");
        assert!(matches!(
            load_csv(f.path(), 4, &v, 8),
            Err(Error::Ingest { line: 2, .. })
        ));
        let f = write("");
        assert!(matches!(load_csv(f.path(), 4, &v, 8), Err(Error::Ingest { .. })));
        let f = write("0,zero\n");
        assert!(matches!(
            load_csv(f.path(), 4, &v, 8),
            Err(Error::LabelRange { class: 0, .. })
        ));
    }
}
