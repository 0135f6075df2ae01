//! Loader for pretrained word vectors in the GloVe text format
//! (`word v1 v2 … vE`, one token per line).

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use crate::corpus::Vocabulary;
use crate::nn::EmbeddingTable;

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("{path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: expected {expected} values, found {found}")]
    Dimension {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("{path}:{line}: invalid number {value:?}")]
    Number { path: PathBuf, line: usize, value: String },
}

/// Overwrites rows of `table` for vocabulary tokens present in the file.
/// Rows of missing tokens keep their current (random) values. Returns the
/// number of vocabulary tokens found.
pub fn load_pretrained(path: &Path, vocab: &Vocabulary, table: &mut EmbeddingTable) -> Result<usize, EmbeddingError> {
    let file = File::open(path).map_err(|source| EmbeddingError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_pretrained(BufReader::new(file), path, vocab, table)
}

pub fn read_pretrained<R: BufRead>(
    reader: R,
    path: &Path,
    vocab: &Vocabulary,
    table: &mut EmbeddingTable,
) -> Result<usize, EmbeddingError> {
    let dim = table.dim();
    let mut seen = vec![false; vocab.len()];
    let mut hits = 0;
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| EmbeddingError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values: Vec<&str> = parts.collect();
        if values.len() != dim {
            return Err(EmbeddingError::Dimension {
                path: path.to_path_buf(),
                line: n + 1,
                expected: dim,
                found: values.len(),
            });
        }
        let Some(id) = vocab.id(word) else { continue };
        if Vocabulary::is_special(id) || seen[id] {
            continue;
        }
        let row = table.table.row_mut(id);
        for (dst, v) in row.iter_mut().zip(&values) {
            *dst = v.parse().map_err(|_| EmbeddingError::Number {
                path: path.to_path_buf(),
                line: n + 1,
                value: v.to_string(),
            })?;
        }
        seen[id] = true;
        hits += 1;
    }
    Ok(hits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn vocab() -> Vocabulary {
        let mut t: Vec<String> = ["<pad>", "<unk>", "<sos>", "<eos>", "cat", "dog"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        t.push("owl".into());
        Vocabulary::from_tokens(t).unwrap()
    }

    #[test]
    fn known_rows_replaced_missing_rows_kept() {
        let v = vocab();
        let mut table = EmbeddingTable {
            table: Tensor::filled(&[7, 2], 9.0),
            trainable: false,
        };
        let text = "dog 0.5 -1\nzebra 1 1\ncat 2e-1 3\n";
        let hits = read_pretrained(text.as_bytes(), Path::new("g.txt"), &v, &mut table).unwrap();
        assert_eq!(hits, 2);
        assert_eq!(table.table.row(4), &[0.2, 3.0]);
        assert_eq!(table.table.row(5), &[0.5, -1.0]);
        assert_eq!(table.table.row(6), &[9.0, 9.0]);
    }

    #[test]
    fn wrong_dimension_reports_line() {
        let v = vocab();
        let mut table = EmbeddingTable {
            table: Tensor::zeros(&[7, 3]),
            trainable: false,
        };
        let err = read_pretrained("cat 1 2 3\ndog 1 2\n".as_bytes(), Path::new("g.txt"), &v, &mut table).unwrap_err();
        assert!(matches!(err, EmbeddingError::Dimension { line: 2, found: 2, .. }));
    }
}
