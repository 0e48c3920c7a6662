//! Documentation corpus extraction: walk an HTML book tree and pull the
//! paragraph content of every chapter file.

use std::path::Path;

use super::{CorpusDocument, IngestError};
use crate::html;

/// Result of scanning a documentation tree.
#[derive(Debug)]
pub struct DocExtraction {
    pub documents: Vec<CorpusDocument>,
    /// Files scanned that produced no paragraph text.
    pub skipped_empty: u64,
    /// Total HTML files scanned.
    pub files_scanned: u64,
}

fn walk_html_files(dir: &Path, out: &mut Vec<std::path::PathBuf>) -> Result<(), IngestError> {
    let entries = std::fs::read_dir(dir).map_err(|source| IngestError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths: Vec<_> = entries
        .collect::<Result<Vec<_>, _>>()
        .map_err(|source| IngestError::Io {
            path: dir.to_path_buf(),
            source,
        })?
        .into_iter()
        .map(|e| e.path())
        .collect();
    paths.sort();
    for path in paths {
        if path.is_dir() {
            walk_html_files(&path, out)?;
        } else if matches!(
            path.extension().and_then(|e| e.to_str()),
            Some("html") | Some("htm")
        ) {
            out.push(path);
        }
    }
    Ok(())
}

/// Extract one [`CorpusDocument`] per HTML chapter file under `root`. The
/// paragraph contents are concatenated in document order with single
/// spaces; files yielding no paragraph text are skipped and counted. The
/// book name is the chapter's top-level directory under `root` (or the root
/// directory's own name for files directly inside it).
pub fn extract_doc_chapters(root: &Path) -> Result<DocExtraction, IngestError> {
    let mut files = Vec::new();
    walk_html_files(root, &mut files)?;

    let root_name = root
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("docs")
        .to_string();

    let mut documents = Vec::new();
    let mut skipped_empty = 0u64;
    for path in &files {
        let raw = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
            path: path.clone(),
            source,
        })?;
        let paragraphs = html::paragraph_contents(&raw);
        let text = paragraphs
            .iter()
            .map(|p| p.trim())
            .filter(|p| !p.is_empty())
            .collect::<Vec<_>>()
            .join(" ");
        if text.is_empty() {
            skipped_empty += 1;
            continue;
        }
        let rel = path.strip_prefix(root).unwrap_or(path);
        let book = rel
            .components()
            .next()
            .and_then(|c| c.as_os_str().to_str())
            .filter(|_| rel.components().count() > 1)
            .unwrap_or(&root_name)
            .to_string();
        documents.push(CorpusDocument {
            book,
            chapter_path: rel.to_string_lossy().replace('\\', "/"),
            text,
        });
    }

    Ok(DocExtraction {
        documents,
        skipped_empty,
        files_scanned: files.len() as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn tree(files: &[(&str, &str)]) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for (rel, content) in files {
            let path = dir.path().join(rel);
            fs::create_dir_all(path.parent().unwrap()).unwrap();
            fs::write(path, content).unwrap();
        }
        dir
    }

    #[test]
    fn paragraphs_concatenate_with_single_spaces() {
        let dir = tree(&[(
            "book/ch1.html",
            "<html><body><p>a b.</p><p>c d.</p></body></html>",
        )]);
        let result = extract_doc_chapters(dir.path()).unwrap();
        assert_eq!(result.documents.len(), 1);
        assert_eq!(result.documents[0].text, "a b. c d.");
        assert_eq!(result.documents[0].book, "book");
        assert_eq!(result.documents[0].chapter_path, "book/ch1.html");
    }

    #[test]
    fn chapters_without_paragraphs_are_skipped_and_counted() {
        let dir = tree(&[
            ("book/ch1.html", "<p>text</p>"),
            ("book/print.html", "<h1>no paragraphs</h1>"),
        ]);
        let result = extract_doc_chapters(dir.path()).unwrap();
        assert_eq!(result.documents.len(), 1);
        assert_eq!(result.skipped_empty, 1);
        assert_eq!(result.files_scanned, 2);
    }

    #[test]
    fn skipped_plus_documents_equals_files_scanned() {
        let dir = tree(&[
            ("a/one.html", "<p>x</p>"),
            ("a/two.html", "<div>none</div>"),
            ("b/three.html", "<p>y</p>"),
            ("b/ignore.css", "p { color: red }"),
        ]);
        let result = extract_doc_chapters(dir.path()).unwrap();
        assert_eq!(
            result.documents.len() as u64 + result.skipped_empty,
            result.files_scanned
        );
        assert_eq!(result.files_scanned, 3); // css not scanned
    }

    #[test]
    fn book_name_comes_from_top_level_directory() {
        let dir = tree(&[
            ("reference/types/slice.html", "<p>slices</p>"),
            ("toplevel.html", "<p>root file</p>"),
        ]);
        let result = extract_doc_chapters(dir.path()).unwrap();
        let books: Vec<&str> = result.documents.iter().map(|d| d.book.as_str()).collect();
        assert!(books.contains(&"reference"));
        // files directly under root take the root directory's name
        assert_eq!(result.documents.len(), 2);
    }

    #[test]
    fn missing_root_is_an_io_error() {
        let err = extract_doc_chapters(Path::new("/nonexistent/docs/root")).unwrap_err();
        assert!(matches!(err, IngestError::Io { .. }));
    }

    #[test]
    fn inline_code_markup_is_preserved_for_cleaning() {
        let dir = tree(&[(
            "book/ch.html",
            "<p>Use <code>Vec</code> for growable arrays.</p>",
        )]);
        let result = extract_doc_chapters(dir.path()).unwrap();
        assert!(result.documents[0].text.contains("<code>Vec</code>"));
    }
}
