//! Cohort manifests: `slide_id,path,msi,hypermut,site`.
//!
//! Relative bag paths are resolved against the manifest's directory.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::bagfile::read_bag;
use crate::bag::{Cohort, LabeledSlide, Labels};
use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 5] = ["slide_id", "path", "msi", "hypermut", "site"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub slide_id: String,
    pub path: String,
    pub msi: u8,
    pub hypermut: u8,
    pub site: String,
}

impl ManifestEntry {
    pub fn labels(&self) -> Labels {
        Labels {
            msi: self.msi == 1,
            hypermut: self.hypermut == 1,
        }
    }
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .clone();
    if header.iter().ne(MANIFEST_HEADER.iter().copied()) {
        return Err(Error::format(
            path,
            format!("header must be `{}`", MANIFEST_HEADER.join(",")),
        ));
    }
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (row, rec) in rdr.deserialize::<ManifestEntry>().enumerate() {
        let line = row + 2;
        let e = rec.map_err(|e| Error::format(path, format!("line {line}: {e}")))?;
        if e.msi > 1 || e.hypermut > 1 {
            return Err(Error::format(path, format!("line {line}: labels must be 0 or 1")));
        }
        if e.slide_id.is_empty() {
            return Err(Error::format(path, format!("line {line}: empty slide_id")));
        }
        if !seen.insert(e.slide_id.clone()) {
            return Err(Error::format(
                path,
                format!("line {line}: duplicate slide_id `{}`", e.slide_id),
            ));
        }
        entries.push(e);
    }
    if entries.is_empty() {
        return Err(Error::format(path, "manifest lists no slides"));
    }
    Ok(entries)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    for e in entries {
        w.serialize(e).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

pub fn resolve(manifest: &Path, entry: &ManifestEntry) -> PathBuf {
    let p = Path::new(&entry.path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest.parent().unwrap_or(Path::new(".")).join(p)
    }
}

/// Reads every bag listed in the manifest. The bag's own slide id must
/// agree with the manifest row.
pub fn load_cohort(manifest: &Path) -> Result<Cohort> {
    let entries = read_manifest(manifest)?;
    for e in &entries {
        let p = resolve(manifest, e);
        if !p.is_file() {
            return Err(Error::io(
                &p,
                std::io::Error::new(std::io::ErrorKind::NotFound, "bag file not found"),
            ));
        }
    }
    entries
        .iter()
        .map(|e| {
            let p = resolve(manifest, e);
            let bag = read_bag(&p)?;
            if bag.slide_id != e.slide_id {
                return Err(Error::format(
                    &p,
                    format!("slide id `{}` does not match manifest `{}`", bag.slide_id, e.slide_id),
                ));
            }
            Ok(LabeledSlide {
                bag,
                labels: e.labels(),
                site: e.site.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicates_and_bad_labels() {
        let p = Path::new("m.csv");
        let dup = "slide_id,path,msi,hypermut,site\na,a.msib,1,0,x\na,b.msib,0,0,x\n";
        assert!(parse_manifest(dup, p).unwrap_err().to_string().contains("duplicate"));
        let bad = "slide_id,path,msi,hypermut,site\na,a.msib,2,0,x\n";
        assert!(parse_manifest(bad, p).is_err());
        let hdr = "id,path,msi,hypermut,site\na,a.msib,1,0,x\n";
        assert!(parse_manifest(hdr, p).is_err());
    }

    #[test]
    fn parses_rows() {
        let text = "slide_id,path,msi,hypermut,site\na,bags/a.msib,1,0,x\nb,/abs/b.msib,0,1,y\n";
        let m = parse_manifest(text, Path::new("/data/m.csv")).unwrap();
        assert_eq!(m.len(), 2);
        assert!(m[0].labels().msi && !m[0].labels().hypermut);
        assert_eq!(resolve(Path::new("/data/m.csv"), &m[0]), Path::new("/data/bags/a.msib"));
        assert_eq!(resolve(Path::new("/data/m.csv"), &m[1]), Path::new("/abs/b.msib"));
    }
}
