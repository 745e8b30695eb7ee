use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cordseg::pipeline::{parse_stem, SliceId, LABEL_EXT};

use crate::error::{CliError, Result};

/// Label files under `dir`, searched recursively and keyed by slice id.
/// With `rater`, only `<stem>_r<rater>` files count; without, only files
/// lacking a rater suffix.
pub fn label_files(dir: &Path, rater: Option<u32>) -> Result<BTreeMap<SliceId, PathBuf>> {
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("{} is not a directory", dir.display())));
    }
    let mut found = BTreeMap::new();
    visit(dir, rater, &mut found)?;
    Ok(found)
}

fn visit(dir: &Path, rater: Option<u32>, found: &mut BTreeMap<SliceId, PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let p = entry.map_err(|e| CliError::io(dir, e))?.path();
        if p.is_dir() {
            visit(&p, rater, found)?;
            continue;
        }
        if !p.extension().is_some_and(|e| e == LABEL_EXT) {
            continue;
        }
        let Some((id, r)) = p.file_stem().and_then(|s| s.to_str()).and_then(parse_stem) else {
            continue;
        };
        if r != rater {
            continue;
        }
        if let Some(prev) = found.insert(id, p.clone()) {
            return Err(CliError::Usage(format!(
                "{} and {} hold labels for the same slice",
                prev.display(),
                p.display()
            )));
        }
    }
    Ok(())
}
