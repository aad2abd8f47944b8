//! Run outputs are staged in memory and written only once the whole run has
//! succeeded, so a failed run leaves no partial files behind.

use std::fs;
use std::path::{Path, PathBuf};

use crate::CliError;

#[derive(Debug, Default)]
pub struct OutputSet {
    files: Vec<(String, String)>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

impl OutputSet {
    pub fn add(&mut self, name: impl Into<String>, body: impl Into<String>) {
        self.files.push((name.into(), body.into()));
    }

    /// Writes every file to a temporary name in `dir`, then renames them into
    /// place. On failure the temporaries (and `dir`, if created here) are
    /// removed.
    pub fn commit(self, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
        let created = !dir.exists();
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut staged: Vec<(PathBuf, PathBuf)> = Vec::new();
        let result = (|| {
            for (name, body) in &self.files {
                let tmp = dir.join(format!(".{name}.tmp"));
                staged.push((tmp.clone(), dir.join(name)));
                fs::write(&tmp, body).map_err(io_err(&tmp))?;
            }
            for (tmp, dst) in &staged {
                fs::rename(tmp, dst).map_err(io_err(dst))?;
            }
            Ok(())
        })();
        if let Err(e) = result {
            for (tmp, _) in &staged {
                let _ = fs::remove_file(tmp);
            }
            if created {
                let _ = fs::remove_dir(dir);
            }
            return Err(e);
        }
        Ok(staged.into_iter().map(|(_, d)| d).collect())
    }
}
