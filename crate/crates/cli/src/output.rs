use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use physaffect::eval::EvalError;
use physaffect::forest::ForestError;

pub const EXIT_INVALID: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

pub type CliResult<T> = Result<T, Failure>;

pub fn invalid(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_INVALID,
        error: error.into(),
    }
}

pub fn runtime(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_RUNTIME,
        error: error.into(),
    }
}

pub trait OrExit<T> {
    fn or_invalid(self, what: &str) -> CliResult<T>;
    fn or_runtime(self, what: &str) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> OrExit<T> for Result<T, E> {
    fn or_invalid(self, what: &str) -> CliResult<T> {
        self.map_err(|e| invalid(e.into().context(what.to_string())))
    }

    fn or_runtime(self, what: &str) -> CliResult<T> {
        self.map_err(|e| runtime(e.into().context(what.to_string())))
    }
}

fn forest_code(e: &ForestError) -> u8 {
    match e {
        ForestError::EmptyNode | ForestError::NoInBagRecord => EXIT_RUNTIME,
        _ => EXIT_INVALID,
    }
}

/// Bad data (single class, bad ratings, too few subjects) is a validation
/// failure; anything else raised while computing is a runtime failure.
pub fn eval_failure(e: EvalError) -> Failure {
    let code = match &e {
        EvalError::Forest(f) => forest_code(f),
        EvalError::Label(_) | EvalError::Protocol(_) | EvalError::InvalidK { .. } => EXIT_INVALID,
        _ => EXIT_RUNTIME,
    };
    Failure {
        code,
        error: e.into(),
    }
}

pub fn forest_failure(e: ForestError) -> Failure {
    Failure {
        code: forest_code(&e),
        error: e.into(),
    }
}

fn parent_of(path: &Path) -> CliResult<PathBuf> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).or_runtime(&format!("creating {}", parent.display()))?;
    Ok(parent)
}

/// Writes through a temp file in the target directory and renames it into
/// place, so a failed run never leaves a partial file behind.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut fs::File) -> anyhow::Result<()>) -> CliResult<()> {
    let parent = parent_of(path)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&parent).or_runtime(&format!("creating temp file in {}", parent.display()))?;
    fill(tmp.as_file_mut()).map_err(runtime)?;
    tmp.as_file_mut().sync_all().or_runtime("flushing output")?;
    tmp.persist(path)
        .map_err(|e| anyhow!(e.error))
        .or_runtime(&format!("writing {}", path.display()))?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    write_atomic(path, |f| {
        f.write_all(text.as_bytes())
            .with_context(|| format!("writing {}", path.display()))
    })
}

/// Builds a directory next to `out` and moves it into place when `fill`
/// succeeds. `out` must be absent or an empty directory.
pub fn write_dir_atomic(out: &Path, fill: impl FnOnce(&Path) -> CliResult<()>) -> CliResult<()> {
    if out.exists() {
        let empty = out.is_dir()
            && fs::read_dir(out)
                .or_invalid(&format!("reading {}", out.display()))?
                .next()
                .is_none();
        if !empty {
            return Err(invalid(anyhow!("{} exists and is not an empty directory", out.display())));
        }
    }
    let parent = parent_of(out)?;
    let tmp = tempfile::Builder::new()
        .prefix(".physaffect-")
        .tempdir_in(&parent)
        .or_runtime(&format!("creating temp dir in {}", parent.display()))?;
    fill(tmp.path())?;
    if out.exists() {
        fs::remove_dir(out).or_runtime(&format!("replacing {}", out.display()))?;
    }
    let staged = tmp.keep();
    fs::rename(&staged, out).map_err(|e| {
        let _ = fs::remove_dir_all(&staged);
        runtime(anyhow!(e).context(format!("moving output into {}", out.display())))
    })
}
