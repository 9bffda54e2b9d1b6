//! Parsers for the small string specs used on the command line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use simrecon::synthetic::{FaceModel, FaceModelSpec};
use simrecon::{ImageTensor, SyntheticEmbedder, TargetId};

use super::CliError;

pub const DEFAULT_EMBED_DIM: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmbedderSpec {
    pub seed: u64,
    pub dim: usize,
    pub flip: bool,
}

impl EmbedderSpec {
    pub fn build(&self, dims: (u32, u32, u32)) -> SyntheticEmbedder {
        SyntheticEmbedder::new(self.seed, self.dim, dims, self.flip)
    }
}

/// `<seed>[:<dim>[:flip]]`
pub fn parse_embedder(s: &str) -> Result<EmbedderSpec, CliError> {
    let bad = || CliError::usage(format!("bad embedder spec {s:?}, expected <seed>[:<dim>[:flip]]"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.is_empty() || parts.len() > 3 {
        return Err(bad());
    }
    let seed = parts[0].parse().map_err(|_| bad())?;
    let dim = match parts.get(1) {
        Some(d) => d.parse().ok().filter(|&d: &usize| d > 0).ok_or_else(bad)?,
        None => DEFAULT_EMBED_DIM,
    };
    let flip = match parts.get(2) {
        Some(&"flip") => true,
        Some(_) => return Err(bad()),
        None => false,
    };
    Ok(EmbedderSpec { seed, dim, flip })
}

#[derive(Clone, Debug, PartialEq)]
pub enum OracleSpec {
    Builtin(EmbedderSpec),
    Remote(String),
}

pub fn parse_oracle(s: &str) -> Result<OracleSpec, CliError> {
    if let Some(rest) = s.strip_prefix("builtin:") {
        Ok(OracleSpec::Builtin(parse_embedder(rest)?))
    } else if let Some(addr) = s.strip_prefix("remote:") {
        if addr.is_empty() {
            return Err(CliError::usage("remote oracle needs an address"));
        }
        Ok(OracleSpec::Remote(addr.to_string()))
    } else {
        Err(CliError::usage(format!(
            "bad oracle spec {s:?}, expected builtin:<seed>[:<dim>[:flip]] or remote:<address>"
        )))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum EnrollSpec {
    Dir(PathBuf),
    Synthetic { count: u64, seed: u64 },
}

pub fn parse_enroll(s: &str) -> Result<EnrollSpec, CliError> {
    let Some(rest) = s.strip_prefix("synthetic:") else {
        return Ok(EnrollSpec::Dir(PathBuf::from(s)));
    };
    let bad = || {
        CliError::usage(format!(
            "bad enrollment spec {s:?}, expected synthetic:<count>[:<corpus-seed>]"
        ))
    };
    let mut it = rest.split(':');
    let count = it
        .next()
        .and_then(|c| c.parse().ok())
        .filter(|&c: &u64| c > 0)
        .ok_or_else(bad)?;
    let seed = match it.next() {
        Some(v) => v.parse().map_err(|_| bad())?,
        None => 0,
    };
    if it.next().is_some() {
        return Err(bad());
    }
    Ok(EnrollSpec::Synthetic { count, seed })
}

/// PNG files in `dir`, sorted by name.
pub fn png_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::input(format!("cannot read {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

/// Load `path`, resized to `dims` when given.
pub fn load_image(path: &Path, dims: Option<(u32, u32, u32)>) -> Result<ImageTensor, CliError> {
    let (resize, channels) = match dims {
        Some((w, h, c)) => (Some((w, h)), c),
        None => (None, 3),
    };
    ImageTensor::load(path, resize, channels).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Enrolled images keyed by id. Without `dims`, directory images take the
/// size of the first file and synthetic ones the default 16x16x3.
pub fn load_enrollment(
    spec: &EnrollSpec,
    dims: Option<(u32, u32, u32)>,
) -> Result<BTreeMap<TargetId, ImageTensor>, CliError> {
    let mut out = BTreeMap::new();
    match spec {
        EnrollSpec::Dir(dir) => {
            let mut dims = dims;
            for path in png_files(dir)? {
                let img = load_image(&path, dims)?;
                dims.get_or_insert(img.dims());
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
                let id =
                    TargetId::new(stem).map_err(|_| CliError::input(format!("{}: empty target id", path.display())))?;
                out.insert(id, img);
            }
            if out.is_empty() {
                return Err(CliError::input(format!("no PNG images in {}", dir.display())));
            }
        }
        EnrollSpec::Synthetic { count, seed } => {
            let (width, height, channels) = dims.unwrap_or((16, 16, 3));
            let model = FaceModel::new(FaceModelSpec {
                width,
                height,
                channels,
                seed: *seed,
                ..Default::default()
            });
            for i in 0..*count {
                out.insert(
                    TargetId::new(format!("heldout-{i}")).expect("non-empty"),
                    model.heldout(i),
                );
            }
        }
    }
    Ok(out)
}
