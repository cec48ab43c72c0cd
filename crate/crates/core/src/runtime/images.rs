//! Runtime image naming and the build-or-reuse decision.
//!
//! Every runtime image carries two tags. The hash tag names the exact
//! build context; the generic tag names the latest build for a platform
//! version and base image:
//!
//! ```text
//! runtime:3c9d1f...              (MD5 of the build context)
//! runtime:oh_v0.9.3_ubuntu_tag_22.04
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;

use md5::{Digest, Md5};
use serde::{Deserialize, Serialize};

pub const IMAGE_REPO: &str = "runtime";

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("cannot read build context {path}: {source}")]
    BuildContext {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid base image reference {0:?}")]
    BadReference(String),
    #[error("runtime unavailable: {0}")]
    RuntimeUnavailable(String),
    #[error("registry file {path}: {message}")]
    Registry { path: String, message: String },
}

/// Build context as relative path to file bytes.
pub type BuildContext = BTreeMap<String, Vec<u8>>;

/// Reads every regular file below `dir`, keyed by `/`-separated relative path.
pub fn read_build_context(dir: &Path) -> Result<BuildContext, ImageError> {
    let mut ctx = BuildContext::new();
    for entry in walkdir::WalkDir::new(dir) {
        let entry = entry.map_err(|e| ImageError::BuildContext {
            path: dir.display().to_string(),
            source: e.into(),
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(dir)
            .expect("walkdir yields children of its root")
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        let bytes = std::fs::read(entry.path()).map_err(|source| ImageError::BuildContext {
            path: entry.path().display().to_string(),
            source,
        })?;
        ctx.insert(rel, bytes);
    }
    Ok(ctx)
}

/// MD5 over entries sorted by path, each as `path NUL content NUL`.
pub fn compute_build_hash(ctx: &BuildContext) -> String {
    let mut h = Md5::new();
    for (path, content) in ctx {
        h.update(path.as_bytes());
        h.update([0u8]);
        h.update(content);
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaseImage {
    pub name: String,
    pub tag: String,
}

impl BaseImage {
    /// Parses `name[:tag]`; the tag defaults to `latest`. A colon inside a
    /// registry host (`host:5000/img`) is not mistaken for a tag.
    pub fn parse(reference: &str) -> Result<Self, ImageError> {
        let r = reference.trim();
        if r.is_empty() || r.chars().any(char::is_whitespace) {
            return Err(ImageError::BadReference(reference.into()));
        }
        let last_slash = r.rfind('/').map_or(0, |i| i + 1);
        let (name, tag) = match r[last_slash..].rfind(':') {
            Some(i) => (&r[..last_slash + i], &r[last_slash + i + 1..]),
            None => (r, "latest"),
        };
        if name.is_empty() || tag.is_empty() || name.ends_with('/') {
            return Err(ImageError::BadReference(reference.into()));
        }
        Ok(BaseImage {
            name: name.into(),
            tag: tag.into(),
        })
    }
}

fn tag_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-') { c } else { '_' })
        .collect()
}

pub fn generic_tag(base: &BaseImage, platform_version: &str) -> String {
    format!(
        "{IMAGE_REPO}:oh_v{}_{}_tag_{}",
        tag_safe(platform_version),
        tag_safe(&base.name),
        tag_safe(&base.tag)
    )
}

pub fn hash_tag(source_digest: &str) -> String {
    format!("{IMAGE_REPO}:{source_digest}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuntimeImageRef {
    pub hash_tag: String,
    pub generic_tag: String,
    pub source_digest: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuildDecision {
    Reuse,
    RebuildFromGeneric,
    BuildFromScratch,
}

/// The reuse rules, as a total function of which tags exist.
pub fn decide(hash_tag_exists: bool, generic_tag_exists: bool) -> BuildDecision {
    match (hash_tag_exists, generic_tag_exists) {
        (true, _) => BuildDecision::Reuse,
        (false, true) => BuildDecision::RebuildFromGeneric,
        (false, false) => BuildDecision::BuildFromScratch,
    }
}

/// Where images live and how they get built.
pub trait ImageRegistry {
    fn exists(&mut self, tag: &str) -> Result<bool, ImageError>;
    /// Builds from `from` with the given context and applies every tag.
    fn build(&mut self, from: &str, ctx: &BuildContext, tags: &[String]) -> Result<(), ImageError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildRecord {
    pub from: String,
    pub tags: Vec<String>,
}

/// Registry that only records decisions. Its contents can be persisted as
/// JSON so that repeated dry runs see earlier builds.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DryRunRegistry {
    pub tags: BTreeSet<String>,
    pub builds: Vec<BuildRecord>,
    #[serde(skip)]
    path: Option<PathBuf>,
}

impl DryRunRegistry {
    pub fn with_tags<I: IntoIterator<Item = S>, S: Into<String>>(tags: I) -> Self {
        DryRunRegistry {
            tags: tags.into_iter().map(Into::into).collect(),
            ..Default::default()
        }
    }

    /// Loads `path`, or starts empty when it does not exist yet.
    pub fn load(path: &Path) -> Result<Self, ImageError> {
        let mut reg: DryRunRegistry = match std::fs::read_to_string(path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| ImageError::Registry {
                path: path.display().to_string(),
                message: e.to_string(),
            })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => DryRunRegistry::default(),
            Err(e) => {
                return Err(ImageError::Registry {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })
            }
        };
        reg.path = Some(path.to_path_buf());
        Ok(reg)
    }

    fn save(&self) -> Result<(), ImageError> {
        let Some(path) = &self.path else { return Ok(()) };
        let text = serde_json::to_string_pretty(self).expect("registry serializes");
        std::fs::write(path, text + "\n").map_err(|e| ImageError::Registry {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

impl ImageRegistry for DryRunRegistry {
    fn exists(&mut self, tag: &str) -> Result<bool, ImageError> {
        Ok(self.tags.contains(tag))
    }

    fn build(&mut self, from: &str, _ctx: &BuildContext, tags: &[String]) -> Result<(), ImageError> {
        self.tags.extend(tags.iter().cloned());
        self.builds.push(BuildRecord {
            from: from.into(),
            tags: tags.to_vec(),
        });
        self.save()
    }
}

/// Registry backed by an external container engine binary such as `docker`.
#[derive(Debug, Clone)]
pub struct EngineRegistry {
    pub binary: String,
}

impl EngineRegistry {
    pub fn new(binary: impl Into<String>) -> Self {
        EngineRegistry { binary: binary.into() }
    }

    fn run(&self, args: &[&str]) -> Result<std::process::Output, ImageError> {
        Command::new(&self.binary)
            .args(args)
            .output()
            .map_err(|e| ImageError::RuntimeUnavailable(format!("{}: {e}", self.binary)))
    }
}

impl ImageRegistry for EngineRegistry {
    fn exists(&mut self, tag: &str) -> Result<bool, ImageError> {
        Ok(self.run(&["image", "inspect", tag])?.status.success())
    }

    fn build(&mut self, from: &str, ctx: &BuildContext, tags: &[String]) -> Result<(), ImageError> {
        let dir = tempfile::tempdir().map_err(|e| ImageError::RuntimeUnavailable(e.to_string()))?;
        for (rel, bytes) in ctx {
            let path = dir.path().join(rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| ImageError::RuntimeUnavailable(e.to_string()))?;
            }
            std::fs::write(&path, bytes).map_err(|e| ImageError::RuntimeUnavailable(e.to_string()))?;
        }
        let base_arg = format!("BASE_IMAGE={from}");
        let mut args = vec!["build", "--build-arg", base_arg.as_str()];
        for t in tags {
            args.push("-t");
            args.push(t);
        }
        let ctx_dir = dir.path().display().to_string();
        args.push(&ctx_dir);
        let out = self.run(&args)?;
        if out.status.success() {
            Ok(())
        } else {
            Err(ImageError::RuntimeUnavailable(format!(
                "{} build failed: {}",
                self.binary,
                String::from_utf8_lossy(&out.stderr).trim()
            )))
        }
    }
}

/// Picks the image for `base_image`, building it if needed. A build always
/// applies both tags, so the generic tag follows the latest build.
pub fn resolve_runtime_image(
    base_image: &str,
    platform_version: &str,
    ctx: &BuildContext,
    registry: &mut dyn ImageRegistry,
) -> Result<(RuntimeImageRef, BuildDecision), ImageError> {
    let base = BaseImage::parse(base_image)?;
    let digest = compute_build_hash(ctx);
    let image = RuntimeImageRef {
        hash_tag: hash_tag(&digest),
        generic_tag: generic_tag(&base, platform_version),
        source_digest: digest,
    };
    let decision = decide(registry.exists(&image.hash_tag)?, registry.exists(&image.generic_tag)?);
    let tags = [image.hash_tag.clone(), image.generic_tag.clone()];
    match decision {
        BuildDecision::Reuse => {}
        BuildDecision::RebuildFromGeneric => registry.build(&image.generic_tag, ctx, &tags)?,
        BuildDecision::BuildFromScratch => {
            registry.build(&format!("{}:{}", base.name, base.tag), ctx, &tags)?
        }
    }
    tracing::info!(hash_tag = %image.hash_tag, generic_tag = %image.generic_tag, ?decision, "resolved runtime image");
    Ok((image, decision))
}
