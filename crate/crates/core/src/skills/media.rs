use std::fmt;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MediaKind {
    Pdf,
    Docx,
    Latex,
    Audio,
    Image,
    Video,
    Pptx,
}

impl MediaKind {
    pub const ALL: [MediaKind; 7] = [
        MediaKind::Pdf,
        MediaKind::Docx,
        MediaKind::Latex,
        MediaKind::Audio,
        MediaKind::Image,
        MediaKind::Video,
        MediaKind::Pptx,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MediaKind::Pdf => "pdf",
            MediaKind::Docx => "docx",
            MediaKind::Latex => "latex",
            MediaKind::Audio => "audio",
            MediaKind::Image => "image",
            MediaKind::Video => "video",
            MediaKind::Pptx => "pptx",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for MediaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Turns a media file into text, typically by calling an external model.
pub trait MediaProvider: Send + Sync {
    /// `shown` is the path as it should appear in output.
    fn parse(&self, path: &Path, shown: &str, kind: MediaKind) -> Result<String, String>;
}

/// Placeholder provider that never reads the file.
#[derive(Debug, Default, Clone, Copy)]
pub struct StubMediaProvider;

impl MediaProvider for StubMediaProvider {
    fn parse(&self, _path: &Path, shown: &str, kind: MediaKind) -> Result<String, String> {
        Ok(format!("[stub {kind}: {shown}]"))
    }
}
