use std::fmt;

/// 1-based line and column (in characters).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Position {
    pub line: usize,
    pub col: usize,
}

impl Position {
    pub fn new(line: usize, col: usize) -> Self {
        Self { line, col }
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DiagCode {
    UnknownSpecialToken,
    MisplacedToken,
    DuplicateEntityIndex,
    DuplicateSection,
    NonContiguousIndex,
    UnresolvedReference,
    UnclosedDialogue,
    NestedDialogue,
    EmptySection,
    MissingSection,
    SectionOrder,
    InvalidMarker,
    InvalidStyle,
    ShortCaptionTooLong,
    StrayText,
    /// Text that cannot be written canonically (raw newlines, tokens or
    /// indicator symbols inside plain text, untrimmed bodies).
    UnrepresentableText,
}

impl DiagCode {
    pub fn as_str(self) -> &'static str {
        match self {
            DiagCode::UnknownSpecialToken => "UnknownSpecialToken",
            DiagCode::MisplacedToken => "MisplacedToken",
            DiagCode::DuplicateEntityIndex => "DuplicateEntityIndex",
            DiagCode::DuplicateSection => "DuplicateSection",
            DiagCode::NonContiguousIndex => "NonContiguousIndex",
            DiagCode::UnresolvedReference => "UnresolvedReference",
            DiagCode::UnclosedDialogue => "UnclosedDialogue",
            DiagCode::NestedDialogue => "NestedDialogue",
            DiagCode::EmptySection => "EmptySection",
            DiagCode::MissingSection => "MissingSection",
            DiagCode::SectionOrder => "SectionOrder",
            DiagCode::InvalidMarker => "InvalidMarker",
            DiagCode::InvalidStyle => "InvalidStyle",
            DiagCode::ShortCaptionTooLong => "ShortCaptionTooLong",
            DiagCode::StrayText => "StrayText",
            DiagCode::UnrepresentableText => "UnrepresentableText",
        }
    }
}

impl fmt::Display for DiagCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Diagnostic {
    pub code: DiagCode,
    pub pos: Position,
    pub message: String,
}

impl Diagnostic {
    pub fn new(code: DiagCode, pos: Position, message: impl Into<String>) -> Self {
        Self { code, pos, message: message.into() }
    }

    /// `path:line:col: CODE message`
    pub fn render(&self, path: &str) -> String {
        format!("{}:{}", path, self)
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} {}", self.pos, self.code, self.message)
    }
}
