use crate::error::{Error, Result};

pub const DEFAULT_SOURCE_TEXT: &str = "Photo";

/// Target style description plus the text describing the unstyled content.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StylePrompt {
    style_text: String,
    source_text: String,
}

impl StylePrompt {
    pub fn new(style_text: impl Into<String>) -> Result<Self> {
        Self::with_source(style_text, DEFAULT_SOURCE_TEXT)
    }

    pub fn with_source(style_text: impl Into<String>, source_text: impl Into<String>) -> Result<Self> {
        let style_text = style_text.into();
        let source_text = source_text.into();
        if style_text.trim().is_empty() {
            return Err(Error::invalid("style text must not be empty"));
        }
        if source_text.trim().is_empty() {
            return Err(Error::invalid("source text must not be empty"));
        }
        Ok(Self {
            style_text,
            source_text,
        })
    }

    pub fn style_text(&self) -> &str {
        &self.style_text
    }

    pub fn source_text(&self) -> &str {
        &self.source_text
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blank_style_rejected() {
        assert!(StylePrompt::new("   ").is_err());
        let p = StylePrompt::new("Fire").unwrap();
        assert_eq!(p.source_text(), "Photo");
    }
}
