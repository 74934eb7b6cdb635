//! Tokenization hook.
//!
//! The built-in segmenter lowercases and splits on Unicode whitespace. Real
//! Vietnamese word segmentation is delegated to an external command that
//! reads one raw text per line on stdin and writes one line of
//! space-separated tokens per input line on stdout.

use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Segmenter {
    /// Lowercase, then split on Unicode whitespace.
    #[default]
    Default,
    /// External program invoked once per batch.
    External { program: String, args: Vec<String> },
}

impl Segmenter {
    /// Parses `default` or `cmd:<program> [args...]`.
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        if spec.eq_ignore_ascii_case("default") {
            return Ok(Segmenter::Default);
        }
        if let Some(cmd) = spec.strip_prefix("cmd:") {
            let mut parts = cmd.split_whitespace().map(str::to_owned);
            let program = parts
                .next()
                .ok_or_else(|| Error::Parameter("empty segmenter command".into()))?;
            return Ok(Segmenter::External { program, args: parts.collect() });
        }
        Err(Error::Parameter(format!(
            "unknown segmenter `{spec}` (expected `default` or `cmd:<program>`)"
        )))
    }

    /// Canonical string form, the inverse of [`Segmenter::parse`].
    pub fn spec(&self) -> String {
        match self {
            Segmenter::Default => "default".to_owned(),
            Segmenter::External { program, args } => {
                let mut s = format!("cmd:{program}");
                for a in args {
                    s.push(' ');
                    s.push_str(a);
                }
                s
            }
        }
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<String>> {
        match self {
            Segmenter::Default => Ok(default_tokens(text)),
            Segmenter::External { .. } => {
                Ok(self.tokenize_batch(&[text])?.pop().unwrap_or_default())
            }
        }
    }

    pub fn tokenize_batch<S: AsRef<str>>(&self, texts: &[S]) -> Result<Vec<Vec<String>>> {
        match self {
            Segmenter::Default => Ok(texts.iter().map(|t| default_tokens(t.as_ref())).collect()),
            Segmenter::External { program, args } => run_external(program, args, texts),
        }
    }
}

/// Free-function form of [`Segmenter::tokenize`].
pub fn tokenize(text: &str, segmenter: &Segmenter) -> Result<Vec<String>> {
    segmenter.tokenize(text)
}

fn default_tokens(text: &str) -> Vec<String> {
    text.to_lowercase().split_whitespace().map(str::to_owned).collect()
}

fn run_external<S: AsRef<str>>(
    program: &str,
    args: &[String],
    texts: &[S],
) -> Result<Vec<Vec<String>>> {
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| Error::Segmentation(format!("cannot start `{program}`: {e}")))?;

    // one record per line, so embedded line breaks are flattened
    let mut payload = String::new();
    for t in texts {
        for c in t.as_ref().chars() {
            payload.push(if c == '\n' || c == '\r' { ' ' } else { c });
        }
        payload.push('\n');
    }
    let mut stdin = child.stdin.take().expect("stdin piped");
    let writer = std::thread::spawn(move || stdin.write_all(payload.as_bytes()));

    let stdout = child.stdout.take().expect("stdout piped");
    let mut out = Vec::with_capacity(texts.len());
    for line in BufReader::new(stdout).lines() {
        let line = line.map_err(|e| Error::Segmentation(format!("reading `{program}` output: {e}")))?;
        out.push(line.split(' ').filter(|t| !t.is_empty()).map(str::to_owned).collect());
    }
    let write_result = writer.join().expect("segmenter writer thread panicked");
    let output = child
        .wait_with_output()
        .map_err(|e| Error::Segmentation(format!("waiting for `{program}`: {e}")))?;
    if !output.status.success() {
        let stderr = String::from_utf8_lossy(&output.stderr);
        return Err(Error::Segmentation(format!(
            "`{program}` exited with {}: {}",
            output.status,
            stderr.trim()
        )));
    }
    write_result.map_err(|e| Error::Segmentation(format!("writing to `{program}`: {e}")))?;
    if out.len() != texts.len() {
        return Err(Error::Segmentation(format!(
            "`{program}` returned {} lines for {} inputs",
            out.len(),
            texts.len()
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_lowercases_and_splits() {
        let seg = Segmenter::Default;
        assert_eq!(seg.tokenize("Điều 5 Luật").unwrap(), vec!["điều", "5", "luật"]);
        assert!(seg.tokenize("").unwrap().is_empty());
        assert_eq!(seg.tokenize("  a\tb ").unwrap(), vec!["a", "b"]);
    }

    #[test]
    fn unicode_whitespace_counts() {
        let seg = Segmenter::Default;
        assert_eq!(seg.tokenize("a\u{00A0}b\u{2003}c").unwrap(), vec!["a", "b", "c"]);
    }

    #[test]
    fn parse_roundtrip() {
        for spec in ["default", "cmd:tr a-z A-Z"] {
            assert_eq!(Segmenter::parse(spec).unwrap().spec(), spec);
        }
        assert!(Segmenter::parse("pyvi").is_err());
        assert!(Segmenter::parse("cmd:").is_err());
    }

    #[cfg(unix)]
    #[test]
    fn external_command_per_line() {
        let seg = Segmenter::parse("cmd:tr a-z A-Z").unwrap();
        let got = seg.tokenize_batch(&["ab cd", "", "x\ny"]).unwrap();
        assert_eq!(got, vec![vec!["AB", "CD"], vec![], vec!["X", "Y"]]);
    }

    #[cfg(unix)]
    #[test]
    fn external_failure_carries_cause() {
        let seg = Segmenter::parse("cmd:sh -c exit_7_nonexistent_builtin").unwrap();
        let err = seg.tokenize("a").unwrap_err();
        assert!(matches!(err, Error::Segmentation(_)), "{err}");

        let seg = Segmenter::parse("cmd:/definitely/not/a/program").unwrap();
        let err = seg.tokenize("a").unwrap_err();
        assert!(err.to_string().contains("cannot start"), "{err}");
    }
}
