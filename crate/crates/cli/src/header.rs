//! Configuration header embedded as `#` comments in every output file.
//!
//! The header records the tool version, every effective setting (defaults
//! included) and a command line that regenerates the file.

use std::fmt::Display;

pub struct Header {
    subcommand: Vec<String>,
    settings: Vec<(String, Option<String>)>,
}

/// Quotes `s` for a POSIX shell when it contains anything unusual.
fn shell_quote(s: &str) -> String {
    let plain = !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || "-_./,:=+@%".contains(c));
    if plain {
        s.to_string()
    } else {
        format!("'{}'", s.replace('\'', r"'\''"))
    }
}

impl Header {
    pub fn new(subcommand: &[&str]) -> Self {
        Header {
            subcommand: subcommand.iter().map(|s| s.to_string()).collect(),
            settings: Vec::new(),
        }
    }

    /// A valued option, written as `--name value`.
    pub fn opt(&mut self, name: &str, value: impl Display) {
        self.settings
            .push((name.to_string(), Some(value.to_string())));
    }

    /// A floating-point option in shortest round-trip notation (`1e-9`).
    pub fn num(&mut self, name: &str, value: f64) {
        self.opt(name, format!("{value:?}"));
    }

    /// A switch, recorded only when set.
    pub fn flag(&mut self, name: &str, on: bool) {
        if on {
            self.settings.push((name.to_string(), None));
        }
    }

    pub fn render(&self) -> String {
        let mut argv = vec!["clipper".to_string()];
        argv.extend(self.subcommand.iter().cloned());
        for (name, value) in &self.settings {
            argv.push(format!("--{name}"));
            if let Some(v) = value {
                argv.push(shell_quote(v));
            }
        }
        let mut s = format!(
            "# clipper {}\n# command: {}\n",
            env!("CARGO_PKG_VERSION"),
            argv.join(" ")
        );
        for (name, value) in &self.settings {
            match value {
                Some(v) => s.push_str(&format!("# {name}={v}\n")),
                None => s.push_str(&format!("# {name}\n")),
            }
        }
        s
    }
}
