//! The 28-symbol vocabulary: `a`..`z`, the start marker and the end marker.

use crate::error::{Error, Result};

pub const LETTERS: usize = 26;
pub const START: usize = 26;
pub const END: usize = 27;
pub const SIZE: usize = 28;

pub const START_TOKEN: &str = "<s>";
pub const END_TOKEN: &str = "</s>";

/// Index of a lowercase letter.
pub fn index_of(c: char) -> Result<usize> {
    if c.is_ascii_lowercase() {
        Ok((c as u8 - b'a') as usize)
    } else {
        Err(Error::Vocabulary(format!("symbol {c:?} is not in a-z")))
    }
}

/// Printable form of an index.
pub fn token(i: usize) -> Result<String> {
    match i {
        0..=25 => Ok(((b'a' + i as u8) as char).to_string()),
        START => Ok(START_TOKEN.to_string()),
        END => Ok(END_TOKEN.to_string()),
        _ => Err(Error::Vocabulary(format!("index {i} outside vocabulary of {SIZE}"))),
    }
}

pub fn encode(w: &str) -> Result<Vec<usize>> {
    w.chars().map(index_of).collect()
}

/// Letters only; markers are rejected.
pub fn decode(indices: &[usize]) -> Result<String> {
    indices
        .iter()
        .map(|&i| {
            if i < LETTERS {
                Ok((b'a' + i as u8) as char)
            } else {
                Err(Error::Vocabulary(format!("index {i} is not a letter")))
            }
        })
        .collect()
}

/// Renders any index sequence, markers included.
pub fn render(indices: &[usize]) -> String {
    indices
        .iter()
        .map(|&i| token(i).unwrap_or_else(|_| "?".into()))
        .collect()
}

/// Encoder input: `<s> w </s>`.
pub fn encoder_input(w: &str) -> Result<Vec<usize>> {
    let mut v = Vec::with_capacity(w.len() + 2);
    v.push(START);
    v.extend(encode(w)?);
    v.push(END);
    Ok(v)
}

/// Decoder target: `y </s>`.
pub fn decoder_target(y: &str) -> Result<Vec<usize>> {
    let mut v = encode(y)?;
    v.push(END);
    Ok(v)
}

pub fn check_index(i: usize) -> Result<()> {
    if i < SIZE {
        Ok(())
    } else {
        Err(Error::Vocabulary(format!("index {i} outside vocabulary of {SIZE}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bijection() {
        let toks: std::collections::HashSet<String> = (0..SIZE).map(|i| token(i).unwrap()).collect();
        assert_eq!(toks.len(), SIZE);
        for c in 'a'..='z' {
            assert_eq!(token(index_of(c).unwrap()).unwrap(), c.to_string());
        }
        assert!(index_of('A').is_err());
        assert!(token(SIZE).is_err());
    }

    #[test]
    fn markers() {
        assert_eq!(encoder_input("ab").unwrap(), vec![START, 0, 1, END]);
        assert_eq!(decoder_target("").unwrap(), vec![END]);
        assert_eq!(render(&[START, 2, END]), "<s>c</s>");
    }
}
