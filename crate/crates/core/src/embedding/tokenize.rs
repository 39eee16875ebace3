use crate::corpus::CharSpan;

/// A normalized token and the character span of its stripped surface form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub span: CharSpan,
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '‘' | '’' | '“' | '”' | '«' | '»' | '…' | '—' | '–' | '¿' | '¡' | '·'
        )
}

/// Whitespace split, edge punctuation stripped, lowercased, empties dropped.
pub fn tokenize_with_offsets(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut chunk: Vec<char> = Vec::new();
    let mut chunk_start = 0;

    let mut flush = |chunk: &mut Vec<char>, start: usize| {
        let lead = chunk.iter().take_while(|c| is_punct(**c)).count();
        let trail = chunk[lead..].iter().rev().take_while(|c| is_punct(**c)).count();
        let core = &chunk[lead..chunk.len() - trail];
        if !core.is_empty() {
            let text: String = core.iter().collect::<String>().to_lowercase();
            tokens.push(Token {
                text,
                span: CharSpan::new(start + lead, start + lead + core.len()),
            });
        }
        chunk.clear();
    };

    for (i, c) in text.chars().enumerate() {
        if c.is_whitespace() {
            if !chunk.is_empty() {
                flush(&mut chunk, chunk_start);
            }
        } else {
            if chunk.is_empty() {
                chunk_start = i;
            }
            chunk.push(c);
        }
    }
    if !chunk.is_empty() {
        flush(&mut chunk, chunk_start);
    }
    tokens
}

pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_with_offsets(text)
        .into_iter()
        .map(|t| t.text)
        .collect()
}
