//! A second, independent implementation of the mixed CJK/whitespace
//! tokenizer, used only to feed the BLEU oracle with realistic text.

fn is_cjk(c: char) -> bool {
    let u = c as u32;
    (0x4E00..=0x9FFF).contains(&u) || (0x3400..=0x4DBF).contains(&u) || (0x3000..=0x303F).contains(&u)
}

/// Splits CJK characters into single tokens and everything else on whitespace.
pub fn mixed(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_whitespace() {
            if !word.is_empty() {
                out.push(word.clone());
                word.clear();
            }
        } else if is_cjk(c) {
            if !word.is_empty() {
                out.push(word.clone());
                word.clear();
            }
            out.push(c.to_string());
        } else {
            word.push(c);
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}
