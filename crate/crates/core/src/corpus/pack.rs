use super::{CorpusError, Result};

/// The part of one source document that lies inside a packed sequence,
/// as a half-open token range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DocSpan {
    pub start: usize,
    pub end: usize,
    pub doc: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedSequence {
    pub tokens: Vec<u32>,
    pub doc_spans: Vec<DocSpan>,
}

/// Packs documents greedily, in input order, into sequences of exactly
/// `seq_len` tokens with one `eod` token after every document.
///
/// The token stream `doc₀ eod doc₁ eod …` is cut into consecutive windows,
/// so a document (or its trailing `eod`) that does not fit is continued in
/// the next sequence. The last sequence is right-padded with `pad`.
pub fn pack_documents(
    docs: &[Vec<u32>],
    seq_len: usize,
    eod: u32,
    pad: u32,
) -> Result<Vec<PackedSequence>> {
    if seq_len < 2 {
        return Err(CorpusError::Packing(format!(
            "sequence length must be >= 2, got {seq_len}"
        )));
    }
    if eod == pad {
        return Err(CorpusError::Packing(
            "eod and pad tokens must differ".to_string(),
        ));
    }
    for (i, doc) in docs.iter().enumerate() {
        if doc.is_empty() {
            return Err(CorpusError::Packing(format!("document {i} is empty")));
        }
        if doc.contains(&eod) {
            return Err(CorpusError::Packing(format!(
                "document {i} contains the eod token {eod}"
            )));
        }
        if doc.contains(&pad) {
            return Err(CorpusError::Packing(format!(
                "document {i} contains the pad token {pad}"
            )));
        }
    }

    let mut out = Vec::new();
    let mut cur = PackedSequence {
        tokens: Vec::with_capacity(seq_len),
        doc_spans: Vec::new(),
    };
    let flush = |cur: &mut PackedSequence, out: &mut Vec<PackedSequence>| {
        let done = std::mem::replace(
            cur,
            PackedSequence {
                tokens: Vec::with_capacity(seq_len),
                doc_spans: Vec::new(),
            },
        );
        out.push(done);
    };

    for (i, doc) in docs.iter().enumerate() {
        let mut rest: &[u32] = doc;
        while !rest.is_empty() {
            if cur.tokens.len() == seq_len {
                flush(&mut cur, &mut out);
            }
            let take = rest.len().min(seq_len - cur.tokens.len());
            let start = cur.tokens.len();
            cur.tokens.extend_from_slice(&rest[..take]);
            cur.doc_spans.push(DocSpan {
                start,
                end: start + take,
                doc: i,
            });
            rest = &rest[take..];
        }
        if cur.tokens.len() == seq_len {
            flush(&mut cur, &mut out);
        }
        cur.tokens.push(eod);
    }
    if !cur.tokens.is_empty() {
        cur.tokens.resize(seq_len, pad);
        flush(&mut cur, &mut out);
    }
    Ok(out)
}
