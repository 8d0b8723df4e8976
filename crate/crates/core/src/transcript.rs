//! JSON-lines transcripts: one utterance per line, suited to golden files.

use std::io::{self, BufRead, Write};

use crate::utterance::Utterance;

pub fn write_jsonl<W: Write>(mut out: W, utterances: &[Utterance]) -> io::Result<()> {
    for u in utterances {
        serde_json::to_writer(&mut out, u)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn to_jsonl(utterances: &[Utterance]) -> String {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, utterances).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("json is utf-8")
}

pub fn read_jsonl<R: BufRead>(input: R) -> io::Result<Vec<Utterance>> {
    input
        .lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|line| {
            let line = line?;
            serde_json::from_str(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
        })
        .collect()
}
