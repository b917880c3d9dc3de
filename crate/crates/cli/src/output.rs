use std::io::{self, Write};

use mechkb_service::ResultRow;
use serde::Serialize;

/// Pretty JSON followed by a newline.
pub fn write_json<W: Write, T: Serialize>(mut out: W, value: &T) -> io::Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()
}

#[derive(Serialize)]
struct SearchDocument<'a> {
    results: &'a [ResultRow],
}

pub const TSV_HEADER: &str =
    "rank\tscore\trelation_id\tclass\targ1\targ2\tconfidence\tdoc_id\tsentence_index\ttitle\turl\tsentence";

fn cell(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

pub fn write_results<W: Write>(mut out: W, rows: &[ResultRow], tsv: bool) -> io::Result<()> {
    if !tsv {
        return write_json(out, &SearchDocument { results: rows });
    }
    writeln!(out, "{TSV_HEADER}")?;
    for (rank, r) in rows.iter().enumerate() {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            rank + 1,
            r.score,
            r.relation_id,
            r.class.as_str(),
            cell(&r.arg1),
            cell(&r.arg2),
            r.confidence,
            cell(&r.doc_id),
            r.sentence_index,
            cell(&r.title),
            cell(&r.url),
            cell(&r.sentence),
        )?;
    }
    out.flush()
}
