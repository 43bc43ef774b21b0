//! RFC 4180 reading and writing shared by dictionaries and data files.

use csv::{QuoteStyle, ReaderBuilder, StringRecord, Terminator, WriterBuilder};

/// Validates UTF-8 and strips a leading byte-order mark.
pub(crate) fn decode(raw: &[u8]) -> Result<&str, std::str::Utf8Error> {
    let raw = raw.strip_prefix(b"\xEF\xBB\xBF").unwrap_or(raw);
    std::str::from_utf8(raw)
}

/// Reads every record, header included. Ragged rows are returned as-is so
/// callers can report them. Blank lines are skipped.
pub(crate) fn records(text: &str) -> impl Iterator<Item = StringRecord> + '_ {
    ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes())
        .into_records()
        // Input is known-valid UTF-8 and the reader is flexible, so record
        // errors cannot occur; a failure here would be an I/O error on a slice.
        .map_while(Result::ok)
}

pub(crate) fn writer() -> csv::Writer<Vec<u8>> {
    WriterBuilder::new()
        .terminator(Terminator::Any(b'\n'))
        .quote_style(QuoteStyle::Necessary)
        .from_writer(Vec::new())
}

pub(crate) fn finish(w: csv::Writer<Vec<u8>>) -> Vec<u8> {
    w.into_inner().expect("writing to a Vec cannot fail")
}
