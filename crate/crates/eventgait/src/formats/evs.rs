//! Event streams on disk.
//!
//! Binary `EVS1`: magic `"EVS1"`, `u16` width, `u16` height, `u64` window
//! start, `u64` window length, `u64` count, then `count` 16-byte records
//! `{u16 x, u16 y, u64 t, i8 p, 3 zero pad bytes}`. Timestamps are absolute
//! microseconds.
//!
//! CSV: a metadata comment `# width=W height=H t_start=S duration=T`, the
//! header `x,y,t,p`, then one event per line.

use std::fmt::Write as _;
use std::path::Path;

use eventgait_core::event::{Event, EventStream, Polarity, Window};

use super::ByteReader;
use crate::error::{read_file, write_file, Error, Result};

pub const MAGIC: &[u8; 4] = b"EVS1";
pub const HEADER_LEN: usize = 32;
pub const RECORD_LEN: usize = 16;

pub fn encode(stream: &EventStream) -> Vec<u8> {
    let w = stream.window();
    let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * stream.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&stream.width().to_le_bytes());
    out.extend_from_slice(&stream.height().to_le_bytes());
    out.extend_from_slice(&w.start.to_le_bytes());
    out.extend_from_slice(&w.len.to_le_bytes());
    out.extend_from_slice(&(stream.len() as u64).to_le_bytes());
    for e in stream.events() {
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.extend_from_slice(&e.t.to_le_bytes());
        out.push(e.p.sign() as u8);
        out.extend_from_slice(&[0; 3]);
    }
    out
}

struct Checker {
    width: u16,
    height: u16,
    window: Window,
    prev_t: Option<u64>,
}

impl Checker {
    fn new(width: u16, height: u16, start: u64, len: u64, at: u64) -> Result<Self> {
        if start.checked_add(len).is_none() {
            return Err(Error::format(at, "window end overflows u64"));
        }
        Ok(Self {
            width,
            height,
            window: Window::new(start, len),
            prev_t: None,
        })
    }

    fn check(&mut self, i: usize, at: u64, x: u16, y: u16, t: u64, p: i64) -> Result<Event> {
        let bad = |m: String| Err(Error::format(at, format!("record {i}: {m}")));
        let Some(p) = i8::try_from(p).ok().and_then(Polarity::from_sign) else {
            return bad(format!("polarity {p} is not +1 or -1"));
        };
        if x >= self.width || y >= self.height {
            return bad(format!("({x}, {y}) outside {}x{} sensor", self.width, self.height));
        }
        if !self.window.contains(t) {
            return bad(format!(
                "t={t} outside window [{}, {}]",
                self.window.start,
                self.window.end()
            ));
        }
        if let Some(prev) = self.prev_t.filter(|&prev| t < prev) {
            return bad(format!("t={t} decreases from previous t={prev}"));
        }
        self.prev_t = Some(t);
        Ok(Event::new(x, y, t, p))
    }

    fn finish(self, events: Vec<Event>) -> Result<EventStream> {
        Ok(EventStream::new(self.width, self.height, self.window, events)?)
    }
}

pub fn decode(bytes: &[u8]) -> Result<EventStream> {
    let mut r = ByteReader::new(bytes);
    r.magic(MAGIC)?;
    let width = r.u16("width")?;
    let height = r.u16("height")?;
    let start = r.u64("window start")?;
    let at = r.offset();
    let len = r.u64("window length")?;
    let mut checker = Checker::new(width, height, start, len, at)?;
    let at = r.offset();
    let count = r.u64("event count")?;
    let body = (bytes.len() - HEADER_LEN) as u64;
    if count.checked_mul(RECORD_LEN as u64) != Some(body) {
        return Err(Error::format(
            at,
            format!("count {count} does not match {body} bytes of records"),
        ));
    }
    let mut events = Vec::with_capacity(count as usize);
    for i in 0..count as usize {
        let at = r.offset();
        let x = r.u16("x")?;
        let y = r.u16("y")?;
        let t = r.u64("t")?;
        let p = r.array::<1>("p")?[0] as i8;
        let pad = r.array::<3>("padding")?;
        if pad != [0; 3] {
            return Err(Error::format(at + 13, format!("record {i}: non-zero padding")));
        }
        events.push(checker.check(i, at, x, y, t, p as i64)?);
    }
    r.finish()?;
    checker.finish(events)
}

pub fn encode_csv(stream: &EventStream) -> String {
    let w = stream.window();
    let mut out = format!(
        "# width={} height={} t_start={} duration={}\nx,y,t,p\n",
        stream.width(),
        stream.height(),
        w.start,
        w.len
    );
    for e in stream.events() {
        writeln!(out, "{},{},{},{}", e.x, e.y, e.t, e.p.sign()).expect("writing to a String");
    }
    out
}

fn parse_meta(line: &str) -> Option<[u64; 4]> {
    let mut out = [None; 4];
    for item in line.strip_prefix('#')?.split_whitespace() {
        let (key, value) = item.split_once('=')?;
        let slot = ["width", "height", "t_start", "duration"].iter().position(|k| *k == key)?;
        out[slot] = Some(value.parse().ok()?);
    }
    Some([out[0]?, out[1]?, out[2]?, out[3]?])
}

pub fn decode_csv(text: &str) -> Result<EventStream> {
    let mut offset = 0u64;
    let mut lines = text.split_inclusive('\n').map(|l| {
        let at = offset;
        offset += l.len() as u64;
        (at, l.trim_end_matches(['\r', '\n']))
    });
    let (at, meta) = lines.next().unwrap_or((0, ""));
    let Some([width, height, start, len]) = parse_meta(meta) else {
        return Err(Error::format(
            at,
            "expected metadata line '# width=W height=H t_start=S duration=T'",
        ));
    };
    let (Ok(width), Ok(height)) = (u16::try_from(width), u16::try_from(height)) else {
        return Err(Error::format(at, "sensor size exceeds 65535"));
    };
    let mut checker = Checker::new(width, height, start, len, at)?;
    match lines.next() {
        Some((_, h)) if h.replace(' ', "") == "x,y,t,p" => {}
        other => return Err(Error::format(other.map_or(offset, |o| o.0), "expected header 'x,y,t,p'")),
    }
    let mut events = Vec::new();
    for (at, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let i = events.len();
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed = match fields.as_slice() {
            [x, y, t, p] => (|| Some((x.parse().ok()?, y.parse().ok()?, t.parse().ok()?, p.parse().ok()?)))(),
            _ => None,
        };
        let Some((x, y, t, p)) = parsed else {
            return Err(Error::format(at, format!("record {i}: cannot parse '{line}'")));
        };
        events.push(checker.check(i, at, x, y, t, p)?);
    }
    checker.finish(events)
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Reads EVS1, or CSV when the extension is `.csv`.
pub fn read(path: &Path) -> Result<EventStream> {
    let bytes = read_file(path)?;
    if is_csv(path) {
        let text = String::from_utf8(bytes).map_err(|e| Error::format(e.utf8_error().valid_up_to() as u64, "CSV is not valid UTF-8"))?;
        decode_csv(&text)
    } else {
        decode(&bytes)
    }
}

pub fn write(path: &Path, stream: &EventStream) -> Result<()> {
    if is_csv(path) {
        write_file(path, encode_csv(stream).as_bytes())
    } else {
        write_file(path, &encode(stream))
    }
}
