//! Minimal PLY reader/writer shared by point clouds and Gaussian scenes.
//!
//! Supports `ascii`, `binary_little_endian` and `binary_big_endian` bodies,
//! every scalar type in the format, and list properties. Values are held as
//! `f64` columns, which represent every PLY scalar type exactly.

use std::io::{BufRead, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("header line {line}: {msg}")]
    Header { line: usize, msg: String },
    #[error("body: {0}")]
    Body(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Ascii,
    BinaryLittleEndian,
    BinaryBigEndian,
}

impl Format {
    fn keyword(self) -> &'static str {
        match self {
            Format::Ascii => "ascii",
            Format::BinaryLittleEndian => "binary_little_endian",
            Format::BinaryBigEndian => "binary_big_endian",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Self::I8 => "char",
            Self::U8 => "uchar",
            Self::I16 => "short",
            Self::U16 => "ushort",
            Self::I32 => "int",
            Self::U32 => "uint",
            Self::F32 => "float",
            Self::F64 => "double",
        }
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn decode(self, b: &[u8], big: bool) -> f64 {
        macro_rules! rd {
            ($t:ty, $n:expr) => {{
                let mut a = [0u8; $n];
                a.copy_from_slice(&b[..$n]);
                (if big { <$t>::from_be_bytes(a) } else { <$t>::from_le_bytes(a) }) as f64
            }};
        }
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => rd!(i16, 2),
            Self::U16 => rd!(u16, 2),
            Self::I32 => rd!(i32, 4),
            Self::U32 => rd!(u32, 4),
            Self::F32 => rd!(f32, 4),
            Self::F64 => rd!(f64, 8),
        }
    }

    fn encode(self, v: f64, big: bool, out: &mut Vec<u8>) {
        macro_rules! wr {
            ($x:expr) => {{
                let x = $x;
                if big {
                    out.extend_from_slice(&x.to_be_bytes())
                } else {
                    out.extend_from_slice(&x.to_le_bytes())
                }
            }};
        }
        match self {
            Self::I8 => out.push(v.round() as i8 as u8),
            Self::U8 => out.push(v.round().clamp(0.0, 255.0) as u8),
            Self::I16 => wr!(v.round() as i16),
            Self::U16 => wr!(v.round() as u16),
            Self::I32 => wr!(v.round() as i32),
            Self::U32 => wr!(v.round() as u32),
            Self::F32 => wr!(v as f32),
            Self::F64 => wr!(v),
        }
    }

    fn format_ascii(self, v: f64) -> String {
        match self {
            Self::F32 => format!("{}", v as f32),
            Self::F64 => format!("{v}"),
            _ => format!("{}", v.round() as i64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PropertyKind {
    Scalar(ScalarType),
    List { count: ScalarType, item: ScalarType },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Property {
    pub name: String,
    pub kind: PropertyKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Scalar(Vec<f64>),
    List(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub name: String,
    pub count: usize,
    pub properties: Vec<Property>,
    pub columns: Vec<Column>,
}

impl Element {
    pub fn new(name: impl Into<String>, count: usize) -> Self {
        Self {
            name: name.into(),
            count,
            properties: Vec::new(),
            columns: Vec::new(),
        }
    }

    /// Appends a scalar column. Panics if the length differs from `count`.
    pub fn with_scalar(mut self, name: &str, ty: ScalarType, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.count, "column {name} length");
        self.properties.push(Property {
            name: name.to_string(),
            kind: PropertyKind::Scalar(ty),
        });
        self.columns.push(Column::Scalar(values));
        self
    }

    pub fn with_list(
        mut self,
        name: &str,
        count: ScalarType,
        item: ScalarType,
        values: Vec<Vec<f64>>,
    ) -> Self {
        assert_eq!(values.len(), self.count, "column {name} length");
        self.properties.push(Property {
            name: name.to_string(),
            kind: PropertyKind::List { count, item },
        });
        self.columns.push(Column::List(values));
        self
    }

    pub fn scalar(&self, name: &str) -> Option<&[f64]> {
        let i = self.properties.iter().position(|p| p.name == name)?;
        match &self.columns[i] {
            Column::Scalar(v) => Some(v),
            Column::List(_) => None,
        }
    }

    pub fn list(&self, name: &str) -> Option<&[Vec<f64>]> {
        let i = self.properties.iter().position(|p| p.name == name)?;
        match &self.columns[i] {
            Column::List(v) => Some(v),
            Column::Scalar(_) => None,
        }
    }

    pub fn property_type(&self, name: &str) -> Option<&PropertyKind> {
        self.properties
            .iter()
            .find(|p| p.name == name)
            .map(|p| &p.kind)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ply {
    pub format: Format,
    pub comments: Vec<String>,
    pub elements: Vec<Element>,
}

impl Ply {
    pub fn new(format: Format) -> Self {
        Self {
            format,
            comments: Vec::new(),
            elements: Vec::new(),
        }
    }

    pub fn element(&self, name: &str) -> Option<&Element> {
        self.elements.iter().find(|e| e.name == name)
    }

    pub fn read<R: BufRead>(mut r: R) -> Result<Self, PlyError> {
        let (format, comments, mut elements) = read_header(&mut r)?;
        match format {
            Format::Ascii => read_ascii(&mut r, &mut elements)?,
            _ => {
                let mut body = Vec::new();
                r.read_to_end(&mut body)?;
                read_binary(&body, format == Format::BinaryBigEndian, &mut elements)?;
            }
        }
        Ok(Self {
            format,
            comments,
            elements,
        })
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), PlyError> {
        let mut head = String::from("ply\n");
        head.push_str(&format!("format {} 1.0\n", self.format.keyword()));
        for c in &self.comments {
            head.push_str(&format!("comment {c}\n"));
        }
        for e in &self.elements {
            head.push_str(&format!("element {} {}\n", e.name, e.count));
            for p in &e.properties {
                match &p.kind {
                    PropertyKind::Scalar(t) => {
                        head.push_str(&format!("property {} {}\n", t.name(), p.name))
                    }
                    PropertyKind::List { count, item } => head.push_str(&format!(
                        "property list {} {} {}\n",
                        count.name(),
                        item.name(),
                        p.name
                    )),
                }
            }
        }
        head.push_str("end_header\n");
        w.write_all(head.as_bytes())?;

        let big = self.format == Format::BinaryBigEndian;
        for e in &self.elements {
            let mut buf = Vec::new();
            for row in 0..e.count {
                if self.format == Format::Ascii {
                    let mut fields = Vec::with_capacity(e.properties.len());
                    for (p, c) in e.properties.iter().zip(&e.columns) {
                        match (&p.kind, c) {
                            (PropertyKind::Scalar(t), Column::Scalar(v)) => {
                                fields.push(t.format_ascii(v[row]))
                            }
                            (PropertyKind::List { item, .. }, Column::List(v)) => {
                                fields.push(v[row].len().to_string());
                                fields.extend(v[row].iter().map(|&x| item.format_ascii(x)));
                            }
                            _ => return Err(PlyError::Body(format!("column kind of {}", p.name))),
                        }
                    }
                    buf.extend_from_slice(fields.join(" ").as_bytes());
                    buf.push(b'\n');
                } else {
                    for (p, c) in e.properties.iter().zip(&e.columns) {
                        match (&p.kind, c) {
                            (PropertyKind::Scalar(t), Column::Scalar(v)) => {
                                t.encode(v[row], big, &mut buf)
                            }
                            (PropertyKind::List { count, item }, Column::List(v)) => {
                                count.encode(v[row].len() as f64, big, &mut buf);
                                for &x in &v[row] {
                                    item.encode(x, big, &mut buf);
                                }
                            }
                            _ => return Err(PlyError::Body(format!("column kind of {}", p.name))),
                        }
                    }
                }
                if buf.len() > 1 << 20 {
                    w.write_all(&buf)?;
                    buf.clear();
                }
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }
}

fn header_err(line: usize, msg: impl Into<String>) -> PlyError {
    PlyError::Header {
        line,
        msg: msg.into(),
    }
}

fn read_header<R: BufRead>(r: &mut R) -> Result<(Format, Vec<String>, Vec<Element>), PlyError> {
    let mut line = String::new();
    let mut lineno = 0;
    let mut next = |r: &mut R, line: &mut String| -> Result<bool, PlyError> {
        line.clear();
        lineno += 1;
        Ok(r.read_line(line)? > 0)
    };

    if !next(r, &mut line)? || line.trim_end() != "ply" {
        return Err(header_err(1, "missing 'ply' magic"));
    }
    let mut format = None;
    let mut comments = Vec::new();
    let mut elements: Vec<Element> = Vec::new();
    let mut n = 1;
    loop {
        if !next(r, &mut line)? {
            return Err(header_err(n + 1, "unexpected end of header"));
        }
        n += 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            [] => {}
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] => {
                comments.push(toks[1..].join(" "))
            }
            ["format", f, _ver] => {
                format = Some(match *f {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLittleEndian,
                    "binary_big_endian" => Format::BinaryBigEndian,
                    other => return Err(header_err(n, format!("unknown format {other}"))),
                })
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| header_err(n, format!("bad element count {count}")))?;
                elements.push(Element::new(*name, count));
            }
            ["property", "list", ct, it, name] => {
                let e = elements
                    .last_mut()
                    .ok_or_else(|| header_err(n, "property before element"))?;
                let count = ScalarType::parse(ct).ok_or_else(|| header_err(n, "bad list count type"))?;
                let item = ScalarType::parse(it).ok_or_else(|| header_err(n, "bad list item type"))?;
                e.properties.push(Property {
                    name: name.to_string(),
                    kind: PropertyKind::List { count, item },
                });
            }
            ["property", ty, name] => {
                let e = elements
                    .last_mut()
                    .ok_or_else(|| header_err(n, "property before element"))?;
                let t = ScalarType::parse(ty)
                    .ok_or_else(|| header_err(n, format!("unknown type {ty}")))?;
                e.properties.push(Property {
                    name: name.to_string(),
                    kind: PropertyKind::Scalar(t),
                });
            }
            _ => return Err(header_err(n, format!("unrecognized: {}", line.trim_end()))),
        }
    }
    let format = format.ok_or_else(|| header_err(n, "missing format line"))?;
    for e in &mut elements {
        e.columns = e
            .properties
            .iter()
            .map(|p| match p.kind {
                PropertyKind::Scalar(_) => Column::Scalar(Vec::with_capacity(e.count)),
                PropertyKind::List { .. } => Column::List(Vec::with_capacity(e.count)),
            })
            .collect();
    }
    Ok((format, comments, elements))
}

fn read_ascii<R: BufRead>(r: &mut R, elements: &mut [Element]) -> Result<(), PlyError> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let mut toks = text.split_ascii_whitespace();
    let mut take = |what: &str| -> Result<f64, PlyError> {
        let t = toks
            .next()
            .ok_or_else(|| PlyError::Body(format!("unexpected end of data reading {what}")))?;
        t.parse::<f64>()
            .map_err(|_| PlyError::Body(format!("bad number '{t}' for {what}")))
    };
    for e in elements.iter_mut() {
        for _ in 0..e.count {
            for (p, c) in e.properties.iter().zip(e.columns.iter_mut()) {
                match c {
                    Column::Scalar(v) => {
                        let x = take(&p.name)?;
                        v.push(match p.kind {
                            PropertyKind::Scalar(ScalarType::F32) => x as f32 as f64,
                            _ => x,
                        });
                    }
                    Column::List(v) => {
                        let n = take(&p.name)?;
                        if n < 0.0 {
                            return Err(PlyError::Body(format!("negative list length in {}", p.name)));
                        }
                        let mut items = Vec::with_capacity(n as usize);
                        for _ in 0..n as usize {
                            items.push(take(&p.name)?);
                        }
                        v.push(items);
                    }
                }
            }
        }
    }
    Ok(())
}

fn read_binary(body: &[u8], big: bool, elements: &mut [Element]) -> Result<(), PlyError> {
    let mut off = 0usize;
    let eof = || PlyError::Body("unexpected end of binary data".into());
    for e in elements.iter_mut() {
        let fixed: Option<Vec<ScalarType>> = e
            .properties
            .iter()
            .map(|p| match p.kind {
                PropertyKind::Scalar(t) => Some(t),
                PropertyKind::List { .. } => None,
            })
            .collect();
        if let Some(types) = fixed {
            // all-scalar element: fixed stride
            let stride: usize = types.iter().map(|t| t.size()).sum();
            let need = stride * e.count;
            if body.len() < off + need {
                return Err(eof());
            }
            for row in 0..e.count {
                let mut o = off + row * stride;
                for (t, c) in types.iter().zip(e.columns.iter_mut()) {
                    if let Column::Scalar(v) = c {
                        v.push(t.decode(&body[o..], big));
                    }
                    o += t.size();
                }
            }
            off += need;
            continue;
        }
        for _ in 0..e.count {
            for (p, c) in e.properties.iter().zip(e.columns.iter_mut()) {
                match (&p.kind, c) {
                    (PropertyKind::Scalar(t), Column::Scalar(v)) => {
                        if body.len() < off + t.size() {
                            return Err(eof());
                        }
                        v.push(t.decode(&body[off..], big));
                        off += t.size();
                    }
                    (PropertyKind::List { count, item }, Column::List(v)) => {
                        if body.len() < off + count.size() {
                            return Err(eof());
                        }
                        let n = count.decode(&body[off..], big) as usize;
                        off += count.size();
                        if body.len() < off + n * item.size() {
                            return Err(eof());
                        }
                        let items = (0..n)
                            .map(|k| item.decode(&body[off + k * item.size()..], big))
                            .collect();
                        off += n * item.size();
                        v.push(items);
                    }
                    _ => unreachable!("columns built from properties"),
                }
            }
        }
    }
    Ok(())
}
