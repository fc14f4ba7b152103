use std::io::{BufRead, Write};
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};

/// One named slice of a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Span {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

impl Span {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Flattened trainable parameters with a named, gap-free layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    values: Vec<f64>,
    layout: Vec<Span>,
}

impl ParameterVector {
    pub fn new(values: Vec<f64>, layout: Vec<Span>) -> Result<Self> {
        let pv = Self { values, layout };
        pv.validate()?;
        Ok(pv)
    }

    pub fn zeros(layout: Vec<Span>) -> Result<Self> {
        let len = layout.iter().map(|s| s.len).sum();
        Self::new(vec![0.0; len], layout)
    }

    fn validate(&self) -> Result<()> {
        let mut next = 0;
        for (i, s) in self.layout.iter().enumerate() {
            if s.offset != next {
                return Err(Error::Format(format!("span `{}` starts at {} (expected {next})", s.name, s.offset)));
            }
            if self.layout[..i].iter().any(|o| o.name == s.name) {
                return Err(Error::Format(format!("duplicate span name `{}`", s.name)));
            }
            next += s.len;
        }
        if next != self.values.len() {
            return Err(Error::Format(format!("spans cover {next} of {} values", self.values.len())));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &[Span] {
        &self.layout
    }

    pub fn span(&self, name: &str) -> Option<&Span> {
        self.layout.iter().find(|s| s.name == name)
    }

    pub fn slice(&self, name: &str) -> Option<&[f64]> {
        self.span(name).map(|s| &self.values[s.range()])
    }

    pub fn slice_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let r = self.span(name)?.range();
        Some(&mut self.values[r])
    }

    /// Same layout with different values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(values, self.layout.clone())
    }

    /// Concatenates vectors, prefixing each span name with `prefix.`.
    pub fn concat(parts: &[(&str, &ParameterVector)]) -> Result<Self> {
        let mut values = Vec::new();
        let mut layout = Vec::new();
        for (prefix, pv) in parts {
            for s in &pv.layout {
                layout.push(Span { name: format!("{prefix}.{}", s.name), offset: values.len() + s.offset, len: s.len });
            }
            values.extend_from_slice(&pv.values);
        }
        Self::new(values, layout)
    }

    /// The sub-vector whose spans carry `prefix.`, with the prefix stripped.
    pub fn member(&self, prefix: &str) -> Option<ParameterVector> {
        let tag = format!("{prefix}.");
        let spans: Vec<&Span> = self.layout.iter().filter(|s| s.name.starts_with(&tag)).collect();
        let first = spans.first()?.offset;
        let mut values = Vec::new();
        let mut layout = Vec::new();
        for s in spans {
            layout.push(Span { name: s.name[tag.len()..].to_string(), offset: s.offset - first, len: s.len });
            values.extend_from_slice(&self.values[s.range()]);
        }
        ParameterVector::new(values, layout).ok()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Writes the plain-text manifest followed by the raw little-endian f64 block.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "tldpinn-params v1")?;
        writeln!(w, "len {}", self.values.len())?;
        for s in &self.layout {
            writeln!(w, "span {} {} {}", s.name, s.offset, s.len)?;
        }
        writeln!(w, "end")?;
        let mut buf = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(mut r: R) -> Result<Self> {
        let mut line = String::new();
        r.read_line(&mut line)?;
        if line.trim_end() != "tldpinn-params v1" {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        line.clear();
        r.read_line(&mut line)?;
        let len: usize = line
            .trim_end()
            .strip_prefix("len ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("missing length".into()))?;
        let mut layout = Vec::new();
        loop {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::Format("unterminated manifest".into()));
            }
            let t = line.trim_end();
            if t == "end" {
                break;
            }
            let parts: Vec<&str> = t.split(' ').collect();
            match parts.as_slice() {
                ["span", name, off, n] => {
                    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad span line `{t}`")));
                    layout.push(Span { name: name.to_string(), offset: parse(off)?, len: parse(n)? });
                }
                _ => return Err(Error::Format(format!("bad manifest line `{t}`"))),
            }
        }
        let mut raw = vec![0u8; len * 8];
        r.read_exact(&mut raw)?;
        let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Self::new(values, layout)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layout(lens: &[usize]) -> Vec<Span> {
        let mut off = 0;
        lens.iter()
            .enumerate()
            .map(|(i, &len)| {
                let s = Span { name: format!("l{i}"), offset: off, len };
                off += len;
                s
            })
            .collect()
    }

    #[test]
    fn rejects_gaps_and_duplicates() {
        let mut l = layout(&[2, 3]);
        l[1].offset = 3;
        assert!(ParameterVector::new(vec![0.0; 6], l).is_err());
        let mut l = layout(&[2, 3]);
        l[1].name = "l0".into();
        assert!(ParameterVector::new(vec![0.0; 5], l).is_err());
        assert!(ParameterVector::new(vec![0.0; 4], layout(&[2, 3])).is_err());
    }

    #[test]
    fn member_extracts_prefixed_spans() {
        let a = ParameterVector::new(vec![1.0, 2.0, 3.0], layout(&[1, 2])).unwrap();
        let b = ParameterVector::new(vec![4.0, 5.0], layout(&[2])).unwrap();
        let c = ParameterVector::concat(&[("k1", &a), ("u", &b)]).unwrap();
        assert_eq!(c.span("u.l0").unwrap().offset, 3);
        assert_eq!(c.member("u").unwrap(), b);
        assert_eq!(c.member("k1").unwrap(), a);
    }

    proptest! {
        #[test]
        fn checkpoint_round_trip(vals in proptest::collection::vec(-1e300f64..1e300, 1..40), cut in 0usize..40) {
            let cut = cut.min(vals.len());
            let pv = ParameterVector::new(vals.clone(), layout(&[cut, vals.len() - cut])).unwrap();
            let mut buf = Vec::new();
            pv.write_to(&mut buf).unwrap();
            let back = ParameterVector::read_from(&buf[..]).unwrap();
            prop_assert_eq!(back, pv);
        }
    }
}
