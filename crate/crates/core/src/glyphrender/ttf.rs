//! Minimal TrueType parser: enough of sfnt/TTC + head/maxp/cmap/loca/glyf to
//! map codepoints to glyph outlines. CFF-flavored OpenType ('OTTO') is
//! rejected. Errors carry a human-readable reason; the caller wraps them in
//! `Error::UnparsableFont`.

use std::collections::BTreeMap;

type PResult<T> = Result<T, String>;

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn at(data: &'a [u8], pos: usize) -> PResult<Reader<'a>> {
        if pos > data.len() {
            return Err(format!("offset {pos} past end of file"));
        }
        Ok(Reader { data, pos })
    }

    fn bytes(&mut self, n: usize) -> PResult<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or("offset overflow")?;
        if end > self.data.len() {
            return Err(format!("read of {n} bytes at {} past end", self.pos));
        }
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> PResult<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u16(&mut self) -> PResult<u16> {
        let b = self.bytes(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn i16(&mut self) -> PResult<i16> {
        Ok(self.u16()? as i16)
    }

    fn u32(&mut self) -> PResult<u32> {
        let b = self.bytes(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn skip(&mut self, n: usize) -> PResult<()> {
        self.bytes(n).map(|_| ())
    }
}

/// Quadratic-curve control point in font units.
#[derive(Debug, Clone, Copy)]
pub struct CurvePoint {
    pub x: f64,
    pub y: f64,
    pub on_curve: bool,
}

/// One glyph's contours, composites already flattened into the parent frame.
#[derive(Debug, Clone, Default)]
pub struct Outline {
    pub contours: Vec<Vec<CurvePoint>>,
}

#[derive(Debug)]
pub struct Face {
    data: Vec<u8>,
    pub units_per_em: u16,
    loca: Vec<u32>,
    glyf_start: usize,
    glyf_len: usize,
    cmap: BTreeMap<u32, u16>,
}

impl Face {
    pub fn parse(data: Vec<u8>, face_index: u32) -> PResult<Face> {
        let sfnt_off = locate_face(&data, face_index)?;
        let tables = table_directory(&data, sfnt_off)?;
        let find = |tag: &[u8; 4]| -> PResult<(usize, usize)> {
            tables
                .get(tag)
                .copied()
                .ok_or_else(|| format!("missing {} table", String::from_utf8_lossy(tag)))
        };

        let (head_off, _) = find(b"head")?;
        let mut r = Reader::at(&data, head_off)?;
        r.skip(12)?;
        let magic = r.u32()?;
        if magic != 0x5F0F_3CF5 {
            return Err("bad head table magic".into());
        }
        r.skip(2)?;
        let units_per_em = r.u16()?;
        if units_per_em == 0 {
            return Err("unitsPerEm is zero".into());
        }
        r.skip(30)?;
        let index_to_loc = r.i16()?;

        let (maxp_off, _) = find(b"maxp")?;
        let mut r = Reader::at(&data, maxp_off)?;
        r.skip(4)?;
        let num_glyphs = r.u16()? as usize;

        let (loca_off, loca_len) = find(b"loca")?;
        let mut r = Reader::at(&data, loca_off)?;
        let need = (num_glyphs + 1) * if index_to_loc == 0 { 2 } else { 4 };
        if need > loca_len {
            return Err("loca table too short".into());
        }
        let mut loca = Vec::with_capacity(num_glyphs + 1);
        for _ in 0..=num_glyphs {
            loca.push(match index_to_loc {
                0 => r.u16()? as u32 * 2,
                1 => r.u32()?,
                _ => return Err(format!("bad indexToLocFormat {index_to_loc}")),
            });
        }

        let (glyf_start, glyf_len) = find(b"glyf")?;
        let (cmap_off, _) = find(b"cmap")?;
        let cmap = parse_cmap(&data, cmap_off)?;

        Ok(Face {
            data,
            units_per_em,
            loca,
            glyf_start,
            glyf_len,
            cmap,
        })
    }

    pub fn glyph_id(&self, cp: u32) -> Option<u16> {
        self.cmap.get(&cp).copied()
    }

    pub fn mapped_codepoints(&self) -> impl Iterator<Item = (u32, u16)> + '_ {
        self.cmap.iter().map(|(&cp, &gid)| (cp, gid))
    }

    fn glyph_data(&self, gid: u16) -> PResult<&[u8]> {
        let gid = gid as usize;
        if gid + 1 >= self.loca.len() {
            return Err(format!("glyph id {gid} out of range"));
        }
        let (a, b) = (self.loca[gid] as usize, self.loca[gid + 1] as usize);
        if b < a || b > self.glyf_len {
            return Err(format!("bad loca entry for glyph {gid}"));
        }
        Ok(&self.data[self.glyf_start + a..self.glyf_start + b])
    }

    /// True when the glyph has outline data (composites count).
    pub fn has_ink(&self, gid: u16) -> bool {
        matches!(self.glyph_data(gid), Ok(d) if d.len() >= 10)
    }

    /// Full outline with composite components resolved. Empty glyphs yield an
    /// empty contour list.
    pub fn outline(&self, gid: u16) -> PResult<Outline> {
        let mut out = Outline::default();
        self.outline_into(gid, &IDENTITY, 0, &mut out)?;
        Ok(out)
    }

    fn outline_into(&self, gid: u16, xf: &Transform, depth: u32, out: &mut Outline) -> PResult<()> {
        if depth > 8 {
            return Err("composite glyph nesting exceeds depth 8".into());
        }
        let data = self.glyph_data(gid)?;
        if data.len() < 10 {
            return Ok(());
        }
        let mut r = Reader::at(data, 0)?;
        let n_contours = r.i16()?;
        r.skip(8)?;
        if n_contours >= 0 {
            parse_simple(&mut r, n_contours as usize, xf, out)
        } else {
            self.parse_composite(&mut r, xf, depth, out)
        }
    }

    fn parse_composite(
        &self,
        r: &mut Reader,
        xf: &Transform,
        depth: u32,
        out: &mut Outline,
    ) -> PResult<()> {
        const ARG_1_AND_2_ARE_WORDS: u16 = 0x0001;
        const ARGS_ARE_XY_VALUES: u16 = 0x0002;
        const WE_HAVE_A_SCALE: u16 = 0x0008;
        const MORE_COMPONENTS: u16 = 0x0020;
        const WE_HAVE_AN_X_AND_Y_SCALE: u16 = 0x0040;
        const WE_HAVE_A_TWO_BY_TWO: u16 = 0x0080;

        loop {
            let flags = r.u16()?;
            let component_gid = r.u16()?;
            let (dx, dy) = if flags & ARG_1_AND_2_ARE_WORDS != 0 {
                (r.i16()? as f64, r.i16()? as f64)
            } else {
                (r.u8()? as i8 as f64, r.u8()? as i8 as f64)
            };
            if flags & ARGS_ARE_XY_VALUES == 0 {
                return Err("composite glyph uses point matching".into());
            }
            let f2d = |v: i16| v as f64 / 16384.0;
            let (a, b, c, d) = if flags & WE_HAVE_A_SCALE != 0 {
                let s = f2d(r.i16()?);
                (s, 0.0, 0.0, s)
            } else if flags & WE_HAVE_AN_X_AND_Y_SCALE != 0 {
                (f2d(r.i16()?), 0.0, 0.0, f2d(r.i16()?))
            } else if flags & WE_HAVE_A_TWO_BY_TWO != 0 {
                (f2d(r.i16()?), f2d(r.i16()?), f2d(r.i16()?), f2d(r.i16()?))
            } else {
                (1.0, 0.0, 0.0, 1.0)
            };
            let local = Transform { a, b, c, d, dx, dy };
            let combined = xf.then(&local);
            self.outline_into(component_gid, &combined, depth + 1, out)?;
            if flags & MORE_COMPONENTS == 0 {
                return Ok(());
            }
        }
    }
}

/// Row-vector affine: (x, y) -> (a·x + c·y + dx, b·x + d·y + dy).
#[derive(Debug, Clone, Copy)]
struct Transform {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    dx: f64,
    dy: f64,
}

const IDENTITY: Transform = Transform {
    a: 1.0,
    b: 0.0,
    c: 0.0,
    d: 1.0,
    dx: 0.0,
    dy: 0.0,
};

impl Transform {
    fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.a * x + self.c * y + self.dx,
            self.b * x + self.d * y + self.dy,
        )
    }

    /// Outer transform applied after the inner one.
    fn then(&self, inner: &Transform) -> Transform {
        let (dx, dy) = self.apply(inner.dx, inner.dy);
        Transform {
            a: self.a * inner.a + self.c * inner.b,
            b: self.b * inner.a + self.d * inner.b,
            c: self.a * inner.c + self.c * inner.d,
            d: self.b * inner.c + self.d * inner.d,
            dx,
            dy,
        }
    }
}

/// Resolve the sfnt offset-table position, unwrapping a TTC header if present.
fn locate_face(data: &[u8], face_index: u32) -> PResult<usize> {
    let mut r = Reader::at(data, 0)?;
    let tag = r.u32()?;
    match tag {
        0x0001_0000 | 0x7472_7565 => Ok(0), // 1.0 or 'true'
        0x4F54_544F => Err("CFF outlines ('OTTO') are not supported".into()),
        0x7474_6366 => {
            // 'ttcf'
            r.skip(4)?;
            let num_fonts = r.u32()?;
            if face_index >= num_fonts {
                return Err(format!(
                    "face index {face_index} out of range (collection has {num_fonts})"
                ));
            }
            r.skip(face_index as usize * 4)?;
            let off = r.u32()? as usize;
            let mut fr = Reader::at(data, off)?;
            match fr.u32()? {
                0x0001_0000 | 0x7472_7565 => Ok(off),
                0x4F54_544F => Err("CFF outlines ('OTTO') are not supported".into()),
                v => Err(format!("bad sfnt version {v:#010x} in collection")),
            }
        }
        v => Err(format!("bad sfnt version {v:#010x}")),
    }
}

fn table_directory(data: &[u8], sfnt_off: usize) -> PResult<BTreeMap<[u8; 4], (usize, usize)>> {
    let mut r = Reader::at(data, sfnt_off + 4)?;
    let num_tables = r.u16()?;
    r.skip(6)?;
    let mut tables = BTreeMap::new();
    for _ in 0..num_tables {
        let tag: [u8; 4] = r.bytes(4)?.try_into().unwrap();
        r.skip(4)?;
        let off = r.u32()? as usize;
        let len = r.u32()? as usize;
        if off.checked_add(len).is_none_or(|end| end > data.len()) {
            return Err(format!(
                "table {} extends past end of file",
                String::from_utf8_lossy(&tag)
            ));
        }
        tables.insert(tag, (off, len));
    }
    Ok(tables)
}

fn parse_cmap(data: &[u8], cmap_off: usize) -> PResult<BTreeMap<u32, u16>> {
    let mut r = Reader::at(data, cmap_off)?;
    r.skip(2)?;
    let n = r.u16()?;
    let mut best: Option<(u32, usize)> = None; // (score, subtable offset)
    for _ in 0..n {
        let plat = r.u16()?;
        let enc = r.u16()?;
        let off = r.u32()? as usize;
        let score = match (plat, enc) {
            (3, 10) => 5,
            (0, 4) | (0, 6) => 4,
            (3, 1) => 3,
            (0, 0..=3) => 2,
            _ => 0,
        };
        if score > 0 && best.is_none_or(|(s, _)| score > s) {
            best = Some((score, cmap_off + off));
        }
    }
    let (_, sub_off) = best.ok_or("no Unicode cmap subtable")?;
    let mut r = Reader::at(data, sub_off)?;
    match r.u16()? {
        4 => cmap_format4(&mut r, sub_off, data),
        12 => cmap_format12(&mut r),
        f => Err(format!("unsupported cmap subtable format {f}")),
    }
}

fn cmap_format4(r: &mut Reader, _sub_off: usize, _data: &[u8]) -> PResult<BTreeMap<u32, u16>> {
    r.skip(4)?;
    let seg_count = (r.u16()? / 2) as usize;
    r.skip(6)?;
    let mut end = Vec::with_capacity(seg_count);
    for _ in 0..seg_count {
        end.push(r.u16()?);
    }
    r.skip(2)?;
    let mut start = Vec::with_capacity(seg_count);
    for _ in 0..seg_count {
        start.push(r.u16()?);
    }
    let mut delta = Vec::with_capacity(seg_count);
    for _ in 0..seg_count {
        delta.push(r.i16()?);
    }
    // Offsets in idRangeOffset are relative to their own position in the file.
    let range_off_base = r.pos;
    let mut range_off = Vec::with_capacity(seg_count);
    for _ in 0..seg_count {
        range_off.push(r.u16()?);
    }

    let mut map = BTreeMap::new();
    for i in 0..seg_count {
        if start[i] == 0xFFFF {
            continue;
        }
        for cp in start[i]..=end[i] {
            let gid = if range_off[i] == 0 {
                (cp as i32 + delta[i] as i32) as u16
            } else {
                let addr = range_off_base
                    + i * 2
                    + range_off[i] as usize
                    + 2 * (cp - start[i]) as usize;
                let mut gr = Reader::at(r.data, addr)?;
                let raw = gr.u16()?;
                if raw == 0 {
                    continue;
                }
                (raw as i32 + delta[i] as i32) as u16
            };
            if gid != 0 {
                map.insert(cp as u32, gid);
            }
            if cp == 0xFFFF {
                break;
            }
        }
    }
    Ok(map)
}

fn cmap_format12(r: &mut Reader) -> PResult<BTreeMap<u32, u16>> {
    r.skip(10)?;
    let n_groups = r.u32()?;
    let mut map = BTreeMap::new();
    for _ in 0..n_groups {
        let start = r.u32()?;
        let end = r.u32()?;
        let start_gid = r.u32()?;
        if end < start || end - start > 0x10_FFFF {
            return Err("bad cmap format 12 group".into());
        }
        for (k, cp) in (start..=end).enumerate() {
            let gid = start_gid as usize + k;
            if gid != 0 && gid <= u16::MAX as usize {
                map.insert(cp, gid as u16);
            }
        }
    }
    Ok(map)
}

fn parse_simple(r: &mut Reader, n_contours: usize, xf: &Transform, out: &mut Outline) -> PResult<()> {
    const ON_CURVE: u8 = 0x01;
    const X_SHORT: u8 = 0x02;
    const Y_SHORT: u8 = 0x04;
    const REPEAT: u8 = 0x08;
    const X_SAME_OR_POS: u8 = 0x10;
    const Y_SAME_OR_POS: u8 = 0x20;

    let mut end_pts = Vec::with_capacity(n_contours);
    for _ in 0..n_contours {
        end_pts.push(r.u16()? as usize);
    }
    let n_points = match end_pts.last() {
        Some(&e) => e + 1,
        None => return Ok(()),
    };
    let instr_len = r.u16()? as usize;
    r.skip(instr_len)?;

    let mut flags = Vec::with_capacity(n_points);
    while flags.len() < n_points {
        let f = r.u8()?;
        flags.push(f);
        if f & REPEAT != 0 {
            let times = r.u8()?;
            for _ in 0..times {
                flags.push(f);
            }
        }
    }
    flags.truncate(n_points);

    let mut xs = Vec::with_capacity(n_points);
    let mut x = 0i32;
    for &f in &flags {
        if f & X_SHORT != 0 {
            let d = r.u8()? as i32;
            x += if f & X_SAME_OR_POS != 0 { d } else { -d };
        } else if f & X_SAME_OR_POS == 0 {
            x += r.i16()? as i32;
        }
        xs.push(x);
    }
    let mut ys = Vec::with_capacity(n_points);
    let mut y = 0i32;
    for &f in &flags {
        if f & Y_SHORT != 0 {
            let d = r.u8()? as i32;
            y += if f & Y_SAME_OR_POS != 0 { d } else { -d };
        } else if f & Y_SAME_OR_POS == 0 {
            y += r.i16()? as i32;
        }
        ys.push(y);
    }

    let mut first = 0usize;
    for &last in &end_pts {
        if last < first || last >= n_points {
            return Err("contour end point out of order".into());
        }
        let mut contour = Vec::with_capacity(last - first + 1);
        for i in first..=last {
            let (px, py) = xf.apply(xs[i] as f64, ys[i] as f64);
            contour.push(CurvePoint {
                x: px,
                y: py,
                on_curve: flags[i] & ON_CURVE != 0,
            });
        }
        out.contours.push(contour);
        first = last + 1;
    }
    Ok(())
}
