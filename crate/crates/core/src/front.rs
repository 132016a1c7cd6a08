//! Zero-level contours of 2D grid fields and polyline geometry.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::nonlocal_op::{Field, PeriodicGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pub points: Vec<[f64; 2]>,
    pub closed: bool,
}

impl Polyline {
    pub fn new(points: Vec<[f64; 2]>, closed: bool) -> Self {
        Self { points, closed }
    }

    /// Closed regular polygon sampling a circle.
    pub fn circle(center: [f64; 2], radius: f64, n: usize) -> Self {
        let points = (0..n)
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                [center[0] + radius * t.cos(), center[1] + radius * t.sin()]
            })
            .collect();
        Self { points, closed: true }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn segments(&self) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
        let n = self.points.len();
        let count = if self.closed { n } else { n.saturating_sub(1) };
        (0..count).map(move |i| (self.points[i], self.points[(i + 1) % n]))
    }

    /// Shoelace area, positive for counter-clockwise orientation.
    pub fn signed_area(&self) -> f64 {
        let n = self.points.len();
        (0..n)
            .map(|i| {
                let (a, b) = (self.points[i], self.points[(i + 1) % n]);
                a[0] * b[1] - b[0] * a[1]
            })
            .sum::<f64>()
            * 0.5
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn perimeter(&self) -> f64 {
        self.segments().map(|(a, b)| (b[0] - a[0]).hypot(b[1] - a[1])).sum()
    }

    /// Area centroid of a closed polyline (vertex mean when degenerate).
    pub fn centroid(&self) -> [f64; 2] {
        let n = self.points.len();
        let a = self.signed_area();
        if a.abs() < 1e-300 || n < 3 {
            let s = self.points.iter().fold([0.0, 0.0], |s, p| [s[0] + p[0], s[1] + p[1]]);
            return [s[0] / n.max(1) as f64, s[1] / n.max(1) as f64];
        }
        let mut c = [0.0, 0.0];
        for i in 0..n {
            let (p, q) = (self.points[i], self.points[(i + 1) % n]);
            let w = p[0] * q[1] - q[0] * p[1];
            c[0] += (p[0] + q[0]) * w;
            c[1] += (p[1] + q[1]) * w;
        }
        [c[0] / (6.0 * a), c[1] / (6.0 * a)]
    }

    /// Radius of the disk with the same area.
    pub fn equivalent_radius(&self) -> f64 {
        (self.area() / std::f64::consts::PI).sqrt()
    }

    /// Smallest and largest vertex distance from the centroid.
    pub fn radius_range(&self) -> (f64, f64) {
        let c = self.centroid();
        self.points.iter().map(|p| (p[0] - c[0]).hypot(p[1] - c[1])).fold((f64::INFINITY, 0.0), |(lo, hi), r| (lo.min(r), hi.max(r)))
    }

    /// Distance from `p` to the nearest point of the polyline.
    pub fn distance_to(&self, p: [f64; 2]) -> f64 {
        if self.points.len() == 1 {
            return (p[0] - self.points[0][0]).hypot(p[1] - self.points[0][1]);
        }
        self.segments().map(|(a, b)| segment_distance(p, a, b)).fold(f64::INFINITY, f64::min)
    }

    /// Even-odd containment test.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let n = self.points.len();
        let mut inside = false;
        for i in 0..n {
            let (a, b) = (self.points[i], self.points[(i + 1) % n]);
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
                if p[0] < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Copy with every segment split so no piece is longer than `max_len`.
    pub fn resampled(&self, max_len: f64) -> Self {
        let mut points = Vec::new();
        for (a, b) in self.segments() {
            let k = ((b[0] - a[0]).hypot(b[1] - a[1]) / max_len).ceil().max(1.0) as usize;
            for j in 0..k {
                let t = j as f64 / k as f64;
                points.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
            }
        }
        if !self.closed {
            if let Some(&last) = self.points.last() {
                points.push(last);
            }
        }
        Self { points, closed: self.closed }
    }
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let l2 = dx * dx + dy * dy;
    let t = if l2 > 0.0 { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / l2).clamp(0.0, 1.0) } else { 0.0 };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

/// Fronts recorded at time `t`.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub fronts: Vec<Polyline>,
}

/// Symmetric Hausdorff distance and mean closest-point gap between two vertex sets,
/// each measured against the other's segments.
pub fn front_distance(a: &[Polyline], b: &[Polyline]) -> (f64, f64) {
    let one_way = |from: &[Polyline], to: &[Polyline]| -> (f64, f64, usize) {
        let mut worst: f64 = 0.0;
        let mut sum = 0.0;
        let mut count = 0;
        for line in from {
            for &p in &line.points {
                let d = to.iter().map(|l| l.distance_to(p)).fold(f64::INFINITY, f64::min);
                worst = worst.max(d);
                sum += d;
                count += 1;
            }
        }
        (worst, sum, count)
    };
    let (wa, sa, na) = one_way(a, b);
    let (wb, sb, nb) = one_way(b, a);
    (wa.max(wb), (sa + sb) / (na + nb).max(1) as f64)
}

/// Hausdorff distance and mean gap between two closed polylines with at least 8 vertices.
pub fn compare_fronts(a: &Polyline, b: &Polyline) -> Result<(f64, f64)> {
    for (name, p) in [("first", a), ("second", b)] {
        if !p.closed {
            return Err(Error::InvalidPolyline(format!("{name} polyline is open")));
        }
        if p.len() < 8 {
            return Err(Error::InvalidPolyline(format!("{name} polyline has {} vertices, need 8", p.len())));
        }
    }
    Ok(front_distance(std::slice::from_ref(a), std::slice::from_ref(b)))
}

/// Marching-squares contour of `field - level` on a 2D grid, cells not wrapped.
///
/// Saddle cells are resolved by the cell-centre average. Closed components with
/// area below `min_cells` grid cells are dropped.
pub fn contour(field: &Field, level: f64, min_cells: f64) -> Result<Vec<Polyline>> {
    let g = &field.grid;
    if g.dim() != 2 {
        return Err(Error::InvalidGrid("contours need a 2D grid".into()));
    }
    let (nx, ny) = (g.dims[0], g.dims[1]);
    let (hx, hy) = (g.spacing(0), g.spacing(1));
    let v = |i: usize, j: usize| field.values[i * ny + j] - level;
    let above = |x: f64| x >= 0.0;
    // Edge ids: 2*(i*ny+j) runs from (i,j) to (i+1,j); 2*(i*ny+j)+1 from (i,j) to (i,j+1).
    let horiz = |i: usize, j: usize| 2 * (i * ny + j);
    let vert = |i: usize, j: usize| 2 * (i * ny + j) + 1;
    let mut segs: Vec<(usize, usize)> = Vec::new();
    for i in 0..nx - 1 {
        for j in 0..ny - 1 {
            let c = [v(i, j), v(i + 1, j), v(i + 1, j + 1), v(i, j + 1)];
            let s = c.map(above);
            let e = [horiz(i, j), vert(i + 1, j), horiz(i, j + 1), vert(i, j)];
            let crossed: Vec<usize> = (0..4).filter(|&k| s[k] != s[(k + 1) % 4]).collect();
            match crossed.len() {
                2 => segs.push((e[crossed[0]], e[crossed[1]])),
                4 => {
                    let centre = above(0.25 * c.iter().sum::<f64>());
                    if centre == s[0] {
                        segs.push((e[0], e[1]));
                        segs.push((e[2], e[3]));
                    } else {
                        segs.push((e[3], e[0]));
                        segs.push((e[1], e[2]));
                    }
                }
                _ => {}
            }
        }
    }
    let point = |id: usize| -> [f64; 2] {
        let cell = id / 2;
        let (i, j) = (cell / ny, cell % ny);
        let (i2, j2) = if id % 2 == 0 { (i + 1, j) } else { (i, j + 1) };
        let (a, b) = (v(i, j), v(i2, j2));
        let t = if a == b { 0.5 } else { a / (a - b) };
        let (x0, y0) = (i as f64 * hx, j as f64 * hy);
        let (x1, y1) = (i2 as f64 * hx, j2 as f64 * hy);
        [x0 + t * (x1 - x0), y0 + t * (y1 - y0)]
    };
    let mut by_edge: HashMap<usize, Vec<usize>> = HashMap::new();
    for (k, &(a, b)) in segs.iter().enumerate() {
        by_edge.entry(a).or_default().push(k);
        by_edge.entry(b).or_default().push(k);
    }
    let mut used = vec![false; segs.len()];
    let mut out = Vec::new();
    for start in 0..segs.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let mut chain = std::collections::VecDeque::from([segs[start].0, segs[start].1]);
        let mut closed = false;
        // Extend forward from the back, then backward from the front.
        for forward in [true, false] {
            loop {
                let end = if forward { *chain.back().unwrap() } else { *chain.front().unwrap() };
                let next = by_edge[&end].iter().copied().find(|&k| !used[k]);
                let Some(k) = next else { break };
                used[k] = true;
                let (a, b) = segs[k];
                let other = if a == end { b } else { a };
                if other == if forward { *chain.front().unwrap() } else { *chain.back().unwrap() } {
                    closed = true;
                    break;
                }
                if forward {
                    chain.push_back(other);
                } else {
                    chain.push_front(other);
                }
            }
            if closed {
                break;
            }
        }
        let line = Polyline { points: chain.iter().map(|&id| point(id)).collect(), closed };
        let keep = if closed { line.area() >= min_cells * hx * hy } else { line.len() >= 3 };
        if keep {
            out.push(line);
        }
    }
    Ok(out)
}

/// Significant digits of every number written to CSV.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Rows `run_id,t,vertex_index,x,y`; the vertex index restarts at 0 for each polyline.
pub fn polylines_csv(run_id: &str, snapshots: &[(f64, Vec<Polyline>)], header: bool) -> String {
    let mut s = String::new();
    if header {
        s.push_str("run_id,t,vertex_index,x,y\n");
    }
    for (t, lines) in snapshots {
        for line in lines {
            for (k, p) in line.points.iter().enumerate() {
                s.push_str(&format!("{run_id},{},{k},{},{}\n", fmt_num(*t), fmt_num(p[0]), fmt_num(p[1])));
            }
        }
    }
    s
}

/// One text header line `dims=.. lengths=.. time=..`, then little-endian f64 values.
pub fn write_field<W: Write>(mut w: W, field: &Field, time: f64) -> Result<()> {
    let join = |v: Vec<String>| v.join(",");
    let dims = join(field.grid.dims.iter().map(|d| d.to_string()).collect());
    let lengths = join(field.grid.lengths.iter().map(|l| fmt_num(*l)).collect());
    writeln!(w, "dims={dims} lengths={lengths} time={}", fmt_num(time))?;
    for v in &field.values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_field<R: BufRead>(mut r: R) -> Result<(Field, f64)> {
    let mut header = String::new();
    r.read_line(&mut header)?;
    let bad = |m: &str| Error::Invalid(format!("field dump header: {m}"));
    let mut dims = None;
    let mut lengths = None;
    let mut time = None;
    for part in header.split_whitespace() {
        let (k, v) = part.split_once('=').ok_or_else(|| bad("expected key=value"))?;
        match k {
            "dims" => dims = Some(v.split(',').map(|x| x.parse::<usize>()).collect::<std::result::Result<Vec<_>, _>>().map_err(|_| bad("dims"))?),
            "lengths" => lengths = Some(v.split(',').map(|x| x.parse::<f64>()).collect::<std::result::Result<Vec<_>, _>>().map_err(|_| bad("lengths"))?),
            "time" => time = Some(v.parse::<f64>().map_err(|_| bad("time"))?),
            _ => return Err(bad(k)),
        }
    }
    let grid = PeriodicGrid::new(&dims.ok_or_else(|| bad("missing dims"))?, &lengths.ok_or_else(|| bad("missing lengths"))?)?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != 8 * grid.len() {
        return Err(bad("payload size does not match dims"));
    }
    let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((Field::new(grid, values)?, time.ok_or_else(|| bad("missing time"))?))
}

/// Grid helper used by the front solvers: flat index of `(i, j)` with periodic wrap.
pub(crate) fn wrap(grid: &PeriodicGrid, i: isize, j: isize) -> usize {
    let (nx, ny) = (grid.dims[0] as isize, grid.dims[1] as isize);
    (i.rem_euclid(nx) * ny + j.rem_euclid(ny)) as usize
}
