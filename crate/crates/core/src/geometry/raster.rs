use super::{Pixel, SilhouetteFrame};

/// Fills a closed polygon given by integer vertices: a pixel is foreground if
/// its center has non-zero winding number or lies on an edge.
pub fn fill_polygon(vertices: &[Pixel], height: usize, width: usize) -> SilhouetteFrame {
    let mut out = SilhouetteFrame::empty(height, width);
    let n = vertices.len();
    if n == 0 {
        return out;
    }
    let mut crossings: Vec<(f64, i32)> = Vec::new();
    for y in 0..height as i32 {
        crossings.clear();
        for i in 0..n {
            let (a, b) = (vertices[i], vertices[(i + 1) % n]);
            if a.y == b.y {
                continue;
            }
            let (lo, hi, dir) = if a.y < b.y { (a, b, 1) } else { (b, a, -1) };
            if y < lo.y || y >= hi.y {
                continue;
            }
            let t = (y - lo.y) as f64 / (hi.y - lo.y) as f64;
            crossings.push((lo.x as f64 + t * (hi.x - lo.x) as f64, dir));
        }
        crossings.sort_by(|p, q| p.0.total_cmp(&q.0));
        let mut winding = 0;
        for w in 0..crossings.len() {
            winding += crossings[w].1;
            if winding != 0 && w + 1 < crossings.len() {
                let x0 = crossings[w].0.ceil().max(0.0);
                let x1 = crossings[w + 1].0.floor().min(width as f64 - 1.0);
                let mut x = x0;
                while x <= x1 {
                    out.set(x as usize, y as usize, true);
                    x += 1.0;
                }
            }
        }
    }
    for i in 0..n {
        mark_segment(&mut out, vertices[i], vertices[(i + 1) % n]);
    }
    out
}

/// Marks pixel centers lying exactly on segment `a`–`b`.
fn mark_segment(out: &mut SilhouetteFrame, a: Pixel, b: Pixel) {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let g = gcd(dx.unsigned_abs(), dy.unsigned_abs()).max(1) as i32;
    let (sx, sy) = (dx / g, dy / g);
    for s in 0..=g {
        let p = a.offset(sx * s, sy * s);
        if p.x >= 0 && p.y >= 0 && (p.x as usize) < out.width() && (p.y as usize) < out.height() {
            out.set(p.x as usize, p.y as usize, true);
        }
    }
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Intersection over union of two equally sized masks; 1 when both are empty.
pub fn mask_iou(a: &SilhouetteFrame, b: &SilhouetteFrame) -> f64 {
    assert_eq!((a.height(), a.width()), (b.height(), b.width()), "mask sizes differ");
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &q) in a.mask().iter().zip(b.mask()) {
        inter += (p & q) as usize;
        union += (p | q) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}
