use super::components::{fill_holes, select_largest_component};
use super::{ClosedContour, Orientation, Pixel, SilhouetteFrame};
use crate::error::Result;

/// Moore neighborhood in clockwise order as displayed, starting west.
const DIRS: [(i32, i32); 8] = [(-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1)];

fn dir_index(from: Pixel, to: Pixel) -> usize {
    let d = (to.x - from.x, to.y - from.y);
    DIRS.iter().position(|&v| v == d).expect("pixels are 8-adjacent")
}

fn step(p: Pixel, d: usize) -> Pixel {
    p.offset(DIRS[d].0, DIRS[d].1)
}

fn touches_background(frame: &SilhouetteFrame, p: Pixel) -> bool {
    (0..8).any(|d| !frame.is_foreground(step(p, d)))
}

/// Outer border of the largest 8-connected component, clockwise, starting at
/// its topmost-leftmost pixel. Holes are ignored.
///
/// Border following runs over 8-connectivity; where it cuts a corner
/// diagonally, the foreground pixel in that corner is also emitted, so the
/// point set is exactly the pixels having a background 8-neighbor.
pub fn trace_border(frame: &SilhouetteFrame) -> Result<ClosedContour> {
    let component = select_largest_component(frame)?;
    let solid = fill_holes(&component);
    let start = first_foreground(&solid);

    // The west neighbor of the start pixel is background; sweep
    // counter-clockwise from it to find the last pixel of the loop.
    let Some(last) = (1..8)
        .map(|s| step(start, (8 - s) % 8))
        .find(|&q| solid.is_foreground(q))
    else {
        return Ok(ClosedContour {
            points: vec![start],
            orientation: Orientation::Clockwise,
        });
    };

    let mut moore = Vec::new();
    let (mut prev, mut cur) = (last, start);
    loop {
        let d0 = dir_index(cur, prev);
        let next = (1..=8)
            .map(|s| step(cur, (d0 + s) % 8))
            .find(|&q| solid.is_foreground(q))
            .expect("component has more than one pixel");
        moore.push(cur);
        if next == start && cur == last {
            break;
        }
        prev = cur;
        cur = next;
    }

    let n = moore.len();
    let mut points = Vec::with_capacity(n + n / 4);
    for i in 0..n {
        let (p, q) = (moore[i], moore[(i + 1) % n]);
        points.push(p);
        if p.x != q.x && p.y != q.y {
            for c in [Pixel::new(q.x, p.y), Pixel::new(p.x, q.y)] {
                // Filled hole pixels are not part of the silhouette.
                if component.is_foreground(c) && touches_background(&solid, c) {
                    points.push(c);
                }
            }
        }
    }
    Ok(ClosedContour {
        points,
        orientation: Orientation::Clockwise,
    })
}

fn first_foreground(frame: &SilhouetteFrame) -> Pixel {
    let idx = frame.mask().iter().position(|&v| v != 0).expect("non-empty component");
    Pixel::new((idx % frame.width()) as i32, (idx / frame.width()) as i32)
}
