use std::collections::VecDeque;

use super::{Pixel, SilhouetteFrame};
use crate::error::{Error, Result};

const NEIGHBORS_8: [(i32, i32); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

/// Keeps only the largest 8-connected foreground component. Equal sizes go to
/// the component whose topmost-leftmost pixel comes first in raster order.
pub fn select_largest_component(frame: &SilhouetteFrame) -> Result<SilhouetteFrame> {
    let (w, h) = (frame.width(), frame.height());
    let mut label = vec![0u32; w * h];
    let mut best: Option<(u32, usize)> = None;
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if !frame.get(x, y) || label[y * w + x] != 0 {
                continue;
            }
            next += 1;
            label[y * w + x] = next;
            queue.push_back(Pixel::new(x as i32, y as i32));
            let mut size = 0;
            while let Some(p) = queue.pop_front() {
                size += 1;
                for (dx, dy) in NEIGHBORS_8 {
                    let q = p.offset(dx, dy);
                    if frame.is_foreground(q) {
                        let idx = q.y as usize * w + q.x as usize;
                        if label[idx] == 0 {
                            label[idx] = next;
                            queue.push_back(q);
                        }
                    }
                }
            }
            // Strict comparison keeps the earlier component on ties.
            if best.is_none_or(|(_, s)| size > s) {
                best = Some((next, size));
            }
        }
    }
    let (keep, _) = best.ok_or(Error::EmptyMask)?;
    let mask = label.iter().map(|&l| (l == keep) as u8).collect();
    SilhouetteFrame::new(h, w, mask)
}

/// Foreground pixels of `frame` plus every background pixel not reachable
/// from outside the frame through 4-connected background.
pub fn fill_holes(frame: &SilhouetteFrame) -> SilhouetteFrame {
    let (w, h) = (frame.width() as i32, frame.height() as i32);
    // Padded grid so the outside is one connected region.
    let pw = (w + 2) as usize;
    let ph = (h + 2) as usize;
    let mut outside = vec![false; pw * ph];
    let mut queue = VecDeque::from([Pixel::new(-1, -1)]);
    outside[0] = true;
    while let Some(p) = queue.pop_front() {
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let q = p.offset(dx, dy);
            if q.x < -1 || q.y < -1 || q.x > w || q.y > h {
                continue;
            }
            let idx = (q.y + 1) as usize * pw + (q.x + 1) as usize;
            if !outside[idx] && !frame.is_foreground(q) {
                outside[idx] = true;
                queue.push_back(q);
            }
        }
    }
    SilhouetteFrame::from_fn(frame.height(), frame.width(), |x, y| !outside[(y + 1) * pw + x + 1])
}
