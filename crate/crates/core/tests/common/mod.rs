//! Brute-force mask oracles shared by the integration tests.

use mcr::mask::BinaryMask;

pub fn dilate_oracle(m: &BinaryMask, k: usize) -> BinaryMask {
    let (w, h) = (m.width() as isize, m.height() as isize);
    let k = k as isize;
    BinaryMask::from_fn(m.width(), m.height(), |r, c| {
        let (r, c) = (r as isize, c as isize);
        (-k..=k).any(|du| {
            (-k..=k).any(|dv| {
                let (u, v) = (r + du, c + dv);
                u >= 0 && v >= 0 && u < h && v < w && m.get(u as usize, v as usize)
            })
        })
    })
}

pub fn rect_oracle(m: &BinaryMask) -> BinaryMask {
    let set: Vec<(usize, usize)> = (0..m.height())
        .flat_map(|r| (0..m.width()).map(move |c| (r, c)))
        .filter(|&(r, c)| m.get(r, c))
        .collect();
    let r0 = set.iter().map(|p| p.0).min().unwrap();
    let r1 = set.iter().map(|p| p.0).max().unwrap();
    let c0 = set.iter().map(|p| p.1).min().unwrap();
    let c1 = set.iter().map(|p| p.1).max().unwrap();
    BinaryMask::from_fn(m.width(), m.height(), |r, c| {
        (r0..=r1).contains(&r) && (c0..=c1).contains(&c)
    })
}
