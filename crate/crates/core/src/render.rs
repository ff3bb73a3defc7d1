use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::label::{decode_panoptic_id, ClassKind, ClassTable, PanopticMap, IGNORE};

/// Colorizes a panoptic map. Stuff takes the class color, thing instances
/// take per-instance shades of it, IGNORE is black.
pub fn render_colorized(map: &PanopticMap, classes: &ClassTable) -> Result<RgbImage> {
    let mut img = RgbImage::new(map.width() as u32, map.height() as u32);
    for (i, &id) in map.data().iter().enumerate() {
        let color = if id == IGNORE {
            [0, 0, 0]
        } else {
            let (c, inst) = decode_panoptic_id(id)?;
            let entry = classes.get(c).ok_or(Error::UnknownClass(c))?;
            match entry.kind {
                ClassKind::Stuff => entry.color,
                ClassKind::Thing => instance_shade(entry.color, inst),
            }
        };
        let (x, y) = ((i % map.width()) as u32, (i / map.width()) as u32);
        img.put_pixel(x, y, Rgb(color));
    }
    Ok(img)
}

/// XOR with a per-instance 6-bit pattern. The multipliers are odd, so the
/// pattern is a bijection on instance indices mod 64 and the first 64
/// instances of a class never share a color.
fn instance_shade(base: [u8; 3], instance: u16) -> [u8; 3] {
    let k = instance as u32;
    let pattern = [(k * 37) & 0x3f, (k * 91) & 0x3f, (k * 53) & 0x3f];
    [
        base[0] ^ pattern[0] as u8,
        base[1] ^ pattern[1] as u8,
        base[2] ^ pattern[2] as u8,
    ]
}
