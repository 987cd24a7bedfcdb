use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use super::attribution::AttributionMap;
use super::partition::Modality;
use crate::corpus::{ImageTensor, IMAGE_SIDE};
use crate::error::{Error, Result};

const CELL: u32 = 24;
const CELLS_PER_ROW: usize = 16;

/// Min-max scaling into `[0, 1]`; a flat map sits at 0.5.
fn normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.5; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Blue (low) to red (high).
pub fn blue_red(t: f64) -> Rgb<u8> {
    let t = t.clamp(0.0, 1.0);
    Rgb([(255.0 * t).round() as u8, 0, (255.0 * (1.0 - t)).round() as u8])
}

/// Blue (low) to yellow (high).
pub fn blue_yellow(t: f64) -> Rgb<u8> {
    let t = t.clamp(0.0, 1.0);
    let w = (255.0 * t).round() as u8;
    Rgb([w, w, 255 - w])
}

/// Pixel heatmap, blended half and half with `base` when given.
pub fn render_image_heatmap(map: &AttributionMap, base: Option<&ImageTensor>) -> Result<RgbImage> {
    let side = match (map.modality, map.grid_side) {
        (Modality::Image, Some(s)) => s,
        _ => return Err(Error::InvalidArgument("not an image attribution".into())),
    };
    if base.is_some() && side != IMAGE_SIDE {
        return Err(Error::Shape(format!("{side}-pixel map over a {IMAGE_SIDE}-pixel image")));
    }
    let t = normalize(&map.feature_values);
    Ok(RgbImage::from_fn(side as u32, side as u32, |x, y| {
        let (r, c) = (y as usize, x as usize);
        let heat = blue_red(t[r * side + c]);
        match base {
            None => heat,
            Some(img) => Rgb(std::array::from_fn(|ch| {
                (0.5 * f64::from(heat[ch]) + 127.5 * f64::from(img.at(r, c, ch))).round() as u8
            })),
        }
    }))
}

/// One colored cell per input word, wrapped into rows.
pub fn render_text_heatmap(map: &AttributionMap) -> Result<RgbImage> {
    if map.modality != Modality::Text {
        return Err(Error::InvalidArgument("not a text attribution".into()));
    }
    let n = map.feature_values.len();
    let cols = n.clamp(1, CELLS_PER_ROW);
    let rows = n.div_ceil(CELLS_PER_ROW).max(1);
    let t = normalize(&map.feature_values);
    Ok(RgbImage::from_fn(cols as u32 * CELL, rows as u32 * CELL, |x, y| {
        let i = (y / CELL) as usize * CELLS_PER_ROW + (x / CELL) as usize;
        // one-pixel white gutter between cells
        if i >= n || x % CELL == 0 || y % CELL == 0 {
            Rgb([255, 255, 255])
        } else {
            blue_yellow(t[i])
        }
    }))
}

/// Words on their attribution colors, for reading alongside the PNG.
pub fn render_text_html(map: &AttributionMap) -> Result<String> {
    if map.modality != Modality::Text {
        return Err(Error::InvalidArgument("not a text attribution".into()));
    }
    let t = normalize(&map.feature_values);
    let mut out = String::from("<!doctype html>\n<meta charset=\"utf-8\">\n<p>");
    for (w, &v) in map.words.iter().zip(&t) {
        let Rgb([r, g, b]) = blue_yellow(v);
        let fg = if v < 0.5 { "#fff" } else { "#000" };
        let w = w.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
        let _ = write!(out, "<span style=\"background:#{r:02x}{g:02x}{b:02x};color:{fg};padding:2px\">{w}</span> ");
    }
    let _ = writeln!(out, "</p>\n<p>feedback: {}</p>", map.feedback.replace('<', "&lt;"));
    Ok(out)
}

/// Writes `{stem}.json` and `{stem}.png` (plus `{stem}.html` for text).
pub fn save_attribution(
    map: &AttributionMap,
    dir: &Path,
    stem: &str,
    base: Option<&ImageTensor>,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = dir.join(format!("{stem}.json"));
    std::fs::write(&json, serde_json::to_string_pretty(map)?).map_err(|e| Error::io(&json, e))?;
    let png = dir.join(format!("{stem}.png"));
    let mut written = vec![json];
    match map.modality {
        Modality::Image => render_image_heatmap(map, base)?.save(&png)?,
        Modality::Text => {
            render_text_heatmap(map)?.save(&png)?;
            let html = dir.join(format!("{stem}.html"));
            std::fs::write(&html, render_text_html(map)?).map_err(|e| Error::io(&html, e))?;
            written.push(html);
        }
    }
    written.push(png);
    Ok(written)
}
