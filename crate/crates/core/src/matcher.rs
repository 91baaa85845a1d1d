//! Clip-to-soundtrack assignment by minimum sliding chroma distance.

use serde::{Deserialize, Serialize};

use crate::audio::ChromaMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub track_id: String,
    pub distance: f64,
    pub offset_frames: usize,
}

fn is_silent(col: &[f64; 12]) -> bool {
    col.iter().all(|&v| v == 0.0)
}

/// Distance between two chroma columns. Unit columns use Euclidean distance;
/// a silent column is at distance 0 from another silent column and sqrt(2)
/// from any active one.
pub fn column_distance(a: &[f64; 12], b: &[f64; 12]) -> f64 {
    match (is_silent(a), is_silent(b)) {
        (true, true) => 0.0,
        (true, false) | (false, true) => std::f64::consts::SQRT_2,
        (false, false) => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt(),
    }
}

/// Mean column distance of `clip` laid over `track` starting at `offset`.
pub fn distance_at(clip: &ChromaMatrix, track: &ChromaMatrix, offset: usize) -> f64 {
    let cols = clip.columns();
    if cols.is_empty() {
        return 0.0;
    }
    let t = &track.columns()[offset..offset + cols.len()];
    cols.iter()
        .zip(t)
        .map(|(a, b)| column_distance(a, b))
        .sum::<f64>()
        / cols.len() as f64
}

/// Minimum over all offsets of the mean aligned-column distance, with the
/// smallest minimizing offset.
pub fn chroma_distance(clip: &ChromaMatrix, track: &ChromaMatrix) -> Result<(f64, usize)> {
    if clip.len() > track.len() {
        return Err(Error::ClipTooLong {
            clip: clip.len(),
            track: track.len(),
        });
    }
    let mut best = (f64::INFINITY, 0);
    for offset in 0..=track.len() - clip.len() {
        let d = distance_at(clip, track, offset);
        if d < best.0 {
            best = (d, offset);
        }
    }
    Ok(best)
}

/// Picks the track with the smallest chroma distance. Tracks shorter than the
/// clip are skipped; ties go to the earliest track.
pub fn assign(clip: &ChromaMatrix, tracks: &[(String, ChromaMatrix)]) -> Result<MatchResult> {
    let mut best: Option<MatchResult> = None;
    for (id, track) in tracks {
        let Ok((distance, offset_frames)) = chroma_distance(clip, track) else {
            continue;
        };
        if best.as_ref().is_none_or(|b| distance < b.distance) {
            best = Some(MatchResult {
                track_id: id.clone(),
                distance,
                offset_frames,
            });
        }
    }
    best.ok_or(Error::NoCandidate)
}
