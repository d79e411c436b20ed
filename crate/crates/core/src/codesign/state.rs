use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Moments, TrainState};
use crate::decoder::{load_checkpoint, save_checkpoint};
use crate::error::{Error, Result};
use crate::io::{self, raw};
use crate::optics::Pupil;

pub const STATE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StateFile {
    version: u32,
    step: u64,
    seed: u64,
    history: Vec<f64>,
    mask_moments: Moments<f64>,
    decoder_moments: Vec<Moments<f32>>,
}

/// Writes `mask.bin`, `decoder.bin` and `state.json` (optimizer moments,
/// step, seed, loss history) into `dir`.
pub fn save_state(dir: &Path, state: &TrainState, pupil: &Pupil) -> Result<()> {
    fs::create_dir_all(dir)?;
    io::save_mask(&dir.join("mask.bin"), &state.mask, pupil)?;
    save_checkpoint(&dir.join("decoder.bin"), &state.decoder, state.normalization)?;
    let file = StateFile {
        version: STATE_VERSION,
        step: state.step,
        seed: state.seed,
        history: state.history.clone(),
        mask_moments: state.mask_moments.clone(),
        decoder_moments: state.decoder_moments.clone(),
    };
    fs::write(dir.join("state.json"), serde_json::to_string(&file)?)?;
    Ok(())
}

pub fn load_state(dir: &Path, pupil: &Pupil) -> Result<TrainState> {
    let path = dir.join("state.json");
    let file: StateFile = serde_json::from_str(&fs::read_to_string(&path)?)?;
    raw::check_version(&path, STATE_VERSION, file.version)?;
    let mask = io::load_mask(&dir.join("mask.bin"), pupil)?;
    let (decoder, manifest) = load_checkpoint(&dir.join("decoder.bin"))?;
    let congruent = file.mask_moments.m.len() == mask.phase().len()
        && file.mask_moments.v.len() == mask.phase().len()
        && file.decoder_moments.len() == decoder.tensors().count()
        && file.decoder_moments.iter().zip(decoder.tensors()).all(|(m, t)| m.m.len() == t.len() && m.v.len() == t.len());
    if !congruent {
        return Err(Error::corrupt(&path, "optimizer moments do not match parameter shapes"));
    }
    Ok(TrainState {
        mask,
        decoder,
        mask_moments: file.mask_moments,
        decoder_moments: file.decoder_moments,
        normalization: manifest.normalization,
        step: file.step,
        seed: file.seed,
        history: file.history,
    })
}
