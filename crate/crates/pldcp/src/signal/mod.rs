//! Raw-recording feature pipeline: per-band zero-phase filtering, windowed
//! differential entropy, and LDS smoothing across each trial's windows.

mod filter;
mod lds;

pub use filter::{bandpass, Bandpass};
pub use lds::{lds_smooth, LdsParams};

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};

/// Windows with variance below this are floored (and counted) before the log.
pub const DE_VARIANCE_FLOOR: f64 = 1e-10;

/// A named frequency band.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub name: String,
    pub low_hz: f64,
    pub high_hz: f64,
}

impl BandSpec {
    pub fn new(name: &str, low_hz: f64, high_hz: f64) -> Self {
        BandSpec {
            name: name.into(),
            low_hz,
            high_hz,
        }
    }
}

/// The five standard EEG bands.
pub fn default_bands() -> Vec<BandSpec> {
    vec![
        BandSpec::new("delta", 1.0, 3.0),
        BandSpec::new("theta", 4.0, 7.0),
        BandSpec::new("alpha", 8.0, 12.0),
        BandSpec::new("beta", 14.0, 30.0),
        BandSpec::new("gamma", 31.0, 50.0),
    ]
}

/// One multi-channel trial recording.
#[derive(Clone, Debug)]
pub struct Recording {
    pub sample_rate: f64,
    pub subject: u32,
    pub session: u32,
    pub trial: u32,
    pub label: u32,
    /// channels[c] is the full time series of channel c.
    pub channels: Vec<Vec<f64>>,
}

/// Sidecar metadata for a raw recording CSV.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub sample_rate: f64,
    pub subject: u32,
    pub session: u32,
    pub trial: u32,
    pub label: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub window_seconds: f64,
    pub bands: Vec<BandSpec>,
    /// Broadband zero-phase prefilter applied before the per-band filters.
    pub prefilter: Option<(f64, f64)>,
    /// Per-feature smoothing across each trial's windows; None disables it.
    pub lds: Option<LdsParams>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            window_seconds: 1.0,
            bands: default_bands(),
            prefilter: Some((0.3, 50.0)),
            lds: Some(LdsParams::default()),
        }
    }
}

/// Bookkeeping from one extraction run.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ExtractStats {
    pub n_windows: usize,
    /// Windows whose variance had to be floored before the log.
    pub floored_windows: usize,
}

/// Differential entropy of one band-filtered window: 0.5 ln(2 pi e var),
/// with the unbiased variance estimator. Returns (value, floored).
pub fn de_feature(window: &[f64]) -> Result<(f64, bool)> {
    let n = window.len();
    if n < 2 {
        return Err(Error::Data(format!(
            "differential entropy needs at least 2 samples per window, got {n}"
        )));
    }
    let mean = window.iter().sum::<f64>() / n as f64;
    let ss = window.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>();
    let var = ss / (n - 1) as f64;
    let (var, floored) = if var < DE_VARIANCE_FLOOR {
        (DE_VARIANCE_FLOOR, true)
    } else {
        (var, false)
    };
    let value = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * var).ln();
    Ok((value, floored))
}

/// Split a channel into non-overlapping windows of `window_len` samples;
/// trailing samples that do not fill a window are dropped.
pub fn segment(channel: &[f64], window_len: usize) -> Result<Vec<&[f64]>> {
    if window_len < 2 {
        return Err(Error::Config(format!(
            "window length must be at least 2 samples, got {window_len}"
        )));
    }
    if channel.len() < window_len {
        return Err(Error::Data(format!(
            "recording is shorter than one window ({} < {window_len} samples)",
            channel.len()
        )));
    }
    Ok(channel.chunks_exact(window_len).collect())
}

/// Run the full pipeline over one recording. Feature order is channel-major,
/// band-minor: feature index = channel * n_bands + band.
pub fn extract_features(
    recording: &Recording,
    config: &FeatureConfig,
) -> Result<(Vec<Sample>, ExtractStats)> {
    let n_channels = recording.channels.len();
    if n_channels == 0 {
        return Err(Error::Data("recording has no channels".into()));
    }
    let len = recording.channels[0].len();
    for (c, ch) in recording.channels.iter().enumerate() {
        if ch.len() != len {
            return Err(Error::shape(
                "extract_features",
                format!("{len} samples per channel"),
                format!("{} on channel {c}", ch.len()),
            ));
        }
    }
    if config.bands.is_empty() {
        return Err(Error::Config("no frequency bands configured".into()));
    }
    let window_len = (config.window_seconds * recording.sample_rate).round() as usize;
    if window_len < 2 {
        return Err(Error::Config(format!(
            "window of {} s is shorter than 2 samples at {} Hz",
            config.window_seconds, recording.sample_rate
        )));
    }
    let n_windows = len / window_len;
    if n_windows == 0 {
        return Err(Error::Data(format!(
            "recording is shorter than one window ({len} samples < {window_len})"
        )));
    }

    let prefiltered: Vec<Vec<f64>> = match config.prefilter {
        Some((low, high)) => {
            let filt = Bandpass::design(low, high, recording.sample_rate)?;
            recording
                .channels
                .iter()
                .map(|ch| filt.filtfilt(ch))
                .collect::<Result<_>>()?
        }
        None => recording.channels.clone(),
    };

    let n_bands = config.bands.len();
    let feature_dim = n_channels * n_bands;
    // features[w][channel * n_bands + band]
    let mut features = vec![vec![0.0; feature_dim]; n_windows];
    let mut stats = ExtractStats {
        n_windows,
        floored_windows: 0,
    };

    for (b, band) in config.bands.iter().enumerate() {
        let filt = Bandpass::design(band.low_hz, band.high_hz, recording.sample_rate)?;
        for (c, channel) in prefiltered.iter().enumerate() {
            let filtered = filt.filtfilt(channel)?;
            let windows = segment(&filtered, window_len)?;
            for (w, win) in windows.iter().take(n_windows).enumerate() {
                let (value, floored) = de_feature(win)?;
                if floored {
                    stats.floored_windows += 1;
                }
                features[w][c * n_bands + b] = value;
            }
        }
    }

    if let Some(params) = &config.lds {
        let mut series = vec![0.0; n_windows];
        for f in 0..feature_dim {
            for w in 0..n_windows {
                series[w] = features[w][f];
            }
            let smoothed = lds_smooth(&series, params)?;
            for w in 0..n_windows {
                features[w][f] = smoothed[w];
            }
        }
    }

    let samples = features
        .into_iter()
        .enumerate()
        .map(|(w, feats)| Sample {
            id: w as u64,
            subject: recording.subject,
            session: recording.session,
            trial: recording.trial,
            label: recording.label,
            features: feats,
        })
        .collect();
    Ok((samples, stats))
}

/// Sidecar path for a raw recording CSV: `rec.csv` -> `rec.json`.
pub fn recording_meta_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Read a raw recording: CSV with header `ch_0,..,ch_{C-1}`, one row per time
/// step, plus the JSON sidecar with sample rate and provenance coordinates.
pub fn read_recording(csv_path: &Path) -> Result<Recording> {
    let meta_file = recording_meta_path(csv_path);
    let meta_text = fs::read_to_string(&meta_file)
        .map_err(|e| Error::io(format!("reading sidecar {}", meta_file.display()), e))?;
    let meta: RecordingMeta = serde_json::from_str(&meta_text)?;
    if !(meta.sample_rate > 0.0) {
        return Err(Error::Data(format!(
            "sidecar {} declares non-positive sample_rate {}",
            meta_file.display(),
            meta.sample_rate
        )));
    }

    let text = fs::read_to_string(csv_path)
        .map_err(|e| Error::io(format!("reading recording {}", csv_path.display()), e))?;
    let path_str = csv_path.display().to_string();
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path_str.clone(),
        line,
        msg,
    };

    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty recording file".into()))?;
    let names: Vec<&str> = header.trim_end().split(',').collect();
    for (c, name) in names.iter().enumerate() {
        if *name != format!("ch_{c}") {
            return Err(parse_err(
                1,
                format!("expected header column `ch_{c}`, found `{name}`"),
            ));
        }
    }
    let n_channels = names.len();

    let mut channels: Vec<Vec<f64>> = vec![Vec::new(); n_channels];
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n_channels {
            return Err(parse_err(
                line_no,
                format!("row has {} columns, header has {n_channels}", fields.len()),
            ));
        }
        for (c, raw) in fields.iter().enumerate() {
            let x: f64 = raw
                .parse()
                .map_err(|_| parse_err(line_no, format!("invalid value `{raw}`")))?;
            channels[c].push(x);
        }
    }
    if channels[0].is_empty() {
        return Err(parse_err(1, "recording has a header but no rows".into()));
    }
    Ok(Recording {
        sample_rate: meta.sample_rate,
        subject: meta.subject,
        session: meta.session,
        trial: meta.trial,
        label: meta.label,
        channels,
    })
}
