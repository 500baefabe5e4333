//! PCM16 WAV decoding and fixed-length segmentation.

use std::io::Cursor;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The only sample rate accepted; there is no resampling.
pub const SAMPLE_RATE: u32 = 16_000;

/// Which channel of the file becomes the mono signal.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    /// The only channel of a mono file, or the average of both channels of a stereo file.
    #[default]
    Mono,
    Left,
    /// Second channel of a stereo file (the vocal track in MIR-1K).
    Right,
}

impl Channel {
    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Mono => "mono",
            Channel::Left => "left",
            Channel::Right => "right",
        }
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mono" => Ok(Channel::Mono),
            "left" => Ok(Channel::Left),
            "right" => Ok(Channel::Right),
            other => Err(Error::Manifest(format!("unknown channel `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AudioTrack {
    pub track_id: String,
    /// Samples in `[-1, 1)`.
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub label: usize,
    pub artist_name: String,
}

impl AudioTrack {
    pub fn new(track_id: impl Into<String>, samples: Vec<f32>, label: usize, artist_name: impl Into<String>) -> Self {
        Self {
            track_id: track_id.into(),
            samples,
            sample_rate: SAMPLE_RATE,
            label,
            artist_name: artist_name.into(),
        }
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// A fixed-length block of a track carrying the track's label.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub parent_track_id: String,
    pub offset: usize,
    pub samples: Vec<f32>,
    pub label: usize,
}

impl Segment {
    /// `<track_id>@<offset>`, unique within a dataset.
    pub fn id(&self) -> String {
        format!("{}@{}", self.parent_track_id, self.offset)
    }
}

/// Decodes a 16 kHz PCM16 RIFF/WAVE file with one or two channels.
///
/// The returned track has an empty id and label 0; callers attach metadata.
pub fn decode_wav(bytes: &[u8], channel: Channel) -> Result<AudioTrack> {
    let reader = hound::WavReader::new(Cursor::new(bytes)).map_err(|e| Error::Format(e.to_string()))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Format(format!(
            "expected 16-bit integer PCM, got {} bits {:?}",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    if !(1..=2).contains(&spec.channels) {
        return Err(Error::Format(format!("expected 1 or 2 channels, got {}", spec.channels)));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::SampleRate {
            found: spec.sample_rate,
            expected: SAMPLE_RATE,
        });
    }
    let stereo = spec.channels == 2;
    if channel == Channel::Right && !stereo {
        return Err(Error::Channel("right channel requested from a mono file".into()));
    }
    let raw: Vec<i16> = reader
        .into_samples::<i16>()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Format(e.to_string()))?;
    let scale = |v: i16| v as f32 / 32768.0;
    let samples = if !stereo {
        raw.into_iter().map(scale).collect()
    } else {
        raw.chunks_exact(2)
            .map(|frame| match channel {
                Channel::Left => scale(frame[0]),
                Channel::Right => scale(frame[1]),
                // exact in f32: both halves are multiples of 2^-16
                Channel::Mono => (scale(frame[0]) + scale(frame[1])) * 0.5,
            })
            .collect()
    };
    Ok(AudioTrack::new("", samples, 0, ""))
}

/// Frame count of a WAV file without decoding the samples.
pub fn wav_frames(bytes: &[u8]) -> Result<usize> {
    let reader = hound::WavReader::new(Cursor::new(bytes)).map_err(|e| Error::Format(e.to_string()))?;
    Ok(reader.duration() as usize)
}

/// Encodes interleaved PCM16 frames as a WAV file.
pub fn encode_wav(interleaved: &[i16], channels: u16, sample_rate: u32) -> Result<Vec<u8>> {
    let spec = hound::WavSpec {
        channels,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut buf = Cursor::new(Vec::new());
    {
        let mut w = hound::WavWriter::new(&mut buf, spec).map_err(|e| Error::Format(e.to_string()))?;
        for &s in interleaved {
            w.write_sample(s).map_err(|e| Error::Format(e.to_string()))?;
        }
        w.finalize().map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(buf.into_inner())
}

/// Quantizes `[-1, 1]` floats to PCM16, clamping out-of-range values.
pub fn to_pcm16(samples: &[f32]) -> Vec<i16> {
    samples
        .iter()
        .map(|&s| (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16)
        .collect()
}

/// Non-overlapping windows of `seg_len` samples from offset 0; the incomplete tail is dropped.
pub fn segment_track(track: &AudioTrack, seg_len: usize) -> Vec<Segment> {
    assert!(seg_len >= 1, "segment length must be positive");
    track
        .samples
        .chunks_exact(seg_len)
        .enumerate()
        .map(|(i, chunk)| Segment {
            parent_track_id: track.track_id.clone(),
            offset: i * seg_len,
            samples: chunk.to_vec(),
            label: track.label,
        })
        .collect()
}

/// Segment length in samples for a duration in seconds.
pub fn seconds_to_samples(seconds: f64) -> usize {
    (seconds * SAMPLE_RATE as f64).round() as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zeros_decode_to_zeros() {
        let wav = encode_wav(&[0, 0, 0], 1, SAMPLE_RATE).unwrap();
        assert_eq!(decode_wav(&wav, Channel::Mono).unwrap().samples, vec![0.0; 3]);
    }

    #[test]
    fn half_scale() {
        let wav = encode_wav(&[16384], 1, SAMPLE_RATE).unwrap();
        assert_eq!(decode_wav(&wav, Channel::Mono).unwrap().samples, vec![0.5]);
    }

    #[test]
    fn right_channel_of_stereo() {
        let frames = 50;
        let interleaved: Vec<i16> = (0..frames).flat_map(|_| [1000i16, -8192]).collect();
        let wav = encode_wav(&interleaved, 2, SAMPLE_RATE).unwrap();
        let right = decode_wav(&wav, Channel::Right).unwrap();
        assert_eq!(right.samples.len(), frames);
        assert!(right.samples.iter().all(|&s| s == -0.25));
        let left = decode_wav(&wav, Channel::Left).unwrap();
        assert!(left.samples.iter().all(|&s| s == 1000.0 / 32768.0));
    }

    #[test]
    fn right_channel_of_mono_is_an_error() {
        let wav = encode_wav(&[1, 2, 3], 1, SAMPLE_RATE).unwrap();
        assert!(matches!(decode_wav(&wav, Channel::Right), Err(Error::Channel(_))));
    }

    #[test]
    fn wrong_rate_is_an_error() {
        let wav = encode_wav(&[1, 2, 3], 1, 44_100).unwrap();
        assert!(matches!(
            decode_wav(&wav, Channel::Mono),
            Err(Error::SampleRate { found: 44_100, .. })
        ));
    }

    #[test]
    fn garbage_is_a_format_error() {
        assert!(matches!(decode_wav(b"RIFF0000WAVEjunk", Channel::Mono), Err(Error::Format(_))));
        assert!(matches!(decode_wav(&[], Channel::Mono), Err(Error::Format(_))));
    }

    #[test]
    fn segmentation_counts() {
        let mk = |n: usize| AudioTrack::new("t", vec![0.1; n], 3, "a");
        let segs = segment_track(&mk(48_500), 16_000);
        assert_eq!(segs.iter().map(|s| s.offset).collect::<Vec<_>>(), vec![0, 16_000, 32_000]);
        assert!(segs.iter().all(|s| s.label == 3 && s.samples.len() == 16_000));
        assert!(segment_track(&mk(15_999), 16_000).is_empty());
        assert_eq!(segment_track(&mk(32_000), 16_000).len(), 2);
        assert!(segment_track(&mk(0), 16_000).is_empty());
    }

    proptest! {
        #[test]
        fn pcm16_round_trips(values in proptest::collection::vec(any::<i16>(), 0..300)) {
            let wav = encode_wav(&values, 1, SAMPLE_RATE).unwrap();
            let track = decode_wav(&wav, Channel::Mono).unwrap();
            prop_assert!(track.samples.iter().all(|s| (-1.0..1.0).contains(s)));
            prop_assert_eq!(to_pcm16(&track.samples), values);
        }

        #[test]
        fn segments_tile_the_prefix(len in 0usize..5000, seg_len in 1usize..700) {
            let samples: Vec<f32> = (0..len).map(|i| i as f32).collect();
            let track = AudioTrack::new("t", samples.clone(), 0, "a");
            let segs = segment_track(&track, seg_len);
            prop_assert_eq!(segs.len(), len / seg_len);
            let joined: Vec<f32> = segs.iter().flat_map(|s| s.samples.clone()).collect();
            prop_assert_eq!(&joined[..], &samples[..(len / seg_len) * seg_len]);
        }
    }
}
