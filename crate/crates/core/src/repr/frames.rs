use super::{ReprError, Result};

/// Number of full frames of `window` samples at stride `hop`.
pub fn frame_count(len: usize, window: usize, hop: usize) -> Option<usize> {
    (len >= window).then(|| (len - window) / hop + 1)
}

/// Splits a signal into overlapping frames. A trailing partial frame is
/// dropped rather than padded.
pub fn frame_signal(samples: &[f32], window: usize, hop: usize) -> Result<Vec<&[f32]>> {
    assert!(window > 0 && hop > 0, "window and hop must be positive");
    let n = frame_count(samples.len(), window, hop).ok_or(ReprError::InputTooShort {
        len: samples.len(),
        window,
    })?;
    Ok((0..n).map(|i| &samples[i * hop..i * hop + window]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn nsynth_length_gives_369_frames() {
        let x = vec![0.0f32; 64000];
        let frames = frame_signal(&x, 690, 172).unwrap();
        assert_eq!(frames.len(), 369);
        // last frame start must still fit
        assert!(368 * 172 + 690 <= 64000);
        assert!(369 * 172 + 690 > 64000);
    }

    #[test]
    fn exact_window_is_one_frame() {
        assert_eq!(frame_signal(&[0.0; 690], 690, 172).unwrap().len(), 1);
    }

    #[test]
    fn below_window_is_rejected() {
        assert!(matches!(
            frame_signal(&[0.0; 689], 690, 172),
            Err(ReprError::InputTooShort { len: 689, window: 690 })
        ));
    }

    proptest! {
        #[test]
        fn count_matches_enumerated_starts(len in 690usize..20_000) {
            let x = vec![0.0f32; len];
            let frames = frame_signal(&x, 690, 172).unwrap();
            let starts = (0..).map(|i| i * 172).take_while(|s| s + 690 <= len).count();
            prop_assert_eq!(frames.len(), starts);
            prop_assert_eq!(frames.len(), (len - 690) / 172 + 1);
            prop_assert!(frames.iter().all(|f| f.len() == 690));
        }
    }
}
