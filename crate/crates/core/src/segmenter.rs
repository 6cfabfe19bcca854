//! Fixed-capacity document segmentation.

use std::ops::Range;

use crate::error::{Error, Result};

/// A contiguous run of document tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub index: usize,
    /// Half-open span into the document token sequence.
    pub span: Range<usize>,
    pub tokens: Vec<String>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Splits `tokens` into `ceil(N / k)` segments of `k` tokens; the last one keeps the remainder.
pub fn segment<S: AsRef<str>>(tokens: &[S], k: usize) -> Result<Vec<Segment>> {
    if k == 0 {
        return Err(Error::InvalidConfig("segment size k must be >= 1".into()));
    }
    Ok(tokens
        .chunks(k)
        .enumerate()
        .map(|(index, chunk)| {
            let start = index * k;
            Segment {
                index,
                span: start..start + chunk.len(),
                tokens: chunk.iter().map(|t| t.as_ref().to_string()).collect(),
            }
        })
        .collect())
}

/// Overlapping windows, one starting at every multiple of `window - overlap`
/// below the document length. Trailing windows may be short.
pub fn sliding_windows<S: AsRef<str>>(
    tokens: &[S],
    window: usize,
    overlap: usize,
) -> Result<Vec<Segment>> {
    if window == 0 {
        return Err(Error::InvalidConfig("window must be >= 1".into()));
    }
    if overlap >= window {
        return Err(Error::InvalidConfig(format!(
            "overlap ({overlap}) must be smaller than window ({window})"
        )));
    }
    let stride = window - overlap;
    let n = tokens.len();
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + window).min(n);
        out.push(Segment {
            index: out.len(),
            span: start..end,
            tokens: tokens[start..end]
                .iter()
                .map(|t| t.as_ref().to_string())
                .collect(),
        });
        start += stride;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("t{i}")).collect()
    }

    #[test]
    fn ten_by_four() {
        let segs = segment(&doc(10), 4).unwrap();
        let lens: Vec<_> = segs.iter().map(Segment::len).collect();
        assert_eq!(lens, vec![4, 4, 2]);
        assert_eq!(segs[2].span, 8..10);
    }

    #[test]
    fn empty_document() {
        assert!(segment(&doc(0), 4).unwrap().is_empty());
    }

    #[test]
    fn exact_single_segment() {
        assert_eq!(segment(&doc(256), 256).unwrap().len(), 1);
    }

    #[test]
    fn zero_k_rejected() {
        assert!(matches!(segment(&doc(3), 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn windows_with_half_overlap() {
        let w = sliding_windows(&doc(512), 256, 128).unwrap();
        let starts: Vec<_> = w.iter().map(|s| s.span.start).collect();
        assert_eq!(starts, vec![0, 128, 256, 384]);
        assert_eq!(w[3].span, 384..512);
    }

    #[test]
    fn short_document_single_window() {
        let w = sliding_windows(&doc(100), 256, 128).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].span, 0..100);
    }

    #[test]
    fn overlap_equal_window_rejected() {
        assert!(sliding_windows(&doc(10), 4, 4).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn partition_covers_document(n in 0usize..100_000, k in 1usize..4096) {
            let tokens = doc(n);
            let segs = segment(&tokens, k).unwrap();
            prop_assert_eq!(segs.len(), n.div_ceil(k));
            let mut next = 0;
            for (i, s) in segs.iter().enumerate() {
                prop_assert_eq!(s.index, i);
                prop_assert_eq!(s.span.start, next);
                prop_assert!(!s.is_empty() && s.len() <= k);
                if i + 1 < segs.len() {
                    prop_assert_eq!(s.len(), k);
                }
                prop_assert_eq!(&s.tokens[..], &tokens[s.span.clone()]);
                next = s.span.end;
            }
            prop_assert_eq!(next, n);
        }
    }
}
