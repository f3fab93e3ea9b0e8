//! Runtime selection of wider vector instructions for hot loops.
//!
//! The baseline build only assumes SSE2. `wide` compiles its closure a second
//! time with AVX2 enabled and runs that copy when the CPU supports it. Rust
//! never fuses multiplies and adds on its own, so both copies produce the same
//! bits and results stay reproducible across machines.

/// Runs `f`, inlined into an AVX2 context when available.
#[inline]
pub fn wide<R>(f: impl FnOnce() -> R) -> R {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime.
            return unsafe { avx2(f) };
        }
    }
    f()
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn avx2<R>(f: impl FnOnce() -> R) -> R {
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wide_runs_the_closure_once() {
        let mut calls = 0;
        let v = wide(|| {
            calls += 1;
            (0..100).map(|i| i as f32 * 0.5).sum::<f32>()
        });
        assert_eq!(calls, 1);
        assert_eq!(v, 2475.0);
    }
}
