//! Deliberate gradient faults, used to prove the gradient checker catches them.

use std::sync::atomic::{AtomicBool, Ordering};

static CONV_SIGN_FLIP: AtomicBool = AtomicBool::new(false);

/// Negates the input gradient of every `conv2d` while enabled.
pub fn set_conv_sign_flip(enabled: bool) {
    CONV_SIGN_FLIP.store(enabled, Ordering::SeqCst);
}

pub(crate) fn conv_sign_flip() -> bool {
    CONV_SIGN_FLIP.load(Ordering::SeqCst)
}
