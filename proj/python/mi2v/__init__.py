"""Python access to the mi2v image-to-video reference core."""

import numpy as np

from ._mi2v import (
    LatentSpec,
    Mi2vError,
    attention,
    cli,
    decode_container,
    dmd_gradient_field,
    dmd_surrogate,
    dual_form_max_error,
    emit_pgm_preview,
    encode_container,
    flow_coefficients,
    loss_adv_discriminator,
    loss_fake_score,
    loss_regression,
    noise_forward,
    parameter_count,
    schedule_eval,
    sliced_wasserstein,
    token_count,
    token_timesteps,
    verify_report,
)
from ._mi2v import generate as _generate

CHANNELS = 128


def generate(spec="1280x720x17", steps=2, motion=1.0, seed=0, preset="desk", weights_seed=0, reference=None):
    """Sample a latent of shape (tokens, 128). Without a reference, a seeded one is drawn."""
    parsed = LatentSpec.parse(spec)
    if reference is None:
        rng = np.random.default_rng(seed)
        reference = rng.standard_normal((parsed.frame_tokens, CHANNELS)).astype(np.float32)
    return _generate(spec, steps, motion, seed, preset, weights_seed, reference)


__all__ = [name for name in dir() if not name.startswith("_")]
