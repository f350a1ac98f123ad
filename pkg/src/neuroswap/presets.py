"""Named configurations used by the acceptance suite and the CLI.

The standard world keeps every WorldConfig default except the image size,
which is reduced to 32x32 so a full ablation fits a single-CPU budget. The
ablation encoder is a narrower version of the default one for the same reason.
"""

from __future__ import annotations

from .encoders import EncoderConfig
from .harness import TrainConfig
from .synthdata import WorldConfig

ABLATION_EPOCHS = 25


def standard_world() -> WorldConfig:
    """4 domains, 6 actions, 8 trials per domain, 32x32 frames."""
    return WorldConfig(image_size=(32, 32))


def ablation_encoder() -> EncoderConfig:
    return EncoderConfig(image_size=(32, 32), input_pool=4, frame_channels=(8,), frame_fc=(64,),
                         neural_temporal_channels=(64, 64, 96), behavior_channels=(64, 64, 96))


def ablation_train(method: str = "ours", epochs: int = ABLATION_EPOCHS, seed: int = 0, **kw) -> TrainConfig:
    """Short-schedule training config: 1 warm-up epoch, lr 1e-3."""
    d = dict(method=method, epochs=epochs, warmup_epochs=min(1, epochs - 1), lr=1e-3, seed=seed,
             encoder=ablation_encoder())
    d.update(kw)
    return TrainConfig(**d)


WORLDS = {"standard": standard_world}
TRAINS = {"ablation": ablation_train}
