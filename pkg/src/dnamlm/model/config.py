"""Encoder shape and hyperparameter description."""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import ConfigInvalid

DTYPES = ("float32", "float64")


@dataclass(frozen=True)
class ModelConfig:
    """Shapes and training-relevant constants of the encoder.

    The defaults are the desk-scale configuration (2 layers, 64 hidden,
    4 heads).  The full-scale reference (12 layers, 768 hidden, 12 heads)
    is constructible via :meth:`full_scale_reference` for shape checks but
    is not a practical desk target.
    """

    vocab_size: int
    num_layers: int = 2
    num_heads: int = 4
    hidden_dim: int = 64
    ff_dim: int = 256
    max_len: int = 128
    num_classes: int = 2
    dropout_rate: float = 0.0
    tie_embeddings: bool = False
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.vocab_size < 6:
            raise ConfigInvalid(f"vocab_size must cover specials + >=1 k-mer, got {self.vocab_size}")
        for name in ("num_layers", "num_heads", "hidden_dim", "ff_dim", "num_classes"):
            if getattr(self, name) < 1:
                raise ConfigInvalid(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.hidden_dim % self.num_heads:
            raise ConfigInvalid(
                f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.max_len < 3:
            raise ConfigInvalid(f"max_len must be >= 3, got {self.max_len}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigInvalid(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.dtype not in DTYPES:
            raise ConfigInvalid(f"dtype must be one of {DTYPES}, got {self.dtype!r}")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads

    @classmethod
    def full_scale_reference(cls, vocab_size: int = 4101, **overrides) -> "ModelConfig":
        """The 12-layer / 768-hidden / 12-head configuration."""
        base = dict(
            vocab_size=vocab_size,
            num_layers=12,
            num_heads=12,
            hidden_dim=768,
            ff_dim=3072,
            max_len=512,
        )
        base.update(overrides)
        return cls(**base)


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every dense parameter array, in a fixed order.

    Per layer: Q/K/V/output projections (no biases), two feed-forward
    matrices with biases, and two layer-norm scale/shift pairs.  The MLM
    output projection is separate unless embeddings are tied, in which case
    only its bias remains and the token embedding matrix is reused.
    """
    d, f, v = config.hidden_dim, config.ff_dim, config.vocab_size
    shapes: dict[str, tuple[int, ...]] = {
        "tok_emb": (v, d),
        "pos_emb": (config.max_len, d),
    }
    for i in range(config.num_layers):
        prefix = f"layer{i}."
        shapes[prefix + "wq"] = (d, d)
        shapes[prefix + "wk"] = (d, d)
        shapes[prefix + "wv"] = (d, d)
        shapes[prefix + "wo"] = (d, d)
        shapes[prefix + "w1"] = (d, f)
        shapes[prefix + "b1"] = (f,)
        shapes[prefix + "w2"] = (f, d)
        shapes[prefix + "b2"] = (d,)
        shapes[prefix + "ln1_g"] = (d,)
        shapes[prefix + "ln1_b"] = (d,)
        shapes[prefix + "ln2_g"] = (d,)
        shapes[prefix + "ln2_b"] = (d,)
    if not config.tie_embeddings:
        shapes["mlm_w"] = (d, v)
    shapes["mlm_b"] = (v,)
    shapes["cls_w"] = (d, config.num_classes)
    shapes["cls_b"] = (config.num_classes,)
    return shapes


def param_count(config: ModelConfig) -> int:
    """Total number of scalar parameters for a configuration.

    The default desk configuration with the k=6 vocabulary (4,101 tokens)
    has exactly 636,807 parameters.
    """
    total = 0
    for shape in param_shapes(config).values():
        n = 1
        for s in shape:
            n *= s
        total += n
    return total
