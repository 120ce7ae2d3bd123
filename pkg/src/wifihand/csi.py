"""CSI pre-processing: per-packet power normalization, real/imaginary
stacking, and the bias-free grouped signal embedding."""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

DEFAULT_SUBCARRIERS = 114
DEFAULT_PACKETS = 20
DEFAULT_ANTENNAS = 3
DEFAULT_EMBED_FILTERS = 8


def validate_sample(values):
    values = np.asarray(values)
    if values.ndim != 3:
        raise ShapeError(f"CSI sample must be F x T x Ant, got {values.shape}")
    if not np.all(np.isfinite(values.real)) or not np.all(np.isfinite(values.imag)):
        raise ShapeError("CSI sample contains non-finite values")
    return values.astype(np.complex128)


def normalize_packet(h):
    """Scale one packet's subcarrier vector to unit mean magnitude.

    Phase is untouched: the divisor is real and positive.
    """
    h = np.asarray(h, dtype=np.complex128)
    mean_mag = np.mean(np.abs(h))
    if mean_mag <= 0.0:
        raise ValueError("cannot normalize an all-zero packet")
    return h / mean_mag


def normalize_sample(values):
    """Per-packet normalization applied independently per (t, antenna)."""
    values = validate_sample(values)
    mean_mag = np.mean(np.abs(values), axis=0, keepdims=True)
    if np.any(mean_mag <= 0.0):
        raise ValueError("cannot normalize an all-zero packet")
    return values / mean_mag


def stack_real_imag(values):
    """F x T x Ant complex -> F x T x 2*Ant real; antenna a holds its
    real part in channel 2a and imaginary part in channel 2a+1."""
    values = validate_sample(values)
    f, t, ant = values.shape
    out = np.empty((f, t, 2 * ant), dtype=np.float64)
    out[:, :, 0::2] = values.real
    out[:, :, 1::2] = values.imag
    return out


def unstack_real_imag(tensor):
    tensor = np.asarray(tensor)
    if tensor.ndim != 3 or tensor.shape[2] % 2:
        raise ShapeError(f"stacked tensor must be F x T x 2*Ant, got {tensor.shape}")
    return tensor[:, :, 0::2] + 1j * tensor[:, :, 1::2]


@dataclass(frozen=True)
class EmbeddingWeights:
    """Grouped 1x1 embedding filters, one weight set per antenna.

    ``w`` has shape (Ant, C_e) in the shared-weight form E_i = w_i(a+b),
    or (Ant, C_e, 2) in the two-weight variant E_i = w_i1*a + w_i2*b.
    There is no bias term.
    """

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        if w.ndim not in (2, 3) or (w.ndim == 3 and w.shape[2] != 2):
            raise ShapeError("weights must be (Ant, C_e) or (Ant, C_e, 2)")
        if not np.all(np.isfinite(w)):
            raise ValueError("embedding weights must be finite")
        object.__setattr__(self, "w", w)

    @property
    def antennas(self):
        return self.w.shape[0]

    @property
    def filters_per_group(self):
        return self.w.shape[1]

    @classmethod
    def initialize(cls, rng, antennas=DEFAULT_ANTENNAS,
                   filters=DEFAULT_EMBED_FILTERS, two_weight=False):
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        shape = (antennas, filters, 2) if two_weight else (antennas, filters)
        bound = (2.0 / 2.0) ** 0.5  # fan_in = 2 channels per group
        return cls(w=rng.uniform(-bound, bound, shape))


def rf_embed(tensor, weights):
    """Bias-free grouped point-wise embedding of the stacked tensor.

    Output channel layout is group-major: antenna a's C_e filter
    responses occupy channels [a*C_e, (a+1)*C_e).  No cross-antenna
    mixing; zero input maps to zero output exactly.
    """
    tensor = np.asarray(tensor, dtype=np.float64)
    if tensor.ndim != 3 or tensor.shape[2] != 2 * weights.antennas:
        raise ShapeError(
            f"expected {2 * weights.antennas} channels, got {tensor.shape}"
        )
    f, t, _ = tensor.shape
    ce = weights.filters_per_group
    out = np.empty((f, t, ce * weights.antennas), dtype=np.float64)
    for a in range(weights.antennas):
        re = tensor[:, :, 2 * a]
        im = tensor[:, :, 2 * a + 1]
        if weights.w.ndim == 2:
            out[:, :, a * ce:(a + 1) * ce] = (
                (re + im)[:, :, None] * weights.w[a][None, None, :]
            )
        else:
            out[:, :, a * ce:(a + 1) * ce] = (
                re[:, :, None] * weights.w[a, :, 0][None, None, :]
                + im[:, :, None] * weights.w[a, :, 1][None, None, :]
            )
    return out
