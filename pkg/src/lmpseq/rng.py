"""Stateless counter-based uniforms for reproducible parallel Monte Carlo.

A uniform is a pure function of ``(seed, replication, step)``: the SplitMix64
finaliser is applied to a key derived from the seed, then mixed with the
replication index and the step index.  Any partition of replications into
chunks or threads therefore sees exactly the same numbers, and runs at
different parameter values share them (common random numbers).
"""

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_STEP = np.uint64(0xD1B54A32D192ED03)
_MASK = (1 << 64) - 1


def _mix(x: np.ndarray) -> np.ndarray:
    x = x ^ (x >> np.uint64(30))
    x = x * _M1
    x = x ^ (x >> np.uint64(27))
    x = x * _M2
    return x ^ (x >> np.uint64(31))


def stream_key(seed: int) -> np.uint64:
    with np.errstate(over="ignore"):
        return _mix(np.array([seed & _MASK], dtype=np.uint64) + _GOLDEN)[0]


def counter_uniforms(seed: int, reps: np.ndarray, step: int) -> np.ndarray:
    """Uniforms in (0, 1) for the given replication indices at one step."""
    key = stream_key(seed)
    reps = np.asarray(reps, dtype=np.uint64)
    with np.errstate(over="ignore"):
        x = _mix(reps * _GOLDEN + key)
        x = _mix(x + np.uint64(step & _MASK) * _STEP)
    return ((x >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)
