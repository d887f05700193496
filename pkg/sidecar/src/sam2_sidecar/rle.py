"""RLE mask encoding for the wire protocol.

Row-major scan; alternating run lengths starting with the count of
background pixels (possibly 0); runs sum to width*height. Implemented
here independently of the engine so the sidecar has no dependency on it.
"""

import numpy as np


def encode(mask) -> list[int]:
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return []
    boundaries = np.flatnonzero(np.diff(flat)) + 1
    runs = np.diff(np.concatenate(([0], boundaries, [flat.size]))).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return [int(r) for r in runs]
