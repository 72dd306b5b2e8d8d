"""Duplicate-and-pad inflation of 15x31 SDIs to 224x224 network inputs."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .sdi import SDI_SHAPE, SDIMatrix

IMAGE_SIZE = 224
ROW_BLOCKS = 14  # 15 * 14 = 210
COL_BLOCKS = 7  # 31 * 7 = 217
DUP_SHAPE = (SDI_SHAPE[0] * ROW_BLOCKS, SDI_SHAPE[1] * COL_BLOCKS)
PAD_TOP, PAD_BOTTOM, PAD_LEFT, PAD_RIGHT = 7, 7, 3, 4


class Method(str, Enum):
    ALL_TILE = "All_Tile"
    ALL_REPEAT = "All_Repeat"
    ALL_FLIP = "All_Flip"
    LR_FLIP_TILE = "LR_Flip_Tile"
    LR_FLIP_REPEAT = "LR_Flip_Repeat"
    UD_FLIP_TILE = "UD_Flip_Tile"
    UD_FLIP_REPEAT = "UD_Flip_Repeat"


METHODS = tuple(Method)
DEFAULT_METHOD = Method.ALL_TILE


@dataclass
class AugmentedImage:
    values: np.ndarray  # (224, 224)
    method: Method
    label: int


def tile(M, a, b):
    """a x b block grid of copies of M."""
    if a < 1 or b < 1:
        raise ValueError("tile counts must be >= 1")
    return np.tile(M, (a, b))


def repeat_elements(M, a, b):
    """Every element of M expanded to an a x b constant block."""
    if a < 1 or b < 1:
        raise ValueError("repeat counts must be >= 1")
    return np.repeat(np.repeat(M, a, axis=0), b, axis=1)


def flip(M, axis):
    if axis == "lr":
        return M[:, ::-1]
    if axis == "ud":
        return M[::-1, :]
    raise ValueError(f"unknown flip axis {axis!r}")


def alternate(M, count, axis):
    """[M, flip(M), M, ...] with ``count`` blocks along ``axis`` (lr: columns, ud: rows)."""
    f = flip(M, axis)
    blocks = [M if k % 2 == 0 else f for k in range(count)]
    return np.hstack(blocks) if axis == "lr" else np.vstack(blocks)


def zero_pad(M):
    M = np.asarray(M)
    if M.shape != DUP_SHAPE:
        raise ValueError(f"expected {DUP_SHAPE}, got {M.shape}")
    return np.pad(M, ((PAD_TOP, PAD_BOTTOM), (PAD_LEFT, PAD_RIGHT)))


def duplicate(M, method):
    method = Method(method)
    a, b = ROW_BLOCKS, COL_BLOCKS
    if method is Method.ALL_TILE:
        return tile(M, a, b)
    if method is Method.ALL_REPEAT:
        return repeat_elements(M, a, b)
    if method is Method.ALL_FLIP:
        return alternate(alternate(M, b, "lr"), a, "ud")
    if method is Method.LR_FLIP_TILE:
        return tile(alternate(M, b, "lr"), a, 1)
    if method is Method.LR_FLIP_REPEAT:
        return repeat_elements(alternate(M, b, "lr"), a, 1)
    if method is Method.UD_FLIP_TILE:
        return tile(alternate(M, a, "ud"), 1, b)
    return repeat_elements(alternate(M, a, "ud"), 1, b)


def augment_matrix(M, method=DEFAULT_METHOD):
    M = np.asarray(M)
    if M.shape != SDI_SHAPE:
        raise ValueError(f"SDI must be {SDI_SHAPE}, got {M.shape}")
    return zero_pad(duplicate(M, method))


def augment(sdi: SDIMatrix, method=DEFAULT_METHOD) -> AugmentedImage:
    return AugmentedImage(augment_matrix(sdi.values, method), Method(method), sdi.label)


def augment_batch(values, method=DEFAULT_METHOD, dtype=np.float32):
    """(n, 15, 31) -> (n, 1, 224, 224) via a single gather."""
    rows, cols = source_index(method)
    values = np.asarray(values, dtype=dtype)
    out = np.zeros((len(values), 1, IMAGE_SIZE, IMAGE_SIZE), dtype=dtype)
    r = rows >= 0
    c = cols >= 0
    out[:, 0, PAD_TOP:IMAGE_SIZE - PAD_BOTTOM, PAD_LEFT:IMAGE_SIZE - PAD_RIGHT] = \
        values[:, rows[r]][:, :, cols[c]]
    return out


def source_index(method):
    """Per image row/column, the SDI row/column it copies (-1 on the zero border).

    Every method is separable, so the output pixel (i, j) equals
    ``M[rows[i], cols[j]]`` wherever both are non-negative.
    """
    method = Method(method)
    m, n = SDI_SHAPE
    i = np.arange(DUP_SHAPE[0])
    j = np.arange(DUP_SHAPE[1])
    row_tiled = i % m
    row_flipped = np.where((i // m) % 2 == 1, m - 1 - i % m, i % m)
    col_tiled = j % n
    col_flipped = np.where((j // n) % 2 == 1, n - 1 - j % n, j % n)
    rows, cols = {
        Method.ALL_TILE: (row_tiled, col_tiled),
        Method.ALL_REPEAT: (i // ROW_BLOCKS, j // COL_BLOCKS),
        Method.ALL_FLIP: (row_flipped, col_flipped),
        Method.LR_FLIP_TILE: (row_tiled, col_flipped),
        Method.LR_FLIP_REPEAT: (i // ROW_BLOCKS, col_flipped),
        Method.UD_FLIP_TILE: (row_flipped, col_tiled),
        Method.UD_FLIP_REPEAT: (row_flipped, j // COL_BLOCKS),
    }[method]
    full_r = np.full(IMAGE_SIZE, -1)
    full_c = np.full(IMAGE_SIZE, -1)
    full_r[PAD_TOP:PAD_TOP + DUP_SHAPE[0]] = rows
    full_c[PAD_LEFT:PAD_LEFT + DUP_SHAPE[1]] = cols
    return full_r, full_c
