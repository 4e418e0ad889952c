"""Dataset readers and writers (IDX, LIBSVM), label corruption, synthetic digits."""

import gzip
import os
import struct

import numpy as np
from scipy import sparse

from .._validation import check_scalar
from ..exceptions import ParseError

DATA_ENV = "PNPBO_DATA"

# IDX type codes -> big-endian numpy dtypes
_IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_IDX_CODES = {v.newbyteorder("="): k for k, v in _IDX_TYPES.items()}


def data_path(name):
    """Resolve ``name`` against the dataset root in ``$PNPBO_DATA`` (if relative)."""
    if os.path.isabs(name):
        return name
    root = os.environ.get(DATA_ENV)
    return os.path.join(root, name) if root else name


def _open(path, mode="rb"):
    path = str(path)
    return gzip.open(path, mode) if path.endswith(".gz") else open(path, mode)


# -- IDX -------------------------------------------------------------------------
def parse_idx(buf, scale=None, path=None):
    """Decode IDX bytes. ``scale=None`` rescales unsigned-byte images to [0, 1]."""
    if len(buf) < 4:
        raise ParseError("truncated magic number", path=path, offset=len(buf))
    if buf[0] != 0 or buf[1] != 0 or buf[2] not in _IDX_TYPES:
        raise ParseError(f"bad magic number 0x{buf[:4].hex()}", path=path, offset=0)
    dtype = _IDX_TYPES[buf[2]]
    ndim = buf[3]
    if ndim == 0:
        raise ParseError("magic number declares zero dimensions", path=path, offset=3)
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise ParseError("truncated dimension header", path=path, offset=4)
    shape = struct.unpack(f">{ndim}I", buf[4:header])
    count = int(np.prod(shape, dtype=np.int64))
    need = header + count * dtype.itemsize
    if len(buf) != need:
        what = "truncated" if len(buf) < need else "trailing bytes in"
        raise ParseError(
            f"{what} data section (expected {need} bytes, got {len(buf)})",
            path=path, offset=min(len(buf), need),
        )
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=header).reshape(shape)
    arr = arr.astype(dtype.newbyteorder("="))
    if scale is None:
        scale = dtype == np.dtype(">u1") and ndim >= 2
    if scale:
        return arr.astype(float) / 255.0
    return arr


def load_idx(path, scale=None):
    """Read an IDX file (optionally gzip-compressed)."""
    try:
        with _open(path) as fh:
            buf = fh.read()
    except OSError as err:
        raise ParseError(str(err), path=path) from err
    return parse_idx(buf, scale=scale, path=path)


def write_idx(path, arr):
    arr = np.asarray(arr)
    code = _IDX_CODES.get(arr.dtype.newbyteorder("="))
    if code is None:
        raise ValueError(f"IDX cannot store dtype {arr.dtype}")
    if arr.ndim == 0 or arr.ndim > 255:
        raise ValueError("IDX arrays need between 1 and 255 dimensions")
    with _open(path, "wb") as fh:
        fh.write(bytes([0, 0, code, arr.ndim]))
        fh.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        fh.write(arr.astype(_IDX_TYPES[code]).tobytes())


# -- LIBSVM ----------------------------------------------------------------------
def parse_libsvm(lines, n_features=None, path=None):
    """Parse LIBSVM text lines into a CSR matrix and a label vector.

    Feature indices are 1-based in the file and 0-based in the result.
    Comments after ``#`` and blank lines are skipped.
    """
    labels, indptr, indices, values = [], [0], [], []
    offset = 0
    for lineno, raw in enumerate(lines, start=1):
        line_offset = offset
        offset += len(raw.encode()) if isinstance(raw, str) else len(raw)
        if isinstance(raw, bytes):
            raw = raw.decode()
        body = raw.split("#", 1)[0].rstrip("\r\n")
        if not body.strip():
            continue
        col = 1
        tokens = []
        for tok in body.split(" "):
            if tok.strip():
                tokens.append((col, tok.strip()))
            col += len(tok) + 1

        def fail(msg, column):
            raise ParseError(msg, path=path, line=lineno, column=column,
                             offset=line_offset + column - 1)

        col0, lab = tokens[0]
        try:
            labels.append(float(lab))
        except ValueError:
            fail(f"non-numeric label {lab!r}", col0)
        seen = set()
        for c, tok in tokens[1:]:
            key, sep, val = tok.partition(":")
            if not sep:
                fail(f"expected index:value, got {tok!r}", c)
            try:
                k = int(key)
            except ValueError:
                fail(f"non-numeric feature index {key!r}", c)
            try:
                v = float(val)
            except ValueError:
                fail(f"non-numeric feature value {val!r}", c + len(key) + 1)
            if k < 1 or (n_features is not None and k > n_features):
                fail(f"feature index {k} out of range", c)
            if k in seen:
                fail(f"repeated feature index {k}", c)
            seen.add(k)
            indices.append(k - 1)
            values.append(v)
        indptr.append(len(indices))
    width = n_features if n_features is not None else (max(indices) + 1 if indices else 0)
    X = sparse.csr_matrix(
        (np.array(values, dtype=float), np.array(indices, dtype=np.int64), np.array(indptr)),
        shape=(len(labels), width),
    )
    X.sort_indices()
    return X, np.array(labels)


def load_libsvm(path, n_features=None):
    try:
        with _open(path) as fh:
            lines = fh.readlines()
    except OSError as err:
        raise ParseError(str(err), path=path) from err
    return parse_libsvm(lines, n_features=n_features, path=path)


def write_libsvm(path, X, y):
    X = sparse.csr_matrix(X)
    with _open(path, "wt") as fh:
        for r in range(X.shape[0]):
            lo, hi = X.indptr[r], X.indptr[r + 1]
            feats = " ".join(f"{k + 1}:{float(v)!r}" for k, v in zip(X.indices[lo:hi], X.data[lo:hi]))
            lab = y[r]
            lab = str(int(lab)) if float(lab).is_integer() else repr(float(lab))
            fh.write(f"{lab} {feats}".rstrip() + "\n")


# -- corruption and synthetic data -------------------------------------------------
def corrupt_labels(labels, p_tilde, seed, n_classes=10):
    """Replace each label, independently with probability ``p_tilde``, by a uniform class.

    The replacement may equal the original label. Returns ``(labels, flags)``.
    """
    p_tilde = check_scalar(p_tilde, "p_tilde", lo=0.0, hi=1.0)
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    flags = rng.random(labels.shape) < p_tilde
    new = rng.integers(0, n_classes, size=labels.shape)
    return np.where(flags, new, labels).astype(labels.dtype), flags


def synthetic_digits(n, seed, n_classes=10, side=28, noise=0.35):
    """Small-digit stand-in: noisy class templates on a ``side x side`` grid.

    Each class template is a few random strokes blurred into [0, 1]; samples
    add a random shift and pixel noise. Returns ``(images, labels)`` with
    images of shape ``(n, side*side)``.
    """
    from scipy.ndimage import gaussian_filter, shift

    tmpl_rng = np.random.default_rng(12345)
    templates = np.zeros((n_classes, side, side))
    for c in range(n_classes):
        for _ in range(3):
            r0, c0 = tmpl_rng.integers(4, side - 4, size=2)
            r1, c1 = tmpl_rng.integers(4, side - 4, size=2)
            t = np.linspace(0.0, 1.0, 4 * side)
            rr = np.round(r0 + t * (r1 - r0)).astype(int)
            cc = np.round(c0 + t * (c1 - c0)).astype(int)
            templates[c, rr, cc] = 1.0
        templates[c] = gaussian_filter(templates[c], 1.0)
        templates[c] /= templates[c].max()

    rng = np.random.default_rng(seed)
    labels = rng.integers(0, n_classes, size=n)
    images = np.empty((n, side * side))
    for k in range(n):
        img = shift(templates[labels[k]], rng.normal(0.0, 1.0, size=2), order=1)
        img = img + noise * rng.standard_normal((side, side))
        images[k] = np.clip(img, 0.0, 1.0).ravel()
    return images, labels
