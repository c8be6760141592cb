"""
File Formats
=============
PFM float rasters, PGM masks, DF32 density fields, scene JSON and the CSV
outputs (rank pairs, optimizer traces, metric rows).
"""

import csv
import json

import numpy as np

from density_field import DensityField, GridSpec
from errors import FormatError, GridError, LossError
from logger import logger
from losses import RankPairs
from metrics import CSV_FIELDS
from scene_sim import SceneSpec

PAIRS_HEADER = ['i_u', 'i_v', 'j_u', 'j_v', 'r']
TRACE_HEADER = ['epoch', 'l_h', 'l_rank', 'l_sky', 'l_total', 'lr']

# ==========================================
# HEADER PARSING
# ==========================================
def _read_bytes(path):
    with open(path, 'rb') as f:
        return f.read()


def _read_line(data, offset, path):
    """One newline-terminated ASCII header line → (text, offset after the newline)"""
    end = data.find(b'\n', offset)
    if end < 0:
        raise FormatError("Unterminated header line", path, offset)
    try:
        return data[offset:end].decode('ascii').strip(), end + 1
    except UnicodeDecodeError:
        raise FormatError("Header line is not ASCII", path, offset) from None


def _read_tokens(data, count, path):
    """
    Netpbm-style header: count whitespace-separated tokens, '#' comments allowed.

    Returns (tokens, payload offset); the payload starts after the single
    whitespace byte that ends the last token.
    """
    tokens = []
    pos = 0
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b'#':
            while pos < n and data[pos:pos + 1] != b'\n':
                pos += 1
            continue
        if pos >= n:
            raise FormatError(f"Header ended after {len(tokens)} of {count} fields", path, pos)
        start = pos
        while pos < n and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append((data[start:pos].decode('ascii', errors='replace'), start))
    if pos >= n:
        raise FormatError("Missing whitespace before payload", path, pos)
    return tokens, pos + 1


def _check_payload(data, offset, expected, path, what):
    actual = len(data) - offset
    if actual != expected:
        raise FormatError(
            f"{what} payload: expected {expected} bytes, got {actual}", path, offset
        )


def _positive_int(token, path, what):
    text, offset = token
    try:
        value = int(text)
    except ValueError:
        raise FormatError(f"{what} must be an integer, got '{text}'", path, offset) from None
    if value < 1:
        raise FormatError(f"{what} must be >= 1, got {value}", path, offset)
    return value


# ==========================================
# PFM
# ==========================================
def write_pfm(path, raster):
    """Greyscale little-endian PFM; in-memory row 0 is the top image row"""
    raster = np.asarray(raster)
    if raster.ndim != 2:
        raise FormatError(f"PFM rasters must be 2D, got shape {raster.shape}", path)
    h, w = raster.shape
    with open(path, 'wb') as f:
        f.write(f"Pf\n{w} {h}\n-1.0\n".encode('ascii'))
        f.write(np.flipud(raster).astype('<f4').tobytes())
    logger.log_io("Wrote PFM", path, f"{w}×{h}")


def read_pfm(path):
    """PFM → float32 array (h, w)"""
    data = _read_bytes(path)
    tokens, offset = _read_tokens(data, 4, path)
    (magic, _), w_tok, h_tok, (scale_text, scale_at) = tokens
    if magic == 'PF':
        raise FormatError("Colour PFM is not supported, expected 'Pf'", path, 0)
    if magic != 'Pf':
        raise FormatError(f"Not a PFM file (magic '{magic}')", path, 0)
    w = _positive_int(w_tok, path, "PFM width")
    h = _positive_int(h_tok, path, "PFM height")
    try:
        scale = float(scale_text)
    except ValueError:
        raise FormatError(f"PFM scale must be a number, got '{scale_text}'", path, scale_at) from None
    if not scale < 0:
        raise FormatError(
            f"PFM scale {scale} is not negative; only little-endian PFM is supported", path, scale_at
        )
    _check_payload(data, offset, 4 * w * h, path, "PFM")
    raster = np.frombuffer(data, dtype='<f4', offset=offset).reshape(h, w)
    logger.log_io("Read PFM", path, f"{w}×{h}")
    return np.flipud(raster).astype(np.float32)


# ==========================================
# PGM
# ==========================================
def write_pgm(path, mask):
    """Binary P5 mask; True (sky / invalid) is written as 255"""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise FormatError(f"PGM masks must be 2D, got shape {mask.shape}", path)
    h, w = mask.shape
    with open(path, 'wb') as f:
        f.write(f"P5\n{w} {h}\n255\n".encode('ascii'))
        f.write(np.where(mask.astype(bool), 255, 0).astype(np.uint8).tobytes())
    logger.log_io("Wrote PGM", path, f"{w}×{h}")


def read_pgm(path):
    """P5 PGM → bool array, nonzero = True"""
    data = _read_bytes(path)
    tokens, offset = _read_tokens(data, 4, path)
    (magic, _), w_tok, h_tok, max_tok = tokens
    if magic != 'P5':
        raise FormatError(f"Not a binary PGM file (magic '{magic}')", path, 0)
    w = _positive_int(w_tok, path, "PGM width")
    h = _positive_int(h_tok, path, "PGM height")
    maxval = _positive_int(max_tok, path, "PGM maxval")
    if maxval > 65535:
        raise FormatError(f"PGM maxval {maxval} exceeds 65535", path, max_tok[1])
    depth = 1 if maxval < 256 else 2
    _check_payload(data, offset, depth * w * h, path, "PGM")
    dtype = np.uint8 if depth == 1 else '>u2'
    pixels = np.frombuffer(data, dtype=dtype, offset=offset).reshape(h, w)
    logger.log_io("Read PGM", path, f"{w}×{h}")
    return pixels != 0


# ==========================================
# DF32
# ==========================================
def write_df32(path, field):
    spec = field.spec
    nums = [spec.nx, spec.ny, spec.nz, *spec.voxel_size, *spec.origin]
    header = "DF32\n" + " ".join(repr(v) for v in nums) + "\n"
    with open(path, 'wb') as f:
        f.write(header.encode('ascii'))
        f.write(np.ascontiguousarray(field.sigma).astype('<f4').tobytes())
    logger.log_io("Wrote DF32", path, f"{spec.nx}×{spec.ny}×{spec.nz}")


def read_df32(path):
    data = _read_bytes(path)
    magic, offset = _read_line(data, 0, path)
    if magic != 'DF32':
        raise FormatError(f"Not a DF32 file (magic '{magic}')", path, 0)
    line_at = offset
    line, offset = _read_line(data, offset, path)
    parts = line.split()
    if len(parts) != 9:
        raise FormatError(f"DF32 geometry line needs 9 fields, got {len(parts)}", path, line_at)
    try:
        nx, ny, nz = (int(p) for p in parts[:3])
        vx, vy, vz, ox, oy, oz = (float(p) for p in parts[3:])
    except ValueError:
        raise FormatError(f"DF32 geometry line is not numeric: '{line}'", path, line_at) from None

    try:
        spec = GridSpec(nx, ny, nz, (vx, vy, vz), (ox, oy, oz))
    except GridError as e:
        raise FormatError(f"DF32 geometry invalid: {e}", path, line_at) from e
    _check_payload(data, offset, 4 * spec.size, path, "DF32")
    sigma = np.frombuffer(data, dtype='<f4', offset=offset).astype(np.float64)
    logger.log_io("Read DF32", path, f"{nx}×{ny}×{nz}")
    return DensityField(spec, sigma.reshape(spec.shape))


# ==========================================
# SCENE JSON
# ==========================================
def write_scene(path, spec):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(spec.to_dict(), f, indent=2)
        f.write('\n')
    logger.log_io("Wrote scene", path, f"{len(spec.boxes)} boxes")


def read_scene(path):
    with open(path, 'r', encoding='utf-8') as f:
        text = f.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(f"Scene JSON is malformed: {e.msg}", path, e.pos) from e
    if not isinstance(data, dict):
        raise FormatError("Scene JSON must be an object", path, 0)
    spec = SceneSpec.from_dict(data)
    logger.log_io("Read scene", path, f"{len(spec.boxes)} boxes")
    return spec


# ==========================================
# CSV
# ==========================================
def write_pairs(path, pairs):
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(PAIRS_HEADER)
        for row in zip(pairs.i_u, pairs.i_v, pairs.j_u, pairs.j_v, pairs.r):
            writer.writerow([int(v) for v in row])
    logger.log_io("Wrote pairs", path, f"{len(pairs)} pairs")


def read_pairs(path, seed=None):
    with open(path, 'r', newline='', encoding='utf-8') as f:
        rows = list(csv.reader(f))
    if not rows or [c.strip() for c in rows[0]] != PAIRS_HEADER:
        raise FormatError(f"Pairs CSV must start with header {','.join(PAIRS_HEADER)}", path, 0)
    try:
        cols = np.array([[int(v) for v in row] for row in rows[1:] if row], dtype=np.int64)
    except ValueError as e:
        raise FormatError(f"Pairs CSV has a non-integer field: {e}", path) from e
    if cols.ndim != 2 or cols.shape[1] != 5:
        raise FormatError("Pairs CSV rows need exactly 5 fields", path)
    try:
        return RankPairs(*cols.T, seed=seed)
    except LossError as e:
        raise FormatError(f"Pairs CSV is invalid: {e}", path) from e


def write_trace(path, trace):
    """trace: (epoch, LossBreakdown, lr) tuples"""
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(TRACE_HEADER)
        for epoch, b, lr in trace:
            writer.writerow([epoch, repr(b.l_h), repr(b.l_rank), repr(b.l_sky), repr(b.l_total), repr(lr)])
    logger.log_io("Wrote trace", path, f"{len(trace)} epochs")


def read_trace(path):
    """Trace CSV → list of dicts (epoch int, losses and lr float)"""
    with open(path, 'r', newline='', encoding='utf-8') as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != TRACE_HEADER:
            raise FormatError(f"Trace CSV must start with header {','.join(TRACE_HEADER)}", path, 0)
        try:
            return [
                {k: (int(v) if k == 'epoch' else float(v)) for k, v in row.items()}
                for row in reader
            ]
        except (TypeError, ValueError) as e:
            raise FormatError(f"Trace CSV has a malformed row: {e}", path) from e


def write_metrics(path, rows):
    """rows: (label, MetricReport) tuples"""
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(['label', *CSV_FIELDS])
        for label, rep in rows:
            row = rep.to_row()
            writer.writerow([label, *(row[k] for k in CSV_FIELDS)])
    logger.log_io("Wrote metrics", path, f"{len(rows)} rows")
