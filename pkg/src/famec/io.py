"""Dataset, checkpoint and CSV formats.

Dataset (``FAMEC-DS v1``)::

    FAMEC-DS v1
    count <K> height <H> width <W>
    image <i> part <real|imag> user <n> min <repr> max <repr> degenerate <0|1>
    ...                                   (K image lines)
    END
    <K*H*W little-endian float32, row-major, images in header order>

Checkpoint (``FAMEC-CK v1``)::

    FAMEC-CK v1
    meta <key> <value>                    (optional, any number)
    param <name> <d0>x<d1>x...            (sorted by name; scalar shape is "-")
    END
    <payloads, little-endian float32, same order as the param lines>

Headers are ASCII; the text block is fully validated before any payload
byte is interpreted.  Identical inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import subprocess
from pathlib import Path

import numpy as np

from .csnet.images import ChannelImage

DS_MAGIC = "FAMEC-DS v1"
CK_MAGIC = "FAMEC-CK v1"
F32 = np.dtype("<f4")


class FormatError(ValueError):
    pass


def _split_header(blob, magic, path):
    end = blob.find(b"\nEND\n")
    if not blob.startswith(magic.encode() + b"\n"):
        first = blob[:32].split(b"\n", 1)[0]
        raise FormatError(f"{path}: bad magic {first!r}, expected {magic!r}")
    if end < 0:
        raise FormatError(f"{path}: header terminator END missing")
    lines = blob[:end].decode("ascii").split("\n")[1:]
    return lines, blob[end + len(b"\nEND\n"):]


# --- dataset ------------------------------------------------------------------

def save_dataset(images, path):
    images = list(images)
    if not images:
        raise ValueError("refusing to write an empty dataset")
    h, w = images[0].pixels.shape
    lines = [DS_MAGIC, f"count {len(images)} height {h} width {w}"]
    for i, im in enumerate(images):
        if im.pixels.shape != (h, w):
            raise ValueError("all images in a dataset must share one shape")
        lines.append(f"image {i} part {im.part} user {im.user} min {float(im.vmin)!r} "
                     f"max {float(im.vmax)!r} degenerate {int(im.degenerate)}")
    lines.append("END")
    payload = np.stack([im.pixels for im in images]).astype(F32).tobytes(order="C")
    data = ("\n".join(lines) + "\n").encode("ascii") + payload
    Path(path).write_bytes(data)
    return path


def load_dataset(path):
    blob = Path(path).read_bytes()
    lines, payload = _split_header(blob, DS_MAGIC, path)
    try:
        tok = lines[0].split()
        dims = dict(zip(tok[::2], map(int, tok[1::2])))
        k, h, w = dims["count"], dims["height"], dims["width"]
    except (IndexError, KeyError, ValueError):
        raise FormatError(f"{path}: malformed dimension line {lines[:1]!r}") from None
    if len(lines) - 1 != k:
        raise FormatError(f"{path}: header lists {len(lines) - 1} images, count says {k}")
    expected = k * h * w * F32.itemsize
    if len(payload) != expected:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, header implies {expected}")
    pixels = np.frombuffer(payload, dtype=F32).reshape(k, h, w)
    out = []
    for i, line in enumerate(lines[1:]):
        tok = line.split()
        try:
            f = dict(zip(tok[::2], tok[1::2]))
            if int(f["image"]) != i:
                raise ValueError
            out.append(ChannelImage(pixels[i].astype(np.float64), float(f["min"]), float(f["max"]),
                                    f["part"], int(f["user"]), bool(int(f["degenerate"]))))
        except (KeyError, ValueError):
            raise FormatError(f"{path}: malformed image line {i}: {line!r}") from None
    return out


def load_dataset_raw(path):
    """Float32 pixel stack exactly as stored, (K, H, W)."""
    blob = Path(path).read_bytes()
    lines, payload = _split_header(blob, DS_MAGIC, path)
    load_dataset(path)          # full validation
    tok = lines[0].split()
    dims = dict(zip(tok[::2], map(int, tok[1::2])))
    return np.frombuffer(payload, dtype=F32).reshape(dims["count"], dims["height"], dims["width"])


# --- checkpoints -----------------------------------------------------------------

def save_checkpoint(arrays, path, meta=None):
    """``arrays``: name -> array (stored as float32)."""
    names = sorted(arrays)
    lines = [CK_MAGIC]
    for k, v in sorted((meta or {}).items()):
        if any(c.isspace() for c in str(k) + str(v)):
            raise ValueError("checkpoint metadata must not contain whitespace")
        lines.append(f"meta {k} {v}")
    chunks = []
    for name in names:
        if any(c.isspace() for c in name):
            raise ValueError(f"parameter name {name!r} contains whitespace")
        a = np.asarray(arrays[name], dtype=F32)
        shape = "x".join(map(str, a.shape)) if a.shape else "-"
        lines.append(f"param {name} {shape}")
        chunks.append(np.ascontiguousarray(a).tobytes())
    lines.append("END")
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("ascii") + b"".join(chunks))
    return path


def load_checkpoint(path):
    """-> (arrays dict, meta dict)."""
    blob = Path(path).read_bytes()
    lines, payload = _split_header(blob, CK_MAGIC, path)
    meta, specs = {}, []
    for line in lines:
        tok = line.split()
        if len(tok) == 3 and tok[0] == "meta":
            meta[tok[1]] = tok[2]
        elif len(tok) == 3 and tok[0] == "param":
            shape = () if tok[2] == "-" else tuple(int(x) for x in tok[2].split("x"))
            specs.append((tok[1], shape))
        else:
            raise FormatError(f"{path}: malformed header line {line!r}")
    need = sum(int(np.prod(s)) for _, s in specs) * F32.itemsize
    if len(payload) != need:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, header implies {need}")
    out, off = {}, 0
    for name, shape in specs:
        n = int(np.prod(shape))
        out[name] = np.frombuffer(payload, dtype=F32, count=n, offset=off).reshape(shape).copy()
        off += n * F32.itemsize
    return out, meta


def module_arrays(modules):
    """{prefix: nn.Module} -> flat {prefix.param: float32 array}."""
    out = {}
    for prefix, m in modules.items():
        for k, v in m.state_dict().items():
            out[f"{prefix}.{k}"] = v.detach().cpu().numpy()
    return out


def load_module_arrays(modules, arrays):
    import torch
    for prefix, m in modules.items():
        sd = {k[len(prefix) + 1:]: torch.as_tensor(v) for k, v in arrays.items()
              if k.startswith(prefix + ".")}
        m.load_state_dict(sd)


# --- CSV with provenance ---------------------------------------------------------------

def config_hash(text):
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def git_commit(cwd=None):
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], cwd=cwd,
                             capture_output=True, text=True, timeout=5)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def provenance_lines(cfg_text, seed, commit=None):
    return [f"# config_hash={config_hash(cfg_text)}", f"# seed={seed}",
            f"# commit={commit or git_commit()}"]


def _fmt(v):
    if v is None or v == "":
        return ""
    if isinstance(v, float):
        return "" if np.isnan(v) else repr(v)
    return str(v)


def write_csv(path, fields, rows, provenance=()):
    buf = _io.StringIO()
    for line in provenance:
        buf.write(line + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([_fmt(r.get(f)) for f in fields])
    Path(path).write_text(buf.getvalue())
    return path


def read_csv(path):
    """-> (provenance dict, rows as dicts of strings)."""
    prov, body = {}, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            prov[k] = v
        else:
            body.append(line)
    return prov, list(csv.DictReader(body))
