# Copyright 2026 Bidomain Homogenization contributors
# License LGPL-3.0 or later (http://www.gnu.org/licenses/lgpl).
"""Content-addressed store of effective tensors.

One plain-text file per entry::

    bidomain-homogenization-tensors VERSION
    regime memory
    scalars dim=2 K=80 dt_kernel=0.1 alpha=1 beta=1 volume_out=0.75 interface_area=2
    metadata {"...": ...}
    array A1 2 2
    <rows of %.17g values>
    ...

Arrays of rank three are stored flattened to (shape[0] * shape[1], shape[2])
with the leading shape on the header line.
"""

import hashlib
import json
import logging
import os
import tempfile

import numpy as np

from .. import __version__
from ..exceptions import CacheError
from ..models.cell_problems import EffectiveTensors, effective_tensors

_logger = logging.getLogger(__name__)

CACHE_ENV = "BIDOMAIN_HOMOGENIZATION_CACHE"
MAGIC = "bidomain-homogenization-tensors"
ARRAYS = (
    "A1",
    "A2",
    "A2_B",
    "A2_D",
    "B",
    "F_cellflux",
    "gamma_points",
    "gamma_weights",
)
SCALARS = ("dt_kernel", "alpha", "beta", "volume_out", "interface_area")


def default_cache_dir(override=None):
    if override:
        return override
    env = os.environ.get(CACHE_ENV)
    if env:
        return env
    return os.path.join(os.path.expanduser("~"), ".cache", "bidomain-homogenization")


def cache_key(config, coeffs):
    """sha256 of the canonical tensor description plus the coefficient bytes."""
    payload = json.dumps(config.tensor_key(), sort_keys=True, separators=(",", ":"))
    sha = hashlib.sha256()
    sha.update(payload.encode("utf-8"))
    sha.update(coeffs.digest.encode("ascii"))
    return sha.hexdigest()


def _format_value(value):
    if value is None:
        return "none"
    return "%.17g" % value


def _parse_value(text):
    return None if text == "none" else float(text)


def dump_tensors(tensors):
    lines = ["%s %s" % (MAGIC, __version__), "regime %s" % tensors.regime]
    scalars = ["dim=%d" % tensors.dim, "K=%d" % tensors.kernel_steps]
    for name in SCALARS:
        scalars.append("%s=%s" % (name, _format_value(getattr(tensors, name))))
    lines.append("scalars " + " ".join(scalars))
    lines.append("metadata " + json.dumps(tensors.metadata, sort_keys=True))
    for name in ARRAYS:
        array = getattr(tensors, name)
        if array is None:
            continue
        array = np.asarray(array, dtype=float)
        shape = array.shape
        table = array.reshape(-1, shape[-1]) if array.ndim > 1 else array.reshape(1, -1)
        lines.append("array %s %s" % (name, " ".join(str(s) for s in shape)))
        for row in table:
            lines.append(" ".join("%.17g" % v for v in row))
    return "\n".join(lines) + "\n"


def parse_tensors(text):
    """Inverse of dump_tensors; raises CacheError on any malformed or stale entry."""
    lines = text.splitlines()
    try:
        magic, version = lines[0].split()
        if magic != MAGIC:
            raise CacheError("not a tensor file")
        if version != __version__:
            raise CacheError("stale entry written by version %s" % version)
        regime = lines[1].split()[1]
        fields = dict(item.split("=", 1) for item in lines[2].split()[1:])
        values = {name: _parse_value(fields[name]) for name in SCALARS}
        metadata = json.loads(lines[3][len("metadata ") :])
        position = 4
        while position < len(lines):
            words = lines[position].split()
            if not words:
                position += 1
                continue
            if words[0] != "array":
                raise CacheError("unexpected line %d" % (position + 1))
            name = words[1]
            if name not in ARRAYS:
                raise CacheError("unknown array %r" % name)
            shape = tuple(int(w) for w in words[2:])
            rows = int(np.prod(shape[:-1])) if len(shape) > 1 else 1
            block = lines[position + 1 : position + 1 + rows]
            if len(block) != rows:
                raise CacheError("array %s is truncated" % name)
            table = np.array([[float(v) for v in row.split()] for row in block])
            values[name] = table.reshape(shape)
            position += 1 + rows
    except CacheError:
        raise
    except (ValueError, IndexError, KeyError) as e:
        raise CacheError("malformed tensor file: %s" % e)
    if values.get("A1") is None:
        raise CacheError("tensor file lacks A1")
    tensors = EffectiveTensors(regime=regime, metadata=metadata, **values)
    if tensors.dim != int(fields["dim"]):
        raise CacheError("A1 does not match the declared dimension")
    if tensors.kernel_steps != int(fields["K"]):
        raise CacheError("kernel length does not match its header")
    return tensors


def write_atomic(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    handle, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(handle, "w", encoding="utf-8") as stream:
            stream.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class TensorCache:
    def __init__(self, directory=None):
        self.directory = default_cache_dir(directory)

    def path(self, key):
        return os.path.join(self.directory, "%s.tensors" % key)

    def load(self, key):
        """Cached tensors for ``key``, or None on a miss or an unusable entry."""
        path = self.path(key)
        if not os.path.exists(path):
            return None
        try:
            with open(path, encoding="utf-8") as handle:
                return parse_tensors(handle.read())
        except CacheError as e:
            _logger.warning("ignoring cache entry %s: %s", path, e)
            return None

    def store(self, key, tensors):
        path = self.path(key)
        write_atomic(path, dump_tensors(tensors))
        _logger.debug("stored tensors in %s", path)
        return path


def cached_effective_tensors(config, cache=None, threads=None):
    """Effective tensors of ``config``, from the cache when an entry exists.

    Returns (tensors, hit).
    """
    cache = cache if isinstance(cache, TensorCache) else TensorCache(cache)
    cell = config.build_cell()
    coeffs = config.build_coefficients(cell)
    key = cache_key(config, coeffs)
    tensors = cache.load(key)
    if tensors is not None:
        _logger.info("cache hit %s (%s)", key[:12], config.regime)
        return tensors, True
    _logger.info("cache miss %s (%s): solving cell problems", key[:12], config.regime)
    tensors = effective_tensors(
        cell,
        coeffs,
        config.interface,
        dt_kernel=config.kernel_dt,
        kernel_steps=config.kernel_steps,
        s1_profile=config.s0,
        threads=threads or config.threads,
        **config.solver_options()
    )
    # a miss returns exactly what a later hit reads back
    tensors = parse_tensors(dump_tensors(tensors))
    cache.store(key, tensors)
    return tensors, False
