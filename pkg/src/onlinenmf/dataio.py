"""Observation files, dataset manifests, config files and trace CSVs.

Observations are header-less CSV (one row of ``M`` integer counts per time
step) or NDJSON (one JSON array per line).  Manifests and config files are
flat ``key = value`` text.  Floating values are written with 17 significant
digits so every double survives a write/read cycle unchanged.
"""

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .engine import EstimateTrace
from .params import ThetaParams
from .processes import BasisSelectionParams, RelaxedParams, make_process
from .simulate import simulate_chunks

FLOAT_FMT = "%.17g"
MANIFEST_NAME = "manifest.txt"
OBSERVATIONS_NAME = "observations.csv"
LATENT_NAME = "latent.csv"


class DataFormatError(ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}:"
            if line is not None:
                where += f"{line}:"
            where += " "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


def _fmt(v):
    return FLOAT_FMT % v


# ------------------------------------------------------------------ observations

def _parse_count(token, path, line):
    if isinstance(token, bool):
        raise DataFormatError(f"non-integer count {token!r}", path, line)
    if isinstance(token, str):
        try:
            v = int(token.strip())
        except ValueError:
            raise DataFormatError(f"non-integer count {token.strip()!r}", path, line) from None
    elif isinstance(token, int):
        v = token
    elif isinstance(token, float) and token.is_integer():
        v = int(token)
    else:
        raise DataFormatError(f"non-integer count {token!r}", path, line)
    if v < 0:
        raise DataFormatError(f"negative count {v}", path, line)
    return v


def _infer_format(path):
    return "ndjson" if Path(path).suffix.lower() in (".ndjson", ".jsonl") else "csv"


def _rows(path, fmt):
    with open(path, newline="", encoding="utf-8") as fh:
        if fmt == "csv":
            for lineno, row in enumerate(csv.reader(fh), start=1):
                yield lineno, row
        elif fmt == "ndjson":
            for lineno, text in enumerate(fh, start=1):
                text = text.strip()
                if not text:
                    yield lineno, []
                    continue
                try:
                    obj = json.loads(text)
                except json.JSONDecodeError as exc:
                    raise DataFormatError(f"invalid JSON ({exc.msg})", path, lineno) from None
                if isinstance(obj, dict):
                    obj = obj.get("y")
                if not isinstance(obj, list):
                    raise DataFormatError("expected a JSON array of counts", path, lineno)
                yield lineno, obj
        else:
            raise ValueError(f"unknown observation format {fmt!r}")


def load_observations(path, fmt=None, M=None):
    """Stream count vectors from ``path`` in file order.

    Parameters
    ----------
    path : str or Path
    fmt : {"csv", "ndjson"}, optional
        Inferred from the suffix when omitted (``.ndjson``/``.jsonl`` mean NDJSON).
    M : int, optional
        Expected row length; taken from the first row when omitted.

    Yields
    ------
    numpy.ndarray
        ``int64`` vector of length ``M``.

    Raises
    ------
    DataFormatError
        On a wrong field count or a negative or non-integer entry.
    """
    fmt = fmt or _infer_format(path)
    for lineno, row in _rows(path, fmt):
        if not row:
            continue
        if M is None:
            M = len(row)
        if len(row) != M:
            raise DataFormatError(f"expected {M} fields, got {len(row)}", path, lineno)
        yield np.array([_parse_count(v, path, lineno) for v in row], dtype=np.int64)


def read_observations(path, fmt=None, M=None):
    """All rows of :func:`load_observations` as a ``(T, M)`` array."""
    rows = list(load_observations(path, fmt, M))
    if not rows:
        return np.empty((0, M or 0), dtype=np.int64)
    return np.stack(rows)


class _HashingWriter:
    def __init__(self, path):
        self.fh = open(path, "w", encoding="utf-8", newline="")
        self.sha = hashlib.sha256()

    def write(self, text):
        self.sha.update(text.encode("utf-8"))
        self.fh.write(text)

    def close(self):
        self.fh.close()
        return self.sha.hexdigest()


def write_observations(path, Y):
    """Write count rows as header-less CSV; returns the file's SHA-256."""
    w = _HashingWriter(path)
    try:
        for y in Y:
            w.write(",".join(str(int(v)) for v in y) + "\n")
    finally:
        digest = w.close()
    return digest


def sha256_file(path, block=1 << 20):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(block), b""):
            h.update(chunk)
    return h.hexdigest()


# ------------------------------------------------------------- key/value text

def parse_key_values(path):
    """Read a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.split("#", 1)[0].strip()
            if not text:
                continue
            key, sep, value = text.partition("=")
            key = key.strip()
            if not sep or not key:
                raise DataFormatError("expected 'key = value'", path, lineno)
            if key in out:
                raise DataFormatError(f"duplicate key {key!r}", path, lineno)
            out[key] = value.strip()
    return out


def _floats(text):
    return [float(v) for v in text.split(",")] if text else []


# ------------------------------------------------------------------ manifests

def _psi_from(model, values):
    return make_process(model, 1).make_params(values)


@dataclass
class DatasetManifest:
    """Description of a simulated dataset, stored next to its files."""

    model: str
    M: int
    K: int
    T: int
    true_theta: ThetaParams
    seed: int
    observations: str = OBSERVATIONS_NAME
    latent: str = None
    hashes: dict = field(default_factory=dict)
    #: directory the relative file names refer to
    root: Path = None

    def __post_init__(self):
        if self.true_theta.B.shape != (self.M, self.K):
            raise ValueError("true B does not match (M, K)")

    @property
    def observations_path(self):
        return Path(self.root or ".") / self.observations

    @property
    def latent_path(self):
        return None if self.latent is None else Path(self.root or ".") / self.latent

    def process(self, **kwargs):
        return make_process(self.model, self.K, **kwargs)

    def to_text(self):
        lines = [
            f"model = {self.model}",
            f"M = {self.M}",
            f"K = {self.K}",
            f"T = {self.T}",
            f"seed = {self.seed}",
            "B = " + ",".join(_fmt(v) for v in self.true_theta.B.ravel()),
            "psi = " + ",".join(_fmt(v) for v in self.true_theta.psi.as_tuple()),
            f"observations = {self.observations}",
        ]
        if self.latent is not None:
            lines.append(f"latent = {self.latent}")
        for name in sorted(self.hashes):
            lines.append(f"sha256.{name} = {self.hashes[name]}")
        return "\n".join(lines) + "\n"

    def write(self, path):
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def read(cls, path):
        """Load a manifest file, or ``manifest.txt`` inside a directory."""
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        kv = parse_key_values(path)
        try:
            M, K = int(kv["M"]), int(kv["K"])
            B = np.array(_floats(kv["B"])).reshape(M, K)
            theta = ThetaParams(B, _psi_from(kv["model"], _floats(kv["psi"])))
            hashes = {k[len("sha256."):]: v for k, v in kv.items() if k.startswith("sha256.")}
            return cls(kv["model"], M, K, int(kv["T"]), theta, int(kv["seed"]),
                       kv.get("observations", OBSERVATIONS_NAME), kv.get("latent"), hashes,
                       root=path.parent)
        except KeyError as exc:
            raise DataFormatError(f"manifest is missing {exc.args[0]!r}", path) from None
        except ValueError as exc:
            raise DataFormatError(f"bad manifest value ({exc})", path) from None

    def verify(self):
        """Raise :class:`DataFormatError` if a listed file's hash has changed."""
        for name, expected in self.hashes.items():
            p = Path(self.root or ".") / name
            if sha256_file(p) != expected:
                raise DataFormatError("content hash mismatch", p)


def dataset_streams(seed):
    """Independent generators for drawing a ground truth and for simulating data."""
    truth, data = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(truth), np.random.default_rng(data)


def simulate_dataset(model, theta, T, seed, out_dir, dump_latent=False, chunk=10_000):
    """Simulate ``T`` steps and write observations plus a manifest to ``out_dir``.

    Data come from the second stream of :func:`dataset_streams`; files are
    written chunk by chunk so memory does not grow with ``T``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    process = make_process(model, theta.K)
    _, rng = dataset_streams(seed)
    obs = _HashingWriter(out_dir / OBSERVATIONS_NAME)
    lat = _HashingWriter(out_dir / LATENT_NAME) if dump_latent else None
    try:
        for X, Y in simulate_chunks(process, theta, T, rng, chunk):
            obs.write("".join(",".join(map(str, row)) + "\n" for row in Y.tolist()))
            if lat is not None:
                lat.write("".join(",".join(_fmt(v) for v in row) + "\n" for row in X))
    finally:
        hashes = {OBSERVATIONS_NAME: obs.close()}
        if lat is not None:
            hashes[LATENT_NAME] = lat.close()
    manifest = DatasetManifest(model, theta.M, theta.K, int(T), theta, int(seed),
                               latent=LATENT_NAME if dump_latent else None,
                               hashes=hashes, root=out_dir)
    manifest.write(out_dir / MANIFEST_NAME)
    return manifest


# --------------------------------------------------------------------- traces

def _psi_names(psi):
    return ["alpha"] if isinstance(psi, RelaxedParams) else ["p", "q"]


def write_trace(path, trace, loglik=None):
    """Write ``t, B_1_1 .. B_M_K, psi...`` rows (plus ``loglik`` for batch traces)."""
    if not len(trace):
        raise ValueError("cannot export an empty trace")
    first = trace[0].theta
    M, K = first.M, first.K
    if loglik is None:
        loglik = any(e.loglik is not None for e in trace)
    header = ["t"] + [f"B_{m + 1}_{k + 1}" for m in range(M) for k in range(K)]
    header += _psi_names(first.psi)
    if loglik:
        header.append("loglik")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for e in trace:
            row = [str(e.t)] + [_fmt(v) for v in e.theta.B.ravel()]
            row += [_fmt(v) for v in e.theta.psi.as_tuple()]
            if loglik:
                row.append(_fmt(np.nan if e.loglik is None else e.loglik))
            fh.write(",".join(row) + "\n")


def read_trace(path):
    """Inverse of :func:`write_trace`; values come back bit-identical."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError("empty trace file", path) from None
        b_cols = [h for h in header if h.startswith("B_")]
        if not b_cols or header[0] != "t":
            raise DataFormatError("not a trace file", path, 1)
        M, K = (int(v) for v in b_cols[-1].split("_")[1:])
        rest = header[1 + M * K:]
        has_ll = bool(rest) and rest[-1] == "loglik"
        psi_names = rest[:-1] if has_ll else rest
        if psi_names == ["alpha"]:
            make_psi = lambda v: RelaxedParams(*v)  # noqa: E731
        elif psi_names == ["p", "q"]:
            make_psi = lambda v: BasisSelectionParams(*v)  # noqa: E731
        else:
            raise DataFormatError(f"unknown parameter columns {psi_names}", path, 1)
        trace = EstimateTrace()
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataFormatError(f"expected {len(header)} fields, got {len(row)}", path, lineno)
            vals = [float(v) for v in row[1:]]
            B = np.array(vals[:M * K]).reshape(M, K)
            psi = make_psi(vals[M * K:M * K + len(psi_names)])
            ll = vals[-1] if has_ll else None
            if ll is not None and np.isnan(ll):
                ll = None
            trace.append(int(row[0]), ThetaParams(B, psi), loglik=ll)
    return trace


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return Path(path)
