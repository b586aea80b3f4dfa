"""Readers and writers for features, links, fitted models and reports.

Binary feature file (little-endian)::

    b"GRTMFEAT" | u32 version | u32 N | u32 D | N x u32 counts | float64 payload

Model file (little-endian)::

    b"GRTMMODL" | u32 version | u32 header length | UTF-8 JSON header | arrays

The JSON header lists every array's name and shape in storage order; the
arrays follow as raw float64 (or int64 for integer arrays) bytes.
"""

import csv
import io as _stdio
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from grtm.errors import FormatError
from grtm.mathkit import Covariance
from grtm.model import (
    Corpus,
    FittedModel,
    Hyperparams,
    LinkModel,
    LinkSet,
    TopicParams,
    VariationalState,
)

FEATURE_MAGIC = b"GRTMFEAT"
FEATURE_VERSION = 1
MODEL_MAGIC = b"GRTMMODL"
MODEL_VERSION = 1


def atomic_write(path, data):
    """Write bytes or text to ``path`` via a temporary file and rename."""
    path = Path(path)
    payload = data.encode("utf-8") if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- features ---------------------------------------------------------------


def save_features(corpus, path, fmt="binary"):
    if fmt == "binary":
        head = FEATURE_MAGIC + struct.pack("<III", FEATURE_VERSION, corpus.n_users, corpus.dim)
        counts = corpus.counts.astype("<u4").tobytes()
        body = np.ascontiguousarray(corpus.stacked, dtype="<f8").tobytes()
        atomic_write(path, head + counts + body)
    elif fmt == "csv":
        buf = _stdio.StringIO()
        buf.write("user_id," + ",".join(f"f{j}" for j in range(corpus.dim)) + "\n")
        for uc in corpus.users:
            for row in uc.images:
                buf.write(f"{uc.user_id}," + ",".join(repr(float(x)) for x in row) + "\n")
        atomic_write(path, buf.getvalue())
    else:
        raise ValueError(f"unknown feature format {fmt!r}")


def load_features(path):
    """Read a feature file, binary or CSV (detected from the magic bytes).

    CSV users are reindexed densely in increasing id order; when the ids
    are not already 0..N-1 a sidecar ``<path>.idmap`` is written with one
    ``dense_id original_id`` line per user.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read feature file: {exc}", path) from exc
    if raw.startswith(FEATURE_MAGIC):
        return _parse_binary_features(raw, path)
    if raw[:8].isascii() and b"\x00" not in raw[:64]:
        return _parse_csv_features(raw, path)
    raise FormatError(f"unrecognised magic {raw[:8]!r}, expected {FEATURE_MAGIC!r}", path, "byte 0")


def _parse_binary_features(raw, path):
    fixed = len(FEATURE_MAGIC) + 12
    if len(raw) < fixed:
        raise FormatError(
            f"truncated header: expected at least {fixed} bytes, got {len(raw)}", path, f"byte {len(raw)}"
        )
    version, n_users, dim = struct.unpack_from("<III", raw, len(FEATURE_MAGIC))
    if version != FEATURE_VERSION:
        raise FormatError(f"unsupported feature version {version} (expected {FEATURE_VERSION})", path, "byte 8")
    if n_users < 1 or dim < 1:
        raise FormatError(f"invalid header N={n_users}, D={dim}", path, "byte 12")
    counts_end = fixed + 4 * n_users
    if len(raw) < counts_end:
        raise FormatError(
            f"truncated image counts: expected {counts_end} bytes, got {len(raw)}", path, f"byte {len(raw)}"
        )
    counts = np.frombuffer(raw, dtype="<u4", count=n_users, offset=fixed).astype(np.int64)
    expected = counts_end + 8 * int(counts.sum()) * dim
    if len(raw) != expected:
        kind = "truncated payload" if len(raw) < expected else "trailing bytes after payload"
        raise FormatError(
            f"{kind}: expected {expected} bytes, got {len(raw)}", path, f"byte {min(len(raw), expected)}"
        )
    data = np.frombuffer(raw, dtype="<f8", offset=counts_end).astype(np.float64).reshape(-1, dim)
    bad = np.nonzero(~np.isfinite(data))
    if bad[0].size:
        row, col = int(bad[0][0]), int(bad[1][0])
        raise FormatError(
            f"non-finite feature value in image row {row}, column {col}",
            path,
            f"byte {counts_end + 8 * (row * dim + col)}",
        )
    offsets = np.concatenate([[0], np.cumsum(counts)])
    return Corpus([data[offsets[u]:offsets[u + 1]] for u in range(n_users)], dim=dim)


def _parse_csv_features(raw, path):
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"not UTF-8 text: {exc}", path, f"byte {exc.start}") from exc
    rows = {}
    dim = None
    for lineno, fields in enumerate(csv.reader(_stdio.StringIO(text)), start=1):
        if not fields or (len(fields) == 1 and not fields[0].strip()):
            continue
        if fields[0].strip().startswith("#"):
            continue
        if lineno == 1 and fields[0].strip() == "user_id":
            continue
        if len(fields) < 2:
            raise FormatError("expected user_id followed by feature values", path, f"line {lineno}")
        try:
            uid = int(fields[0])
        except ValueError:
            raise FormatError(f"user id {fields[0]!r} is not an integer", path, f"line {lineno}") from None
        try:
            vec = [float(x) for x in fields[1:]]
        except ValueError as exc:
            raise FormatError(f"bad feature value: {exc}", path, f"line {lineno}") from None
        if dim is None:
            dim = len(vec)
        elif len(vec) != dim:
            raise FormatError(f"expected {dim} features, got {len(vec)}", path, f"line {lineno}")
        if not all(np.isfinite(vec)):
            raise FormatError("non-finite feature value", path, f"line {lineno}")
        rows.setdefault(uid, []).append(vec)
    if dim is None:
        raise FormatError("no feature rows", path, "line 1")
    ids = sorted(rows)
    if ids != list(range(len(ids))):
        sidecar = Path(str(path) + ".idmap")
        atomic_write(sidecar, "".join(f"{i} {orig}\n" for i, orig in enumerate(ids)))
    return Corpus([np.array(rows[i], dtype=np.float64) for i in ids], dim=dim)


# -- links ------------------------------------------------------------------


def load_links(path):
    """Read ``u v`` pairs, one per line; ``#`` starts a comment."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise FormatError(f"cannot read link file: {exc}", path) from exc
    edges = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].split()
        if not body:
            continue
        if len(body) != 2:
            raise FormatError(f"expected 2 tokens, got {len(body)}", path, f"line {lineno}")
        try:
            u, v = int(body[0]), int(body[1])
        except ValueError:
            raise FormatError(f"non-integer token in {line.strip()!r}", path, f"line {lineno}") from None
        if u < 0 or v < 0:
            raise FormatError("negative user id", path, f"line {lineno}")
        if u == v:
            raise FormatError(f"self-loop on user {u}", path, f"line {lineno}")
        edges.append((u, v))
    return LinkSet(edges)


def save_links(links, path, header=None):
    lines = [f"# {header}\n"] if header else []
    lines += [f"{u} {v}\n" for u, v in links]
    atomic_write(path, "".join(lines))


# -- models -----------------------------------------------------------------


def _hyper_dict(hp):
    return {
        "alpha": hp.alpha,
        "K": hp.K,
        "rho": hp.rho,
        "cov_kind": hp.cov_kind,
        "max_iters": hp.max_iters,
        "elbo_rel_tol": hp.elbo_rel_tol,
        "seed": hp.seed,
    }


def save_model(model, path, include_phi=True):
    """Serialise a fitted model; every float is stored bit-exactly."""
    state = model.variational_state
    topics = model.topic_params
    counts = model.counts if model.counts is not None else (
        np.array([r.shape[0] for r in state.phi], dtype=np.int64) if state.phi is not None else None
    )
    has_phi = include_phi and state.phi is not None
    if topics.cov_kind == "diagonal":
        cov = np.vstack([c.values for c in topics.covariances])
    else:
        cov = np.stack([c.values for c in topics.covariances])
    arrays = [
        ("means", topics.means),
        ("covariances", cov),
        ("eta", model.link_model.eta),
        ("nu", np.array([model.link_model.nu])),
        ("gamma", state.gamma),
        ("phibar", state.phibar()),
        ("elbo_trace", np.asarray(model.elbo_trace, dtype=np.float64)),
        ("train_links", model.train_links.as_array()),
    ]
    if counts is not None:
        arrays.append(("counts", np.asarray(counts, dtype=np.int64)))
    if has_phi:
        arrays.append(("phi", state.stacked_phi()))
    header = {
        "hyperparams": _hyper_dict(model.hyperparams),
        "cov_kind": topics.cov_kind,
        "has_phi": has_phi,
        "split_info": model.split_info,
        "arrays": [
            {"name": name, "dtype": "i8" if arr.dtype.kind in "iu" else "f8", "shape": list(arr.shape)}
            for name, arr in arrays
        ],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MODEL_MAGIC, struct.pack("<II", MODEL_VERSION, len(head)), head]
    for (name, arr), spec in zip(arrays, header["arrays"]):
        parts.append(np.ascontiguousarray(arr, dtype="<" + spec["dtype"]).tobytes())
    atomic_write(path, b"".join(parts))


def load_model(path):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read model file: {exc}", path) from exc
    if not raw.startswith(MODEL_MAGIC):
        raise FormatError(f"bad magic {raw[:8]!r}, expected {MODEL_MAGIC!r}", path, "byte 0")
    if len(raw) < 16:
        raise FormatError("truncated model header", path, f"byte {len(raw)}")
    version, hlen = struct.unpack_from("<II", raw, 8)
    if version != MODEL_VERSION:
        raise FormatError(
            f"model file version {version} does not match supported version {MODEL_VERSION}", path, "byte 8"
        )
    if len(raw) < 16 + hlen:
        raise FormatError(f"truncated header: expected {16 + hlen} bytes, got {len(raw)}", path, f"byte {len(raw)}")
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
        specs = header["arrays"]
        hp = Hyperparams(**header["hyperparams"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"corrupt model header: {exc}", path, "byte 16") from exc

    arrays = {}
    pos = 16 + hlen
    for spec in specs:
        try:
            shape = tuple(int(s) for s in spec["shape"])
            dtype = np.dtype("<" + spec["dtype"])
            name = spec["name"]
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"corrupt array entry {spec!r}", path, "byte 16") from exc
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if pos + nbytes > len(raw):
            raise FormatError(
                f"truncated array {name!r}: expected {pos + nbytes} bytes, got {len(raw)}", path, f"byte {len(raw)}"
            )
        arrays[name] = np.frombuffer(raw, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos).reshape(shape).copy()
        pos += nbytes
    if pos != len(raw):
        raise FormatError(f"{len(raw) - pos} trailing bytes after arrays", path, f"byte {pos}")

    try:
        kind = header["cov_kind"]
        if kind == "diagonal":
            covs = [Covariance("diagonal", row.copy()) for row in arrays["covariances"]]
        else:
            covs = [Covariance("full", m.copy()) for m in arrays["covariances"]]
        topics = TopicParams(arrays["means"], covs)
        counts = arrays.get("counts")
        if header.get("has_phi"):
            offsets = np.concatenate([[0], np.cumsum(counts)])
            phi = [arrays["phi"][offsets[u]:offsets[u + 1]].copy() for u in range(len(counts))]
            state = VariationalState(phi, arrays["gamma"], arrays["phibar"])
        else:
            state = VariationalState(None, arrays["gamma"], arrays["phibar"])
        links = LinkSet(map(tuple, arrays["train_links"].tolist()))
        return FittedModel(
            hp,
            topics,
            state,
            LinkModel(arrays["eta"], float(arrays["nu"][0])),
            arrays["elbo_trace"].tolist(),
            links,
            counts,
            header.get("split_info", {}),
        )
    except (KeyError, ValueError, TypeError, IndexError) as exc:
        raise FormatError(f"inconsistent model contents: {exc}", path) from exc


# -- reports ----------------------------------------------------------------


def _fmt(x):
    return repr(float(x))


def export_report(report, out_dir, label=None):
    """Write ``roc.csv``, ``pr.csv`` and ``summary.txt`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    roc_lines = ["threshold,fpr,tpr\n"] + [
        f"{_fmt(t)},{_fmt(x)},{_fmt(y)}\n" for t, x, y in zip(report.roc.thresholds, report.roc.x, report.roc.y)
    ]
    pr_lines = ["threshold,recall,precision\n"] + [
        f"{_fmt(t)},{_fmt(x)},{_fmt(y)}\n" for t, x, y in zip(report.pr.thresholds, report.pr.x, report.pr.y)
    ]
    summary = []
    if label:
        summary.append(f"method={label}\n")
    summary += [
        f"roc_auc={_fmt(report.roc_auc)}\n",
        f"pr_auc={_fmt(report.pr_auc)}\n",
    ]
    for r, p in sorted(report.precision_at.items()):
        summary.append(f"precision_at_recall_{r:.2f}={_fmt(p)}\n")
    summary += [f"n_positive={report.n_positive}\n", f"n_negative={report.n_negative}\n"]
    paths = {name: out / name for name in ("roc.csv", "pr.csv", "summary.txt")}
    atomic_write(paths["roc.csv"], "".join(roc_lines))
    atomic_write(paths["pr.csv"], "".join(pr_lines))
    atomic_write(paths["summary.txt"], "".join(summary))
    return paths
