"""Dataset and model files, CSV output and atomic writes."""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from importlib import resources

import numpy as np

from .errors import ArgumentError, ShapeError
from .matnorm import FactoredPCs, MatNormalParams, MatrixDataset
from .mmcd import MmcdConfig, MmcdDiagnostics, MmcdFit
from .hrfpca import HrfpcaModel

DATASET_MAGIC = "MATDS"
DATASET_VERSION = "v1"
MODEL_FORMAT = "matpca-model"
MODEL_VERSION = 1

#: prefix selecting a dataset shipped with the package
BUNDLED_PREFIX = "bundled:"
BUNDLED = ("data2", "data2_o")


def _file_mode() -> int:
    # mkstemp creates 0600 files; give outputs the usual umask-derived mode
    mask = os.umask(0)
    os.umask(mask)
    return 0o666 & ~mask


_FILE_MODE = _file_mode()


def fmt(x: float) -> str:
    """17 significant digits: enough to round-trip any double."""
    return format(float(x), ".17g")


def atomic_write(path, text: str) -> None:
    """Write ``text`` to a temporary file next to ``path``, then rename it over."""
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.chmod(tmp, _FILE_MODE)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_dataset(data: MatrixDataset) -> str:
    n, d_c, d_r = data.samples.shape
    lines = [f"{DATASET_MAGIC} {DATASET_VERSION} {n} {d_c} {d_r}"]
    for row in data.samples.reshape(n * d_c, d_r):
        lines.append(" ".join(fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def parse_dataset(text: str) -> MatrixDataset:
    lines = text.splitlines()
    if not lines:
        raise ArgumentError("empty dataset file")
    head = lines[0].split()
    if len(head) != 5 or head[0] != DATASET_MAGIC or head[1] != DATASET_VERSION:
        raise ArgumentError(f"bad dataset header {lines[0]!r}")
    try:
        n, d_c, d_r = (int(t) for t in head[2:])
    except ValueError as exc:
        raise ArgumentError(f"bad dataset header {lines[0]!r}") from exc
    if min(n, d_c, d_r) < 1:
        raise ArgumentError("dataset dimensions must be positive")
    body = lines[1:]
    if len(body) != n * d_c:
        raise ShapeError(f"expected {n * d_c} data lines, found {len(body)}")
    rows = []
    for k, line in enumerate(body, start=2):
        toks = line.split()
        if len(toks) != d_r:
            raise ShapeError(f"line {k}: expected {d_r} values, found {len(toks)}")
        try:
            vals = [float(t) for t in toks]
        except ValueError as exc:
            raise ArgumentError(f"line {k}: {exc}") from exc
        if not all(np.isfinite(vals)):
            raise ArgumentError(f"line {k}: non-finite value")
        rows.append(vals)
    return MatrixDataset(np.array(rows).reshape(n, d_c, d_r))


def write_dataset(path, data: MatrixDataset) -> None:
    atomic_write(path, format_dataset(data))


def read_dataset(path) -> MatrixDataset:
    """Read a dataset file; ``bundled:<name>`` loads a dataset shipped with the package."""
    path = os.fspath(path)
    if path.startswith(BUNDLED_PREFIX):
        name = path[len(BUNDLED_PREFIX):]
        if name not in BUNDLED:
            raise ArgumentError(f"unknown bundled dataset {name!r}; choose from {BUNDLED}")
        text = resources.files("matpca").joinpath("data", f"{name}.matds").read_text()
        return parse_dataset(text)
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_dataset(fh.read())
    except OSError as exc:
        raise ArgumentError(f"cannot read dataset {path}: {exc}") from exc


def format_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_csv(path, header, rows) -> None:
    atomic_write(path, format_csv(header, rows))


# -- model files ------------------------------------------------------------

def _arr(a):
    return None if a is None else np.asarray(a, dtype=float).tolist()


def _params_doc(p: MatNormalParams):
    return {"M": _arr(p.M), "sigma_c": _arr(p.sigma_c), "sigma_r": _arr(p.sigma_r)}


def _params_from(doc):
    return None if doc is None else MatNormalParams(
        np.array(doc["M"]), np.array(doc["sigma_c"]), np.array(doc["sigma_r"])
    )


def model_to_dict(model: HrfpcaModel) -> dict:
    pcs = model.pcs
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "method_tag": model.method_tag,
        "raw": model.raw,
        "d_c": model.params.d_c,
        "d_r": model.params.d_r,
        "q_c": pcs.q_c,
        "q_r": pcs.q_r,
        "params": _params_doc(model.params),
        "lambda_c": _arr(pcs.lambda_c),
        "lambda_r": _arr(pcs.lambda_r),
        "U_c": _arr(pcs.U_c),
        "U_r": _arr(pcs.U_r),
        "mmcd": None,
    }
    fit = model.mmcd
    if fit is not None:
        doc["mmcd"] = {
            "subset": [int(i) for i in fit.subset],
            "raw_mle": _params_doc(fit.raw_mle),
            "raw_params": _params_doc(fit.raw_params),
            "raw_objective": fit.raw_objective,
            "raw_consistency": fit.raw_consistency,
            "config": {k: getattr(fit.config_echo, k) for k in MmcdConfig.__dataclass_fields__},
            "diagnostics": {
                "valid_starts": fit.diagnostics.valid_starts,
                "failed_starts": fit.diagnostics.failed_starts,
                "cstep_violations": fit.diagnostics.cstep_violations,
                "unterminated_chains": fit.diagnostics.unterminated_chains,
                "chain_lengths": list(fit.diagnostics.chain_lengths),
            },
            "reweighted_params": None if fit.reweighted_params is None else _params_doc(fit.reweighted_params),
            "weights": _arr(fit.weights),
            "distances": _arr(fit.distances),
            "reweight_alpha": fit.reweight_alpha,
            "reweight_consistency": fit.reweight_consistency,
        }
    return doc


def model_from_dict(doc: dict) -> HrfpcaModel:
    if doc.get("format") != MODEL_FORMAT or "version" not in doc:
        raise ArgumentError("not a model file (missing format or version)")
    if doc["version"] != MODEL_VERSION:
        raise ArgumentError(f"unsupported model version {doc['version']!r}")
    pcs = FactoredPCs(
        np.array(doc["U_c"]), np.array(doc["lambda_c"]), np.array(doc["U_r"]), np.array(doc["lambda_r"])
    )
    fit = None
    m = doc.get("mmcd")
    if m is not None:
        d = m["diagnostics"]
        fit = MmcdFit(
            subset=np.array(m["subset"], dtype=np.int64),
            raw_mle=_params_from(m["raw_mle"]),
            raw_params=_params_from(m["raw_params"]),
            raw_objective=m["raw_objective"],
            raw_consistency=m["raw_consistency"],
            config_echo=MmcdConfig(**m["config"]),
            diagnostics=MmcdDiagnostics(
                d["valid_starts"], d["failed_starts"], d["cstep_violations"],
                d["unterminated_chains"], tuple(d["chain_lengths"]),
            ),
            reweighted_params=_params_from(m["reweighted_params"]),
            weights=None if m["weights"] is None else np.array(m["weights"]),
            distances=None if m["distances"] is None else np.array(m["distances"]),
            reweight_alpha=m["reweight_alpha"],
            reweight_consistency=m["reweight_consistency"],
        )
    return HrfpcaModel(_params_from(doc["params"]), pcs, doc["method_tag"], fit, doc.get("raw", False))


def format_model(model: HrfpcaModel) -> str:
    return json.dumps(model_to_dict(model), indent=1, sort_keys=True) + "\n"


def save_model(path, model: HrfpcaModel) -> None:
    atomic_write(path, format_model(model))


def load_model(path) -> HrfpcaModel:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ArgumentError(f"cannot read model {path}: {exc}") from exc
    try:
        return model_from_dict(doc)
    except (KeyError, TypeError) as exc:
        raise ArgumentError(f"malformed model file {path}: {exc}") from exc
