"""Reading, writing and simulating datasets.

File formats (UTF-8, LF or CRLF line endings, ``#`` starts a comment line):

* univariate: one decimal number per non-empty line;
* counts: one nonnegative integer per non-empty line;
* binary matrix / multinomial rows: comma-separated integer rows, with an
  optional non-numeric header row.

Two benchmark datasets ship with the package: the 82 galaxy velocities and
the 216-row Stouffer-Toby latent class table.
"""

import hashlib
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import numerics as nm
from .errors import DataError, ValidationError
from .model import Dataset, MixtureParams, Multinomial, StudentT, simulate_mixture

KIND_ALIASES = {
    "univariate": "univariate-real",
    "real": "univariate-real",
    "univariate-real": "univariate-real",
    "counts": "univariate-count",
    "count": "univariate-count",
    "univariate-count": "univariate-count",
    "multinomial": "multinomial-rows",
    "multinomial-rows": "multinomial-rows",
    "binary": "binary-matrix",
    "binary-matrix": "binary-matrix",
}


def _lines(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"data file not found: {path}") from None
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not valid UTF-8 ({exc})") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line and not line.startswith("#"):
            yield lineno, line


def _apply_scale(values, scale):
    if scale is None or scale == 1 or scale == "raw":
        return values
    if scale == "standardize":
        return (values - values.mean()) / values.std(ddof=1)
    try:
        divisor = float(scale)
    except (TypeError, ValueError):
        raise ValidationError(f"scale must be a positive number, 'raw' or 'standardize', got {scale!r}") from None
    if not divisor > 0:
        raise ValidationError("scale divisor must be positive")
    return values / divisor


def load_univariate(path, scale=None):
    """Real observations, one per line, in file order.

    ``scale`` is ``None``/``"raw"``, a positive divisor, or ``"standardize"``
    (subtract the mean and divide by the sample standard deviation, ``n - 1``
    denominator).
    """
    values = []
    for lineno, line in _lines(path):
        try:
            v = float(line)
        except ValueError:
            raise DataError(f"{path}:{lineno}: not a number: {line!r}") from None
        if not np.isfinite(v):
            raise DataError(f"{path}:{lineno}: non-finite value {line!r}")
        values.append(v)
    if not values:
        raise DataError(f"{path}: no observations")
    return Dataset.real(_apply_scale(np.array(values), scale))


def load_counts(path):
    values = []
    for lineno, line in _lines(path):
        try:
            v = int(line)
        except ValueError:
            raise DataError(f"{path}:{lineno}: not an integer count: {line!r}") from None
        if v < 0:
            raise DataError(f"{path}:{lineno}: negative count {v}")
        values.append(v)
    if not values:
        raise DataError(f"{path}: no observations")
    return Dataset.counts(values)


def _int_rows(path, width, what):
    rows = []
    header_allowed = True
    for lineno, line in _lines(path):
        cells = [c.strip() for c in line.split(",")]
        try:
            row = [int(c) for c in cells]
        except ValueError:
            if header_allowed:
                header_allowed = False
                continue
            col = next(i for i, c in enumerate(cells, 1) if not c.lstrip("-").isdigit())
            raise DataError(f"{path}:{lineno}:{col}: not an integer: {cells[col - 1]!r}") from None
        header_allowed = False
        if width is None:
            width = len(row)
        if len(row) != width:
            raise DataError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
        for col, v in enumerate(row, 1):
            if v < 0 or (what == "binary" and v > 1):
                raise DataError(f"{path}:{lineno}:{col}: invalid {what} cell {v}")
        rows.append(row)
    if not rows:
        raise DataError(f"{path}: no observations")
    return np.array(rows, dtype=np.int64)


def load_binary_matrix(path, d=None):
    """Rows of ``d`` comma-separated 0/1 cells (``d`` inferred when omitted)."""
    return Dataset.binary(_int_rows(path, d, "binary"))


def load_multinomial_rows(path, m=None):
    """Rows of ``m`` nonnegative counts; row totals may differ between rows."""
    return Dataset.multinomial(_int_rows(path, m, "count"))


def load_dataset(path, kind, scale=None, width=None):
    kind = KIND_ALIASES.get(kind)
    if kind is None:
        raise ValidationError(f"unknown data kind; choose from {sorted(KIND_ALIASES)}")
    if kind == "univariate-real":
        return load_univariate(path, scale)
    if kind == "univariate-count":
        return load_counts(path)
    if kind == "binary-matrix":
        return load_binary_matrix(path, width)
    return load_multinomial_rows(path, width)


def write_dataset(data, path):
    """Write ``data`` in the format its loader reads; floats use ``repr``."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if data.kind == "univariate-real":
            for v in data.values:
                fh.write(repr(float(v)) + "\n")
        elif data.kind == "univariate-count":
            for v in data.values:
                fh.write(f"{int(v)}\n")
        else:
            for row in data.values:
                fh.write(",".join(str(int(v)) for v in row) + "\n")


@dataclass(frozen=True)
class DataManifest:
    path: str
    kind: str
    n: int
    checksum: str  # sha256 of the parsed dataset
    file_sha256: str

    def format(self):
        return (
            f"data.path: {self.path}\ndata.kind: {self.kind}\ndata.n: {self.n}\n"
            f"data.checksum: {self.checksum}\ndata.file_sha256: {self.file_sha256}\n"
        )


def manifest_for(path, data):
    digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    return DataManifest(str(path), data.kind, data.n, data.checksum(), digest)


# ---------------------------------------------------------------------------
# bundled benchmarks


def bundled_path(name):
    """Filesystem path of a bundled data file (``galaxy.txt`` or ``stouffer_toby.csv``)."""
    ref = resources.files("mixbayes") / "data" / name
    if not ref.is_file():
        raise DataError(f"no bundled dataset {name!r}")
    return Path(str(ref))


def galaxy(scale=None):
    """The 82 galaxy velocities in km/s; see :func:`load_univariate` for ``scale``."""
    return load_univariate(bundled_path("galaxy.txt"), scale)


def stouffer_toby():
    """The 216 x 4 Stouffer-Toby binary response matrix."""
    return load_binary_matrix(bundled_path("stouffer_toby.csv"), 4)


def stouffer_toby_subset(n=50, seed=0):
    """A reproducible random subset of ``n`` Stouffer-Toby rows (without replacement)."""
    full = stouffer_toby()
    if not 1 <= n <= full.n:
        raise ValidationError(f"subset size must be in 1..{full.n}")
    rng = nm.make_rng(seed)
    return full.subset(np.sort(rng.choice(full.n, size=n, replace=False)))


# ---------------------------------------------------------------------------
# simulated benchmarks

T_BENCHMARK = MixtureParams([0.3, 0.7], [[0.0, 1.0, 5.0], [5.0, 1.0, 11.0]])
MULTINOMIAL_EXAMPLE = MixtureParams([0.5, 0.5], [[0.2, 0.5, 0.2, 0.1], [0.3, 0.3, 0.1, 0.3]])


def simulate_t_benchmark(n=2000, seed=0, params=T_BENCHMARK):
    """Two-component Student-t mixture with ``mu = (0, 5)``, ``sigma2 = (1, 1)``,
    ``nu = (5, 11)`` and ``p_1 = 0.3``.

    Returns the dataset, the true labels and the generating parameters.
    """
    data, z = simulate_mixture(StudentT(), params, n, nm.make_rng(seed))
    return data, z, params


def simulate_multinomial_example(n=50, total=20, seed=0, params=MULTINOMIAL_EXAMPLE):
    """Two-component mixture of four-cell multinomials with ``total`` draws per row."""
    family = Multinomial(params.components.shape[1])
    totals = np.full(n, int(total))
    data, z = simulate_mixture(family, params, n, nm.make_rng(seed), totals=totals)
    return data, z, params
