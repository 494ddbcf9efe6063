"""File formats (library CSV, ENVI-style cubes, results JSON) and synthetic scenes."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import REFLECTANCE, AbundanceSolution, PixelSpectrum, SpectralLibrary
from .errors import (
    DuplicateName,
    HeaderSyntax,
    InvalidSparsity,
    IoError,
    NegativeReflectance,
    ParseError,
    SizeMismatch,
    UnsupportedDataType,
)
from .metrics import EvalReport

WAVELENGTH_ROW = "__wavelengths__"

# ---------------------------------------------------------------------------
# spectral library CSV
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LibraryFileRecord:
    name: str
    category: str
    wavelengths: np.ndarray
    reflectances: np.ndarray


def _parse_float(text: str, line: int, column: int) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"non-numeric value {text!r}", line, column) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite value {text!r}", line, column)
    return v


def read_library_records(path) -> list[LibraryFileRecord]:
    path = Path(path)
    if not path.exists():
        raise IoError(f"library file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty library file", 1)
    header = [h.strip() for h in rows[0]]
    if len(header) < 3 or header[0].lower() != "name" or header[1].lower() != "category":
        raise ParseError("header must start with 'name,category' followed by band columns", 1)
    n_bands = len(header) - 2
    if len(rows) < 2 or rows[1][:1] != [WAVELENGTH_ROW]:
        raise ParseError(f"first data row must be {WAVELENGTH_ROW!r}", 2)
    if len(rows[1]) != len(header):
        raise ParseError(f"expected {len(header)} fields, got {len(rows[1])}", 2)
    wl = np.array([_parse_float(v, 2, c + 3) for c, v in enumerate(rows[1][2:])])
    if n_bands > 1 and not np.all(np.diff(wl) > 0):
        raise ParseError("wavelengths must be strictly increasing", 2)
    records = []
    seen: dict[str, int] = {}
    for lineno, row in enumerate(rows[2:], start=3):
        if not row or all(not f.strip() for f in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", lineno)
        name, category = row[0], row[1]
        if not name:
            raise ParseError("empty spectrum name", lineno, 1)
        if not category:
            raise ParseError("empty category", lineno, 2)
        if name in seen:
            raise DuplicateName(f"duplicate spectrum name {name!r} (first on line {seen[name]})", lineno, 1)
        seen[name] = lineno
        vals = np.array([_parse_float(v, lineno, c + 3) for c, v in enumerate(row[2:])])
        neg = np.flatnonzero(vals < 0)
        if neg.size:
            raise NegativeReflectance(f"negative reflectance {vals[neg[0]]!r}", lineno, int(neg[0]) + 3)
        records.append(LibraryFileRecord(name, category, wl, vals))
    if not records:
        raise ParseError("library has no spectra", len(rows))
    return records


def load_library(path) -> SpectralLibrary:
    """Read a library CSV: ``name,category,<band columns>`` with a wavelength row first."""
    recs = read_library_records(path)
    S = np.column_stack([r.reflectances for r in recs])
    return SpectralLibrary(recs[0].wavelengths, S, [r.name for r in recs], [r.category for r in recs])


def save_library(path, library: SpectralLibrary) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["name", "category"] + [f"band_{j}" for j in range(library.n_bands)])
            w.writerow([WAVELENGTH_ROW, ""] + [repr(float(v)) for v in library.band_wavelengths])
            for i in range(library.n_spectra):
                w.writerow([library.names[i], library.categories[i]]
                           + [repr(float(v)) for v in library.spectra[:, i]])
    except OSError as exc:
        raise IoError(str(exc)) from exc


# ---------------------------------------------------------------------------
# ENVI-style cubes
# ---------------------------------------------------------------------------

_DTYPES = {4: np.float32, 5: np.float64}
_INTERLEAVES = ("bsq", "bil", "bip")


@dataclass(frozen=True)
class CubeHeader:
    samples: int
    lines: int
    bands: int
    interleave: str = "bsq"
    data_type: int = 5
    byte_order: int = 0
    wavelengths: tuple[float, ...] = ()
    header_offset: int = 0

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(_DTYPES[self.data_type]).newbyteorder("<" if self.byte_order == 0 else ">")

    @property
    def data_size(self) -> int:
        return self.samples * self.lines * self.bands * self.dtype.itemsize


@dataclass
class Cube:
    """Pixel data as a (lines, samples, bands) float64 array plus band wavelengths."""

    data: np.ndarray
    wavelengths: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def shape(self):
        return self.data.shape

    def pixel(self, line: int, sample: int) -> PixelSpectrum:
        wl = self.wavelengths if self.wavelengths.size == self.data.shape[2] else None
        return PixelSpectrum(self.data[line, sample], wl)

    def pixels(self) -> list[PixelSpectrum]:
        L, S, _ = self.data.shape
        return [self.pixel(l, s) for l in range(L) for s in range(S)]


def _header_lines(text: str):
    """Yield (lineno, key, value) with brace-delimited values joined across lines."""
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        raw = lines[i]
        lineno = i + 1
        i += 1
        stripped = raw.strip()
        if not stripped or stripped.startswith(";") or stripped.upper() == "ENVI":
            continue
        if "=" not in stripped:
            raise HeaderSyntax(f"expected 'key = value', got {stripped!r}", lineno)
        key, _, val = stripped.partition("=")
        key = key.strip().lower()
        val = val.strip()
        if val.startswith("{"):
            while "}" not in val:
                if i >= len(lines):
                    raise HeaderSyntax(f"unterminated '{{' for key {key!r}", lineno)
                val += " " + lines[i].strip()
                i += 1
            val = val[1:val.index("}")]
        yield lineno, key, val


def parse_header(text: str) -> CubeHeader:
    first = text.lstrip().split("\n", 1)[0].strip()
    if first.upper() != "ENVI":
        raise HeaderSyntax("header must start with 'ENVI'", 1)
    fields: dict[str, tuple[int, str]] = {}
    for lineno, key, val in _header_lines(text):
        fields[key] = (lineno, val)

    def int_field(name, required=True, default=None):
        if name not in fields:
            if required:
                raise HeaderSyntax(f"missing required key {name!r}")
            return default
        lineno, val = fields[name]
        try:
            return int(val)
        except ValueError:
            raise HeaderSyntax(f"{name} must be an integer, got {val!r}", lineno) from None

    samples, lines, bands = int_field("samples"), int_field("lines"), int_field("bands")
    if min(samples, lines, bands) < 1:
        raise HeaderSyntax("samples, lines and bands must be >= 1")
    if "interleave" not in fields:
        raise HeaderSyntax("missing required key 'interleave'")
    il_line, interleave = fields["interleave"]
    interleave = interleave.strip().lower()
    if interleave not in _INTERLEAVES:
        raise HeaderSyntax(f"interleave must be one of {_INTERLEAVES}, got {interleave!r}", il_line)
    data_type = int_field("data type")
    if data_type not in _DTYPES:
        raise UnsupportedDataType(f"data type {data_type} not supported (use 4 or 5)")
    byte_order = int_field("byte order")
    if byte_order not in (0, 1):
        raise HeaderSyntax(f"byte order must be 0 or 1, got {byte_order}", fields["byte order"][0])
    wl: tuple[float, ...] = ()
    if "wavelength" in fields:
        lineno, val = fields["wavelength"]
        try:
            wl = tuple(float(v) for v in val.split(",") if v.strip())
        except ValueError:
            raise HeaderSyntax("wavelength list is not numeric", lineno) from None
        if len(wl) != bands:
            raise HeaderSyntax(f"{len(wl)} wavelengths for {bands} bands", lineno)
    else:
        raise HeaderSyntax("missing required key 'wavelength'")
    offset = int_field("header offset", required=False, default=0)
    return CubeHeader(samples, lines, bands, interleave, data_type, byte_order, wl, offset)


def format_header(h: CubeHeader) -> str:
    wl = ", ".join(repr(float(v)) for v in h.wavelengths)
    return (
        "ENVI\n"
        f"samples = {h.samples}\n"
        f"lines = {h.lines}\n"
        f"bands = {h.bands}\n"
        f"header offset = {h.header_offset}\n"
        f"data type = {h.data_type}\n"
        f"interleave = {h.interleave}\n"
        f"byte order = {h.byte_order}\n"
        f"wavelength units = Micrometers\n"
        f"wavelength = {{{wl}}}\n"
    )


def load_cube(header_path, data_path=None) -> Cube:
    """Read an ENVI-style header plus raw binary file into a :class:`Cube`.

    ``data_path`` defaults to the header path without its ``.hdr`` suffix.
    """
    header_path = Path(header_path)
    if data_path is None:
        data_path = header_path.with_suffix("") if header_path.suffix == ".hdr" else header_path.with_suffix(".img")
    try:
        text = header_path.read_text(encoding="utf-8")
        raw = Path(data_path).read_bytes()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    h = parse_header(text)
    payload = raw[h.header_offset:]
    if len(payload) != h.data_size:
        raise SizeMismatch(
            f"data file holds {len(payload)} bytes, header implies {h.data_size} "
            f"({h.lines} lines x {h.samples} samples x {h.bands} bands x {h.dtype.itemsize} bytes)"
        )
    flat = np.frombuffer(payload, dtype=h.dtype)
    if h.interleave == "bsq":
        arr = flat.reshape(h.bands, h.lines, h.samples).transpose(1, 2, 0)
    elif h.interleave == "bil":
        arr = flat.reshape(h.lines, h.bands, h.samples).transpose(0, 2, 1)
    else:
        arr = flat.reshape(h.lines, h.samples, h.bands)
    return Cube(np.ascontiguousarray(arr, dtype=np.float64), np.array(h.wavelengths))


def save_cube(header_path, data_path, cube: Cube, interleave: str = "bsq", data_type: int = 5,
              byte_order: int = 0) -> CubeHeader:
    if interleave not in _INTERLEAVES:
        raise ValueError(f"interleave must be one of {_INTERLEAVES}")
    if data_type not in _DTYPES:
        raise UnsupportedDataType(f"data type {data_type} not supported (use 4 or 5)")
    L, S, B = cube.data.shape
    wl = tuple(float(v) for v in cube.wavelengths) if cube.wavelengths.size == B else tuple(float(j) for j in range(B))
    h = CubeHeader(S, L, B, interleave, data_type, byte_order, wl)
    arr = cube.data
    if interleave == "bsq":
        arr = arr.transpose(2, 0, 1)
    elif interleave == "bil":
        arr = arr.transpose(0, 2, 1)
    try:
        Path(data_path).write_bytes(np.ascontiguousarray(arr, dtype=h.dtype).tobytes())
        Path(header_path).write_text(format_header(h), encoding="utf-8")
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return h


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

MINERAL_GROUPS = ("sulfate", "phyllosilicate", "tectosilicate", "nesosilicate", "carbonate", "hydroxide")


def synthetic_library(n_spectra: int, n_bands: int, seed: int = 0, wavelength_range=(0.4, 2.5),
                      categories: Sequence[str] = MINERAL_GROUPS) -> SpectralLibrary:
    """Reflectance-like spectra: a sloped continuum times 2-4 Gaussian absorption bands.

    Categories cycle through ``categories`` and names are ``<category>_<nn>``.
    """
    rng = np.random.default_rng(seed)
    wl = np.linspace(wavelength_range[0], wavelength_range[1], n_bands)
    mid = wl.mean()
    S = np.empty((n_bands, n_spectra), order="F")
    for i in range(n_spectra):
        spec = rng.uniform(0.3, 0.8) + rng.uniform(-0.1, 0.1) * (wl - mid)
        for _ in range(rng.integers(2, 5)):
            centre = rng.uniform(wl[0], wl[-1])
            width = rng.uniform(0.03, 0.2)
            depth = rng.uniform(0.1, 0.5)
            spec = spec * (1.0 - depth * np.exp(-0.5 * ((wl - centre) / width) ** 2))
        S[:, i] = np.clip(spec, 0.0, None)
    cats = [categories[i % len(categories)] for i in range(n_spectra)]
    names = [f"{c}_{i:03d}" for i, c in enumerate(cats)]
    return SpectralLibrary(wl, S, names, cats)


@dataclass
class SynthScene:
    pixels: list[PixelSpectrum]
    ground_truth: list[dict[int, float]]
    snr_db: float
    seed: int

    def as_cube(self, samples: int | None = None) -> Cube:
        """Arrange pixels into a single-line cube (or ``samples`` per line)."""
        n = len(self.pixels)
        samples = samples or n
        lines = math.ceil(n / samples)
        if lines * samples != n:
            raise ValueError(f"{n} pixels do not fill {lines} x {samples}")
        data = np.vstack([p.values for p in self.pixels]).reshape(lines, samples, -1)
        wl = self.pixels[0].wavelengths
        return Cube(data, np.zeros(0) if wl is None else np.array(wl))


def generate_scene(library: SpectralLibrary, n_pixels: int, sparsity: int,
                   abundance_range=(0.1, 1.0), snr_db: float = math.inf, seed: int = 0) -> SynthScene:
    """Draw sparse nonnegative mixtures ``y = S a + noise``.

    Per pixel: ``sparsity`` distinct spectra, abundances uniform on
    ``abundance_range``, and white Gaussian noise rescaled so that
    ``10 log10(||S a||^2 / ||noise||^2)`` equals ``snr_db`` exactly. An
    infinite ``snr_db`` gives noiseless pixels.
    """
    N = library.n_spectra
    if not 1 <= sparsity <= N:
        raise InvalidSparsity(f"sparsity {sparsity} outside [1, {N}]")
    lo, hi = abundance_range
    if not 0 < lo <= hi:
        raise InvalidSparsity(f"abundance range {abundance_range} must satisfy 0 < low <= high")
    if n_pixels < 1:
        raise InvalidSparsity("n_pixels must be >= 1")
    rng = np.random.default_rng(seed)
    S = library.spectra
    pixels, truth = [], []
    for _ in range(n_pixels):
        idx = np.sort(rng.choice(N, size=sparsity, replace=False))
        a = rng.uniform(lo, hi, size=sparsity)
        clean = S[:, idx] @ a
        noise = rng.standard_normal(library.n_bands)
        if math.isinf(snr_db):
            y = clean
        else:
            scale = math.sqrt(float(clean @ clean) / (float(noise @ noise) * 10.0 ** (snr_db / 10.0)))
            y = clean + scale * noise
        pixels.append(PixelSpectrum(y, library.band_wavelengths))
        truth.append({int(i): float(v) for i, v in zip(idx, a)})
    return SynthScene(pixels, truth, float(snr_db), seed)


# ---------------------------------------------------------------------------
# results JSON
# ---------------------------------------------------------------------------


def solution_record(pixel_id, solver: str, sol: AbundanceSolution, runtime: bool = True) -> dict:
    rec = {
        "id": pixel_id,
        "solver": solver,
        "coefficients": {str(i): v for i, v in sol.coefficients.items()},
        "rmse": sol.rmse,
        "rmse_units": sol.units,
    }
    if runtime:
        rec["runtime_s"] = sol.runtime
    return rec


def results_document(library_path, records: list[dict], report: EvalReport | None = None) -> dict:
    return {
        "library": None if library_path is None else str(library_path),
        "pixels": list(records),
        "report": None if report is None else report.to_dict(),
    }


def save_results(path, solutions, report: EvalReport | None = None, library_path=None) -> None:
    """Write the results JSON document.

    ``solutions`` is a list of ready-made record dicts or of
    ``(id, solver, AbundanceSolution)`` triples.
    """
    records = [s if isinstance(s, dict) else solution_record(*s) for s in solutions]
    doc = results_document(library_path, records, report)
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise IoError(str(exc)) from exc


def load_results(path) -> dict:
    """Read a results document; coefficient keys come back as ints."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise IoError(str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", exc.lineno, exc.colno) from None
    for rec in doc.get("pixels", []):
        rec["coefficients"] = {int(k): v for k, v in rec["coefficients"].items()}
    if doc.get("report") is not None:
        doc["report"] = EvalReport.from_dict(doc["report"])
    return doc


def solution_from_record(rec: dict) -> AbundanceSolution:
    """Rebuild a (residual-free) solution from a results record, e.g. for re-scoring."""
    coeffs = {int(k): float(v) for k, v in rec["coefficients"].items()}
    return AbundanceSolution(
        coefficients=coeffs,
        residual=np.zeros(0),
        rmse=float(rec["rmse"]),
        runtime=float(rec.get("runtime_s", 0.0)),
        selected=list(coeffs),
        units=rec.get("rmse_units", REFLECTANCE),
    )
