"""Sweep containers, text serialization, and run configuration.

File conventions, chosen to be diff-friendly and plotting-tool agnostic:

* CSV with ``#``-prefixed ``key = value`` metadata lines before the
  header row, fixed column order, one record per line.
* Floats are written with ``repr``, the shortest decimal that round
  trips, so identical data always produces identical bytes.
* JSON reports use sorted keys and embed units in key names
  (``kappa_0_over_2pi_hz``), also byte-stable.

Field-sweep files are b-major: all probe frequencies of the first field
point, then the next field, and so on.  Parsers raise
:class:`~spincavity.errors.SchemaError` carrying the offending line
number whenever a line (rather than the overall structure) is at fault.
"""

import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
import yaml

try:
    from importlib import resources as _resources
except ImportError:  # pragma: no cover
    _resources = None

from .coupling import CpwGeometry, CrystalStack, OrientationMask
from .errors import SchemaError
from .inout import ResonatorParams, SpinResonance, TransmissionModelParams
from .spinsystem import SpinSystemParams, TransitionId, resonance_field

_SWEEP_HEADER = "b_tesla,omega_hz,s21_power"
_SWEEP_HEADER_DB = "b_tesla,omega_hz,s21_db"
_SERIES_HEADER = "temperature_k,transition,g_eff_hz"
_KAPPA_HEADER = "b_tesla,kappa_eff_hz,stderr_hz,status"
_DB_FLOOR = 1e-30

_NOISE_MODELS = ("none", "multiplicative", "additive")


def format_float(x):
    """Shortest round-trip decimal representation."""
    return repr(float(x))


@dataclass(frozen=True, eq=False)
class FieldSweep:
    """A |S21|^2 map over (static field, probe frequency).

    power is linear (dimensionless) with shape
    (len(b_grid), len(omega_grid)).  The metadata fields mirror the CSV
    header keys and may be absent.
    """

    b_grid: np.ndarray
    omega_grid: np.ndarray
    power: np.ndarray
    temperature_k: float = None
    power_dbm: float = None
    mode_index: int = None

    def __post_init__(self):
        b = np.asarray(self.b_grid, dtype=float)
        om = np.asarray(self.omega_grid, dtype=float)
        p = np.asarray(self.power, dtype=float)
        object.__setattr__(self, "b_grid", b)
        object.__setattr__(self, "omega_grid", om)
        object.__setattr__(self, "power", p)
        if b.ndim != 1 or om.ndim != 1 or b.size == 0 or om.size == 0:
            raise ValueError("grids must be non-empty 1-D arrays")
        if np.any(np.diff(b) <= 0) or np.any(np.diff(om) <= 0):
            raise ValueError("grids must be strictly increasing")
        if p.shape != (b.size, om.size):
            raise ValueError(
                f"power shape {p.shape} does not match grids "
                f"({b.size}, {om.size})")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise ValueError("power values must be finite and non-negative")

    def row(self, i):
        """The spectrum at b_grid[i]."""
        return self.power[i, :]

    def nearest_row(self, b0):
        """Index of the field grid point closest to b0."""
        return int(np.argmin(np.abs(self.b_grid - b0)))


def write_field_sweep(sweep, path, db=False):
    """Emit a sweep as CSV; db=True converts power to dB on the way out.

    dB output is presentation-only: the reader accepts linear files.
    """
    power = sweep.power
    if db:
        power = 10.0 * np.log10(np.maximum(power, _DB_FLOOR))
    with open(path, "w") as fh:
        if sweep.temperature_k is not None:
            fh.write(f"# temperature_K = {format_float(sweep.temperature_k)}\n")
        if sweep.power_dbm is not None:
            fh.write(f"# power_dBm = {format_float(sweep.power_dbm)}\n")
        if sweep.mode_index is not None:
            fh.write(f"# mode_index = {int(sweep.mode_index)}\n")
        fh.write((_SWEEP_HEADER_DB if db else _SWEEP_HEADER) + "\n")
        for i, b in enumerate(sweep.b_grid):
            bs = format_float(b)
            for j, om in enumerate(sweep.omega_grid):
                fh.write(f"{bs},{format_float(om)},"
                         f"{format_float(power[i, j])}\n")


def _parse_metadata(lines):
    """Consume leading '# key = value' lines; returns (meta, header_idx)."""
    meta = {}
    for idx, (lineno, line) in enumerate(lines):
        if not line.startswith("#"):
            return meta, idx
        body = line[1:].strip()
        if "=" not in body:
            raise SchemaError(
                f"line {lineno}: metadata line must read '# key = value'")
        key, _, value = body.partition("=")
        meta[key.strip()] = value.strip()
    return meta, len(lines)


def _float_field(raw, lineno, column):
    try:
        v = float(raw)
    except ValueError:
        raise SchemaError(
            f"line {lineno}: column '{column}' is not a number: {raw!r}")
    if math.isnan(v):
        raise SchemaError(f"line {lineno}: column '{column}' is NaN")
    return v


def _read_lines(path):
    with open(path) as fh:
        return [(n, line.rstrip("\n")) for n, line in enumerate(fh, 1)
                if line.strip()]


def read_field_sweep(path):
    """Parse a field-sweep CSV back into a FieldSweep.

    Structural problems (ragged frequency blocks, non-monotone grids)
    and per-line problems both raise SchemaError; the latter name the
    offending line.
    """
    lines = _read_lines(path)
    meta, start = _parse_metadata(lines)
    if start >= len(lines) or lines[start][1] != _SWEEP_HEADER:
        if start < len(lines) and lines[start][1] == _SWEEP_HEADER_DB:
            raise SchemaError(
                f"{path} holds dB-formatted power, which is for "
                "presentation only; regenerate without the dB option "
                "to fit or post-process")
        raise SchemaError(
            f"expected header '{_SWEEP_HEADER}' after metadata in {path}")

    b_values = []
    omega_blocks = []
    power_blocks = []
    cur_b = None
    for lineno, line in lines[start + 1:]:
        parts = line.split(",")
        if len(parts) != 3:
            raise SchemaError(
                f"line {lineno}: expected 3 columns, got {len(parts)}")
        b = _float_field(parts[0], lineno, "b_tesla")
        om = _float_field(parts[1], lineno, "omega_hz")
        p = _float_field(parts[2], lineno, "s21_power")
        if p < 0:
            raise SchemaError(f"line {lineno}: negative s21_power")
        if cur_b is None or b != cur_b:
            b_values.append(b)
            omega_blocks.append([])
            power_blocks.append([])
            cur_b = b
        omega_blocks[-1].append(om)
        power_blocks[-1].append(p)
    if not b_values:
        raise SchemaError(f"no data rows in {path}")

    first = omega_blocks[0]
    for k, block in enumerate(omega_blocks[1:], 1):
        if block != first:
            raise SchemaError(
                f"field block for b = {b_values[k]!r} has a different "
                "frequency grid than the first block")
    try:
        return FieldSweep(
            b_grid=np.array(b_values),
            omega_grid=np.array(first),
            power=np.array(power_blocks),
            temperature_k=(float(meta["temperature_K"])
                           if "temperature_K" in meta else None),
            power_dbm=(float(meta["power_dBm"])
                       if "power_dBm" in meta else None),
            mode_index=(int(meta["mode_index"])
                        if "mode_index" in meta else None),
        )
    except ValueError as exc:
        raise SchemaError(str(exc)) from exc


@dataclass(frozen=True, eq=False)
class TemperatureSeries:
    """Per-transition g_eff(T) samples plus their resonance fields."""

    temperatures: dict
    couplings: dict
    resonance_fields: dict

    def __post_init__(self):
        if set(self.temperatures) != set(self.couplings):
            raise ValueError("temperatures and couplings keys differ")
        for t, temps in self.temperatures.items():
            temps = np.asarray(temps, dtype=float)
            g = np.asarray(self.couplings[t], dtype=float)
            if temps.shape != g.shape or temps.ndim != 1:
                raise ValueError(f"shape mismatch for transition {t}")
            if np.any(temps <= 0):
                raise ValueError("temperatures must be positive")
            if np.any(~np.isfinite(g)) or np.any(g < 0):
                raise ValueError("couplings must be finite and non-negative")
            self.temperatures[t] = temps
            self.couplings[t] = g


def write_temperature_series(series, path):
    with open(path, "w") as fh:
        for t in sorted(series.resonance_fields, key=lambda t: t.value):
            fh.write(f"# b_res_{t.value}_tesla = "
                     f"{format_float(series.resonance_fields[t])}\n")
        fh.write(_SERIES_HEADER + "\n")
        keys = sorted(series.temperatures, key=lambda t: t.value)
        for t in keys:
            for temp, g in zip(series.temperatures[t], series.couplings[t]):
                fh.write(f"{format_float(temp)},{t.value},"
                         f"{format_float(g)}\n")


def read_temperature_series(path):
    lines = _read_lines(path)
    meta, start = _parse_metadata(lines)
    if start >= len(lines) or lines[start][1] != _SERIES_HEADER:
        raise SchemaError(
            f"expected header '{_SERIES_HEADER}' after metadata in {path}")
    temps = {}
    gs = {}
    for lineno, line in lines[start + 1:]:
        parts = line.split(",")
        if len(parts) != 3:
            raise SchemaError(
                f"line {lineno}: expected 3 columns, got {len(parts)}")
        temp = _float_field(parts[0], lineno, "temperature_k")
        label = parts[1].strip()
        try:
            tid = TransitionId(label)
        except ValueError:
            raise SchemaError(
                f"line {lineno}: unknown transition {label!r} "
                f"(expected LF or HF)")
        g = _float_field(parts[2], lineno, "g_eff_hz")
        temps.setdefault(tid, []).append(temp)
        gs.setdefault(tid, []).append(g)
    if not temps:
        raise SchemaError(f"no data rows in {path}")
    fields = {}
    for tid in temps:
        key = f"b_res_{tid.value}_tesla"
        if key in meta:
            fields[tid] = float(meta[key])
    try:
        return TemperatureSeries(
            temperatures={t: np.array(v) for t, v in temps.items()},
            couplings={t: np.array(v) for t, v in gs.items()},
            resonance_fields=fields)
    except ValueError as exc:
        raise SchemaError(str(exc)) from exc


def write_kappa_table(rows, path):
    """Emit the per-field effective linewidth table.

    rows: iterable of (b_tesla, kappa_hz, stderr_hz, status_str).
    """
    with open(path, "w") as fh:
        fh.write(_KAPPA_HEADER + "\n")
        for b, kappa, err, status in rows:
            fh.write(f"{format_float(b)},{format_float(kappa)},"
                     f"{format_float(err)},{status}\n")


def write_json_report(payload, path):
    """Sorted-key JSON with a trailing newline, byte-stable."""
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def sha256_of(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass(frozen=True)
class ResultBundle:
    """Manifest of one command's emitted files with their checksums."""

    directory: str
    checksums: tuple  # ((filename, sha256 hex), ...) sorted by name

    @property
    def files(self):
        return tuple(name for name, _ in self.checksums)


def bundle_results(directory, filenames):
    """Checksum the named files and write manifest.json beside them."""
    sums = sorted((name, sha256_of(os.path.join(directory, name)))
                  for name in filenames)
    manifest_path = os.path.join(directory, "manifest.json")
    write_json_report({"files": dict(sums)}, manifest_path)
    return ResultBundle(directory=str(directory), checksums=tuple(sums))


# --- run configuration ----------------------------------------------------

@dataclass(frozen=True)
class NoiseSpec:
    model: str = "none"
    level: float = 0.0
    seed: int = None

    def __post_init__(self):
        if self.model not in _NOISE_MODELS:
            raise ValueError(
                f"noise model must be one of {_NOISE_MODELS}")
        if self.level < 0:
            raise ValueError("noise level must be non-negative")
        if self.level > 0 and self.seed is None:
            raise ValueError("a seed is required whenever noise level > 0")


def apply_noise(power, noise):
    """Seeded noise on a linear-power array; clipped at zero."""
    if noise.model == "none" or noise.level == 0.0:
        return np.array(power, dtype=float, copy=True)
    rng = np.random.default_rng(noise.seed)
    draw = rng.standard_normal(np.shape(power))
    if noise.model == "multiplicative":
        out = power * (1.0 + noise.level * draw)
    else:
        out = power + noise.level * draw
    return np.clip(out, 0.0, None)


@dataclass(frozen=True)
class ResonanceSpec:
    """One spin line of a scenario.

    Either `transition` is set and the resonance field is computed from
    the spin system at the resonator frequency, or `b_res` is given
    explicitly (phenomenological lines).
    """

    gamma_hz: float
    g_eff_hz: float
    transition: TransitionId = None
    b_res_tesla: float = None

    def __post_init__(self):
        if (self.transition is None) == (self.b_res_tesla is None):
            raise ValueError(
                "exactly one of transition / b_res_tesla must be set")


@dataclass(frozen=True)
class GeometryConfig:
    """Waveguide cross-section, crystal stack, and orientation mask."""

    cpw: CpwGeometry = field(default_factory=CpwGeometry)
    stack: CrystalStack = field(default_factory=CrystalStack)
    mask_kind: str = "alternating"
    mask_segments: int = 8

    def __post_init__(self):
        if self.mask_kind not in ("alternating", "full"):
            raise ValueError(
                f"mask kind must be 'alternating' or 'full', "
                f"got {self.mask_kind!r}")
        if self.mask_segments < 1:
            raise ValueError("mask segments must be >= 1")

    def mask(self):
        if self.mask_kind == "full":
            return OrientationMask.full(self.cpw.length)
        return OrientationMask.alternating(self.cpw.length,
                                           n_segments=self.mask_segments)


@dataclass(frozen=True)
class RunConfig:
    """Validated, materializable run description.

    kind "sweep-map" drives the transmission map pipeline; kind
    "temperature-series" drives the g_eff(T) pipeline.
    """

    kind: str
    spin: SpinSystemParams
    resonator: ResonatorParams
    scenario: str = None
    resonances: tuple = ()
    amplitude_scale: float = 1.0
    background_offset: float = 0.0
    detuning: str = "linear"
    b_range: tuple = None          # (min, max, steps)
    omega_range: tuple = None      # (min, max, steps)
    temperatures: tuple = None     # strictly increasing Kelvin values
    g_full_hz: float = None
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    metadata: dict = field(default_factory=dict)
    geometry: GeometryConfig = None

    def resonance_fields(self):
        """Resonance field per tagged transition, Tesla."""
        out = {}
        for spec in self.resonances:
            if spec.transition is not None:
                out[spec.transition] = resonance_field(
                    self.spin, self.resonator.omega_r, spec.transition)
        return out

    def transmission_params(self):
        fields = self.resonance_fields()
        lines = []
        for spec in self.resonances:
            if spec.transition is not None:
                b_res = fields[spec.transition]
            else:
                b_res = spec.b_res_tesla
            lines.append(SpinResonance(
                b_res=b_res, gamma=spec.gamma_hz, g_eff=spec.g_eff_hz,
                g_factor=self.spin.g_e, transition=spec.transition))
        return TransmissionModelParams(
            resonator=self.resonator,
            resonances=tuple(lines),
            amplitude_scale=self.amplitude_scale,
            background_offset=self.background_offset,
            detuning=self.detuning,
            spin_params=self.spin)

    def b_grid(self):
        lo, hi, n = self.b_range
        return np.linspace(lo, hi, n)

    def omega_grid(self):
        lo, hi, n = self.omega_range
        return np.linspace(lo, hi, n)


def _get(block, key, path, default=None, required=False):
    if key in block:
        return block[key]
    if required:
        raise SchemaError(f"{path}.{key}: missing required key")
    return default


def _as_float(value, path):
    try:
        return float(value)
    except (TypeError, ValueError):
        raise SchemaError(f"{path}: expected a number, got {value!r}")


def _as_int(value, path):
    try:
        iv = int(value)
    except (TypeError, ValueError):
        raise SchemaError(f"{path}: expected an integer, got {value!r}")
    return iv


def _block(doc, key, required=False):
    value = doc.get(key)
    if value is None:
        if required:
            raise SchemaError(f"{key}: missing required section")
        return {}
    if not isinstance(value, dict):
        raise SchemaError(f"{key}: expected a mapping")
    return value


def _parse_spin(doc):
    block = _block(doc, "spin_system")
    try:
        return SpinSystemParams(
            g_e=_as_float(_get(block, "g_e", "spin_system", 1.9985),
                          "spin_system.g_e"),
            g_n=_as_float(_get(block, "g_n", "spin_system", 2.2632),
                          "spin_system.g_n"),
            hyperfine_hz=_as_float(
                _get(block, "hyperfine_hz", "spin_system", 117.53e6),
                "spin_system.hyperfine_hz"))
    except ValueError as exc:
        raise SchemaError(f"spin_system: {exc}") from exc


def _parse_resonator(doc):
    block = _block(doc, "resonator", required=True)
    try:
        return ResonatorParams(
            omega_r=_as_float(_get(block, "omega_r_hz", "resonator",
                                   required=True), "resonator.omega_r_hz"),
            kappa_0=_as_float(_get(block, "kappa_0_hz", "resonator",
                                   required=True), "resonator.kappa_0_hz"),
            kappa_c=_as_float(_get(block, "kappa_c_hz", "resonator",
                                   required=True), "resonator.kappa_c_hz"))
    except ValueError as exc:
        raise SchemaError(f"resonator: {exc}") from exc


def _parse_resonances(doc):
    entries = doc.get("resonances", [])
    if not isinstance(entries, list):
        raise SchemaError("resonances: expected a list")
    specs = []
    for i, entry in enumerate(entries):
        path = f"resonances[{i}]"
        if not isinstance(entry, dict):
            raise SchemaError(f"{path}: expected a mapping")
        transition = entry.get("transition")
        b_res = entry.get("b_res_tesla")
        if transition is not None:
            try:
                transition = TransitionId(str(transition))
            except ValueError:
                raise SchemaError(
                    f"{path}.transition: unknown transition "
                    f"{entry['transition']!r} (expected LF or HF)")
        if b_res is not None:
            b_res = _as_float(b_res, f"{path}.b_res_tesla")
        gamma = _as_float(_get(entry, "gamma_hz", path, required=True),
                          f"{path}.gamma_hz")
        g_eff = _as_float(_get(entry, "g_eff_hz", path, required=True),
                          f"{path}.g_eff_hz")
        if gamma <= 0:
            raise SchemaError(f"{path}.gamma_hz: must be positive")
        if g_eff < 0:
            raise SchemaError(f"{path}.g_eff_hz: must be non-negative")
        try:
            specs.append(ResonanceSpec(
                gamma_hz=gamma, g_eff_hz=g_eff,
                transition=transition, b_res_tesla=b_res))
        except ValueError as exc:
            raise SchemaError(f"{path}: {exc}") from exc
    return tuple(specs)


def _parse_range(doc, key, lo_key, hi_key, steps_key):
    block = _block(doc, "sweep", required=True)
    lo = _as_float(_get(block, lo_key, "sweep", required=True),
                   f"sweep.{lo_key}")
    hi = _as_float(_get(block, hi_key, "sweep", required=True),
                   f"sweep.{hi_key}")
    steps = _as_int(_get(block, steps_key, "sweep", required=True),
                    f"sweep.{steps_key}")
    if not hi > lo:
        raise SchemaError(f"sweep.{hi_key}: must exceed sweep.{lo_key}")
    if steps < 2:
        raise SchemaError(f"sweep.{steps_key}: need at least 2 steps")
    return (lo, hi, steps)


def _parse_temperatures(doc):
    block = _block(doc, "temperatures", required=True)
    if "values_k" in block:
        values = block["values_k"]
        if not isinstance(values, list) or len(values) < 3:
            raise SchemaError(
                "temperatures.values_k: need a list of at least 3 values")
        temps = [_as_float(v, f"temperatures.values_k[{i}]")
                 for i, v in enumerate(values)]
    else:
        lo = _as_float(_get(block, "min_k", "temperatures", required=True),
                       "temperatures.min_k")
        hi = _as_float(_get(block, "max_k", "temperatures", required=True),
                       "temperatures.max_k")
        n = _as_int(_get(block, "points", "temperatures", required=True),
                    "temperatures.points")
        spacing = _get(block, "spacing", "temperatures", "log")
        if n < 3:
            raise SchemaError("temperatures.points: need at least 3")
        if not 0 < lo < hi:
            raise SchemaError(
                "temperatures: need 0 < min_k < max_k")
        if spacing == "log":
            temps = list(np.geomspace(lo, hi, n))
        elif spacing == "linear":
            temps = list(np.linspace(lo, hi, n))
        else:
            raise SchemaError(
                "temperatures.spacing: expected 'log' or 'linear'")
    arr = [float(t) for t in temps]
    if any(t <= 0 for t in arr):
        raise SchemaError("temperatures: all values must be positive")
    if any(b <= a for a, b in zip(arr, arr[1:])):
        raise SchemaError("temperatures: values must be strictly increasing")
    return tuple(arr)


def _parse_noise(doc):
    block = _block(doc, "noise")
    if not block:
        return NoiseSpec()
    model = _get(block, "model", "noise", "none")
    level = _as_float(_get(block, "level", "noise", 0.0), "noise.level")
    seed = block.get("seed")
    if seed is not None:
        seed = _as_int(seed, "noise.seed")
    try:
        return NoiseSpec(model=str(model), level=level, seed=seed)
    except ValueError as exc:
        raise SchemaError(f"noise: {exc}") from exc


def _parse_geometry(doc):
    if "geometry" not in doc:
        return None
    block = _block(doc, "geometry")
    crystal = _block(block, "crystal")
    mask = _block(block, "mask")

    def um(x):
        return x * 1e-6

    try:
        cpw = CpwGeometry(
            center_width=um(_as_float(
                _get(block, "center_width_um", "geometry", 20.0),
                "geometry.center_width_um")),
            gap_width=um(_as_float(
                _get(block, "gap_width_um", "geometry", 12.0),
                "geometry.gap_width_um")),
            film_thickness=1e-9 * _as_float(
                _get(block, "film_thickness_nm", "geometry", 150.0),
                "geometry.film_thickness_nm"),
            length=1e-3 * _as_float(
                _get(block, "length_mm", "geometry", 23.0),
                "geometry.length_mm"),
            mode_index=_as_int(
                _get(block, "mode_index", "geometry", 1),
                "geometry.mode_index"),
            ground_width=um(_as_float(
                _get(block, "ground_width_um", "geometry", 100.0),
                "geometry.ground_width_um")),
            current_profile=str(_get(block, "current_profile", "geometry",
                                     "uniform")))
        stack = CrystalStack(
            thickness=um(_as_float(
                _get(crystal, "thickness_um", "geometry.crystal", 20.0),
                "geometry.crystal.thickness_um")),
            standoff_gap=um(_as_float(
                _get(crystal, "standoff_gap_um", "geometry.crystal", 12.5),
                "geometry.crystal.standoff_gap_um")),
            lateral_extent=um(_as_float(
                _get(crystal, "lateral_extent_um", "geometry.crystal",
                     600.0),
                "geometry.crystal.lateral_extent_um")),
            spin_density=_as_float(
                _get(crystal, "spin_density_per_m3", "geometry.crystal",
                     1e23),
                "geometry.crystal.spin_density_per_m3"),
            density_fraction_per_transition=_as_float(
                _get(crystal, "density_fraction_per_transition",
                     "geometry.crystal", 0.5),
                "geometry.crystal.density_fraction_per_transition"))
        return GeometryConfig(
            cpw=cpw, stack=stack,
            mask_kind=str(_get(mask, "kind", "geometry.mask",
                               "alternating")),
            mask_segments=_as_int(
                _get(mask, "segments", "geometry.mask", 8),
                "geometry.mask.segments"))
    except ValueError as exc:
        raise SchemaError(f"geometry: {exc}") from exc


def parse_run_config(doc, scenario=None):
    """Validate a parsed YAML mapping into a RunConfig."""
    if not isinstance(doc, dict):
        raise SchemaError("config root must be a mapping")
    kind = doc.get("kind")
    if kind not in ("sweep-map", "temperature-series"):
        raise SchemaError(
            "kind: expected 'sweep-map' or 'temperature-series', "
            f"got {kind!r}")
    spin = _parse_spin(doc)
    resonator = _parse_resonator(doc)
    resonances = _parse_resonances(doc)
    noise = _parse_noise(doc)

    trans = _block(doc, "transmission")
    scale = _as_float(_get(trans, "amplitude_scale", "transmission", 1.0),
                      "transmission.amplitude_scale")
    offset = _as_float(
        _get(trans, "background_offset", "transmission", 0.0),
        "transmission.background_offset")
    detuning = _get(trans, "detuning", "transmission", "linear")
    if detuning not in ("linear", "exact"):
        raise SchemaError(
            "transmission.detuning: expected 'linear' or 'exact'")

    metadata = _block(doc, "metadata")

    b_range = omega_range = temperatures = None
    g_full = None
    if kind == "sweep-map":
        if not resonances:
            raise SchemaError("resonances: sweep-map needs at least one")
        b_range = _parse_range(doc, "sweep", "b_min_tesla", "b_max_tesla",
                               "b_steps")
        omega_range = _parse_range(doc, "sweep", "omega_min_hz",
                                   "omega_max_hz", "omega_steps")
    else:
        temperatures = _parse_temperatures(doc)
        coupling = _block(doc, "coupling", required=True)
        g_full = _as_float(
            _get(coupling, "g_full_hz", "coupling", required=True),
            "coupling.g_full_hz")
        if g_full <= 0:
            raise SchemaError("coupling.g_full_hz: must be positive")

    try:
        return RunConfig(
            kind=kind, spin=spin, resonator=resonator,
            scenario=scenario or doc.get("scenario"),
            resonances=resonances, amplitude_scale=scale,
            background_offset=offset, detuning=detuning,
            b_range=b_range, omega_range=omega_range,
            temperatures=temperatures, g_full_hz=g_full,
            noise=noise, metadata=dict(metadata),
            geometry=_parse_geometry(doc))
    except ValueError as exc:
        raise SchemaError(str(exc)) from exc


def shipped_scenarios():
    """Names of the scenario configs bundled with the package."""
    root = _resources.files("spincavity") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir()
                  if p.name.endswith(".yaml"))


def load_run_config(source):
    """Load a RunConfig from a file path or a shipped scenario name."""
    scenario = None
    if os.path.exists(source):
        with open(source) as fh:
            text = fh.read()
    else:
        name = str(source)
        candidate = _resources.files("spincavity") / "scenarios" / (
            name + ".yaml")
        if not candidate.is_file():
            raise SchemaError(
                f"{source!r} is neither a config file nor a shipped "
                f"scenario (available: {', '.join(shipped_scenarios())})")
        text = candidate.read_text()
        scenario = name
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SchemaError(f"config is not valid YAML: {exc}") from exc
    return parse_run_config(doc, scenario=scenario)
