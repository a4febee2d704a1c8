"""Command-line surface tying the modules together.

Five subcommands: ``levels`` and ``polarization`` emit spin-system
tables, ``simulate`` forward-models a scenario config into CSV,
``fit`` runs one of the three analysis pipelines on such a file, and
``coupling`` evaluates the ensemble coupling estimators.

Exit codes: 0 on success, 2 for configuration or schema problems,
3 for numerical failures (singular fits, out-of-domain evaluations,
coarse grids, and the like).  All emitted text uses shortest
round-trip float formatting, so identical inputs give byte-identical
outputs regardless of worker count.
"""

import functools
import json
import math
import os
from dataclasses import replace

import click
import numpy as np

from .constants import PLANCK
from .coupling import (
    OrientationMask,
    analytic_g_eff,
    b1_cross_section,
    g_eff_continuum,
    g_eff_lattice_sum,
)
from .errors import InvalidTemperature, SchemaError, SpinCavityError
from .fitting import (
    extract_kappa_vs_field,
    fit_inout_slice,
    fit_temperature_series,
    predict_temperature_series,
)
from .inout import gamma_to_linewidth, s21_map
from .spinsystem import (
    SpinSystemParams,
    TransitionId,
    eigenenergies_closed_form,
    resonance_field,
    transition_frequency,
    transition_polarization,
)
from .sweepio import (
    FieldSweep,
    GeometryConfig,
    TemperatureSeries,
    apply_noise,
    bundle_results,
    format_float,
    load_run_config,
    read_field_sweep,
    read_temperature_series,
    write_field_sweep,
    write_json_report,
    write_kappa_table,
    write_temperature_series,
)

_DEFAULT_FREQUENCY = 4.931e9


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except SchemaError as exc:
            click.echo(f"config error: {exc}", err=True)
            raise SystemExit(2)
        except (SpinCavityError, ValueError) as exc:
            click.echo(f"error: {exc}", err=True)
            raise SystemExit(3)
    return wrapper


@click.group()
def main():
    """Donor spin ensembles coupled to a microwave resonator:
    level diagrams, transmission simulation, and fitting pipelines."""


@main.command("levels")
@click.option("--config", "config_src", default=None,
              help="Config file or shipped scenario supplying spin "
                   "parameters (and, for sweep configs, the field range).")
@click.option("--b-min", type=float, default=0.0, show_default=True,
              help="Lowest static field in Tesla.")
@click.option("--b-max", type=float, default=0.4, show_default=True,
              help="Highest static field in Tesla.")
@click.option("--steps", type=int, default=401, show_default=True)
@click.option("--output", default="-", show_default=True,
              help="Output CSV path, '-' for stdout.")
@handle_errors
def cmd_levels(config_src, b_min, b_max, steps, output):
    """Energy levels and transition frequencies versus field."""
    spin = SpinSystemParams()
    if config_src:
        cfg = load_run_config(config_src)
        spin = cfg.spin
        if cfg.b_range is not None:
            b_min, b_max, steps = cfg.b_range
    if steps < 2 or b_min < 0 or b_max <= b_min:
        raise SchemaError(
            "field range must satisfy 0 <= b-min < b-max with steps >= 2")
    with click.open_file(output, "w") as fh:
        fh.write(f"# g_e = {format_float(spin.g_e)}\n")
        fh.write(f"# g_n = {format_float(spin.g_n)}\n")
        fh.write(f"# hyperfine_hz = {format_float(spin.hyperfine_hz)}\n")
        fh.write("b_tesla,e1_ghz,e2_ghz,e3_ghz,e4_ghz,"
                 "nu_lf_ghz,nu_hf_ghz\n")
        for b in np.linspace(b_min, b_max, steps):
            lv = eigenenergies_closed_form(spin, b)
            row = [format_float(b)]
            row += [format_float(e / PLANCK / 1e9)
                    for e in (lv.e1, lv.e2, lv.e3, lv.e4)]
            row += [format_float(
                transition_frequency(spin, b, t) / 1e9)
                for t in (TransitionId.LOW_FIELD, TransitionId.HIGH_FIELD)]
            fh.write(",".join(row) + "\n")


@main.command("polarization")
@click.option("--config", "config_src", default=None,
              help="Config supplying spin parameters.")
@click.option("--t-min", type=float, default=0.001, show_default=True,
              help="Lowest temperature in Kelvin.")
@click.option("--t-max", type=float, default=3.5, show_default=True)
@click.option("--points", type=int, default=60, show_default=True)
@click.option("--field", type=float, default=0.1765, show_default=True,
              help="Static field in Tesla at which to evaluate.")
@click.option("--output", default="-", show_default=True)
@handle_errors
def cmd_polarization(config_src, t_min, t_max, points, field, output):
    """Thermal polarization of both transitions on a log-spaced
    temperature grid."""
    spin = load_run_config(config_src).spin if config_src \
        else SpinSystemParams()
    if t_min <= 0:
        raise InvalidTemperature("t-min must be positive Kelvin")
    if t_max <= t_min or points < 2:
        raise SchemaError("need t-max > t-min and points >= 2")
    with click.open_file(output, "w") as fh:
        fh.write(f"# field_tesla = {format_float(field)}\n")
        fh.write("temperature_k,p_lf,p_hf\n")
        for temp in np.geomspace(t_min, t_max, points):
            p_lf = transition_polarization(spin, field, temp,
                                           TransitionId.LOW_FIELD)
            p_hf = transition_polarization(spin, field, temp,
                                           TransitionId.HIGH_FIELD)
            fh.write(f"{format_float(temp)},{format_float(p_lf)},"
                     f"{format_float(p_hf)}\n")


@main.command("simulate")
@click.option("--config", "config_src", required=True,
              help="Config file or shipped scenario name.")
@click.option("--output-dir", default=".", show_default=True,
              type=click.Path(file_okay=False))
@click.option("--workers", type=int, default=1, show_default=True,
              help="Threads for the map kernel; output is identical "
                   "for any value.")
@click.option("--db", is_flag=True,
              help="Emit |S21|^2 in dB instead of linear power "
                   "(presentation only; 'fit' reads linear files).")
@handle_errors
def cmd_simulate(config_src, output_dir, workers, db):
    """Forward-model a scenario into a sweep or series CSV plus a
    checksum manifest."""
    cfg = load_run_config(config_src)
    os.makedirs(output_dir, exist_ok=True)
    if cfg.kind == "sweep-map":
        model = cfg.transmission_params()
        b_grid = cfg.b_grid()
        omega_grid = cfg.omega_grid()
        power = apply_noise(s21_map(model, b_grid, omega_grid,
                                    workers=workers), cfg.noise)
        sweep = FieldSweep(
            b_grid=b_grid, omega_grid=omega_grid, power=power,
            temperature_k=cfg.metadata.get("temperature_K"),
            power_dbm=cfg.metadata.get("power_dBm"),
            mode_index=cfg.metadata.get("mode_index"))
        name = "sweep.csv"
        write_field_sweep(sweep, os.path.join(output_dir, name), db=db)
    else:
        temps = np.asarray(cfg.temperatures, dtype=float)
        transitions = (TransitionId.LOW_FIELD, TransitionId.HIGH_FIELD)
        fields = {t: resonance_field(cfg.spin, cfg.resonator.omega_r, t)
                  for t in transitions}
        series = TemperatureSeries(
            temperatures={t: temps for t in transitions},
            couplings={t: predict_temperature_series(
                cfg.g_full_hz, cfg.spin, fields[t], temps, t)
                for t in transitions},
            resonance_fields=fields)
        name = "series.csv"
        write_temperature_series(series, os.path.join(output_dir, name))
    bundle = bundle_results(output_dir, [name])
    for fname, digest in bundle.checksums:
        click.echo(f"wrote {os.path.join(output_dir, fname)} "
                   f"sha256={digest[:12]}")
    click.echo(f"wrote {os.path.join(output_dir, 'manifest.json')}")


def _fit_lorentzian_map(input_path, output_dir, workers):
    sweep = read_field_sweep(input_path)
    rows = extract_kappa_vs_field(sweep, workers=workers)
    write_kappa_table([r.as_tuple() for r in rows],
                      os.path.join(output_dir, "kappa_table.csv"))
    usable = [r for r in rows if r.ok]
    if not usable:
        raise SpinCavityError("no field row produced a usable line fit")
    kappas = np.array([r.kappa_eff_hz for r in usable])
    centers = np.array([r.b_tesla for r in usable])
    baseline = float(np.median(kappas))
    i_max = int(np.argmax(kappas))
    report = {
        "mode": "lorentzian-map",
        "input": os.path.basename(input_path),
        "rows": len(rows),
        "failed_rows": len(rows) - len(usable),
        "kappa_baseline_over_2pi_hz": baseline,
        "kappa_max_over_2pi_hz": float(kappas[i_max]),
        "b_at_kappa_max_tesla": float(centers[i_max]),
        "max_broadening_ratio": float(kappas[i_max] / baseline),
    }
    write_json_report(report, os.path.join(output_dir, "fit_report.json"))
    return ["kappa_table.csv", "fit_report.json"]


def _fit_inout_slices(input_path, output_dir, cfg):
    sweep = read_field_sweep(input_path)
    model = cfg.transmission_params()
    slices = []
    for i, line in enumerate(model.resonances):
        if line.transition is None:
            continue
        idx = sweep.nearest_row(line.b_res)
        b0 = float(sweep.b_grid[idx])
        free = ("kappa_0", "kappa_c", "omega_r",
                f"gamma_{i}", f"g_eff_{i}")
        entry = {"transition": line.transition.value,
                 "b_res_tesla": float(line.b_res),
                 "b0_tesla": b0}
        try:
            fit = fit_inout_slice(sweep.omega_grid, sweep.row(idx),
                                  model, b0, free=free)
        except SpinCavityError as exc:
            entry["status"] = f"Failed: {exc}"
            slices.append(entry)
            continue
        gamma = fit[f"gamma_{i}"]
        entry.update({
            "status": fit.status.value,
            "n_iter": fit.n_iter,
            "parameters": {
                "kappa0_over_2pi_hz": fit["kappa_0"],
                "kappa0_stderr_hz": fit.stderr_of("kappa_0"),
                "kappa_c_over_2pi_hz": fit["kappa_c"],
                "kappa_c_stderr_hz": fit.stderr_of("kappa_c"),
                "omega_r_over_2pi_hz": fit["omega_r"],
                "omega_r_stderr_hz": fit.stderr_of("omega_r"),
                "gamma_over_2pi_hz": gamma,
                "gamma_stderr_hz": fit.stderr_of(f"gamma_{i}"),
                "g_eff_over_2pi_hz": fit[f"g_eff_{i}"],
                "g_eff_stderr_hz": fit.stderr_of(f"g_eff_{i}"),
            },
            "derived": {
                "cooperativity": fit.derived[f"cooperativity_{i}"],
                "q_loaded": fit.derived["q_loaded"],
                "q_external": fit.derived["q_external"],
                "q_internal": fit.derived["q_internal"],
                "gamma_fwhm_field_tesla": gamma_to_linewidth(
                    gamma, cfg.spin.g_e),
            },
        })
        slices.append(entry)
    if not slices:
        raise SchemaError(
            "config defines no tagged LF/HF resonance to fit")
    report = {"mode": "inout-slice",
              "input": os.path.basename(input_path),
              "scenario": cfg.scenario,
              "slices": slices}
    write_json_report(report, os.path.join(output_dir, "fit_report.json"))
    return ["fit_report.json"]


def _fit_temperature(input_path, output_dir, cfg):
    series = read_temperature_series(input_path)
    spin = cfg.spin if cfg is not None else SpinSystemParams()
    fit = fit_temperature_series(series, spin)
    g_full = fit["g_full_hz"]
    report = {
        "mode": "temperature",
        "input": os.path.basename(input_path),
        "g_full_over_2pi_hz": g_full,
        "g_full_stderr_hz": fit.stderr_of("g_full_hz"),
        "status": fit.status.value,
        "n_iter": fit.n_iter,
        "residual_norm_hz": fit.residual_norm,
    }
    tail = np.geomspace(0.5, 3.5, 9)
    for t, b_res in sorted(series.resonance_fields.items(),
                           key=lambda kv: kv[0].value):
        report[f"b_res_{t.value}_tesla"] = float(b_res)
        report[f"g_eff_50mK_{t.value}_over_2pi_hz"] = float(
            predict_temperature_series(g_full, spin, b_res,
                                       [0.05], t)[0])
        if t is TransitionId.LOW_FIELD:
            curve = predict_temperature_series(g_full, spin, b_res,
                                               tail, t)
            report["tail_slope_log_log"] = float(
                np.polyfit(np.log(tail), np.log(curve), 1)[0])
    write_json_report(report, os.path.join(output_dir, "fit_report.json"))
    return ["fit_report.json"]


@main.command("fit")
@click.option("--input", "input_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--mode", required=True,
              type=click.Choice(["lorentzian-map", "inout-slice",
                                 "temperature"]))
@click.option("--config", "config_src", default=None,
              help="Scenario config; required for inout-slice (model "
                   "structure), optional elsewhere.")
@click.option("--output-dir", default=".", show_default=True,
              type=click.Path(file_okay=False))
@click.option("--workers", type=int, default=1, show_default=True)
@handle_errors
def cmd_fit(input_path, mode, config_src, output_dir, workers):
    """Run an analysis pipeline on a simulated or measured CSV."""
    os.makedirs(output_dir, exist_ok=True)
    cfg = load_run_config(config_src) if config_src else None
    if mode == "lorentzian-map":
        files = _fit_lorentzian_map(input_path, output_dir, workers)
    elif mode == "inout-slice":
        if cfg is None:
            raise SchemaError(
                "--config is required for inout-slice mode; it provides "
                "the line structure and starting values")
        files = _fit_inout_slices(input_path, output_dir, cfg)
    else:
        files = _fit_temperature(input_path, output_dir, cfg)
    bundle = bundle_results(output_dir, files)
    for fname, digest in bundle.checksums:
        click.echo(f"wrote {os.path.join(output_dir, fname)} "
                   f"sha256={digest[:12]}")
    click.echo(f"wrote {os.path.join(output_dir, 'manifest.json')}")


def _geometry_echo(geo, stack):
    cpw = geo.cpw
    return {
        "center_width_um": cpw.center_width * 1e6,
        "gap_width_um": cpw.gap_width * 1e6,
        "film_thickness_nm": cpw.film_thickness * 1e9,
        "length_mm": cpw.length * 1e3,
        "mode_index": cpw.mode_index,
        "crystal_thickness_um": stack.thickness * 1e6,
        "standoff_gap_um": stack.standoff_gap * 1e6,
        "lateral_extent_um": stack.lateral_extent * 1e6,
        "spin_density_per_m3": stack.spin_density,
    }


@main.command("coupling")
@click.option("--method", required=True,
              type=click.Choice(["analytic", "lattice", "continuum"]))
@click.option("--config", "config_src", default=None,
              help="Config supplying resonator frequency and an "
                   "optional geometry block.")
@click.option("--gap-um", type=float, default=None,
              help="Crystal standoff gap in um (overrides config).")
@click.option("--frequency-hz", type=float, default=None,
              help=f"Resonator frequency; default {_DEFAULT_FREQUENCY:g} "
                   "or the config value.")
@click.option("--eta", type=float, default=0.5, show_default=True,
              help="Filling factor for the analytic method.")
@click.option("--per-transition", is_flag=True,
              help="Use the per-transition spin density instead of the "
                   "full donor density.")
@click.option("--mask", "mask_kind", default=None,
              type=click.Choice(["alternating", "full"]),
              help="Orientation mask (overrides config).")
@click.option("--section-um", type=float, default=100.0, show_default=True,
              help="Test-section length for the lattice cross-check.")
@click.option("--lattice-um", type=float, default=0.5, show_default=True,
              help="Coarse-grained lattice constant in um; site weights "
                   "make the sum nearly independent of it.")
@click.option("--output", default="-", show_default=True)
@handle_errors
def cmd_coupling(method, config_src, gap_um, frequency_hz, eta,
                 per_transition, mask_kind, section_um, lattice_um,
                 output):
    """Collective coupling estimates: closed-form, lattice sum, or
    continuum integral over the simulated resonator field."""
    cfg = load_run_config(config_src) if config_src else None
    geo = cfg.geometry if cfg is not None and cfg.geometry is not None \
        else GeometryConfig()
    if mask_kind is not None:
        geo = replace(geo, mask_kind=mask_kind)
    stack = geo.stack
    if gap_um is not None:
        stack = replace(stack, standoff_gap=gap_um * 1e-6)
    omega_r = frequency_hz
    if omega_r is None:
        omega_r = cfg.resonator.omega_r if cfg is not None \
            else _DEFAULT_FREQUENCY

    report = {"method": method,
              "omega_r_over_2pi_hz": omega_r,
              "geometry": _geometry_echo(geo, stack)}
    if method == "analytic":
        report["g_eff_over_2pi_hz"] = analytic_g_eff(
            stack.spin_density, eta, omega_r,
            per_transition=per_transition,
            density_fraction=stack.density_fraction_per_transition)
        report["eta"] = eta
        report["per_transition"] = per_transition
    else:
        fieldmap = b1_cross_section(geo.cpw, omega_r)
        report["field_refinement_error"] = fieldmap.refinement_error
        if method == "continuum":
            report["g_eff_over_2pi_hz"] = g_eff_continuum(
                fieldmap, geo.cpw, stack, geo.mask())
            report["mask"] = geo.mask_kind
            report["mask_parallel_fraction"] = geo.mask().parallel_fraction
        else:
            section = section_um * 1e-6
            constant = lattice_um * 1e-6
            mask = OrientationMask(intervals=((0.0, section),),
                                   length=geo.cpw.length)
            g_lattice = g_eff_lattice_sum(fieldmap, geo.cpw, stack, mask,
                                          lattice_constant=constant)
            g_continuum = g_eff_continuum(fieldmap, geo.cpw, stack, mask)
            report["g_eff_over_2pi_hz"] = g_lattice
            report["continuum_reference_hz"] = g_continuum
            report["relative_deviation"] = abs(
                g_lattice / g_continuum - 1.0)
            report["section_um"] = section_um
            report["lattice_constant_um"] = lattice_um
            report["site_count_nominal"] = (
                math.ceil(section / constant)
                * math.ceil(stack.lateral_extent / constant)
                * math.ceil(stack.thickness / constant))
    with click.open_file(output, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


if __name__ == "__main__":
    main()
