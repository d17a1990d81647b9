"""Configuration-driven command surface.

Four commands (spectrum, chern, wilson, cqed) read a YAML config, run the
corresponding scans, and write data tables; plotting is out of scope.
Reruns with the same config and seed are byte-identical, partial failures
enumerate the offending grid points, and every file embeds the resolved
configuration.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .clifford import ParameterPoint, moebius_q
from .errors import ConfigError, EhsError
from .geometry import QuadratureGrid, second_chern
from .io import DataTable, write_table
from .spectral import spectrum_scan, track_branches
from .wilson import (
    LoopSpec,
    holonomy,
    min_wilson_vs_radius,
    moebius_transition_delta,
    moebius_wilson,
    transport_expectations,
)
from . import cqed as cq


def _require(cfg, key, kind=None, default=None):
    if key not in cfg:
        if default is not None:
            return default
        raise ConfigError(key, "missing")
    value = cfg[key]
    if kind is not None:
        try:
            if kind is list:
                value = list(value)
            else:
                value = kind(value)
        except (TypeError, ValueError):
            raise ConfigError(key, f"expected {kind.__name__}, got {value!r}")
    if isinstance(value, float) and not np.isfinite(value):
        raise ConfigError(key, "must be finite")
    return value


def _grid_from(cfg) -> QuadratureGrid:
    block = cfg.get("grid", {})
    return QuadratureGrid(
        n_theta1=int(block.get("n_theta1", 24)),
        n_theta2=int(block.get("n_theta2", 24)),
        n_phi1=int(block.get("n_phi1", 24)),
        n_phi2=int(block.get("n_phi2", 24)),
        fd_step=float(block.get("fd_step", 1e-4)),
    )


def _metadata(cfg, seed):
    return {
        "version": __version__,
        "seed": seed,
        "config": json.loads(json.dumps(cfg, default=float, sort_keys=True)),
    }


def cmd_spectrum(cfg, out_dir, fmt, threads):
    kappa = _require(cfg, "kappa", float)
    seed = int(cfg.get("seed", 0))
    meta = _metadata(cfg, seed)
    tables = []
    for i, scan in enumerate(cfg.get("scans", [])):
        axes = scan.get("axes")
        if not axes or len(axes) not in (2, 3):
            raise ConfigError(f"scans[{i}].axes", "need 2 or 3 of q1,q2,q3,q5")
        lo, hi = scan.get("range", [-2.0, 2.0])
        n = int(scan.get("points", 41))
        grids = [np.linspace(float(lo), float(hi), n) for _ in axes]
        result = spectrum_scan(axes, grids, kappa, fixed=scan.get("fixed"))
        table = DataTable(
            name=f"spectrum_scan_{i}",
            columns=list(axes)
            + ["e_plus_re", "e_plus_im", "e_minus_re", "e_minus_im", "gap"],
            rows=[],
            metadata=meta,
        )
        mesh = np.meshgrid(*grids, indexing="ij")
        flat = [m.ravel() for m in mesh]
        ep = result.e_plus.ravel()
        em = result.e_minus.ravel()
        gap = result.gap.ravel()
        for k in range(flat[0].size):
            table.add_row(
                *(f[k] for f in flat), ep[k].real, ep[k].imag, em[k].real, em[k].imag, gap[k]
            )
        tables.append(table)
    if cfg.get("rotation_traces", True):
        n = int(cfg.get("trace_points", 361))
        t = np.linspace(0.0, 2 * np.pi, n)
        for label, radius in (("enclosing", float(cfg.get("r_enclosing", 2.0))),
                              ("inside", float(cfg.get("r_inside", 0.5)))):
            for plane in ("q1q2", "q1q4"):
                if plane == "q1q2":
                    qs = np.stack(
                        [radius * np.cos(t), radius * np.sin(t), 0 * t, 0 * t, 0 * t],
                        axis=-1,
                    )
                else:
                    qs = np.stack(
                        [radius * np.sin(t), 0 * t, 0 * t, radius * np.cos(t), 0 * t],
                        axis=-1,
                    )
                points = [ParameterPoint(q=q, kappa=kappa) for q in qs]
                track = track_branches(points)
                table = DataTable(
                    name=f"spectrum_trace_{plane}_{label}",
                    columns=["angle", "e1_re", "e1_im", "e2_re", "e2_im"],
                    rows=[],
                    metadata={**meta, "permutation": track.permutation},
                )
                for k in range(n):
                    e1, e2 = track.energies[k]
                    table.add_row(t[k], e1.real, e1.imag, e2.real, e2.imag)
                tables.append(table)
    return [write_table(tb, out_dir, fmt) for tb in tables]


def cmd_chern(cfg, out_dir, fmt, threads):
    kappa = _require(cfg, "kappa", float)
    radii = _require(cfg, "radii", list)
    if not radii:
        raise ConfigError("radii", "must not be empty")
    grid = _grid_from(cfg)
    for r in radii:
        if abs(float(r) - kappa) < 1e-3:
            raise ConfigError("radii", f"radius {r} is within 1e-3 of kappa")
    seed = int(cfg.get("seed", 0))
    band = cfg.get("band", "minus")
    pairing = cfg.get("pairing", "hermitian")
    table = DataTable(
        name="chern_vs_radius",
        columns=["r", "c2", "defect"],
        rows=[],
        metadata=_metadata(cfg, seed),
    )
    failures = []
    for r in radii:
        try:
            res = second_chern(
                float(r), kappa, grid, band=band, pairing=pairing, threads=threads
            )
        except EhsError as exc:
            failures.append((float(r), str(exc)))
            continue
        table.add_row(float(r), res.c2, res.defect)
    paths = [write_table(table, out_dir, fmt)]
    return paths, failures


def cmd_wilson(cfg, out_dir, fmt, threads):
    kappa = _require(cfg, "kappa", float)
    seed = int(cfg.get("seed", 0))
    meta = _metadata(cfg, seed)
    tables = []
    scan = cfg.get("theta2_scan")
    if scan:
        r = _require(scan, "r", float)
        n = int(scan.get("points", 41))
        theta2 = np.linspace(0.0, np.pi, n)
        table = DataTable(
            name="wilson_theta2_scan",
            columns=["theta2", "w_re", "w_im"],
            rows=[],
            metadata=meta,
        )
        for t2 in theta2:
            res = holonomy(LoopSpec(kind="theta2_slice", r=r, theta2=float(t2)), kappa)
            table.add_row(t2, res.w.real, res.w.imag)
        tables.append(table)
    if cfg.get("min_scan"):
        radii = np.asarray(_require(cfg["min_scan"], "radii", list), dtype=float)
        values = min_wilson_vs_radius(
            kappa, radii, n_theta2=int(cfg["min_scan"].get("points", 41))
        )
        table = DataTable(
            name="wilson_min_vs_radius",
            columns=["r", "min_re_w"],
            rows=[],
            metadata=meta,
        )
        for r, v in zip(radii, values):
            table.add_row(r, v)
        tables.append(table)
    moebius = cfg.get("moebius")
    if moebius:
        r = _require(moebius, "r", float)
        deltas = np.asarray(_require(moebius, "deltas", list), dtype=float)
        table = DataTable(
            name="wilson_moebius_sweep",
            columns=["delta", "w2l_re", "w2l_im"],
            rows=[],
            metadata=meta,
        )
        for d in deltas:
            w = moebius_wilson(r, float(d), kappa)
            table.add_row(d, w.real, w.imag)
        if moebius.get("locate_transition", True):
            dstar = moebius_transition_delta(r, kappa)
            table.metadata = {**meta, "transition_delta": dstar}
        tables.append(table)
    transport = cfg.get("transport")
    if transport:
        r = _require(transport, "r", float)
        theta2 = _require(transport, "theta2", float)
        series = transport_expectations(
            r, kappa, theta2, n_phi=int(transport.get("points", 201))
        )
        table = DataTable(
            name="wilson_transport",
            columns=["phi1", "sx", "sy", "sz", "s2"],
            rows=[],
            metadata=meta,
        )
        for k in range(series.phi1.size):
            table.add_row(
                series.phi1[k], series.sx[k], series.sy[k], series.sz[k], series.s2[k]
            )
        tables.append(table)
    return [write_table(tb, out_dir, fmt) for tb in tables]


def cmd_cqed(cfg, out_dir, fmt, threads):
    model = cfg.get("model")
    if not model:
        raise ConfigError("model", "missing")
    seed = int(cfg.get("seed", 0))
    meta = _metadata(cfg, seed)
    config = cq.config_for_model(
        xi_detuning=_require(model, "xi", float),
        lambda1=_require(model, "lambda1", float),
        lambda2=_require(model, "lambda2", float),
        phi1=float(model.get("phi1", 0.0)),
        phi2=float(model.get("phi2", 0.0)),
        kappa=float(model.get("kappa", 0.0)),
        g_r=float(model.get("g_r", 0.05)),
        fock_cutoff=int(model.get("fock_cutoff", 3)),
    )
    report = cq.validate_mapping(config, raise_on_failure=False)
    mapping = DataTable(
        name="cqed_mapping",
        columns=[
            "kappa_eff",
            "shift_re",
            "shift_im",
            "residual",
            "residual_unreduced",
            "q1",
            "q2",
            "q3",
            "q4",
            "q5",
        ],
        rows=[],
        metadata=meta,
    )
    mapping.add_row(
        report.kappa_eff,
        report.global_shift.real,
        report.global_shift.imag,
        report.residual,
        report.residual_unreduced,
        *report.q_fit,
    )
    tables = [mapping]
    trajectory = cfg.get("trajectory")
    if trajectory:
        times = np.asarray(_require(trajectory, "times", list), dtype=float)
        basis = cq.subspace_states(config)
        rng = np.random.default_rng(seed)
        c0 = rng.normal(size=4) + 1j * rng.normal(size=4)
        psi0 = basis @ (c0 / np.linalg.norm(c0))
        states = cq.no_jump_evolve(config, psi0, times)
        table = DataTable(
            name="cqed_trajectory",
            columns=["t", "norm2", "discarded"]
            + [f"c{k}_{p}" for k in range(4) for p in ("re", "im")],
            rows=[],
            metadata=meta,
        )
        for st in states:
            sample = cq.postselect(st, config)
            row = [
                st.time,
                float(np.vdot(st.amplitudes, st.amplitudes).real),
                sample.discarded_weight,
            ]
            for k in range(4):
                row.extend([sample.vector[k].real, sample.vector[k].imag])
            table.add_row(*row)
        tables.append(table)
    protocol = cfg.get("protocol")
    failures = []
    if protocol:
        r = _require(protocol, "r", float)
        kappa_eff = _require(protocol, "kappa_eff", float)
        block = {"grid": protocol.get("grid", {"n_theta1": 8, "n_theta2": 8, "n_phi1": 8, "n_phi2": 8})}
        grid = _grid_from(block)
        try:
            res = cq.protocol_chern(r, kappa_eff, grid=grid, threads=threads)
            table = DataTable(
                name="cqed_protocol_chern",
                columns=["r", "kappa_eff", "c2", "defect"],
                rows=[],
                metadata=meta,
            )
            table.add_row(r, kappa_eff, res.c2, res.defect)
            tables.append(table)
        except EhsError as exc:
            failures.append((r, str(exc)))
    return [write_table(tb, out_dir, fmt) for tb in tables], failures


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ehs",
        description="scans and data tables for the dissipative four-level model",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("spectrum", "chern", "wilson", "cqed"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML config path")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--threads", type=int, default=1)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = yaml.safe_load(Path(args.config).read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    handlers = {
        "spectrum": cmd_spectrum,
        "chern": cmd_chern,
        "wilson": cmd_wilson,
        "cqed": cmd_cqed,
    }
    try:
        result = handlers[args.command](cfg, args.out, args.format, args.threads)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EhsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    failures = []
    if isinstance(result, tuple):
        paths, failures = result
    else:
        paths = result
    for path in paths:
        print(path)
    if failures:
        for point, message in failures:
            print(f"failed at {point}: {message}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
