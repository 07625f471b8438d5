"""Experiment driver and command line interface.

Subcommands: ``basis`` (build and export a localized basis), ``decay``
(localization error vs oversampling), ``convergence`` (error vs H),
``steklov`` (boundary spectrum probe), ``check`` (invariant suite) and
``plot`` (render a results CSV).  All results are plain CSV; a timing
sidecar keeps wall-clock numbers out of the deterministic artifacts.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import pickle
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import basis as basis_mod
from . import homogenize
from .config import ExperimentConfig
from .fem import global_problem
from .localizer import steklov_spectrum
from .mesh import ConfigurationError, build_mesh, element_flat, patch as make_patch

CSV_SCHEMA = "# slod-results v1"
CACHE_ENV = "SLOD_CACHE_DIR"


@dataclass
class ResultRow:
    """One experiment cell; wall time is kept in the timing sidecar."""

    d: int
    coarse_level: int
    H: float
    ell: int
    method: str
    energy_error: float
    sigma_max: float
    riesz_condition: float
    status: str  # "ok" | "failed:<reason>"

    FIELDS = (
        "d", "coarse_level", "H", "ell", "method",
        "energy_error", "sigma_max", "riesz_condition", "status",
    )

    def as_list(self):
        return [
            self.d, self.coarse_level, repr(self.H), self.ell, self.method,
            repr(self.energy_error), repr(self.sigma_max),
            repr(self.riesz_condition), self.status,
        ]

    def sort_key(self):
        return (self.d, self.coarse_level, self.ell, self.method)


def _write_rows(path: Path, rows: list[ResultRow]) -> None:
    rows = sorted(rows, key=ResultRow.sort_key)
    with open(path, "w", newline="") as fh:
        fh.write(CSV_SCHEMA + "\n")
        writer = csv.writer(fh)
        writer.writerow(ResultRow.FIELDS)
        for row in rows:
            writer.writerow(row.as_list())


def _write_timings(path: Path, timings: dict) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cell", "wall_time"])
        for key in sorted(timings):
            writer.writerow([key, repr(timings[key])])


def _cache_key(config: ExperimentConfig, p: int, ell: int, method: str) -> str:
    payload = json.dumps(
        [
            config.d, p, ell, method, config.fine_level,
            config.samples_multiplier, config.seed,
            config.coeff.kind, config.coeff.value, config.coeff.eps_level,
            config.coeff.alpha, config.coeff.beta, config.coeff.seed,
        ],
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:24]


def _build_basis(config: ExperimentConfig, field, p: int, ell: int, method: str):
    cache_dir = os.environ.get(CACHE_ENV)
    cache_file = None
    if cache_dir:
        cache_file = Path(cache_dir) / f"basis_{_cache_key(config, p, ell, method)}.pkl"
        if cache_file.exists():
            with open(cache_file, "rb") as fh:
                return pickle.load(fh)
    mesh = build_mesh(config.d, p)
    if method == "lod":
        result = basis_mod.build_lod_basis(mesh, field, ell, config.fine_level)
    else:
        result = basis_mod.build_slod_basis(
            mesh, field, ell, config.fine_level, config.seed,
            samples_multiplier=config.samples_multiplier,
        )
    if cache_file is not None:
        cache_file.parent.mkdir(parents=True, exist_ok=True)
        with open(cache_file, "wb") as fh:
            pickle.dump(result, fh)
    return result


def _run_cell(config, field, ref, ref_norm, p, ell, method):
    mesh = build_mesh(config.d, p)
    f = config.rhs.build(mesh)
    try:
        cell_basis = _build_basis(config, field, p, ell, method)
        sol = homogenize.solve_galerkin(cell_basis, f, field, config.fine_level)
        err = homogenize.energy_error(sol, ref, field) / ref_norm
        return ResultRow(
            config.d, p, mesh.H, ell, method, err, sol.sigma_max,
            sol.riesz_cond, "ok",
        )
    except homogenize.StabilityError as exc:
        return ResultRow(
            config.d, p, mesh.H, ell, method, float("nan"), float("nan"),
            exc.condition, "failed:stability",
        )


def _reference(config: ExperimentConfig, field, p_for_rhs: int):
    mesh = build_mesh(config.d, p_for_rhs)
    f = config.rhs.build(mesh)
    ref = homogenize.reference_solve(f, field, config.fine_level, d=config.d)
    norm = global_problem(build_mesh(config.d, 0), field, config.fine_level).energy_norm(
        ref.values
    )
    return ref, norm


def _run_cells(config: ExperimentConfig, cells) -> tuple[list[ResultRow], dict]:
    field = config.coeff.build(config.d)
    # P0 data lives on the coarse mesh, so each coarse level needs its own
    # reference; every other data kind shares a single one
    references = {}
    for p, _, _ in cells:
        key = p if config.rhs.kind == "p0" else "shared"
        if key not in references:
            references[key] = _reference(config, field, p)
        references.setdefault(p, references[key])
    rows, timings = [], {}
    def work(cell):
        p, ell, method = cell
        t0 = time.perf_counter()
        ref, norm = references[p]
        row = _run_cell(config, field, ref, norm, p, ell, method)
        return row, time.perf_counter() - t0
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(work, cells))
    else:
        results = [work(c) for c in cells]
    for (p, ell, method), (row, dt) in zip(cells, results):
        rows.append(row)
        timings[f"p{p}_ell{ell}_{method}"] = dt
    return rows, timings


def run_decay(config: ExperimentConfig) -> tuple[Path, list[ResultRow]]:
    """Localization error for every (H, ell, method) cell; one CSV."""
    cells = [
        (p, ell, method)
        for p in config.coarse_levels
        for ell in config.ell
        for method in config.methods
    ]
    rows, timings = _run_cells(config, cells)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "decay.csv"
    _write_rows(path, rows)
    _write_timings(out / "decay_timings.csv", timings)
    return path, rows


def run_convergence(config: ExperimentConfig) -> tuple[Path, list[ResultRow], list[float]]:
    """Error over the coarse levels at fixed ell, with observed rates."""
    ell = config.ell[0]
    cells = [(p, ell, m) for p in sorted(config.coarse_levels) for m in config.methods]
    rows, timings = _run_cells(config, cells)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "convergence.csv"
    _write_rows(path, rows)
    _write_timings(out / "convergence_timings.csv", timings)
    slod = sorted(
        (r for r in rows if r.method == config.methods[0] and r.status == "ok"),
        key=lambda r: r.coarse_level,
    )
    rates = [
        float(np.log2(a.energy_error / b.energy_error))
        for a, b in zip(slod, slod[1:])
    ]
    return path, rows, rates


def run_steklov(config: ExperimentConfig, count: int = 40) -> Path:
    """Boundary spectrum of one interior patch: (k, lambda_k, interior mass)."""
    from .fem import PatchProblem

    p = config.coarse_levels[0]
    mesh = build_mesh(config.d, p)
    ell = config.ell[0]
    center = element_flat(
        mesh, np.full(config.d, mesh.n_per_axis // 2, dtype=int)
    )
    pt = make_patch(mesh, int(center), ell)
    field = config.coeff.build(config.d)
    problem = PatchProblem(pt, field, config.fine_level)
    lam, psi = steklov_spectrum(problem, count)
    ratios = _interior_mass_ratios(problem, psi)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "steklov.csv"
    with open(path, "w", newline="") as fh:
        fh.write(CSV_SCHEMA + "\n")
        writer = csv.writer(fh)
        writer.writerow(["k", "lambda", "interior_mass_ratio"])
        for k in range(lam.size):
            writer.writerow([k, repr(float(lam[k])), repr(float(ratios[k]))])
    return path


def _interior_mass_ratios(problem, psi: np.ndarray) -> np.ndarray:
    """Share of each eigenfunction's L2 mass in the patch core.

    The core drops the ceil(ell/2) element layers nearest the patch
    boundary; eigenfunctions of growing boundary frequency decay faster
    into the patch, so the ratio trends down with the index.
    """
    patch = problem.patch
    grid = problem.grid
    ell = max(patch.ell, 1)
    margin = (ell + 1) // 2
    lo = np.asarray(patch.lo)
    hi = np.asarray(patch.hi)
    multi = np.stack(
        np.unravel_index(patch.elements, patch.mesh.elem_shape, order="F"), axis=-1
    )
    core = np.all((multi - lo >= margin) & (hi - multi >= margin), axis=1)
    node_core = np.zeros(grid.n_nodes, dtype=bool)
    r = 2 ** (grid.fine_level - patch.mesh.p)
    nm = grid.node_multi
    for e_local in np.flatnonzero(core):
        m = multi[e_local] - lo
        inside = np.all(
            (nm >= m * r) & (nm <= (m + 1) * r), axis=1
        )
        node_core |= inside
    M = problem.mass
    total = np.einsum("ij,ij->j", psi, M @ psi)
    masked = psi * node_core[:, None]
    core_mass = np.einsum("ij,ij->j", masked, M @ masked)
    return core_mass / total


def emit_plot(csv_path, kind: str, out_path=None) -> Path:
    """Render a results CSV to SVG and write a gnuplot script next to it."""
    csv_path = Path(csv_path)
    rows = _read_rows(csv_path)
    if not rows:
        raise ConfigurationError(f"no data rows in {csv_path}")
    if out_path is None:
        out_path = csv_path.with_suffix(".svg")
    out_path = Path(out_path)
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    series = sorted({(r["method"], r["coarse_level"]) for r in rows})
    d = int(rows[0]["d"])
    if kind == "decay":
        # second panel uses the ell^(d/(d-1)) abscissa, which linearizes the
        # expected super-exponential decay; in 1D it coincides with ell
        expo = d / (d - 1) if d > 1 else 1.0
        fig, axes = plt.subplots(1, 2, figsize=(9, 4))
        for ax_i, power in zip(axes, (1.0, expo)):
            for method, level in series:
                pts = [
                    (int(r["ell"]) ** power, float(r["energy_error"]))
                    for r in rows
                    if r["method"] == method and r["coarse_level"] == level
                    and r["status"] == "ok"
                ]
                pts.sort()
                if pts:
                    ax_i.semilogy(
                        *zip(*pts), marker="o", label=f"{method} H=2^-{level}"
                    )
            ax_i.set_xlabel("ell" if power == 1.0 else "ell^(d/(d-1))")
            ax_i.set_ylabel("relative energy error")
        ax = axes[0]
    elif kind == "convergence":
        fig, ax = plt.subplots(figsize=(5, 4))
        for method in sorted({m for m, _ in series}):
            pts = [
                (float(r["H"]), float(r["energy_error"]))
                for r in rows
                if r["method"] == method and r["status"] == "ok"
            ]
            pts.sort()
            if pts:
                ax.loglog(*zip(*pts), marker="o", label=method)
        if rows:
            Hs = sorted({float(r["H"]) for r in rows})
            errs = [float(r["energy_error"]) for r in rows if r["status"] == "ok"]
            if errs and Hs:
                c = max(errs) / Hs[-1] ** 2
                ax.loglog(Hs, [c * H ** 2 for H in Hs], "k--", label="slope 2")
        ax.set_xlabel("H")
        ax.set_ylabel("relative energy error")
    else:
        raise ConfigurationError(f"unknown plot kind {kind!r}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    _write_gnuplot_script(csv_path, kind, out_path.with_suffix(".gp"))
    return out_path


def _write_gnuplot_script(csv_path: Path, kind: str, out: Path) -> None:
    x = "4" if kind == "decay" else "3"
    with open(out, "w") as fh:
        fh.write("set datafile separator ','\n")
        fh.write("set logscale y\n")
        if kind == "convergence":
            fh.write("set logscale x\n")
        fh.write(f"plot '{csv_path.name}' every ::2 using {x}:6 with linespoints\n")


def _read_rows(csv_path: Path) -> list[dict]:
    with open(csv_path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("#"):
            fh.seek(0)
        reader = csv.DictReader(fh)
        return [dict(r) for r in reader]


def _fail(out_dir: str, record: dict, code: int = 2) -> int:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "failure.json", "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
    print(json.dumps(record), file=sys.stderr)
    return code


def _export_basis(config: ExperimentConfig) -> Path:
    field = config.coeff.build(config.d)
    p = config.coarse_levels[0]
    ell = config.ell[0]
    mesh = build_mesh(config.d, p)
    method = config.methods[0]
    built = _build_basis(config, field, p, ell, method)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "basis.csv"
    with open(path, "w", newline="") as fh:
        fh.write(CSV_SCHEMA + "\n")
        writer = csv.writer(fh)
        writer.writerow(["element", "sigma", "patch_lo", "patch_hi", "g_support", "g_max"])
        for b in built:
            g = b.g_global()
            writer.writerow([
                b.element, repr(float(b.sigma)),
                " ".join(map(str, b.patch.lo)), " ".join(map(str, b.patch.hi)),
                int(np.count_nonzero(g)), repr(float(np.abs(g).max())),
            ])
    rc = homogenize.riesz_condition(built)
    print(f"basis: {len(built)} functions, riesz condition {rc:.6g}")
    return path


def run_check(config: ExperimentConfig) -> int:
    """Fast invariant battery; returns a process exit code."""
    from . import fem
    from .coefficient import constant
    from .mesh import group_patches

    failures = []

    def expect(name, ok):
        print(f"  {'ok' if ok else 'FAIL'}  {name}")
        if not ok:
            failures.append(name)

    mesh = build_mesh(config.d, min(config.coarse_levels))
    ell = config.ell[0]
    groups = group_patches(mesh, ell)
    members = sorted(m for g in groups for m in g.members)
    expect("patch groups partition the elements", members == list(range(mesh.n_elements)))
    expect(
        "group members contained in representative",
        all(
            g.is_global
            or all(
                g.representative.contains(make_patch(mesh, m, ell))
                for m in g.members
            )
            for g in groups
        ),
    )
    field = constant(1.0, d=config.d)
    fine = config.fine_level
    rng = np.random.default_rng(config.seed)
    fmesh = build_mesh(config.d, fine)
    v = fem.FineFunction(fmesh, rng.standard_normal(fmesh.n_nodes))
    pi = fem.project_P0(v, mesh)
    # Pi is the L2-orthogonal projection, so the error follows by Pythagoras,
    # and the Poincare bound uses the H1 seminorm (energy norm with A = 1)
    err_sq = fem.l2_norm(v) ** 2 - mesh.H ** mesh.d * float(pi.values @ pi.values)
    err = np.sqrt(max(err_sq, 0.0))
    bound = (mesh.H / np.pi) * fem.energy_norm(v, field)
    expect("P0 projection error bounded by (H/pi)|v|_H1", err <= bound * (1 + 1e-10))
    ref = homogenize.reference_solve(0.0, field, fine, d=config.d)
    expect("zero data gives zero reference solution", np.allclose(ref.values, 0.0))
    b1 = basis_mod.build_slod_basis(mesh, field, ell, fine, config.seed)
    b2 = basis_mod.build_slod_basis(mesh, field, ell, fine, config.seed)
    expect(
        "basis build deterministic",
        all(np.array_equal(x.phi_local, y.phi_local) for x, y in zip(b1, b2)),
    )
    expect(
        "one basis function per element",
        [b.element for b in b1] == list(range(mesh.n_elements)),
    )
    rc = homogenize.riesz_condition(b1)
    expect("riesz condition finite", np.isfinite(rc))
    if failures:
        print(f"{len(failures)} check(s) failed")
        return 1
    print("all checks passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slod",
        description="Super-localized multiscale basis experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("basis", "decay", "convergence", "steklov", "check", "plot"):
        p = sub.add_parser(name)
        if name == "plot":
            p.add_argument("csv")
            p.add_argument("--kind", choices=("decay", "convergence"), required=True)
            p.add_argument("--out")
            continue
        p.add_argument("--config", help="JSON experiment config file")
        p.add_argument("--d", type=int)
        p.add_argument("--coarse-levels", type=int, nargs="+", dest="coarse_levels")
        p.add_argument("--ell", type=int, nargs="+")
        p.add_argument("--fine-level", type=int, dest="fine_level")
        p.add_argument("--coeff", choices=("constant", "checkerboard"))
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--methods", nargs="+")
        p.add_argument("--out", dest="out_dir")
    return parser


def _config_from_args(args) -> ExperimentConfig:
    if args.config:
        config = ExperimentConfig.load(args.config)
    else:
        config = ExperimentConfig()
    # the coefficient kind must be swapped before the remaining overrides are
    # validated, or a constant-coefficient run would be rejected for not
    # resolving the (unused) default checkerboard scale
    if getattr(args, "coeff", None):
        config = config.with_overrides(
            coeff=dataclasses.replace(config.coeff, kind=args.coeff)
        )
    overrides = {
        k: getattr(args, k, None)
        for k in ("d", "coarse_levels", "ell", "fine_level", "seed", "workers",
                  "methods", "out_dir")
    }
    return config.with_overrides(**overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "plot":
        try:
            out = emit_plot(args.csv, args.kind, args.out)
        except (ConfigurationError, OSError) as exc:
            print(f"plot failed: {exc}", file=sys.stderr)
            return 2
        print(out)
        return 0
    try:
        config = _config_from_args(args)
    except ConfigurationError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 2
    try:
        if args.command == "basis":
            print(_export_basis(config))
            return 0
        if args.command == "decay":
            path, rows = run_decay(config)
        elif args.command == "convergence":
            path, rows, rates = run_convergence(config)
            for r in rates:
                print(f"observed rate: {r:.3f}")
        elif args.command == "steklov":
            path = run_steklov(config)
            rows = []
        elif args.command == "check":
            return run_check(config)
        print(path)
        failed = [r for r in rows if r.status != "ok"]
        if failed:
            return _fail(
                config.out_dir,
                {
                    "error": "stability failure",
                    "cells": [
                        {"coarse_level": r.coarse_level, "ell": r.ell,
                         "method": r.method, "condition": r.riesz_condition}
                        for r in failed
                    ],
                },
            )
        return 0
    except homogenize.StabilityError as exc:
        return _fail(
            config.out_dir,
            {"error": "stability failure", "condition": exc.condition,
             "sigma_spectrum": list(map(float, np.atleast_1d(exc.sigma_spectrum)))},
        )


if __name__ == "__main__":
    sys.exit(main())
