"""Experiment runner: JSON config in, CSV/JSON results out.

Every subcommand reads one config file, resolves it (auto cutoff selection,
resonance proximity scan), runs the corresponding library routine, and
writes results under --out.  Numeric CSV cells carry 17 significant digits;
JSON summaries embed the fully resolved configuration so a result file is
self-describing.  Exit codes: 0 pass, 1 tolerance failure, 2 bad config or
refused request.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import threadpoolctl

from .amplitude import SymbolConfig
from .genfun import (
    AczConfig,
    contraction_factor,
    eval_S_derivs,
    select_cutoff,
    solve_tail,
    tail_rate_bound,
)
from .hamiltonian import HamiltonianSpec, PotentialSpec, classical_flow, resonant_times
from .pathspace import FourierBasis
from .propagator import (
    Wavefunction,
    gaussian_wavepacket,
    propagate,
    wkb_kernel_family,
)
from .reference import mehler_phase, relative_l2_error, split_step
from .stationary import (
    ResonanceError,
    SearchConfig,
    check_critical_free_region,
    compute_branch_bound,
    find_branches,
    shooting_branch_count,
)

SCHEMA = "wkbprop-config/1"

_DEFAULT_TOLERANCES = {
    "flow": 1e-6,
    "mehler": 1e-8,
    "identity": 1e-8,
    "resonance_window": 1e-6,
}


class ConfigError(Exception):
    pass


@dataclass
class ExperimentConfig:
    """Resolved experiment description (see README for the JSON schema)."""

    potential: PotentialSpec
    mass: float
    period: float
    times: list
    cutoff: int
    cutoff_requested: object
    tail_cutoff: int
    n_panels: int | None
    grid_halfwidth: float
    grid_points: int
    initial: dict
    hbars: list
    tolerances: dict
    seed: int
    scan: dict
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def hamiltonian(self) -> HamiltonianSpec:
        return HamiltonianSpec(potential=self.potential, mass=self.mass)

    def acz(self) -> AczConfig:
        basis = FourierBasis(period=self.period, cutoff=self.cutoff,
                             tail_cutoff=self.tail_cutoff,
                             components=2 * self.potential.dim)
        return AczConfig(hamiltonian=self.hamiltonian, basis=basis,
                         n_panels=self.n_panels)

    def resolved(self) -> dict:
        out = dict(self.raw)
        out["schema"] = SCHEMA
        out["resolved"] = {
            "cutoff": self.cutoff,
            "tail_cutoff": self.tail_cutoff,
            "theta_dim": 2 * self.potential.dim * (2 * self.cutoff + 1),
            "contraction": contraction_factor(self.hamiltonian, self.period,
                                              self.cutoff),
            "rate_bound": tail_rate_bound(self.hamiltonian, self.period,
                                          self.cutoff),
            "resonant_times": _resonance_report(self.hamiltonian, self.period,
                                                self.times),
        }
        return out


def _resonance_report(ham, period, times):
    res = resonant_times(ham, period)
    info = {"positive_definite": res.positive_definite,
            "times": [float(t) for t in np.atleast_1d(res.times)]}
    warn = []
    for t in times:
        if res.times.size:
            d = float(np.min(np.abs(np.asarray(res.times) - t)))
            if d < 5e-2:
                warn.append({"t": t, "distance": d})
    info["near_resonance"] = warn
    return info


def load_config(path: str) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if raw.get("schema") != SCHEMA:
        raise ConfigError(f"config schema must be {SCHEMA!r}")

    try:
        pot_raw = raw["potential"]
        matrix = np.asarray(pot_raw["matrix"], dtype=np.float64)
        kind = pot_raw.get(
            "perturbation", "cosine" if "amplitude" in pot_raw else "none"
        )
        if kind == "none":
            potential = PotentialSpec(matrix=matrix)
        else:
            potential = PotentialSpec(
                matrix=matrix, perturbation=kind,
                amplitude=float(pot_raw.get("amplitude", 0.0)),
                wavevector=np.asarray(pot_raw.get("wavevector", ()),
                                      dtype=np.float64),
            )
        mass = float(raw.get("mass", 1.0))
        period = float(raw["T"])
        if "t" in raw:
            times = [float(raw["t"])]
        else:
            times = [float(t) for t in raw["t_list"]]
        ham = HamiltonianSpec(potential=potential, mass=mass)

        basis_raw = raw.get("basis", {})
        requested = basis_raw.get("M", "auto")
        cutoff = select_cutoff(ham, period) if requested == "auto" else int(requested)
        tail_cutoff = int(basis_raw.get("M_tail", 4 * cutoff))
        n_panels = basis_raw.get("n_panels")
        if n_panels is not None:
            n_panels = int(n_panels)

        grid_raw = raw.get("grid", {"X": 8.0, "N": 256})
        initial = dict(raw.get("initial", {}))
        hbars = [float(h) for h in raw.get("hbar", [0.4, 0.2, 0.1, 0.05])]
        tolerances = dict(_DEFAULT_TOLERANCES)
        tolerances.update(raw.get("tolerances", {}))
        seed = int(raw.get("seed", 0))
        scan = dict(raw.get("scan", {}))
        cfg = ExperimentConfig(
            potential=potential, mass=mass, period=period, times=times,
            cutoff=cutoff, cutoff_requested=requested, tail_cutoff=tail_cutoff,
            n_panels=n_panels,
            grid_halfwidth=float(grid_raw["X"]), grid_points=int(grid_raw["N"]),
            initial=initial, hbars=hbars, tolerances=tolerances, seed=seed,
            scan=scan, raw=raw,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    for t in cfg.times:
        if not 0.0 <= t <= cfg.period + 1e-12:
            raise ConfigError(f"time {t} outside [0, T={cfg.period}]")
    return cfg


# ---------------------------------------------------------------------------
# output helpers


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([c if isinstance(c, str) else _fmt(c) for c in row])


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _is_pure_oscillator(cfg: ExperimentConfig) -> bool:
    pot = cfg.potential
    return (
        pot.dim == 1
        and pot.perturbation == "none"
        and abs(cfg.mass - 1.0) < 1e-15
        and abs(float(pot.matrix[0, 0]) - 0.5) < 1e-15
    )


def _guard_resonance(cfg: ExperimentConfig, t: float) -> None:
    res = resonant_times(cfg.hamiltonian, cfg.period)
    window = cfg.tolerances["resonance_window"]
    if res.times.size and float(np.min(np.abs(res.times - t))) < window:
        raise ConfigError(
            f"time t={t} is within {window:g} of a resonant (caustic) time; refusing"
        )


# ---------------------------------------------------------------------------
# subcommands


def cmd_flow_check(cfg: ExperimentConfig, out: Path) -> int:
    """Forward-flow samples and verify each endpoint is generated by a branch."""
    acz = cfg.acz()
    tol = cfg.tolerances["flow"]
    rng = np.random.default_rng(cfg.seed)
    n_samples = int(cfg.scan.get("n_samples", 20))
    lo, hi = cfg.scan.get("range", [-2.0, 2.0])
    search = SearchConfig(seed=cfg.seed)
    rows = []
    worst = 0.0
    for t in cfg.times:
        _guard_resonance(cfg, t)
        for _ in range(n_samples):
            y, eta = rng.uniform(lo, hi, size=2)
            xf, pf = classical_flow(cfg.hamiltonian, np.array([y]), np.array([eta]), t)
            x_t, p_t = float(xf[0]), float(pf[0])
            bs = find_branches(acz, t, np.array([x_t]), np.array([eta]), search=search)
            best = math.inf
            for b in bs.branches:
                best = min(best, abs(float(b.initial_point[0]) - y)
                           + abs(float(b.momentum[0]) - p_t))
            rows.append([t, y, eta, x_t, p_t, bs.count, best])
            worst = max(worst, best)
    _write_csv(out / "flow_check.csv",
               ["t", "y", "eta", "x", "p", "branch_count", "generating_residual"],
               rows)
    _write_json(out / "flow_check.json", {
        "config": cfg.resolved(),
        "max_generating_residual": worst,
        "tolerance": tol,
        "passed": bool(worst <= tol),
    })
    return 0 if worst <= tol else 1


def cmd_branches(cfg: ExperimentConfig, out: Path) -> int:
    """Branch scan over an (x, η) rectangle with the shooting-oracle column."""
    acz = cfg.acz()
    nx = int(cfg.scan.get("nx", 5))
    ne = int(cfg.scan.get("ne", 5))
    x_lo, x_hi = cfg.scan.get("x_range", [-2.0, 2.0])
    e_lo, e_hi = cfg.scan.get("eta_range", [-2.0, 2.0])
    xs = np.linspace(x_lo, x_hi, nx) if nx > 0 else np.empty(0)
    es = np.linspace(e_lo, e_hi, ne) if ne > 0 else np.empty(0)
    search = SearchConfig(seed=cfg.seed,
                          n_starts=int(cfg.scan.get("n_starts", 64)))
    rows = []
    mismatches = 0
    for t in cfg.times:
        _guard_resonance(cfg, t)
        for x in xs:
            for e in es:
                bs = find_branches(acz, t, np.array([x]), np.array([e]), search=search)
                n_shoot, _ = shooting_branch_count(cfg.hamiltonian, t,
                                                   np.array([x]), np.array([e]))
                if bs.count != n_shoot:
                    mismatches += 1
                if not bs.branches:
                    rows.append([t, x, e, 0, n_shoot, "", "", "", "", ""])
                for idx, b in enumerate(bs.branches):
                    rows.append([
                        t, x, e, bs.count, n_shoot, idx, b.action, b.hess_det,
                        b.signature, b.hj_residual,
                    ])
    _write_csv(out / "branches.csv",
               ["t", "x", "eta", "count", "shooting_count", "branch",
                "action", "hess_det", "signature", "hj_residual"],
               rows)
    _write_json(out / "branches.json", {
        "config": cfg.resolved(),
        "count_mismatches": mismatches,
        "passed": mismatches == 0,
    })
    return 0 if mismatches == 0 else 1


def cmd_propagate(cfg: ExperimentConfig, out: Path) -> int:
    """Evolve the configured packet per ħ; CSV of ψ plus error summary."""
    acz = cfg.acz()
    xg = np.linspace(-cfg.grid_halfwidth, cfg.grid_halfwidth, cfg.grid_points)
    search = SearchConfig(seed=cfg.seed,
                          n_starts=int(cfg.scan.get("n_starts", 64)))
    sym = SymbolConfig()
    rows = []
    summary_t = {}
    failed = False
    for t in cfg.times:
        if t > 0.0:
            _guard_resonance(cfg, t)
        # one branch sweep shared by the whole ħ family
        kernels = wkb_kernel_family(acz, t, xg, xg, cfg.hbars,
                                    search=search, sym=sym)
        per_h = []
        for hbar, km in zip(cfg.hbars, kernels):
            wf = gaussian_wavepacket(
                xg, hbar,
                center=float(cfg.initial.get("center", 0.0)),
                momentum=float(cfg.initial.get("momentum", 0.0)),
                width=cfg.initial.get("width"),
            )
            psi = propagate(acz, wf, t, method="wkb", kernel=km)
            ref = (Wavefunction(x=xg, values=wf.values.copy(), hbar=hbar)
                   if t == 0.0 else
                   Wavefunction(x=xg, values=split_step(
                       cfg.hamiltonian, xg, wf.values, t, hbar), hbar=hbar))
            err = relative_l2_error(psi.values, ref.values, psi.dx)
            per_h.append({"hbar": hbar, "rel_l2_error_vs_reference": err,
                          "norm": psi.norm(), "reference_norm": ref.norm()})
            for i, x in enumerate(xg):
                v = psi.values[i]
                rows.append([t, hbar, x, abs(v) ** 2, v.real, v.imag])
        ratios = [per_h[i + 1]["rel_l2_error_vs_reference"]
                  / per_h[i]["rel_l2_error_vs_reference"]
                  for i in range(len(per_h) - 1)
                  if per_h[i]["rel_l2_error_vs_reference"] > 0]
        summary_t[str(t)] = {"per_hbar": per_h, "consecutive_error_ratios": ratios}
        if t == 0.0:
            tol = cfg.tolerances["identity"]
            if any(p["rel_l2_error_vs_reference"] > tol for p in per_h):
                failed = True
    _write_csv(out / "propagate.csv",
               ["t", "hbar", "x", "abs2", "re", "im"], rows)
    _write_json(out / "propagate.json",
                {"config": cfg.resolved(), "results": summary_t})
    return 1 if failed else 0


def cmd_mehler_check(cfg: ExperimentConfig, out: Path) -> int:
    """Compare branch actions to the exact oscillator phase on a grid."""
    if not _is_pure_oscillator(cfg):
        raise ConfigError(
            "mehler_check requires the pure oscillator: n=1, m=1, V = x²/2"
        )
    acz = cfg.acz()
    tol = cfg.tolerances["mehler"]
    nx = int(cfg.scan.get("nx", 9))
    ne = int(cfg.scan.get("ne", 9))
    x_lo, x_hi = cfg.scan.get("x_range", [-2.0, 2.0])
    e_lo, e_hi = cfg.scan.get("eta_range", [-2.0, 2.0])
    search = SearchConfig(seed=cfg.seed)
    report = {}
    worst = 0.0
    for t in cfg.times:
        _guard_resonance(cfg, t)
        diffs = []
        for x in np.linspace(x_lo, x_hi, nx):
            for e in np.linspace(e_lo, e_hi, ne):
                bs = find_branches(acz, t, np.array([x]), np.array([e]), search=search)
                if not bs.branches:
                    diffs.append(math.inf)
                    continue
                b = min(bs.branches, key=lambda br: float(np.linalg.norm(br.theta_star)))
                diffs.append(abs(b.action - mehler_phase(x, e, t)))
        report[str(t)] = {"max_abs_diff": max(diffs), "points": len(diffs)}
        worst = max(worst, max(diffs))
    _write_json(out / "mehler_check.json", {
        "config": cfg.resolved(),
        "per_time": report,
        "tolerance": tol,
        "passed": bool(worst <= tol),
    })
    return 0 if worst <= tol else 1


def cmd_diagnostics(cfg: ExperimentConfig, out: Path) -> int:
    """Contraction, resonance, branch-bound, and tail-rate diagnostics."""
    acz = cfg.acz()
    ham = cfg.hamiltonian
    rng = np.random.default_rng(cfg.seed)
    payload = {
        "config": cfg.resolved(),
        "contraction_factor": contraction_factor(ham, cfg.period, cfg.cutoff),
        "rate_bound": tail_rate_bound(ham, cfg.period, cfg.cutoff),
    }

    per_time = {}
    for t in cfg.times:
        entry = {}
        try:
            bound = compute_branch_bound(acz, t)
            entry["branch_bound"] = {
                "sigma_min": bound.sigma_min,
                "epsilon": bound.epsilon,
                "e_tilde": bound.e_tilde,
                "log10_n_max": bound.log10_n_max,
            }
            entry["resonant"] = False
        except ResonanceError as exc:
            entry["resonant"] = True
            entry["message"] = str(exc)
        per_time[str(t)] = entry
    payload["per_time"] = per_time

    t_ref = next(
        (t for t in cfg.times if t > 0.0 and not per_time[str(t)].get("resonant")),
        0.5 * cfg.period,
    )
    region = check_critical_free_region(acz, t_ref, np.zeros(ham.dim), np.zeros(ham.dim))
    payload["critical_free_region"] = {
        "t": t_ref,
        "radius": region.radius,
        "sigma_affine": region.sigma_affine,
        "kappa": region.kappa,
    }

    # measured tail convergence over random probes
    n_probe = int(cfg.scan.get("n_samples", 20))
    rates, iters = [], []
    for _ in range(n_probe):
        t = float(rng.uniform(0.05, cfg.period))
        x = rng.uniform(-2.0, 2.0, size=ham.dim)
        theta = rng.normal(size=acz.theta_dim)
        sol = solve_tail(acz, t, x, theta)
        if not sol.converged:
            payload["tail_probe_failed"] = True
        rates.append(sol.rate)
        iters.append(sol.iterations)
    payload["tail_probes"] = {
        "count": n_probe,
        "max_observed_rate": float(np.max(rates)),
        "max_iterations": int(np.max(iters)),
        "tolerance": acz.fixed_point_tol,
        # informational: the composite Eq-style factor can undershoot the
        # observed sup-norm rate at M = 1; the contraction factor may not
        "within_rate_bound": bool(
            float(np.max(rates)) <= payload["rate_bound"] + 1e-9
        ),
    }
    ok = (
        payload["contraction_factor"] < 1.0
        and payload["tail_probes"]["max_observed_rate"]
        <= payload["contraction_factor"] + 1e-9
        and not payload.get("tail_probe_failed", False)
    )
    payload["passed"] = bool(ok)
    _write_json(out / "diagnostics.json", payload)
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# entry point


_COMMANDS = {
    "flow-check": cmd_flow_check,
    "branches": cmd_branches,
    "propagate": cmd_propagate,
    "mehler-check": cmd_mehler_check,
    "diagnostics": cmd_diagnostics,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="wkbprop",
        description="Semiclassical propagator experiments "
                    "(JSON config in, CSV/JSON out).",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="path to the JSON config")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS/OpenMP thread pools")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.threads is not None:
            with threadpoolctl.threadpool_limits(limits=args.threads):
                return _COMMANDS[args.command](cfg, out)
        return _COMMANDS[args.command](cfg, out)
    except (ConfigError, ResonanceError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
