"""Command-line front end: ``hybridlab COMMAND CONFIG [--out DIR] [--n N] [--seed S]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable

import numpy as np

from . import cgo, elliptic, forward, inversion, linearization as lin, microlocal as ml
from .config import ConfigError, Scenario, boundary_data, load_scenario
from .elliptic import BoundaryCondition, CoefficientSet
from .grid import ScalarField
from .io import csv_text, grid_dump_binary, grid_dump_text, sidecar_text

log = logging.getLogger("hybridlab")

COMMANDS = ("forward", "linearize", "symbol-audit", "cgo", "sweep", "reconstruct", "spectrum")
NUMERICAL_ERRORS = (elliptic.SingularSystemError, np.linalg.LinAlgError, OverflowError,
                    FloatingPointError, lin.DenseLimitError, RuntimeError)


class Stage:
    """Names the pipeline stage in numerical-failure messages."""

    name = "setup"


class Outputs:
    def __init__(self, root: Path, sc: Scenario):
        self.dir = Path(root) / sc.digest
        self.dir.mkdir(parents=True, exist_ok=True)
        self.sc = sc
        self.comment = f"config_hash={sc.digest} n={sc.grid.n} seed={sc.seed}"
        self.written: list[Path] = []

    def csv(self, name: str, header, rows) -> Path:
        return self.text(name, csv_text(header, rows, self.comment))

    def text(self, name: str, content: str) -> Path:
        path = self.dir / name
        path.write_text(content)
        self.written.append(path)
        return path

    def field(self, stem: str, f: ScalarField, sidecar: str = "") -> None:
        self.text(stem + ".txt", f"# {self.comment}\n" + grid_dump_text(f))
        self.binary(stem + ".bin", grid_dump_binary(f))
        self.text(stem + ".sidecar", sidecar_text({"config_hash": self.sc.digest}) + sidecar)

    def binary(self, name: str, data: bytes) -> None:
        path = self.dir / name
        path.write_bytes(data)
        self.written.append(path)


# ---------------------------------------------------------------- scenario wiring

def _coeffs(sc: Scenario) -> CoefficientSet:
    if sc.modality == "UMOT":
        return CoefficientSet(mu=sc.coefficient("mu"))
    if sc.modality == "QPAT":
        return CoefficientSet(sigma=sc.coefficient("sigma"), gamma=sc.coefficient("gamma"))
    return CoefficientSet(sigma=sc.coefficient("sigma"), p=sc.p)


def _boundary(sc: Scenario, coeffs: CoefficientSet, need: int) -> list[np.ndarray]:
    fs = boundary_data(sc, coeffs.sigma, coeffs.gamma)
    if len(fs) < need:
        raise ConfigError(f"boundary: modality {sc.modality} needs {need} entries, got {len(fs)}")
    return fs


def _umot_setup(sc: Scenario):
    u = sc.section("umot")
    eta = u.get("eta", 0)
    if isinstance(eta, list):
        eta = tuple(int(v) for v in eta)
    elif not isinstance(eta, int):
        raise ConfigError("umot.eta: expected a ring index or [i, j]")
    kinds = {"dirichlet": elliptic.DIRICHLET, "robin": elliptic.ROBIN1}
    try:
        B = kinds[u.get("source_bc", "dirichlet")]
        C = kinds[u.get("detector_bc", "robin")]
    except KeyError as exc:
        raise ConfigError(f"umot: unknown boundary condition {exc.args[0]!r}") from exc
    if "robin_gamma" in u:
        C = BoundaryCondition(C.kind, float(u["robin_gamma"]))
    return eta, B, C


Pair = tuple[lin.LinearMap, Callable[..., np.ndarray]]


def build_maps(sc: Scenario, route: int = 1) -> list[Pair]:
    """Linear maps for the scenario's modality with matching nonlinear forward functions."""
    c = _coeffs(sc)
    shifted = lin.shifted
    if sc.modality == "UMOT":
        eta, B, C = _umot_setup(sc)
        S = _boundary(sc, c, 1)[0]
        mu = c.mu
        return [(lin.umot_dF(c, S, eta, B, C),
                 lambda r: forward.umot_data(CoefficientSet(mu=shifted(mu, r)), S, eta, B, C).field.values)]
    if sc.modality == "QPAT":
        sig, gam = c.sigma, c.gamma
        out = []
        for f in _boundary(sc, c, 1):
            out.append((lin.qpat_dF(c, f, route),
                        lambda r, v, f=f: forward.qpat_data(
                            CoefficientSet(sigma=shifted(sig, r), gamma=shifted(gam, v)), f).field.values))
        return out
    sig, p = c.sigma, sc.p
    fs = _boundary(sc, c, 2 if sc.modality in ("AET_CROSS", "AET_TRIPLE") else 1)
    power = lambda f: (lin.aet_dF(c, f, p),
                       lambda r: forward.power_density(CoefficientSet(sigma=shifted(sig, r), p=p), f).field.values)
    if sc.modality == "AET_POWER":
        return [power(f) for f in fs]
    cross = (lin.aet_cross_dF(c, fs[0], fs[1]),
             lambda r: forward.cross_power(CoefficientSet(sigma=shifted(sig, r)), fs[0], fs[1]).field.values)
    if sc.modality == "AET_CROSS":
        return [cross]
    return [power(fs[0]), power(fs[1]), cross]


def _direction(sc: Scenario, arity: int):
    rho = sc.perturbation("rho")
    return (rho, sc.perturbation("nu")) if arity == 2 else rho


# ---------------------------------------------------------------- commands

def cmd_forward(sc: Scenario, out: Outputs) -> None:
    c = _coeffs(sc)
    Stage.name = "forward"
    if sc.modality == "UMOT":
        eta, B, C = _umot_setup(sc)
        data = [forward.umot_data(c, f, eta, B, C) for f in _boundary(sc, c, 1)]
    elif sc.modality == "QPAT":
        data = [forward.qpat_data(c, f) for f in _boundary(sc, c, 1)]
    elif sc.modality == "AET_POWER":
        data = [forward.power_density(c, f, sc.p) for f in _boundary(sc, c, 1)]
    else:
        fs = _boundary(sc, c, 2)
        data = [forward.cross_power(c, fs[0], fs[1])]
        if sc.modality == "AET_TRIPLE":
            data = [forward.power_density(c, fs[0], 2.0), forward.power_density(c, fs[1], 2.0)] + data
    rows = []
    for k, d in enumerate(data):
        v = d.field.values
        out.field(f"data_{k}", d.field, d.sidecar())
        rows.append([k, d.modality, float(np.abs(v).max()), float(sc.grid.h * np.linalg.norm(v))])
    out.csv("forward.csv", ["index", "modality", "max_abs", "l2_norm"], rows)


def cmd_linearize(sc: Scenario, out: Outputs) -> None:
    opts = sc.section("linearize")
    route = int(opts.get("route", 1))
    Stage.name = "linearize"
    pairs = build_maps(sc, route)
    rows = []
    for k, (L, fwd) in enumerate(pairs):
        rep = lin.validate_frechet(fwd, L, _direction(sc, L.arity))
        ratios = list(rep.ratios) + [""]
        for e, r, q in zip(rep.epsilons, rep.residuals, ratios):
            rows.append([k, L.name, e, r, q, "PASS" if rep.passed else "FAIL"])
    out.csv("frechet.csv", ["map", "name", "eps", "residual", "ratio", "verdict"], rows)
    if opts.get("assemble", False):
        Stage.name = "assemble"
        op = lin.assemble([L for L, _ in pairs], sc.masks)
        out.binary("operator.bin", op.dump())
        out.text("operator.sidecar", sidecar_text({"config_hash": sc.digest, "rows": op.shape[0],
                                                   "cols": op.shape[1]}))


def cmd_symbol_audit(sc: Scenario, out: Outputs) -> None:
    c = _coeffs(sc)
    Stage.name = "symbol-audit"
    reports = []
    if sc.modality == "UMOT":
        eta, B, C = _umot_setup(sc)
        for f in _boundary(sc, c, 1):
            u0 = elliptic.solve_schrodinger(c, BoundaryCondition(B.kind, B.robin_gamma, f))
            G0 = elliptic.greens_column(c, C.homogeneous(), eta)
            reports.append(ml.audit_umot(c, u0, G0, sc.masks))
    elif sc.modality == "QPAT":
        us = [elliptic.solve_diffusion(c, f) for f in _boundary(sc, c, 2)]
        reports.append(ml.audit_qpat_block(us, sc.masks))
    else:
        for f in _boundary(sc, c, 1):
            reports.append(ml.audit_aet(c, f, sc.p, sc.masks))
    rows = [[k] + r.row() for k, r in enumerate(reports)]
    out.csv("symbol_audit.csv", ["datum", "min_abs", "argmin_x1", "argmin_x2", "argmin_xi_angle", "verdict"], rows)


def _rho_vectors(opts: dict, key: str = "rho") -> list[cgo.CgoVector]:
    """CGO vectors from magnitudes plus one shared, or one per magnitude, ``k``/``k_perp``."""
    mags = opts.get(key, [5.0, 10.0, 20.0, 40.0])
    if not isinstance(mags, list):
        mags = [mags]
    k = opts.get("k", [0.0, 1.0])
    kp = opts.get("k_perp", [1.0, 0.0])
    ks = k if k and isinstance(k[0], list) else [k] * len(mags)
    kps = kp if kp and isinstance(kp[0], list) else [kp] * len(mags)
    if len(ks) != len(mags) or len(kps) != len(mags):
        raise ConfigError(f"{key}: k and k_perp lists must match the number of magnitudes")
    try:
        return [cgo.make_rho(float(m), tuple(a), tuple(b)) for m, a, b in zip(mags, ks, kps)]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: {exc}") from exc


def cmd_cgo(sc: Scenario, out: Outputs) -> None:
    opts = sc.section("cgo")
    sigma = sc.coefficient("sigma")
    gamma = sc.coefficient("gamma") if "gamma" in sc.section("coefficients") else None
    mode = opts.get("remainder", "antiperiodic")
    Stage.name = "cgo"
    probe = ScalarField.from_function(sc.grid, lambda x, y: np.exp(0.5 * (x + y)))
    rows = []
    for r in _rho_vectors(opts):
        sol = cgo.make_cgo(sigma, r, gamma, remainder=mode)
        ratio = cgo.gradbigger_ratio(sol, probe, sc.masks.omega_prime)
        rows.append([r.rho_mag, sol.sup_rho_psi(), sol.sup_phi(), sol.conductivity_residual(), ratio, sol.residual])
    out.csv("cgo.csv", ["rho", "sup_rho_psi", "sup_phi", "conductivity_residual", "gradbigger_ratio",
                        "solve_residual"], rows)


def cmd_sweep(sc: Scenario, out: Outputs) -> None:
    opts = sc.section("sweep")
    default = {"UMOT": None, "QPAT": "QPAT"}.get(sc.modality, "P_SMALL" if (sc.p or 2.0) < 1 else "AET")
    kind = opts.get("kind", default)
    if kind is None:
        raise ConfigError(f"sweep.kind: no deformation chain for modality {sc.modality}")
    n_t = int(opts.get("n_t", 11))
    c = _coeffs(sc)
    Stage.name = "sweep"
    f0 = [sc.grid.eval_boundary(lambda x, y: x.astype(complex)),
          sc.grid.eval_boundary(lambda x, y: y.astype(complex))]
    rhos = _rho_vectors(opts)
    if kind == "P_SMALL":
        fs = _boundary(sc, c, 1)
        if not sc.p < 1:
            raise ConfigError(f"scenario.p: P_SMALL sweep needs p < 1, got {sc.p}")
        path = ml.p_small_path(c.sigma, fs, [f0[0]] * len(fs), sc.p, rhos[0], n_t)
        builder = ml.p_functional_builder(sc.p, n_xi=ml.N_XI)
    elif kind == "AET":
        fs = _boundary(sc, c, 2)
        if len(rhos) < 2:
            raise ConfigError("sweep.rho: AET sweep needs two CGO magnitudes")
        path = ml.aet_path(c.sigma, fs, [f0[0]] * (len(fs) - 1) + [f0[1]], rhos[0], rhos[1], n_t)
        builder = ml.p_functional_builder(2.0, path.pairs, cgo_spanning=True)
    elif kind == "QPAT":
        fs = _boundary(sc, c, 2)
        if len(rhos) != len(fs):
            raise ConfigError("sweep.rho: QPAT sweep needs one CGO magnitude per boundary datum")
        # endpoint pairs (1, x1), (1, x2), ...: the block (iξ·∇u, u) then has full rank at every ξ
        one = np.ones(sc.grid.n_boundary, dtype=complex)
        ends = [one if i % 2 == 0 else f0[(i // 2) % 2] for i in range(len(fs))]
        path = ml.qpat_path(c.sigma, c.gamma, fs, ends, rhos, n_t=n_t)
        builder = ml.qpat_builder(path.pairs)
    else:
        raise ConfigError(f"sweep.kind: unknown sweep {kind!r}")
    rep = ml.deformation_sweep(path, builder, sc.masks)
    out.text("sweep.csv", rep.csv(f"{out.comment} kind={kind} verdict={rep.verdict} "
                                  f"min_over_path={rep.min_over_path!r}"))


def cmd_reconstruct(sc: Scenario, out: Outputs) -> None:
    opts = sc.section("reconstruct")
    method = opts.get("method", "a0x1")
    Stage.name = "reconstruct"
    if method == "a0x1":
        p = sc.p if sc.p is not None else 0.5
        if not 0 < p < 1:
            raise ConfigError(f"scenario.p: a0x1 reconstruction needs 0 < p < 1, got {p}")
        rho = sc.perturbation("rho")
        res = inversion.invert_A0x1(lin.reduced_A0x1(rho, p), p, sc.masks, truth=rho,
                                    stencil=opts.get("stencil", "compact"))
    elif method == "qpat-lambda":
        lam = float(opts.get("lam", 0.1))
        if not 0 < lam <= 0.5:
            raise ConfigError(f"reconstruct.lam: must lie in (0, 0.5], got {lam}")
        g = sc.grid
        c = inversion.qpat_lambda_coefficients(g, lam)
        rho, nu = sc.perturbation("rho"), sc.perturbation("nu")
        data = [lin.qpat_dF(c, f).apply(rho, nu) for f in inversion.qpat_boundary_data(g, lam)]
        res = inversion.qpat_lambda_reconstruct(lam, *data, sc.masks, truth=(rho, nu))
    elif method == "svd-pinv":
        pairs = build_maps(sc)
        op = lin.assemble([L for L, _ in pairs], sc.masks)
        args = [_direction(sc, pairs[0][0].arity)]
        args = args[0] if isinstance(args[0], tuple) else tuple(args)
        x = np.concatenate([a.values.ravel()[op.col_map[op.col_block == b]] for b, a in enumerate(args)])
        tol = float(opts.get("tol", inversion.KERNEL_TOL))
        res = inversion.svd_pinv_reconstruct(op, op.matrix @ x, tol, truth=x)
    else:
        raise ConfigError(f"reconstruct.method: unknown method {method!r}")
    out.field("rho_hat", res.rho_hat, sidecar_text({"method": res.method}))
    if res.nu_hat is not None:
        out.field("nu_hat", res.nu_hat, sidecar_text({"method": res.method}))
    out.csv("reconstruct.csv", ["method", "rho_rel_l2_error", "nu_rel_l2_error", "kernel_dim"],
            [[res.method, res.rel_l2_error if res.rel_l2_error is not None else "",
              res.nu_rel_l2_error if res.nu_rel_l2_error is not None else "",
              res.kernel_dim if res.kernel_dim is not None else ""]])


def cmd_spectrum(sc: Scenario, out: Outputs) -> None:
    opts = sc.section("spectrum")
    Stage.name = "assemble"
    pairs = build_maps(sc)
    op = lin.assemble([L for L, _ in pairs], sc.masks)
    Stage.name = "spectrum"
    trial = inversion.sine_trial_basis(sc.masks, int(opts.get("modes", 8))) if opts.get("trial", False) else None
    rep = inversion.svd_probe(op, float(opts.get("tol", inversion.KERNEL_TOL)), trial)
    out.text("spectrum.csv", rep.csv(f"{out.comment} kernel_dim={rep.numerical_kernel_dim} "
                                     f"condition={rep.condition!r}"))


HANDLERS = {
    "forward": cmd_forward, "linearize": cmd_linearize, "symbol-audit": cmd_symbol_audit, "cgo": cmd_cgo,
    "sweep": cmd_sweep, "reconstruct": cmd_reconstruct, "spectrum": cmd_spectrum,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hybridlab", description=__doc__)
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("config_pos", nargs="?", metavar="CONFIG")
    ap.add_argument("--config", dest="config")
    ap.add_argument("--out", default="out")
    ap.add_argument("--n", type=int)
    ap.add_argument("--seed", type=int)
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    path = args.config or args.config_pos
    if path is None:
        log.error("config: no config file given")
        return 1
    Stage.name = "setup"
    try:
        sc = load_scenario(path, args.n, args.seed)
        out = Outputs(Path(args.out), sc)
        HANDLERS[args.command](sc, out)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return 1
    except NUMERICAL_ERRORS as exc:
        log.error("numerical failure in stage %s: %s", Stage.name, exc)
        return 2
    except ValueError as exc:
        # contract violations raised by the numerical modules on config-supplied values
        log.error("config error: %s", exc)
        return 1
    for p in out.written:
        print(p)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
