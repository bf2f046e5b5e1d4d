"""Command-line runner: ``qtwist <command> --config <path> [--out <path>] [--format csv|json] [--seed N]``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import cocycle, twist
from .cocycle import QSeq
from .corep import coassoc_residual
from .linalg import DimensionError, eval_state, identity, opnorm, window_norm
from .suq2 import (
    ClusterOverlapError,
    Element,
    TruncSpec,
    build_generators,
    centralizer_residual,
    haar,
    level_values,
    relation_residuals,
    spectral_elems,
)

COMMANDS = ("relations", "haar", "cocycle", "converge", "twist", "all")
COLUMNS = ("check_id", "params", "value", "target", "provenance", "pass", "seconds")
RELATION_GRID = (-0.5, -0.3, 0.3, 0.5, 0.7, 0.9)
# Three-leg checks always run at this size.
THREE_LEG_N, THREE_LEG_K = 4, 2


class ConfigError(ValueError):
    """Invalid or unresolvable configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    q_seq: QSeq = QSeq.geometric(0.5, 0.5, 6)
    fock_levels: int = 8
    winding_radius: int = 3
    factors: int = 6
    twist_level: int = 3
    probes: int = 20
    seed: int = 42
    cluster_tol: float | str = "auto"
    guard_levels: int = 7
    samples: int = 100
    commands: tuple[str, ...] = ("all",)
    output: str | None = None
    format: str = "csv"
    timings: bool = False

    def spec(self, q: float, fock_levels: int | None = None, winding_radius: int | None = None) -> TruncSpec:
        return TruncSpec(
            q,
            self.fock_levels if fock_levels is None else fock_levels,
            self.winding_radius if winding_radius is None else winding_radius,
            self.cluster_tol,
            self.guard_levels,
        )


CONFIG_KEYS = {
    "q_seq", "fock_levels", "winding_radius", "factors", "twist_level", "probes", "seed",
    "cluster_tol", "guard_levels", "samples", "commands", "output", "format", "timings",
}


def _int(raw: dict, key: str, default: int, minimum: int) -> int:
    value = raw.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{key} must be an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(f"{key} must be >= {minimum}, got {value}")
    return value


def _qseq(raw, length: int) -> QSeq:
    if not isinstance(raw, dict):
        raise ConfigError("q_seq must be an object with a 'kind' key")
    kind = raw.get("kind")
    try:
        if kind == "geometric":
            extra = set(raw) - {"kind", "base", "ratio"}
            if extra:
                raise ConfigError(f"unknown q_seq keys: {sorted(extra)}")
            return QSeq.geometric(float(raw.get("base", 0.5)), float(raw.get("ratio", 0.5)), length)
        if kind == "explicit":
            extra = set(raw) - {"kind", "terms"}
            if extra:
                raise ConfigError(f"unknown q_seq keys: {sorted(extra)}")
            terms = raw.get("terms")
            if not isinstance(terms, list) or len(terms) < length:
                raise ConfigError(f"explicit q_seq needs a list of at least {length} terms (one per factor)")
            return QSeq.explicit([float(t) for t in terms])
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid q_seq: {exc}") from exc
    raise ConfigError(f"q_seq kind must be 'geometric' or 'explicit', got {kind!r}")


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Validate a parsed configuration document and fill in defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = set(raw) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    factors = _int(raw, "factors", 6, 1)
    cfg = ExperimentConfig(
        q_seq=_qseq(raw.get("q_seq", {"kind": "geometric", "base": 0.5, "ratio": 0.5}), factors),
        fock_levels=_int(raw, "fock_levels", 8, 3),
        winding_radius=_int(raw, "winding_radius", 3, 1),
        factors=factors,
        twist_level=_int(raw, "twist_level", 3, 0),
        probes=_int(raw, "probes", 20, 1),
        seed=_int(raw, "seed", 42, 0),
        cluster_tol=raw.get("cluster_tol", "auto"),
        guard_levels=_int(raw, "guard_levels", 7, 0),
        samples=_int(raw, "samples", 100, 1),
        commands=tuple(raw.get("commands", ["all"])),
        output=raw.get("output"),
        format=raw.get("format", "csv"),
        timings=bool(raw.get("timings", False)),
    )
    if cfg.twist_level > cfg.factors:
        raise ConfigError("twist_level must not exceed factors")
    if cfg.format not in ("csv", "json"):
        raise ConfigError(f"format must be 'csv' or 'json', got {cfg.format!r}")
    for c in cfg.commands:
        if c not in COMMANDS:
            raise ConfigError(f"unknown command {c!r}")
    if cfg.cluster_tol != "auto" and (isinstance(cfg.cluster_tol, bool) or not isinstance(cfg.cluster_tol, (int, float))):
        raise ConfigError("cluster_tol must be 'auto' or a number")
    try:
        for q in cfg.q_seq.values(cfg.factors):
            cfg.spec(float(q))
        cfg.spec(0.5, THREE_LEG_N, THREE_LEG_K)
    except (ValueError, ClusterOverlapError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path: str | None) -> ExperimentConfig:
    """Read a JSON configuration file; ``None`` gives the defaults."""
    if path is None:
        return config_from_dict({})
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"configuration {path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw)


@dataclass(frozen=True)
class Row:
    check_id: str
    params: str
    value: float | None
    target: str
    provenance: str
    passed: bool
    seconds: float | None = None
    error: bool = False


@dataclass
class Report:
    rows: list[Row] = field(default_factory=list)

    @property
    def passed(self) -> int:
        return sum(r.passed for r in self.rows)

    @property
    def failed(self) -> int:
        return len(self.rows) - self.passed

    @property
    def errors(self) -> int:
        return sum(r.error for r in self.rows)

    def sorted(self) -> Report:
        return Report(sorted(self.rows, key=lambda r: (r.check_id, r.params)))

    def exit_code(self) -> int:
        if self.errors:
            return 2
        return 0 if self.failed == 0 else 1


def fmt_params(**kw) -> str:
    return ";".join(f"{k}={_fmt_param(v)}" for k, v in kw.items())


def _fmt_param(v) -> str:
    if isinstance(v, float):
        return format(v, ".12g")
    return str(v)


def spec_params(spec: TruncSpec, **extra) -> str:
    return fmt_params(q=spec.q, N=spec.fock_levels, K=spec.winding_radius, guard=spec.guard_levels, **extra)


class Runner:
    """Collects rows; each check is guarded so that resolvability errors become failed rows."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.report = Report()

    def check(self, check_id: str, params: str, compute: Callable[[], float], target: str, test: Callable[[float], bool], provenance: str):
        start = time.perf_counter()
        try:
            value = float(compute())
        except (ClusterOverlapError, DimensionError) as exc:
            self._error(check_id, params, exc, target, provenance)
            return None
        elapsed = time.perf_counter() - start
        ok = bool(np.isfinite(value) and test(value))
        self.report.rows.append(
            Row(check_id, params, value, target, provenance, ok, elapsed if self.cfg.timings else None)
        )
        return value


    def prepare(self, check_id: str, params: str, compute: Callable[[], object]):
        """Shared computation for several checks; a resolvability error becomes an error row and gives None."""
        try:
            return compute()
        except (ClusterOverlapError, DimensionError) as exc:
            self._error(check_id, params, exc, "", "")
            return None

    def _error(self, check_id: str, params: str, exc: Exception, target: str, provenance: str):
        msg = str(exc).replace("\n", " ")
        self.report.rows.append(Row(check_id, f"{params};error={msg}", None, target, provenance, False, None, True))


def _le(bound: float) -> tuple[str, Callable[[float], bool]]:
    return f"<= {bound:.12g}", lambda v: v <= bound


def _ge(bound: float) -> tuple[str, Callable[[float], bool]]:
    return f">= {bound:.12g}", lambda v: v >= bound


def _gt(bound: float) -> tuple[str, Callable[[float], bool]]:
    return f"> {bound:.12g}", lambda v: v > bound


def _eq(target: float) -> tuple[str, Callable[[float], bool]]:
    return f"== {target:.12g}", lambda v: v == target


def _near(target: float, tol: float) -> tuple[str, Callable[[float], bool]]:
    return f"{target:.12g} +- {tol:.3g}", lambda v: abs(v - target) <= tol


def run_relations(r: Runner):
    cfg = r.cfg
    for q in RELATION_GRID:
        spec = cfg.spec(q)
        res = relation_residuals(build_generators(spec))
        top = spec.operator_levels
        for name, v in res.items():
            r.check(f"relations:interior:{name}", spec_params(spec), lambda v=v: v.interior, *_le(1e-12), "paper")
            expected = 1.0 - q ** (2 * top) if name == "aa*+q^2bb*=1" else 0.0
            r.check(
                f"relations:whole_space:{name}", spec_params(spec, cutoff=top),
                lambda v=v: v.whole, *_near(expected, 1e-12), "derived",
            )
    spec = cfg.spec(0.5)
    g = build_generators(spec)
    x = (g.a.adjoint() @ g.a).to_sparse().diagonal().real
    expected = np.repeat(level_values(spec.q, spec.operator_levels), spec.leg.windings)
    r.check("relations:spectrum_a*a", spec_params(spec), lambda: np.abs(x - expected).max(), *_le(1e-13), "paper")
    el = r.prepare("relations:spectral_elems", spec_params(spec, levels=4), lambda: spectral_elems(spec, 4))
    if el is None:
        return

    def units_defect():
        worst = 0.0
        for m in range(4):
            for n in range(4):
                for s in range(4):
                    for t in range(4):
                        lhs = (el.e(m, n) @ el.e(s, t)).to_sparse()
                        rhs = el.e(m, t).to_sparse() if n == s else 0 * lhs
                        worst = max(worst, opnorm(lhs - rhs))
        return worst

    r.check("relations:matrix_units", spec_params(spec, levels=4), units_defect, *_le(1e-10), "paper")
    one = identity(g.legs).to_sparse()
    w = el.w.to_sparse()
    r.check("relations:w_unitary", spec_params(spec), lambda: max(opnorm(w.conj().T @ w - one), opnorm(w @ w.conj().T - one)), *_le(1e-10), "paper")
    r.check("relations:w*pw=p'", spec_params(spec), lambda: opnorm((el.w.adjoint() @ el.p @ el.w - el.p_prime).to_sparse()), *_le(1e-10), "paper")
    for name, s in (("p", el.p), ("p'", el.p_prime)):
        r.check(
            "relations:centralizer", spec_params(spec, s=name, samples=cfg.samples, seed=cfg.seed),
            lambda s=s: centralizer_residual(g, s, cfg.samples, cfg.seed), *_le(1e-10), "paper",
        )


def run_haar(r: Runner):
    cfg = r.cfg
    for q in RELATION_GRID:
        spec = cfg.spec(q)
        phi = haar(build_generators(spec))
        r.check("haar:phi(1)", spec_params(spec), lambda: eval_state(phi, identity(phi.legs)).real, *_eq(1.0), "trivial")
        el = r.prepare("haar:spectral_elems", spec_params(spec), lambda: spectral_elems(spec))
        if el is None:
            continue
        r.check("haar:phi(p)", spec_params(spec), lambda: eval_state(phi, el.p).real, *_near(1 - q * q, 1e-12), "paper")
        r.check("haar:phi(p')", spec_params(spec), lambda: eval_state(phi, el.p_prime).real, *_near(q * q * (1 - q * q), 1e-12), "paper")


def run_cocycle(r: Runner):
    cfg = r.cfg
    for q in (0.5, -0.5):
        spec = cfg.spec(q, THREE_LEG_N, THREE_LEG_K)
        params = spec_params(spec, probes=cfg.probes, seed=cfg.seed, downshift="3-leg")
        r.check("cocycle:equation", params, lambda: cocycle.cocycle_residual(spec, cfg.probes, cfg.seed), *_le(1e-8), "derived")
        r.check("cocycle:negative_control_ww", params, lambda: cocycle.cocycle_residual(spec, cfg.probes, cfg.seed, "ww"), *_gt(0.05), "derived")
        r.check("cocycle:negative_control_corrupt", params, lambda: cocycle.cocycle_residual(spec, cfg.probes, cfg.seed, "corrupt"), *_gt(0.05), "derived")
        r.check("cocycle:coassociativity", params, lambda: coassoc_residual(spec, cfg.probes, cfg.seed), *_le(1e-10), "paper")
    for q in (0.1, 0.3, 0.5, -0.5):
        spec = cfg.spec(q)
        r.check("cocycle:unitarity", spec_params(spec), lambda: cocycle.coboundary_factor(spec).unitarity_defect, *_le(1e-9), "trivial")
    spec = cfg.spec(0.5)
    f = r.prepare("cocycle:factor", spec_params(spec), lambda: cocycle.coboundary_factor(spec))
    if f is None:
        return
    r.check(
        "cocycle:omega_pairing_two_paths", spec_params(spec),
        lambda: abs(cocycle.omega_pairing(f) - cocycle.omega_pairing_direct(f)), *_le(1e-10), "derived",
    )


def run_converge(r: Runner):
    cfg = r.cfg
    seq = cfg.q_seq
    template = cfg.spec(0.5)
    head = QSeq(seq.kind, cfg.factors, seq.base, seq.ratio, seq.terms[: cfg.factors] if seq.terms else ())
    table = r.prepare("converge:tail_table", fmt_params(m=cfg.factors), lambda: cocycle.tail_bound_check(head, template))
    if table is not None:
        run_tail_rows(r, table)
    s8, s6 = cfg.spec(0.5), cfg.spec(0.5, 6)
    dev8 = lambda: abs(cocycle.pairing_value(s8) - 0.64)
    r.check("converge:pairing_identity", spec_params(s8), lambda: cocycle.pairing_value(s8), *_near(0.64, 1e-6), "paper")
    r.check(
        "converge:pairing_shrink_6_to_8", fmt_params(q=0.5, N_from=6, N_to=cfg.fock_levels),
        lambda: abs(cocycle.pairing_value(s6) - 0.64) / dev8(), *_ge(5.0), "derived",
    )
    for q in (0.1, 0.3, 0.5, 0.7):
        spec = cfg.spec(q)
        lem = r.prepare("converge:lemma_3q2", spec_params(spec), lambda: cocycle.lemma_3q2(spec))
        if lem is None:
            continue
        r.check("converge:lemma_3q2", spec_params(spec), lambda lem=lem: lem.value, *_le(lem.bound), "paper")
        r.check("converge:lemma_3q2_oracle", spec_params(spec), lambda lem=lem: lem.oracle_gap, *_le(1e-10), "derived")
    n_max = cfg.factors - 1
    for n in range(n_max + 1):
        tab = r.prepare("converge:tail_defect", fmt_params(n=n, m=cfg.factors), lambda: cocycle.product_convergence(seq, n, template))
        if tab is None:
            continue
        qs = seq.values(cfg.factors)
        if seq.kind == "geometric" and abs(seq.ratio) < 1:
            bound = seq.base**2 * seq.ratio ** (2 * n) / (1 - seq.ratio**2)
        else:
            bound = float(np.sum(qs[n:] ** 2))
        r.check("converge:tail_defect", fmt_params(n=n, m=cfg.factors), lambda tab=tab: tab.tail_defects[-1], *_le(bound), "derived")
        r.check(
            "converge:gns_distance_equals_defect", fmt_params(n=n, m=cfg.factors),
            lambda tab=tab: abs(tab.gns_distance_sq - tab.tail_defects[-1]), *_le(1e-12), "paper",
        )
    r.check(
        "converge:partial_product", fmt_params(m=cfg.factors),
        lambda: cocycle.product_convergence(seq, 0, template).partial_products[-1], *_gt(0.0), "paper",
    )


def run_tail_rows(r: Runner, table: cocycle.TailTable):
    cfg = r.cfg
    seq = cfg.q_seq
    for row in table.rows:
        spec = cfg.spec(row.q)
        r.check(
            "converge:guichardet_term", spec_params(spec, k=row.k, bound="11q^2 derived"),
            lambda row=row: row.term, *_le(row.bound + 1e-4), "derived",
        )
    if seq.kind == "geometric" and abs(seq.ratio) < 1:
        limit = cocycle.TAIL_CONSTANT * seq.base**2 / (1 - seq.ratio**2)
    else:
        limit = table.bound_sum
    r.check("converge:guichardet_partial_sum", fmt_params(m=cfg.factors), lambda: table.rows[-1].partial_sum, *_le(limit), "derived")
    increasing = all(b.partial_sum >= a.partial_sum for a, b in zip(table.rows, table.rows[1:]))
    r.check("converge:partial_sums_increase", fmt_params(m=cfg.factors), lambda: float(increasing), *_eq(1.0), "derived")
    r.check(
        "converge:square_summable", fmt_params(kind=seq.kind, sum_q2=table.square_sum),
        lambda: float(table.square_summable), *_eq(1.0), "trivial",
    )


def run_twist(r: Runner):
    cfg = r.cfg
    for q in (0.3, 0.5):
        spec = cfg.spec(q)
        dom = r.prepare("twist:domination_min", spec_params(spec), lambda: twist.domination_details(spec, cfg.samples, cfg.seed))
        if dom is None:
            continue
        r.check("twist:domination_min", spec_params(spec, samples=cfg.samples, seed=cfg.seed), lambda: dom.min_gap, *_ge(-1e-10), "paper")
        r.check("twist:domination_equality_at_p", spec_params(spec), lambda: abs(dom.saturation), *_le(1e-10), "derived")
    residuals: dict = {}
    for q in (0.3, 0.5):
        for n_levels in sorted({6, cfg.fock_levels}):
            spec = cfg.spec(q, n_levels)
            factor = r.prepare("twist:invariance", spec_params(spec), lambda: cocycle.coboundary_factor(spec))
            if factor is None:
                continue
            bound = 10 * q ** (2 * n_levels)
            for x in ("I", "p", "p'", "w*pw"):
                for side in ("left", "right"):
                    params = spec_params(spec, x=x, side=side)
                    tw = r.check("twist:invariance", params, lambda: twist.invariance_residual(x, factor, side), *_le(bound), "derived")
                    base = r.check(
                        "twist:invariance_baseline", params,
                        lambda: twist.invariance_residual(x, factor, side, twisted=False), *_le(bound), "derived",
                    )
                    residuals[(q, n_levels, x, side)] = tw
                    if tw is not None and base is not None:
                        r.check(
                            "twist:invariance_vs_baseline", params,
                            lambda: max(tw, twist.NOISE_FLOOR) / max(base, twist.NOISE_FLOOR), *_le(10.0), "derived",
                        )
    for x in ("p", "p'", "w*pw"):
        a, b = residuals.get((0.5, 6, x, "left")), residuals.get((0.5, cfg.fock_levels, x, "left"))
        if a is not None and b is not None and cfg.fock_levels > 6:
            r.check("twist:invariance_shrink_6_to_N", fmt_params(q=0.5, x=x, N_to=cfg.fock_levels), lambda: a / b, *_ge(5.0), "derived")
    spec = cfg.spec(0.5)
    gam = r.prepare("twist:gamma_bound_defect", spec_params(spec), lambda: twist.gamma_slice(spec))
    if gam is not None:
        r.check("twist:gamma_bound_defect", spec_params(spec, bound=gam.bound), lambda: gam.defect, *_le(1e-6), "paper")
        r.check("twist:gamma_psd", spec_params(spec), lambda: gam.lam_min, *_ge(-1e-9), "trivial")
        r.check("twist:gamma_two_orders", spec_params(spec), lambda: abs(gam.phi_gamma - gam.phi_pair), *_le(1e-10), "derived")
    run_twisted_coproduct(r, spec)
    run_twisted_weight(r)


def run_twisted_coproduct(r: Runner, spec: TruncSpec):
    def projector_defect():
        dp = twist.twisted_coproduct("p", cocycle.coboundary_factor(spec)).to_sparse()
        return max(opnorm(dp - dp.conj().T), cocycle_window_defect(dp @ dp - dp, spec))

    def homomorphism_defect():
        factor = cocycle.coboundary_factor(spec)
        da = twist.twisted_coproduct("a", factor).to_sparse()
        a_star_a = Element("a*a", lambda rep: rep.gens.a.adjoint() @ rep.gens.a)
        dasa = twist.twisted_coproduct(a_star_a, factor).to_sparse()
        return cocycle_window_defect(dasa - da.conj().T @ da, spec)

    r.check("twist:twisted_coproduct_projector", spec_params(spec), projector_defect, *_le(1e-9), "trivial")
    r.check("twist:twisted_coproduct_homomorphism", spec_params(spec, x="a"), homomorphism_defect, *_le(1e-9), "trivial")


def run_twisted_weight(r: Runner):
    cfg = r.cfg
    seq = cfg.q_seq
    template = cfg.spec(0.5)
    F, m = cfg.factors, cfg.twist_level
    weight = twist.TwistedWeight(seq, m, F, template)
    qs = seq.values(F)
    all_i = float(np.prod(qs[:m] ** -2.0))
    r.check(
        "twist:phi_omega_all_I", fmt_params(m=m, F=F, note="diverges with m"),
        lambda: twist.phi_omega_value(weight, ["I"] * F), *_near(all_i, 1e-12 * all_i), "derived",
    )
    def growth():
        values = [twist.phi_omega_value(twist.TwistedWeight(seq, mm, F, template), []) for mm in range(F + 1)]
        return min(b / a for a, b in zip(values, values[1:]))

    r.check("twist:phi_omega_all_I_increasing", fmt_params(F=F), growth, *_gt(1.0), "derived")
    full = twist.TwistedWeight(seq, F, F, template)
    for n in range(F + 1):
        closed = twist.s_n_closed_form(full, n)
        r.check(
            "twist:phi_omega_s_n", fmt_params(n=n, m=F, F=F, tol="relative"),
            lambda n=n, closed=closed: abs(twist.phi_omega_value(full, twist.projector_string(n, F)) - closed) / closed,
            *_le(1e-10), "derived",
        )
    zero = twist.TwistedWeight(seq, 0, F, template)
    r.check(
        "twist:phi_omega_s_0", fmt_params(m=0, F=F),
        lambda: twist.phi_omega_value(zero, twist.projector_string(0, F)), *_near(float(np.prod(1 - qs**2)), 1e-12), "paper",
    )
    prev = None
    for n in range(F + 1):
        bound = float(np.sum(qs[n:] ** 2))
        val = r.check("twist:compression_defect", fmt_params(n=n, F=F), lambda n=n: twist.compression_convergence(weight, ["I"], n), *_le(bound + 1e-15), "derived")
        if prev is not None and val is not None:
            r.check("twist:compression_monotone", fmt_params(n=n, F=F), lambda: val - prev, *_le(1e-15), "derived")
        prev = val
    for n in (1, 2, 3):
        if n <= F:
            r.check(
                "twist:trace_surrogate", fmt_params(n=n, m=m, F=F, samples=cfg.samples, seed=cfg.seed),
                lambda n=n: twist.trace_surrogate_residual(weight, n, cfg.samples, cfg.seed), *_le(1e-10), "derived",
            )


def cocycle_window_defect(m, spec: TruncSpec) -> float:
    """Norm of a two-leg matrix compressed to the state window."""
    return window_norm(m, (spec.leg, spec.leg), spec.fock_levels)


FAMILIES = {
    "relations": run_relations,
    "haar": run_haar,
    "cocycle": run_cocycle,
    "converge": run_converge,
    "twist": run_twist,
}


def run(config: ExperimentConfig, command: str) -> Report:
    """Run one command (or ``all``) and return the canonically ordered report."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    runner = Runner(config)
    names = list(FAMILIES) if command == "all" else [command]
    for name in names:
        FAMILIES[name](runner)
    return runner.report.sorted()


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".12g")
    return str(v)


def row_dict(row: Row) -> dict:
    return {
        "check_id": row.check_id,
        "params": row.params,
        "value": None if row.value is None else float(format(row.value, ".12g")),
        "target": row.target,
        "provenance": row.provenance,
        "pass": row.passed,
        "seconds": None if row.seconds is None else float(format(row.seconds, ".12g")),
    }


def render(report: Report, fmt: str = "csv") -> str:
    if fmt == "json":
        return json.dumps([row_dict(r) for r in report.rows], indent=1) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(COLUMNS)
    for r in report.rows:
        writer.writerow([_cell(r.check_id), _cell(r.params), _cell(r.value), _cell(r.target), _cell(r.provenance), _cell(r.passed), _cell(r.seconds)])
    return buf.getvalue()


def emit(report: Report, fmt: str = "csv", path: str | None = None) -> str:
    """Write the report to ``path`` (stdout when None) and return the text."""
    text = render(report, fmt)
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="qtwist", description=__doc__)
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="JSON configuration file (defaults when omitted)")
    parser.add_argument("--out", help="output path (stdout when omitted)")
    parser.add_argument("--format", choices=("csv", "json"))
    parser.add_argument("--seed", type=int)
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"qtwist: configuration error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    fmt = args.format or cfg.format
    report = run(cfg, args.command)
    try:
        emit(report, fmt, args.out or cfg.output)
    except OSError as exc:
        print(f"qtwist: cannot write report: {exc}", file=sys.stderr)
        return 2
    print(f"qtwist: {report.passed} passed, {report.failed} failed, {report.errors} errors", file=sys.stderr)
    return report.exit_code()


if __name__ == "__main__":
    sys.exit(main())
