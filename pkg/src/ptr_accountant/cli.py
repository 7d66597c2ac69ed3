"""Command-line interface: privacy curves, figure data, sensitivity reports,
training simulations and audits, each stamped with a reproducible manifest."""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Any, Callable

import numpy as np

from . import __version__
from .errors import PtrAccountantError, QuadratureError
from .noise import OutsideClassicRegimeWarning, gaussian_rdp_eps, laplace_rdp_eps
from .ptr import AdjacentPair, PtrConfig, empirical_renyi_moment
from .rdp import (
    DEFAULT_ALPHAS,
    DpGuarantee,
    RdpCurve,
    moment,
    optimal_delta0,
    ptr_direct_dp,
    ptr_rdp,
    ptr_rdp_arms,
    rdp_to_dp,
    strong_composition,
)
from .robust_sgd import (
    CorruptionSpec,
    LinearRegression,
    SoftmaxRegression,
    TrainConfig,
    make_linear_data,
    make_mixture_data,
    train,
)
from .subsampling import (
    SubsampleParams,
    blackbox_subsampled_rdp,
    check_conditions,
    ptr_integer_curve,
    subsampled_ptr_rdp,
    subsampled_rdp_lower_bound,
)
from .trimmed_sum import GradientBatch, SensitivityProfile, TrimmedSumOracle, local_sensitivity_profile, safety_margin

SCHEMA_VERSION = 1
MANIFEST_PREFIX = "# manifest: "


class UsageError(PtrAccountantError, ValueError):
    """Bad command-line input or configuration file."""


# ---------------------------------------------------------------- formatting


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".12g")
    return str(value)


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else str(value)
    return value


def make_manifest(command: str, params: dict) -> dict:
    return {
        "command": command,
        "params": _jsonable(params),
        "seed": params.get("seed"),
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }


def render_csv(manifest: dict, header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    buf.write(MANIFEST_PREFIX + json.dumps(manifest, sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def render_json(manifest: dict, payload: dict) -> str:
    return json.dumps({"manifest": manifest, **_jsonable(payload)}, indent=2, sort_keys=True) + "\n"


def read_manifest(text: str) -> dict:
    if text.startswith(MANIFEST_PREFIX):
        return json.loads(text.splitlines()[0][len(MANIFEST_PREFIX):])
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"no manifest found: {exc}") from None
    if not isinstance(doc, dict) or "manifest" not in doc:
        raise UsageError("no manifest found in JSON document")
    return doc["manifest"]


def strip_manifest(text: str) -> str:
    """Numeric payload of an output, with the manifest removed."""
    if text.startswith(MANIFEST_PREFIX):
        return text.split("\n", 1)[1]
    doc = json.loads(text)
    doc.pop("manifest", None)
    return json.dumps(doc, sort_keys=True)


# ---------------------------------------------------------------- parsing helpers


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    values = _float_list(text)
    if any(v != int(v) for v in values):
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}")
    return [int(v) for v in values]


def _alpha_range(text: str) -> list[float]:
    parts = _float_list(text.replace(":", ","))
    if len(parts) not in (2, 3):
        raise argparse.ArgumentTypeError("alpha range is start:stop[:step]")
    start, stop = parts[0], parts[1]
    step = parts[2] if len(parts) == 3 else 1.0
    if step <= 0 or stop < start:
        raise argparse.ArgumentTypeError("alpha range needs start <= stop and step > 0")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + i * step, 10) for i in range(n)]


def _sigma_pairs(text: str) -> list[list[float]]:
    pairs = []
    for chunk in text.split(","):
        try:
            s1, s2 = (float(v) for v in chunk.split(":"))
        except ValueError:
            raise argparse.ArgumentTypeError(f"sigma pair must be sigma1:sigma2, got {chunk!r}") from None
        pairs.append([s1, s2])
    return pairs


def _alphas(params: dict, default) -> list[float]:
    if params.get("alpha"):
        return sorted(set(float(a) for a in params["alpha"]))
    if params.get("alpha_range"):
        return list(params["alpha_range"])
    return list(default)


def _tau(params: dict) -> float:
    tau = params.get("tau")
    return params["sigma2"] / params["sigma1"] if tau is None else tau


# ---------------------------------------------------------------- commands


@dataclass
class Output:
    main: str
    extra: dict[str, str]


def cmd_rdp_curve(params: dict) -> Output:
    alphas = _alphas(params, DEFAULT_ALPHAS)
    s1, s2, b = params["sigma1"], params["sigma2"], params["b"]
    if not s1 > s2:
        raise UsageError(f"rdp-curve needs sigma1 > sigma2, got {s1} and {s2}")
    delta0 = params["delta0"]
    if params.get("optimal_delta0"):
        at = params.get("optimal_delta0_alpha") or min(alphas)
        delta0 = optimal_delta0(s1, s2, b, at)
        params["delta0"] = delta0
        params["optimal_delta0_computed"] = {"alpha": at, "delta0": delta0,
                                             "raw": optimal_delta0(s1, s2, b, at, clamp=False)}
    config = PtrConfig(s1, s2, _tau(params), b, delta0)
    config.check_scale_relation()
    rows = []
    for a in alphas:
        arm1, arm2 = ptr_rdp_arms(s1, s2, b, delta0, a)
        eps = ptr_rdp(config, a)
        rows.append([a, eps, gaussian_rdp_eps(s1, a), laplace_rdp_eps(b, a), 1 if arm1 >= arm2 else 2])
    header = ["alpha", "eps_ptr", "eps_gauss_large", "eps_lap", "arm_taken"]
    return Output(render_csv(make_manifest("rdp-curve", params), header, rows), {})


DEFAULT_FIG1_PAIRS = [[10.0, 5.0], [20.0, 10.0], [20.0, 20.0 / 3.0], [30.0, 10.0]]
DEFAULT_FIG1_DELTA0 = [1e-8, 2e-8, 5e-8, 1e-7, 2e-7, 5e-7, 1e-6, 2e-6, 5e-6, 9e-6]


def cmd_compare_fig1(params: dict) -> Output:
    delta, b = params["delta"], params["b"]
    rows = []
    for s1, s2 in params["sigma_pairs"]:
        curve = None
        for d0 in params["delta0_sweep"]:
            if not 0 < d0 < delta:
                raise UsageError(f"each delta0 must lie in (0, delta), got {d0}")
            config = PtrConfig(s1, s2, s2 / s1, b, d0)
            curve = RdpCurve.from_function(lambda a: ptr_rdp(config, a))
            conv = rdp_to_dp(curve, delta)
            direct = ptr_direct_dp(config, delta - d0)
            rows.append([s1, s2, d0, direct.eps, conv.eps, conv.order])
    header = ["sigma1", "sigma2", "delta0", "eps_direct", "eps_from_rdp", "alpha_opt"]
    return Output(render_csv(make_manifest("compare-fig1", params), header, rows), {})


def cmd_compare_fig2(params: dict) -> Output:
    alphas = _alphas(params, range(2, 65))
    if any(a != int(a) or a < 2 for a in alphas):
        raise UsageError("compare-fig2 needs integer orders >= 2")
    s1, s2 = params["sigma1"], params["sigma2"]
    config = PtrConfig(s1, s2, _tau(params), params["b"], params["delta0"])
    sub = SubsampleParams(params["q"], config)
    base = ptr_integer_curve(config, int(max(alphas)))
    rows = []
    for a in alphas:
        a = int(a)
        ok = check_conditions(sub, a).satisfied
        white = subsampled_ptr_rdp(sub, a) if ok else None
        rows.append([a, white, blackbox_subsampled_rdp(base, sub.q, a),
                     subsampled_rdp_lower_bound(base, sub.q, a), ok])
    header = ["alpha", "eps_whitebox", "eps_blackbox", "eps_lower", "conditions_ok"]
    return Output(render_csv(make_manifest("compare-fig2", params), header, rows), {})


def fig3_curves(config: PtrConfig, q: float, alphas=DEFAULT_ALPHAS) -> tuple[RdpCurve, RdpCurve]:
    """Per-step (white-box moments accountant, black-box) curves of subsampled PTR.

    The white-box curve takes the smaller of the two bounds at each order.
    """
    sub = SubsampleParams(q, config)
    alphas = tuple(alphas)
    base = ptr_integer_curve(config, max(2, math.ceil(max(alphas))))
    black = [blackbox_subsampled_rdp(base, q, max(2, math.ceil(a))) for a in alphas]
    white = [min(bb, subsampled_ptr_rdp(sub, a)) if check_conditions(sub, a).satisfied else bb
             for a, bb in zip(alphas, black)]
    return RdpCurve(alphas, white), RdpCurve(alphas, black)


def strong_composition_eps(config: PtrConfig, q: float, k: int, delta: float) -> float:
    """k-fold strong composition of the direct (eps, delta) bound amplified by sampling.

    Half of ``delta`` goes to the composition slack; the other half is spread
    over the ``k`` steps, each of which spends ``q (delta_g + delta0)``.
    """
    delta_g = delta / (2 * k * q) - config.delta0
    if delta_g <= 0:
        raise UsageError(f"delta0 too large to split delta over {k} steps")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OutsideClassicRegimeWarning)
        eps = ptr_direct_dp(config, delta_g).eps
    eps_q = math.log1p(q * math.expm1(eps))
    return strong_composition(eps_q, q * (delta_g + config.delta0), k, delta / 2).eps


def cmd_compose_fig3(params: dict) -> Output:
    s1, s2, q, delta = params["sigma1"], params["sigma2"], params["q"], params["delta"]
    config = PtrConfig(s1, s2, _tau(params), params["b"], params["delta0"])
    white, black = fig3_curves(config, q)
    rows = []
    for k in params["k"]:
        rows.append([
            k,
            rdp_to_dp(white.scaled(k), delta).eps,
            rdp_to_dp(black.scaled(k), delta).eps,
            strong_composition_eps(config, q, k, delta),
        ])
    header = ["k", "eps_whitebox_ma", "eps_blackbox_ma", "eps_strong_composition"]
    return Output(render_csv(make_manifest("compose-fig3", params), header, rows), {})


def read_vectors(path: str) -> np.ndarray:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = [ln.split() for ln in fh if ln.strip()]
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None
    if not lines:
        raise UsageError(f"{path} contains no vectors")
    if len({len(ln) for ln in lines}) != 1:
        raise UsageError(f"{path}: all vectors must have the same dimension")
    try:
        return np.array([[float(t) for t in ln] for ln in lines])
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None


def cmd_delta_margin(params: dict) -> Output:
    vectors = read_vectors(params["input"])
    batch = GradientBatch(vectors, params["R"])
    profile = SensitivityProfile(params["F"], params["tau"], params["R"])
    payload = {
        "m": len(batch),
        "F": params["F"],
        "tau": params["tau"],
        "R": params["R"],
        "ls_r": local_sensitivity_profile(batch, profile),
        "delta_margin": safety_margin(batch, profile),
    }
    return Output(render_json(make_manifest("delta-margin", params), payload), {})


# train-sim ------------------------------------------------------------------

TRAIN_DEFAULTS: dict[str, Any] = {
    "model": "linear",
    "n": 60000,
    "d": 10,
    "num_classes": 2,
    "noise_std": 0.0,
    "q": 0.1,
    "eta": 0.5,
    "sigma": 32.0,
    "tau": 0.125,
    "clip_R": 1.0,
    "b": 20.0,
    "delta0": 1e-3,
    "T": 1000,
    "F_init": None,
    "budget_eps": 3.0,
    "budget_delta": 1e-5,
    "corruption": {"kind": "none", "ratio": 0.0, "noise_sigma": 10.0},
    "aggregator": "ptr",
    "sigma_mean": None,
    "seed": 0,
    "num_seeds": 1,
}

_TRAIN_TYPES: dict[str, tuple] = {
    "model": (str,),
    "n": (int,),
    "d": (int,),
    "num_classes": (int,),
    "noise_std": (int, float),
    "q": (int, float),
    "eta": (int, float),
    "sigma": (int, float),
    "tau": (int, float),
    "clip_R": (int, float),
    "b": (int, float),
    "delta0": (int, float),
    "T": (int,),
    "F_init": (int, type(None)),
    "budget_eps": (int, float),
    "budget_delta": (int, float),
    "corruption": (dict,),
    "aggregator": (str,),
    "sigma_mean": (int, float, type(None)),
    "seed": (int,),
    "num_seeds": (int,),
}
_CORRUPTION_TYPES = {"kind": (str,), "ratio": (int, float), "noise_sigma": (int, float)}
_CORRUPTION_ALIASES = {"bit_flip": "gradient_bit_flip", "targeted_flip": "targeted_label_flip"}


def load_train_config(path: str) -> dict:
    """Read a versioned JSON config; every error names the offending field path."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"config: cannot read {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError("config: top level must be an object")
    version = doc.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise UsageError(f"config.schema_version: expected {SCHEMA_VERSION}, got {version!r}")
    out = {}
    for key, value in doc.items():
        if key not in _TRAIN_TYPES:
            raise UsageError(f"config.{key}: unknown field")
        if not isinstance(value, _TRAIN_TYPES[key]) or isinstance(value, bool):
            raise UsageError(f"config.{key}: wrong type {type(value).__name__}")
        if key == "corruption":
            for ck, cv in value.items():
                if ck not in _CORRUPTION_TYPES:
                    raise UsageError(f"config.corruption.{ck}: unknown field")
                if not isinstance(cv, _CORRUPTION_TYPES[ck]) or isinstance(cv, bool):
                    raise UsageError(f"config.corruption.{ck}: wrong type {type(cv).__name__}")
            value = {**TRAIN_DEFAULTS["corruption"], **value}
        out[key] = value
    return out


def parse_corruption(text: str) -> dict:
    kind, _, ratio = text.partition(":")
    kind = _CORRUPTION_ALIASES.get(kind, kind)
    try:
        r = float(ratio) if ratio else 0.0
    except ValueError:
        raise argparse.ArgumentTypeError(f"corruption ratio must be a number, got {ratio!r}") from None
    return {"kind": kind, "ratio": r, "noise_sigma": 10.0}


def _train_threads() -> int:
    try:
        return max(1, int(os.environ.get("PTR_ACCOUNTANT_THREADS", "1")))
    except ValueError:
        return 1


def run_train_seed(params: dict, seed: int):
    data_seq, train_seq = np.random.SeedSequence(seed).spawn(2)
    data_rng = np.random.default_rng(data_seq)
    d = params["d"]
    if params["model"] == "linear":
        data, _ = make_linear_data(params["n"], d, data_rng, noise_std=params["noise_std"])
        model = LinearRegression(d)
    elif params["model"] == "logistic":
        data = make_mixture_data(params["n"], d, params["num_classes"], data_rng)
        model = SoftmaxRegression(d, params["num_classes"])
    else:
        raise UsageError(f"model: expected 'linear' or 'logistic', got {params['model']!r}")
    c = params["corruption"]
    corruption = CorruptionSpec(_CORRUPTION_ALIASES.get(c["kind"], c["kind"]), c["ratio"], c["noise_sigma"])
    config = TrainConfig(
        q=params["q"], eta_B=params["eta"], F_init=params["F_init"], clip_R=params["clip_R"],
        tau=params["tau"], sigma=params["sigma"], b=params["b"], delta0=params["delta0"],
        T_max=params["T"], budget=DpGuarantee(params["budget_eps"], params["budget_delta"]),
        seed=seed, aggregator=params["aggregator"], sigma_mean=params["sigma_mean"],
    )
    return train(model, data, config, corruption, rng=np.random.default_rng(train_seq))


def cmd_train_sim(params: dict) -> Output:
    seeds = [params["seed"] + i for i in range(params["num_seeds"])]
    if not seeds:
        raise UsageError("num_seeds must be at least 1")
    with ThreadPoolExecutor(max_workers=_train_threads()) as pool:
        reports = list(pool.map(lambda s: run_train_seed(params, s), seeds))
    manifest = make_manifest("train-sim", params)
    multi = len(seeds) > 1
    header = (["seed"] if multi else []) + ["iter", "loss", "branch", "F", "eps_so_far"]
    rows = []
    for seed, rep in zip(seeds, reports):
        for r in rep.records:
            rows.append(([seed] if multi else []) + [r.iter, r.loss, r.branch, r.F, r.eps_so_far])
    runs = [{"seed": s, **rep.summary()} for s, rep in zip(seeds, reports)]
    payload = {
        "runs": runs,
        "mean_final_loss": float(np.mean([rep.final_loss for rep in reports])),
        "budget": {"eps": params["budget_eps"], "delta": params["budget_delta"]},
    }
    return Output(render_json(manifest, payload), {"trace": render_csv(manifest, header, rows)})


# audit -------------------------------------------------------------------------


@dataclass(frozen=True)
class AuditScenario:
    description: str
    config: PtrConfig
    F: int
    s: tuple[float, ...]
    s_prime: tuple[float, ...]


AUDIT_SCENARIOS: dict[str, AuditScenario] = {
    "identical": AuditScenario(
        "S and S' coincide; every likelihood ratio is 1",
        PtrConfig(4.0, 2.0, 0.5, 2.0, 0.05), 5, (0.1,) * 10, (0.1,) * 10),
    "worst-case-trimmed": AuditScenario(
        "a max-norm point is added next to the test threshold, moving the margin 5 -> 4",
        PtrConfig(4.0, 2.0, 0.5, 2.0, 0.05), 5, (0.1,) * 10, (0.1,) * 10 + (1.0,)),
    "high-sensitivity": AuditScenario(
        "margin 0 on both sides while the trimmed sum moves by the full clip bound",
        PtrConfig(4.0, 2.0, 0.5, 2.0, 0.1), 1, (1.0, 1.0), (1.0, 1.0, 1.0)),
    "margin-far": AuditScenario(
        "margin far above the threshold on both sides, small-noise branch almost surely",
        PtrConfig(4.0, 2.0, 0.5, 2.0, 0.05), 50, (0.1,) * 100, (0.1,) * 101),
    "gaussian-degenerate": AuditScenario(
        "tau equals the clip bound, so PTR reduces to the Gaussian mechanism",
        PtrConfig(1.0, 1.0, 1.0, 2.0, 0.05), 0, (0.5, 0.5), (0.5, 0.5, 1.0)),
}


def run_audit(name: str, alpha: float, samples: int, seed: int) -> dict:
    sc = AUDIT_SCENARIOS[name]
    oracle = TrimmedSumOracle(sc.F, 1.0)
    pair = AdjacentPair(GradientBatch(list(sc.s), 1.0), GradientBatch(list(sc.s_prime), 1.0))
    est = empirical_renyi_moment(pair, sc.config, oracle, alpha, samples, np.random.default_rng(seed))
    bound = float(moment(ptr_rdp(sc.config, alpha), alpha))
    return {
        "scenario": name,
        "alpha": alpha,
        "samples": samples,
        "estimate": est.estimate,
        "stderr": est.stderr,
        "analytic_bound": bound,
        "pass": est.estimate <= bound * (1 + 5 * est.stderr),
    }


def cmd_audit(params: dict) -> Output:
    if params["scenario"] not in AUDIT_SCENARIOS:
        raise UsageError(f"unknown scenario {params['scenario']!r}; choose from {sorted(AUDIT_SCENARIOS)}")
    if params["samples"] < 100_000:
        raise UsageError(f"audit needs at least 1e5 samples, got {params['samples']}")
    payload = run_audit(params["scenario"], params["alpha"], params["samples"], params["seed"])
    return Output(render_json(make_manifest("audit", params), payload), {})


COMMANDS: dict[str, Callable[[dict], Output]] = {
    "rdp-curve": cmd_rdp_curve,
    "compare-fig1": cmd_compare_fig1,
    "compare-fig2": cmd_compare_fig2,
    "compose-fig3": cmd_compose_fig3,
    "delta-margin": cmd_delta_margin,
    "train-sim": cmd_train_sim,
    "audit": cmd_audit,
}

# keys that only choose output locations, never part of the manifest
_IO_KEYS = {"command", "out", "trace", "config", "manifest_file"}


# ---------------------------------------------------------------- argparse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ptr-accountant", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def out_flag(p):
        p.add_argument("--out", help="output file (default: stdout)")

    def alpha_flags(p):
        g = p.add_mutually_exclusive_group()
        g.add_argument("--alpha", type=_float_list, help="comma-separated Renyi orders")
        g.add_argument("--alpha-range", type=_alpha_range, help="start:stop[:step], inclusive")

    p = sub.add_parser("rdp-curve", help="RDP curve of PTR")
    p.add_argument("--sigma1", type=float, default=2.0)
    p.add_argument("--sigma2", type=float, default=1.0)
    p.add_argument("--tau", type=float, help="default: sigma2 / sigma1")
    p.add_argument("--b", type=float, default=1.0)
    p.add_argument("--delta0", type=float, default=1e-5)
    p.add_argument("--optimal-delta0", action="store_true", help="equalise both arms at one order")
    p.add_argument("--optimal-delta0-alpha", type=float, help="order used by --optimal-delta0 (default: smallest)")
    alpha_flags(p)
    out_flag(p)

    p = sub.add_parser("compare-fig1", help="direct vs RDP-converted (eps, delta) across delta0")
    p.add_argument("--sigma-pairs", type=_sigma_pairs, default=DEFAULT_FIG1_PAIRS, help="s1:s2,s1:s2,...")
    p.add_argument("--b", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=1e-5)
    p.add_argument("--delta0-sweep", type=_float_list, default=DEFAULT_FIG1_DELTA0)
    out_flag(p)

    p = sub.add_parser("compare-fig2", help="white-box vs black-box vs lower bound under subsampling")
    p.add_argument("--q", type=float, default=0.01)
    p.add_argument("--sigma1", type=float, default=4.0)
    p.add_argument("--sigma2", type=float, default=4.0)
    p.add_argument("--tau", type=float)
    p.add_argument("--b", type=float, default=1.0)
    p.add_argument("--delta0", type=float, default=1e-5)
    alpha_flags(p)
    out_flag(p)

    p = sub.add_parser("compose-fig3", help="epsilon after k subsampled PTR steps")
    p.add_argument("--q", type=float, default=0.01)
    p.add_argument("--sigma1", type=float, default=8.0)
    p.add_argument("--sigma2", type=float, default=4.0)
    p.add_argument("--tau", type=float)
    p.add_argument("--b", type=float, default=2.0)
    p.add_argument("--delta0", type=float, default=1e-8)
    p.add_argument("--delta", type=float, default=1e-5)
    p.add_argument("--k", type=_int_list, default=[1, 10, 50, 100, 200, 500, 1000, 2000])
    out_flag(p)

    p = sub.add_parser("delta-margin", help="local-sensitivity profile and safety margin of a vector file")
    p.add_argument("--input", required=True, help="one vector per line, whitespace separated")
    p.add_argument("--F", type=int, required=True)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--R", type=float, required=True)
    out_flag(p)

    p = sub.add_parser("train-sim", help="trimmed-mean DP-SGD simulation")
    p.add_argument("--config", help="versioned JSON config; flags given explicitly override it")
    p.add_argument("--model", choices=["linear", "logistic"])
    p.add_argument("--n", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--num-classes", type=int)
    p.add_argument("--noise-std", type=float)
    p.add_argument("--q", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--clip-R", dest="clip_R", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--delta0", type=float)
    p.add_argument("--T", type=int)
    p.add_argument("--F-init", dest="F_init", type=int)
    p.add_argument("--budget-eps", type=float)
    p.add_argument("--budget-delta", type=float)
    p.add_argument("--corruption", type=parse_corruption, help="kind:ratio, e.g. bit_flip:0.2")
    p.add_argument("--aggregator", choices=["ptr", "mean"])
    p.add_argument("--sigma-mean", type=float, help="baseline noise multiplier (default: calibrated)")
    p.add_argument("--seed", type=int)
    p.add_argument("--num-seeds", type=int)
    p.add_argument("--trace", help="trace CSV path")
    out_flag(p)

    p = sub.add_parser("audit", help="Monte-Carlo Renyi moment vs analytic bound")
    p.add_argument("--scenario", required=True)
    p.add_argument("--alpha", type=float, default=2.0)
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    out_flag(p)

    p = sub.add_parser("replay", help="re-run the command recorded in an output's manifest")
    p.add_argument("manifest_file")
    p.add_argument("--trace", help="trace CSV path (train-sim only)")
    out_flag(p)
    return parser


def _resolve_params(ns: argparse.Namespace) -> dict:
    raw = {k: v for k, v in vars(ns).items() if k not in _IO_KEYS}
    if ns.command != "train-sim":
        return raw
    params = dict(TRAIN_DEFAULTS)
    if ns.config:
        params.update(load_train_config(ns.config))
    params.update({k: v for k, v in raw.items() if v is not None})
    return params


def _write(text: str, path: str | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def execute(command: str, params: dict) -> Output:
    if command not in COMMANDS:
        raise UsageError(f"unknown command {command!r}")
    return COMMANDS[command](params)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if ns.command == "replay":
            try:
                with open(ns.manifest_file, encoding="utf-8") as fh:
                    manifest = read_manifest(fh.read())
            except OSError as exc:
                raise UsageError(f"cannot read {ns.manifest_file}: {exc}") from None
            command, params = manifest["command"], dict(manifest["params"])
        else:
            command, params = ns.command, _resolve_params(ns)
        result = execute(command, params)
        _write(result.main, ns.out)
        if "trace" in result.extra and getattr(ns, "trace", None):
            _write(result.extra["trace"], ns.trace)
    except QuadratureError as exc:
        print(f"error: numerical integration failed: {exc}", file=sys.stderr)
        return 3
    except (PtrAccountantError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
