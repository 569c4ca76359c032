"""Monte Carlo experiment harness.

Configuration files are flat INI files with an ``[experiment]`` section and a
``[model]`` section for model parameters.  Replications are seeded
independently through hash-derived lineages, so runs are bit-reproducible for
any worker count; aggregation always happens in replication order.
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, EstimationError
from .estimators import estimate, bil_regressors, gmm_regressors, rescale_interval, sl_gmm_estimate
from .kernels import BandwidthRule, KernelSpec
from .models import build_model
from .polybasis import build_index_set
from .sampling import PriorSpec, adaptive_proposal, derive_seeds, sample_prior

__all__ = [
    "ExperimentConfig",
    "MonteCarloReport",
    "run_experiment",
    "run_two_round",
    "tune_bandwidth",
    "emit_report",
    "report_from_json",
]

ESTIMATORS = ("bil", "abc-gmm", "sl-gmm")
MAX_POLY_ORDER = 5

_VARIANT_NAMES = {0: "lc", 1: "ll", 2: "lq"}


def _variant_label(p):
    return _VARIANT_NAMES.get(p, f"p{p}")


# ---------------------------------------------------------------------------
# configuration

# (name, kind, default); kinds: int float str bool ints floats strs
# optional kinds append '?' and default to None when blank.
_EXPERIMENT_FIELDS = (
    ("model", "str", "toy_location_scale"),
    ("estimator", "str", "bil"),
    ("S", "int", 2000),
    ("m", "int?", None),
    ("kernel", "str", "epanechnikov"),
    ("p", "ints", (1,)),
    ("mean_bandwidth", "str", "nn:200"),
    ("quantile_bandwidth", "str", ""),
    ("mean_grid", "strs", ()),
    ("quantile_grid", "strs", ()),
    ("tune_trials", "int", 40),
    ("tune_S", "int?", None),
    ("tune_source", "str", "prior_draws"),
    ("quantile_levels", "floats", (0.05, 0.5, 0.95)),
    ("confidence_level", "float", 0.90),
    ("R", "int", 1),
    ("seed", "int", 1),
    ("workers", "int", 1),
    ("failure_threshold", "float", 0.10),
    ("sampling", "str", "pseudo"),
    ("include_baseline", "bool", False),
    ("rounds", "int", 1),
    ("round1_estimator", "str", "regression"),
    ("round1_bandwidth", "str", "nn:200"),
    ("round1_p", "int", 1),
    ("round1_S", "int?", None),
    ("round2_scale", "floats", ()),
    ("ridge", "float", 0.0),
    ("out", "str", ""),
    ("format", "str", "csv"),
)

_FIELD_KINDS = {name: kind for name, kind, _ in _EXPERIMENT_FIELDS}


def _parse_scalar(text):
    text = text.strip()
    for caster in (int, float):
        try:
            return caster(text)
        except ValueError:
            pass
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    return text


def _parse_value(kind, text):
    text = text.strip()
    if kind.endswith("?") and text == "":
        return None
    base = kind.rstrip("?")
    if base == "int":
        return int(text)
    if base == "float":
        return float(text)
    if base == "bool":
        if text.lower() not in ("true", "false"):
            raise ValueError(f"expected true/false, got {text!r}")
        return text.lower() == "true"
    if base == "ints":
        return tuple(int(v) for v in text.split(",") if v.strip()) if text else ()
    if base == "floats":
        return tuple(float(v) for v in text.split(",") if v.strip()) if text else ()
    if base == "strs":
        return tuple(v.strip() for v in text.split(",") if v.strip()) if text else ()
    return text


def _format_value(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class ExperimentConfig:
    """Typed mirror of one configuration file."""

    model: str = "toy_location_scale"
    estimator: str = "bil"
    S: int = 2000
    m: int = None
    kernel: str = "epanechnikov"
    p: tuple = (1,)
    mean_bandwidth: str = "nn:200"
    quantile_bandwidth: str = ""
    mean_grid: tuple = ()
    quantile_grid: tuple = ()
    tune_trials: int = 40
    tune_S: int = None
    tune_source: str = "prior_draws"
    quantile_levels: tuple = (0.05, 0.5, 0.95)
    confidence_level: float = 0.90
    R: int = 1
    seed: int = 1
    workers: int = 1
    failure_threshold: float = 0.10
    sampling: str = "pseudo"
    include_baseline: bool = False
    rounds: int = 1
    round1_estimator: str = "regression"
    round1_bandwidth: str = "nn:200"
    round1_p: int = 1
    round1_S: int = None
    round2_scale: tuple = ()
    ridge: float = 0.0
    out: str = ""
    format: str = "csv"
    model_params: dict = field(default_factory=dict)

    @classmethod
    def from_file(cls, path):
        cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        cp.optionxform = str  # keys are case sensitive (S, R, ...)
        with open(path) as fh:
            cp.read_file(fh)
        return cls.from_parser(cp)

    @classmethod
    def from_parser(cls, cp):
        kwargs = {}
        if cp.has_section("experiment"):
            for key, raw in cp.items("experiment"):
                if key not in _FIELD_KINDS:
                    raise ConfigError(f"unknown experiment key {key!r}")
                try:
                    kwargs[key] = _parse_value(_FIELD_KINDS[key], raw)
                except ValueError as exc:
                    raise ConfigError(f"bad value for {key!r}: {exc}") from exc
        params = {}
        if cp.has_section("model"):
            for key, raw in cp.items("model"):
                vals = [v for v in raw.split(",")]
                if len(vals) > 1:
                    params[key] = tuple(_parse_scalar(v) for v in vals)
                else:
                    params[key] = _parse_scalar(raw)
        kwargs["model_params"] = params
        return cls(**kwargs)

    def to_file(self, path):
        cp = configparser.ConfigParser()
        cp.optionxform = str
        cp.add_section("experiment")
        for name, _, default in _EXPERIMENT_FIELDS:
            value = getattr(self, name)
            cp.set("experiment", name, _format_value(value))
        cp.add_section("model")
        for key in sorted(self.model_params):
            cp.set("model", key, _format_value(self.model_params[key]))
        with open(path, "w") as fh:
            cp.write(fh)

    def apply_overrides(self, pairs):
        """Apply ``--set section.key=value`` style overrides."""
        cfg = self
        for pair in pairs:
            if "=" not in pair:
                raise ConfigError(f"override {pair!r} is not of the form key=value")
            key, raw = pair.split("=", 1)
            key = key.strip()
            if key.startswith("model."):
                params = dict(cfg.model_params)
                vals = raw.split(",")
                params[key[6:]] = (
                    tuple(_parse_scalar(v) for v in vals) if len(vals) > 1 else _parse_scalar(raw)
                )
                cfg = replace(cfg, model_params=params)
                continue
            if key.startswith("experiment."):
                key = key[11:]
            if key not in _FIELD_KINDS:
                raise ConfigError(f"unknown experiment key {key!r}")
            try:
                cfg = replace(cfg, **{key: _parse_value(_FIELD_KINDS[key], raw)})
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}") from exc
        return cfg

    def echo(self):
        """Config as a JSON-ready dict; execution knobs (workers, output)
        are excluded so report bytes do not depend on them."""
        skip = {"workers", "out", "format"}
        exp = {}
        for name, _, _ in _EXPERIMENT_FIELDS:
            if name in skip:
                continue
            value = getattr(self, name)
            exp[name] = list(value) if isinstance(value, tuple) else value
        model = {
            k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(self.model_params.items())
        }
        return {"experiment": exp, "model": model}

    # -- validation --------------------------------------------------------

    def validate(self):
        """Raise ConfigError on contradictions; return a list of warnings."""
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"estimator must be one of {ESTIMATORS}")
        if self.R < 1 or self.S < 1:
            raise ConfigError("R and S must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not self.p:
            raise ConfigError("at least one polynomial order is required")
        for p in self.p:
            if not 0 <= p <= MAX_POLY_ORDER:
                raise ConfigError(f"polynomial order {p} outside 0..{MAX_POLY_ORDER}")
        if not 0 < self.confidence_level < 1:
            raise ConfigError("confidence level must lie in (0, 1)")
        for tau in self.quantile_levels:
            if not 0 < tau < 1:
                raise ConfigError(f"quantile level {tau} outside (0, 1)")
        if not 0 <= self.failure_threshold <= 1:
            raise ConfigError("failure threshold must lie in [0, 1]")
        if self.sampling not in ("pseudo", "halton"):
            raise ConfigError("sampling must be pseudo or halton")
        if self.format not in ("csv", "json"):
            raise ConfigError("format must be csv or json")
        if self.tune_source not in ("prior_draws", "estimate_centered"):
            raise ConfigError("tune_source must be prior_draws or estimate_centered")
        if self.mean_bandwidth == "tuned" and not self.mean_grid:
            raise ConfigError("mean_bandwidth = tuned requires a mean_grid")
        if self.quantile_bandwidth == "tuned" and not self.quantile_grid:
            raise ConfigError("quantile_bandwidth = tuned requires a quantile_grid")
        if self.rounds not in (1, 2):
            raise ConfigError("rounds must be 1 or 2")
        if self.rounds == 2:
            if not self.round2_scale:
                raise ConfigError("two-round runs require round2_scale")
            if any(s <= 0 for s in self.round2_scale):
                raise ConfigError("round2_scale entries must be positive")
            if self.round1_estimator not in ("regression", "gmm_objective_min"):
                raise ConfigError("round1_estimator must be regression or gmm_objective_min")
            if self.round1_estimator == "gmm_objective_min" and self.estimator != "abc-gmm":
                raise ConfigError("gmm_objective_min centering needs the abc-gmm estimator")
            if self.round1_bandwidth == "tuned":
                raise ConfigError("the round-1 bandwidth must be a concrete rule")
            if self.estimator == "sl-gmm":
                raise ConfigError("two-round runs are not defined for sl-gmm")
        for label in (self.mean_bandwidth, self.quantile_bandwidth):
            if label and label != "tuned":
                BandwidthRule.parse(label)  # raises ValueError on nonsense
        for label in self.mean_grid + self.quantile_grid:
            BandwidthRule.parse(label)

        model = build_model(self.model, self.model_params)
        d = model_regressor_dimension(model, self.estimator)
        k = len(model.parameter_names)
        warnings = []
        for p in self.p:
            if p >= 1 and self.S < math.comb(d + p, p):
                raise ConfigError(
                    f"S = {self.S} is below the basis size {math.comb(d + p, p)} for p = {p}"
                )
            bound = model.n ** (k / (2.0 * (p + 1)))
            if self.S < bound:
                warnings.append(
                    f"S = {self.S} is below n^(k/(2(p+1))) = {bound:.1f} for p = {p}; "
                    "the parametric-rate regime needs many more draws"
                )
        return warnings


def model_regressor_dimension(model, estimator):
    if estimator == "bil":
        if not hasattr(model, "bil_problem"):
            raise ConfigError(f"model {type(model).__name__} has no statistic simulator")
        return len(model.generate_observation(0))
    if not hasattr(model, "gmm_problem"):
        raise ConfigError(f"model {type(model).__name__} has no moment function")
    obs = model.generate_observation(0)
    return model.gmm_problem(obs).moment_dimension


# ---------------------------------------------------------------------------
# report


@dataclass
class MonteCarloReport:
    """Aggregates plus per-replication rows for one experiment."""

    config: dict
    truth: dict
    rows: list
    replications: list
    tuned: dict
    warnings: list
    failures: int
    timings: dict = field(default_factory=dict)

    CSV_COLUMNS = ("parameter", "estimator", "bias", "rmse", "coverage", "level", "n", "S", "h", "p", "R")

    def to_json(self):
        payload = {
            "config": self.config,
            "truth": self.truth,
            "rows": self.rows,
            "replications": self.replications,
            "tuned": self.tuned,
            "warnings": self.warnings,
            "failures": self.failures,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.CSV_COLUMNS)
        for row in self.rows:
            writer.writerow([_csv_cell(row.get(col)) for col in self.CSV_COLUMNS])
        return buf.getvalue()

    def row(self, parameter, estimator):
        for row in self.rows:
            if row["parameter"] == parameter and row["estimator"] == estimator:
                return row
        raise KeyError(f"no aggregate row for ({parameter}, {estimator})")


def _csv_cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6g}"
    return value


def emit_report(report, fmt, path):
    text = report.to_csv() if fmt == "csv" else report.to_json()
    with open(path, "w") as fh:
        fh.write(text)


def report_from_json(text):
    payload = json.loads(text)
    return MonteCarloReport(
        config=payload["config"],
        truth=payload["truth"],
        rows=payload["rows"],
        replications=payload["replications"],
        tuned=payload["tuned"],
        warnings=payload["warnings"],
        failures=payload["failures"],
    )


# ---------------------------------------------------------------------------
# replication engine


def _seed(base, tag, index):
    return int(derive_seeds(base, tag, np.array([index]))[0])


def _build_problem(config, model, observation):
    if config.estimator == "bil":
        return model.bil_problem(observation, m=config.m)
    return model.gmm_problem(observation)


def _make_regressors(config, problem, draws, noise_seed):
    if config.estimator == "bil":
        return bil_regressors(problem, draws)
    return gmm_regressors(problem, draws, m=config.m, noise_seed=noise_seed)


def _fixed_weight_matrix(problem):
    policy = problem.weight_policy
    if policy.kind == "identity":
        return np.eye(problem.moment_dimension)
    if policy.kind == "fixed":
        return policy.matrix
    raise EstimationError("objective centering requires an identity or fixed weight matrix")


def _round1_center(config, model, problem, draws, noise_seed):
    """Coarse first-round estimate used to center the adaptive proposal."""
    if config.round1_estimator == "gmm_objective_min":
        G = problem.moments(draws.draws)
        W = _fixed_weight_matrix(problem)
        objective = np.einsum("ij,jk,ik->i", G, W, G)
        return draws.draws[int(np.argmin(objective))].copy()
    regs = _make_regressors(config, problem, draws, noise_seed)
    kernel = KernelSpec(config.kernel, regs.points.shape[1])
    basis = build_index_set(regs.points.shape[1], config.round1_p)
    rule = BandwidthRule.parse(config.round1_bandwidth)
    center = []
    for name in model.parameter_names:
        summary = estimate(
            regs.sample(name), kernel, rule, basis, confidence_level=None, ridge=config.ridge
        )
        center.append(summary.point_estimate)
    return np.array(center)


def _fit_variants(config, model, regs, rules):
    """All configured polynomial variants for every functional."""
    d = regs.points.shape[1]
    kernel = KernelSpec(config.kernel, d)
    levels = set(config.quantile_levels)
    levels.add(0.5)  # the median anchors interval rescaling
    n = model.n
    m = config.m if config.m is not None else n
    out = {}
    for p in config.p:
        label = _variant_label(p)
        basis = build_index_set(d, p)
        per_functional = {}
        for name in model.parameter_names:
            sample = regs.sample(name)
            summary = estimate(
                sample,
                kernel,
                rules["mean"][(label, name)],
                basis,
                quantile_levels=levels,
                confidence_level=config.confidence_level,
                quantile_bandwidth_rule=rules["quantile"][(label, name)],
                ridge=config.ridge,
            )
            lo, hi = summary.confidence_interval
            if m != n:
                lo, hi = rescale_interval(summary, m, n)
            per_functional[name] = {
                "estimate": summary.point_estimate,
                "lo": lo,
                "hi": hi,
                "quantiles": {str(t): v for t, v in summary.quantiles.items()},
                "h": summary.bandwidth_used,
                "hq": summary.quantile_bandwidth_used,
                "active_count": summary.active_count,
                "effective_weight": summary.effective_weight,
            }
        out[label] = per_functional
    return out


def _point_rows(model, theta):
    return {name: {"estimate": float(theta[j])} for j, name in enumerate(model.parameter_names)}


def _run_replication(task):
    config, rules, r = task
    model = build_model(config.model, config.model_params)
    out = {"replication": r, "failed": False}
    try:
        observation = model.generate_observation(_seed(config.seed, "data", r))
        problem = _build_problem(config, model, observation)
        prior = model.prior()
        results = {}
        if config.estimator == "sl-gmm":
            draws = sample_prior(prior, config.S, _seed(config.seed, "draws", r), method=config.sampling)
            theta = sl_gmm_estimate(problem, draws, m=config.m)
            results["sl"] = _point_rows(model, theta)
        elif config.rounds == 1:
            draws = sample_prior(prior, config.S, _seed(config.seed, "draws", r), method=config.sampling)
            regs = _make_regressors(config, problem, draws, _seed(config.seed, "xi", r))
            out["dropped"] = regs.dropped
            results.update(_fit_variants(config, model, regs, rules))
        else:
            s1 = config.round1_S if config.round1_S is not None else config.S
            draws1 = sample_prior(prior, s1, _seed(config.seed, "draws1", r), method=config.sampling)
            center = _round1_center(config, model, problem, draws1, _seed(config.seed, "xi1", r))
            results["r1"] = _point_rows(model, center)
            scale = config.round2_scale
            if len(scale) == 1:
                scale = scale * len(model.parameter_names)
            proposal = adaptive_proposal(center, scale)
            # draws come from the adapted data-dependent prior, so unit weights
            draws2 = sample_prior(proposal, config.S, _seed(config.seed, "draws2", r))
            regs2 = _make_regressors(config, problem, draws2, _seed(config.seed, "xi2", r))
            out["dropped"] = regs2.dropped
            results.update(_fit_variants(config, model, regs2, rules))
        if config.include_baseline and hasattr(model, "baseline_estimates"):
            for bname, est in sorted(model.baseline_estimates(observation).items()):
                results[bname] = _point_rows(model, est)
        out["results"] = results
    except EstimationError as exc:
        out["failed"] = True
        out["error"] = str(exc)
    return out


def _parallel_map(fn, tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def _estimator_order(config, good_reps):
    order = []
    if config.estimator == "sl-gmm":
        order.append("sl")
    else:
        if config.rounds == 2:
            order.append("r1")
        order.extend(_variant_label(p) for p in config.p)
    seen = set()
    for rep in good_reps:
        seen.update(rep["results"])
    order.extend(sorted(seen.difference(order)))
    return [label for label in order if label in seen or not good_reps]


def _aggregate(config, model, rules, tuned_info, reps, warnings, timings):
    truth = {name: float(v) for name, v in zip(model.parameter_names, model.true_parameters)}
    failures = sum(1 for rep in reps if rep["failed"])
    good = [rep for rep in reps if not rep["failed"]]
    rows = []
    p_by_label = {_variant_label(p): p for p in config.p}
    for label in _estimator_order(config, good):
        present = [rep for rep in good if label in rep["results"]]
        for name in model.parameter_names:
            cells = [rep["results"][label][name] for rep in present]
            if not cells:
                continue
            errors = np.array([c["estimate"] - truth[name] for c in cells])
            covered = [
                (c["lo"] <= truth[name] <= c["hi"]) for c in cells if "lo" in c and c["lo"] is not None
            ]
            hs = [c["h"] for c in cells if c.get("h") is not None]
            rows.append(
                {
                    "parameter": name,
                    "estimator": label,
                    "bias": float(errors.mean()),
                    "rmse": float(np.sqrt((errors**2).mean())),
                    "coverage": (float(np.mean(covered)) if covered else None),
                    "level": config.confidence_level,
                    "n": model.n,
                    "S": config.S,
                    "h": (float(np.mean(hs)) if hs else None),
                    "p": p_by_label.get(label),
                    "R": config.R,
                }
            )
    return MonteCarloReport(
        config=config.echo(),
        truth=truth,
        rows=rows,
        replications=reps,
        tuned=tuned_info,
        warnings=list(warnings),
        failures=failures,
        timings=timings,
    )


# ---------------------------------------------------------------------------
# bandwidth tuning


def _static_rules(config, model):
    mean_rule = BandwidthRule.parse(config.mean_bandwidth)
    q_label = config.quantile_bandwidth or config.mean_bandwidth
    q_rule = BandwidthRule.parse(q_label)
    rules = {"mean": {}, "quantile": {}}
    for p in config.p:
        label = _variant_label(p)
        for name in model.parameter_names:
            rules["mean"][(label, name)] = mean_rule
            rules["quantile"][(label, name)] = q_rule
    return rules


def _tuning_trial(task):
    """One tuning trial: draw a synthetic truth, rebuild the pipeline and
    grade every candidate rule on it."""
    config, theta_t, t = task
    model = build_model(config.model, config.model_params).with_true(theta_t)
    mean_rules = [BandwidthRule.parse(lbl) for lbl in config.mean_grid] or [
        BandwidthRule.parse(config.mean_bandwidth)
    ]
    q_rules = [BandwidthRule.parse(lbl) for lbl in config.quantile_grid] or mean_rules
    seed = _seed(config.seed, "tune", t)
    S = config.tune_S if config.tune_S is not None else config.S
    try:
        observation = model.generate_observation(_seed(seed, "data", 0))
        problem = _build_problem(config, model, observation)
        prior = model.prior()
        if config.rounds == 2:
            s1 = config.round1_S if config.round1_S is not None else S
            draws1 = sample_prior(prior, s1, _seed(seed, "draws1", 0), method=config.sampling)
            center = _round1_center(config, model, problem, draws1, _seed(seed, "xi1", 0))
            scale = config.round2_scale
            if len(scale) == 1:
                scale = scale * len(model.parameter_names)
            draws = sample_prior(adaptive_proposal(center, scale), S, _seed(seed, "draws2", 0))
            regs = _make_regressors(config, problem, draws, _seed(seed, "xi2", 0))
        else:
            draws = sample_prior(prior, S, _seed(seed, "draws", 0), method=config.sampling)
            regs = _make_regressors(config, problem, draws, _seed(seed, "xi", 0))
    except EstimationError:
        return None

    d = regs.points.shape[1]
    kernel = KernelSpec(config.kernel, d)
    tail = (1.0 - config.confidence_level) / 2.0
    truth = {name: float(v) for name, v in zip(model.parameter_names, model.true_parameters)}
    sq_err = {}
    covered = {}
    for p in config.p:
        label = _variant_label(p)
        basis = build_index_set(d, p)
        for name in model.parameter_names:
            sample = regs.sample(name)
            for rule in mean_rules:
                key = (label, name, rule.label())
                try:
                    summary = estimate(
                        sample, kernel, rule, basis, confidence_level=None, ridge=config.ridge
                    )
                    sq_err[key] = (summary.point_estimate - truth[name]) ** 2
                except EstimationError:
                    pass
            for rule in q_rules:
                key = (label, name, rule.label())
                try:
                    summary = estimate(
                        sample,
                        kernel,
                        mean_rules[0],
                        basis,
                        quantile_levels=(tail, 1.0 - tail),
                        confidence_level=config.confidence_level,
                        quantile_bandwidth_rule=rule,
                        ridge=config.ridge,
                    )
                    lo, hi = summary.confidence_interval
                    covered[key] = bool(lo <= truth[name] <= hi)
                except EstimationError:
                    pass
    return {"sq_err": sq_err, "covered": covered}


def _tuning_truths(config, model, estimates=None):
    trials = config.tune_trials
    if config.tune_source == "estimate_centered":
        if not estimates:
            raise ConfigError("estimate_centered tuning needs first-round estimates")
        pool = np.asarray(estimates, dtype=float)
        u = sample_prior(
            # uniform picks over the estimate pool, hash-seeded for determinism
            _pick_prior(len(pool)),
            trials,
            _seed(config.seed, "tune-pick", 0),
        ).draws[:, 0]
        idx = np.minimum((u * len(pool)).astype(int), len(pool) - 1)
        return pool[idx]
    return model.prior().sample(trials, _seed(config.seed, "tune-truth", 0))


def _pick_prior(size):
    return PriorSpec.uniform_box([0.0], [float(size)])


def tune_bandwidth(config, truth_source=None, trials=None, estimates=None):
    """Grid-search bandwidth rules: the mean rule minimizes out-of-sample
    squared error, the quantile rule drives interval coverage toward the
    nominal level.  Winners are chosen per functional and variant."""
    if truth_source is not None:
        config = replace(config, tune_source=truth_source)
    if trials is not None:
        config = replace(config, tune_trials=trials)
    if config.tune_trials < 1:
        raise ConfigError("tuning needs at least one trial")
    model = build_model(config.model, config.model_params)
    if not hasattr(model, "with_true"):
        raise ConfigError(f"model {config.model!r} does not support tuning")
    truths = _tuning_truths(config, model, estimates=estimates)
    tasks = [(config, truths[t], t) for t in range(config.tune_trials)]
    outcomes = [o for o in _parallel_map(_tuning_trial, tasks, config.workers) if o is not None]
    if not outcomes:
        raise EstimationError("every tuning trial failed")

    mean_labels = list(config.mean_grid) or [config.mean_bandwidth]
    q_labels = list(config.quantile_grid) or mean_labels
    min_success = max(1, len(outcomes) // 2)
    rules = {"mean": {}, "quantile": {}}
    info = {"trials": len(outcomes), "mean": {}, "quantile": {}}
    for p in config.p:
        label = _variant_label(p)
        for name in model.parameter_names:
            best, best_score, scores = None, None, {}
            for lbl in mean_labels:
                vals = [
                    o["sq_err"][(label, name, lbl)]
                    for o in outcomes
                    if (label, name, lbl) in o["sq_err"]
                ]
                if len(vals) < min_success:
                    continue
                score = float(np.mean(vals))
                scores[lbl] = score
                if best_score is None or score < best_score:
                    best, best_score = lbl, score
            if best is None:
                raise EstimationError(f"all mean bandwidth candidates failed for {label}/{name}")
            rules["mean"][(label, name)] = BandwidthRule.parse(best)
            info["mean"][f"{label}/{name}"] = {"rule": best, "scores": scores}

            best, best_score, covs = None, None, {}
            for lbl in q_labels:
                vals = [
                    o["covered"][(label, name, lbl)]
                    for o in outcomes
                    if (label, name, lbl) in o["covered"]
                ]
                if len(vals) < min_success:
                    continue
                cov = float(np.mean(vals))
                covs[lbl] = cov
                score = abs(cov - config.confidence_level)
                if best_score is None or score < best_score:
                    best, best_score = lbl, score
            if best is None:
                raise EstimationError(f"all quantile bandwidth candidates failed for {label}/{name}")
            rules["quantile"][(label, name)] = BandwidthRule.parse(best)
            info["quantile"][f"{label}/{name}"] = {"rule": best, "coverage": covs}
    return rules, info


def _resolve_rules(config, model):
    timings = {}
    tuned_info = {}
    if config.mean_bandwidth != "tuned" and config.quantile_bandwidth != "tuned":
        return _static_rules(config, model), tuned_info, timings
    t0 = time.perf_counter()
    tuned, info = tune_bandwidth(config)
    timings["tune_seconds"] = time.perf_counter() - t0
    rules = _static_rules(config, model) if (config.mean_bandwidth != "tuned" or config.quantile_bandwidth != "tuned") else tuned
    if config.mean_bandwidth == "tuned":
        rules["mean"] = tuned["mean"]
    if config.quantile_bandwidth == "tuned":
        rules["quantile"] = tuned["quantile"]
    tuned_info = {
        "mean": {k: v["rule"] for k, v in info["mean"].items()},
        "quantile": {k: v["rule"] for k, v in info["quantile"].items()},
        "detail": info,
    }
    return rules, tuned_info, timings


# ---------------------------------------------------------------------------
# experiment drivers


def run_experiment(config):
    """Run the configured replication study and aggregate bias, RMSE and
    confidence-interval coverage per functional and estimator variant."""
    warnings = config.validate()
    model = build_model(config.model, config.model_params)
    rules, tuned_info, timings = _resolve_rules(config, model)
    t0 = time.perf_counter()
    tasks = [(config, rules, r) for r in range(config.R)]
    reps = _parallel_map(_run_replication, tasks, config.workers)
    reps.sort(key=lambda rep: rep["replication"])
    timings["replications_seconds"] = time.perf_counter() - t0
    return _aggregate(config, model, rules, tuned_info, reps, warnings, timings)


def run_two_round(config):
    """Two-round estimation: a coarse first round centers an adaptive normal
    proposal whose draws feed the final fits.  The report carries the
    first-round center as its own estimator row."""
    if config.rounds != 2:
        config = replace(config, rounds=2)
    return run_experiment(config)
