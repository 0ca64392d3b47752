"""Configuration-driven experiment runner.

Configs are plain `key = value` text with `#` comments and dotted keys for
nested settings.  Every run echoes its fully-resolved configuration and a
summary.txt listing each asserted invariant as PASS/FAIL plus every
report-only quantity; the run fails (exit 1) iff any assertion fails.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import bounds as bounds_mod
from . import fbsde as fbsde_mod
from . import metrics as metrics_mod
from .schedule import (NoiseSchedule, band_check, constant_rate,
                       from_linear_variance, load_schedule)
from .simulate import ScoreModel, ddpm_sample, reverse_sde
from .target import (MixtureTarget, gaussian_target, load_target,
                     symmetric_mixture)

__all__ = ["ExperimentConfig", "ConfigError", "parse_config", "run", "plotdata"]

EXPERIMENTS = ("identity", "fbsde", "pde", "sign-adjudication",
               "tv-pipeline", "schedule-audit", "bounds-sweep")

_COMMON_KEYS = {
    "experiment", "paths", "substeps", "seed", "grid", "out",
    "target.kind", "target.mean", "target.variance", "target.separation",
    "target.weight", "target.file",
    "schedule.kind", "schedule.n", "schedule.v_start", "schedule.v_end",
    "schedule.total", "schedule.file",
}
_EXTRA_KEYS = {
    "schedule-audit": {"gamma1", "gamma2", "expect"},
    "identity": {"bias", "samples", "rel_tol"},
    "fbsde": {"bias", "t_index", "mode"},
    "pde": {"t"},
    "sign-adjudication": {"substeps_list", "t_index", "t"},
    "tv-pipeline": {"biases", "samples"},
    "bounds-sweep": {"n_list", "totals"},
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str
    values: dict = field(default_factory=dict)

    def get(self, key, default=None):
        return self.values.get(key, default)

    def require(self, key):
        if key not in self.values:
            raise ConfigError(f"missing required config key {key!r}")
        return self.values[key]


def _parse_value(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if "," in text:
        return [_parse_value(v) for v in text.split(",")]
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def parse_config(text: str) -> ExperimentConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(val)
    if "experiment" not in values:
        raise ConfigError("config must set 'experiment'")
    experiment = values["experiment"]
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    allowed = _COMMON_KEYS | _EXTRA_KEYS[experiment]
    unknown = sorted(set(values) - allowed)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return ExperimentConfig(experiment=experiment, values=values)


def _build_target(cfg: ExperimentConfig) -> MixtureTarget:
    kind = cfg.get("target.kind", "mixture")
    if kind == "file":
        return load_target(cfg.require("target.file"))
    if kind == "gaussian":
        mean = cfg.get("target.mean", 0.0)
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        var = float(cfg.get("target.variance", 1.0))
        return gaussian_target(mean, np.eye(mean.size) / var)
    if kind == "mixture":
        return symmetric_mixture(separation=float(cfg.get("target.separation", 2.0)),
                                 weight=float(cfg.get("target.weight", 0.5)))
    raise ConfigError(f"unknown target.kind {kind!r}")


def _build_schedule(cfg: ExperimentConfig) -> NoiseSchedule:
    kind = cfg.get("schedule.kind", "linear")
    if kind == "file":
        return load_schedule(cfg.require("schedule.file"))
    n = int(cfg.get("schedule.n", 100))
    if kind == "linear":
        return from_linear_variance(n, float(cfg.get("schedule.v_start", 1e-4)),
                                    float(cfg.get("schedule.v_end", 0.02)))
    if kind == "constant":
        return constant_rate(n, float(cfg.get("schedule.total", 4.0)))
    raise ConfigError(f"unknown schedule.kind {kind!r}")


class Summary:
    """Collects assertions and report lines for summary.txt."""

    def __init__(self):
        self.lines = []
        self.failed = 0

    def check(self, name: str, ok: bool, detail: str = ""):
        tag = "PASS" if ok else "FAIL"
        if not ok:
            self.failed += 1
        self.lines.append(f"{tag} {name}: {detail}" if detail else f"{tag} {name}")

    def report(self, name: str, detail: str):
        self.lines.append(f"REPORT {name}: {detail}")

    def write(self, path):
        with open(path, "w", newline="\n") as fh:
            for line in self.lines:
                fh.write(line + "\n")
            fh.write("RESULT " + ("FAIL" if self.failed else "PASS") + "\n")


def _echo_config(cfg: ExperimentConfig, out_dir: str):
    with open(os.path.join(out_dir, "config_resolved.txt"), "w", newline="\n") as fh:
        for key in sorted(cfg.values):
            val = cfg.values[key]
            if isinstance(val, list):
                val = ",".join(str(v) for v in val)
            fh.write(f"{key} = {val}\n")


def _write_residual_csv(path, rows):
    """Schema: t_index,t,sign,rms,max,paths,substeps."""
    with open(path, "w", newline="\n") as fh:
        fh.write("t_index,t,sign,rms,max,paths,substeps\n")
        for t_index, t, sign, rms, mx, paths, substeps in rows:
            if not (math.isfinite(rms) and math.isfinite(mx)):
                raise ValueError("non-finite residual row")
            fh.write(f"{t_index},{t:.17g},{sign},{rms:.17g},{mx:.17g},"
                     f"{paths},{substeps}\n")


def _common(cfg):
    target = _build_target(cfg)
    schedule = _build_schedule(cfg)
    paths = int(cfg.get("paths", 20000))
    substeps = int(cfg.get("substeps", 2))
    seed = int(cfg.get("seed", 7))
    return target, schedule, paths, substeps, seed


def _run_schedule_audit(cfg, out_dir, summary):
    schedule = _build_schedule(cfg)
    gamma1 = float(cfg.require("gamma1"))
    gamma2 = float(cfg.require("gamma2"))
    expect = cfg.get("expect", "pass")
    result = band_check(schedule, gamma1, gamma2)
    rows = [("band_lower_margin", result.worst_lower_index,
             result.lower_margin, 0.0, schedule.n),
            ("band_upper_margin", result.worst_upper_index,
             result.upper_margin, 0.0, schedule.n),
            ("log_log_log_n", 0, result.l3, 0.0, schedule.n)]
    metrics_mod.write_metric_report(os.path.join(out_dir, "band_margins.csv"), rows)
    summary.report("band", f"ok={result.ok} tightest_slack={result.tightest_slack:.6g}")
    summary.check("band_expectation",
                  result.ok == (expect == "pass"),
                  f"expected {expect}, got {'pass' if result.ok else 'fail'}")


def _run_identity(cfg, out_dir, summary):
    target, schedule, _, _, seed = _common(cfg)
    samples = int(cfg.get("samples", 100000))
    bias = float(cfg.get("bias", 1.0))
    rel_tol = float(cfg.get("rel_tol", 0.02))
    model = ScoreModel(target, schedule, mode="perturbed", bias=bias)
    report = metrics_mod.denoise_identity_check(target, schedule, model,
                                                samples, seed)
    loss = metrics_mod.score_loss(target, schedule, model, samples // 10, seed)
    rows = [("identity_gap", i + 1, report.per_step_gap[i],
             report.per_step_se[i], report.samples)
            for i in range(schedule.n)]
    rows.append(("pooled_gap", 0, report.pooled_gap, report.pooled_gap_se,
                 report.samples))
    rows.append(("pooled_lhs", 0, report.pooled_lhs, 0.0, report.samples))
    metrics_mod.write_metric_report(os.path.join(out_dir, "identity_report.csv"), rows)
    loss_rows = [("score_loss", 0, loss.loss, loss.std_err, loss.samples)]
    metrics_mod.write_metric_report(os.path.join(out_dir, "loss_report.csv"), loss_rows)
    summary.report("identity", f"pooled_rel_gap={report.pooled_relative_gap:.6g} "
                               f"max_step_z={report.max_step_z:.3f}")
    summary.check("identity_pooled", report.pooled_relative_gap <= rel_tol,
                  f"rel_gap={report.pooled_relative_gap:.6g} tol={rel_tol}")
    summary.check("identity_per_step", report.max_step_z <= 3.0,
                  f"max_z={report.max_step_z:.3f}")
    summary.check("loss_matches_bias", abs(loss.loss - bias * bias * target.d)
                  <= 3.0 * loss.std_err + 1e-12,
                  f"loss={loss.loss:.6g} expected={bias * bias * target.d:.6g}")


def _run_fbsde(cfg, out_dir, summary):
    target, schedule, paths, substeps, seed = _common(cfg)
    batch = reverse_sde(target, schedule, substeps, paths, seed)
    t_index = int(cfg.get("t_index", 0))
    both = fbsde_mod.bsde_residual_both(target, schedule, batch, t_index)
    rows = [(t_index, batch.times[t_index], s.drift_sign, s.rms, s.max,
             s.paths, s.substeps) for s in both.values()]
    _write_residual_csv(os.path.join(out_dir, "bsde_residuals.csv"), rows)
    adjudicated = both[fbsde_mod.ADJUDICATED_DRIFT_SIGN]
    opposite = both[-fbsde_mod.ADJUDICATED_DRIFT_SIGN]
    summary.report("bsde", f"rms[{adjudicated.drift_sign:+d}]={adjudicated.rms:.6g} "
                           f"rms[{opposite.drift_sign:+d}]={opposite.rms:.6g}")
    summary.check("bsde_sign_separation", opposite.rms >= 10.0 * adjudicated.rms,
                  f"ratio={opposite.rms / max(adjudicated.rms, 1e-300):.3g}")
    mode = cfg.get("mode")
    y_index = (batch.times.size - 1) // 2
    yast = fbsde_mod.yast_check(target, schedule, batch, y_index, mode=mode)
    yrows = [("yast_rms", y_index, yast.rms, 0.0, yast.paths),
             ("yast_rel_rms", y_index, yast.rms_relative, 0.0, yast.paths),
             ("yast_tower_gap", y_index, yast.tower_gap, yast.tower_se, yast.paths)]
    metrics_mod.write_metric_report(os.path.join(out_dir, "yast_report.csv"), yrows)
    if yast.mode == "gaussian":
        summary.check("yast_rms", yast.rms <= 0.05, f"rms={yast.rms:.6g}")
    else:
        summary.check("yast_rel_rms", yast.rms_relative <= 0.10,
                      f"rel={yast.rms_relative:.6g}")


def _run_pde(cfg, out_dir, summary):
    target, schedule, *_ = _common(cfg)
    t = float(cfg.get("t", 0.3))
    from .target import default_axis

    pts = default_axis(target, int(cfg.get("grid", 2001)))[:, None]
    rows = []
    results = {}
    for sign in (-1, 1):
        mx, rms, umax = fbsde_mod.pde_residual(target, schedule, t, pts, sign)
        results[sign] = (mx, rms, umax)
        rows.append((f"pde_max_sign{sign:+d}", 0, mx, 0.0, pts.shape[0]))
        rows.append((f"pde_rms_sign{sign:+d}", 0, rms, 0.0, pts.shape[0]))
    metrics_mod.write_metric_report(os.path.join(out_dir, "pde_residuals.csv"), rows)
    adj = fbsde_mod.ADJUDICATED_DRIFT_SIGN
    umax = results[adj][2]
    summary.report("pde", f"max[{adj:+d}]={results[adj][0]:.3g} "
                          f"max[{-adj:+d}]={results[-adj][0]:.3g} max|u|={umax:.3g}")
    summary.check("pde_adjudicated", results[adj][0] <= 1e-5 * umax)
    summary.check("pde_opposite", results[-adj][0] >= 1e-2 * umax)


def _run_sign_adjudication(cfg, out_dir, summary):
    target, schedule, paths, _, seed = _common(cfg)
    subs = cfg.get("substeps_list", [128, 256, 512, 1024])
    subs = [int(s) for s in (subs if isinstance(subs, list) else [subs])]
    t_index = int(cfg.get("t_index", 0))
    rows = []
    curves = {-1: [], 1: []}
    for s_count in subs:
        batch = reverse_sde(target, schedule, s_count, paths, seed)
        both = fbsde_mod.bsde_residual_both(target, schedule, batch, t_index)
        for sign in (-1, 1):
            st = both[sign]
            curves[sign].append(st.rms)
            rows.append((t_index, batch.times[t_index], sign, st.rms, st.max,
                         st.paths, st.substeps))
    _write_residual_csv(os.path.join(out_dir, "bsde_residuals.csv"), rows)
    vanish = -1 if curves[-1][-1] < curves[1][-1] else 1
    factors = [curves[vanish][i + 1] / curves[vanish][i]
               for i in range(len(subs) - 1)]
    summary.report("bsde_vanishing_sign", f"{vanish:+d}")
    summary.report("bsde_rms_curve_vanishing",
                   " ".join(f"{v:.6g}" for v in curves[vanish]))
    summary.report("bsde_rms_curve_opposite",
                   " ".join(f"{v:.6g}" for v in curves[-vanish]))
    summary.report("bsde_doubling_factors", " ".join(f"{f:.4f}" for f in factors))
    summary.check("bsde_sign_separation",
                  curves[-vanish][-1] >= 10.0 * curves[vanish][-1],
                  f"ratio={curves[-vanish][-1] / max(curves[vanish][-1], 1e-300):.3g}")
    summary.check("bsde_residual_shrinks", all(f < 1.0 for f in factors),
                  "adjudicated-sign rms decreases under refinement")
    t = float(cfg.get("t", 0.3))
    from .target import default_axis

    pts = default_axis(target, int(cfg.get("grid", 2001)))[:, None]
    pde_rows = []
    pde = {}
    for sign in (-1, 1):
        mx, rms, umax = fbsde_mod.pde_residual(target, schedule, t, pts, sign)
        pde[sign] = (mx, umax)
        pde_rows.append((f"pde_max_sign{sign:+d}", 0, mx, 0.0, pts.shape[0]))
    metrics_mod.write_metric_report(os.path.join(out_dir, "pde_residuals.csv"),
                                    pde_rows)
    pde_vanish = -1 if pde[-1][0] < pde[1][0] else 1
    summary.report("pde_vanishing_sign", f"{pde_vanish:+d}")
    summary.check("signs_agree", vanish == pde_vanish,
                  f"bsde={vanish:+d} pde={pde_vanish:+d}")
    summary.check("adjudicated_is_default",
                  vanish == fbsde_mod.ADJUDICATED_DRIFT_SIGN,
                  "numerically vanishing sign matches the recorded default")


def _run_tv_pipeline(cfg, out_dir, summary):
    target, schedule, paths, substeps, seed = _common(cfg)
    biases = cfg.get("biases", [0.0, 0.25, 0.5, 1.0])
    biases = [float(b) for b in (biases if isinstance(biases, list) else [biases])]
    samples = int(cfg.get("samples", 20000))
    edges = metrics_mod.fd_bin_edges(target, paths)
    reports = []
    tv_rows = []
    tvs, losses = [], []
    for b in biases:
        model = ScoreModel(target, schedule, mode="perturbed", bias=b)
        batch = ddpm_sample(model, schedule, paths, seed, record="terminal")
        keep = ~batch.diverged
        value, se, budget = metrics_mod.tv_hist_vs_density(
            batch.terminal_states[keep], target, edges)
        tvs.append((value, se))
        tv_rows.append((f"ddpm_tv_bias{b:g}", 0, value, se, int(keep.sum())))
        loss = metrics_mod.score_loss(target, schedule, model, samples, seed)
        losses.append(loss)
        tv_rows.append((f"score_loss_bias{b:g}", 0, loss.loss, loss.std_err,
                        loss.samples))
        gb = bounds_mod.girsanov_bound(target, schedule, model, paths,
                                       substeps, seed)
        gb.name = f"girsanov_bias{b:g}"
        reports.append(gb)
        summary.check(f"girsanov_holds_bias{b:g}", gb.verdict == "holds",
                      f"lhs={gb.lhs:.6g} rhs={gb.rhs:.6g}")
    exact_batch = reverse_sde(target, schedule, substeps, paths, seed,
                              record="terminal")
    sb = bounds_mod.schrodinger_bound(target, schedule, exact_batch)
    reports.append(sb)
    summary.check("schrodinger_holds", sb.verdict == "holds",
                  f"lhs={sb.lhs:.6g} rhs={sb.rhs:.6g} budget={sb.bias_budget:.3g}")
    for i in range(len(biases) - 1):
        lo, hi = tvs[i], tvs[i + 1]
        summary.check(f"tv_monotone_{biases[i]:g}_to_{biases[i + 1]:g}",
                      hi[0] >= lo[0] - 3.0 * math.hypot(lo[1], hi[1]),
                      f"tv({biases[i]:g})={lo[0]:.4g} tv({biases[i + 1]:g})={hi[0]:.4g}")
    for b, loss in zip(biases, losses):
        summary.check(f"loss_tracks_bias{b:g}",
                      abs(loss.loss - b * b * target.d)
                      <= 3.0 * loss.std_err + 1e-12,
                      f"L={loss.loss:.6g} b^2={b * b * target.d:.6g}")
    bounds_mod.write_bound_reports(os.path.join(out_dir, "bounds.csv"), reports)
    metrics_mod.write_metric_report(os.path.join(out_dir, "tv_report.csv"), tv_rows)


def _run_bounds_sweep(cfg, out_dir, summary):
    target, _, paths, substeps, seed = _common(cfg)
    n_list = cfg.get("n_list", [10, 50, 100, 500])
    n_list = [int(n) for n in (n_list if isinstance(n_list, list) else [n_list])]
    total = float(cfg.get("schedule.total", 4.0))
    envelope = target.growth_constants()
    edges = metrics_mod.fd_bin_edges(target, paths)
    rows = []
    tvs, composites = [], []
    for n in n_list:
        schedule = constant_rate(n, total)
        model = ScoreModel(target, schedule, mode="exact")
        batch = ddpm_sample(model, schedule, paths, seed, record="terminal")
        keep = ~batch.diverged
        value, se, _ = metrics_mod.tv_hist_vs_density(
            batch.terminal_states[keep], target, edges)
        terms = bounds_mod.tv_bound_terms(schedule, target.d, 0.0, envelope)
        # T3's exp(c2/abar) factor overflows for realistic constants, so the
        # composite is ranked and reported in log space
        log_comp = float(np.logaddexp(math.log(terms["T1"]), terms["log_T3"]))
        tvs.append((value, se))
        composites.append(log_comp)
        rows.append((f"ddpm_tv_n{n}", n, value, se, int(keep.sum())))
        rows.append((f"log_composite_T1_T3_n{n}", n, log_comp, 0.0, paths))
    metrics_mod.write_metric_report(os.path.join(out_dir, "sweep.csv"), rows)
    for i in range(len(n_list) - 1):
        lo, hi = tvs[i], tvs[i + 1]
        summary.check(f"tv_nonincreasing_n{n_list[i]}_to_n{n_list[i + 1]}",
                      hi[0] <= lo[0] + 3.0 * math.hypot(lo[1], hi[1]),
                      f"tv={lo[0]:.4g} -> {hi[0]:.4g}")
    from scipy.stats import spearmanr

    rho = float(spearmanr([-c for c in composites], [-t for t, _ in tvs]).statistic)
    summary.report("rank_correlation_composite_vs_tv", f"{rho:.4f}")
    summary.check("rank_correlation", rho >= 0.9, f"rho={rho:.4f}")
    totals = cfg.get("totals")
    if totals:
        totals = [float(v) for v in (totals if isinstance(totals, list) else [totals])]
        rhs_values = []
        for tot in sorted(totals):
            schedule = constant_rate(max(n_list), tot)
            batch = reverse_sde(target, schedule, substeps, paths, seed,
                                record="terminal")
            rep = bounds_mod.schrodinger_bound(target, schedule, batch)
            rhs_values.append(rep.rhs)
            summary.report(f"schrodinger_rhs_total{tot:g}", f"{rep.rhs:.6g}")
        summary.check("schrodinger_rhs_monotone",
                      all(rhs_values[i + 1] <= rhs_values[i] + 1e-12
                          for i in range(len(rhs_values) - 1)),
                      "rhs nonincreasing in -log alpha_bar_n")


_RUNNERS = {
    "schedule-audit": _run_schedule_audit,
    "identity": _run_identity,
    "fbsde": _run_fbsde,
    "pde": _run_pde,
    "sign-adjudication": _run_sign_adjudication,
    "tv-pipeline": _run_tv_pipeline,
    "bounds-sweep": _run_bounds_sweep,
}


def run(cfg: ExperimentConfig, out_dir: str | None = None) -> int:
    """Execute a parsed config; returns the process exit status (0/1)."""
    out_dir = out_dir or cfg.get("out", "out")
    os.makedirs(out_dir, exist_ok=True)
    cfg.values["out"] = out_dir
    _echo_config(cfg, out_dir)
    summary = Summary()
    _RUNNERS[cfg.experiment](cfg, out_dir, summary)
    summary.write(os.path.join(out_dir, "summary.txt"))
    return 1 if summary.failed else 0


def plotdata(report_path: str, out_path: str) -> None:
    """Convert a report CSV into gnuplot-ready column data.

    Residual reports become (substeps, rms) blocks per sign; metric reports
    become (i_or_t, value, std_err) rows; bound reports become a (row, rhs)
    block and a (row, lhs, std_err) block.  Blocks are blank-line separated.
    """
    with open(report_path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        with open(out_path, "w", newline="\n"):
            pass
        return
    header = lines[0]
    rows = [ln.split(",") for ln in lines[1:]]
    out = []
    if header.startswith("t_index,t,sign,rms"):
        by_sign = {}
        for r in rows:
            by_sign.setdefault(r[2], []).append((float(r[6]), float(r[3])))
        for sign in sorted(by_sign):
            out.append(f"# sign {sign}")
            for sub, rms in sorted(by_sign[sign]):
                if math.isfinite(sub) and math.isfinite(rms):
                    out.append(f"{sub:.17g} {rms:.17g}")
            out.append("")
    elif header.startswith("name,i_or_t,value"):
        for r in rows:
            v, se = float(r[2]), float(r[3])
            if math.isfinite(v) and math.isfinite(se):
                out.append(f"{r[1]} {v:.17g} {se:.17g}")
    elif header.startswith("bound,term,value,empirical"):
        totals = [r for r in rows if r[1] == "total"]
        out.append("# rhs")
        for i, r in enumerate(totals):
            out.append(f"{i} {float(r[2]):.17g}")
        out.append("")
        out.append("# empirical lhs with std err")
        for i, r in enumerate(totals):
            out.append(f"{i} {float(r[3]):.17g} {float(r[4]):.17g}")
    else:
        raise ValueError("unrecognized report schema (missing columns)")
    with open(out_path, "w", newline="\n") as fh:
        for line in out:
            fh.write(line + "\n")
