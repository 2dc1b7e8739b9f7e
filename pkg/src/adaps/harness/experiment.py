"""Task construction, single runs and paired-seed ablations."""

from __future__ import annotations

import csv
import dataclasses
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import oracle
from ..errors import AdapsError, ConfigurationError
from ..guidance import GuidanceSpec
from ..nonlinear import NonlinearOperator, make_nonlinear_operator
from ..operators import Measurement, make_operator, synthesize
from ..priors import GaussianPrior, GMMPrior, make_prior
from ..sampler import SamplerConfig, sample
from ..schedule import make_linear_schedule
from . import io
from .config import ExperimentConfig, to_ini
from .metrics import MetricsRecord, capped, psnr

log = logging.getLogger("adaps.harness")

AXES = ("steps", "eta", "sigma_y", "xi_mode", "gd_pairing")
ORACLE_MAX_DIM = 64
PSNR_PEAK = 2.0  # width of the [-1, 1] signal range


@dataclass
class Task:
    config: ExperimentConfig
    prior: object
    op: object
    measurement: Measurement
    x_true: np.ndarray
    image_shape: tuple | None = None


def _floats(s):
    return [float(v) for v in str(s).replace(";", ",").split(",") if v.strip()]


def _matrix(s):
    rows = [_floats(r) for r in str(s).split(";") if r.strip()]
    if len({len(r) for r in rows}) != 1:
        raise ConfigurationError(f"ragged matrix {s!r}")
    return np.array(rows)


def _shape(s):
    return tuple(int(v) for v in str(s).split(","))


def _build_prior(params: dict, dim_hint: int | None):
    p = dict(params)
    kind = p.pop("kind", None)
    try:
        if kind == "gaussian":
            dim = int(p.get("dim", dim_hint or 0))
            mean = np.broadcast_to(np.array(_floats(p.get("mean", "0"))), (dim,)) if dim else None
            var = np.broadcast_to(np.array(_floats(p.get("var", "1"))), (dim,))
            return make_prior("gaussian", mean=mean, var=var)
        if kind == "gmm":
            return make_prior(
                "gmm",
                weights=_floats(p["weights"]),
                means=_matrix(p["means"]),
                variances=_floats(p["variances"]),
            )
        if kind in ("blackbox", "blackbox-adapter"):
            return make_prior(kind, name=p["name"], dim=int(p["dim"]))
    except KeyError as exc:
        raise ConfigurationError(f"prior {kind!r} requires parameter {exc.args[0]!r}") from exc
    except ValueError as exc:
        raise ConfigurationError(f"prior: {exc}") from exc
    raise ConfigurationError(f"unknown prior kind {kind!r}")


def _build_operator(params: dict, n: int):
    p = dict(params)
    kind = p.pop("kind", None)
    if kind == "identity":
        return make_operator("identity", n=int(p.get("n", n)))
    if kind == "dense":
        if "matrix_file" in p:
            return make_operator("dense", matrix_file=p["matrix_file"])
        return make_operator("dense", matrix=_matrix(p["matrix"]))
    if kind == "random-dense":
        rng = np.random.default_rng(int(p.get("seed", 0)))
        m = int(p["rows"])
        return make_operator("dense", matrix=rng.standard_normal((m, n)) / np.sqrt(n))
    kw = {}
    for key, value in p.items():
        if key == "shape":
            kw[key] = _shape(value)
        elif key in ("size", "factor"):
            kw[key] = int(value)
        elif key in ("std", "length", "angle"):
            kw[key] = float(value)
        else:
            kw[key] = value
    return make_operator(kind, **kw)


def build_task(cfg: ExperimentConfig) -> Task:
    """Prior, operator, ground truth and measurement for a config.

    The ground truth is drawn from the prior with seed ``[seed, 1]`` and the
    measurement noise with ``[seed, 2]``; chains use ``seed + chain``.
    """
    shape = _shape(cfg.operator["shape"]) if "shape" in cfg.operator else None
    dim_hint = int(np.prod(shape)) if shape else None
    prior = _build_prior(cfg.prior, dim_hint)
    if shape is not None and prior.dim != dim_hint:
        raise ConfigurationError(f"prior dimension {prior.dim} does not match image shape {shape}")
    op = _build_operator(cfg.operator, prior.dim)
    if op.in_dim != prior.dim:
        raise ConfigurationError(f"operator input dimension {op.in_dim} != prior dimension {prior.dim}")
    if cfg.nonlinear is not None:
        nl = dict(cfg.nonlinear)
        kind = nl.pop("kind")
        if kind == "squared-blur":
            nl.setdefault("shape", cfg.operator.get("shape", str(prior.dim)))
            nl["shape"] = _shape(nl["shape"])
        else:
            nl.setdefault("n", prior.dim)
        op = make_nonlinear_operator(kind, **nl)
    x_true = _draw_prior(prior, np.random.default_rng([cfg.seed, 1]))
    sigma = cfg.effective_sigma_y
    if isinstance(op, NonlinearOperator):
        clean = op.forward(x_true)
        noise = np.random.default_rng([cfg.seed, 2]).standard_normal(clean.shape)
        meas = Measurement(clean + sigma * noise if sigma > 0 else clean, sigma)
    else:
        meas = synthesize(op, x_true, sigma, [cfg.seed, 2])
    image_shape = shape if cfg.is_image else None
    return Task(cfg, prior, op, meas, x_true, image_shape)


def _draw_prior(prior, rng):
    if isinstance(prior, GaussianPrior):
        return prior.mean + np.sqrt(prior.var) * rng.standard_normal(prior.dim)
    if isinstance(prior, GMMPrior):
        k = rng.choice(prior.weights.size, p=prior.weights)
        return prior.means[k] + np.sqrt(prior.variances[k]) * rng.standard_normal(prior.dim)
    raise ConfigurationError("ground truth needs a prior that can be sampled")


def _gaussian_marginal(mean, sd):
    nodes = np.linspace(mean - 10 * sd, mean + 10 * sd, 4097)
    w = np.exp(-0.5 * ((nodes - mean) / sd) ** 2)
    return oracle.QuadraturePosterior((nodes,), w / w.sum())


def oracle_marginals(task: Task):
    """1-D marginals of the exact posterior, or ``None`` when there is no oracle."""
    prior, op, meas = task.prior, task.op, task.measurement
    if isinstance(op, NonlinearOperator) or meas.sigma_y <= 0:
        return None
    if isinstance(prior, GMMPrior) and prior.dim <= 2:
        post = oracle.quadrature_posterior(prior, op.to_dense(), meas.y, meas.sigma_y)
        return [post.marginal(i) for i in range(prior.dim)]
    if isinstance(prior, GaussianPrior) and prior.dim <= ORACLE_MAX_DIM:
        post = oracle.gaussian_posterior(prior.mean, prior.var, op.to_dense(), meas.y, meas.sigma_y)
        sd = np.sqrt(np.diag(post.cov))
        return [_gaussian_marginal(m, s) for m, s in zip(post.mean, sd)]
    return None


def w1_metrics(samples, marginals):
    """Mean marginal W1 and mean W1 / posterior std."""
    w = np.array([oracle.wasserstein1_1d(samples[:, i], m) for i, m in enumerate(marginals)])
    sd = np.array([m.std() for m in marginals])
    return float(w.mean()), float((w / sd).mean())


def sampler_config(cfg: ExperimentConfig, record=False) -> SamplerConfig:
    return SamplerConfig(
        steps=cfg.steps,
        eta=cfg.eta,
        guidance=cfg.guidance,
        rng_seed=cfg.seed,
        record_trajectory=record,
        chains=cfg.chains,
        clip_x0=cfg.clip_x0,
        jobs=cfg.jobs,
    )


def _evaluate(cfg, task, samples, traj, wall):
    x_true = task.x_true
    peak = PSNR_PEAK
    err = samples - x_true
    mse = float(np.mean(err**2))
    per_chain = [psnr(s, x_true, peak) for s in samples]
    finite = [p for p in per_chain if np.isfinite(p)]
    psnr_avg = float(np.mean(finite)) if len(finite) == len(per_chain) else float("inf")
    post_mean = samples.mean(axis=0)
    op = task.op
    fwd = op.forward if isinstance(op, NonlinearOperator) else op.apply
    meas_mse = float(np.mean((fwd(samples) - task.measurement.y) ** 2))
    marg = oracle_marginals(task)
    w1 = w1n = None
    if marg is not None and samples.shape[0] >= 100:
        w1, w1n = w1_metrics(samples, marg)
    return MetricsRecord(
        task=cfg.task,
        chains=cfg.chains,
        steps=cfg.steps,
        eta=cfg.eta,
        sigma_y=cfg.sigma_y,
        psnr=psnr_avg,
        psnr_mean=psnr(post_mean, x_true, peak),
        mse=mse,
        measurement_mse=meas_mse,
        w1=w1,
        w1_over_std=w1n,
        mean_xi=float(np.mean(traj.xi)),
        mean_alignment=float(np.mean(traj.alignment)),
        wall_time=wall,
    )


def run_task(cfg: ExperimentConfig, task: Task | None = None):
    """Sample and score without touching the filesystem. Returns ``(record, samples, traj)``."""
    task = task or build_task(cfg)
    schedule = make_linear_schedule(cfg.T, cfg.beta_start, cfg.beta_end)
    start = time.perf_counter()
    guided = cfg.guidance is not None
    samples, traj = sample(
        sampler_config(cfg),
        schedule,
        task.prior,
        task.op if guided else None,
        task.measurement if guided else None,
    )
    wall = time.perf_counter() - start
    return _evaluate(cfg, task, samples, traj, wall), samples, traj


def run_experiment(cfg: ExperimentConfig, out=None) -> MetricsRecord:
    """One run; writes artifacts under ``out`` (or ``cfg.out``) when given.

    Layout: ``metrics.json``, ``timing.json``, ``config.ini``,
    ``samples/*.tensor`` (plus ``*.pgm`` for image tasks) and ``traj/*.csv``.
    """
    task = build_task(cfg)
    record, samples, traj = run_task(cfg, task)
    out = out if out is not None else cfg.out
    log.info("%s: psnr %.3f dB, mse %.4g, w1 %s", cfg.task, record.psnr, record.mse, record.w1)
    if out is None:
        return record
    out = Path(out)
    try:
        (out / "samples").mkdir(parents=True, exist_ok=True)
        (out / "traj").mkdir(exist_ok=True)
        io.write_json(out / "metrics.json", record.to_json_dict())
        io.write_json(out / "timing.json", {"wall_time": record.wall_time})
        (out / "config.ini").write_text(to_ini(cfg))
        io.write_tensor(out / "samples" / "samples.tensor", samples)
        io.write_tensor(out / "samples" / "posterior_mean.tensor", samples.mean(axis=0))
        io.write_tensor(out / "samples" / "ground_truth.tensor", task.x_true)
        io.write_tensor(out / "samples" / "measurement.tensor", task.measurement.y)
        if task.image_shape is not None:
            for name, arr in (
                ("ground_truth", task.x_true),
                ("posterior_mean", samples.mean(axis=0)),
                ("sample_0000", samples[0]),
            ):
                io.write_pgm(out / "samples" / f"{name}.pgm", arr.reshape(task.image_shape))
        io.write_trajectory_csv(
            out / "traj" / "mean.csv", traj.t, traj.xi.mean(1), traj.d_norm.mean(1), traj.alignment.mean(1)
        )
        for c in range(min(cfg.traj_chains, cfg.chains)):
            io.write_trajectory_csv(
                out / "traj" / f"chain_{c:04d}.csv", traj.t, traj.xi[:, c], traj.d_norm[:, c], traj.alignment[:, c]
            )
    except OSError as exc:
        raise ConfigurationError(f"cannot write outputs to {out}: {exc}") from exc
    return record


# -- ablations ---------------------------------------------------------------


def apply_axis(cfg: ExperimentConfig, axis: str, value: str) -> ExperimentConfig:
    """Config with one axis changed. Seeds are untouched, so rows are paired."""
    value = str(value).strip()
    try:
        if axis == "steps":
            return cfg.replace(steps=int(value))
        if axis == "eta":
            return cfg.replace(eta=float(value))
        if axis == "sigma_y":
            return cfg.replace(sigma_y=float(value))
    except ValueError as exc:
        raise ConfigurationError(f"bad value {value!r} for axis {axis}") from exc
    base = cfg.guidance or GuidanceSpec()
    if axis == "xi_mode":
        name, _, v = value.partition(":")
        changes = {"xi_mode": name}
        if v:
            changes["xi_value"] = float(v)
        elif name == "fixed":
            raise ConfigurationError("fixed mode needs a value, e.g. 'fixed:1'")
        return cfg.replace(guidance=dataclasses.replace(base, **changes))
    if axis == "gd_pairing":
        g_kind, sep, d_kind = value.partition("/")
        if not sep:
            raise ConfigurationError(f"gd_pairing values look like 'pgdm/map', got {value!r}")
        return cfg.replace(guidance=dataclasses.replace(base, g_kind=g_kind, d_kind=d_kind))
    raise ConfigurationError(f"unknown axis {axis!r}; choose from {', '.join(AXES)}")


ABLATION_COLUMNS = (
    "axis",
    "value",
    "task",
    "seed",
    "chains",
    "steps",
    "eta",
    "sigma_y",
    "xi_mode",
    "g_kind",
    "d_kind",
    "psnr",
    "psnr_mean",
    "mse",
    "measurement_mse",
    "w1",
    "w1_over_std",
    "mean_xi",
    "mean_alignment",
)
SWEPT_COLUMNS = {
    "steps": ("steps",),
    "eta": ("eta",),
    "sigma_y": ("sigma_y",),
    "xi_mode": ("xi_mode",),
    "gd_pairing": ("g_kind", "d_kind"),
}


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _row(axis, value, cfg, rec):
    g = cfg.guidance
    return {
        "axis": axis,
        "value": value,
        "task": cfg.task,
        "seed": cfg.seed,
        "chains": cfg.chains,
        "steps": cfg.steps,
        "eta": cfg.eta,
        "sigma_y": cfg.sigma_y,
        "xi_mode": g.label if g else "none",
        "g_kind": g.g_kind if g else "none",
        "d_kind": g.d_kind if g else "none",
        "psnr": capped(rec.psnr),
        "psnr_mean": capped(rec.psnr_mean),
        "mse": rec.mse,
        "measurement_mse": rec.measurement_mse,
        "w1": rec.w1,
        "w1_over_std": rec.w1_over_std,
        "mean_xi": rec.mean_xi,
        "mean_alignment": rec.mean_alignment,
    }


def run_ablation(cfg: ExperimentConfig, axis: str, values, out=None):
    """One row per value, all sharing ``cfg.seed``; returns the list of row dicts.

    With ``out``, ``ablation.csv`` is written row by row, so the rows finished
    before a failure remain on disk.
    """
    if axis not in AXES:
        raise ConfigurationError(f"unknown axis {axis!r}; choose from {', '.join(AXES)}")
    values = [str(v).strip() for v in values if str(v).strip()]
    configs = [apply_axis(cfg, axis, v) for v in values]  # validate everything up front
    out = out if out is not None else cfg.out
    rows = []
    fh = None
    try:
        if out is not None:
            Path(out).mkdir(parents=True, exist_ok=True)
            fh = open(Path(out) / "ablation.csv", "w", newline="")
            writer = csv.writer(fh)
            writer.writerow(ABLATION_COLUMNS)
            fh.flush()
        for v, c in zip(values, configs):
            log.info("ablation %s=%s", axis, v)
            try:
                rec, _, _ = run_task(c)
            except AdapsError:
                log.error("ablation row %s=%s failed; %d rows kept", axis, v, len(rows))
                raise
            row = _row(axis, v, c, rec)
            rows.append(row)
            if fh is not None:
                writer.writerow([_fmt(row[k]) for k in ABLATION_COLUMNS])
                fh.flush()
    finally:
        if fh is not None:
            fh.close()
    return rows
