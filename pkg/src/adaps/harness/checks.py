"""Acceptance criteria 1-10 as callable checks.

Each check builds its own instances from fixed seeds, compares the library
against an oracle and returns a ``CheckResult``. Both ``adaps oracle-check``
and the acceptance test module call these functions.
"""

from __future__ import annotations

import dataclasses
import filecmp
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import oracle
from ..guidance import GuidanceSpec, adaptive_xi, guidance_step, map_estimate, surrogate_dps, surrogate_map_residual
from ..nonlinear import GNConfig, LinearAsNonlinear, NonlinearOperator, SquaredBlurOperator, TanhOperator
from ..nonlinear import nl_map_estimate
from ..operators import (
    CirculantOperator,
    DenseOperator,
    SubsampledCirculantOperator,
    bicubic_kernel,
    cg_gram_solve,
    gaussian_kernel,
    motion_kernel,
    synthesize,
)
from ..priors import GaussianPrior, GMMPrior
from ..sampler import SamplerConfig, ddim_step, sample
from ..schedule import make_linear_schedule, respace, step_coeffs
from ..priors import DenoiseOutput
from .config import default_config
from .experiment import ABLATION_COLUMNS, SWEPT_COLUMNS, build_task, oracle_marginals, run_ablation, run_task

CHAINS = 2000


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] criterion {self.number:2d} {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(number, name, fn):
    start = time.perf_counter()
    passed, detail = fn()
    return CheckResult(number, name, bool(passed), detail, time.perf_counter() - start)


# -- 1 -----------------------------------------------------------------------


def linear_gaussian_instance(seed=1, n=16, m=8, sigma_y=0.1):
    rng = np.random.default_rng(seed)
    var0 = rng.uniform(0.5, 2.0, n)
    mu0 = rng.normal(0.0, np.sqrt(0.5), n)
    A = rng.standard_normal((m, n)) / np.sqrt(n)
    x = mu0 + np.sqrt(var0) * rng.standard_normal(n)
    prior = GaussianPrior(mu0, var0)
    op = DenseOperator(A)
    meas = synthesize(op, x, sigma_y, seed + 1)
    return prior, op, meas


def check_posterior_exactness(chains=CHAINS):
    """Gaussian prior, dense 8x16 operator: sample moments against the conjugate posterior."""

    def run():
        prior, op, meas = linear_gaussian_instance()
        cfg = SamplerConfig(steps=100, eta=1.0, guidance=GuidanceSpec(), rng_seed=0, chains=chains)
        x, _ = sample(cfg, make_linear_schedule(), prior, op, meas)
        post = oracle.gaussian_posterior(prior.mean, prior.var, op.matrix, meas.y, meas.sigma_y)
        se = x.std(axis=0, ddof=1) / np.sqrt(chains)
        z = np.abs(x.mean(axis=0) - post.mean) / se
        cov = np.cov(x, rowvar=False)
        rel = np.linalg.norm(cov - post.cov) / np.linalg.norm(post.cov)
        ok = z.max() <= 3.0 and rel <= 0.10
        return ok, f"max |mean z| {z.max():.2f} (<= 3), cov rel Frobenius {rel:.3f} (<= 0.10)"

    return _timed(1, "linear-Gaussian posterior exactness", run)


# -- 2 -----------------------------------------------------------------------


def check_map_identities(instances=100):
    def run():
        rng = np.random.default_rng(2)
        err_a = err_b = 0.0
        for _ in range(instances):
            n = int(rng.integers(2, 12))
            m = int(rng.integers(1, 12))
            A = rng.standard_normal((m, n))
            op = DenseOperator(A)
            y = rng.standard_normal(m)
            x0 = rng.standard_normal(n)
            sigma_y = rng.uniform(0.01, 1.0)
            abar = rng.uniform(0.01, 0.99)
            r_sq = 1.0 - abar
            lam = sigma_y**2 / r_sq
            x_star = map_estimate(op, y, sigma_y, x0, r_sq)
            primal = np.linalg.solve(A.T @ A + lam * np.eye(n), A.T @ y + lam * x0)
            err_a = max(err_a, np.abs(x_star - primal).max() / max(1.0, np.abs(primal).max()))
            d = surrogate_map_residual(op, y, sigma_y, x0, abar)
            ref = np.sqrt(abar) / np.sqrt(r_sq) * (x0 - primal)
            err_b = max(err_b, np.abs(d - ref).max() / max(1.0, np.abs(ref).max()))
        err_c = 0.0
        for shape, kern in (
            ((64,), gaussian_kernel(5, 2.0).sum(axis=0)),
            ((16, 16), gaussian_kernel(5, 10.0)),
            ((16, 16), motion_kernel(9, 7.0, 30.0)),
            ((12, 12), rng.standard_normal((3, 3))),
        ):
            circ = CirculantOperator(kern, shape)
            dense = DenseOperator(circ.to_dense())
            for lam in (1e-2, 1.0):
                v = rng.standard_normal((3, circ.out_dim))
                a = circ.gram_solve(lam, v)
                b = dense.gram_solve(lam, v)
                c = cg_gram_solve(circ, lam, v, maxiter=2000, rtol=1e-13)
                scale = max(1.0, np.abs(b).max())
                err_c = max(err_c, np.abs(a - b).max() / scale, np.abs(c - b).max() / scale)
        blur = CirculantOperator(bicubic_kernel(4, 2), (16, 16), origin=(7, 7))
        for gram in ("fft", "cg"):
            sr = SubsampledCirculantOperator(blur, 4, gram=gram)
            dense = DenseOperator(sr.to_dense())
            v = rng.standard_normal((2, sr.out_dim))
            b = dense.gram_solve(0.05, v)
            err_c = max(err_c, np.abs(sr.gram_solve(0.05, v) - b).max() / max(1.0, np.abs(b).max()))
        ok = err_a <= 1e-10 and err_b <= 1e-10 and err_c <= 1e-8
        return ok, f"push-through {err_a:.1e}, d_t {err_b:.1e} (<= 1e-10); FFT/SVD/CG {err_c:.1e} (<= 1e-8)"

    return _timed(2, "closed-form MAP identities", run)


# -- 3 -----------------------------------------------------------------------


def check_xi_properties(pairs=1000):
    def run():
        rng = np.random.default_rng(3)
        worst_witness = np.inf
        violations = 0
        worst_scale = 0.0
        for _ in range(pairs):
            n = int(rng.integers(1, 20))
            d = rng.standard_normal(n) * rng.uniform(0.1, 10)
            g = rng.standard_normal(n) * rng.uniform(0.1, 10)
            xi = float(adaptive_xi(d, g))
            # xi/2 minimizes |d - c g|^2; any perturbation must not lower it
            base = np.sum((d - 0.5 * xi * g) ** 2)
            for delta in rng.normal(0, 1, 4) * 10.0 ** rng.integers(-6, 1, 4):
                gap = np.sum((d - (0.5 * xi + delta) * g) ** 2) - base
                worst_witness = min(worst_witness, gap)
                violations += int(gap < -1e-12 * max(1.0, base))
            c = 10.0 ** rng.uniform(-3, 3)
            u1 = xi * g
            u2 = adaptive_xi(d, c * g) * (c * g)
            worst_scale = max(worst_scale, np.abs(u1 - u2).max() / max(1.0, np.abs(u1).max()))
        g = rng.standard_normal(7)
        exact_two = float(adaptive_xi(g, g))
        orth = np.array([1.0, 0.0, 0.0])
        zero_orth = float(adaptive_xi(np.array([0.0, 2.0, -1.0]), orth))
        zero_g = float(adaptive_xi(g, np.zeros(7)))
        ok = violations == 0 and worst_scale <= 1e-12 and abs(exact_two - 2.0) <= 1e-15
        ok = ok and zero_orth == 0.0 and zero_g == 0.0
        return ok, (
            f"convexity witness violations {violations} (min gap {worst_witness:.1e}), rescaling {worst_scale:.1e}, "
            f"xi(d=g) {exact_two!r}, xi(orth) {zero_orth}, xi(g=0) {zero_g}"
        )

    return _timed(3, "xi optimality and invariances", run)


# -- 4 -----------------------------------------------------------------------


def _ddim_reference(x_t, eps, abar, abar_prev, sigma, noise):
    x0 = (x_t - np.sqrt(1 - abar) * eps) / np.sqrt(abar)
    return np.sqrt(abar_prev) * x0 + np.sqrt(max(1 - abar_prev - sigma**2, 0.0)) * eps + sigma * noise


def check_ddim_equivalence(chains=CHAINS):
    def run():
        rng = np.random.default_rng(4)
        full = make_linear_schedule()
        err = 0.0
        for sched in (full, respace(full, 100), respace(full, 37)):
            for eta in (0.0, 0.5, 1.0):
                for pos in rng.choice(sched.steps, size=min(sched.steps, 40), replace=False):
                    c = step_coeffs(sched, int(pos), eta)
                    x = rng.standard_normal((5, 6))
                    eps = rng.standard_normal((5, 6))
                    z = rng.standard_normal((5, 6))
                    den = DenoiseOutput(eps, (x - np.sqrt(1 - c.abar) * eps) / np.sqrt(c.abar))
                    a = ddim_step(x, c, den, z)
                    b = _ddim_reference(x, eps, c.abar, c.abar_prev, c.sigma, z)
                    err = max(err, np.abs(a - b).max() / max(1.0, np.abs(b).max()))
        n = 4
        cfg = SamplerConfig(steps=100, eta=1.0, guidance=None, rng_seed=40, chains=chains)
        x, _ = sample(cfg, full, GaussianPrior(np.zeros(n), 1.0))
        z_mean = np.abs(x.mean(axis=0)) / (x.std(axis=0, ddof=1) / np.sqrt(chains))
        z_var = np.abs(x.var(axis=0, ddof=1) - 1.0) / np.sqrt(2.0 / (chains - 1))
        ok = err <= 1e-10 and z_mean.max() <= 3 and z_var.max() <= 3
        return ok, f"form gap {err:.1e} (<= 1e-10); prior mean z {z_mean.max():.2f}, var z {z_var.max():.2f} (<= 3)"

    return _timed(4, "DDIM form equivalence", run)


# -- 5-7: gmm-1d ------------------------------------------------------------


def gmm1d_runs(variants, chains=CHAINS, seed=0):
    """W1 / posterior std and raw samples for config variants of the gmm-1d task."""
    base = default_config("gmm-1d", chains=chains, seed=seed)
    task = build_task(base)
    marg = oracle_marginals(task)[0]
    out = []
    for changes in variants:
        cfg = base.replace(**changes)
        rec, samples, _ = run_task(cfg, dataclasses.replace(task, config=cfg))
        out.append((rec.w1_over_std, samples[:, 0]))
    return out, marg


def check_steps_scaling(chains=CHAINS):
    def run():
        (w25, _), (w400, _) = gmm1d_runs([{"steps": 25}, {"steps": 400}], chains)[0]
        ok = w400 <= w25 + 0.02
        return ok, f"W1/std N=400 {w400:.4f} <= N=25 {w25:.4f} + 0.02"

    return _timed(5, "steps-scaling direction", run)


def paired_w1_se(a, b, marg, reps=200, seed=6):
    """Bootstrap standard error of ``W1(a) - W1(b)`` with chains resampled jointly."""
    rng = np.random.default_rng(seed)
    sd = marg.std()
    diffs = []
    for _ in range(reps):
        idx = rng.integers(0, a.size, a.size)
        diffs.append(oracle.wasserstein1_1d(a[idx], marg) - oracle.wasserstein1_1d(b[idx], marg))
    return float(np.std(diffs, ddof=1)) / sd


def check_adaptive_xi(chains=CHAINS):
    def run():
        spec = GuidanceSpec()
        runs, marg = gmm1d_runs(
            [
                {"guidance": spec},
                {"guidance": dataclasses.replace(spec, xi_mode="fixed", xi_value=1.0)},
                {"guidance": dataclasses.replace(spec, xi_mode="fixed", xi_value=2.0)},
            ],
            chains,
        )
        (wa, sa), (w1, s1), (w2, s2) = runs
        se1 = paired_w1_se(sa, s1, marg)
        se2 = paired_w1_se(sa, s2, marg)
        ok = wa <= w1 + se1 and wa <= w2 + se2
        return ok, (
            f"W1/std adaptive {wa:.4f}, fixed 1 {w1:.4f} (SE {se1:.4f}), fixed 2 {w2:.4f} (SE {se2:.4f})"
        )

    return _timed(6, "adaptive-xi superiority direction", run)


ETAS = (0.0, 0.25, 0.5, 0.75, 1.0)


def check_eta_robustness(chains=CHAINS):
    def run():
        adaps = GuidanceSpec()
        pgdm = GuidanceSpec(g_kind="pgdm", d_kind="pgdm", xi_mode="fixed", xi_value=1.0, normalize_g=False)
        wa = [w for w, _ in gmm1d_runs([{"eta": e, "guidance": adaps} for e in ETAS], chains)[0]]
        wp = [w for w, _ in gmm1d_runs([{"eta": e, "guidance": pgdm} for e in ETAS], chains)[0]]
        sa = max(wa) - min(wa)
        sp = max(wp) - min(wp)
        return sa <= sp, f"W1/std spread AdaPS {sa:.4f} <= fixed-xi PiGDM-style {sp:.4f}"

    return _timed(7, "eta-robustness direction", run)


# -- 8 -----------------------------------------------------------------------


def _fd_jacobian(f, x, h=1e-6):
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        cols.append((f(x + e) - f(x - e)) / (2 * h))
    return np.stack(cols, axis=-1)


def check_gradients(probes=100):
    def run():
        rng = np.random.default_rng(8)
        err_vjp = err_dps = 0.0
        for _ in range(probes):
            n = int(rng.integers(1, 9))
            K = int(rng.integers(1, 4))
            w = rng.uniform(0.2, 1.0, K)
            prior = GMMPrior(w / w.sum(), rng.normal(0, 1.5, (K, n)), rng.uniform(0.1, 1.0, K))
            abar = rng.uniform(0.05, 0.95)
            x = rng.standard_normal(n)
            v = rng.standard_normal(n)
            J = _fd_jacobian(lambda z: prior.eps_theta(z, abar).x0_hat, x)
            ref = J.T @ v
            got = prior.x0_vjp(x, abar, v)
            err_vjp = max(err_vjp, np.abs(got - ref).max() / max(1.0, np.abs(ref).max()))
            m = int(rng.integers(1, 6))
            op = DenseOperator(rng.standard_normal((m, n)))
            y = rng.standard_normal(m)

            def data_term(z):
                return np.array([0.5 * np.sum((op.apply(prior.eps_theta(z, abar).x0_hat) - y) ** 2)])

            grad = _fd_jacobian(data_term, x)[0]
            dps = surrogate_dps(prior, op, y, 0.1, x, abar) / abar
            err_dps = max(err_dps, np.abs(dps - grad).max() / max(1.0, np.abs(grad).max()))
        ok = err_vjp <= 1e-4 and err_dps <= 1e-4
        return ok, f"GMM vjp {err_vjp:.1e}, DPS {err_dps:.1e} (<= 1e-4)"

    return _timed(8, "gradient checks", run)


# -- 9 -----------------------------------------------------------------------


def check_gauss_newton(instances=100):
    def run():
        rng = np.random.default_rng(9)
        err_lin = 0.0
        slow = 0
        for _ in range(20):
            n, m = int(rng.integers(2, 10)), int(rng.integers(1, 10))
            lin = DenseOperator(rng.standard_normal((m, n)) / np.sqrt(n))
            y = rng.standard_normal(m)
            x0 = rng.standard_normal(n)
            sigma_y, r_sq = rng.uniform(0.1, 1.0), rng.uniform(0.05, 1.0)
            got = nl_map_estimate(LinearAsNonlinear(lin), y, sigma_y, x0, r_sq, GNConfig(iterations=50))
            ref = map_estimate(lin, y, sigma_y, x0, r_sq)
            rel = np.linalg.norm(got - ref) / max(np.linalg.norm(ref), 1e-12)
            err_lin = max(err_lin, rel)
            slow += int(rel > 1e-4)
        increases = 0
        for i in range(instances):
            n = 16
            if i % 2:
                op = TanhOperator(n, a=rng.uniform(-0.3, 2.0), b=rng.uniform(0.2, 3.0))
            else:
                op = SquaredBlurOperator(CirculantOperator(gaussian_kernel(3, 1.0).sum(axis=0), (n,)))
            x_true = rng.standard_normal(n)
            sigma_y = rng.uniform(0.01, 0.5)
            y = op.forward(x_true) + sigma_y * rng.standard_normal(n)
            res = nl_map_estimate(op, y, sigma_y, rng.standard_normal((4, n)), rng.uniform(0.01, 1.0),
                                  GNConfig(iterations=10), return_result=True)
            increases += int(np.any(np.diff(res.objective, axis=0) > 0))
        sq = NonlinearOperator(lambda x: x**2, lambda x, v: 2 * x * v, 1, 1)
        y, sigma_y, x0, r_sq = np.array([4.0]), 0.1, np.array([1.9]), 1.0
        got = nl_map_estimate(sq, y, sigma_y, x0, r_sq, GNConfig(iterations=50))[0]
        grid = np.linspace(-3, 3, 600001)
        phi = (grid**2 - y[0]) ** 2 / (2 * sigma_y**2) + (grid - x0[0]) ** 2 / (2 * r_sq)
        err_sq = abs(got - grid[np.argmin(phi)])
        ok = err_lin <= 1e-4 and increases == 0 and err_sq <= 1e-3
        return ok, f"linear worst rel {err_lin:.1e} (<= 1e-4, {slow}/20 above), monotone violations {increases}, x^2 vs grid {err_sq:.1e}"

    return _timed(9, "nonlinear Gauss-Newton", run)


# -- 10 ----------------------------------------------------------------------


def check_harness(run_oracle_check=True, budget=600.0):
    def run():
        notes = []
        ok = True
        with tempfile.TemporaryDirectory() as tmp:
            from .experiment import run_experiment

            cfg = default_config("gmm-1d", chains=500, seed=11)
            run_experiment(cfg, out=Path(tmp) / "a")
            run_experiment(cfg, out=Path(tmp) / "b")
            same = filecmp.cmp(Path(tmp) / "a" / "metrics.json", Path(tmp) / "b" / "metrics.json", shallow=False)
            ok &= same
            notes.append(f"metrics.json identical: {same}")
            diff_cols = set()
            for axis, values in (("xi_mode", ["adaptive", "fixed:1", "fixed:2"]), ("steps", ["25", "50"])):
                rows = run_ablation(cfg, axis, values, out=Path(tmp) / axis)
                config_cols = [c for c in ABLATION_COLUMNS[:11] if c not in ("value",) + SWEPT_COLUMNS[axis]]
                for c in config_cols:
                    if len({str(r[c]) for r in rows}) > 1:
                        diff_cols.add(c)
            ok &= not diff_cols
            notes.append(f"non-swept config columns varying: {sorted(diff_cols) or 'none'}")
        if run_oracle_check:
            start = time.perf_counter()
            proc = subprocess.run(
                [sys.executable, "-m", "adaps.harness.cli", "oracle-check"], capture_output=True, text=True
            )
            took = time.perf_counter() - start
            ok &= proc.returncode == 0 and took < budget
            notes.append(f"oracle-check exit {proc.returncode} in {took:.0f}s (< {budget:.0f}s)")
        return ok, "; ".join(notes)

    return _timed(10, "determinism and harness", run)


CHECKS = {
    1: check_posterior_exactness,
    2: check_map_identities,
    3: check_xi_properties,
    4: check_ddim_equivalence,
    5: check_steps_scaling,
    6: check_adaptive_xi,
    7: check_eta_robustness,
    8: check_gradients,
    9: check_gauss_newton,
    10: check_harness,
}


def run_checks(numbers=range(1, 10), stream=None):
    results = []
    for k in numbers:
        res = CHECKS[k]()
        results.append(res)
        if stream is not None:
            print(res.line(), file=stream, flush=True)
    return results
