"""Numerical certification of the theory behind the low-rank scoring rule.

Each check draws randomized instances, computes both sides of a stated
identity/bound, and returns a VerifyReport with the worst observed slack.
Checks never raise on mathematical failure; the report carries the verdict
so a suite run can print every result and exit nonzero at the end.

Covered statements, in check order:
  - expectation: the mean squared embedded distance over the fitting samples
    equals k exactly (no epsilon), for any orthonormal-column W.
  - orthogonal invariance: a square orthogonal W leaves the precision matrix
    unchanged, so k = F reproduces full-precision scoring.
  - error bounds: the semi-orthogonal precision error is sandwiched between
    the eigen-lower (best) and eigen-higher (worst) truncations.
  - flat eigenvalues: for C = alpha*I the squared Frobenius error has the
    closed form (F - k) / alpha^2.
  - svd optimality: no sampled semi-orthogonal W beats the eigen-lower one.
  - interlacing: eigenvalues of W^T C W interlace those of C.
  - spectra experiment: duplicated-feature covariances collapse the rank of
    selection-based embeddings but not of Haar or Gaussian ones.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.linalg import solve_triangular

from . import embedding as emb
from . import linalg
from .errors import IoError, ValidationError

EXPECTATION_TOL = 1e-6
INVARIANCE_TOL = 1e-8
BOUND_SLACK = 1e-9
FLAT_TOL = 1e-9
INTERLACING_TOL = 1e-9
RANK_THRESHOLD = 1e-4  # relative to the largest eigenvalue

SPECTRUM_LOW = 1e-2
SPECTRUM_HIGH = 1e2

SPECTRA_HEADER = ("strategy", "seed", "index", "eigenvalue", "rank")
SPECTRA_STRATEGIES = (
    emb.STRATEGY_SEMI_ORTHOGONAL,
    emb.STRATEGY_RANDOM_SELECTION,
    emb.STRATEGY_GAUSSIAN,
)


@dataclass
class VerifyReport:
    """Outcome of one randomized check."""

    name: str
    instance: dict
    observed: dict
    bounds: dict
    passed: bool
    tolerance: float
    notes: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def random_spd(f: int, seed, spectrum: np.ndarray | None = None) -> np.ndarray:
    """Well-conditioned random SPD matrix Q^T diag(d) Q with Haar Q.

    The default spectrum is log-uniform in [1e-2, 1e2]; callers can pass an
    explicit eigenvalue vector to probe specific conditioning.
    """
    rng = linalg.rng_from_seed(seed)
    if spectrum is None:
        spectrum = np.exp(rng.uniform(np.log(SPECTRUM_LOW), np.log(SPECTRUM_HIGH), f))
    spectrum = np.asarray(spectrum, dtype=np.float64)
    if spectrum.shape != (f,) or (spectrum <= 0).any():
        raise ValidationError(f"spectrum must be {f} positive eigenvalues")
    q = linalg.reduced_qr(rng.standard_normal((f, f)))[0]
    a = (q * spectrum) @ q.T
    return 0.5 * (a + a.T)


def sym_inverse(a: np.ndarray) -> np.ndarray:
    """Symmetric inverse through the eigendecomposition."""
    lam, u = linalg.sym_eig(a)
    return (u / lam) @ u.T


def precision_error(c: np.ndarray, c_inv: np.ndarray, w: np.ndarray) -> tuple[float, float]:
    """Squared (frobenius, spectral) norms of C^-1 - W (W^T C W)^-1 W^T."""
    s = w.T @ c @ w
    s_inv = sym_inverse(0.5 * (s + s.T))
    err = c_inv - w @ s_inv @ w.T
    fro, spec = linalg.matrix_norms(err)
    return fro**2, spec**2


def _draw_w(strategy: str, f: int, k: int, seed, c: np.ndarray | None = None) -> np.ndarray:
    if strategy == emb.STRATEGY_SEMI_ORTHOGONAL:
        return emb.semi_orthogonal(f, k, seed).w
    if strategy == emb.STRATEGY_RANDOM_SELECTION:
        return emb.random_selection(f, k, seed).w
    if strategy == emb.STRATEGY_GAUSSIAN:
        return emb.gaussian_random(f, k, seed).w
    if strategy == emb.STRATEGY_FULL:
        return emb.full_embedding(f).w
    if strategy in emb.EIGEN_STRATEGIES:
        which = "lower" if strategy == emb.STRATEGY_EIGEN_LOWER else "higher"
        return emb.eigen_embedding(c, k, which).w
    raise ValidationError(f"unknown strategy {strategy!r}")


def check_expectation(f: int, n: int, k: int, trials: int, seed: int,
                      strategy: str = emb.STRATEGY_SEMI_ORTHOGONAL) -> VerifyReport:
    """Mean squared embedded distance over the fitting samples equals k.

    Uses the biased covariance of the centered samples and no
    regularization; the identity is exact for any W with orthonormal
    columns, and holds for random selection too (a selection is a column
    subset of a permutation matrix).
    """
    if k > min(f, n):
        raise ValidationError(f"need k <= min(f, n), got k={k}, f={f}, n={n}")
    worst = 0.0
    for trial in range(trials):
        rng = linalg.rng_from_seed(linalg.derive_seed(seed, trial))
        x = rng.standard_normal((n, f))
        xc = x - x.mean(axis=0)
        c = xc.T @ xc / n
        w = _draw_w(strategy, f, k, linalg.derive_seed(seed, trial, 1), c)
        s = w.T @ c @ w
        l = linalg.cholesky(0.5 * (s + s.T))
        y = solve_triangular(l, w.T @ xc.T, lower=True)
        mean_dsq = float((y * y).sum(axis=0).mean())
        worst = max(worst, abs(mean_dsq - k) / k)
    return VerifyReport(
        name="expectation",
        instance={"f": f, "n": n, "k": k, "trials": trials, "seed": seed,
                  "strategy": strategy},
        observed={"max_relative_deviation": worst},
        bounds={"target": float(k)},
        passed=worst < EXPECTATION_TOL,
        tolerance=EXPECTATION_TOL,
    )


def check_orthogonal_invariance(f: int, n: int | None = None, trials: int = 100,
                                seed: int = 0, w_kind: str = "haar") -> VerifyReport:
    """Square orthogonal W satisfies C^-1 = W (W^T C W)^-1 W^T.

    C is a well-conditioned random SPD matrix, or the biased covariance of n
    centered Gaussian samples when n is given.  w_kind selects Haar-random,
    identity, or a random permutation matrix.
    """
    worst = 0.0
    for trial in range(trials):
        t_seed = linalg.derive_seed(seed, trial)
        if n is None:
            c = random_spd(f, t_seed)
        else:
            rng = linalg.rng_from_seed(t_seed)
            x = rng.standard_normal((n, f))
            xc = x - x.mean(axis=0)
            c = xc.T @ xc / n
        if w_kind == "haar":
            w = emb.semi_orthogonal(f, f, linalg.derive_seed(seed, trial, 1)).w
        elif w_kind == "identity":
            w = np.eye(f)
        elif w_kind == "permutation":
            rng = linalg.rng_from_seed(linalg.derive_seed(seed, trial, 1))
            w = np.eye(f)[rng.permutation(f)].T
        else:
            raise ValidationError(f"unknown w_kind {w_kind!r}")
        c_inv = sym_inverse(c)
        rebuilt = w @ sym_inverse(w.T @ c @ w) @ w.T
        num, _ = linalg.matrix_norms(c_inv - rebuilt)
        den, _ = linalg.matrix_norms(c_inv)
        worst = max(worst, num / den)
    return VerifyReport(
        name="orthogonal_invariance",
        instance={"f": f, "n": n, "trials": trials, "seed": seed, "w_kind": w_kind},
        observed={"max_relative_error": worst},
        bounds={"target": 0.0},
        passed=worst < INVARIANCE_TOL,
        tolerance=INVARIANCE_TOL,
    )


def check_error_bounds(f: int, k: int, trials: int, seed: int, norm: str = "frobenius",
                       spectrum: np.ndarray | None = None) -> VerifyReport:
    """Eigen-lower error <= semi-orthogonal error <= eigen-higher error.

    All three are squared precision-approximation errors in the chosen norm.
    A relative slack absorbs roundoff; conditioning above 1e7 is flagged in
    the notes, never treated as failure.
    """
    if norm not in ("frobenius", "spectral"):
        raise ValidationError(f"norm must be frobenius or spectral, got {norm!r}")
    pick = 0 if norm == "frobenius" else 1
    violations = 0
    worst_slack = 0.0
    max_cond = 0.0
    for trial in range(trials):
        c = random_spd(f, linalg.derive_seed(seed, trial), spectrum)
        lam, _ = linalg.sym_eig(c)
        max_cond = max(max_cond, float(lam[-1] / lam[0]))
        c_inv = sym_inverse(c)
        w_lo = _draw_w(emb.STRATEGY_EIGEN_LOWER, f, k, None, c)
        w_hi = _draw_w(emb.STRATEGY_EIGEN_HIGHER, f, k, None, c)
        w_rand = _draw_w(emb.STRATEGY_SEMI_ORTHOGONAL, f, k,
                         linalg.derive_seed(seed, trial, 1))
        lower = precision_error(c, c_inv, w_lo)[pick]
        mid = precision_error(c, c_inv, w_rand)[pick]
        upper = precision_error(c, c_inv, w_hi)[pick]
        slack = BOUND_SLACK * max(abs(lower), abs(mid), abs(upper), 1.0)
        low_gap = lower - mid   # positive = violation
        high_gap = mid - upper
        worst_slack = max(worst_slack, low_gap, high_gap)
        if low_gap > slack or high_gap > slack:
            violations += 1
    notes = ""
    if max_cond > 1e7:
        notes = f"ill-conditioned instances included (max cond ~ {max_cond:.2e})"
    return VerifyReport(
        name="error_bounds",
        instance={"f": f, "k": k, "trials": trials, "seed": seed, "norm": norm},
        observed={"violations": violations, "worst_signed_gap": worst_slack,
                  "max_condition_number": max_cond},
        bounds={"violations": 0},
        passed=violations == 0,
        tolerance=BOUND_SLACK,
        notes=notes,
    )


def check_flat_eigenvalues(f: int, k: int, alpha: float, trials: int,
                           seed: int) -> VerifyReport:
    """For C = alpha*I the squared Frobenius precision error is (f-k)/alpha^2.

    The error matrix is (1/alpha)(I - W W^T), an orthogonal projection onto
    the (f-k)-dimensional complement scaled by 1/alpha, so alpha enters the
    squared error quadratically; a form linear in 1/alpha would be
    dimensionally inconsistent with the squared norm.
    """
    if alpha <= 0:
        raise ValidationError(f"alpha must be positive, got {alpha}")
    c = alpha * np.eye(f)
    c_inv = np.eye(f) / alpha
    target = (f - k) / alpha**2
    worst = 0.0
    for trial in range(trials):
        w = emb.semi_orthogonal(f, k, linalg.derive_seed(seed, trial)).w
        err_fro, _ = precision_error(c, c_inv, w)
        dev = abs(err_fro - target)
        if target > 0:
            dev /= target
        worst = max(worst, dev)
    return VerifyReport(
        name="flat_eigenvalues",
        instance={"f": f, "k": k, "alpha": alpha, "trials": trials, "seed": seed},
        observed={"max_deviation": worst},
        bounds={"target": target},
        passed=worst < FLAT_TOL,
        tolerance=FLAT_TOL,
        notes="asserts the derived closed form (f-k)/alpha^2; the projection "
              "algebra forces alpha to enter squared",
    )


def check_svd_optimality(f: int, k: int, random_w_count: int, seed: int) -> VerifyReport:
    """No sampled semi-orthogonal W beats the k-smallest-eigenvector basis."""
    c = random_spd(f, linalg.derive_seed(seed, 0))
    c_inv = sym_inverse(c)
    w_best = _draw_w(emb.STRATEGY_EIGEN_LOWER, f, k, None, c)
    best_fro, best_spec = precision_error(c, c_inv, w_best)
    violations = 0
    min_fro = np.inf
    min_spec = np.inf
    for i in range(random_w_count):
        w = emb.semi_orthogonal(f, k, linalg.derive_seed(seed, 1, i)).w
        fro, spec = precision_error(c, c_inv, w)
        min_fro = min(min_fro, fro)
        min_spec = min(min_spec, spec)
        slack = BOUND_SLACK * max(best_fro, best_spec, 1.0)
        if fro < best_fro - slack or spec < best_spec - slack:
            violations += 1
    return VerifyReport(
        name="svd_optimality",
        instance={"f": f, "k": k, "random_w_count": random_w_count, "seed": seed},
        observed={"violations": violations, "eigen_lower_frobenius_sq": best_fro,
                  "eigen_lower_spectral_sq": best_spec,
                  "best_sampled_frobenius_sq": float(min_fro),
                  "best_sampled_spectral_sq": float(min_spec)},
        bounds={"violations": 0},
        passed=violations == 0,
        tolerance=BOUND_SLACK,
    )


def check_interlacing(f: int, k: int, trials: int, seed: int,
                      strategy: str = emb.STRATEGY_SEMI_ORTHOGONAL,
                      c_matrix: np.ndarray | None = None) -> VerifyReport:
    """lambda_i(W^T C W) lies in [lambda_{f-k+i}(C), lambda_i(C)], descending.

    Holds for any W with orthonormal columns; strategy selects which kind is
    drawn per trial, and an explicit C can be pinned for closed-form cases.
    """
    violations = 0
    worst = 0.0
    for trial in range(trials):
        c = c_matrix if c_matrix is not None else random_spd(f, linalg.derive_seed(seed, trial))
        w = _draw_w(strategy, f, k, linalg.derive_seed(seed, trial, 1), c)
        lam = linalg.sym_eig(c)[0][::-1]          # descending
        mu = linalg.sym_eig(w.T @ c @ w)[0][::-1]  # descending
        tol = INTERLACING_TOL * max(1.0, float(lam[0]))
        for i in range(k):
            upper = lam[i]
            lower = lam[f - k + i]
            gap = max(mu[i] - upper, lower - mu[i])
            worst = max(worst, gap)
            if gap > tol:
                violations += 1
    return VerifyReport(
        name="interlacing",
        instance={"f": f, "k": k, "trials": trials, "seed": seed, "strategy": strategy,
                  "pinned_c": c_matrix is not None},
        observed={"violations": violations, "worst_bracket_gap": worst},
        bounds={"violations": 0},
        passed=violations == 0,
        tolerance=INTERLACING_TOL,
    )


def duplicated_covariance(f: int, l: int, n: int, seed) -> np.ndarray:
    """Biased covariance of n samples with l independent features tiled to f.

    Columns repeat with period l, so the covariance has rank at most l; this
    is the redundancy that makes plain feature selection collapse.
    """
    if l > f:
        raise ValidationError(f"need l <= f, got l={l}, f={f}")
    rng = linalg.rng_from_seed(seed)
    base = rng.standard_normal((n, l))
    reps = -(-f // l)
    x = np.tile(base, (1, reps))[:, :f]
    xc = x - x.mean(axis=0)
    return xc.T @ xc / n


def embedded_spectrum(c: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, int]:
    """Descending eigenvalues of W^T C W and the effective-rank count."""
    s = w.T @ c @ w
    lam = linalg.sym_eig(0.5 * (s + s.T))[0][::-1]
    rank = int((lam > RANK_THRESHOLD * max(lam[0], 0.0)).sum()) if lam[0] > 0 else 0
    return lam, rank


def spectra_experiment(f: int, l: int, k: int, n: int, seeds: int,
                       out_path: str | None = None) -> dict:
    """Per-strategy embedded spectra on duplicated-feature data, plus ranks.

    Returns {strategy: {"ranks": [...], "full_rank_fraction": ...,
    "mean_spectrum": [...]}} and optionally writes the per-seed CSV with
    columns strategy, seed, index, eigenvalue, rank.
    """
    rows = []
    summary = {}
    for s_idx, strategy in enumerate(SPECTRA_STRATEGIES):
        ranks = []
        spectra = []
        for seed in range(seeds):
            c = duplicated_covariance(f, l, n, linalg.derive_seed(seed, 0))
            w = _draw_w(strategy, f, k, linalg.derive_seed(seed, 1 + s_idx), c)
            lam, rank = embedded_spectrum(c, w)
            ranks.append(rank)
            spectra.append(lam)
            for index, value in enumerate(lam):
                rows.append((strategy, seed, index, float(value), rank))
        spectra = np.asarray(spectra)
        summary[strategy] = {
            "ranks": ranks,
            "full_rank_fraction": float(np.mean([r == k for r in ranks])),
            "mean_spectrum": spectra.mean(axis=0).tolist(),
        }
    if out_path is not None:
        try:
            with open(out_path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(SPECTRA_HEADER)
                writer.writerows(rows)
        except OSError as exc:
            raise IoError(f"cannot write spectra CSV {out_path}: {exc}") from exc
    return summary


SUITE_NAMES = ("expectation", "invariance", "bounds", "flat", "optimality",
               "interlacing", "collapse")


def run_suite(which: str = "all", seed: int = 0) -> list[VerifyReport]:
    """Run the named check family (or all) at the standard instance sizes."""
    if which != "all" and which not in SUITE_NAMES:
        raise ValidationError(
            f"unknown suite {which!r}; choose all or one of {', '.join(SUITE_NAMES)}"
        )
    reports: list[VerifyReport] = []

    def want(name):
        return which in ("all", name)

    if want("expectation"):
        reports.append(check_expectation(16, 200, 8, 100, seed))
        reports.append(check_expectation(16, 200, 16, 20, seed,
                                         strategy=emb.STRATEGY_FULL))
        reports.append(check_expectation(16, 200, 8, 20, seed,
                                         strategy=emb.STRATEGY_EIGEN_LOWER))
        reports.append(check_expectation(16, 200, 8, 20, seed,
                                         strategy=emb.STRATEGY_RANDOM_SELECTION))
    if want("invariance"):
        reports.append(check_orthogonal_invariance(8, trials=100, seed=seed))
        reports.append(check_orthogonal_invariance(8, trials=10, seed=seed,
                                                   w_kind="identity"))
        reports.append(check_orthogonal_invariance(8, trials=10, seed=seed,
                                                   w_kind="permutation"))
    if want("bounds"):
        reports.append(check_error_bounds(10, 4, 200, seed, "frobenius"))
        reports.append(check_error_bounds(10, 4, 200, seed, "spectral"))
    if want("flat"):
        reports.append(check_flat_eigenvalues(10, 4, 2.0, 20, seed))
        reports.append(check_flat_eigenvalues(10, 4, 1.0, 20, seed))
        reports.append(check_flat_eigenvalues(10, 10, 1.0, 5, seed))
    if want("optimality"):
        reports.append(check_svd_optimality(8, 3, 500, seed))
    if want("interlacing"):
        reports.append(check_interlacing(8, 3, 200, seed,
                                         c_matrix=np.diag(np.arange(1.0, 9.0))))
        reports.append(check_interlacing(8, 3, 100, seed))
        reports.append(check_interlacing(8, 3, 100, seed,
                                         strategy=emb.STRATEGY_RANDOM_SELECTION))
    if want("collapse"):
        summary = spectra_experiment(32, 16, 12, 200, 100)
        semi = summary[emb.STRATEGY_SEMI_ORTHOGONAL]["full_rank_fraction"]
        gauss = summary[emb.STRATEGY_GAUSSIAN]["full_rank_fraction"]
        sel = summary[emb.STRATEGY_RANDOM_SELECTION]["full_rank_fraction"]
        passed = semi == 1.0 and gauss == 1.0 and sel < 0.5
        reports.append(VerifyReport(
            name="rank_collapse",
            instance={"f": 32, "l": 16, "k": 12, "n": 200, "seeds": 100},
            observed={"semi_orthogonal_full_rank_fraction": semi,
                      "gaussian_full_rank_fraction": gauss,
                      "random_selection_full_rank_fraction": sel},
            bounds={"semi_orthogonal": 1.0, "gaussian": 1.0,
                    "random_selection_below": 0.5},
            passed=passed,
            tolerance=0.0,
            notes="rank threshold 1e-4 relative to the top eigenvalue",
        ))
    return reports


def reports_to_json(reports: list[VerifyReport], path: str) -> None:
    doc = {"schema_version": 1, "reports": [r.to_dict() for r in reports]}
    try:
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write report JSON {path}: {exc}") from exc


def format_report(report: VerifyReport) -> str:
    state = "PASS" if report.passed else "FAIL"
    inst = ", ".join(f"{k}={v}" for k, v in report.instance.items())
    obs = ", ".join(f"{k}={v:.3e}" if isinstance(v, float) else f"{k}={v}"
                    for k, v in report.observed.items())
    line = f"[{state}] {report.name} ({inst}): {obs}"
    if report.notes:
        line += f"  # {report.notes}"
    return line
