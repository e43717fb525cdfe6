"""
Fitting-error diagnostics.

For one input x with Jacobian J (K × m) and residual r = q_{Y|x} − p_{Y|x},
the Lagrange identity splits ‖r‖² exactly:

    F = ‖Jᵀr‖² / ‖J‖_F²
    G = Σ_j ‖J_j × r‖² / ‖J‖_F²          (J_j = column j = ∇_{θ_j} f)
    F + G = ‖r‖²

and the same split holds per parameter with denominator ‖J_j‖². ‖J_j × r‖²
is computed in its pairwise form ½Σ_iΣ_k (J_ij r_k − J_kj r_i)², which is a
sum of squares and therefore never negative.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import DegenerateModelError, DimensionError, InvalidInputError, NumericError
from .model import ModelSpec, forward, jacobian, jacobians, predictive, predictive_batch, validate_params
from .models import FitReport, HessianCheck, InputDiagnostics
from .numdiff import gradient
from .prob_core import PmfLike, as_pmf
from .risk import Dataset, LossSpec, check_compatible
from .spectral import lambda_max, symmetrize
from .workers import map_ordered

logger = logging.getLogger(__name__)

ZERO_GRAD_TOL = 1e-12
MAX_HESSIAN_PARAMS = 500
HESSIAN_STEP = 1e-4
SYMMETRY_TOL = 1e-4
SIDE_CONDITION_TOL = 1e-6


def cross_norm_sq(a: Sequence[float], x: Sequence[float]) -> float:
    """½ΣᵢΣⱼ(aᵢxⱼ − aⱼxᵢ)², which equals ‖a‖²‖x‖² − (a·x)²."""
    a = np.asarray(a, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if a.shape != x.shape or a.ndim != 1:
        raise DimensionError(f"vectors must have equal length, got {a.shape} and {x.shape}")
    outer = np.outer(a, x)
    return float(0.5 * np.sum((outer - outer.T) ** 2))


def _column_cross_norm_sq(jac: np.ndarray, r: np.ndarray) -> np.ndarray:
    """cross_norm_sq(J[:, j], r) for every column j, in O(K²·m) time and O(m) memory."""
    k = jac.shape[0]
    total = np.zeros(jac.shape[1])
    for i in range(k):
        for l in range(i + 1, k):
            total += (jac[i] * r[l] - jac[l] * r[i]) ** 2
    return total


def lagrange_identity_residual(A: np.ndarray, x: Sequence[float]) -> float:
    """|‖Ax‖² − (‖A‖_F²‖x‖² − Σ_rows cross_norm_sq(row, x))|."""
    A = np.asarray(A, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if A.ndim != 2 or x.ndim != 1 or A.shape[1] != x.size:
        raise DimensionError(f"incompatible shapes {A.shape} and {x.shape}")
    lhs = float(np.sum((A @ x) ** 2))
    cross = _column_cross_norm_sq(A.T, x).sum()
    rhs = float(np.sum(A**2) * (x @ x) - cross)
    return abs(lhs - rhs)


@dataclass
class FitDecomposition:
    """Exact F/G split of ‖q_{Y|x} − p_{Y|x}‖² at one input."""

    f_term: float
    g_term: float
    residual_sq: float
    lambda_max: float
    trace: float
    per_param_f: Optional[np.ndarray] = None
    per_param_g: Optional[np.ndarray] = None
    zero_grad_params: Tuple[int, ...] = ()

    def identity_error(self) -> float:
        """Relative error of F + G = ‖q − p‖²."""
        total = self.f_term + self.g_term
        return abs(total - self.residual_sq) / max(self.residual_sq, 1e-300)

    def per_param_identity_error(self) -> float:
        if self.per_param_f is None:
            return 0.0
        total = self.per_param_f + self.per_param_g
        mask = ~np.isnan(total)
        if not np.any(mask):
            return 0.0
        return float(np.max(np.abs(total[mask] - self.residual_sq)) / max(self.residual_sq, 1e-300))


def _decompose_from(jac: np.ndarray, p: np.ndarray, q: np.ndarray, per_param: bool) -> FitDecomposition:
    norm_sq = float(np.sum(jac**2))
    if norm_sq == 0.0:
        raise DegenerateModelError("Jacobian is identically zero; F and G are undefined")
    r = q - p
    projected = jac.T @ r
    cross = _column_cross_norm_sq(jac, r)
    gram = jac @ jac.T

    decomposition = FitDecomposition(
        f_term=float(projected @ projected) / norm_sq,
        g_term=float(cross.sum()) / norm_sq,
        residual_sq=float(r @ r),
        lambda_max=max(lambda_max(symmetrize(gram)), 0.0),
        trace=float(np.trace(gram)),
    )
    if per_param:
        col_norm_sq = np.sum(jac**2, axis=0)
        active = np.sqrt(col_norm_sq) > ZERO_GRAD_TOL
        per_f = np.full(jac.shape[1], np.nan)
        per_g = np.full(jac.shape[1], np.nan)
        per_f[active] = projected[active] ** 2 / col_norm_sq[active]
        per_g[active] = cross[active] / col_norm_sq[active]
        decomposition.per_param_f = per_f
        decomposition.per_param_g = per_g
        decomposition.zero_grad_params = tuple(int(j) for j in np.flatnonzero(~active))
    return decomposition


def decompose(
    spec: ModelSpec,
    theta: np.ndarray,
    x: Sequence[float],
    q_yx: PmfLike,
    per_param: bool = True,
) -> FitDecomposition:
    """F/G decomposition at one input, optionally per parameter."""
    q_yx = as_pmf(q_yx)
    if q_yx.alphabet_size != spec.num_classes:
        raise DimensionError(f"q has {q_yx.alphabet_size} labels, model has {spec.num_classes}")
    jac = jacobian(spec, theta, x)
    p = predictive(spec, theta, x).probs
    return _decompose_from(jac, p, q_yx.probs, per_param)


def decompose_dataset(
    spec: ModelSpec,
    theta: np.ndarray,
    dataset: Dataset,
    per_param: bool = False,
    jobs: int = 1,
) -> List[FitDecomposition]:
    """Per-input decompositions in dataset row order."""
    check_compatible(spec, dataset)
    theta = validate_params(spec, theta)
    probs = predictive_batch(spec, theta, dataset.features)

    def run(index: int) -> FitDecomposition:
        jac = jacobian(spec, theta, dataset.features[index])
        return _decompose_from(jac, probs[index], dataset.conditionals[index], per_param)

    return map_ordered(run, range(dataset.size), jobs)


def _fit_and_loss_moment(spec: ModelSpec, theta: np.ndarray, dataset: Dataset, loss: LossSpec) -> Tuple[float, float, float]:
    logits = forward(spec, theta, dataset.features)
    p = predictive_batch(spec, theta, dataset.features)
    losses = loss.loss_vectors(logits)
    residual = p - dataset.conditionals
    fit = abs(float(dataset.weights @ np.sum(residual * losses, axis=1)))
    loss_l2 = float(dataset.weights @ np.sum(losses**2, axis=1))
    residual_l2 = float(dataset.weights @ np.sum(residual**2, axis=1))
    return fit, loss_l2, residual_l2


def mean_per_param_g(decompositions: Sequence[FitDecomposition], weights: np.ndarray) -> Tuple[np.ndarray, Tuple[int, ...]]:
    """E_X per_param_g with the union of per-input zero-gradient sets masked as NaN."""
    excluded = sorted(set().union(*(d.zero_grad_params for d in decompositions)))
    stacked = np.stack([d.per_param_g for d in decompositions])
    stacked = np.where(np.isnan(stacked), 0.0, stacked)
    mean = weights @ stacked
    mean[excluded] = np.nan
    return mean, tuple(excluded)


def fit_report(
    spec: ModelSpec,
    theta: np.ndarray,
    dataset: Dataset,
    loss: LossSpec,
    decompositions: Optional[Sequence[FitDecomposition]] = None,
    with_g_min: bool = True,
    jobs: int = 1,
) -> FitReport:
    """
    Fitting error |R(f,p) − R(f,q)|, its normalized form and the bound
    √(E_X[F + G]) it never exceeds.
    """
    check_compatible(spec, dataset)
    theta = validate_params(spec, theta)
    if decompositions is None:
        decompositions = decompose_dataset(spec, theta, dataset, per_param=with_g_min, jobs=jobs)
    elif with_g_min and decompositions[0].per_param_g is None:
        raise InvalidInputError("G_M needs per-parameter decompositions")
    fit, loss_l2, residual_l2 = _fit_and_loss_moment(spec, theta, dataset, loss)
    if loss_l2 == 0.0:
        raise DegenerateModelError("E_X‖ℓ(f(x))‖² is zero; normalized fitting error is undefined")

    w = dataset.weights
    mean_f = float(w @ np.array([d.f_term for d in decompositions]))
    mean_g = float(w @ np.array([d.g_term for d in decompositions]))

    g_min = None
    excluded: Tuple[int, ...] = ()
    if with_g_min:
        means, excluded = mean_per_param_g(decompositions, w)
        if np.all(np.isnan(means)):
            raise DegenerateModelError("every parameter has a zero gradient at some input")
        g_min = float(np.nanmin(means))

    return FitReport(
        fit=fit,
        fit_normalized=fit / math.sqrt(loss_l2),
        bound=math.sqrt(mean_f + mean_g),
        loss_l2_mean=loss_l2,
        g_min=g_min,
        lambda_max_max=max(d.lambda_max for d in decompositions),
        mean_f=mean_f,
        mean_g=mean_g,
        mean_residual_sq=residual_l2,
        cauchy_schwarz_bound=math.sqrt(residual_l2 * loss_l2),
        zero_grad_params=list(excluded),
    )


def input_rows(decompositions: Sequence[FitDecomposition]) -> List[InputDiagnostics]:
    return [
        InputDiagnostics(
            x_index=i,
            residual_sq=d.residual_sq,
            f_term=d.f_term,
            g_term=d.g_term,
            lambda_max=d.lambda_max,
        )
        for i, d in enumerate(decompositions)
    ]


def cauchy_schwarz_gap(spec: ModelSpec, theta: np.ndarray, dataset: Dataset, loss: LossSpec) -> float:
    """√(E_X‖p−q‖²·E_X‖ℓ‖²) − fit; non-negative by Cauchy–Schwarz."""
    check_compatible(spec, dataset)
    fit, loss_l2, residual_l2 = _fit_and_loss_moment(spec, validate_params(spec, theta), dataset, loss)
    return math.sqrt(residual_l2 * loss_l2) - fit


def f_term_entk_bound_gap(spec: ModelSpec, theta: np.ndarray, x: Sequence[float], q_yx: PmfLike) -> float:
    """λmax·‖q−p‖²/trace(eNTK) − F; non-negative for every input."""
    d = decompose(spec, theta, x, q_yx, per_param=False)
    return d.lambda_max * d.residual_sq / d.trace - d.f_term


def g_min_monotonicity(
    spec: ModelSpec,
    theta: np.ndarray,
    dataset: Dataset,
    prefix_sizes: Sequence[int],
    jobs: int = 1,
) -> List[float]:
    """
    G_M over growing parameter prefixes: min_{j<k} E_X per_param_g[j].

    Excluded (zero-gradient) parameters are skipped; a prefix holding only
    excluded parameters yields +inf.
    """
    sizes = [int(k) for k in prefix_sizes]
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise InvalidInputError("prefix sizes must be strictly increasing")
    if not sizes or sizes[0] < 1 or sizes[-1] > spec.num_params:
        raise InvalidInputError(f"prefix sizes must lie in [1, {spec.num_params}]")
    decompositions = decompose_dataset(spec, theta, dataset, per_param=True, jobs=jobs)
    means, _ = mean_per_param_g(decompositions, dataset.weights)
    values = np.where(np.isnan(means), np.inf, means)
    return [float(values[:k].min()) for k in sizes]


def _erf_gradient(spec: ModelSpec, theta: np.ndarray, dataset: Dataset) -> np.ndarray:
    jac = jacobians(spec, theta, dataset.features)
    p = predictive_batch(spec, theta, dataset.features)
    return np.einsum("n,nkm,nk->m", dataset.weights, jac, p - dataset.conditionals)


def _prob_gradient(spec: ModelSpec, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """∇_θ p_i for every label i, shape (K, m): (diag(p) − ppᵀ)·J."""
    jac = jacobian(spec, theta, x)
    p = predictive(spec, theta, x).probs
    return (np.diag(p) - np.outer(p, p)) @ jac


def hessian_check(
    spec: ModelSpec,
    theta: np.ndarray,
    dataset: Dataset,
    step: float = HESSIAN_STEP,
) -> HessianCheck:
    """
    Compare the ERF Hessian with its assembly Σ_x q_X(x)(B_x + C_x + F_x):

    * B_x = Jᵀ diag(q) J
    * C_x = −Σ_i (q_i/p_i) ∇²p_i (second derivatives by finite differences)
    * F_x = ḡḡᵀ − ḡsᵀ − sḡᵀ with ḡ = Jᵀp and s = Jᵀq

    λmax(B_x) comes from the K×K matrix diag(√q)·J·Jᵀ·diag(√q), which shares
    its nonzero spectrum. The bound λmax(H) ≤ max_x λmax(eNTK) is only
    evaluated when both q-weighted side terms vanish (norms below 1e-6).
    """
    theta = validate_params(spec, theta)
    check_compatible(spec, dataset)
    m = spec.num_params
    if m > MAX_HESSIAN_PARAMS:
        raise InvalidInputError(f"Hessian check needs m ≤ {MAX_HESSIAN_PARAMS}, model has {m}")

    hessian = gradient(lambda t: _erf_gradient(spec, t, dataset), theta, step=step)
    hessian_norm = max(float(np.linalg.norm(hessian)), 1e-300)
    asymmetry = float(np.linalg.norm(hessian - hessian.T)) / hessian_norm
    if asymmetry > SYMMETRY_TOL:
        raise NumericError(f"finite-difference Hessian is not symmetric (relative residual {asymmetry:.2e})")
    hessian = symmetrize(hessian)

    assembled = np.zeros((m, m))
    curvature_q = np.zeros((m, m))
    curvature_p = np.zeros((m, m))
    b_max = entk_max = 0.0
    side_q = side_p = 0.0
    for x, q, w in zip(dataset.features, dataset.conditionals, dataset.weights):
        jac = jacobian(spec, theta, x)
        p = predictive(spec, theta, x).probs
        root_q = np.sqrt(q)
        b_small = (root_q[:, None] * (jac @ jac.T)) * root_q[None, :]
        b_max = max(b_max, lambda_max(symmetrize(b_small)))
        entk_max = max(entk_max, lambda_max(symmetrize(jac @ jac.T)))

        g_bar = jac.T @ p
        s = jac.T @ q
        side_q = max(side_q, float(np.linalg.norm(s)))
        side_p = max(side_p, float(np.linalg.norm(g_bar)))

        b_x = jac.T @ (q[:, None] * jac)
        f_x = np.outer(g_bar, g_bar) - np.outer(g_bar, s) - np.outer(s, g_bar)
        second = gradient(lambda t: _prob_gradient(spec, t, x), theta, step=step)  # (K, m, m)
        second = 0.5 * (second + second.transpose(0, 2, 1))
        weighted = np.einsum("i,ijk->jk", q / p, second)
        c_x = -weighted
        assembled += w * (b_x + c_x + f_x)
        curvature_q += w * weighted
        curvature_p += w * second.sum(axis=0)

    fd_top = lambda_max(hessian, dense=True)
    residual = float(np.linalg.norm(hessian - assembled))
    side_q_curvature = float(np.linalg.norm(curvature_q))
    applicable = side_q < SIDE_CONDITION_TOL and side_q_curvature < SIDE_CONDITION_TOL
    report = HessianCheck(
        fd_lambda_max=fd_top,
        b_lambda_max_max=b_max,
        entk_lambda_max_max=entk_max,
        decomposition_residual=residual,
        relative_residual=residual / hessian_norm,
        symmetry_residual=asymmetry,
        side_q_gradient_norm=side_q,
        side_p_gradient_norm=side_p,
        side_q_curvature_norm=side_q_curvature,
        side_p_curvature_norm=float(np.linalg.norm(curvature_p)),
        side_terms_vanish=applicable,
        hessian_below_entk=(fd_top <= entk_max + 1e-9) if applicable else None,
    )
    logger.debug("Hessian check: λmax(H)=%.6g, max λmax(B)=%.6g, max λmax(eNTK)=%.6g", fd_top, b_max, entk_max)
    return report
