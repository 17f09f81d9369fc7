"""Closed-form channel statistics and achievable-rate bounds.

Moments of the Gram matrix G = HᴴH (accurate CSI) and of the estimated
effective channel (estimated CSI) are computed two ways:

* exactly, from the cumulants of non-central complex Gaussian quadratic
  forms conditioned on each link's LoS state and mixed over P_mk;
* from the reference closed forms (simpler expressions that drop some
  cross terms), reported next to the exact values under ``reference`` and
  never used for the bounds.

Rate bounds for the three receivers consume these moments together with
Monte-Carlo samples of the Gram-domain quantities (:func:`sample_grams`).
"""

from __future__ import annotations

import functools
import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Literal

import numpy as np

from ._validation import _validate_positive_integer, _validate_positive_number
from .channel import TrialSampler, los_components, steering_vector
from .detection import CombinerOutput
from .estimation import (
    PilotConfig,
    estimate_channel,
    link_covariances,
    lmmse_gain,
    psd_sqrt,
)
from .exceptions import CellFreeConfigurationError

if TYPE_CHECKING:
    from .geometry import LinkSet

logger = logging.getLogger(__name__)

CsiMode = Literal["accurate", "estimated"]

LOG2_E = math.log2(math.e)
MIN_BOUND_TRIALS = 1000
# Relative eigenvalue floor below which E[G] is treated as singular
SINGULAR_RCOND = 1e-12


def _hermitian(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))


def _dagger(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


@dataclass(frozen=True, eq=False)
class LinkStates:
    """Per-link Gaussian law of a channel vector in each LoS state.

    Given δ_mk = s the vector is CN(mean[s, m, k], cov[s, m, k]); state 0 is
    NLoS and state 1 LoS.
    """

    mean: np.ndarray
    cov: np.ndarray
    p_los: np.ndarray

    @property
    def weights(self) -> np.ndarray:
        """State probabilities (1 - P_mk, P_mk), shape (2, M, K)."""
        return np.stack([1.0 - self.p_los, self.p_los])

    @property
    def mixture_mean(self) -> np.ndarray:
        return np.einsum("smk,smkn->mkn", self.weights, self.mean)


@dataclass(frozen=True, eq=False)
class EstimatorStates:
    """Per-state LMMSE quantities of every link.

    ``estimate`` is the law of ĥ_mk given δ_mk. ``gain`` holds W, ``C`` and
    ``Cbar`` the estimate and error covariances, ``los`` the vectors h̄_mk.
    """

    estimate: LinkStates
    gain: np.ndarray
    sigma_hh: np.ndarray
    C: np.ndarray
    Cbar: np.ndarray
    pilot_power: np.ndarray
    noise_power: float
    beta: np.ndarray
    los: np.ndarray


def accurate_states(linkset: LinkSet, los: np.ndarray | None = None) -> LinkStates:
    """Law of h_mk: CN(0, β I) without LoS and CN(h̄, β I) with it."""
    if los is None:
        los = los_components(linkset)
    n = linkset.n_antennas
    mean = np.stack([np.zeros_like(los), los])
    cov = linkset.beta[..., None, None] * np.eye(n)
    cov = np.broadcast_to(cov, (2, *cov.shape)).astype(complex)
    return LinkStates(mean=mean, cov=cov, p_los=linkset.p_los)


def estimator_states(
    linkset: LinkSet, pilot: PilotConfig, los: np.ndarray | None = None
) -> EstimatorStates:
    """LMMSE estimator laws for δ = 0 and δ = 1 on every link.

    Given δ the despread pilot is y' = √E_p h + √N0 w, so
    ĥ ~ CN(√E_p δ W h̄, (E_p β + N0) W Wᴴ).
    """
    if los is None:
        los = los_components(linkset)
    shape = (linkset.n_aps, linkset.n_users)
    noise = pilot.noise_power

    means, covs, gains, sigmas, cs, cbars, powers = [], [], [], [], [], [], []
    for state in (0, 1):
        delta = np.full(shape, state)
        ep = pilot.pilot_power(linkset, delta)
        cov = link_covariances(linkset, delta, ep, noise, los)
        w = lmmse_gain(cov)
        amp = np.sqrt(ep)
        means.append(state * amp[..., None] * np.einsum("...ij,...j->...i", w, los))
        covs.append((ep * linkset.beta + noise)[..., None, None] * (w @ _dagger(w)))
        c = _hermitian(amp[..., None, None] * w @ cov.sigma_hh)
        gains.append(w)
        sigmas.append(cov.sigma_hh)
        cs.append(c)
        cbars.append(_hermitian(cov.sigma_hh - c))
        powers.append(ep)

    estimate = LinkStates(
        mean=np.stack(means), cov=_hermitian(np.stack(covs)), p_los=linkset.p_los
    )
    return EstimatorStates(
        estimate=estimate,
        gain=np.stack(gains),
        sigma_hh=np.stack(sigmas),
        C=np.stack(cs),
        Cbar=np.stack(cbars),
        pilot_power=np.stack(powers),
        noise_power=noise,
        beta=linkset.beta,
        los=los,
    )


# Cumulant / raw-moment conversions up to order four, last axis = order


def raw_from_cumulants(k: np.ndarray) -> np.ndarray:
    k1, k2, k3, k4 = np.moveaxis(k, -1, 0)
    m1 = k1
    m2 = k2 + k1**2
    m3 = k3 + 3 * k2 * k1 + k1**3
    m4 = k4 + 4 * k3 * k1 + 3 * k2**2 + 6 * k2 * k1**2 + k1**4
    return np.stack([m1, m2, m3, m4], axis=-1)


def cumulants_from_raw(m: np.ndarray) -> np.ndarray:
    m1, m2, m3, m4 = np.moveaxis(m, -1, 0)
    k1 = m1
    k2 = m2 - m1**2
    k3 = m3 - 3 * m2 * m1 + 2 * m1**3
    k4 = m4 - 4 * m3 * m1 - 3 * m2**2 + 12 * m2 * m1**2 - 6 * m1**4
    return np.stack([k1, k2, k3, k4], axis=-1)


def quadratic_form_cumulants(mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """First four cumulants of ‖v‖² for v ~ CN(mean, cov).

    κ_j = (j-1)! [Σ λ^j + j Σ λ^(j-1) |u_iᴴ mean|²] over the eigenpairs of cov.
    """
    lam, vecs = np.linalg.eigh(_hermitian(cov))
    lam = np.clip(lam, 0.0, None)
    proj = np.abs(np.einsum("...ij,...i->...j", vecs.conj(), mean)) ** 2
    out = [
        math.factorial(j - 1)
        * (np.sum(lam**j, axis=-1) + j * np.sum(lam ** (j - 1) * proj, axis=-1))
        for j in range(1, 5)
    ]
    return np.stack(out, axis=-1)


def norm_moments(states: LinkStates) -> dict[str, np.ndarray]:
    """Exact moments of ‖v_k‖² = Σ_m ‖v_mk‖² for every user, each shape (K,).

    Links are independent across APs, so per-link cumulants of the
    state mixture add up over m.
    """
    per_state = raw_from_cumulants(quadratic_form_cumulants(states.mean, states.cov))
    per_link = np.einsum("smk,smkj->mkj", states.weights, per_state)
    total = cumulants_from_raw(per_link).sum(axis=0)
    raw = raw_from_cumulants(total)
    return {
        "mean": raw[..., 0],
        "second": raw[..., 1],
        "third": raw[..., 2],
        "fourth": raw[..., 3],
        "var": np.clip(total[..., 1], 0.0, None),
        "var_abs_sq": np.clip(raw[..., 3] - raw[..., 1] ** 2, 0.0, None),
    }


def inner_product_moments(
    a: LinkStates, b: LinkStates
) -> tuple[np.ndarray, np.ndarray]:
    """E[a_kᴴ b_l] and E|a_kᴴ b_l|² for independent a_k and b_l, each (K, L).

    Per link, with a ~ CN(μa, Qa) and b ~ CN(μb, Qb),
    E|aᴴb|² = |μaᴴμb|² + μaᴴQbμa + μbᴴQaμb + tr(QaQb).
    """
    mean_link = np.einsum("mkn,mln->mkl", a.mixture_mean.conj(), b.mixture_mean)
    wa, wb = a.weights, b.weights
    second_link = np.zeros(mean_link.shape)
    for s, t in itertools.product((0, 1), repeat=2):
        mu_a, qa = a.mean[s], a.cov[s]
        mu_b, qb = b.mean[t], b.cov[t]
        term = (
            np.abs(np.einsum("mkn,mln->mkl", mu_a.conj(), mu_b)) ** 2
            + np.einsum("mkn,mlnp,mkp->mkl", mu_a.conj(), qb, mu_a, optimize=True).real
            + np.einsum("mln,mknp,mlp->mkl", mu_b.conj(), qa, mu_b, optimize=True).real
            + np.einsum("mkij,mlji->mkl", qa, qb, optimize=True).real
        )
        second_link += wa[s][:, :, None] * wb[t][:, None, :] * term
    var_link = np.clip(second_link - np.abs(mean_link) ** 2, 0.0, None)
    mean = mean_link.sum(axis=0)
    return mean, np.abs(mean) ** 2 + var_link.sum(axis=0)


def gaussian_bilinear_moments(
    mean: np.ndarray, cov: np.ndarray, a: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """E[X] and E|X|² of X = zᴴ A z for proper z ~ CN(mean, cov)."""
    b = _dagger(a)
    a_cov = a @ cov
    b_cov = b @ cov
    tr_a = np.trace(a_cov, axis1=-2, axis2=-1)
    tr_b = np.trace(b_cov, axis1=-2, axis2=-1)
    tr_abab = np.trace(a_cov @ b_cov, axis1=-2, axis2=-1)

    def quad(mat: np.ndarray) -> np.ndarray:
        return np.einsum("...i,...ij,...j->...", mean.conj(), mat, mean)

    mam, mbm = quad(a), quad(b)
    second = (
        tr_a * tr_b
        + tr_abab
        + mam * tr_b
        + mbm * tr_a
        + quad(a_cov @ b)
        + quad(b_cov @ a)
        + mam * mbm
    )
    return tr_a + mam, np.real(second)


def _estimate_error_law(est: EstimatorStates) -> tuple[np.ndarray, np.ndarray]:
    """Joint law of z = [ĥ; e] per state and link: mean (2,M,K,2N), cov (...,2N,2N)."""
    w = est.gain
    n = w.shape[-1]
    eye = np.eye(n)
    ep = est.pilot_power[..., None, None]
    beta = est.beta[None, ..., None, None]
    root_n0 = math.sqrt(est.noise_power)

    # ĥ = μ̂ + √(E_p β) W ḣ + √N0 W w,  e = (δ h̄ - μ̂) + (√β I - √(E_p β) W) ḣ - √N0 W w
    top = np.concatenate([np.sqrt(ep * beta) * w, root_n0 * w], axis=-1)
    bottom = np.concatenate(
        [np.sqrt(beta) * eye - np.sqrt(ep * beta) * w, -root_n0 * w], axis=-1
    )
    t = np.concatenate([top, bottom], axis=-2)
    cov = t @ _dagger(t)

    mu_hat = est.estimate.mean
    delta = np.array([0.0, 1.0])[:, None, None, None]
    mu_err = delta * est.los[None] - mu_hat
    return np.concatenate([mu_hat, mu_err], axis=-1), cov


def _mixed_sum(
    weights: np.ndarray, mean_state: np.ndarray, second_state: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Mix per-state link moments over δ and add independent links over m."""
    mean_link = np.einsum("smk,smk->mk", weights, mean_state)
    second_link = np.einsum("smk,smk->mk", weights, second_state)
    var_link = np.clip(second_link - np.abs(mean_link) ** 2, 0.0, None)
    mean = mean_link.sum(axis=0)
    return mean, np.abs(mean) ** 2 + var_link.sum(axis=0)


def _select(values: dict[str, Any], k: int | None) -> dict[str, Any]:
    if k is None:
        return values
    return {name: (val[k] if isinstance(val, np.ndarray) else val) for name, val in values.items()}


# Reference closed forms


def _reference_gkk(linkset: LinkSet) -> dict[str, np.ndarray]:
    n = linkset.n_antennas
    p, a, beta = linkset.p_los, linkset.los_gain, linkset.beta
    ap_gain = linkset.geometry.ap_gain[:, None]
    pa = p * a
    cross = np.sum(pa, axis=0) ** 2 - np.sum(pa**2, axis=0)
    sum_beta = beta.sum(axis=0)
    nlos_sq = n * np.sum(beta**2, axis=0)
    return {
        "mean_gkk": n * np.sum(pa + beta, axis=0),
        "second_gkk": n**2 * (np.sum(p * a**2, axis=0) + cross)
        + nlos_sq
        + 4 * n * np.sum(pa * beta, axis=0),
        # Omits G_m² inside the LoS sum
        "var_gkk": n**2 * np.sum(p * (1 - p) * a**2 / ap_gain**2, axis=0)
        + nlos_sq
        + 2 * n * np.sum(pa * beta, axis=0),
        "third_g2": sum_beta**3 * n * (n**2 + 3 * n + 26),
        "fourth_g2": sum_beta**4 * n * (n**3 + 12 * n**2 + 104 * n + 513),
    }


def _nlos_norm_moments(linkset: LinkSet) -> np.ndarray:
    """Exact raw moments of Σ_m β_mk ‖ḣ_mk‖², shape (K, 4)."""
    n = linkset.n_antennas
    kappa = np.stack(
        [math.factorial(j - 1) * n * np.sum(linkset.beta**j, axis=0) for j in range(1, 5)],
        axis=-1,
    )
    return raw_from_cumulants(kappa)


def _reference_gkl(linkset: LinkSet) -> dict[str, np.ndarray]:
    geom = linkset.geometry
    n = linkset.n_antennas
    p, a, beta = linkset.p_los, linkset.los_gain, linkset.beta
    idx = np.arange(1, n + 1)
    phase = np.exp(
        2j * np.pi * geom.antenna_spacing / geom.wavelength
        * np.sin(linkset.theta)[..., None] * idx
    )
    steering_sum = np.einsum("mki,mli->mkl", phase, phase.conj())
    path = np.exp(2j * np.pi * linkset.x_m / geom.wavelength)
    los_term = (
        np.sqrt(a)[:, :, None] * np.sqrt(a)[:, None, :]
        * path[:, :, None] * path.conj()[:, None, :]
        * steering_sum
    )
    pp = p[:, :, None] * p[:, None, :]
    qq = (p * (1 - p))[:, :, None] * (p * (1 - p))[:, None, :]
    nlos = n * np.einsum("mk,ml->kl", beta, beta)
    mixed = 4 * n * np.einsum("mk,ml->kl", p * a, beta)
    mean = np.sum(pp * los_term, axis=0)
    return {
        "mean_gkl": mean,
        "second_gkl": mean + nlos + mixed,
        "var_gkl": np.sum(qq * los_term, axis=0) + nlos + mixed,
    }


def gkk_moments(
    linkset: LinkSet, k: int | None = None, los: np.ndarray | None = None
) -> dict[str, Any]:
    """Moments of the diagonal Gram entries g_kk = ‖h_k‖².

    Keys ``mean``, ``second``, ``var``, ``third``, ``fourth`` and
    ``var_abs_sq`` hold the exact values; ``reference`` holds the reference
    closed forms, including E|g_kk^(2)|³ and E|g_kk^(2)|⁴ together with the
    exact ``third_g2``/``fourth_g2`` they should equal.
    """
    exact = norm_moments(accurate_states(linkset, los))
    g2 = _nlos_norm_moments(linkset)
    out: dict[str, Any] = dict(exact)
    out["third_g2"] = g2[..., 2]
    out["fourth_g2"] = g2[..., 3]
    out["reference"] = _reference_gkk(linkset)
    if k is None:
        return out
    selected = _select(out, k)
    selected["reference"] = _select(out["reference"], k)
    return selected


def gkl_moments(
    linkset: LinkSet,
    k: int | None = None,
    l: int | None = None,  # noqa: E741
    los: np.ndarray | None = None,
) -> dict[str, Any]:
    """Moments of the off-diagonal Gram entries g_kl = h_kᴴ h_l.

    Returns (K, K) arrays ``mean`` (complex), ``second`` = E|g_kl|² and
    ``var`` = E|g_kl - E g_kl|². Diagonal entries are the exact g_kk values.
    ``reference`` holds the reference E[g_kl], E|g_kl|² and var(g_kl); the first
    two are complex-valued.
    """
    if k is not None and k == l:
        raise CellFreeConfigurationError("gkl_moments needs k != l")
    states = accurate_states(linkset, los)
    mean, second = inner_product_moments(states, states)
    diag = norm_moments(states)
    k_idx = np.arange(linkset.n_users)
    mean[k_idx, k_idx] = diag["mean"]
    second[k_idx, k_idx] = diag["second"]
    out: dict[str, Any] = {
        "mean": mean,
        "second": second,
        "var": np.clip(second - np.abs(mean) ** 2, 0.0, None),
        "reference": _reference_gkl(linkset),
    }
    if k is None or l is None:
        return out
    selected = {name: out[name][k, l] for name in ("mean", "second", "var")}
    selected["reference"] = {name: val[k, l] for name, val in out["reference"].items()}
    return selected


def zk_variance(
    linkset: LinkSet, noise_power: float = 1.0, k: int | None = None
) -> np.ndarray | float:
    """var(z_k) = N0 N Σ_m (P_mk a_mk + β_mk) for z_k = √N0 h_kᴴ w."""
    noise_power = _validate_positive_number(noise_power, "noise_power")
    var = noise_power * linkset.n_antennas * np.sum(
        linkset.p_los * linkset.los_gain + linkset.beta, axis=0
    )
    return var if k is None else float(var[k])


@dataclass(frozen=True, eq=False)
class GMoments:
    """Accurate-CSI moments of G = HᴴH and of the combined noise.

    Per-UE arrays have shape (K,), pair arrays (K, K). ``var_gkl`` is the
    real variance E|g_kl - E g_kl|²; the reference complex expression is kept
    in ``reference``.
    """

    mean_gkk: np.ndarray
    second_gkk: np.ndarray
    var_gkk: np.ndarray
    fourth_gkk: np.ndarray
    var_abs_gkk_sq: np.ndarray
    mean_gkl: np.ndarray
    second_gkl: np.ndarray
    var_gkl: np.ndarray
    var_zk: np.ndarray
    reference: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_users(self) -> int:
        return int(self.mean_gkk.size)

    @property
    def mean_gram(self) -> np.ndarray:
        """E[G] with E[g_kk] on the diagonal and E[g_kl] off it."""
        return self.mean_gkl

    @property
    def signal_second(self) -> np.ndarray:
        return self.second_gkk

    @property
    def signal_var_abs(self) -> np.ndarray:
        return self.var_abs_gkk_sq

    @property
    def interference(self) -> np.ndarray:
        """E|g_kl|² with a zero diagonal."""
        return np.where(np.eye(self.n_users, dtype=bool), 0.0, self.second_gkl)

    @property
    def noise_var(self) -> np.ndarray:
        return self.var_zk


def g_moments(
    linkset: LinkSet, noise_power: float = 1.0, los: np.ndarray | None = None
) -> GMoments:
    """Assemble every accurate-CSI moment used by the conjugate and joint bounds."""
    if los is None:
        los = los_components(linkset)
    diag = gkk_moments(linkset, los=los)
    off = gkl_moments(linkset, los=los)
    reference = dict(diag["reference"])
    reference.update(off["reference"])
    logger.debug("Evaluated G moments for %d users", linkset.n_users)
    return GMoments(
        mean_gkk=diag["mean"],
        second_gkk=diag["second"],
        var_gkk=diag["var"],
        fourth_gkk=diag["fourth"],
        var_abs_gkk_sq=diag["var_abs_sq"],
        mean_gkl=off["mean"],
        second_gkl=off["second"],
        var_gkl=off["var"],
        var_zk=np.asarray(zk_variance(linkset, noise_power)),
        reference=reference,
    )


@dataclass(frozen=True, eq=False)
class EstCsiMoments:
    """Estimated-CSI moments of the effective channel.

    ĝ_kk = ‖ĥ_k‖² is the known gain and g̃_kk = ĥ_kᴴ e_k the estimation-error
    gain. ``second_cross[k, l]`` is E|ĥ_kᴴ h_l|². ``c_check`` is C_mk given a
    LoS link and ``mean_c_half`` the state average of the square root of
    C_mk, each (M, K, N, N). ``error_power`` is E tr(C̄_mk), shape (M, K).
    """

    mean_ghat: np.ndarray
    second_ghat: np.ndarray
    fourth_ghat: np.ndarray
    var_abs_ghat_sq: np.ndarray
    mean_gram_hat: np.ndarray
    mean_cross: np.ndarray
    second_cross: np.ndarray
    second_gtilde: np.ndarray
    error_power: np.ndarray
    var_zk: np.ndarray
    noise_power: float
    c_check: np.ndarray
    mean_c_half: np.ndarray
    reference: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_users(self) -> int:
        return int(self.mean_ghat.size)

    @property
    def signal_second(self) -> np.ndarray:
        return self.second_ghat

    @property
    def signal_var_abs(self) -> np.ndarray:
        return self.var_abs_ghat_sq

    @property
    def interference(self) -> np.ndarray:
        """E|ĥ_kᴴ h_l|² off the diagonal and E|g̃_kk|² on it."""
        eye = np.eye(self.n_users, dtype=bool)
        return np.where(eye, np.diag(self.second_gtilde), self.second_cross)

    @property
    def noise_var(self) -> np.ndarray:
        return self.var_zk

    def sigma_y2(self, symbol_powers: np.ndarray | float) -> float:
        """Per-entry noise plus estimation-error power of the stacked y.

        σ_y² = N0 + Σ_k E_s,k Σ_m E tr(C̄_mk) / (MN).
        """
        m, k = self.error_power.shape
        n = self.c_check.shape[-1]
        powers = np.broadcast_to(np.asarray(symbol_powers, dtype=float), (k,))
        return float(self.noise_power + powers @ self.error_power.sum(axis=0) / (m * n))


def _reference_est(
    linkset: LinkSet, est: EstimatorStates, mean_c: np.ndarray
) -> dict[str, np.ndarray]:
    geom = linkset.geometry
    p, a, beta = linkset.p_los, linkset.los_gain, linkset.beta
    n = linkset.n_antennas
    c_check = est.C[1]
    steer = steering_vector(
        linkset.theta, n, geom.antenna_spacing, geom.wavelength
    )

    def form(mat: np.ndarray) -> np.ndarray:
        return np.real(np.einsum("mki,mkij,mkj->mk", steer.conj(), mat, steer))

    tr_mean_c = np.real(np.trace(mean_c, axis1=-2, axis2=-1))
    check_half = psd_sqrt(c_check)
    q_half = form(check_half)
    q_full = form(c_check)
    tr_check = np.real(np.trace(c_check, axis1=-2, axis2=-1))

    pa_q = p * a * q_full
    t1 = np.sum(p * a**2 * q_full**2, axis=0)
    t2 = np.sum(beta**2 * tr_mean_c**2, axis=0)
    t3 = np.sum(pa_q, axis=0) ** 2 - np.sum(pa_q**2, axis=0)
    bt = beta * tr_mean_c
    t4 = np.sum(bt, axis=0) ** 2
    t5 = 4 * np.sum(pa_q * beta * tr_check, axis=0)

    # Uses (ℓ'ℓ/x)² without the 4π factor of the LoS power
    outer = np.einsum("mki,mkj->mkij", steer, steer.conj())
    a_reference = (16 * np.pi**2 * a)[..., None, None]
    ep = est.pilot_power[1][..., None, None]
    sigma = a_reference * outer + beta[..., None, None] * np.eye(n)
    yy = ep * a_reference * outer + (beta * est.pilot_power[1] + est.noise_power)[..., None, None] * np.eye(n)
    c_check_reference = _hermitian(ep * sigma @ np.linalg.solve(yy, sigma))

    ep0 = est.pilot_power[0]
    nlos_ratio = (beta * ep0 / (beta * ep0 + est.noise_power))[..., None, None]
    mean_c_half_reference = (
        p[..., None, None] * check_half + (1 - p)[..., None, None] * nlos_ratio * np.eye(n)
    )
    tr_cc = np.real(np.einsum("smkij,smkji->smk", est.Cbar, est.C))
    return {
        "mean_ghat": np.sum(p * a * q_half + beta * tr_mean_c, axis=0),
        "second_ghat": t1 + t2 + t3 + t4 + t5,
        "second_gtilde": np.einsum("smk,smk->k", est.estimate.weights, tr_cc),
        "c_check": c_check_reference,
        "mean_c_half": mean_c_half_reference,
    }


def est_csi_moments(
    linkset: LinkSet,
    pilot: PilotConfig,
    los: np.ndarray | None = None,
    states: EstimatorStates | None = None,
) -> EstCsiMoments:
    """Estimated-CSI moments under genie-aided per-link LMMSE estimation.

    E|g̃_kk|² is evaluated exactly from the joint Gaussian law of (ĥ, e) in
    each LoS state; the reference Σ_m E tr(C̄_mk C_mk) is kept in ``reference``
    and coincides with it when P_mk = 0.
    """
    if los is None:
        los = los_components(linkset)
    if states is None:
        states = estimator_states(linkset, pilot, los)
    est = states.estimate
    n = linkset.n_antennas
    k_idx = np.arange(linkset.n_users)

    diag = norm_moments(est)
    mean_gram_hat, _ = inner_product_moments(est, est)
    mean_gram_hat[k_idx, k_idx] = diag["mean"]

    mean_cross, second_cross = inner_product_moments(est, accurate_states(linkset, los))
    z_mean, z_cov = _estimate_error_law(states)
    zero, eye = np.zeros((n, n)), np.eye(n)
    error_sel = np.block([[zero, eye], [zero, zero]])
    full_sel = np.block([[eye, eye], [zero, zero]])
    tilde_state = gaussian_bilinear_moments(z_mean, z_cov, error_sel)
    _, second_gtilde = _mixed_sum(est.weights, *tilde_state)
    own_mean, own_second = _mixed_sum(
        est.weights, *gaussian_bilinear_moments(z_mean, z_cov, full_sel)
    )
    mean_cross[k_idx, k_idx] = own_mean
    second_cross[k_idx, k_idx] = own_second

    weights = est.weights[..., None, None]
    mean_c = np.sum(weights * states.C, axis=0)
    error_power = np.real(
        np.einsum("smk,smkii->mk", est.weights, states.Cbar)
    )
    c_check = states.C[1]
    ep0 = states.pilot_power[0]
    beta = linkset.beta
    nlos_half = np.sqrt(beta * ep0 / (beta * ep0 + pilot.noise_power))
    p = linkset.p_los[..., None, None]
    mean_c_half = p * psd_sqrt(c_check) + (1 - p) * nlos_half[..., None, None] * eye

    reference = _reference_est(linkset, states, mean_c)
    logger.debug(
        "Evaluated estimated-CSI moments (%s pilots, mean error power %.3g)",
        pilot.mode,
        float(error_power.mean()),
    )
    return EstCsiMoments(
        mean_ghat=diag["mean"],
        second_ghat=diag["second"],
        fourth_ghat=diag["fourth"],
        var_abs_ghat_sq=diag["var_abs_sq"],
        mean_gram_hat=mean_gram_hat,
        mean_cross=mean_cross,
        second_cross=second_cross,
        second_gtilde=second_gtilde,
        error_power=error_power,
        var_zk=pilot.noise_power * diag["mean"],
        noise_power=pilot.noise_power,
        c_check=c_check,
        mean_c_half=mean_c_half,
        reference=reference,
    )


# Monte-Carlo samples in the Gram domain


@dataclass(frozen=True, eq=False)
class GramSamples:
    """Per-trial Gram-domain quantities of one geometry drop.

    ``gram`` is HᴴH (T, K, K). Under estimated CSI ``est_gram`` is ĤᴴĤ and
    ``est_cross`` is ĤᴴH. ``los_count`` is the number of LoS links per UE.
    """

    gram: np.ndarray
    los_count: np.ndarray
    est_gram: np.ndarray | None = None
    est_cross: np.ndarray | None = None
    seed: int | None = None
    drop: int = 0

    @property
    def trials(self) -> int:
        return int(self.gram.shape[0])

    @property
    def estimated(self) -> bool:
        return self.est_gram is not None


def sample_grams(
    linkset: LinkSet,
    trials: int,
    seed: int,
    drop: int = 0,
    pilot: PilotConfig | None = None,
    los_mode: Literal["per_drop", "per_trial"] = "per_drop",
) -> GramSamples:
    """Draw ``trials`` channels (and estimates when ``pilot`` is given)."""
    trials = _validate_positive_integer(trials, "trials")
    sampler = TrialSampler(linkset, seed, drop, los_mode)
    k = linkset.n_users
    gram = np.empty((trials, k, k), dtype=complex)
    los_count = np.empty((trials, k), dtype=np.int64)
    est_gram = np.empty_like(gram) if pilot is not None else None
    est_cross = np.empty_like(gram) if pilot is not None else None

    for t in range(trials):
        rng, realization = sampler.trial(t)
        h = realization.H
        gram[t] = h.conj().T @ h
        los_count[t] = realization.delta.sum(axis=0)
        if pilot is not None:
            hhat = estimate_channel(realization, linkset, pilot, rng, los=sampler.los).Hhat
            est_gram[t] = hhat.conj().T @ hhat
            est_cross[t] = hhat.conj().T @ h

    logger.debug("Sampled %d Gram matrices for drop %d", trials, drop)
    return GramSamples(
        gram=_hermitian(gram),
        los_count=los_count,
        est_gram=None if est_gram is None else _hermitian(est_gram),
        est_cross=est_cross,
        seed=seed,
        drop=drop,
    )


def gram_combiner_outputs(
    samples: GramSamples,
    scheme: Literal["conjugate", "mmse"],
    symbol_powers: np.ndarray,
    noise_power: float,
    csi: CsiMode = "accurate",
    regularizer: float | None = None,
) -> CombinerOutput:
    """Per-trial effective gains of a linear receiver from Gram samples.

    For MMSE with V = (H D Hᴴ + ψ I)⁻¹ Ĥ (D = diag(E_s)) the push-through
    identity gives Vᴴ = (Ĝ D + ψ I)⁻¹ Ĥᴴ, so every gain only needs K × K
    solves: f = (ĜD + ψI)⁻¹ ĤᴴH and VᴴV = B Ĝ Bᴴ with B = (ĜD + ψI)⁻¹.
    """
    estimated = csi == "estimated"
    if estimated and not samples.estimated:
        raise CellFreeConfigurationError("samples were drawn without pilots")
    g_hat = samples.est_gram if estimated else samples.gram
    cross = samples.est_cross if estimated else samples.gram
    if g_hat is None or cross is None:
        raise CellFreeConfigurationError("samples hold no Gram matrices for this CSI mode")

    powers = np.asarray(symbol_powers, dtype=float)
    if scheme == "conjugate":
        gains = cross
        noise = noise_power * np.real(np.diagonal(g_hat, axis1=-2, axis2=-1))
        known = g_hat
    elif scheme == "mmse":
        psi = noise_power if regularizer is None else regularizer
        psi = _validate_positive_number(psi, "regularizer")
        k = g_hat.shape[-1]
        system = g_hat * powers[None, None, :] + psi * np.eye(k)
        gains = np.linalg.solve(system, cross)
        known = np.linalg.solve(system, g_hat)
        b = np.linalg.inv(system)
        noise = noise_power * np.real(
            np.diagonal(b @ g_hat @ _dagger(b), axis1=-2, axis2=-1)
        )
    else:
        raise CellFreeConfigurationError(f"no Gram-domain form for scheme {scheme!r}")

    return CombinerOutput(
        gains=gains,
        noise_variance=noise,
        known_gains=known if estimated else None,
        error_gains=gains - known if estimated else None,
        scheme=scheme,
    )


# Rate bounds


def _positive_part(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.nan_to_num(x, nan=0.0, neginf=0.0), 0.0)


def _safe_log2(x: np.ndarray | float) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log2(x)


def _mean_and_se(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    count = samples.shape[0]
    mean = samples.mean(axis=0)
    if count < 2:
        return mean, np.zeros_like(mean)
    return mean, samples.std(axis=0, ddof=1) / math.sqrt(count)


def jackknife_se(samples: np.ndarray) -> float:
    """Delete-one jackknife standard error of the sample mean."""
    samples = np.asarray(samples, dtype=float)
    count = samples.size
    if count < 2:
        return 0.0
    loo = (samples.sum() - samples) / (count - 1)
    return float(np.sqrt((count - 1) / count * np.sum((loo - loo.mean()) ** 2)))


@dataclass(frozen=True, eq=False)
class RateBoundReport:
    """Upper/lower/empirical rates of one (scheme, CSI) pair at one SNR.

    Per-user arrays have shape (K,); joint detection reports sum rates as
    0-d arrays. ``provenance`` says where the empirical denominators came
    from (``closed_form`` or ``samples``).
    """

    scheme: str
    csi: str
    upper: np.ndarray
    lower: np.ndarray
    empirical: np.ndarray | None = None
    empirical_se: np.ndarray | None = None
    approx: np.ndarray | None = None
    sum_empirical_se: float | None = None
    lower_se: float | None = None
    trials: int = 0
    seed: int | None = None
    config_hash: str | None = None
    provenance: str = "closed_form"
    flags: list[str] = field(default_factory=list)

    @property
    def per_user(self) -> bool:
        return np.ndim(self.upper) == 1

    def sum_rates(self) -> dict[str, float | None]:
        def total(x: np.ndarray | None) -> float | None:
            return None if x is None else float(np.sum(x))

        se = self.sum_empirical_se
        if se is None and self.empirical_se is not None:
            se = float(np.sqrt(np.sum(np.square(self.empirical_se))))
        return {
            "upper": total(self.upper),
            "lower": total(self.lower),
            "empirical": total(self.empirical),
            "empirical_se": se,
            "approx": total(self.approx),
        }

    def to_dict(self) -> dict[str, Any]:
        def plain(x: np.ndarray | None) -> Any:
            return None if x is None else np.asarray(x, dtype=float).tolist()

        return {
            "scheme": self.scheme,
            "csi": self.csi,
            "upper": plain(self.upper),
            "lower": plain(self.lower),
            "empirical": plain(self.empirical),
            "empirical_se": plain(self.empirical_se),
            "approx": plain(self.approx),
            "lower_se": self.lower_se,
            "sum": self.sum_rates(),
            "trials": self.trials,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "provenance": self.provenance,
            "flags": list(self.flags),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _per_user_bounds(
    signal: np.ndarray, var_abs: np.ndarray, denominator: np.ndarray, powers: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Jensen upper bound and the second-order lower bound with the [·]⁺ clamp."""
    useful = signal * powers
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.divide(
            useful,
            denominator,
            out=np.where(useful > 0, np.inf, 0.0),
            where=denominator > 0,
        )
        upper = np.log2(1.0 + ratio)
        penalty = np.where(signal > 0, var_abs / (2.0 * signal**2), 0.0)
    lower = _positive_part(_safe_log2(useful) - LOG2_E * penalty - _safe_log2(denominator))
    return np.nan_to_num(upper, nan=0.0), lower


def conj_rate_bounds(
    moments: GMoments | EstCsiMoments,
    symbol_powers: np.ndarray | float,
    samples: GramSamples | None = None,
) -> RateBoundReport:
    """Per-user conjugate-beamforming rate bounds.

    Accurate CSI uses :class:`GMoments`, estimated CSI :class:`EstCsiMoments`
    (the own-stream error gain then counts as interference). With
    ``samples`` the empirical rate E log2(1 + |g|²E_s,k / den) is added,
    its denominator taken from the closed forms.
    """
    csi: CsiMode = "estimated" if isinstance(moments, EstCsiMoments) else "accurate"
    k = moments.n_users
    powers = np.broadcast_to(np.asarray(symbol_powers, dtype=float), (k,))
    denominator = moments.interference @ powers + moments.noise_var
    upper, lower = _per_user_bounds(
        moments.signal_second, moments.signal_var_abs, denominator, powers
    )

    empirical = se = sum_se = None
    trials, seed = 0, None
    if samples is not None:
        gram = samples.est_gram if csi == "estimated" else samples.gram
        if gram is None:
            raise CellFreeConfigurationError("samples were drawn without pilots")
        gain_sq = np.real(np.diagonal(gram, axis1=-2, axis2=-1)) ** 2
        with np.errstate(divide="ignore"):
            rates = np.log2(1.0 + gain_sq * powers / denominator)
        empirical, se = _mean_and_se(rates)
        _, sum_se = _mean_and_se(rates.sum(axis=1))
        trials, seed = samples.trials, samples.seed

    logger.debug("Conjugate %s bounds: sum upper %.4g", csi, float(upper.sum()))
    return RateBoundReport(
        scheme="conjugate",
        csi=csi,
        upper=upper,
        lower=lower,
        empirical=empirical,
        empirical_se=se,
        sum_empirical_se=None if sum_se is None else float(sum_se),
        trials=trials,
        seed=seed,
    )


@functools.lru_cache(maxsize=None)
def _warn_insufficient(scheme: str, trials: int) -> None:
    # Logged once per (scheme, trials) pair
    logger.warning(
        "%s bounds from %d < %d trials carry wide confidence intervals",
        scheme,
        trials,
        MIN_BOUND_TRIALS,
    )


def _hermitian_logdet2(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sign, logdet = np.linalg.slogdet(_hermitian(a))
    return np.real(sign), logdet / math.log(2.0)


def joint_rate_bounds(
    mean_gram: np.ndarray,
    symbol_powers: np.ndarray | float,
    noise_power: float,
    samples: np.ndarray | None = None,
    csi: CsiMode = "accurate",
    seed: int | None = None,
) -> RateBoundReport:
    """Sum-rate bounds of joint detection.

    ``mean_gram`` is E[G] (accurate CSI) or E[Ĝ] (estimated CSI, with
    ``noise_power`` = σ_y²). ``samples`` (T, K, K) are draws of G or Ĝ used
    for E log2 det Ψ with Ψ = E[G]⁻¹G and for the empirical sum rate.
    """
    noise_power = _validate_positive_number(noise_power, "noise_power")
    k = mean_gram.shape[-1]
    snr = np.broadcast_to(np.asarray(symbol_powers, dtype=float), (k,)) / noise_power
    root = np.sqrt(snr)
    flags: list[str] = []

    _, upper = _hermitian_logdet2(np.eye(k) + root[:, None] * mean_gram * root[None, :])
    upper = max(float(upper), 0.0)

    eig = np.linalg.eigvalsh(_hermitian(mean_gram))
    singular = eig.size == 0 or eig.min() <= SINGULAR_RCOND * max(eig.max(), 0.0)
    if np.any(snr <= 0):
        approx_raw = -np.inf
        flags.append("zero_symbol_power")
    elif singular:
        approx_raw = -np.inf
        flags.append("singular_mean_gram")
        logger.warning("E[G] is singular; reporting a zero joint lower bound")
    else:
        approx_raw = float(np.sum(np.log2(snr)) + _hermitian_logdet2(mean_gram)[1])

    lower = _positive_part(np.asarray(approx_raw))
    empirical = se = lower_se = None
    trials = 0
    if samples is not None:
        trials = samples.shape[0]
        if trials < MIN_BOUND_TRIALS:
            flags.append("insufficient_samples")
            _warn_insufficient("joint", trials)
        if np.isfinite(approx_raw):
            sign, logdet = _hermitian_logdet2(samples)
            psi_terms = np.where(sign > 0, logdet - _hermitian_logdet2(mean_gram)[1], -np.inf)
            if np.isfinite(psi_terms).all():
                lower = _positive_part(np.asarray(approx_raw + np.mean(psi_terms)))
                lower_se = jackknife_se(psi_terms)
            else:
                lower = np.asarray(0.0)
                flags.append("singular_sample_gram")
        _, rates = _hermitian_logdet2(
            np.eye(k) + root[:, None] * samples * root[None, :]
        )
        empirical, se = _mean_and_se(rates)

    logger.debug("Joint %s bounds: upper %.4g lower %.4g", csi, upper, float(lower))
    return RateBoundReport(
        scheme="joint",
        csi=csi,
        upper=np.asarray(upper),
        lower=np.asarray(lower),
        empirical=None if empirical is None else np.asarray(empirical),
        empirical_se=None if se is None else np.asarray(se),
        approx=_positive_part(np.asarray(approx_raw)),
        sum_empirical_se=None if se is None else float(se),
        lower_se=lower_se,
        trials=trials,
        seed=seed,
        provenance="samples" if samples is not None else "closed_form",
        flags=flags,
    )


def mmse_rate_bounds(
    output: CombinerOutput, symbol_powers: np.ndarray | float, seed: int | None = None
) -> RateBoundReport:
    """Per-user MMSE bounds from sampled effective gains (leading trial axis).

    Statistics of f_kl have no closed form, so every expectation is a sample
    moment. Under estimated CSI the desired gain is f̂_kk and the error gains
    f̃_kl all count as interference.
    """
    gains = output.gains
    trials, k = gains.shape[0], gains.shape[-1]
    powers = np.broadcast_to(np.asarray(symbol_powers, dtype=float), (k,))
    eye = np.eye(k, dtype=bool)
    estimated = output.known_gains is not None
    flags: list[str] = []
    if trials < MIN_BOUND_TRIALS:
        flags.append("insufficient_samples")
        _warn_insufficient("mmse", trials)

    desired = output.known_gains if estimated else gains
    own_sq = np.abs(np.diagonal(desired, axis1=-2, axis2=-1)) ** 2
    cross_sq = np.where(eye, 0.0, np.abs(desired if estimated else gains) ** 2).mean(axis=0)
    interference = cross_sq @ powers
    if estimated:
        interference = interference + (np.abs(output.error_gains) ** 2).mean(axis=0) @ powers
    noise = 0.0 if output.noise_variance is None else output.noise_variance.mean(axis=0)
    denominator = interference + noise

    signal = own_sq.mean(axis=0)
    var_abs = own_sq.var(axis=0)
    upper, lower = _per_user_bounds(signal, var_abs, denominator, powers)
    with np.errstate(divide="ignore"):
        rates = np.log2(1.0 + own_sq * powers / denominator)
    empirical, se = _mean_and_se(rates)
    _, sum_se = _mean_and_se(rates.sum(axis=1))
    return RateBoundReport(
        scheme="mmse",
        csi="estimated" if estimated else "accurate",
        upper=upper,
        lower=lower,
        empirical=empirical,
        empirical_se=se,
        sum_empirical_se=float(sum_se),
        trials=trials,
        seed=seed,
        provenance="samples",
        flags=flags,
    )


def rate_report(
    scheme: Literal["conjugate", "joint", "mmse"],
    moments: GMoments | EstCsiMoments,
    samples: GramSamples,
    symbol_powers: np.ndarray | float,
    noise_power: float = 1.0,
    regularizer: float | None = None,
) -> RateBoundReport:
    """Bounds and empirical rate of one receiver from precomputed moments.

    The CSI mode follows the type of ``moments``. Estimated-CSI MMSE uses
    ψ = σ_y² unless ``regularizer`` is given; accurate-CSI MMSE uses N0.
    """
    k = moments.n_users
    powers = np.broadcast_to(np.asarray(symbol_powers, dtype=float), (k,))
    estimated = isinstance(moments, EstCsiMoments)

    if scheme == "conjugate":
        return conj_rate_bounds(moments, powers, samples)
    if scheme == "joint":
        if estimated:
            return joint_rate_bounds(
                moments.mean_gram_hat,
                powers,
                moments.sigma_y2(powers),
                samples.est_gram,
                csi="estimated",
                seed=samples.seed,
            )
        return joint_rate_bounds(
            moments.mean_gram, powers, noise_power, samples.gram, seed=samples.seed
        )
    if scheme == "mmse":
        psi = regularizer
        if estimated and psi is None:
            psi = moments.sigma_y2(powers)
        csi: CsiMode = "estimated" if estimated else "accurate"
        output = gram_combiner_outputs(samples, "mmse", powers, noise_power, csi, psi)
        return mmse_rate_bounds(output, powers, samples.seed)
    raise CellFreeConfigurationError(f"unknown scheme: {scheme}")


def empirical_rate(
    scheme: Literal["conjugate", "joint", "mmse"],
    csi: CsiMode,
    linkset: LinkSet,
    trials: int,
    seed: int,
    symbol_powers: np.ndarray | float,
    noise_power: float = 1.0,
    pilot: PilotConfig | None = None,
    drop: int = 0,
    regularizer: float | None = None,
    samples: GramSamples | None = None,
) -> RateBoundReport:
    """Monte-Carlo rate of one receiver with its bounds.

    The conjugate and joint estimators take their denominators (and σ_y²)
    from the moment engine; MMSE takes them from the samples.
    """
    if csi == "estimated" and pilot is None:
        pilot = PilotConfig(noise_power=noise_power)
    if samples is None:
        samples = sample_grams(
            linkset, trials, seed, drop, pilot if csi == "estimated" else None
        )

    moments: GMoments | EstCsiMoments
    if pilot is None or csi == "accurate":
        moments = g_moments(linkset, noise_power)
    else:
        moments = est_csi_moments(linkset, pilot)
    return rate_report(scheme, moments, samples, symbol_powers, noise_power, regularizer)
