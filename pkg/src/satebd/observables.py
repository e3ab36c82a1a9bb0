"""Currents, steady-state fits and other reported quantities.

All times are in units of ``1/J`` and currents in atoms per ``1/J``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .model import LatticeGeometry, molecule_number_op, number_op

__all__ = [
    "TimeSeries",
    "CurrentFit",
    "CSV_COLUMNS",
    "current_series",
    "fit_steady_current",
    "detect_knee",
    "momentum_distribution",
    "occupations",
]

CSV_COLUMNS = ("t", "N_R", "I", "norm", "charge", "eps_lambda", "mol_occ", "imp_occ")
_CHANNELS = ("N_R", "norm", "charge", "eps_lambda", "mol_occ", "imp_occ")

# fit window defaults
TRANSIENT_END = 2.0
WINDOW_END = 6.0
KNEE_MARGIN = 1.0
KNEE_RATIO = 1.5
MIN_WINDOW = 1.0


@dataclass
class TimeSeries:
    """Observables sampled along one evolution.

    ``status`` is ``"ok"`` or ``"truncation-dominated"`` when a run was halted
    by its discarded-weight guard.
    """

    t: list = field(default_factory=list)
    N_R: list = field(default_factory=list)
    norm: list = field(default_factory=list)
    charge: list = field(default_factory=list)
    eps_lambda: list = field(default_factory=list)
    mol_occ: list = field(default_factory=list)
    imp_occ: list = field(default_factory=list)
    profiles: list = field(default_factory=list)
    status: str = "ok"

    def __len__(self):
        return len(self.t)

    def append(self, t, **values):
        if self.t and t <= self.t[-1]:
            raise ValueError("sample times must increase strictly")
        self.t.append(float(t))
        for name in _CHANNELS:
            getattr(self, name).append(float(values.get(name, math.nan)))
        if "profile" in values:
            self.profiles.append(np.asarray(values["profile"], dtype=float))

    def array(self, name: str) -> np.ndarray:
        return np.asarray(getattr(self, name), dtype=float)

    def to_arrays(self) -> dict:
        out = {name: self.array(name) for name in ("t",) + _CHANNELS}
        if self.profiles:
            out["profiles"] = np.vstack(self.profiles)
        return out

    @classmethod
    def from_arrays(cls, arrays: dict, status: str = "ok") -> "TimeSeries":
        series = cls(status=status)
        series.t = [float(x) for x in arrays.get("t", [])]
        for name in _CHANNELS:
            setattr(series, name, [float(x) for x in arrays.get(name, [])])
        if "profiles" in arrays:
            series.profiles = [row.copy() for row in np.atleast_2d(arrays["profiles"])]
        return series

    def to_csv(self, path=None) -> str:
        """CSV with a header row, 12 significant digits; returns the text."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        if len(self) >= 3:
            current = current_series(self)
        else:
            current = [math.nan] * len(self)
        for k in range(len(self)):
            row = [self.t[k], self.N_R[k], current[k], self.norm[k], self.charge[k],
                   self.eps_lambda[k], self.mol_occ[k], self.imp_occ[k]]
            writer.writerow([f"{x:.12g}" for x in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "TimeSeries":
        series = cls()
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                series.append(float(row["t"]), **{k: float(row[k]) for k in _CHANNELS})
        return series


@dataclass
class CurrentFit:
    I_SS: float
    window: tuple
    residual: float
    t_knee: float | None = None
    I_0: float | None = None
    flagged: bool = False

    def as_dict(self) -> dict:
        return {
            "I_SS": self.I_SS,
            "window": list(self.window),
            "residual": self.residual,
            "t_knee": self.t_knee,
            "I_0": self.I_0,
            "flagged": self.flagged,
        }


def _tn(series):
    if isinstance(series, TimeSeries):
        return series.array("t"), series.array("N_R")
    t, n = series
    return np.asarray(t, dtype=float), np.asarray(n, dtype=float)


def current_series(series) -> np.ndarray:
    """``I(t) = dN_R/dt`` by second-order finite differences.

    Interior points use the centred (non-uniform) three-point formula, which is
    exact for quadratics; endpoints use one-sided three-point stencils.
    """
    t, n = _tn(series)
    if len(t) < 3:
        raise ValueError("need at least 3 samples for a current")
    return np.gradient(n, t, edge_order=2)


def _linear_fit(t, y):
    A = np.vstack([np.ones_like(t), t]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    return coef, float(np.sqrt(np.mean(resid ** 2)))


def fit_steady_current(series, window=None, knee: float | None | str = "auto") -> CurrentFit:
    """Least-squares slope of ``N_R`` over a window.

    The default window is ``[2, min(6, t_knee - 1)]`` in units of ``1/J``;
    ``knee="auto"`` runs :func:`detect_knee` first when enough samples exist.
    A knee that would leave less than ``MIN_WINDOW`` of fit window is reported
    but does not shorten the window.
    The fit is flagged when the residual RMS exceeds 5% of the fitted rise.
    """
    t, n = _tn(series)
    if len(t) < 2:
        raise ValueError("need at least two samples to fit a current")
    if knee == "auto":
        knee = detect_knee((t, n)) if len(t) >= 20 else None
    if window is None:
        end = WINDOW_END
        if knee is not None and knee - KNEE_MARGIN >= TRANSIENT_END + MIN_WINDOW:
            end = min(WINDOW_END, knee - KNEE_MARGIN)
        window = (TRANSIENT_END, min(end, t[-1]))
    t0, t1 = window
    sel = (t >= t0 - 1e-12) & (t <= t1 + 1e-12)
    if sel.sum() < 2 or t1 <= t0:
        raise ValueError(f"fit window [{t0}, {t1}] contains fewer than two samples")
    (offset, slope), rms = _linear_fit(t[sel], n[sel])
    rise = abs(slope) * (t1 - t0)
    flagged = rms > 0.05 * rise
    I_0 = None
    if knee is not None:
        late = t >= knee
        if late.sum() >= 3:
            (_, I_0), _ = _linear_fit(t[late], n[late])
            I_0 = float(I_0)
    return CurrentFit(float(slope), (float(t0), float(t1)), rms, knee, I_0, bool(flagged))


def detect_knee(series, ratio: float = KNEE_RATIO, t_min: float = TRANSIENT_END,
                min_points: int = 5) -> float | None:
    """Breakpoint of a continuous two-segment linear fit to ``N_R(t)``.

    Candidate breakpoints are the sample times (after ``t_min``). The best
    one minimizes the total squared residual. It is reported only if the
    early slope is positive, exceeds the late slope by ``ratio`` (a late slope
    <= 0 always qualifies), and the slope change is statistically resolved
    (more than six standard errors and above round-off).
    """
    t, n = _tn(series)
    sel = t >= t_min - 1e-12
    t, n = t[sel], n[sel]
    if len(t) < 20:
        return None
    best = None
    for k in range(min_points, len(t) - min_points):
        tb = t[k]
        A = np.vstack([np.ones_like(t), t, np.maximum(0.0, t - tb)]).T
        coef, *_ = np.linalg.lstsq(A, n, rcond=None)
        rss = float(np.sum((n - A @ coef) ** 2))
        if best is None or rss < best[0]:
            best = (rss, tb, coef, A)
    rss, tb, (a, early, change), A = best
    late = early + change
    if early <= 0:
        return None
    if late > 0 and early / late <= ratio:
        return None
    dof = max(len(t) - 3, 1)
    sigma2 = rss / dof
    cov = sigma2 * np.linalg.pinv(A.T @ A)
    stderr = math.sqrt(max(cov[2, 2], 0.0))
    if abs(change) <= 6 * stderr or abs(change) <= 1e-9 * max(abs(early), 1e-300):
        return None
    return float(tb)


def momentum_distribution(C: np.ndarray, ks=None) -> tuple[np.ndarray, np.ndarray]:
    """Quasimomentum occupation ``n(k) = (1/M) sum_ij exp(i k (i - j)) C_ij``.

    ``C[i, j] = <b_i^dag b_j>``. With this sign a kick ``exp(i p j n_j)``
    moves the distribution to ``n(k - p)``. Default grid ``k = 2 pi m / M``.
    Returns ``(ks, n_k)``.
    """
    C = np.asarray(C)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError("correlation matrix must be square")
    if not np.allclose(C, C.conj().T, atol=1e-10):
        raise ValueError("correlation matrix is not Hermitian")
    M = C.shape[0]
    if ks is None:
        ks = 2 * np.pi * np.arange(M) / M
    ks = np.asarray(ks, dtype=float)
    x = np.arange(M)
    phase = np.exp(1j * ks[:, None] * x[None, :])             # (k, i)
    nk = np.einsum("ki,ij,kj->k", phase, C, phase.conj()) / M
    return ks, nk.real


def occupations(state, geometry: LatticeGeometry) -> tuple[float, float, np.ndarray]:
    """``(<m^dag m>, <n_b(0)>, density profile)`` of a Vidal state.

    The profile counts probe atoms only; adding the molecule occupation gives
    the total charge.
    """
    from .mps import expect_site

    profile = np.array([expect_site(state, l, np.diag(number_op(geometry, l)))
                        for l in range(geometry.n_sites)])
    imp = geometry.impurity_index
    if imp is None:
        return 0.0, 0.0, profile
    mol = expect_site(state, imp, np.diag(molecule_number_op(geometry)))
    return float(mol), float(profile[imp]), profile
