"""Synthetic calendar covariates and regime-structured demand generators.

Both benchmark datasets share six calendar features (day of week, day of
month, month, day of year, weekend flag, holiday flag) and draw demand from
one of three covariate-activated segments with segment-specific means and
noise scales.  All draws are deterministic functions of the seed.
"""

from __future__ import annotations

import datetime
from dataclasses import dataclass

import numpy as np

from .core import CALENDAR_FEATURES, Dataset, derive_seed

#: Default calendar anchor: a Monday, January 1 (of a leap year, so
#: day_of_year can reach 366).
DEFAULT_EPOCH = datetime.date(2024, 1, 1)


@dataclass(frozen=True)
class CalendarDay:
    day_index: int
    dow: int        # 0=Monday .. 6=Sunday
    dom: int
    month: int
    doy: int
    is_weekend: int
    is_holiday: int


def gen_calendar(t_count: int, epoch: datetime.date = DEFAULT_EPOCH, seed: int = 0,
                 p_holiday: float = 0.1) -> list[CalendarDay]:
    """Consecutive proleptic-Gregorian days from ``epoch`` with i.i.d.
    Bernoulli(p_holiday) holiday flags."""
    if t_count < 1:
        raise ValueError("need at least one day")
    rng = np.random.default_rng(seed)
    holidays = rng.random(t_count) < p_holiday
    days = []
    for t in range(t_count):
        d = epoch + datetime.timedelta(days=t)
        dow = d.weekday()
        days.append(
            CalendarDay(
                day_index=t,
                dow=dow,
                dom=d.day,
                month=d.month,
                doy=d.timetuple().tm_yday,
                is_weekend=int(dow >= 5),
                is_holiday=int(holidays[t]),
            )
        )
    return days


def calendar_matrix(days: list[CalendarDay]) -> tuple[np.ndarray, np.ndarray]:
    """Covariate matrix in the canonical feature order, plus day indices."""
    X = np.array(
        [[d.dow, d.dom, d.month, d.doy, d.is_weekend, d.is_holiday] for d in days],
        dtype=float,
    )
    idx = np.array([d.day_index for d in days], dtype=np.int64)
    return X, idx


@dataclass(frozen=True)
class NewsvendorGenParams:
    """Per-product demand regimes: holiday lifts (A), smooth seasonal with
    weekday modulation (B), and midsummer weekday steps (C)."""

    n_products: int = 4
    baseline: float = 30.0
    holiday_lifts: tuple[float, ...] = (8.0, 5.0)  # products 0 and 1
    month_steps: tuple[tuple[int, float], ...] = ((7, -7.0), (8, 8.0))
    sigma_a: float = 0.5
    sigma_b: float = 3.0
    sigma_c: float = 4.0
    p_holiday: float = 0.1

    def __post_init__(self):
        if min(self.sigma_a, self.sigma_b, self.sigma_c) <= 0:
            raise ValueError("noise scales must be positive")


def newsvendor_mean(params: NewsvendorGenParams, day: CalendarDay, product: int) -> tuple[str, float]:
    """Segment label and mean demand for one product on one day.

    A holiday falling inside the segment-C window counts as segment A for
    holiday-lifted products (A takes precedence over C).
    """
    B = params.baseline
    steps = dict(params.month_steps)
    in_c_window = day.month in steps and day.dow <= 3
    if day.is_holiday and product < len(params.holiday_lifts):
        return "A", B + params.holiday_lifts[product]
    if in_c_window:
        return "C", B + steps[day.month] + 4.0 * product
    season = 6.0 * np.sin(2.0 * np.pi * day.month / 12.0)
    return "B", B + season * ((day.dow + 1) / 5.0) * (1.0 + 0.15 * product)


def gen_newsvendor(t_count: int, params: NewsvendorGenParams | None = None,
                   seed: int = 0, epoch: datetime.date = DEFAULT_EPOCH) -> Dataset:
    """Demand panel for the multi-product newsvendor benchmark."""
    params = params or NewsvendorGenParams()
    days = gen_calendar(t_count, epoch, derive_seed(seed, "calendar"), params.p_holiday)
    X, day_index = calendar_matrix(days)
    d = params.n_products
    mu = np.empty((t_count, d))
    seg = np.empty((t_count, d), dtype="U1")
    for t, day in enumerate(days):
        for j in range(d):
            seg[t, j], mu[t, j] = newsvendor_mean(params, day, j)
    sigma = np.where(seg == "A", params.sigma_a, np.where(seg == "B", params.sigma_b, params.sigma_c))
    rng = np.random.default_rng(derive_seed(seed, "noise"))
    eps = rng.standard_normal((t_count, d)) * sigma
    Y = np.maximum(0.0, mu + eps)
    return Dataset(X=X, Y=Y, day_index=day_index, segments=seg, feature_names=CALENDAR_FEATURES)


@dataclass(frozen=True)
class ShipmentGenParams:
    """Day-level demand regimes shared by all locations: contracted
    early-month replenishment (A), holiday surges driven by a latent factor
    (B), and routine calendar-driven demand (C)."""

    n_locations: int = 4
    baseline: float = 30.0
    early_month_lift: float = 25.0
    event_lift: float = 5.0
    event_driver_scale: float = 20.0
    driver_sd: float = 10.0
    trend_scale: float = 0.08
    weekday_quad: float = 4.0
    weekend_lift: float = 10.0
    sigma_a: float = 0.3
    sigma_b: float = 4.0
    sigma_c: float = 1.2
    p_holiday: float = 0.1

    def __post_init__(self):
        if min(self.sigma_a, self.sigma_b, self.sigma_c) <= 0:
            raise ValueError("noise scales must be positive")

    def location_offsets(self) -> np.ndarray:
        L = self.n_locations
        return np.sin(2.0 * np.pi * np.arange(L) / L)


def shipment_mean(params: ShipmentGenParams, day: CalendarDay, driver: float) -> tuple[str, float]:
    """Segment label and day-level mean demand (before location offsets).

    Exactly one segment is active per day; a holiday inside the early-month
    window counts as segment B (holiday takes precedence over A).
    """
    B = params.baseline
    if day.is_holiday:
        return "B", B + params.event_lift + params.event_driver_scale * driver
    if day.dom <= 8 and day.month <= 4:
        return "A", B + params.early_month_lift
    mu = (
        B
        + params.trend_scale * np.sqrt(day.doy)
        + params.weekday_quad * day.dow**2
        + params.weekend_lift * day.is_weekend
    )
    return "C", mu


def gen_shipment(t_count: int, params: ShipmentGenParams | None = None,
                 seed: int = 0, epoch: datetime.date = DEFAULT_EPOCH) -> Dataset:
    """Demand panel for the two-stage shipment benchmark.

    The latent event driver is drawn for every day but never exposed as a
    covariate.
    """
    params = params or ShipmentGenParams()
    days = gen_calendar(t_count, epoch, derive_seed(seed, "calendar"), params.p_holiday)
    X, day_index = calendar_matrix(days)
    H = np.random.default_rng(derive_seed(seed, "driver")).normal(0.0, params.driver_sd, size=t_count)
    mu = np.empty(t_count)
    seg = np.empty(t_count, dtype="U1")
    for t, day in enumerate(days):
        seg[t], mu[t] = shipment_mean(params, day, H[t])
    L = params.n_locations
    sigma = np.where(seg == "A", params.sigma_a, np.where(seg == "B", params.sigma_b, params.sigma_c))
    rng = np.random.default_rng(derive_seed(seed, "noise"))
    eps = rng.standard_normal((t_count, L)) * sigma[:, None]
    Y = np.maximum(0.0, mu[:, None] + params.location_offsets()[None, :] + eps)
    return Dataset(X=X, Y=Y, day_index=day_index, segments=seg, feature_names=CALENDAR_FEATURES)
