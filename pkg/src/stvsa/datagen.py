"""Toy post-fault dynamics generating imbalanced voltage-stability trajectories.

Each sample is a bank of ``L`` independent pseudo-buses. A pseudo-bus is a
source ``E`` behind reactance ``x_source`` feeding two parallel lines of
reactance ``x_line`` into a load bus. The load is an induction motor
(first-order slip dynamics) in parallel with a static ZIP load and a shunt
capacitor. A three-phase fault on one line is applied at t = 0 and cleared by
tripping that line; motors that decelerated too far during the fault cannot
reaccelerate on the weakened network and stall, dragging the voltage down.

This is a desk-scale stand-in for a full transmission-system simulation, not
a model of any particular grid.
"""

from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import ConfigurationError, ShapeError
from .sfcm import LabelRules, engineering_labels, seed_labels

log = logging.getLogger(__name__)

LOAD_LEVELS = (0.8, 1.0, 1.2)
MOTOR_RATIOS = (0.7, 0.8, 0.9)
FAULT_LOCATIONS = (0.0, 0.25, 0.5, 0.75)
CLEARING_TIMES = (0.05, 0.1)
OTW_CHOICES = (0.03, 0.04, 0.05, 0.06)
ZIP_KNEE = 0.7  # constant-P and constant-I parts become constant-Z below this voltage


@dataclass(frozen=True)
class ScenarioConfig:
    """One operating point and fault; ``strict=False`` lifts the enumeration checks."""

    load_level: float = 1.0
    motor_ratio: float = 0.8
    fault_location: float = 0.0
    clearing_time: float = 0.05
    jitter_seed: int = 0
    strict: bool = True

    def __post_init__(self):
        if self.strict:
            for name, allowed in (("load_level", LOAD_LEVELS), ("motor_ratio", MOTOR_RATIOS),
                                  ("fault_location", FAULT_LOCATIONS), ("clearing_time", CLEARING_TIMES)):
                if getattr(self, name) not in allowed:
                    raise ConfigurationError(f"{name}={getattr(self, name)} not in {allowed}")
        if not 0.0 < self.motor_ratio < 1.0:
            raise ConfigurationError("motor ratio must lie strictly between 0 and 1")
        if not 0.0 <= self.fault_location < 1.0:
            raise ConfigurationError("fault location is a fraction in [0, 1)")
        if not self.clearing_time >= 0:
            raise ConfigurationError("clearing time must be non-negative")


def scenario_grid(load_levels=LOAD_LEVELS, motor_ratios=MOTOR_RATIOS, fault_locations=FAULT_LOCATIONS,
                  clearing_times=CLEARING_TIMES) -> list[tuple]:
    return list(itertools.product(load_levels, motor_ratios, fault_locations, clearing_times))


@dataclass
class MotorBusModel:
    """Per-bus parameters (arrays broadcastable to (samples, buses)), system pu.

    Motor impedances are on the motor's own rating; ``motor_rating`` converts.
    """

    x_source: np.ndarray
    x_line: np.ndarray
    x_fault: np.ndarray
    p_load: np.ndarray
    motor_share: np.ndarray
    zip_z: np.ndarray
    zip_i: np.ndarray
    q_over_p: np.ndarray
    r_s: np.ndarray
    x_s: np.ndarray
    x_m: np.ndarray
    r_r: np.ndarray
    x_r: np.ndarray
    inertia: np.ndarray
    slip_nominal: np.ndarray
    cap_ratio: np.ndarray
    dt: float = 1e-3

    ARRAYS = ("x_source", "x_line", "x_fault", "p_load", "motor_share", "zip_z", "zip_i", "q_over_p",
              "r_s", "x_s", "x_m", "r_r", "x_r", "inertia", "slip_nominal", "cap_ratio")

    def __post_init__(self):
        for name in self.ARRAYS:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if np.any(self.inertia <= 0):
            raise ConfigurationError("inertia constant H must be positive")
        if self.dt > 1e-3 or self.dt <= 0:
            raise ConfigurationError("integration step must lie in (0, 1 ms]")
        if np.any((self.motor_share <= 0) | (self.motor_share >= 1)):
            raise ConfigurationError("motor share must lie strictly between 0 and 1")
        if np.any(self.zip_z + self.zip_i > 1) or np.any(self.zip_z < 0) or np.any(self.zip_i < 0):
            raise ConfigurationError("ZIP shares must be non-negative and sum to at most 1")

    @property
    def zip_share(self) -> np.ndarray:
        return 1.0 - self.motor_share

    @property
    def zip_p(self) -> np.ndarray:
        return 1.0 - self.zip_z - self.zip_i


@dataclass
class SimulationSettings:
    dt: float = 1e-3
    pre_fault: float = 0.1
    horizon: float = 10.0
    record_dt: float = 0.01
    feature_window: float = 0.06
    n_buses: int = 10
    jitter: float = 0.1
    bus_jitter: float = 0.02
    max_fixed_point: int = 60


# shipped defaults; every bus draws multiplicative jitter around these values
NOMINAL = dict(
    x_source=0.08, x_line=0.30, x_fault=1e-3, p_load=0.55, zip_z=0.4, zip_i=0.3, q_over_p=0.25,
    r_s=0.031, x_s=0.10, x_m=3.2, r_r=0.018, x_r=0.18, inertia=0.48, slip_nominal=0.012, cap_ratio=0.6,
)


def jittered_model(cfg: ScenarioConfig, settings: SimulationSettings) -> MotorBusModel:
    """Parameters for one sample.

    Grid strength, loading and motor inertia get a factor shared by all buses
    of the sample (spread ``jitter``); every parameter also gets a small
    independent per-bus factor (spread ``bus_jitter``).
    """
    rng = np.random.default_rng([cfg.jitter_seed, 7919])
    L, j, jb = settings.n_buses, settings.jitter, settings.bus_jitter
    grid, load, inertia = rng.uniform(1 - j, 1 + j, size=3)

    def draw(name, shared=1.0):
        return NOMINAL[name] * shared * rng.uniform(1 - jb, 1 + jb, size=L)

    return MotorBusModel(
        x_source=draw("x_source", grid),
        x_line=draw("x_line", grid),
        x_fault=np.full(L, NOMINAL["x_fault"]),
        p_load=draw("p_load", load) * cfg.load_level,
        motor_share=np.full(L, cfg.motor_ratio),
        zip_z=draw("zip_z"), zip_i=draw("zip_i"), q_over_p=draw("q_over_p"),
        r_s=draw("r_s"), x_s=draw("x_s"), x_m=draw("x_m"), r_r=draw("r_r"), x_r=draw("x_r"),
        inertia=draw("inertia", inertia), slip_nominal=draw("slip_nominal"), cap_ratio=draw("cap_ratio"),
        dt=settings.dt,
    )


# ---------------------------------------------------------------------------
# network and load algebra
# ---------------------------------------------------------------------------

def fault_thevenin(x_source, x_line, x_fault, location):
    """Thevenin gain and reactance at the load bus during the fault.

    ``location`` is the fault's distance from the load bus as a fraction of
    the line. The purely inductive network reduces to a real linear system
    ``B v = (E / x_source) e_S`` over the nodes (source side S, fault F, bus B).
    Returns ``(V_th / E, X_th)``.
    """
    x_source, x_line, x_fault, a = np.broadcast_arrays(
        *(np.asarray(v, dtype=np.float64) for v in (x_source, x_line, x_fault, location)))
    near = np.maximum(a * x_line, 1e-8)
    far = np.maximum((1.0 - a) * x_line, 1e-8)
    b = np.zeros(a.shape + (3, 3))
    b[..., 0, 0] = 1 / x_source + 1 / x_line + 1 / far
    b[..., 1, 1] = 1 / far + 1 / near + 1 / x_fault
    b[..., 2, 2] = 1 / x_line + 1 / near
    b[..., 0, 1] = b[..., 1, 0] = -1 / far
    b[..., 0, 2] = b[..., 2, 0] = -1 / x_line
    b[..., 1, 2] = b[..., 2, 1] = -1 / near
    inv = np.linalg.inv(b)
    return inv[..., 2, 0] / x_source, inv[..., 2, 2]


def motor_impedance(m: MotorBusModel, slip):
    """Input impedance of the equivalent circuit on the motor base."""
    rotor = m.r_r / slip + 1j * m.x_r
    mag = 1j * m.x_m
    return m.r_s + 1j * m.x_s + mag * rotor / (mag + rotor)


def motor_torque(m: MotorBusModel, v_mag, slip):
    """Air-gap torque on the motor base for terminal voltage ``v_mag``."""
    k = 1j * m.x_m / (m.r_s + 1j * (m.x_s + m.x_m))
    z_eq = (m.r_s + 1j * m.x_s) * 1j * m.x_m / (m.r_s + 1j * (m.x_s + m.x_m))
    i_r = v_mag * k / (z_eq + m.r_r / slip + 1j * m.x_r)
    return np.abs(i_r) ** 2 * m.r_r / slip


@dataclass
class _Operating:
    """Quantities fixed by the pre-fault equilibrium."""

    e: np.ndarray
    motor_rating: np.ndarray
    t_mech: np.ndarray
    b_cap: np.ndarray
    s0: np.ndarray
    y0: np.ndarray


def _zip_admittance(m: MotorBusModel, v_mag):
    """conj(S) / |V|^2 of the static load, with the low-voltage constant-Z knee."""
    p0 = m.p_load * m.zip_share
    v = np.maximum(v_mag, 1e-9)
    vk = np.maximum(v, ZIP_KNEE)
    # per-unit power relative to nominal: z V^2 + i V + p above the knee, scaled V^2 below
    shape = m.zip_z * v * v + (m.zip_i * vk + m.zip_p) * (v / vk) ** 2
    p = p0 * shape
    return (p - 1j * p * m.q_over_p) / (v * v)


def _equilibrium(m: MotorBusModel) -> _Operating:
    s0 = m.slip_nominal
    p_motor = m.p_load * m.motor_share
    y_unit = 1.0 / motor_impedance(m, s0)
    rating = p_motor / y_unit.real
    q_motor = -(rating * y_unit).imag
    b_cap = m.cap_ratio * q_motor
    y0 = rating * y_unit + _zip_admittance(m, 1.0) + 1j * b_cap
    x_pre = m.x_source + m.x_line / 2
    e = np.abs(1.0 + 1j * x_pre * y0)
    return _Operating(e=e, motor_rating=rating, t_mech=motor_torque(m, 1.0, s0), b_cap=b_cap, s0=s0, y0=y0)


def _bus_admittance(m, op, v_mag, slip):
    return op.motor_rating / motor_impedance(m, slip) + _zip_admittance(m, v_mag) + 1j * op.b_cap


# ---------------------------------------------------------------------------
# time integration
# ---------------------------------------------------------------------------

@dataclass
class SimulationResult:
    """Batched outputs; leading axis indexes the scenarios of the batch."""

    u_record: np.ndarray  # (n, steps, L) at record_dt from clearing for `horizon` seconds
    features: np.ndarray  # (n, window steps, 3L) at dt from clearing
    failed: np.ndarray
    record_dt: float
    dt: float
    u_initial: np.ndarray = field(default=None)


def simulate_batch(cfgs: list[ScenarioConfig], models: list[MotorBusModel],
                   settings: SimulationSettings | None = None) -> SimulationResult:
    """Integrate every scenario of the batch in lock-step with explicit Euler."""
    settings = settings or SimulationSettings()
    if len(cfgs) != len(models) or not cfgs:
        raise ConfigurationError("need one model per scenario and at least one scenario")
    m = MotorBusModel(dt=settings.dt, **{n: np.stack([getattr(x, n) for x in models]) for n in MotorBusModel.ARRAYS})
    n, L = m.p_load.shape
    dt = settings.dt
    op = _equilibrium(m)

    loc = np.array([c.fault_location for c in cfgs])[:, None]
    tc = np.array([c.clearing_time for c in cfgs])
    k_fault = int(round(settings.pre_fault / dt))
    finite = np.isfinite(tc)
    n_fault_steps = np.where(finite, np.round(np.where(finite, tc, 0) / dt), 0).astype(int)
    never_cleared = ~finite
    # recording starts at clearing (or at inception for a fault that is never cleared)
    k_clear = k_fault + n_fault_steps
    rec_every = int(round(settings.record_dt / dt))
    n_rec = int(round(settings.horizon / settings.record_dt)) + 1
    n_win = int(round(settings.feature_window / dt))
    k_end = int(k_clear.max()) + (n_rec - 1) * rec_every + 1

    g_fault, x_fault = fault_thevenin(m.x_source, m.x_line, m.x_fault, loc)
    v_th_fault = op.e * g_fault
    x_pre = m.x_source + m.x_line / 2
    x_post = m.x_source + m.x_line
    has_fault = (n_fault_steps > 0) | never_cleared

    u_rec = np.full((n, n_rec, L), np.nan)
    feats = np.full((n, n_win, 3 * L), np.nan)
    slip = op.s0.copy()
    v_mag = np.ones((n, L))
    failed = np.zeros(n, dtype=bool)
    rows = np.arange(n)

    for k in range(k_end):
        during = ((k >= k_fault) & ((k < k_clear) | never_cleared))[:, None]
        after = ((k >= k_clear) & has_fault & ~never_cleared)[:, None]
        v_th = np.where(during, v_th_fault, op.e)
        x_th = np.where(during, x_fault, np.where(after, x_post, x_pre))
        for _ in range(settings.max_fixed_point):
            y = _bus_admittance(m, op, v_mag, slip)
            new = v_th / np.abs(1.0 + 1j * x_th * y)
            delta = np.max(np.abs(new - v_mag))
            v_mag = new
            if delta < 1e-12:
                break
        y = _bus_admittance(m, op, v_mag, slip)
        s_bus = v_mag * v_mag * np.conj(y)
        bad = ~np.all(np.isfinite(v_mag), axis=1)
        torque = motor_torque(m, v_mag, slip)
        slip = slip + dt / (2.0 * m.inertia) * (op.t_mech - torque)
        slip = np.clip(slip, 1e-4, 1.0)  # s = 1 is a stalled rotor
        bad |= np.any(~np.isfinite(slip) | (np.abs(slip) > 1.5), axis=1)
        if bad.any() and not failed[bad].all():
            log.warning("integration diverged at step %d for %d scenario(s)", k, int((bad & ~failed).sum()))
        failed |= bad

        offset = k - k_clear
        rec = (offset >= 0) & (offset % rec_every == 0) & (offset // rec_every < n_rec)
        if rec.any():
            u_rec[rows[rec], offset[rec] // rec_every] = v_mag[rec]
        win = (offset >= 0) & (offset < n_win)
        if win.any():
            block = np.concatenate([v_mag, s_bus.real, s_bus.imag], axis=1)
            feats[rows[win], offset[win]] = block[win]

    failed |= np.any(~np.isfinite(u_rec), axis=(1, 2)) | np.any(~np.isfinite(feats), axis=(1, 2))
    return SimulationResult(u_record=u_rec, features=feats, failed=failed, record_dt=settings.record_dt,
                            dt=dt, u_initial=np.ones((n, L)))


def simulate_scenario(cfg: ScenarioConfig, model: MotorBusModel | None = None,
                      settings: SimulationSettings | None = None) -> SimulationResult:
    settings = settings or SimulationSettings()
    model = model or jittered_model(cfg, settings)
    return simulate_batch([cfg], [model], settings)


# ---------------------------------------------------------------------------
# dataset construction
# ---------------------------------------------------------------------------

@dataclass
class BuildConfig:
    target_count: int = 1100
    otw: float = 0.03
    seed: int = 0
    batch: int = 256
    rules: LabelRules = field(default_factory=LabelRules)
    settings: SimulationSettings = field(default_factory=SimulationSettings)
    grid: list | None = None

    def __post_init__(self):
        if self.target_count < 100:
            raise ConfigurationError("target_count must be at least 100")
        if self.otw <= 0 or self.otw > self.settings.feature_window + 1e-12:
            raise ConfigurationError(f"otw must lie in (0, {self.settings.feature_window}] s")


@dataclass
class BuildResult:
    dataset: Dataset
    scenarios: list
    u_record: np.ndarray
    n_failed: int
    unstable_fraction: float
    unlabeled_fraction: float
    warnings: list = field(default_factory=list)


def _jitter_seed(seed: int, scenario_id: int, draw: int) -> int:
    return int(np.random.SeedSequence([seed, scenario_id, draw]).generate_state(1)[0])


def build_dataset(cfg: BuildConfig, progress=None) -> BuildResult:
    """Simulate the scenario grid round-robin until ``target_count`` samples exist.

    Sample ``i`` uses grid point ``i mod |grid|`` and jitter draw ``i // |grid|``,
    so the result depends only on the seed and the count.
    """
    grid = cfg.grid or scenario_grid()
    st = cfg.settings
    d = int(round(cfg.otw / st.dt))
    cfgs, models = [], []
    for i in range(cfg.target_count):
        gid, draw = i % len(grid), i // len(grid)
        load, motor, loc, tc = grid[gid]
        c = ScenarioConfig(load, motor, loc, tc, jitter_seed=_jitter_seed(cfg.seed, gid, draw),
                           strict=cfg.grid is None)
        cfgs.append((gid, c))
        models.append(jittered_model(c, st))
    feats, u_recs, failed = [], [], []
    for start in range(0, len(cfgs), cfg.batch):
        chunk = slice(start, start + cfg.batch)
        res = simulate_batch([c for _, c in cfgs[chunk]], models[chunk], st)
        feats.append(res.features[:, :d])
        u_recs.append(res.u_record)
        failed.append(res.failed)
        if progress:
            progress(min(start + cfg.batch, len(cfgs)), len(cfgs))
    feats, u_rec, failed = np.concatenate(feats), np.concatenate(u_recs), np.concatenate(failed)
    for i in np.flatnonzero(failed):
        log.warning("scenario %d (%s) failed to integrate and is excluded", cfgs[i][0], cfgs[i][1])
    ok = ~failed
    rule = seed_labels(u_rec[ok], st.record_dt, cfg.rules)
    ref = engineering_labels(u_rec[ok], st.record_dt, cfg.rules)
    idx = np.flatnonzero(ok)
    ds = Dataset(
        x=feats[ok], labels=rule,
        sample_id=np.array([f"s{i:06d}" for i in idx], dtype=object),
        scenario_id=np.array([cfgs[i][0] for i in idx]),
        provenance=np.array(["rule" if l >= 0 else "" for l in rule], dtype=object),
        synthetic=np.zeros(len(idx), dtype=bool),
        split=np.array([""] * len(idx), dtype=object),
        reference=ref,
    )
    frac = float(np.mean(ref == 1)) if len(ref) else 0.0
    result = BuildResult(ds, [cfgs[i][1] for i in idx], u_rec[ok], int(failed.sum()), frac,
                         float(np.mean(rule == -1)) if len(rule) else 0.0)
    if not 0.01 <= frac <= 0.5:
        result.warnings.append(f"unstable fraction {frac:.3f} outside [0.01, 0.5]")
    return result


def parse_ratio(text: str) -> float:
    """``"100:1"`` -> 100.0 (majority per minority)."""
    try:
        a, b = text.split(":")
        r = float(a) / float(b)
    except (ValueError, ZeroDivisionError):
        raise ConfigurationError(f"ratio must look like '100:1', got {text!r}") from None
    if not r >= 1:
        raise ConfigurationError(f"ratio {text!r} must put the stable class first")
    return r


def impose_ratio(ds: Dataset, ratio: float, seed: int = 0) -> Dataset:
    """Subsample so that stable / unstable (by reference label) equals ``ratio`` within 1.

    The class in excess is subsampled, keeping the dataset as large as possible.
    """
    rng = np.random.default_rng([seed, 104729])
    stable = np.flatnonzero(ds.reference == 0)
    unstable = np.flatnonzero(ds.reference == 1)
    if len(stable) == 0 or len(unstable) == 0:
        raise ConfigurationError("both reference classes are needed to impose a ratio")
    if len(stable) >= ratio * len(unstable):
        n_s, n_u = int(round(ratio * len(unstable))), len(unstable)
    else:
        n_s, n_u = len(stable), max(1, int(round(len(stable) / ratio)))
    keep = np.sort(np.concatenate([rng.choice(stable, n_s, replace=False),
                                   rng.choice(unstable, n_u, replace=False)]))
    return ds.subset(keep)


# ---------------------------------------------------------------------------
# splitting, normalisation, noise
# ---------------------------------------------------------------------------

def stratified_split(labels: np.ndarray, test_fraction: float = 0.2, seed: int = 0) -> np.ndarray:
    """Boolean test mask with each class split ``1 - f : f`` (4:1 by default)."""
    rng = np.random.default_rng([seed, 15485863])
    labels = np.asarray(labels)
    test = np.zeros(len(labels), dtype=bool)
    for k in np.unique(labels):
        idx = np.flatnonzero(labels == k)
        n_test = int(round(test_fraction * len(idx)))
        test[rng.choice(idx, n_test, replace=False)] = True
    return test


@dataclass
class MinMaxNormalizer:
    """Per-channel min-max scaling fit over samples and timesteps."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "MinMaxNormalizer":
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or len(x) == 0:
            raise ShapeError(f"normaliser expects a non-empty (n, time, channels) array, got {x.shape}")
        return cls(lo=x.min(axis=(0, 1)), hi=x.max(axis=(0, 1)))

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != len(self.lo):
            raise ShapeError(f"normaliser fit on {len(self.lo)} channels, got {x.shape}")
        span = np.where(self.hi > self.lo, self.hi - self.lo, 1.0)
        return (x - self.lo) / span

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MinMaxNormalizer":
        return cls(lo=np.array(d["lo"], dtype=np.float64), hi=np.array(d["hi"], dtype=np.float64))


def inject_noise(x: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    """Additive white Gaussian noise at ``snr_db`` per sample and channel.

    Noise variance is the mean square of each (sample, channel) series over
    time divided by 10^(snr/10). The input array is not modified.
    """
    if not np.isfinite(snr_db):
        raise ConfigurationError("snr_db must be finite")
    x = np.asarray(x, dtype=np.float64)
    power = np.mean(x * x, axis=-2, keepdims=True)
    sigma = np.sqrt(power / 10.0 ** (snr_db / 10.0))
    return x + sigma * rng.standard_normal(x.shape)


# ---------------------------------------------------------------------------
# trajectory store
# ---------------------------------------------------------------------------

def write_trajectories(out_dir, ds: Dataset, u_record: np.ndarray, record_dt: float, every: int = 10) -> list[Path]:
    """One CSV per scenario id: sample_id, time after clearing, U_1..U_L."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    L = u_record.shape[2]
    for sid in np.unique(ds.scenario_id):
        path = out_dir / f"scenario_{int(sid):03d}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample_id", "t"] + [f"U{b + 1}" for b in range(L)])
            for i in np.flatnonzero(ds.scenario_id == sid):
                for j in range(0, u_record.shape[1], every):
                    w.writerow([ds.sample_id[i], f"{j * record_dt:.2f}"] + [f"{v:.6f}" for v in u_record[i, j]])
        paths.append(path)
    return paths


def read_trajectories(paths) -> dict[str, np.ndarray]:
    """sample_id -> (time, buses) voltage array from the per-scenario CSVs."""
    out: dict[str, list] = {}
    for path in sorted(paths):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                out.setdefault(row[0], []).append([float(v) for v in row[2:]])
    return {k: np.array(v) for k, v in out.items()}


def labeling_features(u: np.ndarray) -> np.ndarray:
    """Flattened (samples, time * buses) voltages, min-max scaled per bus channel."""
    u = np.asarray(u, dtype=np.float64)
    lo, hi = u.min(axis=(0, 1)), u.max(axis=(0, 1))
    scaled = (u - lo) / np.where(hi > lo, hi - lo, 1.0)
    return scaled.reshape(len(u), -1)


def settings_from_dict(d: dict) -> SimulationSettings:
    names = {f.name for f in fields(SimulationSettings)}
    unknown = set(d) - names
    if unknown:
        raise ConfigurationError(f"unknown simulator settings {sorted(unknown)}")
    return SimulationSettings(**d)


def feature_dim(otw: float, n_buses: int, dt: float = 1e-3) -> int:
    return 3 * n_buses * int(round(otw / dt))


def energy_sanity(u_post: np.ndarray, record_dt: float, after: float = 0.5, tol: float = 1e-6) -> np.ndarray:
    """True where no new voltage minimum appears later than ``after`` s past clearing."""
    k = int(round(after / record_dt))
    early = u_post[:, : k + 1].min(axis=1)
    late = u_post[:, k + 1:].min(axis=1)
    return np.all(late >= early - tol, axis=1)


def describe(result: BuildResult) -> dict:
    ds = result.dataset
    return {
        "samples": len(ds),
        "failed": result.n_failed,
        "unstable_fraction": result.unstable_fraction,
        "unlabeled_fraction": result.unlabeled_fraction,
        "rule_counts": ds.counts(),
        "reference_unstable": int(np.sum(ds.reference == 1)),
        "feature_shape": list(ds.x.shape[1:]),
        "warnings": list(result.warnings),
    }

